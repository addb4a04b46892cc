//! Runs the code listings of the guide in `book/src` as doc-tests.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/eigensystem.md")]
pub mod eigensystem {}
#[doc = include_str!("../../../book/src/fitting.md")]
pub mod fitting {}
#[doc = include_str!("../../../book/src/posterior.md")]
pub mod posterior {}
#[doc = include_str!("../../../book/src/credible-sets.md")]
pub mod credible_sets {}
#[doc = include_str!("../../../book/src/coverage.md")]
pub mod coverage {}
