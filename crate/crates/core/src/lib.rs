pub mod credible;
pub mod eigensystem;
pub mod error;
pub mod exp_family;
pub mod quadrature;
pub mod sim;

pub use error::{Error, Result};
pub mod posterior;
pub mod spline_fit;
pub mod tuning;
