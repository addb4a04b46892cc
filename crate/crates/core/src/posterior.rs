//! Tuning prior and Gaussian pseudo-posterior.
//!
//! In eigen-coordinates the base prior `Π` draws independent coefficients
//! `v_ν ~ N(0, τ_ν⁻²)` with
//!
//! ```text
//! τ_ν² = σ_ν⁻²              (ν ≤ m)
//! τ_ν² = ρ_ν^{1 + β/(2m)}   (ν > m)
//! ```
//!
//! and the tuning prior `Π_λ` tilts it by `exp(−(nλ/2) J(f))`, giving
//! variances `1/(τ_ν² + nλγ_ν)`. Combining `Π` with the quadratic
//! likelihood `exp(−(n/2)‖f − f̂‖²)`, `‖f‖² = Σ (1 + λγ_ν) f_ν²`, is exact
//! Gaussian conjugacy: coefficient `ν` has precision `τ_ν² + n(1 + λγ_ν)`
//! and mean `a_ν f̂_ν` with shrinkage `a_ν = n(1 + λγ_ν)/(τ_ν² + n(1 + λγ_ν))`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::eigensystem::EigenSystem;
use crate::error::{Error, Result};
use crate::spline_fit::SplineFit;

#[derive(Debug, Clone, PartialEq)]
pub struct TuningPrior {
    pub m: usize,
    pub beta: f64,
    pub sigma2: Vec<f64>,
    pub lambda: f64,
    pub n: usize,
    pub rho: Vec<f64>,
    pub gamma: Vec<f64>,
    /// Base-prior precisions `τ_ν²`.
    pub tau2: Vec<f64>,
    /// Tuning-prior variances `1/(τ_ν² + nλγ_ν)`.
    pub prior_var: Vec<f64>,
}

/// Builds `Π_λ` over the eigenpairs of `es`.
pub fn build_prior(
    es: &EigenSystem,
    beta: f64,
    sigma2: &[f64],
    lambda: f64,
    n: usize,
) -> Result<TuningPrior> {
    let m = es.order();
    if !(beta > 1.0) {
        return Err(Error::domain(format!("beta must exceed 1, got {beta}")));
    }
    if sigma2.len() != m || sigma2.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(Error::domain(format!(
            "need {m} positive null-space variances, got {sigma2:?}"
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    let exponent = 1.0 + beta / (2.0 * m as f64);
    let tau2: Vec<f64> = es
        .rho()
        .iter()
        .enumerate()
        .map(|(k, &r)| if k < m { 1.0 / sigma2[k] } else { r.powf(exponent) })
        .collect();
    let nl = n as f64 * lambda;
    let prior_var = tau2
        .iter()
        .zip(es.gamma())
        .map(|(t, g)| 1.0 / (t + nl * g))
        .collect();
    Ok(TuningPrior {
        m,
        beta,
        sigma2: sigma2.to_vec(),
        lambda,
        n,
        rho: es.rho().to_vec(),
        gamma: es.gamma().to_vec(),
        tau2,
        prior_var,
    })
}

impl TuningPrior {
    /// `E[U(G_λ)]` truncated at `N`: `Σ_{ν>m} ρ_ν / (ρ_ν^{1+β/(2m)} + nλρ_ν)`.
    pub fn expected_roughness(&self) -> f64 {
        self.rho
            .iter()
            .zip(&self.prior_var)
            .skip(self.m)
            .map(|(r, v)| r * v)
            .sum()
    }
}

/// `log dΠ_λ/dΠ` at a coefficient vector, with an upper bound on the
/// neglected `ν > N` part of the normalizing product.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRnDerivative {
    pub value: f64,
    pub tail_bound: f64,
}

/// `Σ_{ν≤m} ½log(1 + nλσ_ν²) + Σ_{m<ν≤N} ½log(1 + nλρ_ν^{−β/(2m)}) − (nλ/2) J(f)`.
pub fn log_rn_derivative(prior: &TuningPrior, coeffs: &[f64]) -> LogRnDerivative {
    let m = prior.m;
    let nl = prior.n as f64 * prior.lambda;
    if nl == 0.0 {
        return LogRnDerivative {
            value: 0.0,
            tail_bound: 0.0,
        };
    }
    let shape = prior.beta / (2.0 * m as f64);
    let log_norm: f64 = (0..prior.rho.len())
        .map(|k| {
            let ratio = if k < m {
                prior.sigma2[k]
            } else {
                prior.rho[k].powf(-shape)
            };
            0.5 * (nl * ratio).ln_1p()
        })
        .sum();
    let j: f64 = coeffs
        .iter()
        .zip(&prior.gamma)
        .map(|(c, g)| g * c * c)
        .sum();
    // log(1 + x) ≤ x and ρ_ν ≥ ρ_N (ν/N)^{2m} past the truncation, so the
    // remaining sum is at most ½ nλ ρ_N^{−β/(2m)} N/(β − 1).
    let big_n = prior.rho.len();
    let tail_bound = if big_n > m {
        0.5 * nl * prior.rho[big_n - 1].powf(-shape) * big_n as f64 / (prior.beta - 1.0)
    } else {
        f64::INFINITY
    };
    LogRnDerivative {
        value: log_norm - 0.5 * nl * j,
        tail_bound,
    }
}

/// The Gaussian process `W = f̃ + W_n` in eigen-coordinates.
#[derive(Debug, Clone)]
pub struct PosteriorGP<'a> {
    es: &'a EigenSystem,
    pub n: usize,
    pub lambda: f64,
    pub tau2: Vec<f64>,
    /// Shrinkage factors `a_ν`.
    pub shrink: Vec<f64>,
    /// Standard deviations `b_ν`.
    pub scale: Vec<f64>,
    /// Center `f̃_ν = a_ν f̂_ν`.
    pub center: Vec<f64>,
    pub fhat: Vec<f64>,
}

impl<'a> PosteriorGP<'a> {
    /// Posterior from smoothing-spline coefficients `fhat` and base-prior
    /// precisions `tau2`.
    pub fn new(es: &'a EigenSystem, fhat: &[f64], tau2: &[f64], lambda: f64, n: usize) -> Self {
        assert_eq!(fhat.len(), tau2.len());
        let nf = n as f64;
        let mut shrink = Vec::with_capacity(fhat.len());
        let mut scale = Vec::with_capacity(fhat.len());
        for (k, &t) in tau2.iter().enumerate() {
            let lik = nf * (1.0 + lambda * es.gamma()[k]);
            shrink.push(lik / (t + lik));
            scale.push((t + lik).powf(-0.5));
        }
        let center = shrink.iter().zip(fhat).map(|(a, f)| a * f).collect();
        Self {
            es,
            n,
            lambda,
            tau2: tau2.to_vec(),
            shrink,
            scale,
            center,
            fhat: fhat.to_vec(),
        }
    }

    pub fn eigensystem(&self) -> &'a EigenSystem {
        self.es
    }

    pub fn len(&self) -> usize {
        self.center.len()
    }

    pub fn is_empty(&self) -> bool {
        self.center.is_empty()
    }

    /// Posterior precision `τ_ν² + n(1 + λγ_ν)` of coefficient `k`.
    pub fn precision(&self, k: usize) -> f64 {
        self.tau2[k] + self.n as f64 * (1.0 + self.lambda * self.es.gamma()[k])
    }

    /// One draw of the coefficients `f̃_ν + b_ν η_ν`.
    pub fn sample_coefficients<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.center
            .iter()
            .zip(&self.scale)
            .map(|(c, b)| c + b * rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    /// One posterior path evaluated on `grid`.
    pub fn sample_path<R: Rng + ?Sized>(&self, rng: &mut R, grid: &[f64]) -> Vec<f64> {
        let coeffs = self.sample_coefficients(rng);
        grid.iter().map(|&z| self.es.evaluate(&coeffs, z)).collect()
    }

    /// `f̃(z)`.
    pub fn center_at(&self, z: f64) -> f64 {
        self.es.evaluate(&self.center, z)
    }
}

/// Posterior for a fitted spline under the tuning prior.
pub fn build_posterior<'a>(
    es: &'a EigenSystem,
    fit: &SplineFit,
    prior: &TuningPrior,
) -> Result<PosteriorGP<'a>> {
    if fit.lambda != prior.lambda {
        return Err(Error::domain(format!(
            "fit lambda {} differs from prior lambda {}",
            fit.lambda, prior.lambda
        )));
    }
    if fit.coeffs.len() != prior.tau2.len() || fit.coeffs.len() > es.len() {
        return Err(Error::domain("fit and prior disagree on truncation level"));
    }
    Ok(PosteriorGP::new(es, &fit.coeffs, &prior.tau2, prior.lambda, prior.n))
}
