//! Smoothing-spline estimate: the maximizer of the penalized likelihood
//!
//! ```text
//! ℓ(f) = (1/n) Σ [yᵢ f(xᵢ) − A(f(xᵢ))] − (λ/2) J(f),   J(f) = Σ γ_ν f_ν²
//! ```
//!
//! over the span of the first `N` eigenfunctions, found by damped Newton
//! iteration on the coefficients.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::eigensystem::{sq_norm, EigenSystem, NormKind};
use crate::error::{Error, Result};
use crate::exp_family::{ExpFamily, ETA_GUARD};

/// Paired observations `(xᵢ, yᵢ)` with `xᵢ ∈ [0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    x: Vec<f64>,
    y: Vec<f64>,
}

impl Dataset {
    pub fn new(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() {
            return Err(Error::domain(format!(
                "x and y lengths differ ({} vs {})",
                x.len(),
                y.len()
            )));
        }
        if x.is_empty() {
            return Err(Error::domain("dataset is empty"));
        }
        if let Some(bad) = x.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::domain(format!("design point {bad} outside [0, 1]")));
        }
        if let Some(bad) = y.iter().find(|v| !v.is_finite()) {
            return Err(Error::domain(format!("non-finite response {bad}")));
        }
        Ok(Self { x, y })
    }

    /// Like [`Dataset::new`] but also checks every response against `model`.
    pub fn for_model(model: &ExpFamily, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let data = Self::new(x, y)?;
        if let Some(bad) = data.y.iter().find(|v| !model.in_support(**v)) {
            return Err(Error::domain(format!(
                "response {bad} outside the support of the {} model",
                model.name()
            )));
        }
        Ok(data)
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stationarity tolerance, relative to `1 + |ℓ|`.
    pub tol: f64,
    /// Maximum number of step halvings per Newton iteration.
    pub max_halvings: usize,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-9,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplineFit {
    pub coeffs: Vec<f64>,
    pub lambda: f64,
    /// `λ^{1/(2m)}`.
    pub h: f64,
    pub iterations: usize,
    pub grad_norm: f64,
    pub objective: f64,
}

impl SplineFit {
    /// `Σ f̂_ν φ_ν(z)`.
    pub fn evaluate(&self, es: &EigenSystem, z: f64) -> f64 {
        es.evaluate(&self.coeffs, z)
    }
}

/// Fits the penalized MLE at smoothing parameter `lambda`.
pub fn fit_penalized_mle(
    model: &ExpFamily,
    es: &EigenSystem,
    data: &Dataset,
    lambda: f64,
    opts: &FitOptions,
) -> Result<SplineFit> {
    let phi = es.design_matrix(data.x());
    fit_with_design(model, es, &phi, data.y(), lambda, opts, None)
}

/// [`fit_penalized_mle`] with a precomputed design matrix and optional warm start.
pub fn fit_with_design(
    model: &ExpFamily,
    es: &EigenSystem,
    phi: &DMatrix<f64>,
    y: &[f64],
    lambda: f64,
    opts: &FitOptions,
    start: Option<&[f64]>,
) -> Result<SplineFit> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return Err(Error::domain(format!("lambda must be nonnegative, got {lambda}")));
    }
    if y.is_empty() || phi.nrows() != y.len() {
        return Err(Error::domain("design matrix and response disagree"));
    }
    let n = y.len() as f64;
    let ncoef = phi.ncols();
    let gamma = &es.gamma()[..ncoef];
    let yv = DVector::from_column_slice(y);

    let mut c = match start {
        Some(s) => DVector::from_column_slice(s),
        None => DVector::zeros(ncoef),
    };
    let mut eta = phi * &c;
    let mut obj = objective_from_eta(model, gamma, y, eta.as_slice(), c.as_slice(), lambda);
    let guarded = !matches!(model, ExpFamily::Gaussian);

    for iter in 0..opts.max_iter {
        let mu = eta.map(|e| model.mean(e));
        let w = eta.map(|e| model.variance(e));
        let mut grad = phi.tr_mul(&(&yv - &mu)) / n;
        for k in 0..ncoef {
            grad[k] -= lambda * gamma[k] * c[k];
        }
        let grad_norm = grad.norm();

        let mut weighted = phi.clone();
        for (i, mut row) in weighted.row_iter_mut().enumerate() {
            row *= w[i] / n;
        }
        let mut hess = phi.tr_mul(&weighted);
        for k in 0..ncoef {
            hess[(k, k)] += lambda * gamma[k];
        }
        let step = scaled_cholesky_solve(&hess, &grad).ok_or(Error::Conditioning)?;

        let stationary = grad_norm <= opts.tol * (1.0 + obj.abs());
        let step_small = step.amax() <= opts.tol.sqrt() * (1.0 + c.amax());
        if stationary && step_small {
            return Ok(finish(es, c, lambda, iter, grad_norm, obj));
        }

        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let trial = &c + &step * t;
            let trial_eta = phi * &trial;
            let in_range = trial_eta
                .iter()
                .all(|e| e.is_finite() && (!guarded || e.abs() <= ETA_GUARD));
            if in_range {
                let trial_obj = objective_from_eta(
                    model,
                    gamma,
                    y,
                    trial_eta.as_slice(),
                    trial.as_slice(),
                    lambda,
                );
                if trial_obj >= obj {
                    c = trial;
                    eta = trial_eta;
                    obj = trial_obj;
                    accepted = true;
                    break;
                }
            }
            t *= 0.5;
        }
        if !accepted {
            // No ascent left at working precision; only a genuine optimum
            // also has a vanishing Newton step.
            if step_small && grad_norm <= 100.0 * opts.tol * (1.0 + obj.abs()) {
                return Ok(finish(es, c, lambda, iter, grad_norm, obj));
            }
            return Err(Error::NonConvergence {
                iterations: iter + 1,
                grad_norm,
                last: c.as_slice().to_vec(),
            });
        }
        if c.amax() > 1e12 {
            break;
        }
    }
    let mu = eta.map(|e| model.mean(e));
    let mut grad = phi.tr_mul(&(&yv - &mu)) / n;
    for k in 0..ncoef {
        grad[k] -= lambda * gamma[k] * c[k];
    }
    Err(Error::NonConvergence {
        iterations: opts.max_iter,
        grad_norm: grad.norm(),
        last: c.as_slice().to_vec(),
    })
}

fn finish(
    es: &EigenSystem,
    c: DVector<f64>,
    lambda: f64,
    iterations: usize,
    grad_norm: f64,
    objective: f64,
) -> SplineFit {
    SplineFit {
        coeffs: c.as_slice().to_vec(),
        lambda,
        h: lambda.powf(1.0 / (2.0 * es.order() as f64)),
        iterations,
        grad_norm,
        objective,
    }
}

/// Cholesky factorization of a symmetric positive definite matrix after
/// Jacobi scaling, so badly graded diagonals (`λγ_ν` spans many decades)
/// keep componentwise accuracy.
pub(crate) struct ScaledCholesky {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    d: DVector<f64>,
}

impl ScaledCholesky {
    pub(crate) fn new(h: &DMatrix<f64>) -> Option<Self> {
        let d = h.diagonal().map(|v| if v > 0.0 { 1.0 / v.sqrt() } else { f64::NAN });
        if d.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let mut scaled = h.clone();
        for j in 0..h.ncols() {
            for i in 0..h.nrows() {
                scaled[(i, j)] *= d[i] * d[j];
            }
        }
        Some(Self { chol: scaled.cholesky()?, d })
    }

    pub(crate) fn solve(&self, g: &DVector<f64>) -> Option<DVector<f64>> {
        let z = self.chol.solve(&g.component_mul(&self.d));
        let x = z.component_mul(&self.d);
        x.iter().all(|v| v.is_finite()).then_some(x)
    }

    /// Diagonal of `H⁻¹`.
    pub(crate) fn inverse_diagonal(&self) -> DVector<f64> {
        let inv = self.chol.inverse();
        DVector::from_fn(self.d.len(), |k, _| inv[(k, k)] * self.d[k] * self.d[k])
    }
}

pub(crate) fn scaled_cholesky_solve(h: &DMatrix<f64>, g: &DVector<f64>) -> Option<DVector<f64>> {
    ScaledCholesky::new(h)?.solve(g)
}

fn objective_from_eta(
    model: &ExpFamily,
    gamma: &[f64],
    y: &[f64],
    eta: &[f64],
    coeffs: &[f64],
    lambda: f64,
) -> f64 {
    let n = y.len() as f64;
    let lik: f64 = y
        .iter()
        .zip(eta)
        .map(|(&yi, &e)| yi * e - model.cumulant(e))
        .sum::<f64>()
        / n;
    let pen: f64 = coeffs
        .iter()
        .zip(gamma)
        .map(|(c, g)| g * c * c)
        .sum();
    lik - 0.5 * lambda * pen
}

/// `ℓ_{n,λ}` at the function with the given coefficients.
pub fn objective_value(
    model: &ExpFamily,
    es: &EigenSystem,
    data: &Dataset,
    coeffs: &[f64],
    lambda: f64,
) -> f64 {
    let eta: Vec<f64> = data.x().iter().map(|&x| es.evaluate(coeffs, x)).collect();
    let n = data.len() as f64;
    let lik: f64 = data
        .y()
        .iter()
        .zip(&eta)
        .map(|(&yi, &e)| yi * e - model.cumulant(e))
        .sum::<f64>()
        / n;
    lik - 0.5 * lambda * sq_norm(es, coeffs, NormKind::J)
}
