//! Smoothing-parameter selection by generalized cross validation, and the
//! map from the GCV bandwidth to the tuning-prior bandwidth.

use nalgebra::{DMatrix, DVector};

use crate::eigensystem::EigenSystem;
use crate::error::{Error, Result};
use crate::exp_family::ExpFamily;
use crate::spline_fit::{fit_with_design, Dataset, FitOptions, ScaledCholesky};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcvPoint {
    pub lambda: f64,
    /// `None` when `tr(I − A_λ)` vanishes at this `λ`.
    pub score: Option<f64>,
}

/// `count` log-spaced values from `lo` to `hi` inclusive.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    assert!(lo > 0.0 && hi >= lo && count >= 1);
    if count == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..count)
        .map(|i| (a + (b - a) * i as f64 / (count - 1) as f64).exp())
        .collect()
}

/// 40 log-spaced points on `[1e-8, 10]`.
pub fn default_lambda_grid() -> Vec<f64> {
    log_grid(1e-8, 10.0, 40)
}

/// GCV scores over `grid`, building the design matrix once.
pub fn gcv_curve(
    model: &ExpFamily,
    es: &EigenSystem,
    data: &Dataset,
    grid: &[f64],
) -> Result<Vec<GcvPoint>> {
    let phi = es.design_matrix(data.x());
    gcv_curve_with_design(model, es, &phi, data.y(), grid)
}

pub fn gcv_curve_with_design(
    model: &ExpFamily,
    es: &EigenSystem,
    phi: &DMatrix<f64>,
    y: &[f64],
    grid: &[f64],
) -> Result<Vec<GcvPoint>> {
    if grid.is_empty() || grid.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::domain("lambda grid must be nonempty and positive"));
    }
    if grid.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::domain("lambda grid must be sorted ascending"));
    }
    match model {
        ExpFamily::Gaussian => {
            let weights = vec![1.0; y.len()];
            Ok(weighted_gcv(es, phi, y, &weights, grid))
        }
        _ => Ok(irls_gcv(model, es, phi, y, grid)),
    }
}

/// Weighted GCV for a working response `z` with weights `w`:
/// `(1/n) Σ wᵢ (zᵢ − (A z)ᵢ)² / (1 − tr(A)/n)²` with
/// `A = Φ (ΦᵀWΦ/n + λΓ)⁻¹ ΦᵀW/n`.
fn weighted_gcv(
    es: &EigenSystem,
    phi: &DMatrix<f64>,
    z: &[f64],
    w: &[f64],
    grid: &[f64],
) -> Vec<GcvPoint> {
    let n = z.len() as f64;
    let p = phi.ncols();
    let gamma = &es.gamma()[..p];
    let mut weighted = phi.clone();
    for (i, mut row) in weighted.row_iter_mut().enumerate() {
        row *= w[i] / n;
    }
    let gram = phi.tr_mul(&weighted);
    let zv = DVector::from_column_slice(z);
    let rhs = weighted.tr_mul(&zv);
    grid.iter()
        .map(|&lambda| {
            let mut m = gram.clone();
            for k in 0..p {
                m[(k, k)] += lambda * gamma[k];
            }
            let score = (|| {
                let chol = ScaledCholesky::new(&m)?;
                let c = chol.solve(&rhs)?;
                let fitted = phi * &c;
                let rss: f64 = (0..z.len())
                    .map(|i| w[i] * (z[i] - fitted[i]).powi(2))
                    .sum::<f64>()
                    / n;
                // tr(M⁻¹ G) = p − λ Σ γ_k (M⁻¹)_kk since G = M − λΓ.
                let inv_diag = chol.inverse_diagonal();
                let trace = p as f64
                    - lambda * (0..p).map(|k| gamma[k] * inv_diag[k]).sum::<f64>();
                let denom = 1.0 - trace / n;
                (denom > 1e-8).then(|| rss / (denom * denom))
            })();
            GcvPoint { lambda, score }
        })
        .collect()
}

/// Non-Gaussian families: GCV on the converged IRLS working response
/// `z = η + (y − A'(η)) / A''(η)` with weights `A''(η)`.
fn irls_gcv(
    model: &ExpFamily,
    es: &EigenSystem,
    phi: &DMatrix<f64>,
    y: &[f64],
    grid: &[f64],
) -> Vec<GcvPoint> {
    let opts = FitOptions::default();
    let mut warm: Option<Vec<f64>> = None;
    // Sweep from heavy to light smoothing so each fit starts near its optimum.
    let mut out: Vec<GcvPoint> = grid
        .iter()
        .rev()
        .map(|&lambda| {
            let fit = fit_with_design(model, es, phi, y, lambda, &opts, warm.as_deref());
            let Ok(fit) = fit else {
                return GcvPoint { lambda, score: None };
            };
            warm = Some(fit.coeffs.clone());
            let c = DVector::from_column_slice(&fit.coeffs);
            let eta = phi * c;
            let w: Vec<f64> = eta.iter().map(|&e| model.variance(e)).collect();
            let z: Vec<f64> = (0..y.len())
                .map(|i| eta[i] + (y[i] - model.mean(eta[i])) / w[i])
                .collect();
            weighted_gcv(es, phi, &z, &w, &[lambda])[0]
        })
        .collect();
    out.reverse();
    out
}

/// Selected smoothing parameter and its bandwidth `h = λ^{1/(2m)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Selection {
    pub lambda: f64,
    pub h: f64,
}

/// Grid argmin of the GCV curve; ties go to the larger `λ`.
pub fn select_h(curve: &[GcvPoint], m: usize) -> Result<Selection> {
    let mut best: Option<(f64, f64)> = None;
    for p in curve {
        if let Some(s) = p.score {
            match best {
                Some((_, bs)) if s > bs => {}
                Some((bl, bs)) if s == bs && p.lambda <= bl => {}
                _ => best = Some((p.lambda, s)),
            }
        }
    }
    let (lambda, _) = best.ok_or(Error::Selection)?;
    Ok(Selection {
        lambda,
        h: lambda.powf(1.0 / (2.0 * m as f64)),
    })
}

/// Exponent `(2m + 1)/(2m + β)` mapping `h_GCV` to the prior bandwidth.
pub fn prior_exponent(m: usize, beta: f64) -> f64 {
    let two_m = 2.0 * m as f64;
    (two_m + 1.0) / (two_m + beta)
}

/// `h = h_GCV^{(2m+1)/(2m+β)}` and `λ = h^{2m}`.
pub fn prior_h_from_gcv(h_gcv: f64, m: usize, beta: f64) -> Result<Selection> {
    if !(h_gcv > 0.0 && h_gcv < 1.0) {
        return Err(Error::domain(format!("h_gcv must lie in (0, 1), got {h_gcv}")));
    }
    if !(beta > 1.0) {
        return Err(Error::domain(format!("beta must exceed 1, got {beta}")));
    }
    let h = h_gcv.powf(prior_exponent(m, beta));
    Ok(Selection {
        lambda: h.powi(2 * m as i32),
        h,
    })
}
