//! Credible regions and functional credible intervals for the posterior `W`.
//!
//! With `W − f̃ = Σ b_ν η_ν φ_ν`, the strong radius is a quantile of
//! `√(Σ b_ν² η_ν²)`, the weak radius a quantile of `√(Σ ω_ν b_ν² η_ν²)`, and
//! a linear functional `F` has the exact law `F(W) − F(f̃) ~ N(0, θ₁²)`.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex, OnceLock};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::eigensystem::{omega_weight, EigenSystem};
use crate::error::{Error, Result};
use crate::posterior::PosteriorGP;
use crate::quadrature::GaussLegendre;

/// Terms in the weak-norm limit series `Σ ω_ν η_ν²`.
pub const WEAK_LIMIT_TERMS: usize = 2000;
/// Monte Carlo draws for the weak-norm limit quantile.
pub const WEAK_LIMIT_DRAWS: usize = 200_000;
const WEAK_LIMIT_SEED: u64 = 0x5eed_c0de;

/// Which linear functional to build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "at")]
pub enum FunctionalSpec {
    /// `f ↦ f(z)`.
    Evaluation(f64),
    /// `f ↦ ∫₀^{z₀} f`.
    Integral(f64),
}

impl FunctionalSpec {
    pub fn point(&self) -> f64 {
        match *self {
            FunctionalSpec::Evaluation(z) | FunctionalSpec::Integral(z) => z,
        }
    }
}

impl fmt::Display for FunctionalSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FunctionalSpec::Evaluation(z) => write!(f, "eval:{z}"),
            FunctionalSpec::Integral(z) => write!(f, "integral:{z}"),
        }
    }
}

impl FromStr for FunctionalSpec {
    type Err = Error;

    /// Parses `eval:<z>` or `integral:<z0>`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, at) = s
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("functional `{s}`: expected kind:point")))?;
        let at: f64 = at
            .trim()
            .parse()
            .map_err(|_| Error::Parse(format!("functional `{s}`: bad point")))?;
        if !(0.0..=1.0).contains(&at) {
            return Err(Error::Parse(format!("functional `{s}`: point outside [0, 1]")));
        }
        match kind.trim() {
            "eval" | "evaluation" => Ok(FunctionalSpec::Evaluation(at)),
            "integral" => Ok(FunctionalSpec::Integral(at)),
            other => Err(Error::Parse(format!("unknown functional kind `{other}`"))),
        }
    }
}

/// A linear functional represented by its values `F(φ_ν)` on the basis.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFunctional {
    pub spec: Option<FunctionalSpec>,
    values: Vec<f64>,
}

impl LinearFunctional {
    pub fn new(es: &EigenSystem, spec: FunctionalSpec) -> Result<Self> {
        match spec {
            FunctionalSpec::Evaluation(z) => Self::evaluation(es, z),
            FunctionalSpec::Integral(z0) => Self::indicator_integral(es, z0),
        }
    }

    pub fn evaluation(es: &EigenSystem, z: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&z) {
            return Err(Error::domain(format!("evaluation point {z} outside [0, 1]")));
        }
        let mut values = vec![0.0; es.len()];
        es.eval_all(z, &mut values);
        Ok(Self {
            spec: Some(FunctionalSpec::Evaluation(z)),
            values,
        })
    }

    /// `F(f) = ∫₀^{z₀} f(z) dz`.
    pub fn indicator_integral(es: &EigenSystem, z0: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&z0) {
            return Err(Error::domain(format!("integral endpoint {z0} outside [0, 1]")));
        }
        let mut f = Self::weighted_integral(es, 0.0, z0, |_| 1.0);
        f.spec = Some(FunctionalSpec::Integral(z0));
        Ok(f)
    }

    /// `F(f) = ∫_a^b f(z) w(z) dz`.
    pub fn weighted_integral<W: Fn(f64) -> f64>(es: &EigenSystem, a: f64, b: f64, w: W) -> Self {
        let n = es.len();
        let rule = GaussLegendre::cached((4 * n).max(64));
        let mut values = vec![0.0; n];
        let mut row = vec![0.0; n];
        for (x, q) in rule.on_interval(a, b) {
            es.eval_all(x, &mut row);
            let s = q * w(x);
            for (v, p) in values.iter_mut().zip(&row) {
                *v += s * p;
            }
        }
        Self { spec: None, values }
    }

    pub fn from_values(values: Vec<f64>) -> Self {
        Self { spec: None, values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `F(Σ c_ν φ_ν)`.
    pub fn apply(&self, coeffs: &[f64]) -> f64 {
        self.values.iter().zip(coeffs).map(|(v, c)| v * c).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum RadiusMethod {
    MonteCarlo { draws: usize, seed: u64 },
    Asymptotic,
}

impl RadiusMethod {
    pub fn name(&self) -> &'static str {
        match self {
            RadiusMethod::MonteCarlo { .. } => "monte_carlo",
            RadiusMethod::Asymptotic => "asymptotic",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            RadiusMethod::MonteCarlo { draws, .. } if draws < 10_000 => Err(Error::domain(
                format!("monte carlo radius needs at least 10000 draws, got {draws}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadiusSpec {
    pub method: RadiusMethod,
    pub alpha: f64,
    /// Weak-norm exponent `τ_ω`.
    pub tau_omega: f64,
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau > 1.0 {
        Ok(())
    } else {
        Err(Error::domain(format!("weak-norm exponent must exceed 1, got {tau}")))
    }
}

/// Upper standard normal quantile `Φ⁻¹(1 − p)`.
pub fn upper_normal_quantile(p: f64) -> f64 {
    -Normal::standard().inverse_cdf(p)
}

/// A truncated series together with a bound on its neglected tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Series {
    pub value: f64,
    pub tail_bound: f64,
}

/// `ζ_k = Σ_ν (1 + λγ_ν + τ_ν²/n)^{−k}`.
///
/// Past the truncation each term is at most `((λ + 1/n)ρ_ν)^{−k}`, and with
/// `ρ_ν ≥ ρ_N (ν/N)^{2m}` the tail is bounded by
/// `((λ + 1/n)ρ_N)^{−k} · N/(2mk − 1)`.
pub fn zeta(post: &PosteriorGP<'_>, k: u32) -> Series {
    assert!(k >= 1, "zeta needs k >= 1");
    let es = post.eigensystem();
    let nf = post.n as f64;
    let value = (0..post.len())
        .map(|j| (1.0 + post.lambda * es.gamma()[j] + post.tau2[j] / nf).powi(-(k as i32)))
        .sum();
    let big_n = post.len();
    let m = es.order() as f64;
    let rho_n = es.rho()[big_n - 1];
    let tail_bound = ((post.lambda + 1.0 / nf) * rho_n).powi(-(k as i32)) * big_n as f64
        / (2.0 * m * k as f64 - 1.0);
    Series { value, tail_bound }
}

/// `θ_k² = Σ_ν F(φ_ν)² b_ν^{2k}`.
pub fn theta_sq(post: &PosteriorGP<'_>, functional: &LinearFunctional, k: u32) -> f64 {
    functional
        .values()
        .iter()
        .zip(&post.scale)
        .map(|(f, b)| f * f * b.powi(2 * k as i32))
        .sum()
}

/// Inverse-ECDF `(1 − α)` quantile of ascending `sorted`.
fn upper_quantile(sorted: &[f64], alpha: f64) -> f64 {
    let d = sorted.len();
    let idx = ((1.0 - alpha) * d as f64).ceil() as usize;
    sorted[idx.clamp(1, d) - 1]
}

/// Sorted draws of `√(Σ w_ν η_ν²)`.
fn weighted_chi_draws(weights: &[f64], draws: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<f64> = (0..draws)
        .map(|_| {
            weights
                .iter()
                .map(|w| {
                    let e: f64 = rng.sample(StandardNormal);
                    w * e * e
                })
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    out.sort_by(f64::total_cmp);
    out
}

/// Strong radii `r_n(α)` for each `α`, sharing one set of draws.
pub fn strong_radii(post: &PosteriorGP<'_>, method: RadiusMethod, alphas: &[f64]) -> Result<Vec<f64>> {
    method.validate()?;
    for &a in alphas {
        check_alpha(a)?;
    }
    match method {
        RadiusMethod::MonteCarlo { draws, seed } => {
            let w: Vec<f64> = post.scale.iter().map(|b| b * b).collect();
            let sorted = weighted_chi_draws(&w, draws, seed);
            Ok(alphas.iter().map(|&a| upper_quantile(&sorted, a)).collect())
        }
        RadiusMethod::Asymptotic => {
            let z1 = zeta(post, 1).value;
            let z2 = zeta(post, 2).value;
            let nf = post.n as f64;
            alphas
                .iter()
                .map(|&a| {
                    let radicand = (z1 + (2.0 * z2).sqrt() * upper_normal_quantile(a)) / nf;
                    if radicand < 0.0 {
                        Err(Error::DegenerateRadius { radicand })
                    } else {
                        Ok(radicand.sqrt())
                    }
                })
                .collect()
        }
    }
}

pub fn strong_radius(post: &PosteriorGP<'_>, spec: &RadiusSpec) -> Result<f64> {
    Ok(strong_radii(post, spec.method, &[spec.alpha])?[0])
}

/// Sorted Monte Carlo sample of `Σ_{ν ≤ terms} ω_ν η_ν²`.
pub fn weak_limit_sample(tau: f64, terms: usize, draws: usize, seed: u64) -> Vec<f64> {
    let w: Vec<f64> = (1..=terms).map(|nu| omega_weight(nu, tau)).collect();
    let mut s = weighted_chi_draws(&w, draws, seed);
    for v in &mut s {
        *v *= *v;
    }
    s
}

/// `c_α`, the `(1 − α)` quantile of `Σ ω_ν η_ν²`, from a sample cached per `τ`.
pub fn weak_limit_quantile(tau: f64, alpha: f64) -> Result<f64> {
    check_tau(tau)?;
    check_alpha(alpha)?;
    type Cache = Mutex<HashMap<u64, Arc<Vec<f64>>>>;
    static CACHE: OnceLock<Cache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = tau.to_bits();
    let cached = cache.lock().unwrap().get(&key).cloned();
    let sample = match cached {
        Some(s) => s,
        None => {
            let s = Arc::new(weak_limit_sample(
                tau,
                WEAK_LIMIT_TERMS,
                WEAK_LIMIT_DRAWS,
                WEAK_LIMIT_SEED,
            ));
            cache.lock().unwrap().entry(key).or_insert(s).clone()
        }
    };
    Ok(upper_quantile(&sample, alpha))
}

/// Weak radii `r_{ω,n}(α)` for each `α`.
pub fn weak_radii(
    post: &PosteriorGP<'_>,
    method: RadiusMethod,
    tau: f64,
    alphas: &[f64],
) -> Result<Vec<f64>> {
    method.validate()?;
    check_tau(tau)?;
    for &a in alphas {
        check_alpha(a)?;
    }
    match method {
        RadiusMethod::MonteCarlo { draws, seed } => {
            let w: Vec<f64> = post
                .scale
                .iter()
                .enumerate()
                .map(|(k, b)| omega_weight(k + 1, tau) * b * b)
                .collect();
            let sorted = weighted_chi_draws(&w, draws, seed);
            Ok(alphas.iter().map(|&a| upper_quantile(&sorted, a)).collect())
        }
        RadiusMethod::Asymptotic => {
            let nf = post.n as f64;
            alphas
                .iter()
                .map(|&a| Ok((weak_limit_quantile(tau, a)? / nf).sqrt()))
                .collect()
        }
    }
}

pub fn weak_radius(post: &PosteriorGP<'_>, spec: &RadiusSpec) -> Result<f64> {
    Ok(weak_radii(post, spec.method, spec.tau_omega, &[spec.alpha])?[0])
}

/// `center ± radius`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub center: f64,
    pub radius: f64,
}

impl Interval {
    pub fn lower(&self) -> f64 {
        self.center - self.radius
    }

    pub fn upper(&self) -> f64 {
        self.center + self.radius
    }

    pub fn contains(&self, x: f64) -> bool {
        (x - self.center).abs() <= self.radius
    }
}

/// `F(f̃) ± θ₁ z_{α/2}`.
pub fn functional_interval(
    post: &PosteriorGP<'_>,
    functional: &LinearFunctional,
    alpha: f64,
) -> Result<Interval> {
    check_alpha(alpha)?;
    let theta = theta_sq(post, functional, 1).sqrt();
    let radius = if theta == 0.0 {
        0.0
    } else {
        theta * upper_normal_quantile(alpha / 2.0)
    };
    Ok(Interval {
        center: functional.apply(&post.center),
        radius,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RegionKind {
    Strong,
    Weak { tau: f64 },
    /// Weak region intersected with `{J(f) ≤ bound}`.
    RestrictedWeak { tau: f64, bound: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Membership {
    pub contained: bool,
    pub distance: f64,
}

/// Tests whether `candidate` (coefficients, length ≤ N) lies in the region
/// of the given radius around `f̃`.
pub fn region_contains(
    post: &PosteriorGP<'_>,
    kind: RegionKind,
    candidate: &[f64],
    radius: f64,
) -> Membership {
    assert!(candidate.len() <= post.len(), "candidate longer than truncation");
    let diff = |k: usize| candidate.get(k).copied().unwrap_or(0.0) - post.center[k];
    let weighted = |w: &dyn Fn(usize) -> f64| -> f64 {
        (0..post.len()).map(|k| w(k) * diff(k).powi(2)).sum::<f64>().sqrt()
    };
    match kind {
        RegionKind::Strong => {
            let distance = weighted(&|_| 1.0);
            Membership {
                contained: distance <= radius,
                distance,
            }
        }
        RegionKind::Weak { tau } => {
            let distance = weighted(&|k| omega_weight(k + 1, tau));
            Membership {
                contained: distance <= radius,
                distance,
            }
        }
        RegionKind::RestrictedWeak { tau, bound } => {
            let distance = weighted(&|k| omega_weight(k + 1, tau));
            let gamma = post.eigensystem().gamma();
            let j: f64 = candidate.iter().zip(gamma).map(|(c, g)| g * c * c).sum();
            Membership {
                contained: distance <= radius && j <= bound,
                distance,
            }
        }
    }
}
