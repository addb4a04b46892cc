//! Simulation harness: beta-mixture truth, data generation, and frequentist
//! coverage experiments for credible regions and functional intervals.

use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{Beta, ContinuousCDF};
use statrs::function::gamma::ln_gamma;

use crate::credible::{
    functional_interval, region_contains, strong_radii, weak_radii, LinearFunctional,
    RadiusMethod, RegionKind,
};
use crate::eigensystem::{
    default_truncation, free_beam, galerkin, project, reconstruction_error, sq_norm, EigenSystem,
    NormKind, WeightFn,
};
use crate::error::{Error, Result};
use crate::exp_family::ExpFamily;
use crate::posterior::{build_posterior, build_prior, PosteriorGP};
use crate::spline_fit::{fit_with_design, Dataset, FitOptions, SplineFit};
use crate::tuning::{gcv_curve_with_design, log_grid, prior_h_from_gcv, select_h, GcvPoint};

/// Minimum truncation level used by the harness; the projection of `f₀`
/// onto 100 eigenfunctions has `L²` residual below `1e-3`.
pub const MIN_TRUNCATION: usize = 100;
/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "SPLINEBAYES_THREADS";

/// Beta(a, b) density, via log-gamma.
pub fn beta_pdf(a: f64, b: f64, z: f64) -> f64 {
    if z <= 0.0 || z >= 1.0 {
        return if (z == 0.0 && a == 1.0) || (z == 1.0 && b == 1.0) {
            (ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)).exp()
        } else {
            0.0
        };
    }
    let log = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b)
        + (a - 1.0) * z.ln()
        + (b - 1.0) * (-z).ln_1p();
    log.exp()
}

/// `f₀(z) = 3·Beta(30, 17)(z) + 2·Beta(3, 11)(z)`.
pub fn true_function_beta_mix(z: f64) -> f64 {
    3.0 * beta_pdf(30.0, 17.0, z) + 2.0 * beta_pdf(3.0, 11.0, z)
}

/// `∫₀^{z₀} f₀`.
pub fn true_function_integral(z0: f64) -> f64 {
    let a = Beta::new(30.0, 17.0).expect("valid shape");
    let b = Beta::new(3.0, 11.0).expect("valid shape");
    3.0 * a.cdf(z0) + 2.0 * b.cdf(z0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "mode")]
pub enum Tuning {
    /// GCV bandwidth mapped to the prior bandwidth.
    Gcv,
    FixedH { h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub model: ExpFamily,
    pub m: usize,
    pub beta: f64,
    /// Null-space prior variances `σ₁², …, σ_m²`.
    pub sigma2: Vec<f64>,
    pub n_list: Vec<usize>,
    pub replications: usize,
    pub alpha_list: Vec<f64>,
    /// Radius method; a Monte Carlo seed is redrawn per replicate.
    pub radius: RadiusMethod,
    pub tau_omega: f64,
    /// Restricted region bound `M = restricted_factor · J(f̂)`.
    pub restricted_factor: f64,
    pub tuning: Tuning,
    pub lambda_grid_min: f64,
    pub lambda_grid_max: f64,
    pub lambda_grid_len: usize,
    pub seed: u64,
    pub eval_points: Vec<f64>,
    pub integral_points: Vec<f64>,
    /// Points of the averaged curve written to `curve_out`.
    pub curve_points: usize,
    pub coverage_out: Option<PathBuf>,
    pub curve_out: Option<PathBuf>,
    /// Replaces every radius; used to exercise the harness.
    #[serde(skip)]
    pub radius_override: Option<f64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            model: ExpFamily::Gaussian,
            m: 2,
            beta: 2.0,
            sigma2: vec![1.0, 1.0],
            n_list: vec![20, 50, 100, 200, 500, 1000, 2000],
            replications: 500,
            alpha_list: vec![0.05],
            radius: RadiusMethod::MonteCarlo {
                draws: 10_000,
                seed: 0,
            },
            tau_omega: 2.0,
            restricted_factor: 2.0,
            tuning: Tuning::Gcv,
            lambda_grid_min: 1e-8,
            lambda_grid_max: 10.0,
            lambda_grid_len: 40,
            seed: 20_240_601,
            eval_points: fifteen_point_grid(),
            integral_points: vec![0.25, 0.5, 0.75],
            curve_points: 101,
            coverage_out: None,
            curve_out: None,
            radius_override: None,
        }
    }
}

/// `z = i/16` for `i = 1..15`.
pub fn fifteen_point_grid() -> Vec<f64> {
    (1..=15).map(|i| i as f64 / 16.0).collect()
}

impl SimConfig {
    /// Credible-region preset: `n` from 20 to 2000.
    pub fn regions_preset() -> Self {
        Self::default()
    }

    /// Functional-interval preset: `n ∈ {2⁵, 2⁷, 2⁸, 2⁹}`.
    pub fn functionals_preset() -> Self {
        Self {
            n_list: vec![32, 128, 256, 512],
            ..Self::default()
        }
    }

    /// Both presets at 1000 replications.
    pub fn paper_scale_preset() -> Self {
        Self {
            n_list: vec![20, 32, 50, 100, 128, 200, 256, 500, 512, 1000, 2000],
            replications: 1000,
            ..Self::default()
        }
    }

    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "regions" => Ok(Self::regions_preset()),
            "functionals" => Ok(Self::functionals_preset()),
            "paper" => Ok(Self::paper_scale_preset()),
            other => Err(Error::Parse(format!(
                "unknown preset `{other}` (expected regions, functionals, paper)"
            ))),
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(Error::domain("replications must be at least 1"));
        }
        if self.m < 1 {
            return Err(Error::domain("m must be at least 1"));
        }
        if self.alpha_list.is_empty() || self.alpha_list.iter().any(|a| !(*a > 0.0 && *a < 1.0)) {
            return Err(Error::domain("alpha_list must be nonempty and inside (0, 1)"));
        }
        if self.n_list.is_empty() || self.n_list.contains(&0) {
            return Err(Error::domain("n_list must be nonempty and positive"));
        }
        if self.sigma2.len() != self.m {
            return Err(Error::domain(format!("sigma2 needs {} entries", self.m)));
        }
        if !(self.beta > 1.0) || !(self.tau_omega > 1.0) {
            return Err(Error::domain("beta and tau_omega must exceed 1"));
        }
        if self
            .eval_points
            .iter()
            .chain(&self.integral_points)
            .any(|z| !(0.0..=1.0).contains(z))
        {
            return Err(Error::domain("functional points must lie in [0, 1]"));
        }
        if !(self.lambda_grid_min > 0.0 && self.lambda_grid_max >= self.lambda_grid_min)
            || self.lambda_grid_len < 1
        {
            return Err(Error::domain("invalid lambda grid"));
        }
        Ok(())
    }

    pub fn lambda_grid(&self) -> Vec<f64> {
        log_grid(self.lambda_grid_min, self.lambda_grid_max, self.lambda_grid_len)
    }

    /// Truncation level used at sample size `n`.
    pub fn truncation(&self, n: usize) -> usize {
        default_truncation(n, self.m, self.beta).max(MIN_TRUNCATION)
    }
}

/// Eigensystem for order `m` under the uniform design: the closed form for
/// `m = 2`, the Galerkin backend otherwise.
pub fn uniform_eigensystem(m: usize, n: usize) -> Result<EigenSystem> {
    if m == 2 {
        free_beam(n)
    } else {
        let weight: WeightFn = std::sync::Arc::new(|_| 1.0);
        galerkin(m, weight, 4 * n + 8, n)
    }
}

/// Draws `n` design points uniformly and responses at `η = f₀(x)`.
pub fn generate_dataset<R: Rng + ?Sized>(model: &ExpFamily, n: usize, rng: &mut R) -> Result<Dataset> {
    if n < 1 {
        return Err(Error::domain("dataset needs at least one observation"));
    }
    let mut x = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let xi: f64 = rng.random();
        y.push(model.sample(true_function_beta_mix(xi), rng)?);
        x.push(xi);
    }
    Dataset::new(x, y)
}

/// Outcome of tuning and fitting one dataset.
#[derive(Debug, Clone)]
pub struct TunedFit {
    /// Present under GCV tuning.
    pub gcv_curve: Option<Vec<GcvPoint>>,
    pub h_gcv: Option<f64>,
    /// Prior bandwidth `h` and `λ = h^{2m}`.
    pub h: f64,
    pub lambda: f64,
    pub fit: SplineFit,
}

/// Tunes `λ` and fits the penalized MLE.
pub fn tune_and_fit(
    model: &ExpFamily,
    es: &EigenSystem,
    phi: &DMatrix<f64>,
    y: &[f64],
    tuning: Tuning,
    beta: f64,
    grid: &[f64],
) -> Result<TunedFit> {
    let m = es.order();
    let (gcv_curve, h_gcv, h, lambda) = match tuning {
        Tuning::Gcv => {
            let curve = gcv_curve_with_design(model, es, phi, y, grid)?;
            let sel = select_h(&curve, m)?;
            let prior = prior_h_from_gcv(sel.h, m, beta)?;
            (Some(curve), Some(sel.h), prior.h, prior.lambda)
        }
        Tuning::FixedH { h } => {
            if !(h > 0.0) {
                return Err(Error::domain(format!("bandwidth must be positive, got {h}")));
            }
            (None, None, h, h.powi(2 * m as i32))
        }
    };
    let fit = fit_with_design(model, es, phi, y, lambda, &FitOptions::default(), None)?;
    Ok(TunedFit {
        gcv_curve,
        h_gcv,
        h,
        lambda,
        fit,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum SetKey {
    Strong,
    Weak,
    RestrictedWeak,
    Eval(usize),
    Integral(usize),
}

/// One aggregated row of `coverage.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoverageRecord {
    pub n: usize,
    pub alpha: f64,
    pub set_kind: String,
    pub covered: usize,
    pub coverage: f64,
    pub mean_radius: f64,
    /// Successful replicates, the coverage denominator.
    pub replications: usize,
    pub failures: usize,
    pub radius_method: String,
}

/// One row of `curve.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CurveRow {
    pub z: f64,
    pub f0: f64,
    pub fhat_mean: f64,
    pub lower: f64,
    pub upper: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub records: Vec<CoverageRecord>,
    /// `(n, N, ‖f₀ − Σ proj_ν φ_ν‖)` per sample size.
    pub projection_residuals: Vec<(usize, usize, f64)>,
    /// Averaged curve at the largest `n`.
    pub curve: Vec<CurveRow>,
    /// Selected prior bandwidths per replicate, `(n, h_gcv)`.
    pub bandwidths: Vec<(usize, f64)>,
}

struct Replicate {
    /// `(key, alpha index) → (covered, radius)`.
    hits: Vec<(SetKey, usize, bool, f64)>,
    fhat_curve: Vec<f64>,
    lower: Vec<f64>,
    upper: Vec<f64>,
    h_gcv: Option<f64>,
}

struct SizeContext<'a> {
    cfg: &'a SimConfig,
    n: usize,
    es: EigenSystem,
    truth: Vec<f64>,
    eval: Vec<LinearFunctional>,
    integral: Vec<LinearFunctional>,
    curve_z: Vec<f64>,
    curve_eval: Vec<LinearFunctional>,
    grid: Vec<f64>,
}

/// Replicate-level random stream: `seed` with a stream id from `(n, r)`.
fn replicate_rng(seed: u64, n: usize, r: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((n as u64) << 32) | r as u64);
    rng
}

fn run_replicate(ctx: &SizeContext<'_>, r: usize, want_curve: bool) -> Result<Replicate> {
    let cfg = ctx.cfg;
    let mut rng = replicate_rng(cfg.seed, ctx.n, r);
    let data = generate_dataset(&cfg.model, ctx.n, &mut rng)?;
    let phi = ctx.es.design_matrix(data.x());
    let tuned = tune_and_fit(&cfg.model, &ctx.es, &phi, data.y(), cfg.tuning, cfg.beta, &ctx.grid)?;
    let prior = build_prior(&ctx.es, cfg.beta, &cfg.sigma2, tuned.lambda, ctx.n)?;
    let post = build_posterior(&ctx.es, &tuned.fit, &prior)?;
    let method = match cfg.radius {
        RadiusMethod::MonteCarlo { draws, .. } => RadiusMethod::MonteCarlo {
            draws,
            seed: rng.random(),
        },
        RadiusMethod::Asymptotic => RadiusMethod::Asymptotic,
    };
    let alphas = &cfg.alpha_list;
    let (strong, weak) = match cfg.radius_override {
        Some(r) => (vec![r; alphas.len()], vec![r; alphas.len()]),
        None => (
            strong_radii(&post, method, alphas)?,
            weak_radii(&post, method, cfg.tau_omega, alphas)?,
        ),
    };
    let bound = match cfg.radius_override {
        Some(r) if r.is_infinite() => f64::INFINITY,
        _ => cfg.restricted_factor * sq_norm(&ctx.es, &tuned.fit.coeffs, NormKind::J),
    };
    let tau = cfg.tau_omega;
    let mut hits = Vec::new();
    for (ai, &alpha) in alphas.iter().enumerate() {
        let regions = [
            (SetKey::Strong, RegionKind::Strong, strong[ai]),
            (SetKey::Weak, RegionKind::Weak { tau }, weak[ai]),
            (SetKey::RestrictedWeak, RegionKind::RestrictedWeak { tau, bound }, weak[ai]),
        ];
        for (key, kind, radius) in regions {
            let m = region_contains(&post, kind, &ctx.truth, radius);
            hits.push((key, ai, m.contained, radius));
        }
        let functionals = ctx
            .eval
            .iter()
            .enumerate()
            .map(|(i, f)| (SetKey::Eval(i), f, true_function_beta_mix(cfg.eval_points[i])))
            .chain(ctx.integral.iter().enumerate().map(|(i, f)| {
                (SetKey::Integral(i), f, true_function_integral(cfg.integral_points[i]))
            }));
        for (key, f, target) in functionals {
            let mut iv = functional_interval(&post, f, alpha)?;
            if let Some(r) = cfg.radius_override {
                iv.radius = r;
            }
            hits.push((key, ai, iv.contains(target), iv.radius));
        }
    }
    let (fhat_curve, lower, upper) = if want_curve {
        curve_rows(ctx, &post, &tuned.fit, alphas[0])?
    } else {
        Default::default()
    };
    Ok(Replicate {
        hits,
        fhat_curve,
        lower,
        upper,
        h_gcv: tuned.h_gcv,
    })
}

type CurveColumns = (Vec<f64>, Vec<f64>, Vec<f64>);

fn curve_rows(
    ctx: &SizeContext<'_>,
    post: &PosteriorGP<'_>,
    fit: &SplineFit,
    alpha: f64,
) -> Result<CurveColumns> {
    let mut fhat = Vec::with_capacity(ctx.curve_z.len());
    let mut lower = Vec::with_capacity(ctx.curve_z.len());
    let mut upper = Vec::with_capacity(ctx.curve_z.len());
    for (z, f) in ctx.curve_z.iter().zip(&ctx.curve_eval) {
        fhat.push(fit.evaluate(&ctx.es, *z));
        let iv = functional_interval(post, f, alpha)?;
        lower.push(iv.lower());
        upper.push(iv.upper());
    }
    Ok((fhat, lower, upper))
}

fn set_label(cfg: &SimConfig, key: SetKey) -> String {
    match key {
        SetKey::Strong => "CR".into(),
        SetKey::Weak => "MCR".into(),
        SetKey::RestrictedWeak => "restricted_MCR".into(),
        SetKey::Eval(i) => format!("eval_CI(z={:?})", cfg.eval_points[i]),
        SetKey::Integral(i) => format!("integral_CI(z0={:?})", cfg.integral_points[i]),
    }
}

fn method_label(cfg: &SimConfig, key: SetKey) -> String {
    if cfg.radius_override.is_some() {
        return "override".into();
    }
    match key {
        SetKey::Eval(_) | SetKey::Integral(_) => "exact_gaussian".into(),
        _ => cfg.radius.name().into(),
    }
}

/// Worker count: `SPLINEBAYES_THREADS` when set to a positive integer.
pub fn thread_cap() -> Option<usize> {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&t| t > 0)
}

/// Runs every `(n, replicate)` job and aggregates coverage per set.
pub fn run_coverage_experiment(cfg: &SimConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = thread_cap() {
        builder = builder.num_threads(t);
    }
    let pool = builder
        .build()
        .map_err(|e| Error::domain(format!("thread pool: {e}")))?;
    pool.install(|| run_in_pool(cfg))
}

fn run_in_pool(cfg: &SimConfig) -> Result<ExperimentReport> {
    let mut records = Vec::new();
    let mut residuals = Vec::new();
    let mut curve = Vec::new();
    let mut bandwidths = Vec::new();
    let mut sizes = cfg.n_list.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let last_n = *sizes.last().expect("validated nonempty");
    let curve_z: Vec<f64> = if cfg.curve_points < 2 {
        vec![0.5]
    } else {
        (0..cfg.curve_points)
            .map(|i| i as f64 / (cfg.curve_points - 1) as f64)
            .collect()
    };
    for &n in &sizes {
        let big_n = cfg.truncation(n);
        let es = uniform_eigensystem(cfg.m, big_n)?;
        let quad = 8 * big_n;
        let truth = project(&es, true_function_beta_mix, quad);
        residuals.push((n, big_n, reconstruction_error(&es, true_function_beta_mix, &truth, quad)));
        let eval = cfg
            .eval_points
            .iter()
            .map(|&z| LinearFunctional::evaluation(&es, z))
            .collect::<Result<Vec<_>>>()?;
        let integral = cfg
            .integral_points
            .iter()
            .map(|&z| LinearFunctional::indicator_integral(&es, z))
            .collect::<Result<Vec<_>>>()?;
        let want_curve = n == last_n;
        let curve_eval = if want_curve {
            curve_z
                .iter()
                .map(|&z| LinearFunctional::evaluation(&es, z))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let ctx = SizeContext {
            cfg,
            n,
            es,
            truth,
            eval,
            integral,
            curve_z: curve_z.clone(),
            curve_eval,
            grid: cfg.lambda_grid(),
        };
        let outcomes: Vec<Result<Replicate>> = (0..cfg.replications)
            .into_par_iter()
            .map(|r| run_replicate(&ctx, r, want_curve))
            .collect();
        let ok: Vec<Replicate> = outcomes.into_iter().filter_map(|o| o.ok()).collect();
        let failures = cfg.replications - ok.len();
        if failures * 20 > cfg.replications {
            return Err(Error::Experiment {
                n,
                failures,
                replications: cfg.replications,
            });
        }
        bandwidths.extend(ok.iter().filter_map(|r| r.h_gcv.map(|h| (n, h))));
        records.extend(aggregate(cfg, n, &ok, failures));
        if want_curve && !ok.is_empty() {
            let k = ok.len() as f64;
            curve = curve_z
                .iter()
                .enumerate()
                .map(|(i, &z)| CurveRow {
                    z,
                    f0: true_function_beta_mix(z),
                    fhat_mean: ok.iter().map(|r| r.fhat_curve[i]).sum::<f64>() / k,
                    lower: ok.iter().map(|r| r.lower[i]).sum::<f64>() / k,
                    upper: ok.iter().map(|r| r.upper[i]).sum::<f64>() / k,
                })
                .collect();
        }
    }
    Ok(ExperimentReport {
        records,
        projection_residuals: residuals,
        curve,
        bandwidths,
    })
}

fn aggregate(cfg: &SimConfig, n: usize, ok: &[Replicate], failures: usize) -> Vec<CoverageRecord> {
    let Some(first) = ok.first() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for (slot, &(key, ai, _, _)) in first.hits.iter().enumerate() {
        let covered = ok.iter().filter(|r| r.hits[slot].2).count();
        let radius_sum: f64 = ok.iter().map(|r| r.hits[slot].3).sum();
        out.push(CoverageRecord {
            n,
            alpha: cfg.alpha_list[ai],
            set_kind: set_label(cfg, key),
            covered,
            coverage: covered as f64 / ok.len() as f64,
            mean_radius: radius_sum / ok.len() as f64,
            replications: ok.len(),
            failures,
            radius_method: method_label(cfg, key),
        });
    }
    out
}

pub fn write_coverage_csv<W: Write>(records: &[CoverageRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "n",
        "alpha",
        "set_kind",
        "coverage",
        "mean_radius",
        "reps",
        "failures",
        "radius_method",
    ])
    .map_err(csv_error)?;
    for r in records {
        w.write_record([
            r.n.to_string(),
            format!("{:?}", r.alpha),
            r.set_kind.clone(),
            format!("{:?}", r.coverage),
            format!("{:?}", r.mean_radius),
            r.replications.to_string(),
            r.failures.to_string(),
            r.radius_method.clone(),
        ])
        .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["z", "f0", "fhat_mean", "lower", "upper"])
        .map_err(csv_error)?;
    for r in rows {
        w.write_record([r.z, r.f0, r.fhat_mean, r.lower, r.upper].map(|v| format!("{v:?}")))
            .map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub(crate) fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::GaussLegendre;

    #[test]
    fn truth_vanishes_at_endpoints_and_integrates_to_five() {
        assert_eq!(true_function_beta_mix(0.0), 0.0);
        assert_eq!(true_function_beta_mix(1.0), 0.0);
        let total = GaussLegendre::new(400).integrate(0.0, 1.0, true_function_beta_mix);
        assert!((total - 5.0).abs() < 1e-6, "{total}");
        assert!((true_function_integral(1.0) - 5.0).abs() < 1e-12);
        let half = GaussLegendre::new(400).integrate(0.0, 0.5, true_function_beta_mix);
        assert!((true_function_integral(0.5) - half).abs() < 1e-8);
    }

    #[test]
    fn beta_density_matches_factorial_form() {
        // Beta(3, 11): 1/B(3, 11) = 13!/(2!·10!) = 858.
        let z: f64 = 0.2;
        let want = 858.0 * z.powi(2) * (1.0 - z).powi(10);
        assert!((beta_pdf(3.0, 11.0, z) - want).abs() <= 1e-12 * want);
    }

    #[test]
    fn right_component_peaks_at_mode() {
        let (mut best, mut arg) = (0.0, 0.0);
        for i in 0..=100_000 {
            let z = i as f64 / 100_000.0;
            let v = beta_pdf(30.0, 17.0, z);
            if v > best {
                best = v;
                arg = z;
            }
        }
        assert!((arg - 29.0 / 45.0).abs() < 1e-3);
    }

    #[test]
    fn datasets_are_seed_deterministic() {
        let a = generate_dataset(&ExpFamily::Gaussian, 50, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = generate_dataset(&ExpFamily::Gaussian, 50, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn dataset_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let d = generate_dataset(&ExpFamily::Gaussian, 100_000, &mut rng).unwrap();
        let n = d.len() as f64;
        let mean_x = d.x().iter().sum::<f64>() / n;
        assert!((mean_x - 0.5).abs() < 0.005);
        let resid: Vec<f64> = d
            .x()
            .iter()
            .zip(d.y())
            .map(|(x, y)| y - true_function_beta_mix(*x))
            .collect();
        let m = resid.iter().sum::<f64>() / n;
        let v = resid.iter().map(|r| (r - m).powi(2)).sum::<f64>() / n;
        assert!((v - 1.0).abs() < 0.03, "{v}");
    }

    #[test]
    fn projection_of_truth_is_accurate() {
        let residual = |big_n: usize| {
            let es = free_beam(big_n).unwrap();
            let c = project(&es, true_function_beta_mix, 8 * big_n);
            reconstruction_error(&es, true_function_beta_mix, &c, 2048)
        };
        // Independent high-precision projection gives 3.20397915984e-3 at N = 60.
        assert!((residual(60) - 3.20397915984e-3).abs() < 1e-12);
        assert!(residual(MIN_TRUNCATION) <= 1e-3);
    }

    #[test]
    fn infinite_radius_covers_everything() {
        let cfg = SimConfig {
            n_list: vec![40],
            replications: 1,
            radius_override: Some(f64::INFINITY),
            ..SimConfig::default()
        };
        let report = run_coverage_experiment(&cfg).unwrap();
        assert_eq!(report.records.len(), 3 + 15 + 3);
        for r in &report.records {
            assert_eq!(r.coverage, 1.0, "{}", r.set_kind);
            assert_eq!(r.radius_method, "override");
        }
    }

    #[test]
    fn coverage_arithmetic_is_consistent() {
        let cfg = SimConfig {
            n_list: vec![60, 30],
            replications: 8,
            eval_points: vec![0.3, 0.65],
            integral_points: vec![0.5],
            alpha_list: vec![0.05, 0.5],
            curve_points: 11,
            ..SimConfig::default()
        };
        let report = run_coverage_experiment(&cfg).unwrap();
        assert_eq!(report.records.len(), 2 * 2 * (3 + 2 + 1));
        assert_eq!(report.records[0].n, 30);
        for r in &report.records {
            assert!(r.covered <= r.replications);
            assert_eq!(r.coverage, r.covered as f64 / r.replications as f64);
            assert_eq!(r.replications + r.failures, 8);
        }
        assert_eq!(report.curve.len(), 11);
        assert!(report.curve.iter().all(|c| c.lower <= c.upper));
        assert_eq!(report.projection_residuals.len(), 2);
        assert!(report.projection_residuals.iter().all(|p| p.2 <= 1e-3));
    }

    #[test]
    fn coverage_csv_is_reproducible() {
        let cfg = SimConfig {
            n_list: vec![40],
            replications: 6,
            radius: RadiusMethod::Asymptotic,
            ..SimConfig::default()
        };
        let render = || {
            let report = run_coverage_experiment(&cfg).unwrap();
            let mut buf = Vec::new();
            write_coverage_csv(&report.records, &mut buf).unwrap();
            write_curve_csv(&report.curve, &mut buf).unwrap();
            buf
        };
        let a = render();
        assert_eq!(a, render());
        let text = String::from_utf8(a).unwrap();
        assert!(text.starts_with("n,alpha,set_kind,coverage,mean_radius,reps,failures,radius_method\n"));
        assert!(text.contains("z,f0,fhat_mean,lower,upper\n"));
    }

    #[test]
    fn config_round_trips_through_json() {
        let cfg = SimConfig::functionals_preset();
        let text = serde_json::to_string_pretty(&cfg).unwrap();
        assert_eq!(SimConfig::from_json(&text).unwrap(), cfg);
        let partial = SimConfig::from_json(r#"{"replications": 3, "tuning": {"mode": "fixed_h", "h": 0.2}}"#).unwrap();
        assert_eq!(partial.replications, 3);
        assert_eq!(partial.tuning, Tuning::FixedH { h: 0.2 });
        assert!(SimConfig::from_json(r#"{"replications": 0}"#).is_err());
        assert!(SimConfig::from_json(r#"{"bogus": 1}"#).is_err());
        assert!(SimConfig::preset("nope").is_err());
    }

    #[test]
    fn fixed_bandwidth_skips_gcv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let data = generate_dataset(&ExpFamily::Gaussian, 100, &mut rng).unwrap();
        let es = free_beam(30).unwrap();
        let phi = es.design_matrix(data.x());
        let t = tune_and_fit(&ExpFamily::Gaussian, &es, &phi, data.y(), Tuning::FixedH { h: 0.1 }, 2.0, &[])
            .unwrap();
        assert!(t.gcv_curve.is_none());
        assert!((t.lambda - 1e-4).abs() < 1e-18);
    }
}
