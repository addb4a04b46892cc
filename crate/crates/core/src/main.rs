use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use splinebayes::credible::{functional_interval, FunctionalSpec, LinearFunctional};
use splinebayes::eigensystem::EigenSystem;
use splinebayes::exp_family::ExpFamily;
use splinebayes::posterior::{build_posterior, build_prior};
use splinebayes::sim::{
    run_coverage_experiment, tune_and_fit, uniform_eigensystem, write_coverage_csv,
    write_curve_csv, SimConfig, TunedFit, Tuning,
};
use splinebayes::spline_fit::Dataset;
use splinebayes::tuning::{default_lambda_grid, GcvPoint};
use splinebayes::{Error, Result};

#[derive(Parser)]
#[command(name = "splinebayes", version, about = "Smoothing-spline posteriors and credible sets")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a smoothing spline to (x, y) data and write the curve on a 512-point grid.
    Fit(FitArgs),
    /// Draw posterior paths on a grid.
    Sample(SampleArgs),
    /// Credible interval for an evaluation or integral functional.
    Interval(IntervalArgs),
    /// Run a coverage experiment.
    Coverage(CoverageArgs),
    /// Dump eigenvalues and Gram residuals.
    Eigen(EigenArgs),
}

#[derive(Args)]
struct ModelArgs {
    /// gaussian, binary, poisson or binomial:<trials>.
    #[arg(long, default_value = "gaussian")]
    model: String,
    /// Penalty order.
    #[arg(long, default_value_t = 2)]
    m: usize,
    /// Prior regularity offset.
    #[arg(long, default_value_t = 2.0)]
    beta: f64,
    /// Number of eigenfunctions; defaults to the harness truncation for the data size.
    #[arg(long)]
    terms: Option<usize>,
}

#[derive(Args)]
struct DataArgs {
    /// CSV with header and columns x, y.
    #[arg(long)]
    data: PathBuf,
    /// Fixed smoothing parameter instead of GCV.
    #[arg(long, conflicts_with = "gcv")]
    lambda: Option<f64>,
    /// Select the smoothing parameter by GCV (the default).
    #[arg(long)]
    gcv: bool,
    /// Write the GCV curve (lambda, score) here.
    #[arg(long)]
    gcv_out: Option<PathBuf>,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Output CSV (z, fhat); stdout when absent.
    #[arg(long, alias = "grid-out")]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SampleArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    /// Number of paths.
    #[arg(long, default_value_t = 10)]
    paths: usize,
    /// Grid size on [0, 1].
    #[arg(long, default_value_t = 101)]
    grid: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct IntervalArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    data: DataArgs,
    /// eval:<z> or integral:<z0>; repeatable.
    #[arg(long, required = true)]
    functional: Vec<String>,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CoverageArgs {
    /// JSON file mirroring the simulation config.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// regions, functionals or paper.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    model: Option<String>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Comma-separated sample sizes.
    #[arg(long, value_delimiter = ',')]
    n: Option<Vec<usize>>,
    #[arg(long)]
    reps: Option<usize>,
    /// Comma-separated credibility complements.
    #[arg(long, value_delimiter = ',')]
    alpha: Option<Vec<f64>>,
    /// Tune by GCV (the default).
    #[arg(long, conflicts_with = "h")]
    gcv: bool,
    /// Fixed prior bandwidth instead of GCV.
    #[arg(long)]
    h: Option<f64>,
    /// Use the asymptotic radius formulas instead of Monte Carlo.
    #[arg(long)]
    asymptotic: bool,
    /// coverage.csv destination; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// curve.csv destination.
    #[arg(long)]
    curve_out: Option<PathBuf>,
}

#[derive(Args)]
struct EigenArgs {
    #[arg(long, default_value_t = 2)]
    m: usize,
    #[arg(long, default_value_t = 50)]
    terms: usize,
    /// Quadrature order for the Gram residuals.
    #[arg(long, default_value_t = 2048)]
    quad: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn open_out(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn read_dataset(path: &Path, model: &ExpFamily) -> Result<Dataset> {
    let mut reader = csv::Reader::from_path(path)
        .map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for (line, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
        let field = |i: usize| -> Result<f64> {
            rec.get(i)
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| Error::Parse(format!("{}: bad row {}", path.display(), line + 2)))
        };
        x.push(field(0)?);
        y.push(field(1)?);
    }
    Dataset::for_model(model, x, y)
}

struct Prepared {
    model: ExpFamily,
    beta: f64,
    data: Dataset,
    es: EigenSystem,
    tuned: TunedFit,
}

/// Reads data, builds the eigensystem and fits. Under GCV the fit uses the
/// prior bandwidth when `prior_map` is set and the GCV optimum otherwise.
fn prepare(model: &ModelArgs, data: &DataArgs, prior_map: bool) -> Result<Prepared> {
    let family = ExpFamily::parse(&model.model)?;
    let dataset = read_dataset(&data.data, &family)?;
    let sizing = SimConfig {
        m: model.m,
        beta: model.beta,
        ..SimConfig::default()
    };
    let terms = model.terms.unwrap_or_else(|| sizing.truncation(dataset.len()));
    let es = uniform_eigensystem(model.m, terms)?;
    let phi = es.design_matrix(dataset.x());
    let grid = default_lambda_grid();
    let tuned = match data.lambda {
        Some(lambda) => {
            let h = lambda.powf(1.0 / (2.0 * model.m as f64));
            tune_and_fit(&family, &es, &phi, dataset.y(), Tuning::FixedH { h }, model.beta, &grid)?
        }
        None => {
            let mut t = tune_and_fit(&family, &es, &phi, dataset.y(), Tuning::Gcv, model.beta, &grid)?;
            if !prior_map {
                let h = t.h_gcv.expect("gcv tuning records h_gcv");
                let curve = t.gcv_curve.take();
                t = tune_and_fit(&family, &es, &phi, dataset.y(), Tuning::FixedH { h }, model.beta, &grid)?;
                t.gcv_curve = curve;
                t.h_gcv = Some(h);
            }
            t
        }
    };
    if let (Some(path), Some(curve)) = (&data.gcv_out, &tuned.gcv_curve) {
        write_gcv_curve(path, curve)?;
    }
    Ok(Prepared {
        model: family,
        beta: model.beta,
        data: dataset,
        es,
        tuned,
    })
}

fn write_gcv_curve(path: &Path, curve: &[GcvPoint]) -> Result<()> {
    let mut w = open_out(Some(path))?;
    writeln!(w, "lambda,score")?;
    for p in curve {
        match p.score {
            Some(s) => writeln!(w, "{:?},{:?}", p.lambda, s)?,
            None => writeln!(w, "{:?},", p.lambda)?,
        }
    }
    w.flush()?;
    Ok(())
}

fn run_fit(args: FitArgs) -> Result<()> {
    let p = prepare(&args.model, &args.data, false)?;
    eprintln!(
        "model {} n {} terms {} lambda {:e} iterations {}",
        p.model.name(),
        p.data.len(),
        p.es.len(),
        p.tuned.lambda,
        p.tuned.fit.iterations
    );
    let mut w = open_out(args.out.as_deref())?;
    writeln!(w, "z,fhat")?;
    for i in 0..512 {
        let z = i as f64 / 511.0;
        writeln!(w, "{:?},{:?}", z, p.tuned.fit.evaluate(&p.es, z))?;
    }
    w.flush()?;
    Ok(())
}

fn run_sample(args: SampleArgs) -> Result<()> {
    let p = prepare(&args.model, &args.data, true)?;
    let sigma2 = vec![1.0; p.es.order()];
    let prior = build_prior(&p.es, p.beta, &sigma2, p.tuned.lambda, p.data.len())?;
    let post = build_posterior(&p.es, &p.tuned.fit, &prior)?;
    let grid: Vec<f64> = (0..args.grid.max(2))
        .map(|i| i as f64 / (args.grid.max(2) - 1) as f64)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut w = open_out(args.out.as_deref())?;
    writeln!(w, "path_id,z,value")?;
    for id in 0..args.paths {
        let path = post.sample_path(&mut rng, &grid);
        for (z, v) in grid.iter().zip(path) {
            writeln!(w, "{id},{z:?},{v:?}")?;
        }
    }
    w.flush()?;
    Ok(())
}

fn run_interval(args: IntervalArgs) -> Result<()> {
    let specs = args
        .functional
        .iter()
        .map(|s| s.parse::<FunctionalSpec>())
        .collect::<Result<Vec<_>>>()?;
    let p = prepare(&args.model, &args.data, true)?;
    let sigma2 = vec![1.0; p.es.order()];
    let prior = build_prior(&p.es, p.beta, &sigma2, p.tuned.lambda, p.data.len())?;
    let post = build_posterior(&p.es, &p.tuned.fit, &prior)?;
    let mut w = open_out(args.out.as_deref())?;
    writeln!(w, "functional,alpha,center,radius,lower,upper")?;
    for spec in specs {
        let f = LinearFunctional::new(&p.es, spec)?;
        let iv = functional_interval(&post, &f, args.alpha)?;
        writeln!(
            w,
            "{spec},{:?},{:?},{:?},{:?},{:?}",
            args.alpha,
            iv.center,
            iv.radius,
            iv.lower(),
            iv.upper()
        )?;
    }
    w.flush()?;
    Ok(())
}

fn run_coverage(args: CoverageArgs) -> Result<()> {
    let mut cfg = match (&args.config, &args.preset) {
        (Some(path), _) => SimConfig::load(path)?,
        (None, Some(name)) => SimConfig::preset(name)?,
        (None, None) => SimConfig::default(),
    };
    if let Some(model) = &args.model {
        cfg.model = ExpFamily::parse(model)?;
    }
    if let Some(m) = args.m {
        cfg.m = m;
        cfg.sigma2.resize(m, 1.0);
    }
    if let Some(beta) = args.beta {
        cfg.beta = beta;
    }
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    if let Some(n) = args.n {
        cfg.n_list = n;
    }
    if let Some(reps) = args.reps {
        cfg.replications = reps;
    }
    if let Some(alpha) = args.alpha {
        cfg.alpha_list = alpha;
    }
    if let Some(h) = args.h {
        cfg.tuning = Tuning::FixedH { h };
    } else if args.gcv {
        cfg.tuning = Tuning::Gcv;
    }
    if args.asymptotic {
        cfg.radius = splinebayes::credible::RadiusMethod::Asymptotic;
    }
    if args.out.is_some() {
        cfg.coverage_out = args.out;
    }
    if args.curve_out.is_some() {
        cfg.curve_out = args.curve_out;
    }
    let report = run_coverage_experiment(&cfg)?;
    for (n, big_n, residual) in &report.projection_residuals {
        eprintln!("n {n}: truncation {big_n}, projection residual of f0 {residual:.3e}");
    }
    write_coverage_csv(&report.records, open_out(cfg.coverage_out.as_deref())?)?;
    if let Some(path) = &cfg.curve_out {
        write_curve_csv(&report.curve, open_out(Some(path))?)?;
    }
    Ok(())
}

fn run_eigen(args: EigenArgs) -> Result<()> {
    let es = uniform_eigensystem(args.m, args.terms)?;
    let residuals = es.gram_residuals(args.quad);
    let mut w = open_out(args.out.as_deref())?;
    writeln!(w, "nu,gamma,rho,v_residual,u_residual")?;
    for (k, r) in residuals.iter().enumerate() {
        writeln!(w, "{:?},{:?},{:?},{:?},{:?}", r.nu, es.gamma()[k], es.rho()[k], r.v, r.u)?;
    }
    w.flush()?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fit(a) => run_fit(a),
        Command::Sample(a) => run_sample(a),
        Command::Interval(a) => run_interval(a),
        Command::Coverage(a) => run_coverage(a),
        Command::Eigen(a) => run_eigen(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
