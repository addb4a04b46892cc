use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use tempfile::TempDir;

use splinebayes::sim::SimConfig;

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_splinebayes"))
        .args(args)
        .env("SPLINEBAYES_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_data(dir: &Path, n: usize) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut text = String::from("x,y\n");
    for _ in 0..n {
        let x: f64 = rng.random();
        let y = (2.0 * std::f64::consts::PI * x).sin() + 0.3 * rng.sample::<f64, _>(StandardNormal);
        text.push_str(&format!("{x},{y}\n"));
    }
    let path = dir.join("data.csv");
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_owned()
}

fn read_csv(path: &Path) -> (String, Vec<Vec<f64>>) {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap().to_owned();
    let rows = lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap_or(f64::NAN)).collect())
        .collect();
    (header, rows)
}

#[test]
fn eigen_writes_small_residuals() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("eigen.csv");
    ok(&["eigen", "--terms", "20", "--out", out.to_str().unwrap()]);
    let (header, rows) = read_csv(&out);
    assert_eq!(header, "nu,gamma,rho,v_residual,u_residual");
    assert_eq!(rows.len(), 20);
    assert_eq!(rows[2][0], 3.0);
    assert!((rows[2][2] - 4.730040745f64.powi(4)).abs() < 1e-3);
    assert!(rows.iter().all(|r| r[3] < 1e-10));
}

#[test]
fn fit_with_gcv_writes_curve_and_grid() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), 150);
    let grid = dir.path().join("fit.csv");
    let gcv = dir.path().join("gcv.csv");
    ok(&[
        "fit",
        "--data",
        &data,
        "--gcv",
        "--gcv-out",
        gcv.to_str().unwrap(),
        "--grid-out",
        grid.to_str().unwrap(),
    ]);
    let (h, rows) = read_csv(&grid);
    assert_eq!(h, "z,fhat");
    let at_quarter = rows.iter().min_by(|a, b| (a[0] - 0.25).abs().total_cmp(&(b[0] - 0.25).abs())).unwrap();
    assert!((at_quarter[1] - 1.0).abs() < 0.3, "fhat(1/4) = {}", at_quarter[1]);
    let (h, rows) = read_csv(&gcv);
    assert_eq!(h, "lambda,score");
    assert_eq!(rows.len(), 40);
}

#[test]
fn sample_is_seeded() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), 80);
    let paths: Vec<_> = (0..3).map(|i| dir.path().join(format!("s{i}.csv"))).collect();
    for (p, seed) in paths.iter().zip(["5", "5", "6"]) {
        ok(&[
            "sample", "--data", &data, "--lambda", "1e-4", "--paths", "3", "--grid", "11",
            "--seed", seed, "--out", p.to_str().unwrap(),
        ]);
    }
    let a = fs::read(&paths[0]).unwrap();
    assert_eq!(a, fs::read(&paths[1]).unwrap());
    assert_ne!(a, fs::read(&paths[2]).unwrap());
    let (h, rows) = read_csv(&paths[0]);
    assert_eq!(h, "path_id,z,value");
    assert_eq!(rows.len(), 33);
}

#[test]
fn interval_reports_each_functional() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), 120);
    let out = dir.path().join("ci.csv");
    ok(&[
        "interval", "--data", &data, "--lambda", "1e-5", "--functional", "eval:0.25",
        "--functional", "integral:0.5", "--alpha", "0.1", "--out", out.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "functional,alpha,center,radius,lower,upper");
    let rows: Vec<Vec<&str>> = lines.map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 2);
    assert_eq!(rows[0][0], "eval:0.25");
    assert_eq!(rows[1][0], "integral:0.5");
    for r in rows {
        let v: Vec<f64> = r[1..].iter().map(|s| s.parse().unwrap()).collect();
        assert_eq!(v[0], 0.1);
        assert!(v[2] > 0.0);
        assert!((v[3] - (v[1] - v[2])).abs() < 1e-12 && (v[4] - (v[1] + v[2])).abs() < 1e-12);
    }
}

#[test]
fn coverage_from_config_is_reproducible() {
    let dir = TempDir::new().unwrap();
    let cfg = SimConfig {
        n_list: vec![40],
        replications: 4,
        eval_points: vec![0.5],
        integral_points: vec![0.5],
        curve_points: 5,
        ..SimConfig::default()
    };
    let cfg_path = dir.path().join("cfg.json");
    fs::write(&cfg_path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    let outs: Vec<_> = (0..2).map(|i| dir.path().join(format!("cov{i}.csv"))).collect();
    for o in &outs {
        ok(&["coverage", "--config", cfg_path.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    }
    let a = fs::read_to_string(&outs[0]).unwrap();
    assert_eq!(a, fs::read_to_string(&outs[1]).unwrap());
    assert!(a.starts_with("n,alpha,set_kind,coverage,mean_radius,reps,failures,radius_method\n"));
    assert!(a.contains(",CR,") && a.contains(",MCR,") && a.contains(",integral_CI(z0=0.5),"));
}

#[test]
fn coverage_flags_override_config() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("cov.csv");
    let curve = dir.path().join("curve.csv");
    ok(&[
        "coverage", "--preset", "regions", "--n", "30", "--reps", "3", "--alpha", "0.1,0.2",
        "--h", "0.3", "--asymptotic", "--seed", "9", "--out", out.to_str().unwrap(),
        "--curve-out", curve.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&out).unwrap();
    let cr: Vec<&str> = text.lines().filter(|l| l.contains(",CR,")).collect();
    assert_eq!(cr.len(), 2);
    assert!(cr.iter().all(|l| l.starts_with("30,") && l.ends_with(",asymptotic")));
    let (h, rows) = read_csv(&curve);
    assert_eq!(h, "z,f0,fhat_mean,lower,upper");
    assert_eq!(rows.len(), 101);
}

#[test]
fn bad_input_exits_with_error() {
    let dir = TempDir::new().unwrap();
    let data = write_data(dir.path(), 30);
    let out = run(&["interval", "--data", &data, "--functional", "slope:0.5"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    let out = run(&["fit", "--data", &data, "--model", "gamma"]);
    assert_eq!(out.status.code(), Some(1));
}
