//! Spectral basis `(φ_ν, ρ_ν)` that simultaneously diagonalizes the weighted
//! `L²` form `V(g, h) = ∫ g h w` and the roughness form `U(g, h) = ∫ g⁽ᵐ⁾ h⁽ᵐ⁾`
//! on `[0, 1]`.
//!
//! Two backends build the system:
//!
//! * [`free_beam`]: the closed form for `m = 2` with unit weight, whose
//!   frequencies `γ` solve `cos γ · cosh γ = 1` and `ρ = γ⁴`;
//! * [`galerkin`]: a Rayleigh–Ritz discretization of the generalized
//!   eigenproblem `U c = ρ V_w c` for an arbitrary positive weight `w`.
//!
//! Indices in this module are zero-based: slot `k` holds `ν = k + 1`.

use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::quadrature::GaussLegendre;

/// Shared weight function `w(x) = A''(f₀(x)) π(x)` on `[0, 1]`.
pub type WeightFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    ClosedFormFreeBeam,
    Galerkin,
}

#[derive(Clone)]
enum Evaluator {
    /// `roots[j]` is the frequency of `ν = j + 3`.
    FreeBeam { roots: Vec<f64> },
    /// Column `k` of `coeffs` expands `φ_{k+1}` in the intermediate basis.
    Galerkin {
        basis: IntermediateBasis,
        coeffs: DMatrix<f64>,
    },
}

#[derive(Clone)]
pub struct EigenSystem {
    order: usize,
    rho: Vec<f64>,
    gamma: Vec<f64>,
    weight: Option<WeightFn>,
    eval: Evaluator,
    provenance: Provenance,
}

impl fmt::Debug for EigenSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("EigenSystem")
            .field("order", &self.order)
            .field("len", &self.rho.len())
            .field("provenance", &self.provenance)
            .field("uniform_weight", &self.weight.is_none())
            .finish()
    }
}

/// Default truncation level `max(50, ⌈10 n^{1/(2m+β)}⌉)`.
pub fn default_truncation(n: usize, m: usize, beta: f64) -> usize {
    let k = (10.0 * (n as f64).powf(1.0 / (2.0 * m as f64 + beta))).ceil() as usize;
    k.max(50)
}

impl EigenSystem {
    /// Number of retained eigenpairs `N`.
    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    /// Sobolev order `m`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn rho(&self) -> &[f64] {
        &self.rho
    }

    /// Penalty weights: 1 on the null space of `U`, `ρ_ν` beyond it.
    pub fn gamma(&self) -> &[f64] {
        &self.gamma
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// Free-beam frequencies `γ_ν = ρ_ν^{1/4}` for `ν ≥ 3`, when available.
    pub fn frequencies(&self) -> Option<&[f64]> {
        match &self.eval {
            Evaluator::FreeBeam { roots } => Some(roots),
            Evaluator::Galerkin { .. } => None,
        }
    }

    pub fn weight(&self, x: f64) -> f64 {
        self.weight.as_ref().map_or(1.0, |w| w(x))
    }

    /// The first `n` eigenpairs of this system.
    pub fn truncated(&self, n: usize) -> EigenSystem {
        let n = n.min(self.len());
        let eval = match &self.eval {
            Evaluator::FreeBeam { roots } => Evaluator::FreeBeam {
                roots: roots[..n.saturating_sub(2)].to_vec(),
            },
            Evaluator::Galerkin { basis, coeffs } => Evaluator::Galerkin {
                basis: basis.clone(),
                coeffs: coeffs.columns(0, n).into_owned(),
            },
        };
        EigenSystem {
            order: self.order,
            rho: self.rho[..n].to_vec(),
            gamma: self.gamma[..n].to_vec(),
            weight: self.weight.clone(),
            eval,
            provenance: self.provenance,
        }
    }

    /// `φ_{k+1}(z)`.
    pub fn phi(&self, k: usize, z: f64) -> f64 {
        self.phi_derivative(k, z, 0)
    }

    /// The `d`-th derivative of `φ_{k+1}` at `z`.
    pub fn phi_derivative(&self, k: usize, z: f64, d: usize) -> f64 {
        match &self.eval {
            Evaluator::FreeBeam { roots } => free_beam_mode(roots, k, z, d),
            Evaluator::Galerkin { basis, coeffs } => {
                let mut vals = vec![0.0; basis.len()];
                basis.eval_into(z, d, &mut vals);
                coeffs.column(k).iter().zip(&vals).map(|(c, b)| c * b).sum()
            }
        }
    }

    /// Writes `φ_1(z), …, φ_N(z)` into `out`.
    pub fn eval_all(&self, z: f64, out: &mut [f64]) {
        self.eval_all_derivative(z, 0, out);
    }

    pub fn eval_all_derivative(&self, z: f64, d: usize, out: &mut [f64]) {
        match &self.eval {
            Evaluator::FreeBeam { roots } => {
                for (k, o) in out.iter_mut().enumerate().take(self.len()) {
                    *o = free_beam_mode(roots, k, z, d);
                }
            }
            Evaluator::Galerkin { basis, coeffs } => {
                let mut vals = vec![0.0; basis.len()];
                basis.eval_into(z, d, &mut vals);
                let v = DVector::from_vec(vals);
                let phi = coeffs.tr_mul(&v);
                out[..self.len()].copy_from_slice(phi.as_slice());
            }
        }
    }

    /// Design matrix `Φ` with `Φ[i, k] = φ_{k+1}(x_i)`.
    pub fn design_matrix(&self, xs: &[f64]) -> DMatrix<f64> {
        let n = self.len();
        let mut phi = DMatrix::zeros(xs.len(), n);
        let mut row = vec![0.0; n];
        for (i, &x) in xs.iter().enumerate() {
            self.eval_all(x, &mut row);
            for (k, v) in row.iter().enumerate() {
                phi[(i, k)] = *v;
            }
        }
        phi
    }

    /// `Σ c_ν φ_ν(z)`.
    pub fn evaluate(&self, coeffs: &[f64], z: f64) -> f64 {
        let mut row = vec![0.0; self.len()];
        self.eval_all(z, &mut row);
        coeffs.iter().zip(&row).map(|(c, p)| c * p).sum()
    }

    /// Maximum Gram residuals `max |V(φ_μ, φ_ν) − δ|` and
    /// `max |U(φ_μ, φ_ν) − ρ_μ δ| / max(1, ρ_μ)`, per `ν`.
    pub fn gram_residuals(&self, quad_order: usize) -> Vec<GramResidual> {
        let n = self.len();
        let rule = GaussLegendre::cached(quad_order);
        let nodes: Vec<(f64, f64)> = rule.on_interval(0.0, 1.0).collect();
        let q = nodes.len();
        let mut vals = DMatrix::zeros(q, n);
        let mut ders = DMatrix::zeros(q, n);
        let mut row = vec![0.0; n];
        for (i, &(x, w)) in nodes.iter().enumerate() {
            let ww = w * self.weight(x);
            self.eval_all(x, &mut row);
            for k in 0..n {
                vals[(i, k)] = row[k] * ww.sqrt();
            }
            self.eval_all_derivative(x, self.order, &mut row);
            for k in 0..n {
                ders[(i, k)] = row[k] * w.sqrt();
            }
        }
        let v = vals.tr_mul(&vals);
        let u = ders.tr_mul(&ders);
        (0..n)
            .map(|nu| {
                let mut v_res: f64 = 0.0;
                let mut u_res: f64 = 0.0;
                for mu in 0..n {
                    let delta = if mu == nu { 1.0 } else { 0.0 };
                    v_res = v_res.max((v[(mu, nu)] - delta).abs());
                    let scale = self.rho[mu].max(self.rho[nu]).max(1.0);
                    u_res = u_res.max((u[(mu, nu)] - self.rho[nu] * delta).abs() / scale);
                }
                GramResidual {
                    nu: nu + 1,
                    v: v_res,
                    u: u_res,
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GramResidual {
    pub nu: usize,
    pub v: f64,
    pub u: f64,
}

// ---------------------------------------------------------------------------
// Free beam
// ---------------------------------------------------------------------------

fn beam_residual(x: f64) -> f64 {
    // cos x · cosh x − 1 rescaled by 1/cosh x; same roots, bounded magnitude.
    x.cos() - 1.0 / x.cosh()
}

fn beam_residual_slope(x: f64) -> f64 {
    -x.sin() + x.tanh() / x.cosh()
}

/// The first `count` positive solutions of `cos x · cosh x = 1`, ascending.
///
/// Each panel `[kπ, (k+1)π]`, `k ≥ 1`, holds exactly one root: the rescaled
/// residual `cos x − sech x` takes the sign of `cos kπ` at both ends.
pub fn free_beam_roots(count: usize) -> Result<Vec<f64>> {
    if count == 0 {
        return Err(Error::domain("root count must be at least 1"));
    }
    let mut roots = Vec::with_capacity(count);
    let mut k = 1usize;
    // Generous scan limit; every panel contributes a root, so this only trips
    // if the bracketing logic is broken.
    while roots.len() < count && k <= 4 * count + 8 {
        let (mut lo, mut hi) = (k as f64 * PI, (k + 1) as f64 * PI);
        let (flo, fhi) = (beam_residual(lo), beam_residual(hi));
        k += 1;
        if flo * fhi > 0.0 {
            continue;
        }
        while hi - lo > 1e-12 * hi {
            let mid = 0.5 * (lo + hi);
            if beam_residual(mid) * flo > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let mut x = 0.5 * (lo + hi);
        for _ in 0..2 {
            let slope = beam_residual_slope(x);
            if slope != 0.0 {
                let step = beam_residual(x) / slope;
                if step.abs() < hi - lo + 1e-9 {
                    x -= step;
                }
            }
        }
        roots.push(x);
    }
    if roots.len() < count {
        return Err(Error::RootShortfall {
            found: roots.len(),
            wanted: count,
        });
    }
    Ok(roots)
}

/// Closed-form free-beam system with `n ≥ 2` eigenpairs (`m = 2`, unit weight).
pub fn free_beam(n: usize) -> Result<EigenSystem> {
    if n < 2 {
        return Err(Error::domain("free-beam system needs N >= 2"));
    }
    let roots = if n > 2 { free_beam_roots(n - 2)? } else { Vec::new() };
    let mut rho = vec![0.0, 0.0];
    rho.extend(roots.iter().map(|g| g.powi(4)));
    let gamma = gamma_from_rho(&rho, 2);
    Ok(EigenSystem {
        order: 2,
        rho,
        gamma,
        weight: None,
        eval: Evaluator::FreeBeam { roots },
        provenance: Provenance::ClosedFormFreeBeam,
    })
}

fn gamma_from_rho(rho: &[f64], m: usize) -> Vec<f64> {
    rho.iter()
        .enumerate()
        .map(|(k, &r)| if k < m { 1.0 } else { r })
        .collect()
}

/// `cosh(γu)/cosh(γ/2)` or `sinh(γu)/cosh(γ/2)`-type ratios in a form that
/// never overflows: `e^{γ(|u|−½)} (1 ± e^{−2γ|u|}) / (1 ± e^{−γ})`.
fn hyperbolic_ratio(g: f64, u: f64, numer_even: bool, denom_even: bool) -> f64 {
    let a = u.abs();
    let lead = (g * (a - 0.5)).exp();
    let tail = (-2.0 * g * a).exp();
    let numer = if numer_even { 1.0 + tail } else { 1.0 - tail };
    let denom = if denom_even {
        1.0 + (-g).exp()
    } else {
        -(-g).exp_m1()
    };
    let sign = if numer_even || u >= 0.0 { 1.0 } else { -1.0 };
    sign * lead * numer / denom
}

/// `d`-th derivative of the `k`-th (zero-based) free-beam mode.
///
/// Modes with `ν = 3, 5, …` are symmetric about `½`
/// (`cos(γu)/cos(γ/2) + cosh(γu)/cosh(γ/2)`), those with `ν = 4, 6, …`
/// antisymmetric (`sin(γu)/sin(γ/2) + sinh(γu)/sinh(γ/2)`), with `u = z − ½`.
fn free_beam_mode(roots: &[f64], k: usize, z: f64, d: usize) -> f64 {
    match k {
        0 => {
            if d == 0 {
                1.0
            } else {
                0.0
            }
        }
        1 => match d {
            0 => 3f64.sqrt() * (2.0 * z - 1.0),
            1 => 2.0 * 3f64.sqrt(),
            _ => 0.0,
        },
        _ => {
            let g = roots[k - 2];
            let u = z - 0.5;
            let shift = d as f64 * FRAC_PI_2;
            let scale = g.powi(d as i32);
            let even_derivative = d % 2 == 0;
            if k % 2 == 0 {
                // Symmetric: ν = k + 1 odd.
                let trig = (g * u + shift).cos() / (0.5 * g).cos();
                scale * (trig + hyperbolic_ratio(g, u, even_derivative, true))
            } else {
                let trig = (g * u + shift).sin() / (0.5 * g).sin();
                scale * (trig + hyperbolic_ratio(g, u, !even_derivative, false))
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Galerkin
// ---------------------------------------------------------------------------

/// Monomials `1, x, …, x^m` followed by `cos(kπx)`, `k = 1..=K`.
///
/// The monomials below degree `m` span the null space of `U` exactly; `x^m`
/// absorbs the endpoint slopes so the cosine part converges rapidly.
#[derive(Debug, Clone)]
struct IntermediateBasis {
    order: usize,
    cosines: usize,
}

impl IntermediateBasis {
    fn len(&self) -> usize {
        self.order + 1 + self.cosines
    }

    fn eval_into(&self, x: f64, d: usize, out: &mut [f64]) {
        for j in 0..=self.order {
            out[j] = if d > j {
                0.0
            } else {
                let falling: f64 = ((j - d + 1)..=j).map(|t| t as f64).product();
                falling * x.powi((j - d) as i32)
            };
        }
        let shift = d as f64 * FRAC_PI_2;
        for k in 1..=self.cosines {
            let w = k as f64 * PI;
            out[self.order + k] = w.powi(d as i32) * (w * x + shift).cos();
        }
    }
}

/// Rayleigh–Ritz solution of `(−1)^m φ^{(2m)} = ρ w φ` with free boundary
/// conditions, keeping `n` eigenpairs from an intermediate basis of
/// `basis_size` functions.
pub fn galerkin(m: usize, weight: WeightFn, basis_size: usize, n: usize) -> Result<EigenSystem> {
    if m == 0 {
        return Err(Error::domain("Sobolev order m must be positive"));
    }
    if n <= m {
        return Err(Error::domain("truncation level must exceed m"));
    }
    if basis_size < 4 * n || basis_size < m + 2 {
        return Err(Error::domain(format!(
            "basis size {basis_size} must be at least 4N = {}",
            4 * n
        )));
    }
    let basis = IntermediateBasis {
        order: m,
        cosines: basis_size - m - 1,
    };
    let b = basis.len();
    let quad_order = 4 * b;
    let rule = GaussLegendre::cached(quad_order);

    let mut vals = DMatrix::zeros(quad_order, b);
    let mut ders = DMatrix::zeros(quad_order, b);
    let mut row = vec![0.0; b];
    for (i, (x, w)) in rule.on_interval(0.0, 1.0).enumerate() {
        let wx = weight(x);
        if !(wx > 0.0 && wx.is_finite()) {
            return Err(Error::domain(format!(
                "weight must be positive and finite on [0, 1]; got {wx} at {x}"
            )));
        }
        basis.eval_into(x, 0, &mut row);
        let sw = (w * wx).sqrt();
        for j in 0..b {
            vals[(i, j)] = row[j] * sw;
        }
        basis.eval_into(x, m, &mut row);
        let sq = w.sqrt();
        for j in 0..b {
            ders[(i, j)] = row[j] * sq;
        }
    }
    let v = vals.tr_mul(&vals);
    let u = ders.tr_mul(&ders);

    // Null space: Gram–Schmidt of 1, x, …, x^{m−1} in V_w.
    let v11 = v.view((0, 0), (m, m)).into_owned();
    let chol11 = v11
        .clone()
        .cholesky()
        .ok_or(Error::Discretization { quad_order })?;
    let l11_inv_t = chol11
        .l()
        .solve_lower_triangular(&DMatrix::identity(m, m))
        .ok_or(Error::Discretization { quad_order })?
        .transpose();

    // Complement: eliminate the null block so the remaining modes are
    // V_w-orthogonal to it by construction.
    let r = b - m;
    let v12 = v.view((0, m), (m, r)).into_owned();
    let v22 = v.view((m, m), (r, r)).into_owned();
    let u22 = u.view((m, m), (r, r)).into_owned();
    let elim = chol11.solve(&v12);
    let mut schur = &v22 - v12.transpose() * &elim;
    symmetrize(&mut schur);
    let chol = schur
        .cholesky()
        .ok_or(Error::Discretization { quad_order })?;
    let l = chol.l();
    let linv = l
        .solve_lower_triangular(&DMatrix::identity(r, r))
        .ok_or(Error::Discretization { quad_order })?;
    let mut reduced = &linv * &u22 * linv.transpose();
    symmetrize(&mut reduced);
    let eig = SymmetricEigen::new(reduced);
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &c| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[c]));

    let mut coeffs = DMatrix::zeros(b, n);
    let mut rho = vec![0.0; n];
    for k in 0..m {
        for j in 0..m {
            coeffs[(j, k)] = l11_inv_t[(j, k)];
        }
    }
    let linv_t = linv.transpose();
    for (slot, &idx) in order.iter().take(n - m).enumerate() {
        let k = m + slot;
        let lam = eig.eigenvalues[idx];
        if !(lam > 0.0) {
            return Err(Error::Discretization { quad_order });
        }
        rho[k] = lam;
        let y = eig.eigenvectors.column(idx);
        let d = &linv_t * y;
        let null_part = -(&elim * &d);
        for j in 0..m {
            coeffs[(j, k)] = null_part[j];
        }
        for j in 0..r {
            coeffs[(m + j, k)] = d[j];
        }
        // Orient every mode so that φ(1) > 0.
        basis.eval_into(1.0, 0, &mut row);
        let at_one: f64 = coeffs.column(k).iter().zip(&row).map(|(c, v)| c * v).sum();
        if at_one < 0.0 {
            coeffs.column_mut(k).neg_mut();
        }
    }
    let gamma = gamma_from_rho(&rho, m);
    Ok(EigenSystem {
        order: m,
        rho,
        gamma,
        weight: Some(weight),
        eval: Evaluator::Galerkin { basis, coeffs },
        provenance: Provenance::Galerkin,
    })
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = s;
            a[(j, i)] = s;
        }
    }
}

// ---------------------------------------------------------------------------
// Coefficients, norms, kernel
// ---------------------------------------------------------------------------

/// Fourier coefficients `g_ν = V(g, φ_ν)` by `quad_order`-point quadrature.
pub fn project<G: Fn(f64) -> f64>(es: &EigenSystem, g: G, quad_order: usize) -> Vec<f64> {
    let n = es.len();
    let rule = GaussLegendre::cached(quad_order);
    let mut out = vec![0.0; n];
    let mut row = vec![0.0; n];
    for (x, w) in rule.on_interval(0.0, 1.0) {
        let f = w * es.weight(x) * g(x);
        es.eval_all(x, &mut row);
        for (o, p) in out.iter_mut().zip(&row) {
            *o += f * p;
        }
    }
    out
}

/// `L²` (weighted) norm of `g − Σ c_ν φ_ν` by quadrature.
pub fn reconstruction_error<G: Fn(f64) -> f64>(
    es: &EigenSystem,
    g: G,
    coeffs: &[f64],
    quad_order: usize,
) -> f64 {
    let rule = GaussLegendre::cached(quad_order);
    rule.integrate(0.0, 1.0, |x| {
        let r = g(x) - es.evaluate(coeffs, x);
        es.weight(x) * r * r
    })
    .sqrt()
}

/// Which quadratic form [`sq_norm`] evaluates on a coefficient vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormKind {
    /// `Σ g_ν²`.
    V,
    /// `Σ g_ν² (1 + λ ρ_ν)`.
    Lambda(f64),
    /// `Σ g_ν² γ_ν`.
    J,
    /// `Σ ω_ν g_ν²` with `ω_ν = ν⁻¹ (log 2ν)^{−τ}`.
    Omega(f64),
}

/// `ω_ν = ν⁻¹ (log 2ν)^{−τ}` for one-based `nu`.
pub fn omega_weight(nu: usize, tau: f64) -> f64 {
    let v = nu as f64;
    1.0 / (v * (2.0 * v).ln().powf(tau))
}

/// The squared norm of `coeffs` under `kind`.
pub fn sq_norm(es: &EigenSystem, coeffs: &[f64], kind: NormKind) -> f64 {
    debug_assert!(coeffs.len() <= es.len());
    coeffs
        .iter()
        .enumerate()
        .map(|(k, &c)| {
            let w = match kind {
                NormKind::V => 1.0,
                NormKind::Lambda(lambda) => 1.0 + lambda * es.rho[k],
                NormKind::J => es.gamma[k],
                NormKind::Omega(tau) => omega_weight(k + 1, tau),
            };
            w * c * c
        })
        .sum()
}

/// Truncated reproducing kernel `Σ φ_ν(x) φ_ν(y) / (1 + λρ_ν)`.
pub fn reproducing_kernel(es: &EigenSystem, lambda: f64, x: f64, y: f64) -> f64 {
    let n = es.len();
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    es.eval_all(x, &mut px);
    es.eval_all(y, &mut py);
    (0..n)
        .map(|k| px[k] * py[k] / (1.0 + lambda * es.rho[k]))
        .sum()
}
