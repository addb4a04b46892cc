//! Natural exponential-family regression models.
//!
//! Every family is described by its cumulant function `A`: the conditional
//! density of `Y` given `X = x` under regression function `f` is proportional
//! to `exp(y f(x) - A(f(x)))`. `A'` is the conditional mean and `A''` the
//! conditional variance, so strict convexity of `A` is what makes the
//! penalized likelihood strictly concave.

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest natural parameter accepted by the exponential links when sampling.
pub const ETA_GUARD: f64 = 700.0;

/// Poisson means up to this value are sampled by sequential inversion.
const POISSON_INVERSION_MAX_MEAN: f64 = 30.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "family")]
pub enum ExpFamily {
    /// `Y = f(X) + N(0, 1)`, `A(z) = z^2 / 2`.
    Gaussian,
    /// Logistic regression, `A(z) = log(1 + e^z)`.
    Binary,
    /// `trials` Bernoulli draws per observation, `A(z) = a log(1 + e^z)`.
    Binomial { trials: u32 },
    /// `A(z) = e^z`.
    Poisson,
}

/// `A` and its first three derivatives at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkDerivatives {
    pub a: f64,
    pub adot: f64,
    pub addot: f64,
    pub adddot: f64,
}

/// Grid bounds on `A''` and `|A'''|` over `[-2C, 2C]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityBounds {
    pub addot_min: f64,
    pub addot_max: f64,
    pub adddot_abs_max: f64,
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl ExpFamily {
    pub fn name(&self) -> String {
        match self {
            ExpFamily::Gaussian => "gaussian".into(),
            ExpFamily::Binary => "binary".into(),
            ExpFamily::Binomial { trials } => format!("binomial({trials})"),
            ExpFamily::Poisson => "poisson".into(),
        }
    }

    /// Parses `gaussian`, `binary`, `poisson` or `binomial:<trials>`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        match s.as_str() {
            "gaussian" | "normal" => Ok(ExpFamily::Gaussian),
            "binary" | "logistic" | "bernoulli" => Ok(ExpFamily::Binary),
            "poisson" => Ok(ExpFamily::Poisson),
            other => {
                let trials = other
                    .strip_prefix("binomial:")
                    .and_then(|t| t.parse::<u32>().ok())
                    .filter(|&t| t > 0)
                    .ok_or_else(|| Error::domain(format!("unknown model `{other}`")))?;
                Ok(ExpFamily::Binomial { trials })
            }
        }
    }

    fn scale(&self) -> f64 {
        match self {
            ExpFamily::Binomial { trials } => f64::from(*trials),
            _ => 1.0,
        }
    }

    /// `A(z)`.
    pub fn cumulant(&self, z: f64) -> f64 {
        match self {
            ExpFamily::Gaussian => 0.5 * z * z,
            ExpFamily::Binary | ExpFamily::Binomial { .. } => self.scale() * softplus(z),
            ExpFamily::Poisson => z.exp(),
        }
    }

    /// `A'(z)`, the conditional mean.
    pub fn mean(&self, z: f64) -> f64 {
        match self {
            ExpFamily::Gaussian => z,
            ExpFamily::Binary | ExpFamily::Binomial { .. } => self.scale() * logistic(z),
            ExpFamily::Poisson => z.exp(),
        }
    }

    /// `A''(z)`, the conditional variance.
    pub fn variance(&self, z: f64) -> f64 {
        match self {
            ExpFamily::Gaussian => 1.0,
            ExpFamily::Binary | ExpFamily::Binomial { .. } => {
                let p = logistic(z);
                self.scale() * p * (1.0 - p)
            }
            ExpFamily::Poisson => z.exp(),
        }
    }

    fn third(&self, z: f64) -> f64 {
        match self {
            ExpFamily::Gaussian => 0.0,
            ExpFamily::Binary | ExpFamily::Binomial { .. } => {
                let p = logistic(z);
                self.scale() * p * (1.0 - p) * (1.0 - 2.0 * p)
            }
            ExpFamily::Poisson => z.exp(),
        }
    }

    /// `A`, `A'`, `A''`, `A'''` at `z`.
    pub fn link(&self, z: f64) -> Result<LinkDerivatives> {
        if !z.is_finite() {
            return Err(Error::Range {
                family: self.static_name(),
                eta: z,
            });
        }
        if matches!(self, ExpFamily::Poisson) && z >= f64::MAX.ln() {
            return Err(Error::Range {
                family: "poisson",
                eta: z,
            });
        }
        Ok(LinkDerivatives {
            a: self.cumulant(z),
            adot: self.mean(z),
            addot: self.variance(z),
            adddot: self.third(z),
        })
    }

    fn static_name(&self) -> &'static str {
        match self {
            ExpFamily::Gaussian => "gaussian",
            ExpFamily::Binary => "binary",
            ExpFamily::Binomial { .. } => "binomial",
            ExpFamily::Poisson => "poisson",
        }
    }

    /// Whether `y` lies in the response support.
    pub fn in_support(&self, y: f64) -> bool {
        let is_count = y.is_finite() && y >= 0.0 && y.fract() == 0.0;
        match self {
            ExpFamily::Gaussian => y.is_finite(),
            ExpFamily::Binary => y == 0.0 || y == 1.0,
            ExpFamily::Binomial { trials } => is_count && y <= f64::from(*trials),
            ExpFamily::Poisson => is_count,
        }
    }

    /// Draws one response with natural parameter `eta`.
    pub fn sample<R: Rng + ?Sized>(&self, eta: f64, rng: &mut R) -> Result<f64> {
        let guarded = !matches!(self, ExpFamily::Gaussian);
        if !eta.is_finite() || (guarded && eta.abs() > ETA_GUARD) {
            return Err(Error::Range {
                family: self.static_name(),
                eta,
            });
        }
        Ok(match self {
            ExpFamily::Gaussian => {
                let eps: f64 = StandardNormal.sample(rng);
                eta + eps
            }
            ExpFamily::Binary => bernoulli(logistic(eta), rng),
            ExpFamily::Binomial { trials } => {
                let p = logistic(eta);
                (0..*trials).map(|_| bernoulli(p, rng)).sum()
            }
            ExpFamily::Poisson => sample_poisson(eta.exp(), rng),
        })
    }

    /// Bounds on `A''` and `|A'''|` over `grid_size` equispaced points of `[-2C, 2C]`.
    pub fn regularity_bounds(&self, c: f64, grid_size: usize) -> Result<RegularityBounds> {
        if !(c > 0.0) || grid_size < 2 {
            return Err(Error::domain("regularity bounds need C > 0 and at least two grid points"));
        }
        let mut out = RegularityBounds {
            addot_min: f64::INFINITY,
            addot_max: f64::NEG_INFINITY,
            adddot_abs_max: 0.0,
        };
        for i in 0..grid_size {
            let z = -2.0 * c + 4.0 * c * i as f64 / (grid_size - 1) as f64;
            let d = self.link(z)?;
            out.addot_min = out.addot_min.min(d.addot);
            out.addot_max = out.addot_max.max(d.addot);
            out.adddot_abs_max = out.adddot_abs_max.max(d.adddot.abs());
        }
        Ok(out)
    }
}

fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> f64 {
    if rng.random::<f64>() < p {
        1.0
    } else {
        0.0
    }
}

fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> f64 {
    if mean <= POISSON_INVERSION_MAX_MEAN {
        let u: f64 = rng.random();
        let mut k = 0u32;
        let mut p = (-mean).exp();
        let mut cdf = p;
        // The tail mass beyond k = 200 is below 1e-80 for mean <= 30.
        while u > cdf && k < 200 {
            k += 1;
            p *= mean / f64::from(k);
            cdf += p;
        }
        f64::from(k)
    } else {
        Poisson::new(mean)
            .expect("mean is finite and positive")
            .sample(rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const ALL: [ExpFamily; 5] = [
        ExpFamily::Gaussian,
        ExpFamily::Binary,
        ExpFamily::Binomial { trials: 1 },
        ExpFamily::Binomial { trials: 5 },
        ExpFamily::Poisson,
    ];

    #[test]
    fn link_values_at_reference_points() {
        let g = ExpFamily::Gaussian.link(0.7).unwrap();
        assert!((g.a - 0.245).abs() < 1e-15);
        assert_eq!((g.adot, g.addot, g.adddot), (0.7, 1.0, 0.0));

        let b = ExpFamily::Binary.link(0.0).unwrap();
        assert!((b.a - 2f64.ln()).abs() < 1e-15);
        assert_eq!((b.adot, b.addot, b.adddot), (0.5, 0.25, 0.0));

        let e = std::f64::consts::E;
        let p = ExpFamily::Poisson.link(1.0).unwrap();
        for v in [p.a, p.adot, p.addot, p.adddot] {
            assert!((v - e).abs() < 1e-15);
        }
    }

    #[test]
    fn poisson_overflow_is_a_range_error() {
        assert!(matches!(
            ExpFamily::Poisson.link(710.0),
            Err(Error::Range { .. })
        ));
        assert!(ExpFamily::Poisson.link(700.0).is_ok());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert!(ExpFamily::Poisson.sample(701.0, &mut rng).is_err());
        assert!(ExpFamily::Binary.sample(-701.0, &mut rng).is_err());
    }

    #[test]
    fn derivatives_match_central_differences() {
        let eps = 1e-4;
        for fam in ALL {
            for i in 0..=100 {
                let z = -5.0 + 0.1 * i as f64;
                let d = fam.link(z).unwrap();
                let lo = fam.link(z - eps).unwrap();
                let hi = fam.link(z + eps).unwrap();
                assert!(d.addot > 0.0, "{fam:?} not strictly convex at {z}");
                // Truncation error of a central difference is eps^2/6 times
                // the next derivative; bound it by the local magnitude.
                let local = 1.0 + d.a.abs() + d.adot.abs() + d.addot.abs() + d.adddot.abs();
                let tol = 10.0 * eps * eps * local + 1e-9 * local;
                assert!(((hi.a - lo.a) / (2.0 * eps) - d.adot).abs() <= tol);
                assert!(((hi.adot - lo.adot) / (2.0 * eps) - d.addot).abs() <= tol);
                assert!(((hi.addot - lo.addot) / (2.0 * eps) - d.adddot).abs() <= tol);
            }
        }
    }

    #[test]
    fn regularity_bounds_bracket_known_constants() {
        let b = ExpFamily::Binary.regularity_bounds(3.0, 601).unwrap();
        assert_eq!(b.addot_max, 0.25);
        let c = 3.0f64;
        let lower = (2.0 * c).exp() / (1.0 + (2.0 * c).exp()).powi(2);
        assert!((b.addot_min - lower).abs() < 1e-15);
        assert!(b.adddot_abs_max <= 0.25);

        let p = ExpFamily::Poisson.regularity_bounds(1.0, 101).unwrap();
        assert!((p.addot_min - (-2f64).exp()).abs() < 1e-15);
        assert!((p.addot_max - 2f64.exp()).abs() < 1e-15);

        let g = ExpFamily::Gaussian.regularity_bounds(10.0, 11).unwrap();
        assert_eq!((g.addot_min, g.addot_max), (1.0, 1.0));
    }

    #[test]
    fn sample_means_match_link_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let draws = 100_000;
        for fam in ALL {
            for eta in [-1.0, 0.0, 1.0] {
                let d = fam.link(eta).unwrap();
                let mean: f64 = (0..draws)
                    .map(|_| fam.sample(eta, &mut rng).unwrap())
                    .sum::<f64>()
                    / draws as f64;
                let se = (d.addot / draws as f64).sqrt();
                assert!(
                    (mean - d.adot).abs() <= 4.0 * se,
                    "{fam:?} eta={eta}: {mean} vs {}",
                    d.adot
                );
            }
        }
    }

    #[test]
    fn gaussian_mean_at_eta_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let draws = 100_000;
        let mean: f64 = (0..draws)
            .map(|_| ExpFamily::Gaussian.sample(2.0, &mut rng).unwrap())
            .sum::<f64>()
            / draws as f64;
        assert!((mean - 2.0).abs() <= 3.0 * 3.0 / (draws as f64).sqrt());
    }

    #[test]
    fn large_poisson_mean_uses_rejection_sampler() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let eta = 4.0; // mean ~ 54.6
        let draws = 50_000;
        let mean: f64 = (0..draws)
            .map(|_| ExpFamily::Poisson.sample(eta, &mut rng).unwrap())
            .sum::<f64>()
            / draws as f64;
        let mu = eta.exp();
        assert!((mean - mu).abs() < 4.0 * (mu / draws as f64).sqrt());
    }

    #[test]
    fn single_trial_binomial_is_binary() {
        let mut a = ChaCha8Rng::seed_from_u64(5);
        let mut b = ChaCha8Rng::seed_from_u64(5);
        for i in 0..1000 {
            let eta = -2.0 + 0.004 * i as f64;
            let x = ExpFamily::Binary.sample(eta, &mut a).unwrap();
            let y = ExpFamily::Binomial { trials: 1 }.sample(eta, &mut b).unwrap();
            assert_eq!(x, y);
        }
        let bin = ExpFamily::Binomial { trials: 1 }.link(0.3).unwrap();
        assert_eq!(bin, ExpFamily::Binary.link(0.3).unwrap());
    }

    #[test]
    fn binary_at_zero_is_fair() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws = 100_000;
        let ones: f64 = (0..draws)
            .map(|_| ExpFamily::Binary.sample(0.0, &mut rng).unwrap())
            .sum();
        let p = ones / draws as f64;
        assert!((p - 0.5).abs() < 4.0 * (0.25 / draws as f64).sqrt());
    }

    #[test]
    fn parse_names() {
        assert_eq!(ExpFamily::parse("Gaussian").unwrap(), ExpFamily::Gaussian);
        assert_eq!(
            ExpFamily::parse("binomial:4").unwrap(),
            ExpFamily::Binomial { trials: 4 }
        );
        assert!(ExpFamily::parse("binomial:0").is_err());
        assert!(ExpFamily::parse("gamma").is_err());
    }

    #[test]
    fn support_checks() {
        assert!(ExpFamily::Binary.in_support(1.0));
        assert!(!ExpFamily::Binary.in_support(2.0));
        assert!(ExpFamily::Binomial { trials: 3 }.in_support(3.0));
        assert!(!ExpFamily::Poisson.in_support(1.5));
        assert!(!ExpFamily::Gaussian.in_support(f64::NAN));
    }
}
