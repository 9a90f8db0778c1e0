//! Analytic 2D targets: single Gaussians, Gaussian mixtures with exact
//! noised scores at every diffusion time, and reward functions.
//!
//! ```
//! use cdlab::dist::{Gaussian2, GaussianMixture};
//! use cdlab::linalg::Mat2;
//!
//! let std_normal = Gaussian2::new([0.0, 0.0], Mat2::identity()).unwrap();
//! // log density at the origin is -log(2 pi)
//! let ld = GaussianMixture::single(std_normal).log_density([0.0, 0.0]);
//! assert!((ld + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-12);
//! ```

use crate::error::{Error, Result};
use crate::linalg::{self, Mat2, Vec2};
use crate::schedules::NoiseSchedule;
use rand::Rng;
use rand_distr::StandardNormal;
use std::f64::consts::PI;

const MIN_EIGENVALUE: f64 = 1e-10;

/// A single 2D Gaussian with SPD covariance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gaussian2 {
    pub mean: Vec2,
    pub cov: Mat2,
}

impl Gaussian2 {
    pub fn new(mean: Vec2, cov: Mat2) -> Result<Self> {
        if !mean.iter().all(|m| m.is_finite()) {
            return Err(Error::Distribution("non-finite mean".into()));
        }
        if !cov.is_spd(MIN_EIGENVALUE) {
            return Err(Error::Distribution(format!(
                "covariance not SPD (eigenvalues {:?})",
                cov.eigenvalues()
            )));
        }
        Ok(Gaussian2 { mean, cov })
    }

    pub fn isotropic(mean: Vec2, variance: f64) -> Result<Self> {
        Gaussian2::new(mean, Mat2::isotropic(variance))
    }

    pub fn log_density(&self, x: Vec2) -> f64 {
        let d = linalg::sub(x, self.mean);
        let q = linalg::dot(d, self.cov.inverse().mul_vec(d));
        -(2.0 * PI).ln() - 0.5 * self.cov.det().ln() - 0.5 * q
    }

    /// `grad_x log N(x; mean, cov) = -cov^{-1} (x - mean)`.
    pub fn score(&self, x: Vec2) -> Vec2 {
        linalg::scale(self.cov.inverse().mul_vec(linalg::sub(x, self.mean)), -1.0)
    }

    /// The forward-noised component at signal level `alpha`:
    /// `N(sqrt(alpha) mean, alpha cov + (1 - alpha) I)`.
    pub fn noised(&self, alpha: f64) -> Gaussian2 {
        Gaussian2 {
            mean: linalg::scale(self.mean, alpha.sqrt()),
            cov: self.cov.scale(alpha).add(Mat2::isotropic(1.0 - alpha)),
        }
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec2 {
        let l = self.cov.cholesky();
        let z0: f64 = rng.sample(StandardNormal);
        let z1: f64 = rng.sample(StandardNormal);
        [
            self.mean[0] + l[0][0] * z0,
            self.mean[1] + l[1][0] * z0 + l[1][1] * z1,
        ]
    }

    /// Closed-form differential entropy `1 + log(2 pi) + 0.5 log det(cov)`.
    pub fn entropy(&self) -> f64 {
        1.0 + (2.0 * PI).ln() + 0.5 * self.cov.det().ln()
    }
}

/// Closed-form `KL(p || q)` between single Gaussians.
pub fn gaussian_kl(p: &Gaussian2, q: &Gaussian2) -> f64 {
    let iq = q.cov.inverse();
    let dm = linalg::sub(q.mean, p.mean);
    let tr = iq.mul(p.cov).trace();
    0.5 * ((q.cov.det() / p.cov.det()).ln() - 2.0 + tr + linalg::dot(dm, iq.mul_vec(dm)))
}

/// Reward-weighted single Gaussian under a linear reward `r(x) = a^T x`:
/// `q(x) e^{lambda a^T x} / Z = N(mean + lambda cov a, cov)`.
pub fn tilted_gaussian(q: &Gaussian2, lambda: f64, a: Vec2) -> Result<Gaussian2> {
    if lambda < 0.0 {
        return Err(Error::Distribution(format!("lambda = {lambda} < 0")));
    }
    Gaussian2::new(
        linalg::add(q.mean, linalg::scale(q.cov.mul_vec(a), lambda)),
        q.cov,
    )
}

/// Normalized product of Gaussians raised to simplex weights:
/// precision `sum_i lambda_i cov_i^{-1}`, mean the precision-weighted average.
pub fn weighted_gaussian_product(qs: &[Gaussian2], lambda: &[f64]) -> Result<Gaussian2> {
    if qs.is_empty() || qs.len() != lambda.len() {
        return Err(Error::Distribution(
            "need one weight per Gaussian".into(),
        ));
    }
    let sum: f64 = lambda.iter().sum();
    if lambda.iter().any(|&l| l < 0.0) || (sum - 1.0).abs() > 1e-10 {
        return Err(Error::Distribution(format!(
            "weights not on the simplex (sum = {sum})"
        )));
    }
    let mut prec = Mat2::new(0.0, 0.0, 0.0);
    let mut eta = [0.0, 0.0];
    for (g, &l) in qs.iter().zip(lambda) {
        let pi = g.cov.inverse().scale(l);
        prec = prec.add(pi);
        eta = linalg::add(eta, pi.mul_vec(g.mean));
    }
    let cov = prec.inverse();
    Gaussian2::new(cov.mul_vec(eta), cov)
}

/// A finite mixture of 2D Gaussians; the "pretrained model" at desk scale.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    weights: Vec<f64>,
    components: Vec<Gaussian2>,
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, components: Vec<Gaussian2>) -> Result<Self> {
        if weights.is_empty() || weights.len() != components.len() {
            return Err(Error::Distribution(
                "need one weight per component".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0) || (sum - 1.0).abs() > 1e-12 {
            return Err(Error::Distribution(format!(
                "mixture weights must be nonnegative and sum to 1 (sum = {sum})"
            )));
        }
        Ok(GaussianMixture {
            weights,
            components,
        })
    }

    pub fn single(g: Gaussian2) -> Self {
        GaussianMixture {
            weights: vec![1.0],
            components: vec![g],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[Gaussian2] {
        &self.components
    }

    pub fn as_single(&self) -> Option<&Gaussian2> {
        if self.components.len() == 1 {
            Some(&self.components[0])
        } else {
            None
        }
    }

    pub fn log_density(&self, x: Vec2) -> f64 {
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(&w, g)| {
                if w > 0.0 {
                    w.ln() + g.log_density(x)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        log_sum_exp(&logs)
    }

    pub fn density(&self, x: Vec2) -> f64 {
        self.log_density(x).exp()
    }

    /// Mixture after forward noising to signal level `alpha`.
    pub fn noised(&self, alpha: f64) -> GaussianMixture {
        GaussianMixture {
            weights: self.weights.clone(),
            components: self.components.iter().map(|g| g.noised(alpha)).collect(),
        }
    }

    /// Exact score of the clean mixture, `grad_x log q(x)`.
    pub fn score(&self, x: Vec2) -> Vec2 {
        self.mixture_score(x)
    }

    /// Exact score of the noised mixture at diffusion time `t`,
    /// `grad_x log q_t(x)` with components `N(sqrt(a_t) mu, a_t cov + (1-a_t) I)`.
    pub fn noised_score(&self, x: Vec2, t: usize, sched: &NoiseSchedule) -> Vec2 {
        if t == 0 {
            return self.mixture_score(x);
        }
        self.noised(sched.alpha(t)).mixture_score(x)
    }

    fn mixture_score(&self, x: Vec2) -> Vec2 {
        // responsibilities-weighted component scores, via log-space weights
        let logs: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.components)
            .map(|(&w, g)| {
                if w > 0.0 {
                    w.ln() + g.log_density(x)
                } else {
                    f64::NEG_INFINITY
                }
            })
            .collect();
        let lse = log_sum_exp(&logs);
        let mut s = [0.0, 0.0];
        for (lg, g) in logs.iter().zip(&self.components) {
            let r = (lg - lse).exp();
            if r > 0.0 {
                s = linalg::add(s, linalg::scale(g.score(x), r));
            }
        }
        s
    }

    /// `n` i.i.d. draws; deterministic given the RNG state.
    pub fn sample<R: Rng>(&self, n: usize, rng: &mut R) -> Vec<Vec2> {
        (0..n)
            .map(|_| {
                let u: f64 = rng.gen();
                let mut acc = 0.0;
                let mut idx = self.weights.len() - 1;
                for (k, &w) in self.weights.iter().enumerate() {
                    acc += w;
                    if u < acc {
                        idx = k;
                        break;
                    }
                }
                self.components[idx].sample(rng)
            })
            .collect()
    }

    /// Differential entropy: closed form for a single component
    /// (standard error 0), Monte Carlo with standard error otherwise.
    pub fn entropy<R: Rng>(&self, n: usize, rng: &mut R) -> (f64, f64) {
        if let Some(g) = self.as_single() {
            return (g.entropy(), 0.0);
        }
        let xs = self.sample(n, rng);
        let vals: Vec<f64> = xs.iter().map(|&x| -self.log_density(x)).collect();
        mean_stderr(&vals)
    }
}

pub(crate) fn log_sum_exp(logs: &[f64]) -> f64 {
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + logs.iter().map(|l| (l - m).exp()).sum::<f64>().ln()
}

pub(crate) fn mean_stderr(vals: &[f64]) -> (f64, f64) {
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    if vals.len() < 2 {
        return (mean, 0.0);
    }
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Reward functions, evaluable and differentiable at any point.
#[derive(Debug, Clone)]
pub enum Reward {
    /// `r(x) = a^T x`
    Linear { a: Vec2 },
    /// `r(x) = -scale * ||x - center||^2`
    Quadratic { center: Vec2, scale: f64 },
    /// Bilinear interpolation of tabulated values over a rectangle.
    Tabulated(crate::grid::GridField),
}

impl Reward {
    pub fn eval(&self, x: Vec2) -> f64 {
        match self {
            Reward::Linear { a } => linalg::dot(*a, x),
            Reward::Quadratic { center, scale } => -scale * linalg::norm_sq(linalg::sub(x, *center)),
            Reward::Tabulated(field) => field.interpolate(x),
        }
    }

    pub fn grad(&self, x: Vec2) -> Vec2 {
        match self {
            Reward::Linear { a } => *a,
            Reward::Quadratic { center, scale } => {
                linalg::scale(linalg::sub(x, *center), -2.0 * scale)
            }
            Reward::Tabulated(field) => field.interpolate_grad(x),
        }
    }
}
