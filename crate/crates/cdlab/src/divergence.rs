//! Monte-Carlo KL estimators between diffusion models.
//!
//! Two score-based estimators are provided. Both integrate the squared score
//! gap over diffusion time against a schedule-derived weight, differing only
//! in the weight:
//!
//! * path-wise: weight `gamma_t^2 / (2 sigma_t^2)`, defined only when every
//!   reverse step is stochastic;
//! * point-wise: weight `(alpha_{t-1} - alpha_t) / (2 alpha_t)`, defined for
//!   any schedule including fully deterministic samplers.
//!
//! Expectations are over the forward-noised marginals of `p`, realized by
//! noising clean samples of `p` with fresh noise at every time step.

use crate::diffusion::{forward_noise, ScoreField};
use crate::dist::{mean_stderr, GaussianMixture};
use crate::error::{Error, Result};
use crate::linalg::{self, Vec2};
use crate::schedules::{NoiseSchedule, VarianceSchedule};
use rand::Rng;
use serde::Serialize;

/// A divergence estimate with its Monte-Carlo uncertainty.
#[derive(Debug, Clone, Serialize)]
pub struct KlEstimate {
    pub value: f64,
    pub standard_error: f64,
    pub n_samples: usize,
    pub t_steps: usize,
}

/// Path-wise KL estimate between the models with scores `s_p` and `s_q`,
/// `sum_t gamma_t^2/(2 sigma_t^2) E_{x_t ~ p_t} ||s_p - s_q||^2`.
/// `p0_samples` are clean draws from `p`. Errors if any step has
/// `sigma_t = 0`.
pub fn pathwise_kl<R: Rng>(
    p0_samples: &[Vec2],
    s_p: &ScoreField,
    s_q: &ScoreField,
    sched: &NoiseSchedule,
    var: &VarianceSchedule,
    rng: &mut R,
) -> Result<KlEstimate> {
    let t_steps = sched.t_steps();
    let weights: Vec<f64> = (1..=t_steps)
        .map(|t| sched.pathwise_weight(var, t))
        .collect::<Result<_>>()?;
    weighted_score_gap(p0_samples, s_p, &[s_q], sched, &weights, rng)
        .map(|mut v| v.pop().unwrap())
}

/// Point-wise KL estimate,
/// `sum_t (alpha_{t-1} - alpha_t)/(2 alpha_t) E_{x_t ~ p_t} ||s_p - s_q||^2`.
pub fn pointwise_kl<R: Rng>(
    p0_samples: &[Vec2],
    s_p: &ScoreField,
    s_q: &ScoreField,
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<KlEstimate> {
    pointwise_kl_many(p0_samples, s_p, &[s_q], sched, rng).map(|mut v| v.pop().unwrap())
}

/// Point-wise KL from one source against several targets, reusing the same
/// noised sample set for every target. With identical targets the estimates
/// are bit-identical, which keeps symmetric dual dynamics exactly symmetric.
pub fn pointwise_kl_many<R: Rng>(
    p0_samples: &[Vec2],
    s_p: &ScoreField,
    targets: &[&ScoreField],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<KlEstimate>> {
    let t_steps = sched.t_steps();
    let weights: Vec<f64> = (1..=t_steps)
        .map(|t| sched.pointwise_weight(t))
        .collect::<Result<_>>()?;
    weighted_score_gap(p0_samples, s_p, targets, sched, &weights, rng)
}

fn weighted_score_gap<R: Rng>(
    p0_samples: &[Vec2],
    s_p: &ScoreField,
    targets: &[&ScoreField],
    sched: &NoiseSchedule,
    weights: &[f64],
    rng: &mut R,
) -> Result<Vec<KlEstimate>> {
    if p0_samples.is_empty() {
        return Err(Error::Distribution("no samples for KL estimate".into()));
    }
    let t_steps = sched.t_steps();
    // per-sample totals, per target, for the standard error
    let mut totals = vec![vec![0.0f64; p0_samples.len()]; targets.len()];
    for (i, &x0) in p0_samples.iter().enumerate() {
        for t in 1..=t_steps {
            let xt = forward_noise(x0, t, sched, rng);
            let sp = s_p.eval(xt, t, sched);
            for (k, s_q) in targets.iter().enumerate() {
                let gap = linalg::norm_sq(linalg::sub(sp, s_q.eval(xt, t, sched)));
                totals[k][i] += weights[t - 1] * gap;
            }
        }
    }
    Ok(totals
        .iter()
        .map(|per_sample| {
            let (value, standard_error) = mean_stderr(per_sample);
            KlEstimate {
                value,
                standard_error,
                n_samples: p0_samples.len(),
                t_steps,
            }
        })
        .collect())
}

/// Direct Monte-Carlo forward KL between analytic mixtures,
/// `E_p[log p - log q]`.
pub fn forward_kl<R: Rng>(
    p: &GaussianMixture,
    q: &GaussianMixture,
    n: usize,
    rng: &mut R,
) -> KlEstimate {
    let xs = p.sample(n, rng);
    let vals: Vec<f64> = xs
        .iter()
        .map(|&x| p.log_density(x) - q.log_density(x))
        .collect();
    let (value, standard_error) = mean_stderr(&vals);
    KlEstimate {
        value,
        standard_error,
        n_samples: n,
        t_steps: 0,
    }
}

/// Differential entropy of a mixture with its standard error (exact for a
/// single component).
pub fn mixture_entropy<R: Rng>(m: &GaussianMixture, n: usize, rng: &mut R) -> (f64, f64) {
    m.entropy(n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::{gaussian_kl, Gaussian2};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn field(g: Gaussian2) -> ScoreField {
        ScoreField::Analytic(GaussianMixture::single(g))
    }

    #[test]
    fn pointwise_identical_fields_is_exactly_zero() {
        let g = Gaussian2::new([0.7, -0.2], crate::linalg::Mat2::new(1.1, 0.2, 0.8)).unwrap();
        let f = field(g);
        let sched = NoiseSchedule::geometric(100).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs = GaussianMixture::single(g).sample(64, &mut rng);
        let est = pointwise_kl(&xs, &f, &f, &sched, &mut rng).unwrap();
        assert_eq!(est.value, 0.0);
        assert_eq!(est.standard_error, 0.0);
    }

    #[test]
    fn pointwise_matches_closed_form_gaussian_kl() {
        let p = Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap();
        let q = Gaussian2::isotropic([1.0, 0.0], 1.0).unwrap();
        let exact = gaussian_kl(&p, &q); // 0.5
        let sched = NoiseSchedule::geometric_to(800, 1e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = GaussianMixture::single(p).sample(1500, &mut rng);
        let est = pointwise_kl(&xs, &field(p), &field(q), &sched, &mut rng).unwrap();
        let tol = 0.05 * exact + 3.0 * est.standard_error;
        assert!(
            (est.value - exact).abs() < tol,
            "estimate {} +- {} vs exact {exact}",
            est.value,
            est.standard_error
        );
    }

    #[test]
    fn pointwise_matches_closed_form_anisotropic() {
        let p = Gaussian2::new([0.3, -0.4], crate::linalg::Mat2::new(0.9, 0.1, 1.3)).unwrap();
        let q = Gaussian2::new([-0.5, 0.2], crate::linalg::Mat2::new(1.2, -0.2, 0.7)).unwrap();
        let exact = gaussian_kl(&p, &q);
        let sched = NoiseSchedule::geometric_to(800, 1e-4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = GaussianMixture::single(p).sample(1500, &mut rng);
        let est = pointwise_kl(&xs, &field(p), &field(q), &sched, &mut rng).unwrap();
        let tol = 0.06 * exact + 3.0 * est.standard_error;
        assert!(
            (est.value - exact).abs() < tol,
            "estimate {} +- {} vs exact {exact}",
            est.value,
            est.standard_error
        );
    }

    #[test]
    fn pathwise_identical_fields_is_exactly_zero() {
        let g = Gaussian2::isotropic([0.5, 0.5], 0.9).unwrap();
        let f = field(g);
        let sched = NoiseSchedule::geometric_between(100, 0.999, 0.01).unwrap();
        let var = VarianceSchedule::ddim(&sched, 1.0).unwrap();
        assert!(var.all_positive());
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let xs = GaussianMixture::single(g).sample(32, &mut rng);
        let est = pathwise_kl(&xs, &f, &f, &sched, &var, &mut rng).unwrap();
        assert_eq!(est.value, 0.0);
    }

    #[test]
    fn pathwise_close_to_closed_form() {
        let p = Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap();
        let q = Gaussian2::isotropic([0.8, -0.6], 1.0).unwrap();
        let exact = gaussian_kl(&p, &q); // 0.5
        // geometric-in-alpha spacing takes one coarse step across most of the
        // low-noise region and badly over-counts the path-wise sum there;
        // noise-geometric spacing keeps beta_t << 1 - alpha_t throughout
        let sched = NoiseSchedule::noise_geometric(800, 1e-4, 1e-4).unwrap();
        let var = VarianceSchedule::ddim(&sched, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs = GaussianMixture::single(p).sample(1000, &mut rng);
        let est = pathwise_kl(&xs, &field(p), &field(q), &sched, &var, &mut rng).unwrap();
        let tol = 0.10 * exact + 3.0 * est.standard_error;
        assert!(
            (est.value - exact).abs() < tol,
            "estimate {} +- {} vs exact {exact}",
            est.value,
            est.standard_error
        );
    }

    #[test]
    fn pathwise_requires_stochastic_steps() {
        let p = Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap();
        let sched = NoiseSchedule::geometric(50).unwrap(); // alpha_0 = 1 -> sigma_1 = 0
        let var = VarianceSchedule::ddim(&sched, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let xs = GaussianMixture::single(p).sample(8, &mut rng);
        let err = pathwise_kl(&xs, &field(p), &field(p), &sched, &var, &mut rng);
        assert!(matches!(err, Err(Error::DeterministicStep { t: 1 })));
    }

    #[test]
    fn standard_error_shrinks_with_sample_size() {
        let p = Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap();
        let q = Gaussian2::isotropic([1.0, 1.0], 0.6).unwrap();
        let sched = NoiseSchedule::geometric_to(100, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let small = GaussianMixture::single(p).sample(100, &mut rng);
        let big = GaussianMixture::single(p).sample(4000, &mut rng);
        let e_small = pointwise_kl(&small, &field(p), &field(q), &sched, &mut rng).unwrap();
        let e_big = pointwise_kl(&big, &field(p), &field(q), &sched, &mut rng).unwrap();
        assert!(e_big.standard_error < e_small.standard_error);
        assert!(e_big.standard_error > 0.0);
    }

    #[test]
    fn many_targets_share_noise_draws() {
        let p = Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap();
        let q = Gaussian2::isotropic([2.0, 0.0], 1.0).unwrap();
        let fp = field(p);
        let fq1 = field(q);
        let fq2 = field(q);
        let sched = NoiseSchedule::geometric_to(100, 1e-3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let xs = GaussianMixture::single(p).sample(64, &mut rng);
        let ests = pointwise_kl_many(&xs, &fp, &[&fq1, &fq2], &sched, &mut rng).unwrap();
        assert_eq!(ests[0].value, ests[1].value);
        assert_eq!(ests[0].standard_error, ests[1].standard_error);
    }

    #[test]
    fn forward_kl_matches_closed_form() {
        let p = Gaussian2::new([0.2, -0.1], crate::linalg::Mat2::new(1.3, 0.3, 0.9)).unwrap();
        let q = Gaussian2::new([-0.7, 0.5], crate::linalg::Mat2::new(0.8, -0.1, 1.1)).unwrap();
        let exact = gaussian_kl(&p, &q);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let est = forward_kl(
            &GaussianMixture::single(p),
            &GaussianMixture::single(q),
            200_000,
            &mut rng,
        );
        assert!(
            (est.value - exact).abs() < 4.0 * est.standard_error,
            "estimate {} +- {} vs exact {exact}",
            est.value,
            est.standard_error
        );
    }
}
