//! The reverse-time sampler and the score fields that drive it.
//!
//! A [`ScoreField`] is anything that can report `s(x, t)`: the exact noised
//! score of an analytic mixture, a trained network, or a convex combination
//! of other fields (the surrogate score used for product composition).
//!
//! ```
//! use cdlab::diffusion::{sample_trajectories, ScoreField};
//! use cdlab::dist::{Gaussian2, GaussianMixture};
//! use cdlab::schedules::{NoiseSchedule, VarianceSchedule};
//! use rand::SeedableRng;
//!
//! let target = GaussianMixture::single(Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap());
//! let field = ScoreField::Analytic(target);
//! let sched = NoiseSchedule::geometric(50).unwrap();
//! let var = VarianceSchedule::ddim(&sched, 1.0).unwrap();
//! let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
//! let trajs = sample_trajectories(&field, &sched, &var, 4, &mut rng).unwrap();
//! assert_eq!(trajs.len(), 4);
//! assert_eq!(trajs[0].states.len(), 51); // x_T down to x_0
//! ```

use crate::dist::GaussianMixture;
use crate::error::{Error, Result};
use crate::linalg::{self, Vec2};
use crate::schedules::{NoiseSchedule, VarianceSchedule};
use crate::score_model::MlpScoreNet;
use rand::Rng;
use rand_distr::StandardNormal;

/// A score function `s(x, t)` over diffusion times `1..=T`.
#[derive(Debug, Clone)]
pub enum ScoreField {
    /// Exact noised score of an analytic Gaussian mixture.
    Analytic(GaussianMixture),
    /// A trained network.
    Learned(MlpScoreNet),
    /// Pointwise convex combination `sum_i w_i s_i(x, t)` with simplex
    /// weights; the surrogate score for weighted products.
    Combo(Vec<ScoreField>, Vec<f64>),
}

impl ScoreField {
    pub fn combo(fields: Vec<ScoreField>, weights: Vec<f64>) -> Result<ScoreField> {
        if fields.is_empty() || fields.len() != weights.len() {
            return Err(Error::Distribution(
                "combo needs one weight per field".into(),
            ));
        }
        let sum: f64 = weights.iter().sum();
        if weights.iter().any(|&w| w < 0.0 || !w.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Distribution(format!(
                "combo weights not on the simplex (sum = {sum})"
            )));
        }
        Ok(ScoreField::Combo(fields, weights))
    }

    pub fn eval(&self, x: Vec2, t: usize, sched: &NoiseSchedule) -> Vec2 {
        match self {
            ScoreField::Analytic(m) => m.noised_score(x, t, sched),
            ScoreField::Learned(net) => net.forward(x, t),
            ScoreField::Combo(fields, weights) => {
                let mut s = [0.0, 0.0];
                for (f, &w) in fields.iter().zip(weights) {
                    if w > 0.0 {
                        s = linalg::add(s, linalg::scale(f.eval(x, t, sched), w));
                    }
                }
                s
            }
        }
    }
}

/// Forward-noise a clean point to time `t`:
/// `x_t = sqrt(a_t) x_0 + sqrt(1 - a_t) eps`.
pub fn forward_noise<R: Rng>(x0: Vec2, t: usize, sched: &NoiseSchedule, rng: &mut R) -> Vec2 {
    let a = sched.alpha(t);
    let eps: Vec2 = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
    [
        a.sqrt() * x0[0] + (1.0 - a).sqrt() * eps[0],
        a.sqrt() * x0[1] + (1.0 - a).sqrt() * eps[1],
    ]
}

/// One reverse step with explicit noise:
/// `x_{t-1} = sqrt(a_{t-1}/a_t) x_t + gamma_t s(x_t, t) + sigma_t eps`.
pub fn ddim_step_with_noise(
    field: &ScoreField,
    x: Vec2,
    t: usize,
    sched: &NoiseSchedule,
    var: &VarianceSchedule,
    eps: Vec2,
) -> Result<Vec2> {
    let g = sched.gamma(var, t)?;
    let drift = (sched.alpha(t - 1) / sched.alpha(t)).sqrt();
    let s = field.eval(x, t, sched);
    let sig = var.sigma(t);
    Ok([
        drift * x[0] + g * s[0] + sig * eps[0],
        drift * x[1] + g * s[1] + sig * eps[1],
    ])
}

/// One reverse step with fresh Gaussian noise.
pub fn ddim_step<R: Rng>(
    field: &ScoreField,
    x: Vec2,
    t: usize,
    sched: &NoiseSchedule,
    var: &VarianceSchedule,
    rng: &mut R,
) -> Result<Vec2> {
    let eps: Vec2 = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
    ddim_step_with_noise(field, x, t, sched, var, eps)
}

/// A full reverse path. `states[t]` is `x_t` (so `states[0]` is the sample);
/// `noises[t - 1]` is the standard-normal draw injected at step `t`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub states: Vec<Vec2>,
    pub noises: Vec<Vec2>,
}

impl Trajectory {
    pub fn endpoint(&self) -> Vec2 {
        self.states[0]
    }
}

/// Run `n` reverse paths from the standard-normal prior at `t = T`.
pub fn sample_trajectories<R: Rng>(
    field: &ScoreField,
    sched: &NoiseSchedule,
    var: &VarianceSchedule,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Trajectory>> {
    let t_steps = sched.t_steps();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut states = vec![[0.0, 0.0]; t_steps + 1];
        let mut noises = vec![[0.0, 0.0]; t_steps];
        states[t_steps] = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        for t in (1..=t_steps).rev() {
            let eps: Vec2 = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
            noises[t - 1] = eps;
            states[t - 1] = ddim_step_with_noise(field, states[t], t, sched, var, eps)?;
            if !states[t - 1].iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite state at reverse step t = {t}"
                )));
            }
        }
        out.push(Trajectory { states, noises });
    }
    Ok(out)
}

/// Only the clean endpoints of `n` reverse paths.
pub fn endpoint_samples<R: Rng>(
    field: &ScoreField,
    sched: &NoiseSchedule,
    var: &VarianceSchedule,
    n: usize,
    rng: &mut R,
) -> Result<Vec<Vec2>> {
    let t_steps = sched.t_steps();
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let mut x: Vec2 = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        for t in (1..=t_steps).rev() {
            x = ddim_step(field, x, t, sched, var, rng)?;
            if !x.iter().all(|v| v.is_finite()) {
                return Err(Error::Diverged(format!(
                    "non-finite state at reverse step t = {t}"
                )));
            }
        }
        out.push(x);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Gaussian2;
    use crate::linalg::Mat2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample_moments(xs: &[Vec2]) -> (Vec2, Mat2) {
        let n = xs.len() as f64;
        let mean = [
            xs.iter().map(|x| x[0]).sum::<f64>() / n,
            xs.iter().map(|x| x[1]).sum::<f64>() / n,
        ];
        let mut cov = [0.0; 3];
        for x in xs {
            let d = linalg::sub(*x, mean);
            cov[0] += d[0] * d[0];
            cov[1] += d[0] * d[1];
            cov[2] += d[1] * d[1];
        }
        (mean, Mat2::new(cov[0] / n, cov[1] / n, cov[2] / n))
    }

    #[test]
    fn forward_noise_matches_analytic_moments() {
        let g = Gaussian2::new([1.5, -0.8], Mat2::new(0.7, 0.2, 1.1)).unwrap();
        let m = GaussianMixture::single(g);
        let sched = NoiseSchedule::geometric(50).unwrap();
        let t = 25;
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let xs: Vec<Vec2> = m
            .sample(100_000, &mut rng)
            .into_iter()
            .map(|x0| forward_noise(x0, t, &sched, &mut rng))
            .collect();
        let (mean, cov) = sample_moments(&xs);
        let expect = g.noised(sched.alpha(t));
        assert!((mean[0] - expect.mean[0]).abs() < 0.02);
        assert!((mean[1] - expect.mean[1]).abs() < 0.02);
        assert!((cov.a - expect.cov.a).abs() < 0.03);
        assert!((cov.b - expect.cov.b).abs() < 0.03);
        assert!((cov.c - expect.cov.c).abs() < 0.03);
    }

    #[test]
    fn ddim_with_exact_score_recovers_target() {
        let g = Gaussian2::new([1.0, -0.5], Mat2::new(0.8, 0.1, 1.2)).unwrap();
        let field = ScoreField::Analytic(GaussianMixture::single(g));
        // noise-geometric spacing: fine steps near alpha = 1, where the
        // coarse-step DDIM bias on the covariance is worst
        let sched = NoiseSchedule::noise_geometric(200, 1e-4, 1e-3).unwrap();
        let var = VarianceSchedule::ddim(&sched, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let xs = endpoint_samples(&field, &sched, &var, 20_000, &mut rng).unwrap();
        let (mean, cov) = sample_moments(&xs);
        assert!((mean[0] - 1.0).abs() < 0.05, "mean {mean:?}");
        assert!((mean[1] + 0.5).abs() < 0.05, "mean {mean:?}");
        assert!((cov.a - 0.8).abs() < 0.08, "cov {cov:?}");
        assert!((cov.b - 0.1).abs() < 0.08, "cov {cov:?}");
        assert!((cov.c - 1.2).abs() < 0.08, "cov {cov:?}");
    }

    #[test]
    fn deterministic_sampler_is_repeatable() {
        let g = Gaussian2::isotropic([0.3, -0.2], 0.6).unwrap();
        let field = ScoreField::Analytic(GaussianMixture::single(g));
        let sched = NoiseSchedule::geometric(50).unwrap();
        let var = VarianceSchedule::deterministic(&sched);
        let run = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            sample_trajectories(&field, &sched, &var, 3, &mut rng).unwrap()
        };
        let (a, b) = (run(7), run(7));
        for (ta, tb) in a.iter().zip(&b) {
            assert_eq!(ta.endpoint(), tb.endpoint());
            // injected noise is recorded but has no effect when sigma = 0
            assert!(ta.noises.iter().any(|n| n != &[0.0, 0.0]));
        }
    }

    #[test]
    fn deterministic_ddim_pushes_prior_onto_target_moments() {
        let g = Gaussian2::isotropic([1.2, 0.4], 0.5).unwrap();
        let field = ScoreField::Analytic(GaussianMixture::single(g));
        let sched = NoiseSchedule::geometric_to(200, 1e-3).unwrap();
        let var = VarianceSchedule::deterministic(&sched);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let xs = endpoint_samples(&field, &sched, &var, 10_000, &mut rng).unwrap();
        let (mean, cov) = sample_moments(&xs);
        assert!((mean[0] - 1.2).abs() < 0.05, "mean {mean:?}");
        assert!((mean[1] - 0.4).abs() < 0.05, "mean {mean:?}");
        assert!((cov.a - 0.5).abs() < 0.08, "cov {cov:?}");
        assert!((cov.c - 0.5).abs() < 0.08, "cov {cov:?}");
    }

    #[test]
    fn trajectory_shape_and_consistency() {
        let g = Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap();
        let field = ScoreField::Analytic(GaussianMixture::single(g));
        let sched = NoiseSchedule::geometric(30).unwrap();
        let var = VarianceSchedule::ddim(&sched, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let trajs = sample_trajectories(&field, &sched, &var, 2, &mut rng).unwrap();
        for tr in &trajs {
            assert_eq!(tr.states.len(), 31);
            assert_eq!(tr.noises.len(), 30);
            // replaying the recorded noise reproduces each state
            for t in (1..=30).rev() {
                let x = ddim_step_with_noise(
                    &field,
                    tr.states[t],
                    t,
                    &sched,
                    &var,
                    tr.noises[t - 1],
                )
                .unwrap();
                assert_eq!(x, tr.states[t - 1]);
            }
        }
    }

    #[test]
    fn combo_degenerate_weight_equals_selected_field() {
        let g1 = Gaussian2::isotropic([2.0, 0.0], 1.0).unwrap();
        let g2 = Gaussian2::isotropic([-2.0, 0.0], 0.5).unwrap();
        let f1 = ScoreField::Analytic(GaussianMixture::single(g1));
        let f2 = ScoreField::Analytic(GaussianMixture::single(g2));
        let combo = ScoreField::combo(vec![f1.clone(), f2], vec![1.0, 0.0]).unwrap();
        let sched = NoiseSchedule::geometric(50).unwrap();
        for t in [1usize, 20, 50] {
            let x = [0.7, -0.3];
            assert_eq!(combo.eval(x, t, &sched), f1.eval(x, t, &sched));
        }
    }

    #[test]
    fn combo_of_identical_fields_is_identity() {
        let g = Gaussian2::new([0.4, 0.9], Mat2::new(0.9, 0.2, 0.7)).unwrap();
        let f = ScoreField::Analytic(GaussianMixture::single(g));
        let combo =
            ScoreField::combo(vec![f.clone(), f.clone(), f.clone()], vec![0.2, 0.3, 0.5]).unwrap();
        let sched = NoiseSchedule::geometric(50).unwrap();
        for t in [1usize, 25, 50] {
            let x = [-1.1, 0.6];
            let a = combo.eval(x, t, &sched);
            let b = f.eval(x, t, &sched);
            assert!((a[0] - b[0]).abs() < 1e-12 && (a[1] - b[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn combo_rejects_bad_weights() {
        let g = Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap();
        let f = ScoreField::Analytic(GaussianMixture::single(g));
        assert!(ScoreField::combo(vec![f.clone()], vec![0.5]).is_err());
        assert!(ScoreField::combo(vec![f.clone(), f.clone()], vec![0.5]).is_err());
        assert!(ScoreField::combo(vec![f], vec![-1.0]).is_err());
    }
}
