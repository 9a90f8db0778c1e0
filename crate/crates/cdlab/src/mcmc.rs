//! Unadjusted Langevin sampling, annealed along the noise schedule.
//!
//! Annealing runs from `t = T` (near-prior) down to `t = 0` (the clean
//! target itself), taking `k` Langevin steps per level against the noised
//! score at that level. The step size follows the remaining noise,
//! `0.1 * (1 - alpha_t)`, clamped away from zero so the last levels —
//! including the clean polish level — still mix.

use crate::diffusion::ScoreField;
use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::schedules::NoiseSchedule;
use rand::Rng;
use rand_distr::StandardNormal;

const MAX_COORD: f64 = 1e6;

/// One unadjusted Langevin step `x + eps * score(x) + sqrt(2 eps) xi`.
pub fn ula_step<R: Rng, F: Fn(Vec2) -> Vec2>(
    x: Vec2,
    score: F,
    eps: f64,
    rng: &mut R,
) -> Result<Vec2> {
    let s = score(x);
    let c = (2.0 * eps).sqrt();
    let out = [
        x[0] + eps * s[0] + c * rng.sample::<f64, _>(StandardNormal),
        x[1] + eps * s[1] + c * rng.sample::<f64, _>(StandardNormal),
    ];
    if out.iter().all(|v| v.is_finite() && v.abs() < MAX_COORD) {
        Ok(out)
    } else {
        Err(Error::Diverged(format!(
            "Langevin chain left the working box at {out:?}"
        )))
    }
}

/// Langevin step size at noise level `t`.
pub fn anneal_step_size(sched: &NoiseSchedule, t: usize) -> f64 {
    (0.1 * (1.0 - sched.alpha(t))).clamp(0.02, 0.1)
}

/// Draw `n` approximate samples from the distribution whose noised scores
/// `field` reports, by annealed Langevin from the standard-normal prior with
/// `k` steps per noise level. Chains that blow up are dropped; more than 1%
/// of them is treated as divergence of the whole run.
pub fn annealed_sample<R: Rng>(
    field: &ScoreField,
    sched: &NoiseSchedule,
    n: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Vec2>> {
    let t_steps = sched.t_steps();
    let mut out = Vec::with_capacity(n);
    let mut lost = 0usize;
    'chains: for _ in 0..n {
        let mut x: Vec2 = [rng.sample(StandardNormal), rng.sample(StandardNormal)];
        for t in (0..=t_steps).rev() {
            let eps = anneal_step_size(sched, t);
            // the clean level gets a longer polish: the clamped step size is
            // small there, and residual mean error from the ladder decays
            // only at rate eps/var per step
            let steps = if t == 0 { 10 * k } else { k };
            for _ in 0..steps {
                match ula_step(x, |y| field.eval(y, t, sched), eps, rng) {
                    Ok(next) => x = next,
                    Err(_) => {
                        lost += 1;
                        continue 'chains;
                    }
                }
            }
        }
        out.push(x);
    }
    if lost * 100 > n {
        return Err(Error::Diverged(format!(
            "{lost} of {n} Langevin chains diverged"
        )));
    }
    Ok(out)
}
