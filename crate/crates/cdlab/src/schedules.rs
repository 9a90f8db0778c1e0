//! Noise and variance schedules of the discrete diffusion process, together
//! with the per-step constants derived from them: the DDIM drift coefficient
//! `gamma_t`, the path-wise KL weight `gamma_t^2 / (2 sigma_t^2)` and the
//! point-wise KL weight `(alpha_{t-1} - alpha_t) / (2 alpha_t)`.
//!
//! Both schedule types are immutable after construction and cheap to clone.
//!
//! ```
//! use cdlab::schedules::{NoiseSchedule, VarianceSchedule};
//!
//! let noise = NoiseSchedule::geometric(100).unwrap();
//! let var = VarianceSchedule::ddim(&noise, 1.0).unwrap();
//! assert_eq!(noise.t_steps(), 100);
//! assert!(noise.alpha(0) == 1.0 && noise.alpha(100) > 0.0);
//! // gamma_t is finite at every step
//! for t in 1..=100 {
//!     assert!(noise.gamma(&var, t).unwrap().is_finite());
//! }
//! ```

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Cumulative signal-retention coefficients `alpha_0..alpha_T`,
/// strictly decreasing, all in (0, 1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    alphas: Vec<f64>,
}

impl NoiseSchedule {
    pub fn new(alphas: Vec<f64>) -> Result<Self> {
        if alphas.len() < 2 {
            return Err(Error::Schedule("need at least alpha_0 and alpha_1".into()));
        }
        for (t, &a) in alphas.iter().enumerate() {
            if !(a > 0.0 && a <= 1.0) {
                return Err(Error::Schedule(format!(
                    "alpha_{t} = {a} outside (0, 1]"
                )));
            }
            if t > 0 && alphas[t - 1] <= a {
                return Err(Error::Schedule(format!(
                    "alphas not strictly decreasing at t = {t}"
                )));
            }
        }
        Ok(NoiseSchedule { alphas })
    }

    /// Geometric decay from exactly 1 at t = 0 down to 0.01 at t = T.
    pub fn geometric(t_steps: usize) -> Result<Self> {
        Self::geometric_to(t_steps, 0.01)
    }

    /// Geometric decay from exactly 1 at t = 0 down to `alpha_final`.
    pub fn geometric_to(t_steps: usize, alpha_final: f64) -> Result<Self> {
        Self::geometric_between(t_steps, 1.0, alpha_final)
    }

    /// Geometric decay between explicit endpoints. `alpha_0 < 1` keeps every
    /// DDIM step stochastic under the eta = 1 variance rule, which path-wise
    /// KL estimation requires.
    pub fn geometric_between(t_steps: usize, alpha_0: f64, alpha_final: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::Schedule("T must be >= 1".into()));
        }
        if !(alpha_final > 0.0 && alpha_final < alpha_0 && alpha_0 <= 1.0) {
            return Err(Error::Schedule(format!(
                "need 0 < alpha_final < alpha_0 <= 1, got {alpha_final}, {alpha_0}"
            )));
        }
        let ratio = (alpha_final / alpha_0).powf(1.0 / t_steps as f64);
        let mut alphas = Vec::with_capacity(t_steps + 1);
        let mut a = alpha_0;
        alphas.push(a);
        for _ in 0..t_steps {
            a *= ratio;
            alphas.push(a);
        }
        // pin the endpoint exactly
        alphas[t_steps] = alpha_final;
        NoiseSchedule::new(alphas)
    }

    /// Geometric growth of the noise level `1 - alpha_t`, from `noise_0` at
    /// t = 0 up to `1 - alpha_final` at t = T. Spacing is fine near
    /// `alpha = 1`, where per-step discretization error is largest; this is
    /// the preferred schedule for quantitative KL and sampler-consistency
    /// checks. `noise_0 > 0` keeps every step stochastic under eta = 1.
    pub fn noise_geometric(t_steps: usize, noise_0: f64, alpha_final: f64) -> Result<Self> {
        if t_steps == 0 {
            return Err(Error::Schedule("T must be >= 1".into()));
        }
        if !(noise_0 > 0.0 && alpha_final > 0.0 && noise_0 < 1.0 - alpha_final) {
            return Err(Error::Schedule(format!(
                "need 0 < noise_0 < 1 - alpha_final, got {noise_0}, {alpha_final}"
            )));
        }
        let ratio = ((1.0 - alpha_final) / noise_0).powf(1.0 / t_steps as f64);
        let mut alphas = Vec::with_capacity(t_steps + 1);
        let mut noise = noise_0;
        alphas.push(1.0 - noise);
        for _ in 0..t_steps {
            noise *= ratio;
            alphas.push(1.0 - noise);
        }
        alphas[t_steps] = alpha_final;
        NoiseSchedule::new(alphas)
    }

    /// Linear decay from 1 to `alpha_final`.
    pub fn linear_to(t_steps: usize, alpha_final: f64) -> Result<Self> {
        let alphas = (0..=t_steps)
            .map(|t| 1.0 + (alpha_final - 1.0) * t as f64 / t_steps as f64)
            .collect();
        NoiseSchedule::new(alphas)
    }

    pub fn t_steps(&self) -> usize {
        self.alphas.len() - 1
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t]
    }

    pub fn alphas(&self) -> &[f64] {
        &self.alphas
    }

    fn check_t(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.t_steps() {
            Err(Error::TimeIndex {
                t,
                max: self.t_steps(),
            })
        } else {
            Ok(())
        }
    }

    /// DDIM drift coefficient
    /// `gamma_t = sqrt(alpha_{t-1}/alpha_t) (1 - alpha_t) - sqrt((1 - alpha_{t-1} - sigma_t^2)(1 - alpha_t))`.
    pub fn gamma(&self, var: &VarianceSchedule, t: usize) -> Result<f64> {
        self.check_t(t)?;
        var.check_len(self)?;
        let (ap, a) = (self.alphas[t - 1], self.alphas[t]);
        let s2 = var.sigma(t) * var.sigma(t);
        let rad = 1.0 - ap - s2;
        if rad < -1e-12 {
            return Err(Error::Schedule(format!(
                "sigma_{t}^2 = {s2} exceeds 1 - alpha_{} = {}",
                t - 1,
                1.0 - ap
            )));
        }
        Ok((ap / a).sqrt() * (1.0 - a) - (rad.max(0.0) * (1.0 - a)).sqrt())
    }

    /// Path-wise KL weight `gamma_t^2 / (2 sigma_t^2)` (Lemma-1 style).
    /// Errors when `sigma_t = 0`: the step is deterministic and the
    /// path-wise KL is undefined; use the point-wise weight instead.
    pub fn pathwise_weight(&self, var: &VarianceSchedule, t: usize) -> Result<f64> {
        let g = self.gamma(var, t)?;
        let s = var.sigma(t);
        if s <= 0.0 {
            return Err(Error::DeterministicStep { t });
        }
        Ok(g * g / (2.0 * s * s))
    }

    /// Point-wise KL weight `(alpha_{t-1} - alpha_t) / (2 alpha_t)`, the
    /// forward-difference discretization of the continuous density
    /// `d alpha / (2 alpha)` that reproduces closed-form endpoint KLs.
    pub fn pointwise_weight(&self, t: usize) -> Result<f64> {
        self.check_t(t)?;
        Ok((self.alphas[t - 1] - self.alphas[t]) / (2.0 * self.alphas[t]))
    }
}

/// Per-step reverse-process standard deviations `sigma_1..sigma_T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSchedule {
    sigmas: Vec<f64>,
}

impl VarianceSchedule {
    /// `sigmas[i]` holds `sigma_{i+1}`; validated against the noise schedule
    /// so that the radical in `gamma_t` stays real.
    pub fn new(sigmas: Vec<f64>, noise: &NoiseSchedule) -> Result<Self> {
        if sigmas.len() != noise.t_steps() {
            return Err(Error::Schedule(format!(
                "variance schedule length {} != T = {}",
                sigmas.len(),
                noise.t_steps()
            )));
        }
        for (i, &s) in sigmas.iter().enumerate() {
            let t = i + 1;
            if !(s >= 0.0 && s.is_finite()) {
                return Err(Error::Schedule(format!("sigma_{t} = {s} invalid")));
            }
            if s * s > 1.0 - noise.alpha(t - 1) + 1e-12 {
                return Err(Error::Schedule(format!(
                    "sigma_{t}^2 = {} exceeds 1 - alpha_{} = {}",
                    s * s,
                    t - 1,
                    1.0 - noise.alpha(t - 1)
                )));
            }
        }
        Ok(VarianceSchedule { sigmas })
    }

    /// The DDIM family:
    /// `sigma_t = eta * sqrt((1 - alpha_{t-1})/(1 - alpha_t)) * sqrt(1 - alpha_t/alpha_{t-1})`.
    /// `eta = 0` is deterministic, `eta = 1` fully stochastic.
    pub fn ddim(noise: &NoiseSchedule, eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Schedule(format!("eta_ddim = {eta} outside [0, 1]")));
        }
        let sigmas = (1..=noise.t_steps())
            .map(|t| {
                let (ap, a) = (noise.alpha(t - 1), noise.alpha(t));
                eta * ((1.0 - ap) / (1.0 - a)).sqrt() * (1.0 - a / ap).sqrt()
            })
            .collect();
        VarianceSchedule::new(sigmas, noise)
    }

    /// All-zero (deterministic) schedule.
    pub fn deterministic(noise: &NoiseSchedule) -> Self {
        VarianceSchedule {
            sigmas: vec![0.0; noise.t_steps()],
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    pub fn t_steps(&self) -> usize {
        self.sigmas.len()
    }

    pub fn all_positive(&self) -> bool {
        self.sigmas.iter().all(|&s| s > 0.0)
    }

    fn check_len(&self, noise: &NoiseSchedule) -> Result<()> {
        if self.sigmas.len() != noise.t_steps() {
            Err(Error::Schedule(format!(
                "schedules disagree on T: {} vs {}",
                self.sigmas.len(),
                noise.t_steps()
            )))
        } else {
            Ok(())
        }
    }
}
