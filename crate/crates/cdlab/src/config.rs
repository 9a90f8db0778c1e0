//! JSON experiment configuration: schema types, strict validation, and
//! construction of solver inputs.
//!
//! Top-level shape: `{"kind": "<experiment>", ...kind-specific fields}`.
//! Unknown keys anywhere are rejected.

use crate::align::AlignConfig;
use crate::compose::ComposeConfig;
use crate::dist::{Gaussian2, GaussianMixture, Reward};
use crate::error::{Error, Result};
use crate::linalg::Mat2;
use crate::schedules::{NoiseSchedule, VarianceSchedule};
use serde::Deserialize;

fn cfg_err<E: std::fmt::Display>(e: E) -> Error {
    Error::Config(e.to_string())
}

/// `{"T": int, "alpha": <name> | [..], "eta_ddim": float}` where `<name>` is
/// one of `"geometric"` (alpha_0 = 1 down to `alpha_final`),
/// `"geometric_between"` (`alpha_0` down to `alpha_final`; `alpha_0 < 1`
/// keeps every step stochastic), or `"noise_geometric"` (noise level
/// `1 - alpha` geometric from `noise_0`; finest spacing near `alpha = 1`).
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSpec {
    #[serde(rename = "T")]
    pub t: usize,
    pub alpha: AlphaSpec,
    pub eta_ddim: f64,
    #[serde(default = "default_alpha_0")]
    pub alpha_0: f64,
    #[serde(default = "default_alpha_final")]
    pub alpha_final: f64,
    #[serde(default = "default_noise_0")]
    pub noise_0: f64,
}

fn default_alpha_0() -> f64 {
    1.0
}

fn default_alpha_final() -> f64 {
    0.01
}

fn default_noise_0() -> f64 {
    1e-4
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum AlphaSpec {
    Named(String),
    Explicit(Vec<f64>),
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<(NoiseSchedule, VarianceSchedule)> {
        let noise = match &self.alpha {
            AlphaSpec::Named(name) if name == "geometric" => {
                NoiseSchedule::geometric_to(self.t, self.alpha_final)?
            }
            AlphaSpec::Named(name) if name == "geometric_between" => {
                NoiseSchedule::geometric_between(self.t, self.alpha_0, self.alpha_final)?
            }
            AlphaSpec::Named(name) if name == "noise_geometric" => {
                NoiseSchedule::noise_geometric(self.t, self.noise_0, self.alpha_final)?
            }
            AlphaSpec::Named(name) => {
                return Err(Error::Config(format!("unknown alpha schedule '{name}'")))
            }
            AlphaSpec::Explicit(alphas) => {
                if alphas.len() != self.t + 1 {
                    return Err(Error::Config(format!(
                        "explicit alpha needs T+1 = {} entries, got {}",
                        self.t + 1,
                        alphas.len()
                    )));
                }
                NoiseSchedule::new(alphas.clone())?
            }
        };
        let var = VarianceSchedule::ddim(&noise, self.eta_ddim)?;
        Ok((noise, var))
    }
}

/// `{"components": [{"w": .., "mean": [..], "cov": [[..],[..]]}]}`
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub components: Vec<ComponentSpec>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComponentSpec {
    pub w: f64,
    pub mean: [f64; 2],
    pub cov: [[f64; 2]; 2],
}

impl ModelSpec {
    pub fn build(&self) -> Result<GaussianMixture> {
        let weights = self.components.iter().map(|c| c.w).collect();
        let comps = self
            .components
            .iter()
            .map(|c| Gaussian2::new(c.mean, Mat2::from_rows(c.cov)))
            .collect::<Result<Vec<_>>>()?;
        GaussianMixture::new(weights, comps)
    }
}

/// `{"kind": "linear", "a": [..], "b": ..}` or
/// `{"kind": "quadratic", "center": [..], "scale": .., "b": ..}` — `b` is
/// the constraint threshold in normalized-reward units.
#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum RewardSpec {
    Linear { a: [f64; 2], b: f64 },
    Quadratic { center: [f64; 2], scale: f64, b: f64 },
}

impl RewardSpec {
    pub fn build(&self) -> (Reward, f64) {
        match self {
            RewardSpec::Linear { a, b } => (Reward::Linear { a: *a }, *b),
            RewardSpec::Quadratic { center, scale, b } => (
                Reward::Quadratic {
                    center: *center,
                    scale: *scale,
                },
                *b,
            ),
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AlignSolverSpec {
    pub hidden: Vec<usize>,
    pub warm_steps: usize,
    pub warm_batch: usize,
    pub dual_rounds: usize,
    pub primal_steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub eta_d: f64,
    pub beta_ema: f64,
    pub lambda_max: f64,
    pub n_calib: usize,
    pub n_eval: usize,
}

impl Default for AlignSolverSpec {
    fn default() -> Self {
        AlignSolverSpec {
            hidden: vec![64, 64],
            warm_steps: 800,
            warm_batch: 128,
            dual_rounds: 20,
            primal_steps: 40,
            batch: 64,
            lr: 1e-3,
            eta_d: 0.05,
            beta_ema: 0.9,
            lambda_max: 100.0,
            n_calib: 20_000,
            n_eval: 512,
        }
    }
}

impl AlignSolverSpec {
    pub fn build(&self, sched: NoiseSchedule, var: VarianceSchedule) -> AlignConfig {
        let mut cfg = AlignConfig::new(sched, var);
        cfg.hidden = self.hidden.clone();
        cfg.warm_steps = self.warm_steps;
        cfg.warm_batch = self.warm_batch;
        cfg.dual_rounds = self.dual_rounds;
        cfg.primal_steps = self.primal_steps;
        cfg.batch = self.batch;
        cfg.lr = self.lr;
        cfg.eta_d = self.eta_d;
        cfg.beta_ema = self.beta_ema;
        cfg.lambda_max = self.lambda_max;
        cfg.n_calib = self.n_calib;
        cfg.n_eval = self.n_eval;
        cfg
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ComposeSolverSpec {
    pub n_samples: usize,
    pub eta_d: f64,
    pub max_rounds: usize,
    pub tol: f64,
    pub tol_rounds: usize,
    pub hidden: Vec<usize>,
    pub dsm_steps: usize,
    pub dsm_batch: usize,
    pub lr: f64,
    pub mcmc_steps: usize,
    pub n_final: usize,
}

impl Default for ComposeSolverSpec {
    fn default() -> Self {
        ComposeSolverSpec {
            n_samples: 1024,
            eta_d: 0.05,
            max_rounds: 200,
            tol: 1e-3,
            tol_rounds: 5,
            hidden: vec![64, 64],
            dsm_steps: 200,
            dsm_batch: 128,
            lr: 1e-3,
            mcmc_steps: 20,
            n_final: 2048,
        }
    }
}

impl ComposeSolverSpec {
    pub fn build(&self, sched: NoiseSchedule, var: VarianceSchedule) -> ComposeConfig {
        let mut cfg = ComposeConfig::new(sched, var);
        cfg.n_samples = self.n_samples;
        cfg.eta_d = self.eta_d;
        cfg.max_rounds = self.max_rounds;
        cfg.tol = self.tol;
        cfg.tol_rounds = self.tol_rounds;
        cfg.hidden = self.hidden.clone();
        cfg.dsm_steps = self.dsm_steps;
        cfg.dsm_batch = self.dsm_batch;
        cfg.lr = self.lr;
        cfg.mcmc_steps = self.mcmc_steps;
        cfg.n_final = self.n_final;
        cfg
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlignSpec {
    #[serde(default)]
    pub seed: u64,
    pub schedule: ScheduleSpec,
    pub pretrained: ModelSpec,
    pub rewards: Vec<RewardSpec>,
    #[serde(default)]
    pub solver: AlignSolverSpec,
    #[serde(default)]
    pub plot: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ComposeSpec {
    #[serde(default)]
    pub seed: u64,
    pub schedule: ScheduleSpec,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub solver: ComposeSolverSpec,
    #[serde(default)]
    pub plot: bool,
}

fn default_t_sweep() -> Vec<usize> {
    vec![50, 200, 800]
}

fn default_kl_samples() -> usize {
    65_536
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlCheckSpec {
    #[serde(default)]
    pub seed: u64,
    pub p: ModelSpec,
    pub q: ModelSpec,
    #[serde(default = "default_t_sweep")]
    pub t_sweep: Vec<usize>,
    #[serde(default = "default_kl_samples")]
    pub n_samples: usize,
}

fn default_resolution() -> usize {
    256
}

fn default_pad() -> f64 {
    5.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleSpec {
    #[serde(default)]
    pub seed: u64,
    pub models: Vec<ModelSpec>,
    /// simplex lattice spacing; defaults to 0.02 for m=2, 0.05 otherwise
    #[serde(default)]
    pub step: Option<f64>,
    #[serde(default = "default_resolution")]
    pub resolution: usize,
    /// grid bounds cover all component means padded by this many standard
    /// deviations
    #[serde(default = "default_pad")]
    pub pad: f64,
}

/// A parsed, kind-dispatched experiment configuration.
#[derive(Debug, Clone)]
pub enum ExperimentConfig {
    Align(AlignSpec),
    ComposeAnd(ComposeSpec),
    ComposeOr(ComposeSpec),
    KlCheck(KlCheckSpec),
    Oracle(OracleSpec),
}

impl ExperimentConfig {
    pub fn kind(&self) -> &'static str {
        match self {
            ExperimentConfig::Align(_) => "align",
            ExperimentConfig::ComposeAnd(_) => "compose-and",
            ExperimentConfig::ComposeOr(_) => "compose-or",
            ExperimentConfig::KlCheck(_) => "kl-check",
            ExperimentConfig::Oracle(_) => "oracle",
        }
    }

    pub fn seed(&self) -> u64 {
        match self {
            ExperimentConfig::Align(s) => s.seed,
            ExperimentConfig::ComposeAnd(s) | ExperimentConfig::ComposeOr(s) => s.seed,
            ExperimentConfig::KlCheck(s) => s.seed,
            ExperimentConfig::Oracle(s) => s.seed,
        }
    }

    pub fn set_seed(&mut self, seed: u64) {
        match self {
            ExperimentConfig::Align(s) => s.seed = seed,
            ExperimentConfig::ComposeAnd(s) | ExperimentConfig::ComposeOr(s) => s.seed = seed,
            ExperimentConfig::KlCheck(s) => s.seed = seed,
            ExperimentConfig::Oracle(s) => s.seed = seed,
        }
    }
}

/// Parse and validate a config file's text. The `kind` field selects the
/// schema; all schemas reject unknown keys.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut value: serde_json::Value = serde_json::from_str(text).map_err(cfg_err)?;
    let obj = value
        .as_object_mut()
        .ok_or_else(|| Error::Config("config must be a JSON object".into()))?;
    let kind = obj
        .remove("kind")
        .and_then(|k| k.as_str().map(str::to_owned))
        .ok_or_else(|| Error::Config("missing string field 'kind'".into()))?;
    let cfg = match kind.as_str() {
        "align" => ExperimentConfig::Align(serde_json::from_value(value).map_err(cfg_err)?),
        "compose-and" => {
            ExperimentConfig::ComposeAnd(serde_json::from_value(value).map_err(cfg_err)?)
        }
        "compose-or" => {
            ExperimentConfig::ComposeOr(serde_json::from_value(value).map_err(cfg_err)?)
        }
        "kl-check" => ExperimentConfig::KlCheck(serde_json::from_value(value).map_err(cfg_err)?),
        "oracle" => ExperimentConfig::Oracle(serde_json::from_value(value).map_err(cfg_err)?),
        other => return Err(Error::Config(format!("unknown experiment kind '{other}'"))),
    };
    validate(&cfg)?;
    Ok(cfg)
}

fn validate(cfg: &ExperimentConfig) -> Result<()> {
    match cfg {
        ExperimentConfig::Align(s) => {
            let (sched, var) = s.schedule.build()?;
            if !var.all_positive() {
                return Err(Error::Config(
                    "alignment needs a stochastic sampler: every sigma_t must be positive \
                     (use an explicit alpha schedule with alpha_0 < 1 and eta_ddim = 1)"
                        .into(),
                ));
            }
            let _ = sched;
            s.pretrained.build()?;
            if s.rewards.is_empty() {
                return Err(Error::Config("align needs at least one reward".into()));
            }
        }
        ExperimentConfig::ComposeAnd(s) | ExperimentConfig::ComposeOr(s) => {
            s.schedule.build()?;
            if s.models.len() < 2 {
                return Err(Error::Config("composition needs at least 2 models".into()));
            }
            for m in &s.models {
                m.build()?;
            }
        }
        ExperimentConfig::KlCheck(s) => {
            s.p.build()?;
            s.q.build()?;
            if s.t_sweep.is_empty() || s.t_sweep.iter().any(|&t| t < 2) {
                return Err(Error::Config("t_sweep must list T values >= 2".into()));
            }
            if s.n_samples == 0 {
                return Err(Error::Config("n_samples must be positive".into()));
            }
        }
        ExperimentConfig::Oracle(s) => {
            if s.models.len() < 2 || s.models.len() > 4 {
                return Err(Error::Config("oracle sweep supports 2..=4 models".into()));
            }
            for m in &s.models {
                m.build()?;
            }
            if let Some(step) = s.step {
                if !(step > 0.0 && step < 1.0) {
                    return Err(Error::Config(format!("bad lattice step {step}")));
                }
            }
            if s.resolution < 16 {
                return Err(Error::Config("oracle resolution too small".into()));
            }
        }
    }
    Ok(())
}
