//! Primal-dual reward alignment of a diffusion sampler against an analytic
//! pretrained model under expected-reward constraints.
//!
//! The Lagrangian is `KL(p || q) - sum_i lambda_i (E_p[r~_i] - b_i)` with
//! rewards normalized by pretrained statistics. The primal step descends a
//! surrogate gradient: the path-wise-KL term differentiated on frozen
//! trajectories, minus the log-derivative-trick reward gradient with a
//! batch-mean baseline. The dual step is projected subgradient ascent with
//! EMA-smoothed slacks, growing multipliers on violated constraints.

use crate::diffusion::{sample_trajectories, ScoreField, Trajectory};
use crate::dist::{mean_stderr, GaussianMixture, Reward};
use crate::divergence::{pathwise_kl, KlEstimate};
use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::schedules::{NoiseSchedule, VarianceSchedule};
use crate::score_model::{self, Grads, MlpScoreNet, TrainState};
use rand::Rng;

/// Per-reward normalization statistics from the pretrained model.
#[derive(Debug, Clone, Copy)]
pub struct RewardStats {
    pub mean: f64,
    pub std: f64,
}

/// The constrained alignment problem: pretrained model, rewards, thresholds
/// in normalized-reward units.
#[derive(Debug, Clone)]
pub struct AlignProblem {
    pub pretrained: GaussianMixture,
    pub rewards: Vec<Reward>,
    pub thresholds: Vec<f64>,
    pub stats: Option<Vec<RewardStats>>,
}

impl AlignProblem {
    pub fn new(
        pretrained: GaussianMixture,
        rewards: Vec<Reward>,
        thresholds: Vec<f64>,
    ) -> Result<Self> {
        if rewards.is_empty() || rewards.len() != thresholds.len() {
            return Err(Error::Config(
                "need one threshold per reward, at least one reward".into(),
            ));
        }
        if thresholds.iter().any(|b| !b.is_finite()) {
            return Err(Error::Config("non-finite threshold".into()));
        }
        Ok(AlignProblem {
            pretrained,
            rewards,
            thresholds,
            stats: None,
        })
    }

    /// Estimate per-reward mean/std under the pretrained model from
    /// `n_calib` samples; all later reward evaluations are normalized by
    /// these statistics.
    pub fn normalize_rewards<R: Rng>(&mut self, n_calib: usize, rng: &mut R) -> Result<()> {
        let xs = self.pretrained.sample(n_calib, rng);
        let mut stats = Vec::with_capacity(self.rewards.len());
        for r in &self.rewards {
            let vals: Vec<f64> = xs.iter().map(|&x| r.eval(x)).collect();
            let (mean, se) = mean_stderr(&vals);
            let std = se * (n_calib as f64).sqrt();
            if std < 1e-8 {
                return Err(Error::DegenerateReward { std });
            }
            stats.push(RewardStats { mean, std });
        }
        self.stats = Some(stats);
        Ok(())
    }

    /// Normalized reward `(r_i(x) - mu_i) / sigma_i`.
    pub fn normalized_reward(&self, i: usize, x: Vec2) -> f64 {
        let s = self.stats.as_ref().expect("rewards not normalized")[i];
        (self.rewards[i].eval(x) - s.mean) / s.std
    }

    /// Per-constraint slack `E[r~_i] - b_i` over a set of model samples.
    pub fn slack(&self, samples: &[Vec2]) -> Vec<f64> {
        (0..self.rewards.len())
            .map(|i| {
                let mean = samples
                    .iter()
                    .map(|&x| self.normalized_reward(i, x))
                    .sum::<f64>()
                    / samples.len() as f64;
                mean - self.thresholds[i]
            })
            .collect()
    }
}

/// Nonnegative multipliers with EMA-smoothed slacks.
#[derive(Debug, Clone)]
pub struct DualState {
    pub lambda: Vec<f64>,
    ema_slack: Vec<f64>,
    steps: u32,
    pub eta_d: f64,
    pub beta_ema: f64,
}

impl DualState {
    pub fn new(m: usize, eta_d: f64, beta_ema: f64) -> Self {
        DualState {
            lambda: vec![0.0; m],
            ema_slack: vec![0.0; m],
            steps: 0,
            eta_d,
            beta_ema,
        }
    }

    /// `lambda_i <- [lambda_i - eta_d * ema(slack_i)]_+`; the EMA is
    /// bias-corrected so the first step uses the raw slack.
    pub fn dual_step(&mut self, slack: &[f64]) {
        assert_eq!(slack.len(), self.lambda.len());
        self.steps += 1;
        let bc = 1.0 - self.beta_ema.powi(self.steps as i32);
        for i in 0..self.lambda.len() {
            self.ema_slack[i] =
                self.beta_ema * self.ema_slack[i] + (1.0 - self.beta_ema) * slack[i];
            let smoothed = self.ema_slack[i] / bc;
            // diminishing step: the primal tracks lambda with a delay, and a
            // fixed step makes the pair ring around the saddle point
            let eta = self.eta_d / (self.steps as f64).sqrt();
            self.lambda[i] = (self.lambda[i] - eta * smoothed).max(0.0);
        }
    }

    pub fn smoothed_slack(&self) -> Vec<f64> {
        if self.steps == 0 {
            return self.ema_slack.clone();
        }
        let bc = 1.0 - self.beta_ema.powi(self.steps as i32);
        self.ema_slack.iter().map(|s| s / bc).collect()
    }
}

/// Log-derivative-trick gradient of `sum_i lambda_i E[r~_i(x_0)]` with
/// respect to the network parameters, on trajectories sampled from the
/// network's own reverse process. A batch-mean baseline is subtracted.
/// Requires a stochastic sampler (`sigma_t > 0` everywhere).
pub fn reward_gradient(
    net: &MlpScoreNet,
    problem: &AlignProblem,
    lambda: &[f64],
    trajectories: &[Trajectory],
    sched: &NoiseSchedule,
    var: &VarianceSchedule,
) -> Result<Grads> {
    if !var.all_positive() {
        return Err(Error::DeterministicStep { t: 0 });
    }
    let mut grads = Grads::zeros_like(net);
    if trajectories.is_empty() {
        return Ok(grads);
    }
    let rewards: Vec<f64> = trajectories
        .iter()
        .map(|tr| {
            let x0 = tr.endpoint();
            lambda
                .iter()
                .enumerate()
                .map(|(i, &l)| l * problem.normalized_reward(i, x0))
                .sum::<f64>()
        })
        .collect();
    let baseline = rewards.iter().sum::<f64>() / rewards.len() as f64;
    let inv_n = 1.0 / trajectories.len() as f64;
    for (tr, &r) in trajectories.iter().zip(&rewards) {
        let adv = (r - baseline) * inv_n;
        if adv == 0.0 {
            continue;
        }
        for t in 1..=sched.t_steps() {
            // grad_theta log p(x_{t-1}|x_t) = (gamma_t eps_t / sigma_t)
            // contracted with ds/dtheta at (x_t, t)
            let c = sched.gamma(var, t)? / var.sigma(t) * adv;
            let eps = tr.noises[t - 1];
            net.backprop(tr.states[t], t, [c * eps[0], c * eps[1]], &mut grads);
        }
    }
    Ok(grads)
}

/// Gradient of the path-wise KL surrogate
/// `sum_t w_t E ||s_theta(x_t, t) - s_q(x_t, t)||^2` on frozen trajectories
/// (the trajectory distribution itself is not differentiated).
pub fn kl_gradient(
    net: &MlpScoreNet,
    pretrained: &ScoreField,
    trajectories: &[Trajectory],
    sched: &NoiseSchedule,
    var: &VarianceSchedule,
) -> Result<Grads> {
    let mut grads = Grads::zeros_like(net);
    if trajectories.is_empty() {
        return Ok(grads);
    }
    let inv_n = 1.0 / trajectories.len() as f64;
    for t in 1..=sched.t_steps() {
        let w = sched.pathwise_weight(var, t)?;
        for tr in trajectories {
            let x = tr.states[t];
            let s_theta = net.forward(x, t);
            let s_q = pretrained.eval(x, t, sched);
            let g = [
                2.0 * w * (s_theta[0] - s_q[0]) * inv_n,
                2.0 * w * (s_theta[1] - s_q[1]) * inv_n,
            ];
            net.backprop(x, t, g, &mut grads);
        }
    }
    Ok(grads)
}

/// Knobs for [`run_alignment`].
#[derive(Debug, Clone)]
pub struct AlignConfig {
    pub sched: NoiseSchedule,
    pub var: VarianceSchedule,
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

impl AlignConfig {
    pub fn new(sched: NoiseSchedule, var: VarianceSchedule) -> Self {
        AlignConfig {
            sched,
            var,
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

/// One row of the dual-ascent history.
#[derive(Debug, Clone)]
pub struct DualRecord {
    pub round: usize,
    pub lambda: Vec<f64>,
    pub slack: Vec<f64>,
}

/// Everything a finished alignment run reports.
#[derive(Debug)]
pub struct AlignOutcome {
    pub net: MlpScoreNet,
    pub history: Vec<DualRecord>,
    pub final_lambda: Vec<f64>,
    pub final_slack: Vec<f64>,
    /// `lambda_i * slack_i` per constraint; near zero at optimality.
    pub comp_slackness: Vec<f64>,
    pub final_kl: KlEstimate,
    pub final_samples: Vec<Vec2>,
}

/// Algorithm: warm-start the net on the pretrained score by DSM, then
/// alternate primal descent on the surrogate Lagrangian with projected dual
/// ascent on the EMA-smoothed slacks. Aborts with an infeasibility error
/// when a multiplier exceeds `lambda_max` while its constraint is still
/// violated.
pub fn run_alignment<R: Rng>(
    problem: &mut AlignProblem,
    cfg: &AlignConfig,
    rng: &mut R,
) -> Result<AlignOutcome> {
    if !cfg.var.all_positive() {
        return Err(Error::DeterministicStep { t: 0 });
    }
    if problem.stats.is_none() {
        problem.normalize_rewards(cfg.n_calib, rng)?;
    }
    let t_steps = cfg.sched.t_steps();
    let mut net = MlpScoreNet::new(&cfg.hidden, t_steps, rng);
    let pretrained_field = ScoreField::Analytic(problem.pretrained.clone());
    let target = problem.pretrained.clone();
    score_model::train(
        &mut net,
        |r: &mut R| target.sample(1, r)[0],
        cfg.warm_steps,
        cfg.warm_batch,
        cfg.lr,
        &cfg.sched,
        rng,
    )?;

    let m = problem.rewards.len();
    let mut dual = DualState::new(m, cfg.eta_d, cfg.beta_ema);
    let mut opt = TrainState::new(&net, cfg.lr);
    let mut history = Vec::with_capacity(cfg.dual_rounds);
    let mut last_slack = vec![0.0; m];
    for round in 0..cfg.dual_rounds {
        for _ in 0..cfg.primal_steps {
            let field = ScoreField::Learned(net.clone());
            let trajs = sample_trajectories(&field, &cfg.sched, &cfg.var, cfg.batch, rng)?;
            let mut grads = kl_gradient(&net, &pretrained_field, &trajs, &cfg.sched, &cfg.var)?;
            let rg = reward_gradient(&net, problem, &dual.lambda, &trajs, &cfg.sched, &cfg.var)?;
            grads.axpy(-1.0, &rg); // descend KL, ascend reward
            if !grads.norm().is_finite() {
                return Err(Error::Diverged(format!(
                    "non-finite primal gradient at round {round}"
                )));
            }
            opt.step(&mut net, &grads);
        }
        let field = ScoreField::Learned(net.clone());
        let trajs = sample_trajectories(&field, &cfg.sched, &cfg.var, cfg.n_eval, rng)?;
        let endpoints: Vec<Vec2> = trajs.iter().map(|tr| tr.endpoint()).collect();
        last_slack = problem.slack(&endpoints);
        dual.dual_step(&last_slack);
        history.push(DualRecord {
            round,
            lambda: dual.lambda.clone(),
            slack: last_slack.clone(),
        });
        for i in 0..m {
            if dual.lambda[i] > cfg.lambda_max && last_slack[i] < 0.0 {
                return Err(Error::Infeasible(format!(
                    "constraint {i}: lambda = {:.2} exceeds lambda_max = {} with slack {:.3} \
                     still negative",
                    dual.lambda[i], cfg.lambda_max, last_slack[i]
                )));
            }
        }
    }

    let field = ScoreField::Learned(net.clone());
    let trajs = sample_trajectories(&field, &cfg.sched, &cfg.var, cfg.n_eval, rng)?;
    let final_samples: Vec<Vec2> = trajs.iter().map(|tr| tr.endpoint()).collect();
    let final_slack = problem.slack(&final_samples);
    let comp_slackness: Vec<f64> = dual
        .lambda
        .iter()
        .zip(&final_slack)
        .map(|(l, s)| l * s)
        .collect();
    let final_kl = pathwise_kl(
        &final_samples,
        &field,
        &pretrained_field,
        &cfg.sched,
        &cfg.var,
        rng,
    )?;
    let _ = last_slack;
    Ok(AlignOutcome {
        net,
        history,
        final_lambda: dual.lambda,
        final_slack,
        comp_slackness,
        final_kl,
        final_samples,
    })
}
