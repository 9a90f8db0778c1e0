//! Product (AND) and mixture (OR) composition of analytic diffusion models
//! by projected dual ascent on the composition weights.
//!
//! AND: the composed model is `prod_i q_i^{lambda_i}` (normalized). Each
//! dual round estimates the point-wise KL from the current composed model to
//! every input model and moves weight toward the models that are furthest
//! away, equalizing the KLs at the optimum. The dual-only variant samples
//! the composed model through the surrogate score `sum_i lambda_i s_i`; the
//! primal-dual variant trains a score network on annealed-MCMC samples of
//! the product each round.
//!
//! OR: the composed model is the mixture `sum_i lambda_i q_i`. The dual
//! constraint value for model `i` is the cross-entropy
//! `-E_{q_i}[log q_mix]`; at a disjoint-support fixed point the weights are
//! the entropy softmax.

use crate::diffusion::{endpoint_samples, ScoreField};
use crate::dist::{mean_stderr, GaussianMixture};
use crate::divergence::{pointwise_kl_many, KlEstimate};
use crate::error::{Error, Result};
use crate::linalg::Vec2;
use crate::mcmc::annealed_sample;
use crate::schedules::{NoiseSchedule, VarianceSchedule};
use crate::score_model::{self, MlpScoreNet};
use rand::Rng;

/// Euclidean projection onto the probability simplex
/// (sort-and-threshold algorithm). Idempotent; uniform shifts of the input
/// project to the same point.
pub fn simplex_project(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty() && v.iter().all(|x| x.is_finite()));
    let mut u: Vec<f64> = v.to_vec();
    u.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let mut css = 0.0;
    let mut rho = 0;
    let mut tau = 0.0;
    for (k, &uk) in u.iter().enumerate() {
        css += uk;
        let t = (css - 1.0) / (k + 1) as f64;
        if uk - t > 0.0 {
            rho = k + 1;
            tau = t;
        }
    }
    let _ = rho;
    v.iter().map(|&x| (x - tau).max(0.0)).collect()
}

/// Shared knobs for the composition solvers.
#[derive(Debug, Clone)]
pub struct ComposeConfig {
    pub sched: NoiseSchedule,
    pub var: VarianceSchedule,
    /// sample budget per dual round
    pub n_samples: usize,
    pub eta_d: f64,
    pub max_rounds: usize,
    /// stop when the infinity-norm lambda change stays below `tol` for
    /// `tol_rounds` consecutive rounds
    pub tol: f64,
    pub tol_rounds: usize,
    // primal-dual (Algorithm 2) extras
    pub hidden: Vec<usize>,
    pub dsm_steps: usize,
    pub dsm_batch: usize,
    pub lr: f64,
    /// Langevin steps per annealing level
    pub mcmc_steps: usize,
    /// endpoint samples emitted at the final weights
    pub n_final: usize,
}

impl ComposeConfig {
    pub fn new(sched: NoiseSchedule, var: VarianceSchedule) -> Self {
        ComposeConfig {
            sched,
            var,
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

/// Result of a composition run.
#[derive(Debug)]
pub struct ComposeOutcome {
    pub lambda: Vec<f64>,
    /// lambda after each dual round
    pub history: Vec<Vec<f64>>,
    /// per-round, per-model constraint estimates
    pub kl_report: Vec<Vec<KlEstimate>>,
    pub samples: Vec<Vec2>,
    pub rounds: usize,
    pub converged: bool,
    pub net: Option<MlpScoreNet>,
    /// OR only: Monte-Carlo mixture entropy (value, stderr) at the final
    /// weights
    pub mixture_entropy: Option<(f64, f64)>,
}

fn check_models(models: &[GaussianMixture]) -> Result<()> {
    if models.len() < 2 {
        return Err(Error::Config("composition needs at least 2 models".into()));
    }
    Ok(())
}

fn check_finite(kls: &[KlEstimate]) -> Result<()> {
    for (i, k) in kls.iter().enumerate() {
        if !k.value.is_finite() {
            return Err(Error::Infeasible(format!(
                "KL to model {i} is not finite; supports may not intersect"
            )));
        }
    }
    Ok(())
}

/// Dual-only product composition (Algorithm-3 style): per round, sample the
/// surrogate-score model by DDIM, estimate the point-wise KL to each input,
/// update `lambda_i += eta_d * KL_i` and project onto the simplex.
pub fn dual_only_and<R: Rng>(
    models: &[GaussianMixture],
    cfg: &ComposeConfig,
    rng: &mut R,
) -> Result<ComposeOutcome> {
    check_models(models)?;
    let m = models.len();
    let fields: Vec<ScoreField> = models
        .iter()
        .map(|q| ScoreField::Analytic(q.clone()))
        .collect();
    let target_refs: Vec<&ScoreField> = fields.iter().collect();
    let mut lambda = vec![1.0 / m as f64; m];
    let mut history = Vec::new();
    let mut kl_report = Vec::new();
    let mut calm = 0usize;
    let mut rounds = 0usize;
    let mut converged = false;
    for _ in 0..cfg.max_rounds {
        rounds += 1;
        let surrogate = ScoreField::combo(fields.clone(), lambda.clone())?;
        let xs = endpoint_samples(&surrogate, &cfg.sched, &cfg.var, cfg.n_samples, rng)?;
        let kls = pointwise_kl_many(&xs, &surrogate, &target_refs, &cfg.sched, rng)?;
        check_finite(&kls)?;
        let tilde: Vec<f64> = lambda
            .iter()
            .zip(&kls)
            .map(|(l, k)| l + cfg.eta_d * k.value)
            .collect();
        let next = simplex_project(&tilde);
        let delta = lambda
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        lambda = next;
        history.push(lambda.clone());
        kl_report.push(kls);
        if delta < cfg.tol {
            calm += 1;
            if calm >= cfg.tol_rounds {
                converged = true;
                break;
            }
        } else {
            calm = 0;
        }
    }
    let surrogate = ScoreField::combo(fields, lambda.clone())?;
    let samples = endpoint_samples(&surrogate, &cfg.sched, &cfg.var, cfg.n_final, rng)?;
    Ok(ComposeOutcome {
        lambda,
        history,
        kl_report,
        samples,
        rounds,
        converged,
        net: None,
        mixture_entropy: None,
    })
}

/// Point-wise KLs from the current composed model (scores `s_p`, clean
/// samples `xs`) to each input model.
pub fn and_kl_report<R: Rng>(
    models: &[GaussianMixture],
    s_p: &ScoreField,
    xs: &[Vec2],
    sched: &NoiseSchedule,
    rng: &mut R,
) -> Result<Vec<KlEstimate>> {
    let fields: Vec<ScoreField> = models
        .iter()
        .map(|q| ScoreField::Analytic(q.clone()))
        .collect();
    let refs: Vec<&ScoreField> = fields.iter().collect();
    let kls = pointwise_kl_many(xs, s_p, &refs, sched, rng)?;
    check_finite(&kls)?;
    Ok(kls)
}

/// Primal-dual product composition (Algorithm-2 style): per round, draw
/// annealed-Langevin samples of the current product, fit the score network
/// to them by DSM (warm-started across rounds), then dual-update the weights
/// from the learned model's point-wise KLs.
pub fn primal_dual_and<R: Rng>(
    models: &[GaussianMixture],
    cfg: &ComposeConfig,
    rng: &mut R,
) -> Result<ComposeOutcome> {
    check_models(models)?;
    let m = models.len();
    let fields: Vec<ScoreField> = models
        .iter()
        .map(|q| ScoreField::Analytic(q.clone()))
        .collect();
    let target_refs: Vec<&ScoreField> = fields.iter().collect();
    let mut lambda = vec![1.0 / m as f64; m];
    let mut net = MlpScoreNet::new(&cfg.hidden, cfg.sched.t_steps(), rng);
    let mut history = Vec::new();
    let mut kl_report = Vec::new();
    let mut calm = 0usize;
    let mut rounds = 0usize;
    let mut converged = false;
    for _ in 0..cfg.max_rounds {
        rounds += 1;
        // primal: fit the net to annealed samples of the lambda-product
        let surrogate = ScoreField::combo(fields.clone(), lambda.clone())?;
        let data = annealed_sample(&surrogate, &cfg.sched, cfg.n_samples, cfg.mcmc_steps, rng)?;
        let mut cursor = 0usize;
        score_model::train(
            &mut net,
            |r: &mut R| {
                // cycle through the MCMC pool in random order
                let i = r.gen_range(0..data.len());
                cursor = cursor.wrapping_add(1);
                data[i]
            },
            cfg.dsm_steps,
            cfg.dsm_batch,
            cfg.lr,
            &cfg.sched,
            rng,
        )?;
        // dual: point-wise KLs of the learned model to each input
        let learned = ScoreField::Learned(net.clone());
        let kls = pointwise_kl_many(&data, &learned, &target_refs, &cfg.sched, rng)?;
        check_finite(&kls)?;
        let tilde: Vec<f64> = lambda
            .iter()
            .zip(&kls)
            .map(|(l, k)| l + cfg.eta_d * k.value)
            .collect();
        let next = simplex_project(&tilde);
        let delta = lambda
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        lambda = next;
        history.push(lambda.clone());
        kl_report.push(kls);
        if delta < cfg.tol {
            calm += 1;
            if calm >= cfg.tol_rounds {
                converged = true;
                break;
            }
        } else {
            calm = 0;
        }
    }
    let learned = ScoreField::Learned(net.clone());
    let samples = endpoint_samples(&learned, &cfg.sched, &cfg.var, cfg.n_final, rng)?;
    Ok(ComposeOutcome {
        lambda,
        history,
        kl_report,
        samples,
        rounds,
        converged,
        net: Some(net),
        mixture_entropy: None,
    })
}

/// Mixture (OR) composition: dual ascent on the weights of
/// `q_mix = sum_i lambda_i q_i` with constraint values the cross-entropies
/// `-E_{q_i}[log q_mix]`. The dual optimum maximizes mixture entropy; with
/// disjoint supports the fixed point is the entropy softmax.
pub fn mixture_or<R: Rng>(
    models: &[GaussianMixture],
    cfg: &ComposeConfig,
    rng: &mut R,
) -> Result<ComposeOutcome> {
    check_models(models)?;
    let m = models.len();
    let mut lambda = vec![1.0 / m as f64; m];
    let mut history = Vec::new();
    let mut kl_report = Vec::new();
    let mut calm = 0usize;
    let mut rounds = 0usize;
    let mut converged = false;
    // one fixed sample pool per model keeps the per-round noise correlated,
    // which lets the iteration settle to the tolerance
    let pools: Vec<Vec<Vec2>> = models
        .iter()
        .map(|q| q.sample(cfg.n_samples, rng))
        .collect();
    for _ in 0..cfg.max_rounds {
        rounds += 1;
        let mix = mixture_of(models, &lambda)?;
        let mut kls = Vec::with_capacity(m);
        for pool in &pools {
            let vals: Vec<f64> = pool
                .iter()
                .map(|&x| {
                    let ld = mix.log_density(x);
                    if ld == f64::NEG_INFINITY {
                        f64::INFINITY
                    } else {
                        -ld
                    }
                })
                .collect();
            if vals.iter().any(|v| !v.is_finite()) {
                return Err(Error::SupportViolation {
                    x: f64::NAN,
                    y: f64::NAN,
                });
            }
            let (value, standard_error) = mean_stderr(&vals);
            kls.push(KlEstimate {
                value,
                standard_error,
                n_samples: pool.len(),
                t_steps: 0,
            });
        }
        let tilde: Vec<f64> = lambda
            .iter()
            .zip(&kls)
            .map(|(l, k)| l + cfg.eta_d * k.value)
            .collect();
        let next = simplex_project(&tilde);
        let delta = lambda
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        lambda = next;
        history.push(lambda.clone());
        kl_report.push(kls);
        if delta < cfg.tol {
            calm += 1;
            if calm >= cfg.tol_rounds {
                converged = true;
                break;
            }
        } else {
            calm = 0;
        }
    }
    let mix = mixture_of(models, &lambda)?;
    let samples = mix.sample(cfg.n_final, rng);
    let entropy = mix.entropy(100_000, rng);
    Ok(ComposeOutcome {
        lambda,
        history,
        kl_report,
        samples,
        rounds,
        converged,
        net: None,
        mixture_entropy: Some(entropy),
    })
}

/// The lambda-weighted mixture of the input models as one flat mixture.
pub fn mixture_of(models: &[GaussianMixture], lambda: &[f64]) -> Result<GaussianMixture> {
    let mut weights = Vec::new();
    let mut comps = Vec::new();
    for (q, &l) in models.iter().zip(lambda) {
        for (w, c) in q.weights().iter().zip(q.components()) {
            weights.push(l * w);
            comps.push(*c);
        }
    }
    // guard against accumulated rounding on the simplex invariant
    let s: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= s;
    }
    GaussianMixture::new(weights, comps)
}

/// Closed-form disjoint-support optimum `lambda_i = e^{H_i} / sum_j e^{H_j}`
/// (entropies Monte-Carlo for multi-component models, exact otherwise).
pub fn entropy_softmax_lambda<R: Rng>(
    models: &[GaussianMixture],
    n: usize,
    rng: &mut R,
) -> Vec<f64> {
    let hs: Vec<f64> = models.iter().map(|q| q.entropy(n, rng).0).collect();
    let hmax = hs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let es: Vec<f64> = hs.iter().map(|h| (h - hmax).exp()).collect();
    let s: f64 = es.iter().sum();
    es.iter().map(|e| e / s).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dist::Gaussian2;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    // independent projection oracle: bisection on the water level
    fn project_bisect(v: &[f64]) -> Vec<f64> {
        let mut lo = v.iter().cloned().fold(f64::INFINITY, f64::min) - 1.0;
        let mut hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let s: f64 = v.iter().map(|&x| (x - mid).max(0.0)).sum();
            if s > 1.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let tau = 0.5 * (lo + hi);
        v.iter().map(|&x| (x - tau).max(0.0)).collect()
    }

    #[test]
    fn simplex_project_cases() {
        let p = simplex_project(&[0.5, 0.5]);
        assert!((p[0] - 0.5).abs() < 1e-15 && (p[1] - 0.5).abs() < 1e-15);
        let p = simplex_project(&[2.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1].abs() < 1e-15);
    }

    #[test]
    fn simplex_project_matches_bisection_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..1000 {
            let v: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..3.0)).collect();
            let a = simplex_project(&v);
            let b = project_bisect(&v);
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12, "{a:?} vs {b:?} for {v:?}");
            }
            // idempotence
            let aa = simplex_project(&a);
            for (x, y) in a.iter().zip(&aa) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn simplex_project_absorbs_uniform_shifts() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let v: Vec<f64> = (0..4).map(|_| rng.gen_range(-2.0..2.0)).collect();
            let c: f64 = rng.gen_range(-5.0..5.0);
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = simplex_project(&v);
            let b = simplex_project(&shifted);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-9, "{a:?} vs {b:?}");
            }
        }
    }

    fn small_cfg(t_steps: usize) -> ComposeConfig {
        let sched = NoiseSchedule::geometric(t_steps).unwrap();
        let var = VarianceSchedule::ddim(&sched, 1.0).unwrap();
        let mut cfg = ComposeConfig::new(sched, var);
        cfg.n_samples = 512;
        cfg.max_rounds = 120;
        cfg.n_final = 512;
        cfg
    }

    #[test]
    fn dual_only_mirrored_pair_is_half_half() {
        let a = GaussianMixture::single(Gaussian2::isotropic([-1.0, 0.0], 0.6).unwrap());
        let b = GaussianMixture::single(Gaussian2::isotropic([1.0, 0.0], 0.6).unwrap());
        let cfg = small_cfg(80);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let out = dual_only_and(&[a, b], &cfg, &mut rng).unwrap();
        assert!((out.lambda[0] - 0.5).abs() < 0.02, "lambda {:?}", out.lambda);
        assert!((out.lambda.iter().sum::<f64>() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn dual_only_identical_models_stay_uniform() {
        let g = GaussianMixture::single(Gaussian2::isotropic([0.4, -0.6], 0.8).unwrap());
        let models = vec![g.clone(), g.clone(), g];
        let mut cfg = small_cfg(60);
        cfg.n_samples = 128;
        cfg.max_rounds = 30;
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let out = dual_only_and(&models, &cfg, &mut rng).unwrap();
        for hist in &out.history {
            for l in hist {
                assert!((l - 1.0 / 3.0).abs() < 1e-6, "lambda drifted: {hist:?}");
            }
        }
    }

    #[test]
    fn dual_only_permutation_equivariance_direction() {
        // asymmetric pair: the tighter model needs less weight than the wide
        // one? directionally, weight goes to the model the product is far
        // from; check permuting inputs permutes outputs
        let a = GaussianMixture::single(Gaussian2::isotropic([-1.5, 0.0], 0.4).unwrap());
        let b = GaussianMixture::single(Gaussian2::isotropic([1.5, 0.0], 1.2).unwrap());
        let mut cfg = small_cfg(80);
        cfg.n_samples = 1024;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out1 = dual_only_and(&[a.clone(), b.clone()], &cfg, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let out2 = dual_only_and(&[b, a], &cfg, &mut rng).unwrap();
        assert!((out1.lambda[0] - out2.lambda[1]).abs() < 0.03,
            "{:?} vs {:?}", out1.lambda, out2.lambda);
    }

    #[test]
    fn primal_dual_identical_pair_recovers_input() {
        let g = Gaussian2::isotropic([0.8, -0.4], 0.6).unwrap();
        let models = vec![
            GaussianMixture::single(g),
            GaussianMixture::single(g),
        ];
        let mut cfg = small_cfg(50);
        cfg.n_samples = 768;
        cfg.max_rounds = 4;
        cfg.dsm_steps = 800;
        cfg.mcmc_steps = 25;
        cfg.n_final = 2000;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let out = primal_dual_and(&models, &cfg, &mut rng).unwrap();
        let n = out.samples.len() as f64;
        let mean = [
            out.samples.iter().map(|x| x[0]).sum::<f64>() / n,
            out.samples.iter().map(|x| x[1]).sum::<f64>() / n,
        ];
        assert!((mean[0] - 0.8).abs() < 0.07, "mean {mean:?}");
        assert!((mean[1] + 0.4).abs() < 0.07, "mean {mean:?}");
        assert!((out.lambda[0] - 0.5).abs() < 0.05, "lambda {:?}", out.lambda);
    }

    #[test]
    fn primal_dual_frozen_lambda_matches_product_oracle() {
        let a = Gaussian2::isotropic([-1.0, 0.0], 1.0).unwrap();
        let b = Gaussian2::isotropic([1.0, 0.0], 1.0).unwrap();
        let oracle = crate::dist::weighted_gaussian_product(&[a, b], &[0.5, 0.5]).unwrap();
        let models = vec![GaussianMixture::single(a), GaussianMixture::single(b)];
        let mut cfg = small_cfg(50);
        cfg.eta_d = 0.0; // dual frozen at uniform
        cfg.n_samples = 512;
        cfg.max_rounds = 3;
        cfg.dsm_steps = 500;
        cfg.mcmc_steps = 15;
        cfg.n_final = 3000;
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let out = primal_dual_and(&models, &cfg, &mut rng).unwrap();
        assert_eq!(out.lambda, vec![0.5, 0.5]);
        let n = out.samples.len() as f64;
        let mean = [
            out.samples.iter().map(|x| x[0]).sum::<f64>() / n,
            out.samples.iter().map(|x| x[1]).sum::<f64>() / n,
        ];
        let var: f64 = out
            .samples
            .iter()
            .map(|x| (x[0] - mean[0]).powi(2))
            .sum::<f64>()
            / n;
        assert!((mean[0] - oracle.mean[0]).abs() < 0.05, "mean {mean:?}");
        assert!((mean[1] - oracle.mean[1]).abs() < 0.05, "mean {mean:?}");
        assert!((var - oracle.cov.a).abs() / oracle.cov.a < 0.25, "var {var}");
    }

    #[test]
    fn mixture_or_identical_models_uniform() {
        let g = GaussianMixture::single(Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap());
        let mut cfg = small_cfg(10);
        cfg.n_samples = 2048;
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let out = mixture_or(&[g.clone(), g], &cfg, &mut rng).unwrap();
        // each model gets its own Monte-Carlo pool, so symmetry holds only up
        // to sampling noise in the constraint values
        assert!((out.lambda[0] - 0.5).abs() < 0.02, "lambda {:?}", out.lambda);
    }

    #[test]
    fn mixture_or_disjoint_matches_entropy_softmax() {
        // far-separated, different scales: closed-form softmax target
        let a = GaussianMixture::single(Gaussian2::isotropic([-12.0, 0.0], 1.0).unwrap());
        let b = GaussianMixture::single(Gaussian2::isotropic([12.0, 0.0], 0.25).unwrap());
        let mut cfg = small_cfg(10);
        cfg.n_samples = 4096;
        cfg.max_rounds = 200;
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let out = mixture_or(&[a.clone(), b.clone()], &cfg, &mut rng).unwrap();
        let mut rng2 = ChaCha8Rng::seed_from_u64(9);
        let target = entropy_softmax_lambda(&[a, b], 1000, &mut rng2);
        // H difference = ln 4 -> softmax (0.8, 0.2)
        assert!((target[0] - 0.8).abs() < 1e-9, "target {target:?}");
        assert!(
            (out.lambda[0] - target[0]).abs() < 0.03,
            "lambda {:?} vs {target:?}",
            out.lambda
        );
    }

    #[test]
    fn mixture_or_entropy_dominates_uniform() {
        let a = GaussianMixture::new(
            vec![0.5, 0.5],
            vec![
                Gaussian2::isotropic([-2.5, 0.0], 0.5).unwrap(),
                Gaussian2::isotropic([2.5, 0.0], 0.5).unwrap(),
            ],
        )
        .unwrap();
        let b = GaussianMixture::single(Gaussian2::isotropic([0.0, 2.0], 0.5).unwrap());
        let mut cfg = small_cfg(10);
        cfg.n_samples = 4096;
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let out = mixture_or(&[a.clone(), b.clone()], &cfg, &mut rng).unwrap();
        // bimodal model gets more weight
        assert!(out.lambda[0] > out.lambda[1], "lambda {:?}", out.lambda);
        let (h_star, se_star) = out.mixture_entropy.unwrap();
        let uniform = mixture_of(&[a, b], &[0.5, 0.5]).unwrap();
        let (h_unif, se_unif) = uniform.entropy(100_000, &mut rng);
        let se = (se_star * se_star + se_unif * se_unif).sqrt();
        assert!(h_star >= h_unif - 3.0 * se, "H* {h_star} vs uniform {h_unif}");
    }

    #[test]
    fn entropy_softmax_arithmetic() {
        let a = GaussianMixture::single(Gaussian2::isotropic([0.0, 0.0], 1.0).unwrap());
        // entropy + ln 2 => covariance scale 2 per axis
        let b = GaussianMixture::single(Gaussian2::isotropic([0.0, 0.0], 2.0).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let l = entropy_softmax_lambda(&[a.clone(), b], 10, &mut rng);
        assert!((l[0] - 1.0 / 3.0).abs() < 1e-9 && (l[1] - 2.0 / 3.0).abs() < 1e-9);
        let l1 = entropy_softmax_lambda(&[a.clone(), a], 10, &mut rng);
        assert!((l1[0] - 0.5).abs() < 1e-12);
    }
}
