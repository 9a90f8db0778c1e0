//! Experiment runner: parses a JSON config, runs the requested solver with a
//! seeded RNG, and writes CSV/JSON artifacts (summary.json last, atomically).

use cdlab::align::{run_alignment, AlignProblem};
use cdlab::compose::{
    dual_only_and, entropy_softmax_lambda, mixture_of, mixture_or, primal_dual_and,
};
use cdlab::config::{parse_config, ExperimentConfig};
use cdlab::diffusion::ScoreField;
use cdlab::dist::GaussianMixture;
use cdlab::divergence::{pathwise_kl, pointwise_kl};
use cdlab::error::{Error, Result};
use cdlab::grid::{grid_minimax_lambda, grid_product_and, Bounds, GridField};
use cdlab::linalg::Vec2;
use cdlab::plot::render_scatter;
use cdlab::schedules::{NoiseSchedule, VarianceSchedule};
use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::json;
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};
use std::time::Instant;

#[derive(Parser)]
#[command(name = "cdlab", about = "Constrained diffusion alignment/composition experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment config
    #[arg(long)]
    config: PathBuf,
    /// Override the config's seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Upper bound on worker threads (runs are single-threaded today)
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Primal-dual reward alignment
    Align(RunArgs),
    /// Product composition (AND)
    ComposeAnd {
        #[command(flatten)]
        args: RunArgs,
        /// Use the dual-only surrogate algorithm instead of primal-dual
        #[arg(long)]
        dual_only: bool,
    },
    /// Mixture composition (OR)
    ComposeOr(RunArgs),
    /// KL estimator convergence check against closed forms
    KlCheck(RunArgs),
    /// Brute-force grid oracle for composition weights
    Oracle(RunArgs),
}

fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_)
        | Error::Schedule(_)
        | Error::Distribution(_)
        | Error::TimeIndex { .. }
        | Error::DegenerateReward { .. }
        | Error::DeterministicStep { .. } => 2,
        Error::Infeasible(_) | Error::SupportViolation { .. } => 3,
        Error::Diverged(_) => 4,
        Error::Io { .. } => 1,
    }
}

fn main() {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CDLAB_LOG", "error")).init();
    let cli = Cli::parse();
    let (args, kind, dual_only) = match &cli.command {
        Command::Align(a) => (a, "align", false),
        Command::ComposeAnd { args, dual_only } => (args, "compose-and", *dual_only),
        Command::ComposeOr(a) => (a, "compose-or", false),
        Command::KlCheck(a) => (a, "kl-check", false),
        Command::Oracle(a) => (a, "oracle", false),
    };
    if let Err(e) = run(args, kind, dual_only) {
        eprintln!("error: {e}");
        std::process::exit(exit_code(&e));
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> Error + '_ {
    move |e| Error::Io {
        path: path.display().to_string(),
        source: e,
    }
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    std::fs::write(path, contents).map_err(io_err(path))
}

/// summary.json is the atomic completion marker: written to a temp file and
/// renamed into place as the very last step.
fn write_summary(out: &Path, summary: &serde_json::Value) -> Result<()> {
    let tmp = out.join("summary.json.tmp");
    let path = out.join("summary.json");
    let text = serde_json::to_string_pretty(summary).expect("json serialization");
    write_file(&tmp, text.as_bytes())?;
    std::fs::rename(&tmp, &path).map_err(io_err(&path))
}

fn write_samples_csv(out: &Path, samples: &[Vec2]) -> Result<()> {
    let mut text = String::from("x,y,trajectory_id\n");
    for (i, s) in samples.iter().enumerate() {
        text.push_str(&format!("{},{},{i}\n", s[0], s[1]));
    }
    write_file(&out.join("samples.csv"), text.as_bytes())
}

fn sample_mean(samples: &[Vec2]) -> Vec2 {
    let n = samples.len().max(1) as f64;
    [
        samples.iter().map(|x| x[0]).sum::<f64>() / n,
        samples.iter().map(|x| x[1]).sum::<f64>() / n,
    ]
}

fn run(args: &RunArgs, kind: &str, dual_only: bool) -> Result<()> {
    if let Some(t) = args.threads {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        log::info!("thread cap {t} requested; runs are currently single-threaded");
    }
    let raw = std::fs::read(&args.config).map_err(io_err(&args.config))?;
    let text = String::from_utf8(raw.clone())
        .map_err(|e| Error::Config(format!("config is not UTF-8: {e}")))?;
    let mut cfg = parse_config(&text)?;
    if cfg.kind() != kind {
        return Err(Error::Config(format!(
            "config kind '{}' does not match subcommand '{kind}'",
            cfg.kind()
        )));
    }
    if let Some(seed) = args.seed {
        cfg.set_seed(seed);
    }
    let config_hash = format!("{:x}", Sha256::digest(&raw));
    // config validated: now it is safe to create the output directory
    std::fs::create_dir_all(&args.out).map_err(io_err(&args.out))?;
    let started = Instant::now();
    let mut results = match &cfg {
        ExperimentConfig::Align(spec) => run_align(spec, &args.out)?,
        ExperimentConfig::ComposeAnd(spec) => run_compose_and(spec, dual_only, &args.out)?,
        ExperimentConfig::ComposeOr(spec) => run_compose_or(spec, &args.out)?,
        ExperimentConfig::KlCheck(spec) => run_kl_check(spec, &args.out)?,
        ExperimentConfig::Oracle(spec) => run_oracle(spec, &args.out)?,
    };
    if dual_only {
        results["algorithm"] = json!("dual-only");
    }
    let summary = json!({
        "kind": kind,
        "seed": cfg.seed(),
        "config_hash": config_hash,
        "wall_clock_s": started.elapsed().as_secs_f64(),
        "results": results,
    });
    write_summary(&args.out, &summary)
}

fn run_align(spec: &cdlab::config::AlignSpec, out: &Path) -> Result<serde_json::Value> {
    let (sched, var) = spec.schedule.build()?;
    let pretrained = spec.pretrained.build()?;
    let (rewards, thresholds): (Vec<_>, Vec<_>) =
        spec.rewards.iter().map(|r| r.build()).unzip();
    let mut problem = AlignProblem::new(pretrained.clone(), rewards, thresholds)?;
    let cfg = spec.solver.build(sched, var);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let outcome = run_alignment(&mut problem, &cfg, &mut rng)?;

    let m = outcome.final_lambda.len();
    let mut hist = String::from("round");
    for i in 0..m {
        hist.push_str(&format!(",lambda_{i}"));
    }
    for i in 0..m {
        hist.push_str(&format!(",slack_{i}"));
    }
    hist.push('\n');
    for rec in &outcome.history {
        hist.push_str(&rec.round.to_string());
        for l in &rec.lambda {
            hist.push_str(&format!(",{l}"));
        }
        for s in &rec.slack {
            hist.push_str(&format!(",{s}"));
        }
        hist.push('\n');
    }
    write_file(&out.join("lambda_history.csv"), hist.as_bytes())?;

    let kl_csv = format!(
        "round,constraint_index,value,stderr\n{},0,{},{}\n",
        outcome.history.len(),
        outcome.final_kl.value,
        outcome.final_kl.standard_error
    );
    write_file(&out.join("kl_report.csv"), kl_csv.as_bytes())?;
    write_samples_csv(out, &outcome.final_samples)?;
    if spec.plot {
        render_scatter(&outcome.final_samples, &[pretrained], &out.join("plot.ppm"))?;
    }
    let stats: Vec<_> = problem
        .stats
        .as_ref()
        .map(|s| {
            s.iter()
                .map(|st| json!({"mean": st.mean, "std": st.std}))
                .collect()
        })
        .unwrap_or_default();
    Ok(json!({
        "final_lambda": outcome.final_lambda,
        "final_slack": outcome.final_slack,
        "comp_slackness": outcome.comp_slackness,
        "final_kl": {"value": outcome.final_kl.value, "stderr": outcome.final_kl.standard_error},
        "sample_mean": sample_mean(&outcome.final_samples),
        "reward_stats": stats,
        "rounds": outcome.history.len(),
    }))
}

fn write_compose_artifacts(
    out: &Path,
    outcome: &cdlab::compose::ComposeOutcome,
) -> Result<()> {
    let m = outcome.lambda.len();
    let mut hist = String::from("round");
    for i in 0..m {
        hist.push_str(&format!(",lambda_{i}"));
    }
    hist.push('\n');
    for (round, l) in outcome.history.iter().enumerate() {
        hist.push_str(&round.to_string());
        for v in l {
            hist.push_str(&format!(",{v}"));
        }
        hist.push('\n');
    }
    write_file(&out.join("lambda_history.csv"), hist.as_bytes())?;

    let mut kl = String::from("round,constraint_index,value,stderr\n");
    for (round, row) in outcome.kl_report.iter().enumerate() {
        for (i, est) in row.iter().enumerate() {
            kl.push_str(&format!(
                "{round},{i},{},{}\n",
                est.value, est.standard_error
            ));
        }
    }
    write_file(&out.join("kl_report.csv"), kl.as_bytes())?;
    write_samples_csv(out, &outcome.samples)
}

fn compose_results(outcome: &cdlab::compose::ComposeOutcome) -> serde_json::Value {
    let last_kls: Vec<_> = outcome
        .kl_report
        .last()
        .map(|row| {
            row.iter()
                .map(|e| json!({"value": e.value, "stderr": e.standard_error}))
                .collect()
        })
        .unwrap_or_default();
    json!({
        "final_lambda": outcome.lambda,
        "rounds": outcome.rounds,
        "converged": outcome.converged,
        "final_kls": last_kls,
        "sample_mean": sample_mean(&outcome.samples),
    })
}

fn run_compose_and(
    spec: &cdlab::config::ComposeSpec,
    dual_only: bool,
    out: &Path,
) -> Result<serde_json::Value> {
    let (sched, var) = spec.schedule.build()?;
    let models: Vec<GaussianMixture> =
        spec.models.iter().map(|m| m.build()).collect::<Result<_>>()?;
    let cfg = spec.solver.build(sched, var);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let outcome = if dual_only {
        dual_only_and(&models, &cfg, &mut rng)?
    } else {
        primal_dual_and(&models, &cfg, &mut rng)?
    };
    write_compose_artifacts(out, &outcome)?;
    if spec.plot {
        render_scatter(&outcome.samples, &models, &out.join("plot.ppm"))?;
    }
    Ok(compose_results(&outcome))
}

fn run_compose_or(spec: &cdlab::config::ComposeSpec, out: &Path) -> Result<serde_json::Value> {
    let (sched, var) = spec.schedule.build()?;
    let models: Vec<GaussianMixture> =
        spec.models.iter().map(|m| m.build()).collect::<Result<_>>()?;
    let cfg = spec.solver.build(sched, var);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let outcome = mixture_or(&models, &cfg, &mut rng)?;
    write_compose_artifacts(out, &outcome)?;
    if spec.plot {
        render_scatter(&outcome.samples, &models, &out.join("plot.ppm"))?;
    }
    let mut results = compose_results(&outcome);
    if let Some((h, se)) = outcome.mixture_entropy {
        results["mixture_entropy"] = json!({"value": h, "stderr": se});
    }
    let softmax = entropy_softmax_lambda(&models, 100_000, &mut rng);
    results["entropy_softmax_lambda"] = json!(softmax);
    let uniform = vec![1.0 / models.len() as f64; models.len()];
    let (h_unif, se_unif) = mixture_of(&models, &uniform)?.entropy(100_000, &mut rng);
    results["uniform_mixture_entropy"] = json!({"value": h_unif, "stderr": se_unif});
    Ok(results)
}

fn run_kl_check(spec: &cdlab::config::KlCheckSpec, out: &Path) -> Result<serde_json::Value> {
    let p = spec.p.build()?;
    let q = spec.q.build()?;
    let fp = ScoreField::Analytic(p.clone());
    let fq = ScoreField::Analytic(q.clone());
    let exact = match (p.as_single(), q.as_single()) {
        (Some(gp), Some(gq)) => Some(cdlab::dist::gaussian_kl(gp, gq)),
        _ => None,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut csv = String::from("T,estimator,value,stderr,exact\n");
    let mut rows = Vec::new();
    let exact_str = exact.map(|e| e.to_string()).unwrap_or_default();
    for &t_steps in &spec.t_sweep {
        let sched = NoiseSchedule::geometric_to(t_steps, 1e-4)?;
        let xs = p.sample(spec.n_samples, &mut rng);
        let est = pointwise_kl(&xs, &fp, &fq, &sched, &mut rng)?;
        csv.push_str(&format!(
            "{t_steps},pointwise,{},{},{exact_str}\n",
            est.value, est.standard_error
        ));
        rows.push(json!({
            "T": t_steps,
            "estimator": "pointwise",
            "value": est.value,
            "stderr": est.standard_error,
        }));
    }
    // path-wise at the finest T, on an all-stochastic schedule whose steps
    // stay fine near alpha = 1 (coarse spacing there over-counts the sum)
    let t_max = *spec.t_sweep.iter().max().expect("nonempty sweep");
    let sched = NoiseSchedule::noise_geometric(t_max, 1e-4, 1e-4)?;
    let var = VarianceSchedule::ddim(&sched, 1.0)?;
    let xs = p.sample(spec.n_samples, &mut rng);
    let est = pathwise_kl(&xs, &fp, &fq, &sched, &var, &mut rng)?;
    csv.push_str(&format!(
        "{t_max},pathwise,{},{},{exact_str}\n",
        est.value, est.standard_error
    ));
    rows.push(json!({
        "T": t_max,
        "estimator": "pathwise",
        "value": est.value,
        "stderr": est.standard_error,
    }));
    write_file(&out.join("kl_report.csv"), csv.as_bytes())?;
    Ok(json!({"rows": rows, "exact": exact}))
}

fn run_oracle(spec: &cdlab::config::OracleSpec, out: &Path) -> Result<serde_json::Value> {
    let models: Vec<GaussianMixture> =
        spec.models.iter().map(|m| m.build()).collect::<Result<_>>()?;
    let step = spec
        .step
        .unwrap_or(if models.len() == 2 { 0.02 } else { 0.05 });
    // bounds: component means padded by `pad` standard deviations
    let mut centers = Vec::new();
    let mut radii = Vec::new();
    for m in &models {
        for g in m.components() {
            centers.push(g.mean);
            radii.push(spec.pad * g.cov.eigenvalues().1.sqrt());
        }
    }
    let bounds = Bounds::cover(&centers, &radii)?;
    let fields: Vec<GridField> = models
        .iter()
        .map(|m| GridField::from_fn(bounds, spec.resolution, spec.resolution, |x| m.density(x)))
        .collect::<Result<_>>()?;
    let lambda = grid_minimax_lambda(&fields, step)?;
    let (prod, log_z) = grid_product_and(&fields, &lambda)?;
    let kls: Vec<f64> = fields
        .iter()
        .map(|f| prod.kl(f))
        .collect::<Result<_>>()?;
    let csv = format!(
        "round,constraint_index,value,stderr\n{}",
        kls.iter()
            .enumerate()
            .map(|(i, k)| format!("0,{i},{k},0\n"))
            .collect::<String>()
    );
    write_file(&out.join("kl_report.csv"), csv.as_bytes())?;
    Ok(json!({
        "lambda_star": lambda,
        "product_mean": prod.mean(),
        "product_covariance": prod.covariance(),
        "log_z": log_z,
        "kls": kls,
        "lattice_step": step,
        "resolution": spec.resolution,
    }))
}
