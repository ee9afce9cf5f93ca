use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bbrl::aggregate::{aggregate, BOOTSTRAP_RESAMPLES};
use bbrl::checkpoint;
use bbrl::config::{resolve_out_dir, ExperimentFile};
use bbrl::core::envs::{reacher_reward_dense, reacher_reward_sparse, release_penalty, ReacherConfig, ThrowerConfig};
use bbrl::core::gauss::{kl_parts, DiagGaussian};
use bbrl::core::trpl::{project, TrustRegion};
use bbrl::metrics::{final_metric, read_log};
use bbrl::runner::{evaluate_checkpoint, heldout_contexts, run_experiment};
use bbrl::{RunError, RunResult};
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "bbrl", version, about = "Episodic RL with trust-region projection layers")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train every seed of an experiment.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated seeds; overrides the file.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// Output directory; overrides the file. Relative paths go under
        /// $BBRL_OUT_ROOT when it is set.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Seeds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Evaluate a checkpoint's mean policy on held-out contexts.
    Evaluate {
        /// Resolved configuration written next to the run (config.toml).
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 100)]
        episodes: usize,
        /// Seed of the held-out context stream.
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// IQM and bootstrap interval of a final metric over runs.
    Aggregate {
        #[arg(long)]
        metric: String,
        /// Seed directories, or experiment directories holding seed_* runs.
        #[arg(required = true)]
        dirs: Vec<PathBuf>,
        #[arg(long, default_value_t = BOOTSTRAP_RESAMPLES)]
        resamples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Project one diagonal Gaussian onto the trust region of another.
    Project {
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        mean: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        std: Vec<f64>,
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        old_mean: Vec<f64>,
        #[arg(long, value_delimiter = ',')]
        old_std: Vec<f64>,
        #[arg(long)]
        eps_mean: f64,
        #[arg(long)]
        eps_cov: f64,
    },
    /// Print reward-formula probes for the built-in tasks.
    Envcheck,
}

fn print(v: &serde_json::Value) {
    println!("{}", serde_json::to_string_pretty(v).expect("json"));
}

fn train(config: &Path, seeds: Option<Vec<u64>>, out: Option<PathBuf>, jobs: usize) -> RunResult<()> {
    let mut file = ExperimentFile::load(config)?;
    if let Some(s) = seeds {
        file.seeds = s;
    }
    let mut cfg = file.resolve()?;
    if let Some(o) = out {
        cfg.out_dir = resolve_out_dir(o);
    }
    let results = run_experiment(&cfg, jobs);
    let total = results.len();
    let mut failed = 0;
    for (seed, r) in &results {
        match r {
            Ok(s) => eprintln!(
                "seed {seed}: {} iterations, {} env steps, final {} {:.6}{}",
                s.iterations,
                s.env_steps,
                cfg.env.metric_name(),
                s.final_metric,
                if s.stopped_early { " (stopped early)" } else { "" }
            ),
            Err(e) => {
                failed += 1;
                eprintln!("seed {seed}: fault [{}] {e}", e.category());
            }
        }
    }
    eprintln!("artifacts in {}", cfg.out_dir.display());
    if failed > 0 {
        return Err(RunError::SeedsFaulted { failed, total });
    }
    Ok(())
}

fn evaluate(config: &Path, ck: &Path, episodes: usize, seed: u64) -> RunResult<()> {
    let cfg = ExperimentFile::load(config)?.resolve()?;
    let ck = checkpoint::load(ck)?;
    let task = cfg.env.build()?;
    let ctx = heldout_contexts(&task, episodes, seed);
    let ev = evaluate_checkpoint(&cfg, &ck, &ctx)?;
    let mut v = ev.to_json(cfg.env.metric_name());
    v["episodes"] = json!(episodes);
    v["iteration"] = json!(ck.iteration);
    v["env_steps"] = json!(ck.env_steps);
    print(&v);
    Ok(())
}

fn run_dirs(dirs: &[PathBuf]) -> RunResult<Vec<PathBuf>> {
    let mut out = Vec::new();
    for d in dirs {
        if d.join("metrics.jsonl").is_file() {
            out.push(d.clone());
            continue;
        }
        let entries = std::fs::read_dir(d).map_err(|e| RunError::io(d, e))?;
        let mut found: Vec<PathBuf> = entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.join("metrics.jsonl").is_file())
            .collect();
        if found.is_empty() {
            return Err(RunError::Config(format!("{}: no runs found", d.display())));
        }
        found.sort();
        out.extend(found);
    }
    Ok(out)
}

fn aggregate_cmd(metric: &str, dirs: &[PathBuf], resamples: usize, seed: u64) -> RunResult<()> {
    let runs = run_dirs(dirs)?;
    let mut values = Vec::new();
    let mut skipped = Vec::new();
    for r in &runs {
        let recs = read_log(&r.join("metrics.jsonl"))?;
        match final_metric(&recs, metric) {
            Some(v) => values.push(v),
            None => skipped.push(r.display().to_string()),
        }
    }
    let a = aggregate(&values, resamples, seed)?;
    print(&json!({
        "metric": metric,
        "runs": a.n,
        "iqm": a.iqm,
        "ci_low": a.ci_low,
        "ci_high": a.ci_high,
        "skipped": skipped,
    }));
    Ok(())
}

fn project_cmd(mean: Vec<f64>, std: Vec<f64>, old_mean: Vec<f64>, old_std: Vec<f64>, eps_mean: f64, eps_cov: f64) -> RunResult<()> {
    let raw = DiagGaussian::new(mean, std)?;
    let old = DiagGaussian::new(old_mean, old_std)?;
    let tr = TrustRegion::new(eps_mean, eps_cov, 0.0)?;
    let p = project(&raw, &old, &tr)?;
    let (m_raw, c_raw) = kl_parts(&raw, &old)?;
    let (m, c) = kl_parts(&p.projected, &old)?;
    print(&json!({
        "mean": p.projected.mean(),
        "std": p.projected.std(),
        "mean_active": p.mean_active,
        "cov_active": p.cov_active,
        "omega": p.mean_multiplier,
        "eta": p.cov_multiplier,
        "raw_mean_part": m_raw,
        "raw_cov_part": c_raw,
        "mean_part": m,
        "cov_part": c,
    }));
    Ok(())
}

fn envcheck() -> RunResult<()> {
    let mut r = ReacherConfig::default();
    let a = [1.0, 0.5, 0.0, -0.5, -1.0];
    let qdot = [0.1; 5];
    let dense = reacher_reward_dense(0.2, &a, r.action_penalty);
    let sparse_mid = reacher_reward_sparse(0.2, &qdot, &a, 10, r.horizon, &r);
    let sparse_end = reacher_reward_sparse(0.2, &qdot, &a, r.horizon, r.horizon, &r);
    r.action_penalty = 0.1;
    let dense_low = reacher_reward_dense(0.2, &a, r.action_penalty);
    let t = ThrowerConfig::default();
    print(&json!({
        "reacher": {
            "action": a,
            "distance": 0.2,
            "dense": dense,
            "dense_penalty_0.1": dense_low,
            "sparse_step_10": sparse_mid,
            "sparse_final": sparse_end,
        },
        "thrower_release_penalty": {
            "0.5": release_penalty(0.5, &t),
            "-0.5": release_penalty(-0.5, &t),
            "3.0": release_penalty(3.0, &t),
        },
    }));
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match cli.cmd {
        Cmd::Train { config, seeds, out, jobs } => train(&config, seeds, out, jobs),
        Cmd::Evaluate {
            config,
            checkpoint,
            episodes,
            seed,
        } => evaluate(&config, &checkpoint, episodes, seed),
        Cmd::Aggregate {
            metric,
            dirs,
            resamples,
            seed,
        } => aggregate_cmd(&metric, &dirs, resamples, seed),
        Cmd::Project {
            mean,
            std,
            old_mean,
            old_std,
            eps_mean,
            eps_cov,
        } => project_cmd(mean, std, old_mean, old_std, eps_mean, eps_cov),
        Cmd::Envcheck => envcheck(),
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
