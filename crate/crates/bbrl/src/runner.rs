//! Seeded multi-run orchestration.
//!
//! Each seed owns `<out_dir>/seed_<n>/` and writes there:
//! `metrics.jsonl`, `config.toml` (the resolved configuration),
//! `metadata.json` and `checkpoints/`.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use bbrl_core::envs::{Context, EpisodicEnv, Task};
use bbrl_core::erl::{evaluate_on, ErlTrainer, EvalSummary};
use bbrl_core::numkit::RandomStream;
use bbrl_core::steprl::{evaluate_steps, PpoTrainer, StepEvalSummary};
use serde_json::json;

use crate::checkpoint::{self, Checkpoint, PolicyState};
use crate::config::{Algorithm, ExperimentConfig};
use crate::error::{RunError, RunResult};
use crate::metrics::{self, MetricsLog};

/// Stream id for held-out evaluation contexts; disjoint from training streams.
pub const STREAM_HELDOUT: u64 = 30;

/// Outcome of one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedSummary {
    pub seed: u64,
    pub dir: PathBuf,
    pub iterations: usize,
    pub env_steps: u64,
    /// Evaluation metric of the last iteration.
    pub final_metric: f64,
    pub final_success: f64,
    pub stopped_early: bool,
}

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed_{seed}"))
}

fn write_file(path: &Path, contents: &str) -> RunResult<()> {
    std::fs::write(path, contents).map_err(|e| RunError::io(path, e))
}

fn metadata(cfg: &ExperimentConfig, seed: u64) -> serde_json::Value {
    let streams = if cfg.algorithm.is_episodic() {
        json!({"init": bbrl_core::erl::STREAM_INIT, "rollout": bbrl_core::erl::STREAM_ROLLOUT, "eval": bbrl_core::erl::STREAM_EVAL})
    } else {
        json!({
            "init": bbrl_core::steprl::STREAM_PPO_INIT,
            "rollout": bbrl_core::steprl::STREAM_PPO_ROLLOUT,
            "eval": bbrl_core::steprl::STREAM_PPO_EVAL,
            "shuffle": bbrl_core::steprl::STREAM_PPO_SHUFFLE,
        })
    };
    json!({
        "seed": seed,
        "algorithm": cfg.algorithm.id(),
        "env": cfg.env.id(),
        "metric": cfg.env.metric_name(),
        "version": env!("CARGO_PKG_VERSION"),
        "rng": "chacha8, one stream per (seed, stream id)",
        "streams": streams,
        "decisions": {
            "bootstrap": "simple percentile bootstrap over runs, no stratification",
            "episodic_advantages": "return minus batch mean (or context value), standardized",
            "step_reward_normalization": "rewards divided by the running std of the discounted return, clipped",
            "x_axis": "cumulative environment interactions (env_steps)",
        },
    })
}

fn should_stop(cfg: &ExperimentConfig, metric: f64, success: f64) -> bool {
    cfg.stop.metric_below.is_some_and(|t| metric <= t) || cfg.stop.success_above.is_some_and(|t| success >= t)
}

struct Progress {
    iteration: usize,
    env_steps: u64,
}

fn train_seed(cfg: &ExperimentConfig, seed: u64, dir: &Path, log: &mut MetricsLog, progress: &mut Progress) -> RunResult<SeedSummary> {
    let task = cfg.env.build()?;
    let metric_name = cfg.env.metric_name();
    let ck_dir = dir.join("checkpoints");
    std::fs::create_dir_all(&ck_dir).map_err(|e| RunError::io(&ck_dir, e))?;
    let ck_path = |it: usize| ck_dir.join(format!("iter_{it:06}.ckpt"));
    let periodic = |it: usize| cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0;

    let (mut last_metric, mut last_success, mut stopped) = (f64::NAN, f64::NAN, false);
    let final_ck;
    if cfg.algorithm.is_episodic() {
        let mut t = ErlTrainer::new(cfg.erl.clone(), &task, seed)?;
        let per_iter = (cfg.erl.samples_per_iter * task.horizon()) as u64;
        while t.iteration < cfg.erl.iterations && t.env_steps + per_iter <= cfg.max_env_steps {
            let r = t.iterate(&task)?;
            progress.iteration = r.iteration;
            progress.env_steps = r.env_steps;
            log.write(&metrics::erl_record(&r, seed, metric_name))?;
            last_metric = r.eval.mean_metric;
            last_success = r.eval.success_rate;
            if periodic(r.iteration) {
                checkpoint::save(&Checkpoint::erl(&t.policy, t.vnet.as_ref(), seed, t.iteration, t.env_steps), &ck_path(r.iteration))?;
            }
            if should_stop(cfg, last_metric, last_success) {
                stopped = true;
                break;
            }
        }
        final_ck = Checkpoint::erl(&t.policy, t.vnet.as_ref(), seed, t.iteration, t.env_steps);
    } else {
        let mut step = task
            .step_env()
            .ok_or_else(|| RunError::Config("task has no step view".into()))?;
        let mut t = PpoTrainer::new(cfg.ppo.clone(), step.as_ref(), seed)?;
        let sample = |s: &mut RandomStream| task.sample_context(s);
        // Whole episodes are collected, so one iteration may overshoot the
        // nominal batch by less than one episode.
        let per_iter = cfg.ppo.samples_per_iter as u64;
        while t.iteration < cfg.ppo_iterations && t.env_steps + per_iter <= cfg.max_env_steps {
            let r = t.iterate(step.as_mut(), &sample)?;
            progress.iteration = r.iteration;
            progress.env_steps = r.env_steps;
            log.write(&metrics::ppo_record(&r, seed, metric_name))?;
            last_metric = r.eval.mean_metric;
            last_success = r.eval.success_rate;
            if periodic(r.iteration) {
                checkpoint::save(&ppo_checkpoint(&t, seed), &ck_path(r.iteration))?;
            }
            if should_stop(cfg, last_metric, last_success) {
                stopped = true;
                break;
            }
        }
        final_ck = ppo_checkpoint(&t, seed);
    }
    checkpoint::save(&final_ck, &ck_dir.join("final.ckpt"))?;
    Ok(SeedSummary {
        seed,
        dir: dir.to_path_buf(),
        iterations: final_ck.iteration,
        env_steps: final_ck.env_steps,
        final_metric: last_metric,
        final_success: last_success,
        stopped_early: stopped,
    })
}

fn ppo_checkpoint(t: &PpoTrainer, seed: u64) -> Checkpoint {
    Checkpoint {
        iteration: t.iteration,
        env_steps: t.env_steps,
        seed,
        state: PolicyState::Ppo {
            policy: t.policy.clone(),
            critic: t.critic.clone(),
            norm: t.norm.clone(),
        },
    }
}

/// Train one seed. A hard error is logged as a fault record before it is
/// returned.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64) -> RunResult<SeedSummary> {
    let dir = seed_dir(&cfg.out_dir, seed);
    std::fs::create_dir_all(&dir).map_err(|e| RunError::io(&dir, e))?;
    let mut single = cfg.clone();
    single.seeds = vec![seed];
    write_file(&dir.join("config.toml"), &single.to_toml())?;
    let meta = serde_json::to_string_pretty(&metadata(cfg, seed)).expect("metadata serializes");
    write_file(&dir.join("metadata.json"), &(meta + "\n"))?;
    let mut log = MetricsLog::create(&dir.join("metrics.jsonl"))?;
    let mut progress = Progress {
        iteration: 0,
        env_steps: 0,
    };
    match train_seed(cfg, seed, &dir, &mut log, &mut progress) {
        Ok(s) => Ok(s),
        Err(e) => {
            log.write(&metrics::fault_record(seed, progress.iteration, progress.env_steps, &e))?;
            Err(e)
        }
    }
}

/// Run every seed, `jobs` at a time. Faulted seeds do not stop the others.
pub fn run_experiment(cfg: &ExperimentConfig, jobs: usize) -> Vec<(u64, RunResult<SeedSummary>)> {
    let jobs = jobs.clamp(1, cfg.seeds.len().max(1));
    let next = AtomicUsize::new(0);
    let results = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&seed) = cfg.seeds.get(i) else { break };
                let r = run_seed(cfg, seed);
                results.lock().unwrap().push((i, seed, r));
            });
        }
    });
    let mut out = results.into_inner().unwrap();
    out.sort_by_key(|r| r.0);
    out.into_iter().map(|(_, s, r)| (s, r)).collect()
}

/// Held-out contexts for `seed`, independent of every training stream.
pub fn heldout_contexts(task: &Task, n: usize, seed: u64) -> Vec<Context> {
    let mut s = RandomStream::new(seed, STREAM_HELDOUT);
    (0..n).map(|_| task.sample_context(&mut s)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Evaluation {
    Episodic(EvalSummary),
    Step(StepEvalSummary),
}

impl Evaluation {
    pub fn mean_metric(&self) -> f64 {
        match self {
            Evaluation::Episodic(e) => e.mean_metric,
            Evaluation::Step(e) => e.mean_metric,
        }
    }

    pub fn success_rate(&self) -> f64 {
        match self {
            Evaluation::Episodic(e) => e.success_rate,
            Evaluation::Step(e) => e.success_rate,
        }
    }

    pub fn to_json(&self, metric_name: &str) -> serde_json::Value {
        match self {
            Evaluation::Episodic(e) => json!({
                "eval_return": e.mean_return,
                metric_name: e.mean_metric,
                "success_rate": e.success_rate,
                "control_cost": e.mean_control_cost,
                "faults": e.faults,
            }),
            Evaluation::Step(e) => json!({
                "eval_return": e.mean_return,
                metric_name: e.mean_metric,
                "success_rate": e.success_rate,
            }),
        }
    }
}

/// Evaluate a checkpoint's mean policy on the given contexts.
pub fn evaluate_checkpoint(cfg: &ExperimentConfig, ck: &Checkpoint, contexts: &[Context]) -> RunResult<Evaluation> {
    let task = cfg.env.build()?;
    Ok(match &ck.state {
        PolicyState::Erl { policy, .. } => Evaluation::Episodic(evaluate_on(policy, &task, contexts)?),
        PolicyState::Ppo { policy, norm, .. } => {
            if cfg.algorithm != Algorithm::Ppo {
                return Err(RunError::Config("step-based checkpoint needs algorithm = \"ppo\"".into()));
            }
            let mut step = task
                .step_env()
                .ok_or_else(|| RunError::Config("task has no step view".into()))?;
            Evaluation::Step(evaluate_steps(policy, step.as_mut(), norm, &cfg.ppo, contexts)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ExperimentFile;

    fn bandit_cfg(dir: &Path, extra: &str) -> ExperimentConfig {
        let text = format!(
            "algorithm = \"bbrl-trpl\"\nseeds = [0, 1]\nout_dir = {:?}\ncheckpoint_every = 2\n[env]\nid = \"bandit\"\ndim = 3\n[erl]\niterations = 5\nepochs = 5\nsamples_per_iter = 8\n{extra}",
            dir.display().to_string()
        );
        ExperimentFile::parse(&text).unwrap().resolve().unwrap()
    }

    #[test]
    fn artifacts_written() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = bandit_cfg(dir.path(), "");
        let res = run_experiment(&cfg, 2);
        assert_eq!(res.len(), 2);
        for (seed, r) in res {
            let s = r.unwrap();
            assert_eq!(s.iterations, 5);
            // Bandit episodes are one step long.
            assert_eq!(s.env_steps, 5 * 8);
            let d = seed_dir(dir.path(), seed);
            let recs = metrics::read_log(&d.join("metrics.jsonl")).unwrap();
            assert_eq!(recs.len(), 5);
            for (i, r) in recs.iter().enumerate() {
                assert_eq!(r["env_steps"], json!((i as u64 + 1) * 8));
            }
            for f in ["config.toml", "metadata.json", "checkpoints/iter_000002.ckpt", "checkpoints/iter_000004.ckpt", "checkpoints/final.ckpt"] {
                assert!(d.join(f).exists(), "{f}");
            }
            let again = ExperimentFile::load(&d.join("config.toml")).unwrap().resolve().unwrap();
            assert_eq!(again.seeds, vec![seed]);
            assert_eq!(again.erl, cfg.erl);
        }
    }

    #[test]
    fn budget_caps_iterations() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = bandit_cfg(dir.path(), "");
        let cfg = ExperimentConfig {
            max_env_steps: 20,
            ..cfg
        };
        let s = run_seed(&cfg, 0).unwrap();
        assert_eq!((s.iterations, s.env_steps), (2, 16));
    }

    #[test]
    fn fault_record_then_other_seeds_continue() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = bandit_cfg(dir.path(), "");
        // A second seed whose directory cannot be created.
        std::fs::write(dir.path().join("seed_7"), "not a directory").unwrap();
        cfg.seeds = vec![7, 0];
        let res = run_experiment(&cfg, 1);
        assert!(res[0].1.is_err());
        assert!(res[1].1.is_ok());
    }

    #[test]
    fn fault_logged_in_metrics() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = bandit_cfg(dir.path(), "");
        let d = seed_dir(dir.path(), 0);
        std::fs::create_dir_all(&d).unwrap();
        std::fs::write(d.join("checkpoints"), "blocks the checkpoint directory").unwrap();
        let err = run_seed(&cfg, 0).unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let recs = metrics::read_log(&d.join("metrics.jsonl")).unwrap();
        let last = recs.last().unwrap();
        assert_eq!(last["record"], "fault");
        assert_eq!(last["category"], "io");
    }

    #[test]
    fn restored_checkpoint_replays_evaluation() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = bandit_cfg(dir.path(), "");
        run_seed(&cfg, 1).unwrap();
        let task = cfg.env.build().unwrap();
        let ctx = heldout_contexts(&task, 5, 9);
        let ck = checkpoint::load(&seed_dir(dir.path(), 1).join("checkpoints/final.ckpt")).unwrap();
        let a = evaluate_checkpoint(&cfg, &ck, &ctx).unwrap();
        let b = evaluate_checkpoint(&cfg, &checkpoint::load(&seed_dir(dir.path(), 1).join("checkpoints/final.ckpt")).unwrap(), &ctx).unwrap();
        assert_eq!(a, b);
    }
}
