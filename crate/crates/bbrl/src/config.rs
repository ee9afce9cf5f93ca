//! Experiment configuration: a TOML file with one section per module.
//!
//! Every section is optional and every key inside has a default taken from
//! the shipped per-task presets, so a minimal file only names the algorithm
//! and the environment. Unknown keys are rejected.
//!
//! ```toml
//! algorithm = "bbrl-trpl"      # bbrl-trpl | bbrl-ppo | ppo
//! seeds = [0, 1, 2]
//! out_dir = "runs/reacher"
//! max_env_steps = 12_800_000
//!
//! [env]
//! id = "reacher"               # reacher | thrower | bandit
//! sparse = true
//!
//! [erl]
//! samples_per_iter = 64
//! ```

use std::path::{Path, PathBuf};

use bbrl_core::envs::{EpisodicEnv, QuadraticBandit, Reacher, ReacherConfig, Task, Thrower, ThrowerConfig};
use bbrl_core::erl::{ErlAlgorithm, ErlConfig};
use bbrl_core::numkit::{Activation, RandomStream};
use bbrl_core::steprl::PpoConfig;
use bbrl_core::track::PdGains;
use bbrl_core::trpl::TrustRegion;
use serde::{Deserialize, Serialize};

use crate::error::{RunError, RunResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Algorithm {
    #[serde(rename = "bbrl-trpl")]
    BbrlTrpl,
    #[serde(rename = "bbrl-ppo")]
    BbrlPpo,
    #[serde(rename = "ppo")]
    Ppo,
}

impl Algorithm {
    pub fn id(self) -> &'static str {
        match self {
            Algorithm::BbrlTrpl => "bbrl-trpl",
            Algorithm::BbrlPpo => "bbrl-ppo",
            Algorithm::Ppo => "ppo",
        }
    }

    pub fn is_episodic(self) -> bool {
        !matches!(self, Algorithm::Ppo)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    Reacher,
    Thrower,
    Bandit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ActivationId {
    Tanh,
    Relu,
}

impl From<ActivationId> for Activation {
    fn from(a: ActivationId) -> Self {
        match a {
            ActivationId::Tanh => Activation::Tanh,
            ActivationId::Relu => Activation::Relu,
        }
    }
}

impl From<Activation> for ActivationId {
    fn from(a: Activation) -> Self {
        match a {
            Activation::Tanh => ActivationId::Tanh,
            Activation::Relu => ActivationId::Relu,
        }
    }
}

/// Physical constants and task options. Keys that do not apply to the
/// selected task are rejected during validation.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSection {
    pub id: Option<EnvId>,
    pub horizon: Option<usize>,
    pub dt: Option<f64>,
    pub inertia: Option<f64>,
    pub damping: Option<f64>,
    // reacher
    pub sparse: Option<bool>,
    pub num_links: Option<usize>,
    pub link_length: Option<f64>,
    pub goal_radius: Option<f64>,
    pub action_penalty: Option<f64>,
    pub goal_weight: Option<f64>,
    pub velocity_weight: Option<f64>,
    // thrower
    pub link_lengths: Option<Vec<f64>>,
    pub ground_y: Option<f64>,
    pub cup_range: Option<[f64; 2]>,
    pub table_range: Option<[f64; 2]>,
    pub cup_width: Option<f64>,
    pub cup_height: Option<f64>,
    pub gravity: Option<f64>,
    pub step_cost_weight: Option<f64>,
    pub final_cost_weight: Option<f64>,
    pub release_min: Option<f64>,
    pub release_max: Option<f64>,
    // bandit
    pub dim: Option<usize>,
    /// Seed of the bandit's target point (drawn uniformly from `[-1, 1]^dim`).
    pub target_seed: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MpSection {
    pub num_basis: Option<usize>,
    pub num_zero_basis: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GainsSection {
    pub kp: Option<f64>,
    pub kd: Option<f64>,
    pub torque_limit: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ErlSection {
    pub samples_per_iter: Option<usize>,
    pub epochs: Option<usize>,
    pub learning_rate: Option<f64>,
    pub eps_mean: Option<f64>,
    pub eps_cov: Option<f64>,
    pub penalty_weight: Option<f64>,
    pub clip_ratio: Option<f64>,
    pub use_critic: Option<bool>,
    pub critic_epochs: Option<usize>,
    pub critic_learning_rate: Option<f64>,
    pub critic_hidden: Option<Vec<usize>>,
    pub hidden: Option<Vec<usize>>,
    pub activation: Option<ActivationId>,
    pub init_std: Option<f64>,
    pub contextual_std: Option<bool>,
    pub iterations: Option<usize>,
    pub eval_episodes: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PpoSection {
    pub samples_per_iter: Option<usize>,
    pub gamma: Option<f64>,
    pub gae_lambda: Option<f64>,
    pub clip: Option<f64>,
    pub epochs: Option<usize>,
    pub minibatches: Option<usize>,
    pub lr_actor: Option<f64>,
    pub lr_critic: Option<f64>,
    pub critic_clip: Option<f64>,
    pub normalize_observations: Option<bool>,
    pub normalize_rewards: Option<bool>,
    pub observation_clip: Option<f64>,
    pub reward_clip: Option<f64>,
    pub hidden: Option<Vec<usize>>,
    pub critic_hidden: Option<Vec<usize>>,
    pub activation: Option<ActivationId>,
    pub init_std: Option<f64>,
    pub eval_episodes: Option<usize>,
    pub iterations: Option<usize>,
}

/// Early stopping on the evaluation summary.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StopSection {
    /// Stop once the evaluation task metric is at or below this value.
    pub metric_below: Option<f64>,
    /// Stop once the evaluation success rate is at or above this value.
    pub success_above: Option<f64>,
}

/// The file as written by the user.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub seeds: Vec<u64>,
    pub out_dir: Option<PathBuf>,
    /// Environment-interaction budget per seed; defaults to the episodic
    /// learner's `iterations x samples_per_iter x horizon`.
    pub max_env_steps: Option<u64>,
    /// Iterations between checkpoints (0 disables periodic checkpoints).
    pub checkpoint_every: Option<usize>,
    #[serde(default)]
    pub env: EnvSection,
    #[serde(default)]
    pub mp: MpSection,
    #[serde(default)]
    pub gains: GainsSection,
    #[serde(default)]
    pub erl: ErlSection,
    #[serde(default)]
    pub ppo: PpoSection,
    #[serde(default)]
    pub stop: StopSection,
}

/// Task configuration after defaults are applied.
#[derive(Debug, Clone, PartialEq)]
pub enum EnvConfig {
    Reacher(ReacherConfig),
    Thrower(ThrowerConfig),
    Bandit { dim: usize, target_seed: u64 },
}

impl EnvConfig {
    pub fn build(&self) -> RunResult<Task> {
        Ok(match self {
            EnvConfig::Reacher(c) => Task::Reacher(Reacher::new(c.clone())?),
            EnvConfig::Thrower(c) => Task::Thrower(Thrower::new(c.clone())?),
            EnvConfig::Bandit { dim, target_seed } => {
                let mut s = RandomStream::new(*target_seed, 0);
                Task::Bandit(QuadraticBandit::random(*dim, &mut s)?)
            }
        })
    }

    pub fn id(&self) -> EnvId {
        match self {
            EnvConfig::Reacher(_) => EnvId::Reacher,
            EnvConfig::Thrower(_) => EnvId::Thrower,
            EnvConfig::Bandit { .. } => EnvId::Bandit,
        }
    }

    /// Name of the task metric in metric records.
    pub fn metric_name(&self) -> &'static str {
        match self {
            EnvConfig::Reacher(_) => "final_distance",
            EnvConfig::Thrower(_) => "success",
            EnvConfig::Bandit { .. } => "sq_error",
        }
    }
}

/// Fully resolved, validated experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub algorithm: Algorithm,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
    pub max_env_steps: u64,
    pub checkpoint_every: usize,
    pub env: EnvConfig,
    pub erl: ErlConfig,
    pub ppo: PpoConfig,
    pub ppo_iterations: usize,
    pub stop: StopSection,
}

/// Environment variable that relocates relative output directories.
pub const OUT_ROOT_VAR: &str = "BBRL_OUT_ROOT";

fn set<T: Clone>(dst: &mut T, src: &Option<T>) {
    if let Some(v) = src {
        *dst = v.clone();
    }
}

/// Shipped per-task defaults for the episodic trainer.
pub fn erl_defaults(env: EnvId) -> ErlConfig {
    match env {
        EnvId::Reacher => ErlConfig::reacher(),
        EnvId::Thrower => ErlConfig::thrower(),
        EnvId::Bandit => ErlConfig {
            learning_rate: 1e-3,
            trust_region: TrustRegion {
                eps_mean: 0.1,
                eps_cov: 0.05,
                penalty_weight: 10.0,
            },
            iterations: 50,
            ..ErlConfig::reacher()
        },
    }
}

pub fn ppo_defaults(env: EnvId) -> PpoConfig {
    match env {
        EnvId::Thrower => PpoConfig::thrower(),
        _ => PpoConfig::reacher(),
    }
}

impl ExperimentFile {
    pub fn parse(text: &str) -> RunResult<Self> {
        toml::from_str(text).map_err(|e| RunError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> RunResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| RunError::io(path, e))?;
        Self::parse(&text)
    }

    fn env_config(&self) -> RunResult<EnvConfig> {
        let e = &self.env;
        let id = e.id.unwrap_or(EnvId::Reacher);
        let reacher_only = [
            ("sparse", e.sparse.is_some()),
            ("num_links", e.num_links.is_some()),
            ("link_length", e.link_length.is_some()),
            ("goal_radius", e.goal_radius.is_some()),
            ("action_penalty", e.action_penalty.is_some()),
            ("goal_weight", e.goal_weight.is_some()),
            ("velocity_weight", e.velocity_weight.is_some()),
        ];
        let thrower_only = [
            ("link_lengths", e.link_lengths.is_some()),
            ("ground_y", e.ground_y.is_some()),
            ("cup_range", e.cup_range.is_some()),
            ("table_range", e.table_range.is_some()),
            ("cup_width", e.cup_width.is_some()),
            ("cup_height", e.cup_height.is_some()),
            ("gravity", e.gravity.is_some()),
            ("step_cost_weight", e.step_cost_weight.is_some()),
            ("final_cost_weight", e.final_cost_weight.is_some()),
            ("release_min", e.release_min.is_some()),
            ("release_max", e.release_max.is_some()),
        ];
        let bandit_only = [("dim", e.dim.is_some()), ("target_seed", e.target_seed.is_some())];
        let physics = [
            ("horizon", e.horizon.is_some()),
            ("dt", e.dt.is_some()),
            ("inertia", e.inertia.is_some()),
            ("damping", e.damping.is_some()),
        ];
        let mut foreign: Vec<&str> = Vec::new();
        let mut check = |keys: &[(&'static str, bool)], allowed: bool| {
            if !allowed {
                foreign.extend(keys.iter().filter(|k| k.1).map(|k| k.0));
            }
        };
        check(&reacher_only, id == EnvId::Reacher);
        check(&thrower_only, id == EnvId::Thrower);
        check(&bandit_only, id == EnvId::Bandit);
        check(&physics, id != EnvId::Bandit);
        let has_mp = self.mp != MpSection::default() || self.gains != GainsSection::default();
        if id == EnvId::Bandit && has_mp {
            foreign.push("mp/gains");
        }
        if !foreign.is_empty() {
            return Err(RunError::Config(format!(
                "keys not applicable to env '{}': {}",
                serde_json::to_string(&id).unwrap().trim_matches('"'),
                foreign.join(", ")
            )));
        }
        let gains = |dof: usize, base: &PdGains| {
            let g = &self.gains;
            PdGains::uniform(
                dof,
                g.kp.unwrap_or(base.kp[0]),
                g.kd.unwrap_or(base.kd[0]),
                g.torque_limit.unwrap_or(base.torque_limit[0]),
            )
        };
        Ok(match id {
            EnvId::Reacher => {
                let mut c = ReacherConfig::default();
                set(&mut c.sparse, &e.sparse);
                set(&mut c.num_links, &e.num_links);
                set(&mut c.link_length, &e.link_length);
                set(&mut c.goal_radius, &e.goal_radius);
                set(&mut c.action_penalty, &e.action_penalty);
                set(&mut c.goal_weight, &e.goal_weight);
                set(&mut c.velocity_weight, &e.velocity_weight);
                set(&mut c.horizon, &e.horizon);
                set(&mut c.dt, &e.dt);
                set(&mut c.inertia, &e.inertia);
                set(&mut c.damping, &e.damping);
                set(&mut c.num_basis, &self.mp.num_basis);
                set(&mut c.num_zero_basis, &self.mp.num_zero_basis);
                c.gains = gains(c.num_links, &c.gains);
                EnvConfig::Reacher(c)
            }
            EnvId::Thrower => {
                let mut c = ThrowerConfig::default();
                if let Some(l) = &e.link_lengths {
                    c.start_q = {
                        let mut q = vec![0.0; l.len()];
                        q[0] = -std::f64::consts::FRAC_PI_2;
                        q
                    };
                    c.link_lengths = l.clone();
                }
                set(&mut c.ground_y, &e.ground_y);
                if let Some([a, b]) = e.cup_range {
                    c.cup_range = (a, b);
                }
                if let Some([a, b]) = e.table_range {
                    c.table_range = (a, b);
                }
                set(&mut c.cup_width, &e.cup_width);
                set(&mut c.cup_height, &e.cup_height);
                set(&mut c.gravity, &e.gravity);
                set(&mut c.step_cost_weight, &e.step_cost_weight);
                set(&mut c.final_cost_weight, &e.final_cost_weight);
                set(&mut c.release_min, &e.release_min);
                set(&mut c.release_max, &e.release_max);
                set(&mut c.horizon, &e.horizon);
                set(&mut c.dt, &e.dt);
                set(&mut c.inertia, &e.inertia);
                set(&mut c.damping, &e.damping);
                set(&mut c.num_basis, &self.mp.num_basis);
                set(&mut c.num_zero_basis, &self.mp.num_zero_basis);
                c.gains = gains(c.link_lengths.len(), &c.gains);
                EnvConfig::Thrower(c)
            }
            EnvId::Bandit => EnvConfig::Bandit {
                dim: e.dim.unwrap_or(10),
                target_seed: e.target_seed.unwrap_or(0),
            },
        })
    }

    /// Apply defaults and validate everything; no run starts before this passes.
    pub fn resolve(&self) -> RunResult<ExperimentConfig> {
        let env = self.env_config()?;
        // Building the task validates the physical constants.
        let task = env.build()?;
        let id = env.id();

        let mut erl = erl_defaults(id);
        let s = &self.erl;
        erl.algorithm = match self.algorithm {
            Algorithm::BbrlPpo => ErlAlgorithm::Ppo,
            _ => ErlAlgorithm::Trpl,
        };
        set(&mut erl.samples_per_iter, &s.samples_per_iter);
        set(&mut erl.epochs, &s.epochs);
        set(&mut erl.learning_rate, &s.learning_rate);
        set(&mut erl.trust_region.eps_mean, &s.eps_mean);
        set(&mut erl.trust_region.eps_cov, &s.eps_cov);
        set(&mut erl.trust_region.penalty_weight, &s.penalty_weight);
        set(&mut erl.clip_ratio, &s.clip_ratio);
        set(&mut erl.use_critic, &s.use_critic);
        set(&mut erl.critic_epochs, &s.critic_epochs);
        set(&mut erl.critic_learning_rate, &s.critic_learning_rate);
        set(&mut erl.critic_hidden, &s.critic_hidden);
        set(&mut erl.hidden, &s.hidden);
        if let Some(a) = s.activation {
            erl.activation = a.into();
        }
        set(&mut erl.init_std, &s.init_std);
        set(&mut erl.contextual_std, &s.contextual_std);
        set(&mut erl.iterations, &s.iterations);
        set(&mut erl.eval_episodes, &s.eval_episodes);
        erl.validate()?;

        let mut ppo = ppo_defaults(id);
        let p = &self.ppo;
        set(&mut ppo.samples_per_iter, &p.samples_per_iter);
        set(&mut ppo.gamma, &p.gamma);
        set(&mut ppo.gae_lambda, &p.gae_lambda);
        set(&mut ppo.clip, &p.clip);
        set(&mut ppo.epochs, &p.epochs);
        set(&mut ppo.minibatches, &p.minibatches);
        set(&mut ppo.lr_actor, &p.lr_actor);
        set(&mut ppo.lr_critic, &p.lr_critic);
        set(&mut ppo.critic_clip, &p.critic_clip);
        set(&mut ppo.normalize_observations, &p.normalize_observations);
        set(&mut ppo.normalize_rewards, &p.normalize_rewards);
        set(&mut ppo.observation_clip, &p.observation_clip);
        set(&mut ppo.reward_clip, &p.reward_clip);
        set(&mut ppo.hidden, &p.hidden);
        set(&mut ppo.critic_hidden, &p.critic_hidden);
        if let Some(a) = p.activation {
            ppo.activation = a.into();
        }
        set(&mut ppo.init_std, &p.init_std);
        set(&mut ppo.eval_episodes, &p.eval_episodes);
        ppo.validate()?;

        if self.algorithm == Algorithm::Ppo && task.step_env().is_none() {
            return Err(RunError::Config("the bandit has no step view; use an episodic algorithm".into()));
        }
        if self.seeds.is_empty() {
            return Err(RunError::Config("at least one seed is required".into()));
        }
        let mut seen = self.seeds.clone();
        seen.sort_unstable();
        seen.dedup();
        if seen.len() != self.seeds.len() {
            return Err(RunError::Config("seeds must be distinct".into()));
        }
        if let Some(m) = self.stop.success_above {
            if !(0.0..=1.0).contains(&m) {
                return Err(RunError::Config("stop.success_above must lie in [0, 1]".into()));
            }
        }
        let ppo_iterations = p.iterations.unwrap_or(usize::MAX);
        // Default budget: what the episodic learner consumes in its full
        // iteration count, so both families see equal interaction counts.
        let episodic_budget = (erl.iterations * erl.samples_per_iter * EpisodicEnv::horizon(&task)) as u64;
        let max_env_steps = self.max_env_steps.unwrap_or(episodic_budget);
        if max_env_steps == 0 {
            return Err(RunError::Config("max_env_steps must be positive".into()));
        }
        Ok(ExperimentConfig {
            algorithm: self.algorithm,
            seeds: self.seeds.clone(),
            out_dir: resolve_out_dir(self.out_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))),
            max_env_steps,
            checkpoint_every: self.checkpoint_every.unwrap_or(100),
            env,
            erl,
            ppo,
            ppo_iterations,
            stop: self.stop.clone(),
        })
    }
}

/// Relative paths are placed under `$BBRL_OUT_ROOT` when it is set.
pub fn resolve_out_dir(dir: PathBuf) -> PathBuf {
    match std::env::var_os(OUT_ROOT_VAR) {
        Some(root) if dir.is_relative() => PathBuf::from(root).join(dir),
        _ => dir,
    }
}

impl ExperimentConfig {
    /// Write-back form with every default made explicit; parsing it yields
    /// the same resolved configuration.
    pub fn to_file(&self) -> ExperimentFile {
        let (env, mp, gains) = match &self.env {
            EnvConfig::Reacher(c) => (
                EnvSection {
                    id: Some(EnvId::Reacher),
                    horizon: Some(c.horizon),
                    dt: Some(c.dt),
                    inertia: Some(c.inertia),
                    damping: Some(c.damping),
                    sparse: Some(c.sparse),
                    num_links: Some(c.num_links),
                    link_length: Some(c.link_length),
                    goal_radius: Some(c.goal_radius),
                    action_penalty: Some(c.action_penalty),
                    goal_weight: Some(c.goal_weight),
                    velocity_weight: Some(c.velocity_weight),
                    ..Default::default()
                },
                MpSection {
                    num_basis: Some(c.num_basis),
                    num_zero_basis: Some(c.num_zero_basis),
                },
                gains_section(&c.gains),
            ),
            EnvConfig::Thrower(c) => (
                EnvSection {
                    id: Some(EnvId::Thrower),
                    horizon: Some(c.horizon),
                    dt: Some(c.dt),
                    inertia: Some(c.inertia),
                    damping: Some(c.damping),
                    link_lengths: Some(c.link_lengths.clone()),
                    ground_y: Some(c.ground_y),
                    cup_range: Some([c.cup_range.0, c.cup_range.1]),
                    table_range: Some([c.table_range.0, c.table_range.1]),
                    cup_width: Some(c.cup_width),
                    cup_height: Some(c.cup_height),
                    gravity: Some(c.gravity),
                    step_cost_weight: Some(c.step_cost_weight),
                    final_cost_weight: Some(c.final_cost_weight),
                    release_min: Some(c.release_min),
                    release_max: Some(c.release_max),
                    ..Default::default()
                },
                MpSection {
                    num_basis: Some(c.num_basis),
                    num_zero_basis: Some(c.num_zero_basis),
                },
                gains_section(&c.gains),
            ),
            EnvConfig::Bandit { dim, target_seed } => (
                EnvSection {
                    id: Some(EnvId::Bandit),
                    dim: Some(*dim),
                    target_seed: Some(*target_seed),
                    ..Default::default()
                },
                MpSection::default(),
                GainsSection::default(),
            ),
        };
        let e = &self.erl;
        let p = &self.ppo;
        ExperimentFile {
            algorithm: self.algorithm,
            seeds: self.seeds.clone(),
            out_dir: Some(self.out_dir.clone()),
            max_env_steps: Some(self.max_env_steps),
            checkpoint_every: Some(self.checkpoint_every),
            env,
            mp,
            gains,
            erl: ErlSection {
                samples_per_iter: Some(e.samples_per_iter),
                epochs: Some(e.epochs),
                learning_rate: Some(e.learning_rate),
                eps_mean: Some(e.trust_region.eps_mean),
                eps_cov: Some(e.trust_region.eps_cov),
                penalty_weight: Some(e.trust_region.penalty_weight),
                clip_ratio: Some(e.clip_ratio),
                use_critic: Some(e.use_critic),
                critic_epochs: Some(e.critic_epochs),
                critic_learning_rate: Some(e.critic_learning_rate),
                critic_hidden: Some(e.critic_hidden.clone()),
                hidden: Some(e.hidden.clone()),
                activation: Some(e.activation.into()),
                init_std: Some(e.init_std),
                contextual_std: Some(e.contextual_std),
                iterations: Some(e.iterations),
                eval_episodes: Some(e.eval_episodes),
            },
            ppo: PpoSection {
                samples_per_iter: Some(p.samples_per_iter),
                gamma: Some(p.gamma),
                gae_lambda: Some(p.gae_lambda),
                clip: Some(p.clip),
                epochs: Some(p.epochs),
                minibatches: Some(p.minibatches),
                lr_actor: Some(p.lr_actor),
                lr_critic: Some(p.lr_critic),
                critic_clip: Some(p.critic_clip),
                normalize_observations: Some(p.normalize_observations),
                normalize_rewards: Some(p.normalize_rewards),
                observation_clip: Some(p.observation_clip),
                reward_clip: Some(p.reward_clip),
                hidden: Some(p.hidden.clone()),
                critic_hidden: Some(p.critic_hidden.clone()),
                activation: Some(p.activation.into()),
                init_std: Some(p.init_std),
                eval_episodes: Some(p.eval_episodes),
                iterations: (self.ppo_iterations != usize::MAX).then_some(self.ppo_iterations),
            },
            stop: self.stop.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_file()).expect("configuration serializes")
    }
}

fn gains_section(g: &PdGains) -> GainsSection {
    GainsSection {
        kp: Some(g.kp[0]),
        kd: Some(g.kd[0]),
        torque_limit: Some(g.torque_limit[0]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_gets_table_defaults() {
        let f = ExperimentFile::parse("algorithm = \"bbrl-trpl\"\nseeds = [1]\n[env]\nid = \"reacher\"\n").unwrap();
        let c = f.resolve().unwrap();
        assert_eq!(c.erl.samples_per_iter, 64);
        assert_eq!(c.erl.epochs, 100);
        assert_eq!(c.erl.learning_rate, 3e-4);
        assert_eq!(c.erl.trust_region.eps_mean, 0.05);
        assert_eq!(c.erl.trust_region.eps_cov, 0.0005);
        assert_eq!(c.erl.trust_region.penalty_weight, 10.0);
        assert!(!c.erl.use_critic);
        assert_eq!(c.ppo.samples_per_iter, 16000);
        assert_eq!(c.ppo.minibatches, 32);
        assert_eq!(c.ppo.gae_lambda, 0.95);
        match &c.env {
            EnvConfig::Reacher(r) => {
                assert_eq!((r.num_basis, r.num_zero_basis), (5, 1));
                assert_eq!(r.horizon, 200);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn thrower_defaults() {
        let f = ExperimentFile::parse("algorithm = \"bbrl-trpl\"\nseeds = [1]\n[env]\nid = \"thrower\"\n").unwrap();
        let c = f.resolve().unwrap();
        assert_eq!(c.erl.samples_per_iter, 160);
        assert_eq!(c.erl.trust_region.eps_mean, 0.005);
        assert_eq!(c.erl.trust_region.penalty_weight, 25.0);
        assert_eq!(c.erl.learning_rate, 3e-4);
        assert_eq!(c.ppo.samples_per_iter, 16384);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(ExperimentFile::parse("algorithm = \"ppo\"\nbogus = 1\n").is_err());
        assert!(ExperimentFile::parse("algorithm = \"ppo\"\n[erl]\nlr = 1\n").is_err());
        assert!(ExperimentFile::parse("algorithm = \"sac\"\n").is_err());
    }

    #[test]
    fn foreign_env_keys_rejected() {
        let f = ExperimentFile::parse("algorithm = \"bbrl-trpl\"\nseeds=[0]\n[env]\nid = \"thrower\"\nsparse = true\n").unwrap();
        assert!(matches!(f.resolve(), Err(RunError::Config(_))));
    }

    #[test]
    fn invalid_values_rejected() {
        for body in [
            "[erl]\nsamples_per_iter = 1",
            "[erl]\neps_cov = 0.0",
            "[ppo]\ngamma = 1.5",
            "[env]\ndt = -1.0",
        ] {
            let f = ExperimentFile::parse(&format!("algorithm = \"bbrl-trpl\"\nseeds=[0]\n{body}\n")).unwrap();
            assert!(f.resolve().is_err(), "{body}");
        }
        let f = ExperimentFile::parse("algorithm = \"bbrl-trpl\"\n").unwrap();
        assert!(f.resolve().is_err());
    }

    #[test]
    fn resolved_roundtrip() {
        for env in ["reacher", "thrower", "bandit"] {
            let f = ExperimentFile::parse(&format!(
                "algorithm = \"bbrl-ppo\"\nseeds = [3, 4]\nmax_env_steps = 1000\n[env]\nid = \"{env}\"\n"
            ))
            .unwrap();
            let c = f.resolve().unwrap();
            let again = ExperimentFile::parse(&c.to_toml()).unwrap().resolve().unwrap();
            assert_eq!(c, again);
        }
    }
}
