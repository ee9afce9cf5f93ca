//! Native tasks.
//!
//! Every task offers an episodic view (context and sampled parameter vector
//! in, scalar return out) through [`EpisodicEnv`]. The reacher and the
//! thrower also offer a step view ([`StepEnv`]) for the step-based baseline;
//! both views share the same per-step reward code.

mod bandit;
mod kinematics;
mod reacher;
mod thrower;

use alloc::vec::Vec;

pub use bandit::QuadraticBandit;
pub use kinematics::{forward_kinematics, PlanarChain};
pub use reacher::{reacher_reward_dense, reacher_reward_sparse, Reacher, ReacherConfig, ReacherStep};
pub use thrower::{release_penalty, thrower_return, ThrowCondition, ThrowOutcome, Thrower, ThrowerConfig, ThrowerStep};

use crate::numkit::RandomStream;
use crate::promp::TrajectoryPlan;
use crate::Result;

/// Return assigned to episodes whose dynamics diverged.
pub const FAULT_RETURN: f64 = -1e4;

/// Task descriptor fixed at the start of an episode: the goal point `(x, y)`
/// for the reacher, the cup position `x` for the thrower, a constant for the
/// bandit.
#[derive(Debug, Clone, PartialEq)]
pub struct Context(pub Vec<f64>);

impl Context {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// `(c, w, R)` training atom.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub context: Context,
    pub params: Vec<f64>,
    pub ret: f64,
}

/// Result of one episodic rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub ret: f64,
    /// Task metric: final goal distance (reacher), 1/0 success (thrower),
    /// squared parameter error (bandit).
    pub metric: f64,
    pub success: bool,
    /// `sum_t sum_i a_t^i^2` over the applied torques.
    pub control_cost: f64,
    pub fault: bool,
    pub trace: Option<RolloutTrace>,
}

/// Joint-space record of a rollout.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RolloutTrace {
    pub num_dof: usize,
    /// `T x num_dof` joint positions after each step.
    pub positions: Vec<f64>,
    pub velocities: Vec<f64>,
    pub torques: Vec<f64>,
    pub rewards: Vec<f64>,
}

impl RolloutTrace {
    /// View the visited joint states as a plan table (same text format as
    /// [`TrajectoryPlan::to_table`]).
    pub fn as_plan(&self, dt: f64) -> TrajectoryPlan {
        let steps = self.rewards.len();
        TrajectoryPlan {
            num_dof: self.num_dof,
            times: (1..=steps).map(|k| k as f64 * dt).collect(),
            positions: self.positions.clone(),
            velocities: self.velocities.clone(),
        }
    }
}

/// Episodic (black-box) view of a task.
pub trait EpisodicEnv {
    fn name(&self) -> &'static str;
    fn context_dim(&self) -> usize;
    /// Length of the sampled parameter vector.
    fn param_dim(&self) -> usize;
    /// Environment interactions consumed by one episode.
    fn horizon(&self) -> usize;
    fn sample_context(&self, stream: &mut RandomStream) -> Context;
    /// Run one episode with the given parameter vector.
    fn run(&self, context: &Context, params: &[f64], keep_trace: bool) -> Result<EpisodeOutcome>;
    /// Name of [`EpisodeOutcome::metric`].
    fn metric_name(&self) -> &'static str;
}

/// Step-based view of a task.
pub trait StepEnv {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn horizon(&self) -> usize;
    /// Sample a fresh context and return the first observation.
    fn reset(&mut self, stream: &mut RandomStream) -> Vec<f64>;
    fn reset_with(&mut self, context: &Context) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
    /// Task metric of the episode that just finished.
    fn episode_metric(&self) -> f64;
    fn episode_success(&self) -> bool;
    /// Bounds for the raw action, per dimension.
    fn action_limits(&self) -> Vec<f64>;
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
}

/// Closed set of tasks, for configuration-driven dispatch.
#[derive(Debug, Clone)]
pub enum Task {
    Reacher(Reacher),
    Thrower(Thrower),
    Bandit(QuadraticBandit),
}

impl Task {
    fn inner(&self) -> &dyn EpisodicEnv {
        match self {
            Task::Reacher(e) => e,
            Task::Thrower(e) => e,
            Task::Bandit(e) => e,
        }
    }

    /// Step view, when the task has one.
    pub fn step_env(&self) -> Option<alloc::boxed::Box<dyn StepEnv + Send>> {
        match self {
            Task::Reacher(e) => Some(alloc::boxed::Box::new(e.step_view())),
            Task::Thrower(e) => Some(alloc::boxed::Box::new(e.step_view())),
            Task::Bandit(_) => None,
        }
    }
}

impl EpisodicEnv for Task {
    fn name(&self) -> &'static str {
        self.inner().name()
    }
    fn context_dim(&self) -> usize {
        self.inner().context_dim()
    }
    fn param_dim(&self) -> usize {
        self.inner().param_dim()
    }
    fn horizon(&self) -> usize {
        self.inner().horizon()
    }
    fn sample_context(&self, stream: &mut RandomStream) -> Context {
        self.inner().sample_context(stream)
    }
    fn run(&self, context: &Context, params: &[f64], keep_trace: bool) -> Result<EpisodeOutcome> {
        self.inner().run(context, params, keep_trace)
    }
    fn metric_name(&self) -> &'static str {
        self.inner().metric_name()
    }
}
