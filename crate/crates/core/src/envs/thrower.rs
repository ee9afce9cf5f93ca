//! Planar ball thrower with a staged, path-dependent terminal reward.
//!
//! A two-link arm holds a ball at its end effector and lets go after the
//! release time `B`; from then on the ball flies ballistically until it
//! touches the ground line. The movement primitive runs over `[0, B]`, so the
//! release time doubles as the duration of the throwing motion.

use alloc::vec;
use alloc::vec::Vec;

use super::{Context, EpisodeOutcome, EpisodicEnv, PlanarChain, RolloutTrace, StepEnv, StepResult, FAULT_RETURN};
use crate::error::check_len;
use crate::math;
use crate::numkit::RandomStream;
use crate::promp::{generate_trajectory, param_split, MotionParams, MpSpec, TrajectoryPlan};
use crate::track::{pd_action_into, step_in_place, JointState, PdGains};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ThrowerConfig {
    pub link_lengths: Vec<f64>,
    pub start_q: Vec<f64>,
    /// Height of the ground (and table) line; the arm base is at the origin.
    pub ground_y: f64,
    pub cup_range: (f64, f64),
    /// Stretch of ground counted as table.
    pub table_range: (f64, f64),
    pub cup_width: f64,
    pub cup_height: f64,
    pub gravity: f64,
    pub dt: f64,
    pub horizon: usize,
    pub inertia: f64,
    pub damping: f64,
    pub gains: PdGains,
    /// Per-step action-cost weight.
    pub step_cost_weight: f64,
    /// Weight of the mean action cost in the terminal reward.
    pub final_cost_weight: f64,
    pub release_min: f64,
    pub release_max: f64,
    pub num_basis: usize,
    pub num_zero_basis: usize,
}

impl Default for ThrowerConfig {
    fn default() -> Self {
        Self {
            link_lengths: vec![0.3, 0.3],
            start_q: vec![-core::f64::consts::FRAC_PI_2, 0.0],
            ground_y: -1.0,
            cup_range: (1.0, 2.0),
            table_range: (0.6, 2.4),
            cup_width: 0.1,
            cup_height: 0.1,
            gravity: 9.81,
            dt: 0.02,
            horizon: 150,
            inertia: 0.1,
            damping: 0.05,
            gains: PdGains::uniform(2, 50.0, 5.0, 10.0),
            step_cost_weight: 1e-3,
            final_cost_weight: 1e-4,
            release_min: 0.1,
            release_max: 1.0,
            num_basis: 2,
            num_zero_basis: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThrowCondition {
    /// Touched ground outside the table first (or was never released).
    GroundFirst,
    /// Released but still airborne at the end of the episode.
    NoTableContact,
    /// Landed on the table outside the cup.
    TableContact,
    InCup,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ThrowOutcome {
    /// Ball position after each control step.
    pub ball_path: Vec<[f64; 2]>,
    pub release_step: Option<usize>,
    /// First ground contact point.
    pub landing: Option<[f64; 2]>,
    pub condition: ThrowCondition,
    pub cup_x: f64,
}

fn sq_dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    math::sq(a[0] - b[0]) + math::sq(a[1] - b[1])
}

/// Staged terminal task reward (includes the mean-action-cost term).
fn task_reward(outcome: &ThrowOutcome, mean_cost: f64, cfg: &ThrowerConfig) -> f64 {
    let bottom = [outcome.cup_x, cfg.ground_y];
    let top = [outcome.cup_x, cfg.ground_y + cfg.cup_height];
    let last = *outcome.ball_path.last().expect("ball path is never empty");
    let min_top = outcome
        .ball_path
        .iter()
        .map(|p| sq_dist(*p, top))
        .fold(f64::INFINITY, f64::min);
    let final_bottom = sq_dist(last, bottom);
    let energy = cfg.final_cost_weight * mean_cost;
    match outcome.condition {
        ThrowCondition::GroundFirst => {
            let contact = outcome.landing.map(|p| sq_dist(p, bottom)).unwrap_or(0.0);
            -4.0 - min_top - 0.5 * final_bottom - 2.0 * contact - energy
        }
        ThrowCondition::NoTableContact => -4.0 - min_top - 0.5 * final_bottom - energy,
        ThrowCondition::TableContact => -2.0 - min_top - 0.5 * final_bottom - energy,
        ThrowCondition::InCup => -final_bottom - energy,
    }
}

/// Penalty for release times outside `[release_min, release_max]`.
pub fn release_penalty(release_time: f64, cfg: &ThrowerConfig) -> f64 {
    if release_time < cfg.release_min {
        -30.0 - 10.0 * math::sq(release_time - cfg.release_min)
    } else if release_time > cfg.release_max {
        -30.0 - 10.0 * math::sq(release_time - cfg.release_max)
    } else {
        0.0
    }
}

/// Per-step action cost `(1/K) sum_i a_i^2`.
fn action_cost(torque: &[f64]) -> f64 {
    torque.iter().map(|a| a * a).sum::<f64>() / torque.len() as f64
}

/// Episode return: weighted action costs for `t < T`, the staged task reward
/// and the release-time penalty. `torques` is `T x K` row-major.
pub fn thrower_return(outcome: &ThrowOutcome, torques: &[f64], release_time: f64, cfg: &ThrowerConfig) -> f64 {
    let k = cfg.link_lengths.len();
    let steps = torques.len() / k;
    let costs: Vec<f64> = torques.chunks(k).map(action_cost).collect();
    let running: f64 = costs.iter().take(steps.saturating_sub(1)).map(|c| -cfg.step_cost_weight * c).sum();
    running + task_reward(outcome, math::mean(&costs), cfg) + release_penalty(release_time, cfg)
}

#[derive(Debug, Clone)]
pub struct Thrower {
    cfg: ThrowerConfig,
    chain: PlanarChain,
    mp: MpSpec,
}

impl Thrower {
    pub fn new(cfg: ThrowerConfig) -> Result<Self> {
        let k = cfg.link_lengths.len();
        if k == 0 || cfg.start_q.len() != k || cfg.horizon == 0 {
            return Err(Error::Invalid("thrower needs matching links and start pose".into()));
        }
        if !(cfg.inertia > 0.0) || !(cfg.dt > 0.0) || !(cfg.gravity > 0.0) || !(cfg.cup_width > 0.0) {
            return Err(Error::Invalid("thrower physical constants out of range".into()));
        }
        if cfg.cup_range.0 > cfg.cup_range.1 || cfg.table_range.0 > cfg.table_range.1 {
            return Err(Error::Invalid("thrower ranges must be ordered".into()));
        }
        let reach: f64 = cfg.link_lengths.iter().sum();
        if reach >= -cfg.ground_y {
            return Err(Error::Invalid("arm must not reach the ground".into()));
        }
        cfg.gains.validate(k)?;
        let mut mp = MpSpec::new(cfg.num_basis, cfg.num_zero_basis, k, cfg.horizon as f64 * cfg.dt, cfg.dt)?;
        mp.learn_release_time = true;
        Ok(Self {
            chain: PlanarChain {
                link_lengths: cfg.link_lengths.clone(),
                base: [0.0, 0.0],
            },
            cfg,
            mp,
        })
    }

    pub fn config(&self) -> &ThrowerConfig {
        &self.cfg
    }

    pub fn mp_spec(&self) -> &MpSpec {
        &self.mp
    }

    pub fn chain(&self) -> &PlanarChain {
        &self.chain
    }

    fn duration(&self) -> f64 {
        self.cfg.horizon as f64 * self.cfg.dt
    }

    /// Motion parameters with the primitive stretched over `[0, B]`.
    pub fn motion(&self, params: &[f64]) -> Result<MotionParams> {
        let mut mp = param_split(params, &self.mp)?;
        mp.phase_speed = self.duration() / mp.release_time.max(self.cfg.dt);
        Ok(mp)
    }

    pub fn plan(&self, motion: &MotionParams) -> Result<TrajectoryPlan> {
        generate_trajectory(&self.mp, motion, &self.cfg.start_q)
    }

    pub fn step_view(&self) -> ThrowerStep {
        ThrowerStep {
            sim: Sim::new(self, 0.0),
            env: self.clone(),
        }
    }

    /// PD-track `plan`, releasing the ball after step `floor(B / dt)`.
    pub fn episodic_rollout(
        &self,
        context: &Context,
        plan: &TrajectoryPlan,
        gains: &PdGains,
        release_time: f64,
        keep_trace: bool,
    ) -> Result<(EpisodeOutcome, ThrowOutcome)> {
        check_len("thrower plan horizon", self.cfg.horizon, plan.len())?;
        check_len("thrower context", 1, context.0.len())?;
        gains.validate(self.chain.num_links())?;
        let release_step = math::floor(release_time / self.cfg.dt) as usize;
        let mut sim = Sim::new(self, context.0[0]);
        if release_step == 0 {
            sim.release();
        }
        let k = self.chain.num_links();
        let mut torque = vec![0.0; k];
        let mut trace = keep_trace.then(|| RolloutTrace {
            num_dof: k,
            ..Default::default()
        });
        for step in 0..plan.len() {
            pd_action_into(&sim.state, plan.position(step), plan.velocity(step), gains, &mut torque);
            sim.advance(self, &torque)?;
            if sim.fault {
                let outcome = sim.outcome(self);
                return Ok((
                    EpisodeOutcome {
                        ret: FAULT_RETURN,
                        metric: 0.0,
                        success: false,
                        control_cost: sim.control_cost,
                        fault: true,
                        trace,
                    },
                    outcome,
                ));
            }
            if sim.t == release_step && release_step < plan.len() && sim.released_at.is_none() {
                sim.release();
            }
            if let Some(tr) = trace.as_mut() {
                tr.positions.extend_from_slice(&sim.state.q);
                tr.velocities.extend_from_slice(&sim.state.qdot);
                tr.torques.extend_from_slice(&torque);
                tr.rewards.push(0.0);
            }
        }
        let outcome = sim.outcome(self);
        let ret = thrower_return(&outcome, &sim.torques, release_time, &self.cfg);
        if let Some(tr) = trace.as_mut() {
            *tr.rewards.last_mut().unwrap() = ret;
        }
        let success = outcome.condition == ThrowCondition::InCup;
        Ok((
            EpisodeOutcome {
                ret,
                metric: if success { 1.0 } else { 0.0 },
                success,
                control_cost: sim.control_cost,
                fault: false,
                trace,
            },
            outcome,
        ))
    }

    /// Full rollout from a flat parameter vector, also returning the throw
    /// details and the decoded release time.
    pub fn throw(&self, context: &Context, params: &[f64], keep_trace: bool) -> Result<(EpisodeOutcome, ThrowOutcome, f64)> {
        let motion = self.motion(params)?;
        let plan = self.plan(&motion)?;
        let (ep, th) = self.episodic_rollout(context, &plan, &self.cfg.gains, motion.release_time, keep_trace)?;
        Ok((ep, th, motion.release_time))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ball {
    Held,
    Flying { p0: [f64; 2], v0: [f64; 2], t0: f64 },
    Landed([f64; 2]),
}

#[derive(Debug, Clone)]
struct Sim {
    state: JointState,
    cup_x: f64,
    t: usize,
    ball: Ball,
    ball_pos: [f64; 2],
    ball_vel: [f64; 2],
    released_at: Option<usize>,
    landing: Option<[f64; 2]>,
    path: Vec<[f64; 2]>,
    torques: Vec<f64>,
    control_cost: f64,
    fault: bool,
}

impl Sim {
    fn new(env: &Thrower, cup_x: f64) -> Self {
        let state = JointState::at_rest(env.cfg.start_q.clone());
        let ball_pos = env.chain.end_effector(&state.q);
        Self {
            state,
            cup_x,
            t: 0,
            ball: Ball::Held,
            ball_pos,
            ball_vel: [0.0, 0.0],
            released_at: None,
            landing: None,
            path: Vec::with_capacity(env.cfg.horizon),
            torques: Vec::with_capacity(env.cfg.horizon * env.chain.num_links()),
            control_cost: 0.0,
            fault: false,
        }
    }

    fn time(&self, env: &Thrower) -> f64 {
        self.t as f64 * env.cfg.dt
    }

    fn release(&mut self) {
        if matches!(self.ball, Ball::Held) {
            self.released_at = Some(self.t);
            // Time is filled in by the caller's clock through `t`.
            self.ball = Ball::Flying {
                p0: self.ball_pos,
                v0: self.ball_vel,
                t0: f64::NAN,
            };
        }
    }

    fn advance(&mut self, env: &Thrower, torque: &[f64]) -> Result<()> {
        let cfg = &env.cfg;
        if let Ball::Flying { t0, .. } = &mut self.ball {
            if t0.is_nan() {
                *t0 = self.t as f64 * cfg.dt;
            }
        }
        step_in_place(&mut self.state, torque, cfg.dt, cfg.damping, cfg.inertia)?;
        self.t += 1;
        self.torques.extend_from_slice(torque);
        self.control_cost += torque.iter().map(|a| a * a).sum::<f64>();
        if !self.state.q.iter().chain(&self.state.qdot).all(|x| x.is_finite()) {
            self.fault = true;
            self.path.push(self.ball_pos);
            return Ok(());
        }
        let now = self.time(env);
        match self.ball {
            Ball::Held => {
                let (p, v) = env.chain.end_effector_velocity(&self.state.q, &self.state.qdot);
                self.ball_pos = p;
                self.ball_vel = v;
            }
            Ball::Flying { p0, v0, t0 } => {
                let g = cfg.gravity;
                let s = now - t0;
                let y = p0[1] + v0[1] * s - 0.5 * g * s * s;
                if y <= cfg.ground_y {
                    // Exact crossing time of the ground line.
                    let c = p0[1] - cfg.ground_y;
                    let tc = (v0[1] + math::sqrt(v0[1] * v0[1] + 2.0 * g * c)) / g;
                    let p = [p0[0] + v0[0] * tc, cfg.ground_y];
                    self.landing = Some(p);
                    self.ball = Ball::Landed(p);
                    self.ball_pos = p;
                    self.ball_vel = [0.0, 0.0];
                } else {
                    self.ball_pos = [p0[0] + v0[0] * s, y];
                    self.ball_vel = [v0[0], v0[1] - g * s];
                }
            }
            Ball::Landed(p) => self.ball_pos = p,
        }
        self.path.push(self.ball_pos);
        Ok(())
    }

    fn outcome(&self, env: &Thrower) -> ThrowOutcome {
        let cfg = &env.cfg;
        let mut path = self.path.clone();
        if path.is_empty() {
            path.push(self.ball_pos);
        }
        let (condition, landing) = match self.ball {
            // An unreleased ball drops straight down at the end.
            Ball::Held => (ThrowCondition::GroundFirst, Some([self.ball_pos[0], cfg.ground_y])),
            Ball::Flying { .. } => (ThrowCondition::NoTableContact, None),
            Ball::Landed(p) => {
                let cond = if (p[0] - self.cup_x).abs() <= 0.5 * cfg.cup_width {
                    ThrowCondition::InCup
                } else if p[0] >= cfg.table_range.0 && p[0] <= cfg.table_range.1 {
                    ThrowCondition::TableContact
                } else {
                    ThrowCondition::GroundFirst
                };
                (cond, Some(p))
            }
        };
        ThrowOutcome {
            ball_path: path,
            release_step: self.released_at,
            landing,
            condition,
            cup_x: self.cup_x,
        }
    }
}

impl EpisodicEnv for Thrower {
    fn name(&self) -> &'static str {
        "thrower"
    }

    fn context_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        self.mp.num_params()
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    fn sample_context(&self, stream: &mut RandomStream) -> Context {
        Context(vec![stream.uniform_range(self.cfg.cup_range.0, self.cfg.cup_range.1)])
    }

    fn run(&self, context: &Context, params: &[f64], keep_trace: bool) -> Result<EpisodeOutcome> {
        Ok(self.throw(context, params, keep_trace)?.0)
    }

    fn metric_name(&self) -> &'static str {
        "success"
    }
}

/// Step view. Action is `[torques.., release]`; the ball is let go after the
/// first step whose release entry is positive. Observation:
/// `[sin q, cos q, qdot, cup_x, ball - cup_top, ball - cup_bottom, released, t/T]`.
#[derive(Debug, Clone)]
pub struct ThrowerStep {
    env: Thrower,
    sim: Sim,
}

impl ThrowerStep {
    fn observe(&self) -> Vec<f64> {
        let cfg = &self.env.cfg;
        let s = &self.sim.state;
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.extend(s.q.iter().map(|q| math::sin(*q)));
        obs.extend(s.q.iter().map(|q| math::cos(*q)));
        obs.extend_from_slice(&s.qdot);
        obs.push(self.sim.cup_x);
        let b = self.sim.ball_pos;
        obs.push(b[0] - self.sim.cup_x);
        obs.push(b[1] - (cfg.ground_y + cfg.cup_height));
        obs.push(b[0] - self.sim.cup_x);
        obs.push(b[1] - cfg.ground_y);
        obs.push(if self.sim.released_at.is_some() { 1.0 } else { 0.0 });
        obs.push(self.sim.t as f64 / cfg.horizon as f64);
        obs
    }

    fn release_time(&self) -> f64 {
        self.sim.released_at.unwrap_or(self.env.cfg.horizon) as f64 * self.env.cfg.dt
    }
}

impl StepEnv for ThrowerStep {
    fn obs_dim(&self) -> usize {
        3 * self.env.chain.num_links() + 7
    }

    fn act_dim(&self) -> usize {
        self.env.chain.num_links() + 1
    }

    fn horizon(&self) -> usize {
        self.env.cfg.horizon
    }

    fn reset(&mut self, stream: &mut RandomStream) -> Vec<f64> {
        let ctx = self.env.sample_context(stream);
        self.reset_with(&ctx)
    }

    fn reset_with(&mut self, context: &Context) -> Vec<f64> {
        self.sim = Sim::new(&self.env, context.0[0]);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_len("thrower action", self.act_dim(), action.len())?;
        let k = self.env.chain.num_links();
        let torque: Vec<f64> = action[..k]
            .iter()
            .zip(&self.env.cfg.gains.torque_limit)
            .map(|(a, l)| a.clamp(-l, *l))
            .collect();
        let cfg = self.env.cfg.clone();
        self.sim.advance(&self.env, &torque)?;
        if self.sim.fault {
            return Ok(StepResult {
                obs: vec![0.0; self.obs_dim()],
                reward: FAULT_RETURN,
                done: true,
            });
        }
        if action[k] > 0.0 && self.sim.released_at.is_none() {
            self.sim.release();
        }
        let done = self.sim.t >= cfg.horizon;
        let reward = if done {
            let outcome = self.sim.outcome(&self.env);
            let costs: Vec<f64> = self.sim.torques.chunks(k).map(action_cost).collect();
            -cfg.step_cost_weight * 0.0 + task_reward(&outcome, math::mean(&costs), &cfg)
                + release_penalty(self.release_time(), &cfg)
        } else {
            -cfg.step_cost_weight * action_cost(&torque)
        };
        Ok(StepResult {
            obs: self.observe(),
            reward,
            done,
        })
    }

    fn episode_metric(&self) -> f64 {
        if self.episode_success() {
            1.0
        } else {
            0.0
        }
    }

    fn episode_success(&self) -> bool {
        self.sim.outcome(&self.env).condition == ThrowCondition::InCup
    }

    fn action_limits(&self) -> Vec<f64> {
        let mut l = self.env.cfg.gains.torque_limit.clone();
        l.push(1.0);
        l
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ThrowerConfig {
        ThrowerConfig::default()
    }

    fn outcome(path: Vec<[f64; 2]>, landing: Option<[f64; 2]>, condition: ThrowCondition) -> ThrowOutcome {
        ThrowOutcome {
            ball_path: path,
            release_step: Some(1),
            landing,
            condition,
            cup_x: 1.5,
        }
    }

    #[test]
    fn in_cup_best_case_is_zero() {
        let c = cfg();
        let bottom = [1.5, c.ground_y];
        let o = outcome(vec![[0.0, 0.0], bottom], Some(bottom), ThrowCondition::InCup);
        assert_eq!(thrower_return(&o, &[0.0; 4], 0.5, &c), 0.0);
    }

    #[test]
    fn release_penalty_examples() {
        let c = cfg();
        assert!((release_penalty(0.05, &c) + 30.025).abs() < 1e-12);
        assert!((release_penalty(1.5, &c) + 32.5).abs() < 1e-12);
        assert_eq!(release_penalty(0.1, &c), 0.0);
        assert_eq!(release_penalty(1.0, &c), 0.0);
    }

    #[test]
    fn condition_constants() {
        let c = cfg();
        let top = [1.5, c.ground_y + c.cup_height];
        let bottom = [1.5, c.ground_y];
        // Ball passes through the cup top and ends at the bottom: only the
        // stage constant remains.
        let path = vec![top, bottom];
        let r = |cond| thrower_return(&outcome(path.clone(), Some(bottom), cond), &[0.0; 4], 0.5, &c);
        assert!((r(ThrowCondition::GroundFirst) + 4.0).abs() < 1e-12);
        assert!((r(ThrowCondition::NoTableContact) + 4.0).abs() < 1e-12);
        assert!((r(ThrowCondition::TableContact) + 2.0).abs() < 1e-12);
        assert!((r(ThrowCondition::InCup) - 0.0).abs() < 1e-12);
    }

    #[test]
    fn action_costs() {
        let c = cfg();
        let bottom = [1.5, c.ground_y];
        let o = outcome(vec![bottom, bottom], Some(bottom), ThrowCondition::InCup);
        // Two steps, K = 2: step costs (1+9)/2 = 5 and (4+0)/2 = 2.
        let r = thrower_return(&o, &[1.0, 3.0, 2.0, 0.0], 0.5, &c);
        let expected = -c.step_cost_weight * 5.0 - 1e-4 * 3.5;
        assert!((r - expected).abs() < 1e-15);
    }

    #[test]
    fn path_minimum_matters() {
        let c = cfg();
        let end = [2.3, c.ground_y];
        let near = outcome(vec![[1.5, c.ground_y + 0.15], end], Some(end), ThrowCondition::TableContact);
        let far = outcome(vec![[1.0, 0.0], end], Some(end), ThrowCondition::TableContact);
        let a = thrower_return(&near, &[0.0; 4], 0.5, &c);
        let b = thrower_return(&far, &[0.0; 4], 0.5, &c);
        assert!(a > b);
    }

    #[test]
    fn never_released_is_ground_first() {
        let env = Thrower::new(cfg()).unwrap();
        // Release time saturates at the episode end.
        let plan_params = [0.0, 0.0, 0.0, 0.0, 40.0];
        let (ep, th, b) = env.throw(&Context(vec![1.5]), &plan_params, false).unwrap();
        assert!(b >= 150.0 * 0.02);
        assert!(th.release_step.is_none());
        assert_eq!(th.condition, ThrowCondition::GroundFirst);
        assert!(!ep.success);
    }

    #[test]
    fn ballistic_flight() {
        let env = Thrower::new(cfg()).unwrap();
        let mut sim = Sim::new(&env, 1.5);
        sim.ball_pos = [0.0, 0.0];
        sim.ball_vel = [2.0, 3.0];
        sim.release();
        let torque = [0.0, 0.0];
        let mut prev: Option<[f64; 2]> = None;
        let mut prev2: Option<[f64; 2]> = None;
        for _ in 0..20 {
            sim.advance(&env, &torque).unwrap();
            let p = sim.ball_pos;
            if let (Some(a), Some(b)) = (prev2, prev) {
                if sim.landing.is_none() {
                    // Constant horizontal velocity, constant vertical acceleration.
                    assert!(((p[0] - b[0]) - (b[0] - a[0])).abs() < 1e-9);
                    let acc = (p[1] - 2.0 * b[1] + a[1]) / (0.02 * 0.02);
                    assert!((acc + 9.81).abs() < 1e-6, "{acc}");
                }
            }
            prev2 = prev;
            prev = Some(p);
        }
    }
}
