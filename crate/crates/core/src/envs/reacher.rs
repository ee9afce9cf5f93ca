use alloc::vec;
use alloc::vec::Vec;

use super::{Context, EpisodeOutcome, EpisodicEnv, PlanarChain, RolloutTrace, StepEnv, StepResult, FAULT_RETURN};
use crate::error::check_len;
use crate::math;
use crate::numkit::RandomStream;
use crate::promp::{generate_trajectory, param_split, MpSpec, TrajectoryPlan};
use crate::track::{pd_action_into, step_in_place, JointState, PdGains};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ReacherConfig {
    pub num_links: usize,
    pub link_length: f64,
    /// Goals are drawn from the upper half-disk of this radius.
    pub goal_radius: f64,
    pub sparse: bool,
    /// Multiplier on the action cost `sum_i a_i^2`.
    pub action_penalty: f64,
    /// Sparse terminal weight on the goal distance.
    pub goal_weight: f64,
    /// Sparse terminal weight on `sum_i qdot_i^2`.
    pub velocity_weight: f64,
    pub dt: f64,
    pub horizon: usize,
    pub inertia: f64,
    pub damping: f64,
    pub gains: PdGains,
    pub num_basis: usize,
    pub num_zero_basis: usize,
}

impl Default for ReacherConfig {
    fn default() -> Self {
        Self {
            num_links: 5,
            link_length: 0.1,
            goal_radius: 0.5,
            sparse: false,
            action_penalty: 1.0,
            goal_weight: 200.0,
            velocity_weight: 10.0,
            dt: 0.02,
            horizon: 200,
            inertia: 0.1,
            damping: 0.05,
            gains: PdGains::uniform(5, 50.0, 5.0, 10.0),
            num_basis: 5,
            num_zero_basis: 1,
        }
    }
}

/// `-penalty * sum_i a_i^2 - distance`.
pub fn reacher_reward_dense(distance: f64, action: &[f64], action_penalty: f64) -> f64 {
    -action_penalty * action.iter().map(|a| a * a).sum::<f64>() - distance
}

/// Action cost every step; goal distance and joint-velocity penalties only
/// at the final step `t == horizon` (steps count from 1).
pub fn reacher_reward_sparse(
    distance: f64,
    qdot: &[f64],
    action: &[f64],
    t: usize,
    horizon: usize,
    cfg: &ReacherConfig,
) -> f64 {
    let ctrl = -cfg.action_penalty * action.iter().map(|a| a * a).sum::<f64>();
    if t < horizon {
        ctrl
    } else {
        ctrl - cfg.goal_weight * distance - cfg.velocity_weight * qdot.iter().map(|v| v * v).sum::<f64>()
    }
}

#[derive(Debug, Clone)]
pub struct Reacher {
    cfg: ReacherConfig,
    chain: PlanarChain,
    mp: MpSpec,
}

impl Reacher {
    pub fn new(cfg: ReacherConfig) -> Result<Self> {
        if cfg.num_links == 0 || cfg.horizon == 0 {
            return Err(Error::Invalid("reacher needs links and a positive horizon".into()));
        }
        if !(cfg.goal_radius > 0.0) || cfg.goal_radius > cfg.num_links as f64 * cfg.link_length + 1e-12 {
            return Err(Error::Invalid("goal radius must be positive and within reach".into()));
        }
        if !(cfg.inertia > 0.0) || !(cfg.dt > 0.0) || !(cfg.damping >= 0.0) || !(cfg.action_penalty >= 0.0) {
            return Err(Error::Invalid("reacher physical constants out of range".into()));
        }
        cfg.gains.validate(cfg.num_links)?;
        let mp = MpSpec::new(
            cfg.num_basis,
            cfg.num_zero_basis,
            cfg.num_links,
            cfg.horizon as f64 * cfg.dt,
            cfg.dt,
        )?;
        Ok(Self {
            chain: PlanarChain::uniform(cfg.num_links, cfg.link_length),
            cfg,
            mp,
        })
    }

    pub fn config(&self) -> &ReacherConfig {
        &self.cfg
    }

    pub fn mp_spec(&self) -> &MpSpec {
        &self.mp
    }

    pub fn chain(&self) -> &PlanarChain {
        &self.chain
    }

    pub fn start_state(&self) -> JointState {
        JointState::at_rest(vec![0.0; self.cfg.num_links])
    }

    pub fn plan(&self, params: &[f64]) -> Result<TrajectoryPlan> {
        let mp = param_split(params, &self.mp)?;
        generate_trajectory(&self.mp, &mp, &self.start_state().q)
    }

    pub fn step_view(&self) -> ReacherStep {
        ReacherStep {
            sim: Sim::new(self, &Context(vec![0.0, 0.0])),
            env: self.clone(),
        }
    }

    /// PD-track `plan` from the start state and accumulate the task reward.
    pub fn episodic_rollout(
        &self,
        context: &Context,
        plan: &TrajectoryPlan,
        gains: &PdGains,
        keep_trace: bool,
    ) -> Result<EpisodeOutcome> {
        check_len("reacher plan horizon", self.cfg.horizon, plan.len())?;
        check_len("reacher plan dof", self.cfg.num_links, plan.num_dof)?;
        gains.validate(self.cfg.num_links)?;
        let mut sim = Sim::new(self, context);
        let mut trace = keep_trace.then(|| RolloutTrace {
            num_dof: self.cfg.num_links,
            ..Default::default()
        });
        let mut torque = vec![0.0; self.cfg.num_links];
        let mut ret = 0.0;
        for k in 0..plan.len() {
            pd_action_into(&sim.state, plan.position(k), plan.velocity(k), gains, &mut torque);
            let r = sim.apply(self, &torque)?;
            if sim.fault {
                return Ok(EpisodeOutcome {
                    ret: FAULT_RETURN,
                    metric: f64::INFINITY,
                    success: false,
                    control_cost: sim.control_cost,
                    fault: true,
                    trace,
                });
            }
            ret += r;
            if let Some(tr) = trace.as_mut() {
                tr.positions.extend_from_slice(&sim.state.q);
                tr.velocities.extend_from_slice(&sim.state.qdot);
                tr.torques.extend_from_slice(&torque);
                tr.rewards.push(r);
            }
        }
        let dist = sim.distance(self);
        Ok(EpisodeOutcome {
            ret,
            metric: dist,
            success: dist <= 0.05,
            control_cost: sim.control_cost,
            fault: false,
            trace,
        })
    }
}

/// Shared stepping core for both views.
#[derive(Debug, Clone)]
struct Sim {
    state: JointState,
    goal: [f64; 2],
    t: usize,
    control_cost: f64,
    fault: bool,
}

impl Sim {
    fn new(env: &Reacher, context: &Context) -> Self {
        Self {
            state: env.start_state(),
            goal: [context.0[0], context.0[1]],
            t: 0,
            control_cost: 0.0,
            fault: false,
        }
    }

    fn distance(&self, env: &Reacher) -> f64 {
        let p = env.chain.end_effector(&self.state.q);
        math::sqrt(math::sq(p[0] - self.goal[0]) + math::sq(p[1] - self.goal[1]))
    }

    /// Apply one torque, advance the dynamics and return the step reward.
    fn apply(&mut self, env: &Reacher, torque: &[f64]) -> Result<f64> {
        let cfg = &env.cfg;
        step_in_place(&mut self.state, torque, cfg.dt, cfg.damping, cfg.inertia)?;
        self.t += 1;
        self.control_cost += torque.iter().map(|a| a * a).sum::<f64>();
        if !self.state.q.iter().chain(&self.state.qdot).all(|x| x.is_finite()) {
            self.fault = true;
            return Ok(FAULT_RETURN);
        }
        let d = self.distance(env);
        Ok(if cfg.sparse {
            reacher_reward_sparse(d, &self.state.qdot, torque, self.t, cfg.horizon, cfg)
        } else {
            reacher_reward_dense(d, torque, cfg.action_penalty)
        })
    }
}

impl EpisodicEnv for Reacher {
    fn name(&self) -> &'static str {
        if self.cfg.sparse {
            "reacher-sparse"
        } else {
            "reacher-dense"
        }
    }

    fn context_dim(&self) -> usize {
        2
    }

    fn param_dim(&self) -> usize {
        self.mp.num_params()
    }

    fn horizon(&self) -> usize {
        self.cfg.horizon
    }

    /// Uniform on the upper half-disk, by rejection from the bounding box.
    fn sample_context(&self, stream: &mut RandomStream) -> Context {
        let r = self.cfg.goal_radius;
        loop {
            let x = stream.uniform_range(-r, r);
            let y = stream.uniform_range(0.0, r);
            if x * x + y * y <= r * r {
                return Context(vec![x, y]);
            }
        }
    }

    fn run(&self, context: &Context, params: &[f64], keep_trace: bool) -> Result<EpisodeOutcome> {
        check_len("reacher context", 2, context.0.len())?;
        let plan = self.plan(params)?;
        self.episodic_rollout(context, &plan, &self.cfg.gains, keep_trace)
    }

    fn metric_name(&self) -> &'static str {
        "final_distance"
    }
}

/// Step view: observation `[sin q, cos q, qdot, goal]`, plus the normalized
/// step index for the sparse variant.
#[derive(Debug, Clone)]
pub struct ReacherStep {
    env: Reacher,
    sim: Sim,
}

impl ReacherStep {
    fn observe(&self) -> Vec<f64> {
        let s = &self.sim.state;
        let mut obs = Vec::with_capacity(self.obs_dim());
        obs.extend(s.q.iter().map(|q| math::sin(*q)));
        obs.extend(s.q.iter().map(|q| math::cos(*q)));
        obs.extend_from_slice(&s.qdot);
        obs.extend_from_slice(&self.sim.goal);
        if self.env.cfg.sparse {
            obs.push(self.sim.t as f64 / self.env.cfg.horizon as f64);
        }
        obs
    }

    pub fn control_cost(&self) -> f64 {
        self.sim.control_cost
    }
}

impl StepEnv for ReacherStep {
    fn obs_dim(&self) -> usize {
        3 * self.env.cfg.num_links + 2 + usize::from(self.env.cfg.sparse)
    }

    fn act_dim(&self) -> usize {
        self.env.cfg.num_links
    }

    fn horizon(&self) -> usize {
        self.env.cfg.horizon
    }

    fn reset(&mut self, stream: &mut RandomStream) -> Vec<f64> {
        let ctx = self.env.sample_context(stream);
        self.reset_with(&ctx)
    }

    fn reset_with(&mut self, context: &Context) -> Vec<f64> {
        self.sim = Sim::new(&self.env, context);
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        check_len("reacher action", self.act_dim(), action.len())?;
        let torque: Vec<f64> = action
            .iter()
            .zip(&self.env.cfg.gains.torque_limit)
            .map(|(a, l)| a.clamp(-l, *l))
            .collect();
        let reward = self.sim.apply(&self.env, &torque)?;
        let done = self.sim.fault || self.sim.t >= self.env.cfg.horizon;
        Ok(StepResult {
            obs: if self.sim.fault { vec![0.0; self.obs_dim()] } else { self.observe() },
            reward,
            done,
        })
    }

    fn episode_metric(&self) -> f64 {
        self.sim.distance(&self.env)
    }

    fn episode_success(&self) -> bool {
        self.sim.distance(&self.env) <= 0.05
    }

    fn action_limits(&self) -> Vec<f64> {
        self.env.cfg.gains.torque_limit.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::DrawKind;

    fn reacher(sparse: bool) -> Reacher {
        Reacher::new(ReacherConfig {
            sparse,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn dense_reward_examples() {
        assert_eq!(reacher_reward_dense(0.0, &[0.0; 5], 1.0), 0.0);
        let r = reacher_reward_dense(0.1, &[0.1, 0.0, 0.0, 0.0, 0.0], 1.0);
        assert!((r + 0.11).abs() < 1e-15);
    }

    #[test]
    fn sparse_reward_examples() {
        let cfg = ReacherConfig::default();
        assert_eq!(cfg.goal_weight, 200.0);
        assert_eq!(cfg.velocity_weight, 10.0);
        assert_eq!(reacher_reward_sparse(0.3, &[1.0; 5], &[0.0; 5], 10, 200, &cfg), 0.0);
        let r = reacher_reward_sparse(0.05, &[0.0; 5], &[0.0; 5], 200, 200, &cfg);
        assert!((r + 10.0).abs() < 1e-12);
    }

    #[test]
    fn dense_reward_never_positive() {
        let mut s = RandomStream::new(3, 3);
        for _ in 0..1000 {
            let a = s.draw(DrawKind::StandardNormal, 5);
            assert!(reacher_reward_dense(s.uniform(), &a, 1.0) <= 0.0);
        }
    }

    #[test]
    fn contexts_in_upper_half_disk() {
        let env = reacher(false);
        let mut s = RandomStream::new(1, 0);
        let mut max_r: f64 = 0.0;
        for _ in 0..10_000 {
            let c = env.sample_context(&mut s);
            assert!(c.0[1] >= 0.0);
            max_r = max_r.max(math::sqrt(c.0[0] * c.0[0] + c.0[1] * c.0[1]));
        }
        assert!(max_r <= 0.5);
        let mut a = RandomStream::new(5, 5);
        let mut b = RandomStream::new(5, 5);
        assert_eq!(env.sample_context(&mut a), env.sample_context(&mut b));
    }

    #[test]
    fn zero_plan_dense_return() {
        let env = reacher(false);
        let ctx = Context(vec![0.1, 0.3]);
        let out = env.run(&ctx, &[0.0; 25], true).unwrap();
        let d0 = math::sqrt(0.4f64.powi(2) + 0.3f64.powi(2));
        assert!((out.ret + 200.0 * d0).abs() < 1e-9);
        assert_eq!(out.control_cost, 0.0);
        assert!((out.metric - d0).abs() < 1e-12);
    }

    #[test]
    fn rollout_is_deterministic() {
        let env = reacher(true);
        let ctx = Context(vec![-0.2, 0.2]);
        let mut s = RandomStream::new(0, 0);
        let w = s.draw(DrawKind::StandardNormal, 25);
        let a = env.run(&ctx, &w, false).unwrap();
        let b = env.run(&ctx, &w, false).unwrap();
        assert_eq!(a.ret.to_bits(), b.ret.to_bits());
    }

    #[test]
    fn observation_layout() {
        let mut dense = reacher(false).step_view();
        let mut s = RandomStream::new(1, 1);
        assert_eq!(dense.reset(&mut s).len(), 17);
        let mut sparse = reacher(true).step_view();
        let obs = sparse.reset(&mut s);
        assert_eq!(obs.len(), 18);
        assert_eq!(obs[17], 0.0);
        let next = sparse.step(&[0.0; 5]).unwrap();
        assert!((next.obs[17] - 1.0 / 200.0).abs() < 1e-15);
        assert!(sparse.step(&[0.0; 4]).is_err());
    }

    #[test]
    fn step_view_ends_at_horizon() {
        let mut env = reacher(false).step_view();
        let mut s = RandomStream::new(1, 1);
        env.reset(&mut s);
        for k in 0..200 {
            let r = env.step(&[0.0; 5]).unwrap();
            assert_eq!(r.done, k == 199);
        }
    }

    #[test]
    fn diverging_dynamics_fault() {
        let env = Reacher::new(ReacherConfig {
            inertia: 1e-300,
            ..Default::default()
        })
        .unwrap();
        let out = env.run(&Context(vec![0.0, 0.3]), &[1.0; 25], false).unwrap();
        assert!(out.fault);
        assert_eq!(out.ret, FAULT_RETURN);
    }
}
