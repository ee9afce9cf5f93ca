//! PD trajectory tracking and decoupled joint dynamics.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{check_finite, check_len};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct JointState {
    pub q: Vec<f64>,
    pub qdot: Vec<f64>,
}

impl JointState {
    pub fn at_rest(q: Vec<f64>) -> Self {
        let n = q.len();
        Self { q, qdot: vec![0.0; n] }
    }

    pub fn kinetic_energy(&self, inertia: f64) -> f64 {
        0.5 * inertia * self.qdot.iter().map(|v| v * v).sum::<f64>()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdGains {
    pub kp: Vec<f64>,
    pub kd: Vec<f64>,
    pub torque_limit: Vec<f64>,
}

impl PdGains {
    pub fn uniform(num_dof: usize, kp: f64, kd: f64, torque_limit: f64) -> Self {
        Self {
            kp: vec![kp; num_dof],
            kd: vec![kd; num_dof],
            torque_limit: vec![torque_limit; num_dof],
        }
    }

    pub fn validate(&self, num_dof: usize) -> Result<()> {
        check_len("kp", num_dof, self.kp.len())?;
        check_len("kd", num_dof, self.kd.len())?;
        check_len("torque limit", num_dof, self.torque_limit.len())?;
        if !self.kp.iter().all(|k| *k > 0.0)
            || !self.kd.iter().all(|k| *k >= 0.0)
            || !self.torque_limit.iter().all(|k| *k > 0.0)
        {
            return Err(Error::Invalid("gains need kp > 0, kd >= 0, torque_limit > 0".into()));
        }
        Ok(())
    }
}

/// `clip(kp (q_d - q) + kd (qd_d - qd), +-limit)`, written into `out`.
pub fn pd_action_into(
    state: &JointState,
    desired_pos: &[f64],
    desired_vel: &[f64],
    gains: &PdGains,
    out: &mut [f64],
) {
    for i in 0..out.len() {
        let u = gains.kp[i] * (desired_pos[i] - state.q[i]) + gains.kd[i] * (desired_vel[i] - state.qdot[i]);
        let lim = gains.torque_limit[i];
        out[i] = u.clamp(-lim, lim);
    }
}

pub fn pd_action(state: &JointState, desired_pos: &[f64], desired_vel: &[f64], gains: &PdGains) -> Result<Vec<f64>> {
    let n = state.q.len();
    check_len("desired position", n, desired_pos.len())?;
    check_len("desired velocity", n, desired_vel.len())?;
    gains.validate(n)?;
    let mut out = vec![0.0; n];
    pd_action_into(state, desired_pos, desired_vel, gains, &mut out);
    Ok(out)
}

/// Semi-implicit Euler step in place.
pub fn step_in_place(state: &mut JointState, torque: &[f64], dt: f64, damping: f64, inertia: f64) -> Result<()> {
    check_finite("torque", torque)?;
    for i in 0..state.q.len() {
        state.qdot[i] += dt * (torque[i] - damping * state.qdot[i]) / inertia;
        state.q[i] += dt * state.qdot[i];
    }
    Ok(())
}

pub fn step_dynamics(state: &JointState, torque: &[f64], dt: f64, damping: f64, inertia: f64) -> Result<JointState> {
    check_len("torque", state.q.len(), torque.len())?;
    if !(dt > 0.0) || !(inertia > 0.0) {
        return Err(Error::Invalid("dt and inertia must be positive".into()));
    }
    let mut next = state.clone();
    step_in_place(&mut next, torque, dt, damping, inertia)?;
    Ok(next)
}
