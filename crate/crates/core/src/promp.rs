//! Movement-primitive trajectory generator.
//!
//! Normalized Gaussian radial basis functions over a phase `z` in `[0, 1]`.
//! Regular basis centers are spaced uniformly on `[0, 1]`; the pinned
//! "zero" bases continue that grid beyond phase 1 and always carry weight 0,
//! so near the end of the motion part of the normalized mass drains into
//! them. Plans are offsets from the episode start position.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Write;

use crate::error::{check_finite, check_len};
use crate::math;
use crate::{Error, Result};

/// Bandwidth such that neighbouring bases cross at 0.6 of their peak.
fn default_bandwidth(spacing: f64) -> f64 {
    spacing / math::sqrt(8.0 * math::ln(1.0 / 0.6))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MpSpec {
    pub num_basis: usize,
    pub num_zero_basis: usize,
    pub num_dof: usize,
    /// Gaussian width in phase units.
    pub basis_bandwidth: f64,
    /// Seconds.
    pub episode_duration: f64,
    /// Seconds.
    pub dt: f64,
    pub learn_start_time: bool,
    pub learn_phase_speed: bool,
    pub learn_release_time: bool,
    /// Upper bound of the learned start time (seconds).
    pub max_start_time: f64,
}

impl MpSpec {
    /// Spec with the default bandwidth for `num_basis` and no temporal parameters.
    pub fn new(num_basis: usize, num_zero_basis: usize, num_dof: usize, episode_duration: f64, dt: f64) -> Result<Self> {
        let spec = Self {
            num_basis,
            num_zero_basis,
            num_dof,
            basis_bandwidth: default_bandwidth(Self::spacing_for(num_basis)),
            episode_duration,
            dt,
            learn_start_time: false,
            learn_phase_speed: false,
            learn_release_time: false,
            max_start_time: 0.5 * episode_duration,
        };
        spec.validate()?;
        Ok(spec)
    }

    fn spacing_for(num_basis: usize) -> f64 {
        if num_basis > 1 {
            1.0 / (num_basis - 1) as f64
        } else {
            1.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_basis == 0 || self.num_dof == 0 {
            return Err(Error::Invalid("movement primitive needs at least one basis and one DoF".into()));
        }
        if !(self.dt > 0.0) || !(self.episode_duration > 0.0) {
            return Err(Error::Invalid("dt and episode duration must be positive".into()));
        }
        if !(self.basis_bandwidth > 0.0) {
            return Err(Error::Invalid("basis bandwidth must be positive".into()));
        }
        let steps = self.episode_duration / self.dt;
        if (steps - math::round(steps)).abs() > 1e-9 * steps.max(1.0) {
            return Err(Error::Invalid(format!(
                "episode duration {} is not a whole number of steps of {}",
                self.episode_duration, self.dt
            )));
        }
        if !(self.max_start_time >= 0.0) {
            return Err(Error::Invalid("max start time must be non-negative".into()));
        }
        Ok(())
    }

    /// Control steps per episode.
    pub fn horizon(&self) -> usize {
        math::round(self.episode_duration / self.dt) as usize
    }

    pub fn num_basis_total(&self) -> usize {
        self.num_basis + self.num_zero_basis
    }

    pub fn num_temporal(&self) -> usize {
        [self.learn_start_time, self.learn_phase_speed, self.learn_release_time]
            .iter()
            .filter(|f| **f)
            .count()
    }

    /// Length of the flat parameter vector sampled by the policy.
    pub fn num_params(&self) -> usize {
        self.num_dof * self.num_basis + self.num_temporal()
    }

    pub fn centers(&self) -> Vec<f64> {
        let h = Self::spacing_for(self.num_basis);
        (0..self.num_basis_total()).map(|j| j as f64 * h).collect()
    }
}

/// Row-major `rows x cols` basis values and their phase derivatives.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
    pub derivatives: Vec<f64>,
}

impl BasisMatrix {
    pub fn row(&self, r: usize) -> &[f64] {
        &self.values[r * self.cols..(r + 1) * self.cols]
    }

    pub fn derivative_row(&self, r: usize) -> &[f64] {
        &self.derivatives[r * self.cols..(r + 1) * self.cols]
    }
}

fn basis_row(centers: &[f64], width: f64, z: f64, val: &mut [f64], der: &mut [f64]) {
    let inv = 1.0 / (width * width);
    let exps: Vec<f64> = centers.iter().map(|c| -0.5 * (z - c) * (z - c) * inv).collect();
    let top = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (v, e) in val.iter_mut().zip(&exps) {
        *v = math::exp(e - top);
        sum += *v;
    }
    let mut mean_slope = 0.0;
    for (v, c) in val.iter_mut().zip(centers) {
        *v /= sum;
        mean_slope += *v * (z - c) * inv;
    }
    for ((d, v), c) in der.iter_mut().zip(val.iter()).zip(centers) {
        *d = v * (-(z - c) * inv + mean_slope);
    }
}

pub fn basis_matrix(spec: &MpSpec, phases: &[f64]) -> Result<BasisMatrix> {
    if phases.is_empty() {
        return Err(Error::Invalid("basis matrix needs at least one phase".into()));
    }
    check_finite("phases", phases)?;
    let centers = spec.centers();
    let cols = centers.len();
    let mut m = BasisMatrix {
        rows: phases.len(),
        cols,
        values: vec![0.0; phases.len() * cols],
        derivatives: vec![0.0; phases.len() * cols],
    };
    for (r, &z) in phases.iter().enumerate() {
        basis_row(
            &centers,
            spec.basis_bandwidth,
            z,
            &mut m.values[r * cols..(r + 1) * cols],
            &mut m.derivatives[r * cols..(r + 1) * cols],
        );
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionParams {
    /// `num_dof x num_basis`, row-major.
    pub weights: Vec<f64>,
    pub start_time: f64,
    pub phase_speed: f64,
    pub release_time: f64,
}

impl MotionParams {
    pub fn dof_weights(&self, dof: usize, num_basis: usize) -> &[f64] {
        &self.weights[dof * num_basis..(dof + 1) * num_basis]
    }
}

/// Map a flat sampled vector to motion parameters.
///
/// Temporal entries follow the weights in the order start time, phase speed,
/// release time (only those enabled). Start time is `max_start * sigmoid(x)`,
/// phase speed `softplus(x) / ln 2` (equal to 1 at 0), release time
/// `duration * sigmoid(x)`. Disabled entries default to `0`, `1` and the
/// episode duration.
pub fn param_split(flat: &[f64], spec: &MpSpec) -> Result<MotionParams> {
    check_len("motion parameter vector", spec.num_params(), flat.len())?;
    check_finite("motion parameters", flat)?;
    let nw = spec.num_dof * spec.num_basis;
    let mut rest = flat[nw..].iter();
    let mut p = MotionParams {
        weights: flat[..nw].to_vec(),
        start_time: 0.0,
        phase_speed: 1.0,
        release_time: spec.episode_duration,
    };
    if spec.learn_start_time {
        p.start_time = spec.max_start_time * math::sigmoid(*rest.next().unwrap());
    }
    if spec.learn_phase_speed {
        p.phase_speed = math::softplus(*rest.next().unwrap()) / core::f64::consts::LN_2;
    }
    if spec.learn_release_time {
        p.release_time = spec.episode_duration * math::sigmoid(*rest.next().unwrap());
    }
    Ok(p)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryPlan {
    pub num_dof: usize,
    pub times: Vec<f64>,
    /// `T x num_dof`, row-major.
    pub positions: Vec<f64>,
    /// `T x num_dof`, row-major.
    pub velocities: Vec<f64>,
}

impl TrajectoryPlan {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn position(&self, k: usize) -> &[f64] {
        &self.positions[k * self.num_dof..(k + 1) * self.num_dof]
    }

    pub fn velocity(&self, k: usize) -> &[f64] {
        &self.velocities[k * self.num_dof..(k + 1) * self.num_dof]
    }

    /// Whitespace-separated table: a `#` header naming the columns
    /// `time q0.. qd0..`, then one row per step.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        s.push_str("# time");
        for i in 0..self.num_dof {
            let _ = write!(s, " q{i}");
        }
        for i in 0..self.num_dof {
            let _ = write!(s, " qd{i}");
        }
        s.push('\n');
        for k in 0..self.len() {
            let _ = write!(s, "{:?}", self.times[k]);
            for v in self.position(k).iter().chain(self.velocity(k)) {
                let _ = write!(s, " {v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_table(text: &str) -> Result<Self> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines
            .next()
            .ok_or_else(|| Error::Invalid("empty trajectory table".into()))?;
        let cols: Vec<&str> = header.trim_start_matches('#').split_whitespace().collect();
        if cols.first() != Some(&"time") || cols.len() % 2 == 0 {
            return Err(Error::Invalid("malformed trajectory table header".into()));
        }
        let num_dof = (cols.len() - 1) / 2;
        let mut plan = TrajectoryPlan {
            num_dof,
            times: Vec::new(),
            positions: Vec::new(),
            velocities: Vec::new(),
        };
        for (n, line) in lines.enumerate() {
            let vals: core::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse).collect();
            let vals = vals.map_err(|e| Error::Invalid(format!("trajectory row {n}: {e}")))?;
            check_len("trajectory row", cols.len(), vals.len())?;
            plan.times.push(vals[0]);
            plan.positions.extend_from_slice(&vals[1..1 + num_dof]);
            plan.velocities.extend_from_slice(&vals[1 + num_dof..]);
        }
        Ok(plan)
    }
}

/// Phase at time `t` and its time derivative (zero while clamped).
fn phase_at(t: f64, params: &MotionParams, duration: f64) -> (f64, f64) {
    let raw = params.phase_speed * (t - params.start_time) / duration;
    if raw < 0.0 {
        (0.0, 0.0)
    } else if raw >= 1.0 {
        (1.0, 0.0)
    } else {
        (raw, params.phase_speed / duration)
    }
}

/// Desired trajectory sampled at `t_k = k * dt`, `k = 0..T`.
pub fn generate_trajectory(spec: &MpSpec, params: &MotionParams, start_pos: &[f64]) -> Result<TrajectoryPlan> {
    check_len("start position", spec.num_dof, start_pos.len())?;
    check_len("motion weights", spec.num_dof * spec.num_basis, params.weights.len())?;
    check_finite("motion weights", &params.weights)?;
    if !(params.phase_speed > 0.0) || !params.start_time.is_finite() {
        return Err(Error::Invalid("phase speed must be positive and start time finite".into()));
    }
    let horizon = spec.horizon();
    let times: Vec<f64> = (0..horizon).map(|k| k as f64 * spec.dt).collect();
    let centers = spec.centers();
    let nb = spec.num_basis;
    let dof = spec.num_dof;
    let mut plan = TrajectoryPlan {
        num_dof: dof,
        times,
        positions: vec![0.0; horizon * dof],
        velocities: vec![0.0; horizon * dof],
    };
    let mut val = vec![0.0; centers.len()];
    let mut der = vec![0.0; centers.len()];
    for k in 0..horizon {
        let t = plan.times[k];
        let row = k * dof;
        if t < params.start_time {
            plan.positions[row..row + dof].copy_from_slice(start_pos);
            continue;
        }
        let (z, dz) = phase_at(t, params, spec.episode_duration);
        basis_row(&centers, spec.basis_bandwidth, z, &mut val, &mut der);
        for i in 0..dof {
            // Zero-basis columns (index >= nb) carry pinned zero weights.
            let w = params.dof_weights(i, nb);
            plan.positions[row + i] = start_pos[i] + math::dot(&val[..nb], w);
            plan.velocities[row + i] = dz * math::dot(&der[..nb], w);
        }
    }
    Ok(plan)
}
