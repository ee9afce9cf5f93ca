//! Differentiable KL trust-region projection for diagonal Gaussians.
//!
//! The mean is projected in closed form through its Lagrange multiplier.
//! The covariance projection interpolates precisions,
//! `1/v~ = (eta/v_old + 1/v) / (eta + 1)`, and the multiplier `eta` is found
//! by bracketed root finding on the active constraint, parametrized by
//! `t = 1/(1 + eta)` in `(0, 1]`. Gradients come from differentiating the
//! closed form (mean) and the implicit function theorem on the active
//! constraint (covariance).

use alloc::format;
use alloc::vec::Vec;

use crate::error::check_len;
use crate::gauss::{cov_part, kl_parts_grad, mean_part, DiagGaussian, MeanStdGrad};
use crate::math;
use crate::{Error, Result};

const MAX_ROOT_ITERS: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrustRegion {
    pub eps_mean: f64,
    pub eps_cov: f64,
    pub penalty_weight: f64,
}

impl TrustRegion {
    pub fn new(eps_mean: f64, eps_cov: f64, penalty_weight: f64) -> Result<Self> {
        let tr = Self {
            eps_mean,
            eps_cov,
            penalty_weight,
        };
        tr.validate()?;
        Ok(tr)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps_mean > 0.0) {
            return Err(Error::Invalid(format!("eps_mean must be positive, got {}", self.eps_mean)));
        }
        if !(self.eps_cov > 0.0) {
            return Err(Error::Invalid(format!("eps_cov must be positive, got {}", self.eps_cov)));
        }
        if !(self.penalty_weight >= 0.0) {
            return Err(Error::Invalid("penalty weight must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    pub projected: DiagGaussian,
    /// Mean multiplier omega, zero when the mean bound is inactive.
    pub mean_multiplier: f64,
    /// Covariance multiplier eta, zero when the covariance bound is inactive.
    pub cov_multiplier: f64,
    pub mean_active: bool,
    pub cov_active: bool,
    raw: DiagGaussian,
    old: DiagGaussian,
}

impl ProjectionResult {
    pub fn raw(&self) -> &DiagGaussian {
        &self.raw
    }

    pub fn old(&self) -> &DiagGaussian {
        &self.old
    }
}

/// Closed-form mean projection. Returns the projected mean and omega.
pub fn project_mean(mean: &[f64], old: &DiagGaussian, eps_mean: f64) -> Result<(Vec<f64>, f64)> {
    if !(eps_mean > 0.0) {
        return Err(Error::Invalid(format!("eps_mean must be positive, got {eps_mean}")));
    }
    check_len("projected mean", old.dim(), mean.len())?;
    let dist = mean_part(mean, old.mean(), old.std());
    if dist <= eps_mean {
        return Ok((mean.to_vec(), 0.0));
    }
    let scale = math::sqrt(eps_mean / dist);
    let omega = math::sqrt(dist / eps_mean) - 1.0;
    let proj = mean
        .iter()
        .zip(old.mean())
        .map(|(m, mo)| mo + scale * (m - mo))
        .collect();
    Ok((proj, omega))
}

/// Projected variances for interpolation weight `t` (t = 1 keeps `var`).
fn interp_var(t: f64, var: &[f64], old_var: &[f64], out: &mut [f64]) {
    for i in 0..var.len() {
        out[i] = 1.0 / ((1.0 - t) / old_var[i] + t / var[i]);
    }
}

/// Constraint value and its derivative in `t` along the interpolation path.
fn cov_constraint(t: f64, var: &[f64], old_var: &[f64], scratch: &mut [f64]) -> (f64, f64) {
    interp_var(t, var, old_var, scratch);
    let mut c = 0.0;
    let mut dc = 0.0;
    for i in 0..var.len() {
        let vt = scratch[i];
        let x = vt / old_var[i];
        c += x - 1.0 - math::ln(x);
        let dvt = -vt * vt * (1.0 / var[i] - 1.0 / old_var[i]);
        dc += (1.0 / old_var[i] - 1.0 / vt) * dvt;
    }
    (c, dc)
}

/// Solve the active covariance constraint for `t = 1/(1+eta)`.
fn solve_cov_t(var: &[f64], old_var: &[f64], eps_cov: f64) -> Result<f64> {
    let mut scratch = alloc::vec![0.0; var.len()];
    // c(0) = 0 < eps, c(1) > eps, and c is increasing in t.
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    let mut t = 0.5;
    let tol = 1e-13 * eps_cov.max(1e-3);
    for _ in 0..MAX_ROOT_ITERS {
        let (c, dc) = cov_constraint(t, var, old_var, &mut scratch);
        if !c.is_finite() {
            return Err(Error::Projection(format!("non-finite constraint value at t={t}")));
        }
        let r = c - eps_cov;
        if r > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        if r.abs() <= tol {
            return Ok(t);
        }
        if hi - lo <= f64::EPSILON * hi {
            // Never hand back a point on the infeasible side.
            return Ok(lo);
        }
        let newton = t - r / dc;
        t = if dc > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    Err(Error::Projection(format!(
        "covariance multiplier not found within {MAX_ROOT_ITERS} iterations (bracket [{lo}, {hi}], eps {eps_cov}, d {})",
        var.len()
    )))
}

/// Covariance projection. Returns the projected std and eta.
pub fn project_cov(std: &[f64], old: &DiagGaussian, eps_cov: f64) -> Result<(Vec<f64>, f64)> {
    if !(eps_cov > 0.0) {
        return Err(Error::Invalid(format!("eps_cov must be positive, got {eps_cov}")));
    }
    check_len("projected std", old.dim(), std.len())?;
    if !std.iter().all(|s| *s > 0.0 && s.is_finite()) {
        return Err(Error::Invalid("std must be positive and finite".into()));
    }
    if cov_part(std, old.std()) <= eps_cov {
        return Ok((std.to_vec(), 0.0));
    }
    let var: Vec<f64> = std.iter().map(|s| s * s).collect();
    let old_var: Vec<f64> = old.std().iter().map(|s| s * s).collect();
    let t = solve_cov_t(&var, &old_var, eps_cov)?;
    let mut pv = alloc::vec![0.0; var.len()];
    interp_var(t, &var, &old_var, &mut pv);
    let eta = 1.0 / t - 1.0;
    Ok((pv.into_iter().map(math::sqrt).collect(), eta))
}

/// Project `raw` into the trust region around `old`.
pub fn project(raw: &DiagGaussian, old: &DiagGaussian, tr: &TrustRegion) -> Result<ProjectionResult> {
    check_len("projection reference", old.dim(), raw.dim())?;
    let (mean, omega) = project_mean(raw.mean(), old, tr.eps_mean)?;
    let (std, eta) = project_cov(raw.std(), old, tr.eps_cov)?;
    Ok(ProjectionResult {
        projected: DiagGaussian::new(mean, std)?,
        mean_multiplier: omega,
        cov_multiplier: eta,
        mean_active: omega > 0.0,
        cov_active: eta > 0.0,
        raw: raw.clone(),
        old: old.clone(),
    })
}

/// Vector-Jacobian product of the projection: maps gradients with respect to
/// the projected `(mean, std)` to gradients with respect to the raw ones. The
/// old distribution is a constant.
pub fn project_backward(
    raw: &DiagGaussian,
    old: &DiagGaussian,
    result: &ProjectionResult,
    out_grad: &MeanStdGrad,
) -> Result<MeanStdGrad> {
    if raw != &result.raw || old != &result.old {
        return Err(Error::Invalid(
            "projection backward called with inputs that differ from the forward pass".into(),
        ));
    }
    let d = raw.dim();
    check_len("projection mean gradient", d, out_grad.mean.len())?;
    check_len("projection std gradient", d, out_grad.std.len())?;
    let mut g = MeanStdGrad::zeros(d);

    if result.mean_active {
        let so = old.std();
        let delta: Vec<f64> = raw.mean().iter().zip(old.mean()).map(|(m, mo)| m - mo).collect();
        let dist = mean_part(raw.mean(), old.mean(), so);
        let scale = 1.0 / (1.0 + result.mean_multiplier);
        let proj_g = math::dot(&out_grad.mean, &delta);
        for j in 0..d {
            g.mean[j] = scale * out_grad.mean[j] - scale * proj_g * delta[j] / (dist * so[j] * so[j]);
        }
    } else {
        g.mean.copy_from_slice(&out_grad.mean);
    }

    if result.cov_active {
        let t = 1.0 / (1.0 + result.cov_multiplier);
        let var: Vec<f64> = raw.std().iter().map(|s| s * s).collect();
        let old_var: Vec<f64> = old.std().iter().map(|s| s * s).collect();
        let pstd = result.projected.std();
        // d v~_i / d t, d v~_i / d v_i, and d c / d v~_i.
        let mut dv_dt = alloc::vec![0.0; d];
        let mut dv_dv = alloc::vec![0.0; d];
        let mut dc_dv = alloc::vec![0.0; d];
        let mut dc_dt = 0.0;
        let mut gt = 0.0;
        let mut g_pv = alloc::vec![0.0; d];
        for i in 0..d {
            let vt = pstd[i] * pstd[i];
            dv_dt[i] = -vt * vt * (1.0 / var[i] - 1.0 / old_var[i]);
            dv_dv[i] = vt * vt * t / (var[i] * var[i]);
            dc_dv[i] = 1.0 / old_var[i] - 1.0 / vt;
            dc_dt += dc_dv[i] * dv_dt[i];
            g_pv[i] = out_grad.std[i] / (2.0 * pstd[i]);
            gt += g_pv[i] * dv_dt[i];
        }
        if dc_dt == 0.0 || !dc_dt.is_finite() {
            return Err(Error::Projection("degenerate covariance constraint derivative".into()));
        }
        for j in 0..d {
            let dt_dv = -dc_dv[j] * dv_dv[j] / dc_dt;
            let g_var = g_pv[j] * dv_dv[j] + gt * dt_dv;
            g.std[j] = g_var * 2.0 * raw.std()[j];
        }
    } else {
        g.std.copy_from_slice(&out_grad.std);
    }
    Ok(g)
}

/// `alpha * (mean_part + cov_part)` of `raw` against the (detached) projection.
pub fn trust_region_penalty(raw: &DiagGaussian, projected: &DiagGaussian, alpha: f64) -> Result<f64> {
    check_len("penalty reference", projected.dim(), raw.dim())?;
    if alpha == 0.0 {
        return Ok(0.0);
    }
    let m = mean_part(raw.mean(), projected.mean(), projected.std());
    let c = cov_part(raw.std(), projected.std());
    Ok(alpha * (m + c))
}

/// Gradient of [`trust_region_penalty`] with respect to `raw`.
pub fn trust_region_penalty_grad(
    raw: &DiagGaussian,
    projected: &DiagGaussian,
    alpha: f64,
) -> Result<MeanStdGrad> {
    let (mut dm, mut ds) = kl_parts_grad(raw, projected)?;
    dm.iter_mut().chain(ds.iter_mut()).for_each(|x| *x *= alpha);
    Ok(MeanStdGrad { mean: dm, std: ds })
}
