//! Diagonal Gaussian policy head.

use alloc::vec::Vec;

use crate::error::check_len;
use crate::math;
use crate::numkit::RandomStream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct DiagGaussian {
    mean: Vec<f64>,
    std: Vec<f64>,
}

/// Gradients of a scalar with respect to `(mean, std)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanStdGrad {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl MeanStdGrad {
    pub fn zeros(d: usize) -> Self {
        Self {
            mean: alloc::vec![0.0; d],
            std: alloc::vec![0.0; d],
        }
    }
}

impl DiagGaussian {
    pub fn new(mean: Vec<f64>, std: Vec<f64>) -> Result<Self> {
        check_len("gaussian std", mean.len(), std.len())?;
        if mean.is_empty() {
            return Err(Error::Invalid("gaussian dimension must be at least 1".into()));
        }
        if !mean.iter().all(|m| m.is_finite()) {
            return Err(Error::NonFinite("gaussian mean"));
        }
        if !std.iter().all(|s| s.is_finite() && *s > 0.0) {
            return Err(Error::Invalid("gaussian std must be positive and finite".into()));
        }
        Ok(Self { mean, std })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> &[f64] {
        &self.std
    }

    pub fn log_density(&self, x: &[f64]) -> Result<f64> {
        check_len("log density point", self.dim(), x.len())?;
        Ok(self
            .mean
            .iter()
            .zip(&self.std)
            .zip(x)
            .map(|((&m, &s), &xi)| {
                let z = (xi - m) / s;
                -0.5 * math::LN_2PI - math::ln(s) - 0.5 * z * z
            })
            .sum())
    }

    /// Gradient of [`Self::log_density`] with respect to `(mean, std)`.
    pub fn log_density_grad(&self, x: &[f64]) -> Result<MeanStdGrad> {
        check_len("log density point", self.dim(), x.len())?;
        let mut g = MeanStdGrad::zeros(self.dim());
        for i in 0..self.dim() {
            let (m, s) = (self.mean[i], self.std[i]);
            let r = x[i] - m;
            g.mean[i] = r / (s * s);
            g.std[i] = -1.0 / s + r * r / (s * s * s);
        }
        Ok(g)
    }

    pub fn sample(&self, stream: &mut RandomStream) -> Vec<f64> {
        self.mean
            .iter()
            .zip(&self.std)
            .map(|(m, s)| m + s * stream.normal())
            .collect()
    }

    pub fn entropy(&self) -> f64 {
        self.std
            .iter()
            .map(|s| 0.5 * (math::LN_2PI + 1.0) + math::ln(*s))
            .sum()
    }
}

/// Unhalved mean and covariance parts of `KL(g || old)`:
/// `sum (mu_old - mu)^2 / s_old^2` and
/// `sum s^2 / s_old^2 - d + sum ln(s_old^2 / s^2)`.
pub fn kl_parts(g: &DiagGaussian, old: &DiagGaussian) -> Result<(f64, f64)> {
    check_len("kl reference", old.dim(), g.dim())?;
    Ok((
        mean_part(g.mean(), old.mean(), old.std()),
        cov_part(g.std(), old.std()),
    ))
}

pub fn mean_part(mean: &[f64], old_mean: &[f64], old_std: &[f64]) -> f64 {
    mean.iter()
        .zip(old_mean)
        .zip(old_std)
        .map(|((m, mo), so)| {
            let r = (mo - m) / so;
            r * r
        })
        .sum()
}

pub fn cov_part(std: &[f64], old_std: &[f64]) -> f64 {
    std.iter()
        .zip(old_std)
        .map(|(s, so)| {
            let x = (s / so) * (s / so);
            x - 1.0 - math::ln(x)
        })
        .sum()
}

/// Gradients of `(mean_part, cov_part)` with respect to `g`'s mean and std,
/// `old` held fixed.
pub fn kl_parts_grad(g: &DiagGaussian, old: &DiagGaussian) -> Result<(Vec<f64>, Vec<f64>)> {
    check_len("kl reference", old.dim(), g.dim())?;
    let dmean = (0..g.dim())
        .map(|i| 2.0 * (g.mean[i] - old.mean[i]) / (old.std[i] * old.std[i]))
        .collect();
    let dstd = (0..g.dim())
        .map(|i| 2.0 * g.std[i] / (old.std[i] * old.std[i]) - 2.0 / g.std[i])
        .collect();
    Ok((dmean, dstd))
}

pub fn log_density(g: &DiagGaussian, x: &[f64]) -> Result<f64> {
    g.log_density(x)
}

pub fn sample(g: &DiagGaussian, stream: &mut RandomStream) -> Vec<f64> {
    g.sample(stream)
}

pub fn entropy(g: &DiagGaussian) -> f64 {
    g.entropy()
}
