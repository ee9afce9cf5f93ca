//! Single-context quadratic bandit `R(w) = -|w - w*|^2`.

use alloc::vec;
use alloc::vec::Vec;

use super::{Context, EpisodeOutcome, EpisodicEnv};
use crate::error::check_len;
use crate::numkit::RandomStream;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticBandit {
    target: Vec<f64>,
}

impl QuadraticBandit {
    pub fn new(target: Vec<f64>) -> Result<Self> {
        if target.is_empty() || target.iter().any(|t| !t.is_finite()) {
            return Err(Error::Invalid("bandit target must be non-empty and finite".into()));
        }
        Ok(Self { target })
    }

    /// Target drawn uniformly from `[-1, 1]^dim`.
    pub fn random(dim: usize, stream: &mut RandomStream) -> Result<Self> {
        Self::new((0..dim).map(|_| stream.uniform_range(-1.0, 1.0)).collect())
    }

    pub fn target(&self) -> &[f64] {
        &self.target
    }

    pub fn sq_error(&self, params: &[f64]) -> f64 {
        params.iter().zip(&self.target).map(|(w, t)| (w - t) * (w - t)).sum()
    }
}

impl EpisodicEnv for QuadraticBandit {
    fn name(&self) -> &'static str {
        "bandit"
    }

    fn context_dim(&self) -> usize {
        1
    }

    fn param_dim(&self) -> usize {
        self.target.len()
    }

    fn horizon(&self) -> usize {
        1
    }

    fn sample_context(&self, _stream: &mut RandomStream) -> Context {
        Context(vec![1.0])
    }

    fn run(&self, _context: &Context, params: &[f64], _keep_trace: bool) -> Result<EpisodeOutcome> {
        check_len("bandit params", self.target.len(), params.len())?;
        let err = self.sq_error(params);
        Ok(EpisodeOutcome {
            ret: -err,
            metric: err,
            success: err <= 1e-2,
            control_cost: 0.0,
            fault: !err.is_finite(),
            trace: None,
        })
    }

    fn metric_name(&self) -> &'static str {
        "sq_error"
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn optimum_is_zero() {
        let b = QuadraticBandit::new(vec![0.5, -0.25]).unwrap();
        let out = b.run(&Context(vec![1.0]), &[0.5, -0.25], false).unwrap();
        assert_eq!(out.ret, 0.0);
        let out = b.run(&Context(vec![1.0]), &[1.5, -0.25], false).unwrap();
        assert_eq!(out.ret, -1.0);
    }

    #[test]
    fn rejects_wrong_dim() {
        let b = QuadraticBandit::new(vec![0.0; 3]).unwrap();
        assert!(b.run(&Context(vec![1.0]), &[0.0; 2], false).is_err());
    }
}
