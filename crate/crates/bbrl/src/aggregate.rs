//! Interquartile mean with a percentile bootstrap interval.

use bbrl_core::numkit::RandomStream;
use serde::Serialize;

use crate::error::{RunError, RunResult};

pub const BOOTSTRAP_RESAMPLES: usize = 2000;
/// Stream id of the resampling generator.
pub const STREAM_BOOTSTRAP: u64 = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub n: usize,
    pub iqm: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

/// Mean of the sorted values after dropping `floor(n/4)` from each end.
pub fn iqm(values: &[f64]) -> RunResult<f64> {
    if values.is_empty() {
        return Err(RunError::Config("IQM of an empty set".into()));
    }
    if values.iter().any(|v| v.is_nan()) {
        return Err(RunError::Config("IQM input contains NaN".into()));
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = v.len() / 4;
    let mid = &v[k..v.len() - k];
    Ok(mid.iter().sum::<f64>() / mid.len() as f64)
}

/// Linear-interpolation percentile of sorted data, `q` in `[0, 100]`.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// IQM with a 95% interval from resampling runs with replacement.
pub fn aggregate(values: &[f64], resamples: usize, seed: u64) -> RunResult<Aggregate> {
    if values.len() < 2 {
        return Err(RunError::Config(format!("aggregation needs at least 2 runs, got {}", values.len())));
    }
    let point = iqm(values)?;
    let mut s = RandomStream::new(seed, STREAM_BOOTSTRAP);
    let mut buf = vec![0.0; values.len()];
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            for b in buf.iter_mut() {
                *b = values[s.index(values.len())];
            }
            iqm(&buf).expect("non-empty resample")
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    Ok(Aggregate {
        n: values.len(),
        iqm: point,
        ci_low: percentile(&stats, 2.5),
        ci_high: percentile(&stats, 97.5),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn examples() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(iqm(&v).unwrap(), 5.5);
        assert_eq!(iqm(&[4.0]).unwrap(), 4.0);
        assert_eq!(iqm(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert!(iqm(&[]).is_err());
        assert!(aggregate(&[1.0], 10, 0).is_err());
    }

    #[test]
    fn constant_data_has_zero_width() {
        let a = aggregate(&[0.3; 7], BOOTSTRAP_RESAMPLES, 1).unwrap();
        assert_eq!((a.iqm, a.ci_low, a.ci_high), (0.3, 0.3, 0.3));
    }

    #[test]
    fn percentile_interpolates() {
        let s = [0.0, 10.0, 20.0, 30.0, 40.0];
        assert_eq!(percentile(&s, 50.0), 20.0);
        assert_eq!(percentile(&s, 2.5), 1.0);
        assert_eq!(percentile(&s, 100.0), 40.0);
    }

    #[test]
    fn interval_is_deterministic_and_brackets() {
        let v: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let a = aggregate(&v, BOOTSTRAP_RESAMPLES, 5).unwrap();
        assert_eq!(a, aggregate(&v, BOOTSTRAP_RESAMPLES, 5).unwrap());
        assert!(a.ci_low <= a.iqm && a.iqm <= a.ci_high);
    }

    proptest! {
        #[test]
        fn dropped_extremes_do_not_matter(
            mut v in prop::collection::vec(-100.0f64..100.0, 4..40),
            shift in 0.0f64..1e6,
        ) {
            v.sort_by(f64::total_cmp);
            let k = v.len() / 4;
            let base = iqm(&v).unwrap();
            let n = v.len();
            for x in &mut v[..k] { *x -= shift; }
            for x in &mut v[n - k..] { *x += shift; }
            prop_assert_eq!(iqm(&v).unwrap(), base);
        }

        #[test]
        fn order_invariant(v in prop::collection::vec(-1.0f64..1.0, 1..30)) {
            let mut r = v.clone();
            r.reverse();
            prop_assert!((iqm(&v).unwrap() - iqm(&r).unwrap()).abs() < 1e-12);
        }
    }
}
