//! Descriptive statistics with percentile-bootstrap confidence intervals.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_RESAMPLES: usize = 10_000;

/// Linear-interpolation quantile of sorted data (`q` in `[0, 1]`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn mean(values: &[f64]) -> f64 {
    let first = values[0];
    if values.iter().all(|&v| v == first) {
        return first;
    }
    values.iter().sum::<f64>() / values.len() as f64
}

/// Sample standard deviation (`n - 1` denominator).
pub fn sample_std(values: &[f64]) -> f64 {
    let m = mean(values);
    let ss: f64 = values.iter().map(|v| (v - m).powi(2)).sum();
    (ss / (values.len() - 1) as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, v: f64) -> bool {
        self.lower <= v && v <= self.upper
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean_ci: Interval,
    pub std_ci: Interval,
    pub resamples: usize,
}

/// Summary statistics and 95% bootstrap intervals for the mean and the
/// standard deviation. The intervals are widened to include the point
/// estimate if the percentile interval misses it.
pub fn summarize(values: &[f64], resamples: usize, seed: u64) -> Result<Summary> {
    if values.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "summary statistics need at least 2 values, got {}",
            values.len()
        )));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("summary of non-finite values".into()));
    }
    if resamples == 0 {
        return Err(Error::InvalidArgument("bootstrap needs at least one resample".into()));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = mean(values);
    let s = sample_std(values);

    let n = values.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut means = Vec::with_capacity(resamples);
    let mut stds = Vec::with_capacity(resamples);
    let mut draw = vec![0.0; n];
    for _ in 0..resamples {
        for d in draw.iter_mut() {
            *d = values[rng.gen_range(0..n)];
        }
        means.push(mean(&draw));
        stds.push(sample_std(&draw));
    }
    means.sort_by(f64::total_cmp);
    stds.sort_by(f64::total_cmp);
    let ci = |sorted: &[f64], point: f64| Interval {
        lower: quantile_sorted(sorted, 0.025).min(point),
        upper: quantile_sorted(sorted, 0.975).max(point),
    };
    Ok(Summary {
        n,
        mean: m,
        std: s,
        min: sorted[0],
        q1: quantile_sorted(&sorted, 0.25),
        median: quantile_sorted(&sorted, 0.5),
        q3: quantile_sorted(&sorted, 0.75),
        max: sorted[n - 1],
        mean_ci: ci(&means, m),
        std_ci: ci(&stds, s),
        resamples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn constant_values() {
        let s = summarize(&[0.1; 7], 500, 1).unwrap();
        assert_eq!(s.mean, 0.1);
        assert_eq!(s.std, 0.0);
        assert_eq!((s.mean_ci.lower, s.mean_ci.upper), (0.1, 0.1));
        assert_eq!((s.std_ci.lower, s.std_ci.upper), (0.0, 0.0));
    }

    #[test]
    fn two_values() {
        let s = summarize(&[0.0, 1.0], 1000, 3).unwrap();
        assert_eq!(s.mean, 0.5);
        assert!((s.std - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        assert_eq!(s.median, 0.5);
        assert_eq!((s.min, s.max), (0.0, 1.0));
    }

    #[test]
    fn quartiles_match_linear_interpolation() {
        let s = summarize(&[4.0, 1.0, 3.0, 2.0, 5.0], 100, 0).unwrap();
        assert_eq!((s.q1, s.median, s.q3), (2.0, 3.0, 4.0));
        let even = summarize(&[1.0, 2.0, 3.0, 4.0], 100, 0).unwrap();
        assert_eq!((even.q1, even.median, even.q3), (1.75, 2.5, 3.25));
    }

    #[test]
    fn rejects_short_or_bad_input() {
        assert!(summarize(&[1.0], 100, 0).is_err());
        assert!(summarize(&[1.0, f64::NAN], 100, 0).is_err());
        assert!(summarize(&[1.0, 2.0], 0, 0).is_err());
    }

    #[test]
    fn seeded_and_resample_count_keeps_point_estimates() {
        let v: Vec<f64> = (0..30).map(|i| ((i * 7919) % 101) as f64 / 10.0).collect();
        let a = summarize(&v, 2000, 5).unwrap();
        assert_eq!(a, summarize(&v, 2000, 5).unwrap());
        let b = summarize(&v, 8000, 6).unwrap();
        assert_eq!((a.mean, a.std, a.median), (b.mean, b.std, b.median));
        // the mean CI of 30 draws from a spread-out set is not degenerate
        assert!(a.mean_ci.upper - a.mean_ci.lower > 0.1);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn ordering_invariants(v in prop::collection::vec(-1e3f64..1e3, 2..40), seed in 0u64..1000) {
            let s = summarize(&v, 300, seed).unwrap();
            prop_assert!(s.min <= s.q1 && s.q1 <= s.median && s.median <= s.q3 && s.q3 <= s.max);
            prop_assert!(s.mean_ci.contains(s.mean));
            prop_assert!(s.std_ci.contains(s.std));
            prop_assert!(s.min <= s.mean && s.mean <= s.max);
        }
    }
}
