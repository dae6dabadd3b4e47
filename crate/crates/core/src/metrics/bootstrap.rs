//! Percentile bootstrap over patients.
//!
//! Each replicate draws its own generator from the master seed and the
//! replicate index, so results do not depend on thread scheduling.

use std::collections::BTreeMap;
use std::ops::AddAssign;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};

use super::{MetricName, MetricsError};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapConfig {
    pub replicates: usize,
    pub confidence: f64,
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 2000,
            confidence: 0.95,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

impl Serialize for Interval {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        [self.lo, self.hi].serialize(s)
    }
}

/// Type-7 sample quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let (lo, hi) = (h.floor() as usize, h.ceil() as usize);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Percentile intervals for every metric the statistic defines on the full
/// data. Units are summed per replicate and the statistic is applied to the
/// sum. Intervals are widened where needed so they contain the point
/// estimate.
pub fn bootstrap_ci<T, F>(units: &[T], config: &BootstrapConfig, statistic: F) -> Result<BTreeMap<MetricName, Interval>, MetricsError>
where
    T: Copy + Default + AddAssign + Send + Sync,
    F: Fn(&T) -> BTreeMap<MetricName, f64> + Sync,
{
    if units.is_empty() {
        return Err(MetricsError::EmptyDataset);
    }
    if config.replicates == 0 {
        return Err(MetricsError::InvalidReplicates);
    }
    if !(config.confidence > 0.0 && config.confidence < 1.0) {
        return Err(MetricsError::InvalidConfidence(config.confidence));
    }
    let mut total = T::default();
    for u in units {
        total += *u;
    }
    let point = statistic(&total);

    let draws: Vec<BTreeMap<MetricName, f64>> = (0..config.replicates as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed::derive_index(config.seed, r));
            let mut sum = T::default();
            for _ in 0..units.len() {
                sum += units[rng.random_range(0..units.len())];
            }
            statistic(&sum)
        })
        .collect();

    let alpha = 1.0 - config.confidence;
    let mut out = BTreeMap::new();
    for (&metric, &estimate) in &point {
        let mut values: Vec<f64> = draws.iter().filter_map(|d| d.get(&metric).copied()).collect();
        if values.is_empty() {
            continue;
        }
        values.sort_by(f64::total_cmp);
        let lo = quantile(&values, alpha / 2.0).min(estimate);
        let hi = quantile(&values, 1.0 - alpha / 2.0).max(estimate);
        out.insert(metric, Interval { lo, hi });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::Tally;

    fn config(replicates: usize, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            replicates,
            confidence: 0.95,
            seed,
        }
    }

    #[test]
    fn constant_statistic_has_zero_width() {
        let units = vec![
            Tally {
                tp: 1,
                n_patients: 1,
                n_known: 1,
                ..Tally::default()
            };
            50
        ];
        let ci = bootstrap_ci(&units, &config(200, 1), Tally::metric_values).unwrap();
        let recall = ci[&MetricName::Recall];
        assert_eq!((recall.lo, recall.hi), (1.0, 1.0));
    }

    #[test]
    fn same_seed_same_interval() {
        let units: Vec<Tally> = (0..100)
            .map(|i| Tally {
                tp: u64::from(i % 7 != 0),
                fn_: u64::from(i % 7 == 0),
                n_patients: 1,
                ..Tally::default()
            })
            .collect();
        let a = bootstrap_ci(&units, &config(300, 9), Tally::metric_values).unwrap();
        let b = bootstrap_ci(&units, &config(300, 9), Tally::metric_values).unwrap();
        assert_eq!(a, b);
        let c = bootstrap_ci(&units, &config(300, 10), Tally::metric_values).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn width_close_to_binomial() {
        // 200 reference positives, 180 found.
        let units: Vec<Tally> = (0..200)
            .map(|i| Tally {
                tp: u64::from(i < 180),
                fn_: u64::from(i >= 180),
                n_patients: 1,
                ..Tally::default()
            })
            .collect();
        let ci = bootstrap_ci(&units, &config(2000, 3), Tally::metric_values).unwrap();
        let analytic = 2.0 * 1.959964 * (0.9f64 * 0.1 / 200.0).sqrt();
        let w = ci[&MetricName::Recall].width();
        assert!((w / analytic - 1.0).abs() <= 0.25, "bootstrap width {w}, analytic {analytic}");
        assert!(ci[&MetricName::Recall].contains(0.9));
    }

    #[test]
    fn errors() {
        let none: Vec<Tally> = Vec::new();
        assert_eq!(bootstrap_ci(&none, &config(10, 0), Tally::metric_values), Err(MetricsError::EmptyDataset));
        let one = vec![Tally::default()];
        assert_eq!(bootstrap_ci(&one, &config(0, 0), Tally::metric_values), Err(MetricsError::InvalidReplicates));
    }

    #[test]
    fn quantile_interpolates() {
        assert_eq!(quantile(&[0.0, 1.0, 2.0, 3.0], 0.5), 1.5);
        assert_eq!(quantile(&[5.0], 0.975), 5.0);
    }
}
