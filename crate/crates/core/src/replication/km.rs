//! Product-limit survival curves.

use std::io::Write;

use serde::Serialize;

use super::{ReplicationError, SurvivalRecord};
use crate::model::DataError;

const Z_95: f64 = 1.959_963_984_540_054;

/// One event time of a curve.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmStep {
    pub time: i64,
    pub n_at_risk: u64,
    pub n_events: u64,
    /// Censored at exactly this time; they are still at risk here.
    pub n_censored: u64,
    pub survival: f64,
    /// Greenwood variance of `survival`.
    pub variance: f64,
    /// Pointwise 95% interval on the log(-log) scale.
    pub ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct KmCurve {
    pub n: u64,
    pub n_events: u64,
    /// Largest observed duration, event or censored.
    pub max_time: i64,
    pub steps: Vec<KmStep>,
}

fn loglog_ci(s: f64, greenwood_sum: f64) -> (f64, f64) {
    if s <= 0.0 || s >= 1.0 || !greenwood_sum.is_finite() {
        return (s, s);
    }
    let se = greenwood_sum.sqrt() / s.ln().abs();
    (s.powf((Z_95 * se).exp()), s.powf((-Z_95 * se).exp()))
}

/// Kaplan-Meier estimate. At tied times events are processed before
/// censorings, so patients censored at `t` count as at risk at `t`.
pub fn km_estimate(records: &[SurvivalRecord]) -> Result<KmCurve, ReplicationError> {
    if records.is_empty() {
        return Err(ReplicationError::EmptyInput);
    }
    let mut times: Vec<(i64, bool)> = records.iter().map(|r| (r.duration_days(), r.event)).collect();
    if let Some((t, _)) = times.iter().find(|(t, _)| *t < 0) {
        return Err(ReplicationError::NegativeDuration(*t));
    }
    times.sort_unstable();
    let n = times.len() as u64;
    let mut at_risk = n;
    let mut survival = 1.0;
    let mut greenwood = 0.0;
    let mut steps = Vec::new();
    let mut i = 0;
    while i < times.len() {
        let t = times[i].0;
        let (mut d, mut c) = (0u64, 0u64);
        while i < times.len() && times[i].0 == t {
            if times[i].1 {
                d += 1;
            } else {
                c += 1;
            }
            i += 1;
        }
        if d > 0 {
            survival *= 1.0 - d as f64 / at_risk as f64;
            greenwood += if at_risk > d {
                d as f64 / (at_risk as f64 * (at_risk - d) as f64)
            } else {
                f64::INFINITY
            };
            let variance = if survival > 0.0 { survival * survival * greenwood } else { 0.0 };
            steps.push(KmStep {
                time: t,
                n_at_risk: at_risk,
                n_events: d,
                n_censored: c,
                survival,
                variance,
                ci: loglog_ci(survival, greenwood),
            });
        }
        at_risk -= d + c;
    }
    Ok(KmCurve {
        n,
        n_events: records.iter().filter(|r| r.event).count() as u64,
        max_time: times.last().map_or(0, |x| x.0),
        steps,
    })
}

impl KmCurve {
    /// Right-continuous step value at `t`.
    pub fn survival_at(&self, t: i64) -> f64 {
        let k = self.steps.partition_point(|s| s.time <= t);
        if k == 0 {
            1.0
        } else {
            self.steps[k - 1].survival
        }
    }

    /// Delimited text with columns `t, n_at_risk, d, S, se`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["t", "n_at_risk", "d", "S", "se"])?;
        for s in &self.steps {
            wtr.write_record([
                s.time.to_string(),
                s.n_at_risk.to_string(),
                s.n_events.to_string(),
                s.survival.to_string(),
                s.variance.sqrt().to_string(),
            ])?;
        }
        wtr.flush().map_err(|e| DataError::Csv(e.into()))?;
        Ok(())
    }
}

/// Smallest event time with S(t) <= 0.5; `None` when the curve stays
/// above one half.
pub fn median_survival(curve: &KmCurve) -> Option<i64> {
    curve.steps.iter().find(|s| s.survival <= 0.5).map(|s| s.time)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimepointDelta {
    pub time: i64,
    pub extracted: f64,
    pub reference: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurveComparison {
    pub median_extracted: Option<i64>,
    pub median_reference: Option<i64>,
    /// Extracted minus reference, in days.
    pub median_delta: Option<i64>,
    pub max_abs_delta: f64,
    /// At every event time of either curve up to the shorter follow-up.
    pub deltas: Vec<TimepointDelta>,
}

pub fn compare_curves(extracted: &KmCurve, reference: &KmCurve) -> CurveComparison {
    let horizon = extracted.max_time.min(reference.max_time);
    let mut times: Vec<i64> = extracted
        .steps
        .iter()
        .chain(&reference.steps)
        .map(|s| s.time)
        .filter(|t| *t <= horizon)
        .collect();
    times.sort_unstable();
    times.dedup();
    let deltas: Vec<TimepointDelta> = times
        .into_iter()
        .map(|t| {
            let (e, r) = (extracted.survival_at(t), reference.survival_at(t));
            TimepointDelta {
                time: t,
                extracted: e,
                reference: r,
                delta: e - r,
            }
        })
        .collect();
    let (me, mr) = (median_survival(extracted), median_survival(reference));
    CurveComparison {
        median_extracted: me,
        median_reference: mr,
        median_delta: me.zip(mr).map(|(a, b)| a - b),
        max_abs_delta: deltas.iter().map(|d| d.delta.abs()).fold(0.0, f64::max),
        deltas,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, NaiveDate};
    use proptest::prelude::*;

    fn recs(data: &[(i64, bool)]) -> Vec<SurvivalRecord> {
        let index = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap();
        data.iter()
            .enumerate()
            .map(|(i, (d, e))| SurvivalRecord {
                patient_id: format!("p{i}"),
                index_date: index,
                last_date: index + Duration::days(*d),
                event: *e,
            })
            .collect()
    }

    /// Straight product over distinct event times, recounting the risk set
    /// from scratch each time.
    fn oracle(data: &[(i64, bool)], t: i64) -> f64 {
        let mut event_times: Vec<i64> = data.iter().filter(|x| x.1 && x.0 <= t).map(|x| x.0).collect();
        event_times.sort_unstable();
        event_times.dedup();
        event_times
            .iter()
            .map(|u| {
                let n = data.iter().filter(|x| x.0 >= *u).count() as f64;
                let d = data.iter().filter(|x| x.1 && x.0 == *u).count() as f64;
                1.0 - d / n
            })
            .product()
    }

    #[test]
    fn single_event() {
        let c = km_estimate(&recs(&[(5, true)])).unwrap();
        assert_eq!(c.survival_at(4), 1.0);
        assert_eq!(c.survival_at(5), 0.0);
        assert_eq!(median_survival(&c), Some(5));
    }

    #[test]
    fn four_patient_example() {
        let c = km_estimate(&recs(&[(1, true), (2, false), (4, true), (6, false)])).unwrap();
        assert_eq!(c.survival_at(1), 0.75);
        assert_eq!(c.steps[1].n_at_risk, 2);
        assert_eq!(c.survival_at(4), 0.375);
        assert_eq!(median_survival(&c), Some(4));
    }

    #[test]
    fn all_censored() {
        let c = km_estimate(&recs(&[(3, false), (7, false)])).unwrap();
        assert!(c.steps.is_empty());
        assert_eq!(c.survival_at(100), 1.0);
        assert_eq!(median_survival(&c), None);
    }

    #[test]
    fn median_boundary_is_inclusive() {
        let c = km_estimate(&recs(&[(10, true), (20, false)])).unwrap();
        assert_eq!(c.survival_at(10), 0.5);
        assert_eq!(median_survival(&c), Some(10));
    }

    #[test]
    fn ties_put_events_first() {
        let c = km_estimate(&recs(&[(3, true), (3, false), (5, true)])).unwrap();
        assert_eq!(c.steps[0].n_at_risk, 3);
        assert_eq!(c.steps[0].n_censored, 1);
        assert!((c.survival_at(3) - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(c.steps[1].n_at_risk, 1);
    }

    #[test]
    fn errors() {
        assert!(matches!(km_estimate(&[]), Err(ReplicationError::EmptyInput)));
        assert!(matches!(km_estimate(&recs(&[(-1, true)])), Err(ReplicationError::NegativeDuration(-1))));
    }

    #[test]
    fn greenwood_matches_hand_computation() {
        let c = km_estimate(&recs(&[(1, true), (2, false), (4, true), (6, false)])).unwrap();
        // 0.375^2 * (1/(4*3) + 1/(2*1))
        let expected = 0.375f64.powi(2) * (1.0 / 12.0 + 0.5);
        assert!((c.steps[1].variance - expected).abs() < 1e-15);
        let (lo, hi) = c.steps[1].ci;
        assert!((0.0..0.375).contains(&lo) && 0.375 < hi && hi <= 1.0);
    }

    #[test]
    fn shift_moves_median() {
        let base = [(100, true), (150, true), (200, false), (250, true), (300, true)];
        let shifted: Vec<_> = base.iter().map(|(t, e)| (t + 30, *e)).collect();
        let cmp = compare_curves(&km_estimate(&recs(&shifted)).unwrap(), &km_estimate(&recs(&base)).unwrap());
        assert_eq!(cmp.median_delta, Some(30));
    }

    #[test]
    fn csv_export() {
        let c = km_estimate(&recs(&[(1, true), (2, false), (4, true), (6, false)])).unwrap();
        let mut buf = Vec::new();
        c.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,n_at_risk,d,S,se\n1,4,1,0.75,"));
        assert_eq!(text.lines().count(), 3);
    }

    fn arb_data() -> impl Strategy<Value = Vec<(i64, bool)>> {
        prop::collection::vec((0i64..40, any::<bool>()), 1..=20)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn matches_product_limit_oracle(data in arb_data()) {
            let c = km_estimate(&recs(&data)).unwrap();
            let mut prev = 1.0;
            let mut prev_n = u64::MAX;
            for s in &c.steps {
                prop_assert!((s.survival - oracle(&data, s.time)).abs() <= 1e-12);
                prop_assert!(s.survival <= prev && (0.0..=1.0).contains(&s.survival));
                prop_assert!(s.n_at_risk < prev_n);
                prev = s.survival;
                prev_n = s.n_at_risk;
            }
        }

        #[test]
        fn duplication_invariance(data in arb_data()) {
            let doubled: Vec<_> = data.iter().chain(&data).copied().collect();
            let (a, b) = (km_estimate(&recs(&data)).unwrap(), km_estimate(&recs(&doubled)).unwrap());
            for s in &a.steps {
                prop_assert!((b.survival_at(s.time) - s.survival).abs() <= 1e-12);
            }
        }

        #[test]
        fn extending_late_censoring_changes_nothing(data in arb_data(), extra in 1i64..10) {
            let a = km_estimate(&recs(&data)).unwrap();
            let last_event = data.iter().filter(|(_, e)| *e).map(|(t, _)| *t).max().unwrap_or(-1);
            let more: Vec<_> = data.iter().map(|&(t, e)| if !e && t >= last_event { (t + extra, e) } else { (t, e) }).collect();
            let b = km_estimate(&recs(&more)).unwrap();
            for s in a.steps.iter().filter(|s| s.time <= last_event) {
                prop_assert!((b.survival_at(s.time) - s.survival).abs() <= 1e-12);
            }
        }

        #[test]
        fn median_shifts_with_durations(data in arb_data(), c in 0i64..100) {
            let shifted: Vec<_> = data.iter().map(|(t, e)| (t + c, *e)).collect();
            let m0 = median_survival(&km_estimate(&recs(&data)).unwrap());
            let m1 = median_survival(&km_estimate(&recs(&shifted)).unwrap());
            prop_assert_eq!(m0.map(|m| m + c), m1);
        }

        #[test]
        fn self_comparison_is_zero(data in arb_data()) {
            let c = km_estimate(&recs(&data)).unwrap();
            let cmp = compare_curves(&c, &c);
            prop_assert_eq!(cmp.max_abs_delta, 0.0);
            prop_assert!(cmp.deltas.iter().all(|d| d.delta == 0.0));
            prop_assert!(cmp.median_delta.is_none_or(|d| d == 0));
        }
    }
}
