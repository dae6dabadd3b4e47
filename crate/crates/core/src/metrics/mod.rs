//! Variable-level and end-to-end performance metrics.
//!
//! Every metric is kept as an exact ratio so that differences between two
//! reports are computed without rounding. A zero denominator means the
//! metric is undefined; undefined metrics serialize as `null`.

mod bootstrap;
mod confusion;
mod derived;
mod matching;
mod stratify;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::ops::AddAssign;

use serde::{Deserialize, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use bootstrap::{bootstrap_ci, BootstrapConfig, Interval};
pub(crate) use confusion::report_from_tallies;
pub use confusion::{completeness, confusion, evaluate, patient_tallies, Target};
pub use derived::{derive_variable, derived_schema, end_to_end_metrics, DerivedComponent, DerivedValue, DerivedVariableRule, EndToEnd};
pub use matching::{match_events, EventPair, Matching};
pub use stratify::{stratified_metrics, StratumMetrics, DEFAULT_MIN_STRATUM_N};

use crate::model::PatientId;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetricsError {
    #[error("negative date tolerance {0}")]
    NegativeTolerance(i64),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("positive class `{class}` is not an allowed value of `{variable}`")]
    PositiveClassNotAllowed { variable: String, class: String },
    #[error("variable `{0}` is numeric; metrics need a categorical, date or event-list variable")]
    NumericVariable(String),
    #[error("cohort is empty")]
    EmptyCohort,
    #[error("reports were computed on different cohorts")]
    MismatchedCohorts,
    #[error("cannot bootstrap an empty dataset")]
    EmptyDataset,
    #[error("bootstrap needs at least one replicate")]
    InvalidReplicates,
    #[error("confidence level {0} is not in (0, 1)")]
    InvalidConfidence(f64),
    #[error("unknown stratum attribute `{0}`")]
    UnknownStratum(String),
    #[error("index variable `{0}` is not in the schema")]
    MissingIndexVariable(String),
    #[error("derived-variable component `{0}` is not in the schema")]
    UnknownComponent(String),
    #[error("invalid window [{0}, {1}]")]
    InvalidWindow(i64, i64),
}

/// An exact non-negative fraction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Ratio {
    pub num: u64,
    pub den: u64,
}

impl Ratio {
    /// `None` when the denominator is zero.
    pub fn new(num: u64, den: u64) -> Option<Ratio> {
        (den > 0).then_some(Ratio { num, den })
    }

    pub fn value(self) -> f64 {
        self.num as f64 / self.den as f64
    }

    /// `100 · (self − other)`, evaluated exactly before the final division.
    pub fn delta_pp(self, other: Ratio) -> f64 {
        let num = i128::from(self.num) * i128::from(other.den) - i128::from(other.num) * i128::from(self.den);
        let den = i128::from(self.den) * i128::from(other.den);
        (100 * num) as f64 / den as f64
    }
}

impl Serialize for Ratio {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.value())
    }
}

impl fmt::Display for Ratio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.4}", self.value())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Recall,
    Precision,
    F1,
    DateAccuracy,
    Completeness,
}

impl MetricName {
    pub const ALL: [MetricName; 5] = [
        MetricName::Recall,
        MetricName::Precision,
        MetricName::F1,
        MetricName::DateAccuracy,
        MetricName::Completeness,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Recall => "recall",
            MetricName::Precision => "precision",
            MetricName::F1 => "f1",
            MetricName::DateAccuracy => "date_accuracy",
            MetricName::Completeness => "completeness",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Additive per-patient counts. Summing the tallies of a set of patients
/// gives that set's confusion counts and completeness inputs.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Tally {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub n_matched_with_date: u64,
    pub n_date_correct: u64,
    /// Patients whose prediction is a known value.
    pub n_known: u64,
    pub n_patients: u64,
}

impl AddAssign for Tally {
    fn add_assign(&mut self, o: Tally) {
        self.tp += o.tp;
        self.fp += o.fp;
        self.fn_ += o.fn_;
        self.n_matched_with_date += o.n_matched_with_date;
        self.n_date_correct += o.n_date_correct;
        self.n_known += o.n_known;
        self.n_patients += o.n_patients;
    }
}

impl<'a> std::iter::Sum<&'a Tally> for Tally {
    fn sum<I: Iterator<Item = &'a Tally>>(iter: I) -> Tally {
        let mut out = Tally::default();
        for t in iter {
            out += *t;
        }
        out
    }
}

impl Tally {
    pub fn counts(&self, variable: &str, positive_class: Option<&str>) -> ConfusionCounts {
        ConfusionCounts {
            variable: variable.to_string(),
            positive_class: positive_class.map(str::to_string),
            tp: self.tp,
            fp: self.fp,
            fn_: self.fn_,
            n_matched_with_date: self.n_matched_with_date,
            n_date_correct: self.n_date_correct,
        }
    }

    pub fn completeness(&self) -> Option<Ratio> {
        Ratio::new(self.n_known, self.n_patients)
    }

    /// Point metrics of this tally, defined ones only.
    pub fn metric_values(&self) -> BTreeMap<MetricName, f64> {
        let report = compute_metrics(&self.counts("", None), self.completeness());
        report.values().into_iter().filter_map(|(k, v)| v.map(|v| (k, v.value()))).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ConfusionCounts {
    pub variable: String,
    /// `None` for event presence or "any known value".
    pub positive_class: Option<String>,
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub n_matched_with_date: u64,
    pub n_date_correct: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricReport {
    pub recall: Option<Ratio>,
    pub precision: Option<Ratio>,
    pub f1: Option<Ratio>,
    pub date_accuracy: Option<Ratio>,
    pub completeness: Option<Ratio>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub ci: BTreeMap<MetricName, Interval>,
    pub n_patients: u64,
    /// Fingerprint of the evaluated patient set.
    pub cohort_key: String,
    pub counts: ConfusionCounts,
}

impl MetricReport {
    pub fn get(&self, metric: MetricName) -> Option<Ratio> {
        match metric {
            MetricName::Recall => self.recall,
            MetricName::Precision => self.precision,
            MetricName::F1 => self.f1,
            MetricName::DateAccuracy => self.date_accuracy,
            MetricName::Completeness => self.completeness,
        }
    }

    pub fn values(&self) -> BTreeMap<MetricName, Option<Ratio>> {
        MetricName::ALL.iter().map(|&m| (m, self.get(m))).collect()
    }
}

/// Recall, precision, F1 and date accuracy from confusion counts.
///
/// F1 is `2tp / (2tp + fp + fn)`, the harmonic mean of recall and
/// precision, and is defined only when both are.
pub fn compute_metrics(c: &ConfusionCounts, completeness: Option<Ratio>) -> MetricReport {
    let recall = Ratio::new(c.tp, c.tp + c.fn_);
    let precision = Ratio::new(c.tp, c.tp + c.fp);
    let f1 = match (recall, precision) {
        (Some(_), Some(_)) => Ratio::new(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        _ => None,
    };
    MetricReport {
        recall,
        precision,
        f1,
        date_accuracy: Ratio::new(c.n_date_correct, c.n_matched_with_date),
        completeness,
        ci: BTreeMap::new(),
        n_patients: 0,
        cohort_key: String::new(),
        counts: c.clone(),
    }
}

/// Short stable fingerprint of a patient set.
pub fn cohort_key<'a>(patients: impl IntoIterator<Item = &'a PatientId>) -> String {
    let sorted: BTreeSet<&PatientId> = patients.into_iter().collect();
    let mut h = Sha256::new();
    for p in sorted {
        h.update(p.as_bytes());
        h.update([0u8]);
    }
    hex::encode(&h.finalize()[..8])
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelativePerformance {
    pub metric: MetricName,
    pub llm_value: Option<f64>,
    pub abstraction_value: Option<f64>,
    /// `100 · (llm − abstraction)`; `None` unless both are defined.
    pub delta_pp: Option<f64>,
}

/// Per-metric differences in percentage points.
pub fn relative_difference(llm: &MetricReport, abstraction: &MetricReport) -> Result<Vec<RelativePerformance>, MetricsError> {
    if llm.cohort_key != abstraction.cohort_key || llm.n_patients != abstraction.n_patients {
        return Err(MetricsError::MismatchedCohorts);
    }
    Ok(MetricName::ALL
        .iter()
        .map(|&metric| {
            let (a, b) = (llm.get(metric), abstraction.get(metric));
            RelativePerformance {
                metric,
                llm_value: a.map(Ratio::value),
                abstraction_value: b.map(Ratio::value),
                delta_pp: a.zip(b).map(|(a, b)| a.delta_pp(b)),
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn counts(tp: u64, fp: u64, fn_: u64) -> ConfusionCounts {
        Tally {
            tp,
            fp,
            fn_,
            ..Tally::default()
        }
        .counts("v", Some("yes"))
    }

    #[test]
    fn seventeen_of_twenty() {
        let r = compute_metrics(&counts(17, 3, 3), None);
        assert_eq!(r.recall.unwrap().value(), 0.85);
        assert_eq!(r.precision.unwrap().value(), 0.85);
        assert_eq!(r.f1.unwrap().value(), 0.85);
    }

    #[test]
    fn all_zero_is_undefined() {
        let r = compute_metrics(&counts(0, 0, 0), None);
        assert!(r.recall.is_none() && r.precision.is_none() && r.f1.is_none() && r.date_accuracy.is_none());
        let json = serde_json::to_value(&r).unwrap();
        assert!(json["recall"].is_null());
    }

    #[test]
    fn perfect_recall_imperfect_precision() {
        let r = compute_metrics(&counts(9, 1, 0), None);
        assert_eq!(r.recall.unwrap().value(), 1.0);
        assert_eq!(r.precision.unwrap().value(), 0.9);
        let harmonic = 2.0 * 0.9 / 1.9;
        assert!((r.f1.unwrap().value() - harmonic).abs() < 1e-12);
    }

    #[test]
    fn delta_is_exact() {
        let a = Ratio::new(17, 20).unwrap();
        assert_eq!(a.delta_pp(Ratio::new(19, 20).unwrap()), -10.0);
        assert_eq!(a.delta_pp(Ratio::new(18, 20).unwrap()), -5.0);
        assert_eq!(Ratio::new(23, 25).unwrap().delta_pp(Ratio::new(9, 10).unwrap()), 2.0);
    }

    #[test]
    fn mismatched_cohorts_rejected() {
        let mut a = compute_metrics(&counts(1, 0, 0), None);
        let b = a.clone();
        a.cohort_key = "x".into();
        assert_eq!(relative_difference(&a, &b).unwrap_err(), MetricsError::MismatchedCohorts);
    }

    #[test]
    fn cohort_key_ignores_order() {
        let a = ["p2".to_string(), "p1".to_string()];
        let b = ["p1".to_string(), "p2".to_string()];
        assert_eq!(cohort_key(&a), cohort_key(&b));
        assert_ne!(cohort_key(&a), cohort_key(&a[..1]));
    }

    proptest! {
        #[test]
        fn metrics_are_bounded_and_f1_between(tp in 0u64..200, fp in 0u64..200, fn_ in 0u64..200) {
            let r = compute_metrics(&counts(tp, fp, fn_), None);
            for v in [r.recall, r.precision, r.f1].into_iter().flatten() {
                prop_assert!((0.0..=1.0).contains(&v.value()));
            }
            prop_assert_eq!(r.f1.is_some(), r.recall.is_some() && r.precision.is_some());
            if let (Some(re), Some(pr), Some(f1)) = (r.recall, r.precision, r.f1) {
                let (lo, hi) = (re.value().min(pr.value()), re.value().max(pr.value()));
                prop_assert!(lo - 1e-12 <= f1.value() && f1.value() <= hi + 1e-12);
            }
        }

        #[test]
        fn delta_is_antisymmetric(a in 0u64..50, ad in 1u64..50, b in 0u64..50, bd in 1u64..50) {
            let (x, y) = (Ratio { num: a, den: ad }, Ratio { num: b, den: bd });
            prop_assert_eq!(x.delta_pp(y), -y.delta_pp(x));
        }

        #[test]
        fn duplicating_patients_keeps_point_metrics(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50, k in 2u64..5) {
            let one = compute_metrics(&counts(tp, fp, fn_), None);
            let many = compute_metrics(&counts(k * tp, k * fp, k * fn_), None);
            for m in MetricName::ALL {
                prop_assert_eq!(one.get(m).map(Ratio::value), many.get(m).map(Ratio::value));
            }
        }
    }
}
