//! Replication analyses: survival curves, cohort distributions, trends,
//! benchmark concordance and equity replication on extracted data.

mod benchmark;
mod distribution;
mod km;

use std::collections::BTreeSet;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use benchmark::{
    arm_medians, benchmark_concordance, equity_replication, ArmMedians, BenchmarkKind, BenchmarkRule, BenchmarkSpec, EquityExpectation, EquityResult,
    MedianGap, ReplicationResult, StratumSurvival,
};
pub use distribution::{category_counts, compare_distribution, trend_series, DistributionComparison, MonthCount};
pub use km::{compare_curves, km_estimate, median_survival, CurveComparison, KmCurve, KmStep, TimepointDelta};

use crate::model::{LabelSet, PatientId, Schema, Source};

/// Mean days per month, used for every month/day conversion.
pub const DAYS_PER_MONTH: f64 = 30.4375;

#[derive(Debug, Error)]
pub enum ReplicationError {
    #[error("no survival records")]
    EmptyInput,
    #[error("negative duration of {0} days")]
    NegativeDuration(i64),
    #[error("categories absent from the reference: {0:?}")]
    MismatchedCategories(Vec<String>),
    #[error("a distribution has no observations")]
    EmptyDistribution,
    #[error("no dated records for `{0}`")]
    NoDatedRecords(String),
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("`{0}` is an event list; distributions need single-valued variables")]
    NotSingleValued(String),
    #[error("benchmark references arm `{0}` absent from the dataset")]
    UnknownArm(String),
    #[error("unknown stratum `{0}`")]
    UnknownStratum(String),
    #[error("every stratum of `{0}` is below the minimum size")]
    AllStrataSuppressed(String),
    #[error("comparison needs a reference dataset")]
    MissingReference,
    #[error("no labels for source {0}")]
    MissingSource(Source),
    #[error("invalid benchmark: {0}")]
    InvalidBenchmark(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SurvivalRecord {
    pub patient_id: PatientId,
    pub index_date: NaiveDate,
    /// Event date, or censoring date when `event` is false.
    pub last_date: NaiveDate,
    pub event: bool,
}

impl SurvivalRecord {
    pub fn duration_days(&self) -> i64 {
        (self.last_date - self.index_date).num_days()
    }
}

/// How survival records are read from labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurvivalRule {
    pub index_variable: String,
    #[serde(default)]
    pub index_value: Option<String>,
    pub event_variable: String,
    #[serde(default = "default_event_value")]
    pub event_value: String,
    /// Latest date of this variable censors patients without an event.
    #[serde(default)]
    pub censor_variable: Option<String>,
    /// Administrative censoring date; later events are censored here.
    pub followup_end: NaiveDate,
}

fn default_event_value() -> String {
    "yes".into()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Exclusion {
    pub patient_id: PatientId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SurvivalData {
    pub records: Vec<SurvivalRecord>,
    /// Patients with an index date whose follow-up could not be formed.
    pub excluded: Vec<Exclusion>,
}

/// Survival records for the cohort patients that have an index date.
///
/// The index is the earliest known dated record of the index variable
/// (with `index_value` when set). The event is the earliest dated record
/// with `event_value`; without one, the patient is censored at the latest
/// date of the censor variable, or at `followup_end`.
pub fn survival_records(labels: &LabelSet, schema: &Schema, cohort: &BTreeSet<PatientId>, rule: &SurvivalRule) -> Result<SurvivalData, ReplicationError> {
    let index_spec = schema
        .get(&rule.index_variable)
        .ok_or_else(|| ReplicationError::UnknownVariable(rule.index_variable.clone()))?;
    for v in std::iter::once(&rule.event_variable).chain(rule.censor_variable.as_ref()) {
        schema.get(v).ok_or_else(|| ReplicationError::UnknownVariable(v.clone()))?;
    }
    let mut out = SurvivalData {
        records: Vec::new(),
        excluded: Vec::new(),
    };
    for p in cohort {
        let index = labels
            .get(p, &rule.index_variable)
            .iter()
            .filter(|r| !index_spec.is_unknown(&r.value))
            .filter(|r| rule.index_value.as_deref().is_none_or(|v| r.value.as_category() == Some(v)))
            .filter_map(|r| r.event_date)
            .min();
        let Some(index) = index else { continue };
        let event = labels
            .get(p, &rule.event_variable)
            .iter()
            .filter(|r| r.value.as_category() == Some(rule.event_value.as_str()))
            .filter_map(|r| r.event_date)
            .min()
            .filter(|d| *d <= rule.followup_end);
        let (last_date, is_event) = match event {
            Some(d) => (d, true),
            None => {
                let censor = rule
                    .censor_variable
                    .as_ref()
                    .and_then(|v| labels.get(p, v).iter().filter_map(|r| r.event_date).max())
                    .map_or(rule.followup_end, |d| d.min(rule.followup_end));
                (censor, false)
            }
        };
        if last_date < index {
            out.excluded.push(Exclusion {
                patient_id: p.clone(),
                reason: format!("follow-up ends {last_date} before index {index}"),
            });
            continue;
        }
        out.records.push(SurvivalRecord {
            patient_id: p.clone(),
            index_date: index,
            last_date,
            event: is_event,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_date, LabelRecord, Value, VariableSpec};

    fn schema() -> Schema {
        Schema::new([
            VariableSpec::dated("metastatic_dx", &["yes", "no", "unknown"], Some("unknown")),
            VariableSpec::dated("death", &["yes", "no"], None),
            VariableSpec::dated("last_contact", &["yes"], None),
        ])
        .unwrap()
    }

    fn rec(p: &str, v: &str, val: &str, d: Option<&str>) -> LabelRecord {
        LabelRecord::new(p, v, Value::category(val), d.map(|x| parse_date(x).unwrap()), Source::Llm)
    }

    fn rule() -> SurvivalRule {
        SurvivalRule {
            index_variable: "metastatic_dx".into(),
            index_value: Some("yes".into()),
            event_variable: "death".into(),
            event_value: "yes".into(),
            censor_variable: Some("last_contact".into()),
            followup_end: parse_date("2025-12-31").unwrap(),
        }
    }

    #[test]
    fn events_censoring_and_exclusions() {
        let s = schema();
        let labels = LabelSet::from_records(
            Source::Llm,
            [
                rec("p1", "metastatic_dx", "yes", Some("2020-01-01")),
                rec("p1", "death", "yes", Some("2021-01-01")),
                rec("p2", "metastatic_dx", "yes", Some("2020-01-01")),
                rec("p2", "last_contact", "yes", Some("2020-07-01")),
                rec("p3", "metastatic_dx", "yes", Some("2020-01-01")),
                rec("p4", "metastatic_dx", "no", None),
                rec("p5", "metastatic_dx", "yes", Some("2020-01-01")),
                rec("p5", "last_contact", "yes", Some("2019-01-01")),
                rec("p6", "metastatic_dx", "yes", Some("2020-01-01")),
                rec("p6", "death", "yes", Some("2027-01-01")),
            ],
            &s,
        )
        .unwrap();
        let cohort: BTreeSet<PatientId> = ["p1", "p2", "p3", "p4", "p5", "p6"].iter().map(|p| p.to_string()).collect();
        let data = survival_records(&labels, &s, &cohort, &rule()).unwrap();
        let by: Vec<(&str, i64, bool)> = data.records.iter().map(|r| (r.patient_id.as_str(), r.duration_days(), r.event)).collect();
        assert_eq!(by, vec![("p1", 366, true), ("p2", 182, false), ("p3", 2191, false), ("p6", 2191, false)]);
        assert_eq!(data.excluded.len(), 1);
        assert_eq!(data.excluded[0].patient_id, "p5");
    }
}
