//! Confusion counts of one prediction source against a reference.
//!
//! Single-valued variables are scored one-vs-rest over patients whose
//! reference value is known. Event lists are scored by matching predicted
//! to reference events of the positive class. Unknown or missing
//! predictions never count as assertions: they cost recall and
//! completeness, never precision.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::{bootstrap_ci, cohort_key, compute_metrics, match_events, BootstrapConfig, ConfusionCounts, MetricReport, MetricsError, Ratio, Tally};
use crate::model::{LabelRecord, LabelSet, PatientId, Schema, VariableKind, VariableSpec};

/// What to score: a variable, optionally one class of it, and the date
/// tolerance for date accuracy and event matching.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Target {
    pub variable: String,
    /// `None` scores any known value (event presence for event lists).
    #[serde(default)]
    pub positive_class: Option<String>,
    #[serde(default)]
    pub tolerance_days: Option<u32>,
}

impl Target {
    pub fn new(variable: &str, positive_class: Option<&str>) -> Self {
        Target {
            variable: variable.to_string(),
            positive_class: positive_class.map(str::to_string),
            tolerance_days: None,
        }
    }

    fn resolve<'s>(&self, schema: &'s Schema, default_tolerance: u32) -> Result<(&'s VariableSpec, i64), MetricsError> {
        let spec = schema.get(&self.variable).ok_or_else(|| MetricsError::UnknownVariable(self.variable.clone()))?;
        if spec.kind == VariableKind::Numeric {
            return Err(MetricsError::NumericVariable(self.variable.clone()));
        }
        if let Some(class) = &self.positive_class {
            let allowed = match &spec.allowed_values {
                Some(set) => set.contains(class) && !spec.is_unknown(&crate::model::Value::category(class)),
                None => true,
            };
            if !allowed {
                return Err(MetricsError::PositiveClassNotAllowed {
                    variable: self.variable.clone(),
                    class: class.clone(),
                });
            }
        }
        let tol = self.tolerance_days.or(spec.date_tolerance_days).unwrap_or(default_tolerance);
        Ok((spec, i64::from(tol)))
    }
}

fn is_positive(spec: &VariableSpec, class: Option<&str>, r: &LabelRecord) -> bool {
    !spec.is_unknown(&r.value) && class.is_none_or(|c| r.value.as_category() == Some(c))
}

fn single_tally(spec: &VariableSpec, class: Option<&str>, tol: i64, pred: &[LabelRecord], reference: &[LabelRecord]) -> Tally {
    let mut t = Tally {
        n_patients: 1,
        n_known: u64::from(pred.first().is_some_and(|r| !spec.is_unknown(&r.value))),
        ..Tally::default()
    };
    let Some(truth) = reference.first().filter(|r| !spec.is_unknown(&r.value)) else {
        return t;
    };
    let ref_pos = is_positive(spec, class, truth);
    let guess = pred.first().filter(|r| is_positive(spec, class, r));
    match (ref_pos, guess) {
        (true, Some(g)) => {
            t.tp = 1;
            if let (Some(a), Some(b)) = (g.event_date, truth.event_date) {
                t.n_matched_with_date = 1;
                t.n_date_correct = u64::from((a - b).num_days().abs() <= tol);
            }
        }
        (true, None) => t.fn_ = 1,
        (false, Some(_)) => t.fp = 1,
        (false, None) => {}
    }
    t
}

fn event_tally(spec: &VariableSpec, class: Option<&str>, tol: i64, pred: &[LabelRecord], reference: &[LabelRecord]) -> Tally {
    let mut t = Tally {
        n_patients: 1,
        n_known: u64::from(pred.iter().any(|r| !spec.is_unknown(&r.value))),
        ..Tally::default()
    };
    if !reference.is_empty() && reference.iter().all(|r| spec.is_unknown(&r.value)) {
        return t;
    }
    let split = |rs: &[LabelRecord]| -> (Vec<NaiveDate>, u64) {
        let pos: Vec<&LabelRecord> = rs.iter().filter(|r| is_positive(spec, class, r)).collect();
        let dated = pos.iter().filter_map(|r| r.event_date).collect();
        let undated = pos.iter().filter(|r| r.event_date.is_none()).count() as u64;
        (dated, undated)
    };
    let (pd, pu) = split(pred);
    let (rd, ru) = split(reference);
    let dated = match_events(&pd, &rd, tol).expect("tolerance is non-negative").pairs.len() as u64;
    let (n_pred, n_ref) = (pd.len() as u64 + pu, rd.len() as u64 + ru);
    // Undated events pair with anything left over; dated leftovers are
    // already out of tolerance of each other.
    let undated = (n_pred - dated).min(n_ref - dated).min(pu + ru);
    let matched = dated + undated;
    t.tp = matched;
    t.fp = n_pred - matched;
    t.fn_ = n_ref - matched;
    t.n_matched_with_date = dated;
    t.n_date_correct = dated;
    t
}

/// Per-patient tallies over the cohort.
pub fn patient_tallies(
    pred: &LabelSet,
    reference: &LabelSet,
    cohort: &BTreeSet<PatientId>,
    schema: &Schema,
    target: &Target,
    default_tolerance: u32,
) -> Result<BTreeMap<PatientId, Tally>, MetricsError> {
    let (spec, tol) = target.resolve(schema, default_tolerance)?;
    let class = target.positive_class.as_deref();
    Ok(cohort
        .iter()
        .map(|p| {
            let (pr, rf) = (pred.get(p, &target.variable), reference.get(p, &target.variable));
            let t = if spec.is_event_list() {
                event_tally(spec, class, tol, pr, rf)
            } else {
                single_tally(spec, class, tol, pr, rf)
            };
            (p.clone(), t)
        })
        .collect())
}

/// Confusion counts of `pred` against `reference` over the cohort.
pub fn confusion(
    pred: &LabelSet,
    reference: &LabelSet,
    cohort: &BTreeSet<PatientId>,
    schema: &Schema,
    target: &Target,
    default_tolerance: u32,
) -> Result<ConfusionCounts, MetricsError> {
    let tallies = patient_tallies(pred, reference, cohort, schema, target, default_tolerance)?;
    let total: Tally = tallies.values().sum();
    Ok(total.counts(&target.variable, target.positive_class.as_deref()))
}

/// Fraction of cohort patients with a known predicted value.
pub fn completeness(pred: &LabelSet, spec: &VariableSpec, cohort: &BTreeSet<PatientId>) -> Result<Ratio, MetricsError> {
    let known = cohort
        .iter()
        .filter(|p| pred.get(p, &spec.name).iter().any(|r| !spec.is_unknown(&r.value)))
        .count();
    Ratio::new(known as u64, cohort.len() as u64).ok_or(MetricsError::EmptyCohort)
}

/// Full report for one source: point metrics, completeness and optional
/// bootstrap intervals.
pub fn evaluate(
    pred: &LabelSet,
    reference: &LabelSet,
    cohort: &BTreeSet<PatientId>,
    schema: &Schema,
    target: &Target,
    default_tolerance: u32,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<MetricReport, MetricsError> {
    if cohort.is_empty() {
        return Err(MetricsError::EmptyCohort);
    }
    let tallies = patient_tallies(pred, reference, cohort, schema, target, default_tolerance)?;
    report_from_tallies(&tallies, target, bootstrap)
}

pub(crate) fn report_from_tallies(
    tallies: &BTreeMap<PatientId, Tally>,
    target: &Target,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<MetricReport, MetricsError> {
    let total: Tally = tallies.values().sum();
    let mut report = compute_metrics(&total.counts(&target.variable, target.positive_class.as_deref()), total.completeness());
    report.n_patients = total.n_patients;
    report.cohort_key = cohort_key(tallies.keys());
    if let Some(cfg) = bootstrap {
        let units: Vec<Tally> = tallies.values().copied().collect();
        report.ci = bootstrap_ci(&units, cfg, |t: &Tally| t.metric_values())?;
    }
    Ok(report)
}
