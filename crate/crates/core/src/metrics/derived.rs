//! Variables derived from several extracted variables around an index date,
//! and their end-to-end metrics.
//!
//! Each component is read from the known, dated record closest to the index
//! date inside the window (ties go to the earlier record). A patient is
//! positive when every component has its required value, negative when all
//! components are known and at least one differs, and unknown when any
//! component has no known in-window record. Patients without an index date
//! get no derived value at all.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use super::confusion::report_from_tallies;
use super::{patient_tallies, relative_difference, BootstrapConfig, MetricReport, MetricsError, RelativePerformance, Target};
use crate::model::{LabelRecord, LabelSet, PatientId, Schema, Source, Value, VariableSpec};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedComponent {
    pub variable: String,
    pub required_value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DerivedVariableRule {
    pub name: String,
    pub index_variable: String,
    /// When set, the index record must carry this value.
    #[serde(default)]
    pub index_value: Option<String>,
    /// Inclusive offsets in days relative to the index date.
    pub window_days: (i64, i64),
    pub components: Vec<DerivedComponent>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivedValue {
    Positive,
    Negative,
    Unknown,
}

impl DerivedValue {
    pub fn as_str(self) -> &'static str {
        match self {
            DerivedValue::Positive => "positive",
            DerivedValue::Negative => "negative",
            DerivedValue::Unknown => "unknown",
        }
    }
}

impl DerivedVariableRule {
    pub fn validate(&self, schema: &Schema) -> Result<(), MetricsError> {
        let index = schema
            .get(&self.index_variable)
            .ok_or_else(|| MetricsError::MissingIndexVariable(self.index_variable.clone()))?;
        if !index.is_dated() {
            return Err(MetricsError::MissingIndexVariable(self.index_variable.clone()));
        }
        if self.window_days.0 > self.window_days.1 {
            return Err(MetricsError::InvalidWindow(self.window_days.0, self.window_days.1));
        }
        for c in &self.components {
            let spec = schema.get(&c.variable).ok_or_else(|| MetricsError::UnknownComponent(c.variable.clone()))?;
            spec.conform(&Value::category(&c.required_value))
                .map_err(|_| MetricsError::PositiveClassNotAllowed {
                    variable: c.variable.clone(),
                    class: c.required_value.clone(),
                })?;
        }
        Ok(())
    }

    fn index_date(&self, labels: &LabelSet, patient: &str) -> Option<NaiveDate> {
        labels
            .get(patient, &self.index_variable)
            .iter()
            .filter(|r| self.index_value.as_deref().is_none_or(|v| r.value.as_category() == Some(v)))
            .find_map(|r| r.event_date)
    }

    fn closest<'a>(&self, spec: &VariableSpec, records: &'a [LabelRecord], index: NaiveDate) -> Option<&'a LabelRecord> {
        let (lo, hi) = self.window_days;
        records
            .iter()
            .filter(|r| !spec.is_unknown(&r.value))
            .filter_map(|r| r.event_date.map(|d| ((d - index).num_days(), d, r)))
            .filter(|(off, _, _)| (lo..=hi).contains(off))
            .min_by_key(|(off, d, _)| (off.abs(), *d))
            .map(|(_, _, r)| r)
    }
}

/// Derived value per patient that has an index date.
pub fn derive_variable(rule: &DerivedVariableRule, schema: &Schema, labels: &LabelSet) -> Result<BTreeMap<PatientId, DerivedValue>, MetricsError> {
    rule.validate(schema)?;
    let mut out = BTreeMap::new();
    for patient in labels.patients() {
        let Some(index) = rule.index_date(labels, patient) else { continue };
        let mut value = DerivedValue::Positive;
        for c in &rule.components {
            let spec = schema.get(&c.variable).expect("validated");
            match rule.closest(spec, labels.get(patient, &c.variable), index) {
                None => {
                    value = DerivedValue::Unknown;
                    break;
                }
                Some(r) if r.value.as_category() != Some(c.required_value.as_str()) => value = DerivedValue::Negative,
                Some(_) => {}
            }
        }
        out.insert(patient.to_string(), value);
    }
    Ok(out)
}

/// Schema holding only the derived variable, with `unknown` as its unknown
/// token.
pub fn derived_schema(rule: &DerivedVariableRule) -> Schema {
    Schema::new([VariableSpec::categorical(&rule.name, &["positive", "negative", "unknown"], Some("unknown"))]).expect("static derived schema is valid")
}

fn derived_labels(rule: &DerivedVariableRule, schema: &Schema, labels: &LabelSet, source: Source) -> Result<LabelSet, MetricsError> {
    let values = derive_variable(rule, schema, labels)?;
    let dschema = derived_schema(rule);
    let records = values
        .into_iter()
        .map(|(p, v)| LabelRecord::new(&p, &rule.name, Value::category(v.as_str()), None, source));
    Ok(LabelSet::from_records(source, records, &dschema).expect("derived records conform"))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EndToEnd {
    pub variable: String,
    pub llm: MetricReport,
    pub abstraction: Option<MetricReport>,
    pub deltas: Vec<RelativePerformance>,
}

/// Derives the variable from the prediction sources and the reference and
/// scores the `positive` class.
pub fn end_to_end_metrics(
    rule: &DerivedVariableRule,
    schema: &Schema,
    llm: &LabelSet,
    abstraction: Option<&LabelSet>,
    reference: &LabelSet,
    cohort: &BTreeSet<PatientId>,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<EndToEnd, MetricsError> {
    if cohort.is_empty() {
        return Err(MetricsError::EmptyCohort);
    }
    let dschema = derived_schema(rule);
    let target = Target::new(&rule.name, Some("positive"));
    let truth = derived_labels(rule, schema, reference, reference.source())?;
    let score = |labels: &LabelSet| -> Result<MetricReport, MetricsError> {
        let derived = derived_labels(rule, schema, labels, labels.source())?;
        let tallies = patient_tallies(&derived, &truth, cohort, &dschema, &target, 0)?;
        report_from_tallies(&tallies, &target, bootstrap)
    };
    let llm_report = score(llm)?;
    let abs_report = abstraction.map(score).transpose()?;
    let deltas = match &abs_report {
        Some(a) => relative_difference(&llm_report, a)?,
        None => Vec::new(),
    };
    Ok(EndToEnd {
        variable: rule.name.clone(),
        llm: llm_report,
        abstraction: abs_report,
        deltas,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_date;

    fn schema() -> Schema {
        let receptor = |n: &str| VariableSpec::event_list(n, &["positive", "negative", "unknown"], Some("unknown"));
        Schema::new([
            VariableSpec::dated("metastatic_dx", &["yes", "no"], None),
            receptor("er"),
            receptor("pr"),
            receptor("her2"),
        ])
        .unwrap()
    }

    fn tnbc() -> DerivedVariableRule {
        DerivedVariableRule {
            name: "tnbc".into(),
            index_variable: "metastatic_dx".into(),
            index_value: Some("yes".into()),
            window_days: (-60, 60),
            components: ["er", "pr", "her2"]
                .iter()
                .map(|v| DerivedComponent {
                    variable: v.to_string(),
                    required_value: "negative".into(),
                })
                .collect(),
        }
    }

    fn patient(src: Source, id: &str, met: &str, tests: &[(&str, &str, &str)]) -> Vec<LabelRecord> {
        let d = |s: &str| Some(parse_date(s).unwrap());
        let mut out = vec![LabelRecord::new(id, "metastatic_dx", Value::category("yes"), d(met), src)];
        out.extend(tests.iter().map(|(v, val, date)| LabelRecord::new(id, v, Value::category(val), d(date), src)));
        out
    }

    fn derive(tests: &[(&str, &str, &str)]) -> DerivedValue {
        let labels = LabelSet::from_records(Source::Llm, patient(Source::Llm, "p1", "2020-06-01", tests), &schema()).unwrap();
        derive_variable(&tnbc(), &schema(), &labels).unwrap()["p1"]
    }

    #[test]
    fn triple_negative_in_window() {
        let v = derive(&[
            ("er", "negative", "2020-05-20"),
            ("pr", "negative", "2020-05-20"),
            ("her2", "negative", "2020-07-01"),
        ]);
        assert_eq!(v, DerivedValue::Positive);
    }

    #[test]
    fn er_positive_is_negative() {
        let v = derive(&[
            ("er", "positive", "2020-05-20"),
            ("pr", "negative", "2020-05-20"),
            ("her2", "negative", "2020-06-01"),
        ]);
        assert_eq!(v, DerivedValue::Negative);
    }

    #[test]
    fn out_of_window_test_is_unknown() {
        let v = derive(&[
            ("er", "negative", "2020-05-20"),
            ("pr", "negative", "2020-05-20"),
            ("her2", "negative", "2020-03-03"),
        ]);
        assert_eq!(v, DerivedValue::Unknown);
    }

    #[test]
    fn closest_test_wins_and_ties_go_earlier() {
        let v = derive(&[
            ("er", "positive", "2020-04-15"),
            ("er", "negative", "2020-06-10"),
            ("pr", "negative", "2020-05-22"),
            ("pr", "positive", "2020-06-11"),
            ("her2", "negative", "2020-06-01"),
        ]);
        assert_eq!(v, DerivedValue::Positive);
    }

    #[test]
    fn missing_index_variable() {
        let mut rule = tnbc();
        rule.index_variable = "initial_dx".into();
        assert_eq!(
            derive_variable(&rule, &schema(), &LabelSet::new(Source::Llm)).unwrap_err(),
            MetricsError::MissingIndexVariable("initial_dx".into())
        );
    }

    #[test]
    fn perfect_components_are_perfect_end_to_end() {
        let tests = [
            ("er", "negative", "2020-05-20"),
            ("pr", "negative", "2020-05-20"),
            ("her2", "negative", "2020-06-01"),
        ];
        let mut records = patient(Source::Reference, "p1", "2020-06-01", &tests);
        records.extend(patient(Source::Reference, "p2", "2021-01-01", &[("er", "positive", "2021-01-01")]));
        let reference = LabelSet::from_records(Source::Reference, records, &schema()).unwrap();
        let llm = reference.relabeled(Source::Llm);
        let cohort: BTreeSet<PatientId> = ["p1".to_string(), "p2".to_string()].into();
        let e2e = end_to_end_metrics(
            &tnbc(),
            &schema(),
            &llm,
            Some(&reference.relabeled(Source::Abstractor1)),
            &reference,
            &cohort,
            None,
        )
        .unwrap();
        assert_eq!(e2e.llm.recall.unwrap().value(), 1.0);
        assert_eq!(e2e.llm.precision.unwrap().value(), 1.0);
        assert!(e2e.deltas.iter().all(|d| d.delta_pp.is_none_or(|x| x == 0.0)));
    }
}
