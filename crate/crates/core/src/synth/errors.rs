//! Controlled error injection into ground-truth labels.
//!
//! Errors are independent per record. Each (patient, variable) key draws
//! from its own stream seeded by the master seed, the target source and
//! the key, so corrupting a subset of patients or variables gives the same
//! result for those keys as corrupting everything.

use std::collections::BTreeMap;

use chrono::{Duration, NaiveDate};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{SynthError, SyntheticCohort};
use crate::model::{AttributeMap, LabelRecord, LabelSet, RefreshId, Schema, Source, Value, VariableSpec};
use crate::seed;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VariableErrors {
    /// Drop an asserted record.
    pub miss_rate: f64,
    /// Assert a value for a key the truth leaves empty.
    pub hallucination_rate: f64,
    /// Replace the value with a different known value.
    pub flip_rate: f64,
    /// Move a date by a non-zero offset uniform in ±`date_shift_max_days`.
    pub date_shift_rate: f64,
    pub date_shift_max_days: u32,
    /// Per refresh, mutate a key relative to the previous snapshot.
    pub instability_rate: f64,
}

impl VariableErrors {
    fn rates(&self) -> [(&'static str, f64); 5] {
        [
            ("miss_rate", self.miss_rate),
            ("hallucination_rate", self.hallucination_rate),
            ("flip_rate", self.flip_rate),
            ("date_shift_rate", self.date_shift_rate),
            ("instability_rate", self.instability_rate),
        ]
    }

    fn scaled(&self, factor: f64) -> VariableErrors {
        let s = |r: f64| (r * factor).min(1.0);
        VariableErrors {
            miss_rate: s(self.miss_rate),
            hallucination_rate: s(self.hallucination_rate),
            flip_rate: s(self.flip_rate),
            date_shift_rate: s(self.date_shift_rate),
            date_shift_max_days: self.date_shift_max_days,
            instability_rate: s(self.instability_rate),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.rates().iter().all(|(_, r)| *r == 0.0)
    }
}

/// Scales every rate for patients in one stratum. With `variables` empty
/// the multiplier applies to all variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StratumMultiplier {
    pub attribute: String,
    pub stratum: String,
    pub factor: f64,
    #[serde(default)]
    pub variables: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ErrorModel {
    /// Rates for variables without an entry in `variables`.
    pub default: VariableErrors,
    pub variables: BTreeMap<String, VariableErrors>,
    /// Applied in order; factors of matching entries multiply. Rates are
    /// capped at 1 after scaling.
    pub multipliers: Vec<StratumMultiplier>,
}

impl ErrorModel {
    pub fn zero() -> Self {
        ErrorModel::default()
    }

    pub fn uniform(errors: VariableErrors) -> Self {
        ErrorModel {
            default: errors,
            ..ErrorModel::default()
        }
    }

    pub fn with_variable(mut self, variable: &str, errors: VariableErrors) -> Self {
        self.variables.insert(variable.to_string(), errors);
        self
    }

    pub fn with_multiplier(mut self, attribute: &str, stratum: &str, factor: f64, variables: &[&str]) -> Self {
        self.multipliers.push(StratumMultiplier {
            attribute: attribute.to_string(),
            stratum: stratum.to_string(),
            factor,
            variables: variables.iter().map(|v| v.to_string()).collect(),
        });
        self
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, e) in std::iter::once(("default", &self.default)).chain(self.variables.iter().map(|(k, v)| (k.as_str(), v))) {
            for (rate, r) in e.rates() {
                if !(0.0..=1.0).contains(&r) {
                    return Err(SynthError::InvalidModel(format!("{name}.{rate} must be in [0, 1], got {r}")));
                }
            }
        }
        if let Some(m) = self.multipliers.iter().find(|m| !(m.factor >= 0.0) || !m.factor.is_finite()) {
            return Err(SynthError::InvalidModel(format!("multiplier for {}={} must be >= 0", m.attribute, m.stratum)));
        }
        Ok(())
    }

    /// Effective rates for one variable and one patient's strata.
    pub fn rates_for(&self, variable: &str, stratum_of: impl Fn(&str) -> String) -> VariableErrors {
        let base = self.variables.get(variable).unwrap_or(&self.default);
        let factor: f64 = self
            .multipliers
            .iter()
            .filter(|m| m.variables.is_empty() || m.variables.iter().any(|v| v == variable))
            .filter(|m| stratum_of(&m.attribute) == m.stratum)
            .map(|m| m.factor)
            .product();
        base.scaled(factor)
    }

    pub fn is_zero(&self) -> bool {
        self.default.is_zero() && self.variables.values().all(VariableErrors::is_zero)
    }
}

fn other_value(rng: &mut ChaCha8Rng, spec: &VariableSpec, current: &Value) -> Option<Value> {
    let options: Vec<&str> = spec.known_values().into_iter().filter(|v| current.as_category() != Some(*v)).collect();
    if options.is_empty() {
        return None;
    }
    Some(Value::category(options[rng.random_range(0..options.len())]))
}

fn shift(rng: &mut ChaCha8Rng, max: u32) -> Duration {
    let max = i64::from(max);
    let magnitude = rng.random_range(1..=max);
    Duration::days(if rng.random_bool(0.5) { magnitude } else { -magnitude })
}

/// Anchor for hallucinated dates: the patient's earliest dated truth record.
fn anchor(truth: &LabelSet, patient: &str) -> NaiveDate {
    truth
        .patient_records(patient)
        .flat_map(|(_, rs)| rs.iter().filter_map(|r| r.event_date))
        .min()
        .unwrap_or_else(|| NaiveDate::from_ymd_opt(2015, 1, 1).expect("valid date"))
}

fn corrupt_key(
    rng: &mut ChaCha8Rng,
    spec: &VariableSpec,
    rates: &VariableErrors,
    records: &[LabelRecord],
    patient: &str,
    anchor: impl FnOnce() -> NaiveDate,
    source: Source,
) -> Vec<LabelRecord> {
    let mut out = Vec::with_capacity(records.len());
    if records.is_empty() {
        if rng.random::<f64>() < rates.hallucination_rate && spec.allowed_values.is_some() {
            let values = spec.known_values();
            if !values.is_empty() {
                let value = Value::category(values[rng.random_range(0..values.len())]);
                let date = spec.is_dated().then(|| anchor() + Duration::days(rng.random_range(0..365)));
                out.push(LabelRecord::new(patient, &spec.name, value, date, source));
            }
        }
        return out;
    }
    for r in records {
        // Fixed draw order keeps streams aligned across rate settings.
        let (u_miss, u_flip, u_shift): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        if u_miss < rates.miss_rate {
            continue;
        }
        let mut r = r.clone();
        r.source = source;
        if u_flip < rates.flip_rate && !spec.is_unknown(&r.value) {
            if let Some(v) = other_value(rng, spec, &r.value) {
                r.value = v;
            }
        }
        if u_shift < rates.date_shift_rate && rates.date_shift_max_days > 0 {
            if let Some(d) = r.event_date {
                r.event_date = Some(d + shift(rng, rates.date_shift_max_days));
            }
        }
        out.push(r);
    }
    out
}

/// Derives a label set for `target` from the truth by applying `model`.
/// Every patient in the attribute map and every schema variable is
/// visited; the zero model returns the truth relabelled.
pub fn corrupt(cohort: &SyntheticCohort, model: &ErrorModel, target: Source, seed: u64) -> Result<LabelSet, SynthError> {
    corrupt_labels(&cohort.truth, &cohort.schema, &cohort.attributes, model, target, seed)
}

pub(crate) fn corrupt_labels(
    truth: &LabelSet,
    schema: &Schema,
    attributes: &AttributeMap,
    model: &ErrorModel,
    target: Source,
    seed: u64,
) -> Result<LabelSet, SynthError> {
    model.validate()?;
    let mut out = LabelSet::new(target);
    for patient in attributes.patients() {
        for spec in schema.variables() {
            let rates = model.rates_for(&spec.name, |a| attributes.get(patient, a).to_string());
            let records = truth.get(patient, &spec.name);
            if rates.is_zero() {
                for r in records {
                    out.insert(LabelRecord { source: target, ..r.clone() }, schema)
                        .map_err(crate::model::DataError::from)?;
                }
                continue;
            }
            let mut rng = seed::rng(seed, &["corrupt", target.as_str(), patient, &spec.name]);
            for r in corrupt_key(&mut rng, spec, &rates, records, patient, || anchor(truth, patient), target) {
                out.insert(r, schema).map_err(crate::model::DataError::from)?;
            }
        }
    }
    Ok(out)
}

/// Successive snapshots of the same extraction. The first equals `base`;
/// each later snapshot mutates every key of its predecessor with the
/// variable's `instability_rate`: dated values move by 31 to 365 days,
/// undated values flip. Snapshots carry refresh ids `1..=n`.
pub fn refresh_snapshots(base: &LabelSet, cohort: &SyntheticCohort, model: &ErrorModel, n: usize, seed: u64) -> Result<Vec<LabelSet>, SynthError> {
    model.validate()?;
    let mut out: Vec<LabelSet> = Vec::with_capacity(n);
    let mut current = base.clone();
    for k in 1..=n {
        if k > 1 {
            let mut next = LabelSet::new(current.source());
            let tag = k.to_string();
            for ((patient, variable), records) in current.groups() {
                let spec = cohort.schema.get(variable).expect("labels conform to schema");
                let rate = model.rates_for(variable, |a| cohort.attributes.get(patient, a).to_string()).instability_rate;
                let mut rng = seed::rng(seed, &["refresh", &tag, patient, variable]);
                let mutate = rng.random::<f64>() < rate;
                for r in records {
                    let mut r = r.clone();
                    if mutate {
                        match r.event_date {
                            Some(d) => {
                                let magnitude = Duration::days(rng.random_range(31..=365));
                                r.event_date = Some(if rng.random_bool(0.5) { d + magnitude } else { d - magnitude });
                            }
                            None => {
                                if let Some(v) = other_value(&mut rng, spec, &r.value) {
                                    r.value = v;
                                }
                            }
                        }
                    }
                    next.insert(r, &cohort.schema).map_err(crate::model::DataError::from)?;
                }
            }
            current = next;
        }
        out.push(current.with_refresh_id(&RefreshId::new(&k.to_string())));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate_truth, GeneratorConfig};

    fn cohort(n: usize) -> SyntheticCohort {
        generate_truth(&GeneratorConfig {
            n_patients: n,
            ..GeneratorConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn zero_model_is_identity() {
        let c = cohort(500);
        let out = corrupt(&c, &ErrorModel::zero(), Source::Llm, 3).unwrap();
        assert_eq!(out, c.truth.relabeled(Source::Llm));
    }

    #[test]
    fn corruption_is_deterministic() {
        let c = cohort(300);
        let m = ErrorModel::uniform(VariableErrors {
            miss_rate: 0.1,
            flip_rate: 0.1,
            hallucination_rate: 0.05,
            date_shift_rate: 0.2,
            date_shift_max_days: 40,
            ..VariableErrors::default()
        });
        assert_eq!(corrupt(&c, &m, Source::Llm, 9).unwrap(), corrupt(&c, &m, Source::Llm, 9).unwrap());
        assert_ne!(corrupt(&c, &m, Source::Llm, 9).unwrap(), corrupt(&c, &m, Source::Llm, 10).unwrap());
    }

    #[test]
    fn invalid_models_are_rejected() {
        let m = ErrorModel::uniform(VariableErrors {
            flip_rate: 1.2,
            ..VariableErrors::default()
        });
        assert!(m.validate().is_err());
        let m = ErrorModel::zero().with_multiplier("group", "group_2", -1.0, &[]);
        assert!(m.validate().is_err());
    }

    #[test]
    fn multiplier_scales_error_counts() {
        let c = cohort(10_000);
        let model = ErrorModel::zero()
            .with_variable(
                "stage",
                VariableErrors {
                    flip_rate: 0.05,
                    ..VariableErrors::default()
                },
            )
            .with_multiplier("group", "group_2", 3.0, &["stage"]);
        let out = corrupt(&c, &model, Source::Llm, 1).unwrap();
        let mut errors: BTreeMap<&str, (f64, f64)> = BTreeMap::new();
        for p in c.patient_ids() {
            let slot = errors.entry(c.attributes.get(p, "group")).or_default();
            slot.1 += 1.0;
            if out.single(p, "stage").map(|r| &r.value) != c.truth.single(p, "stage").map(|r| &r.value) {
                slot.0 += 1.0;
            }
        }
        let (e1, n1) = errors["group_1"];
        let (e2, n2) = errors["group_2"];
        for (e, n, p) in [(e1, n1, 0.05), (e2, n2, 0.15)] {
            let sd = (p * (1.0 - p) / n).sqrt();
            assert!((e / n - p).abs() <= 3.0 * sd, "rate {} vs {p}", e / n);
        }
        let ratio = (e2 / n2) / (e1 / n1);
        assert!((2.0..4.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn snapshots_drift_only_with_instability() {
        let c = cohort(400);
        let base = c.truth.relabeled(Source::Llm);
        let stable = refresh_snapshots(&base, &c, &ErrorModel::zero(), 3, 5).unwrap();
        assert_eq!(stable.len(), 3);
        assert_eq!(stable[2].refresh_id(), Some(&RefreshId::new("3")));
        assert_eq!(stable[0].with_refresh_id(&RefreshId::new("3")), stable[2]);
        let unstable = ErrorModel::zero().with_variable(
            "metastatic_dx",
            VariableErrors {
                instability_rate: 0.5,
                ..VariableErrors::default()
            },
        );
        let snaps = refresh_snapshots(&base, &c, &unstable, 2, 5).unwrap();
        let moved = c
            .patient_ids()
            .filter(|p| snaps[0].get(p, "metastatic_dx").first().map(|r| r.event_date) != snaps[1].get(p, "metastatic_dx").first().map(|r| r.event_date))
            .count();
        assert!(moved > 0);
    }
}
