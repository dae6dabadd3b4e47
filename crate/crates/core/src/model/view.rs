use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::Serialize;

use super::{CohortDataset, DataError, LabelRecord, LabelSet, Schema, Source, Value};

/// One asserted value with its date. `known` is false for the variable's
/// unknown token.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Observation {
    pub value: Value,
    pub date: Option<NaiveDate>,
    pub known: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Field {
    Single(Observation),
    /// Date-sorted events of an event-list variable.
    Events(Vec<Observation>),
}

impl Field {
    pub fn observations(&self) -> &[Observation] {
        match self {
            Field::Single(o) => std::slice::from_ref(o),
            Field::Events(v) => v,
        }
    }
}

/// Flat, deterministic view of everything one source says about a patient.
/// Variables without records are absent from `fields`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PatientView {
    pub patient_id: String,
    pub fields: BTreeMap<String, Field>,
}

impl PatientView {
    pub fn from_labels(labels: &LabelSet, schema: &Schema, patient: &str) -> Self {
        let mut fields = BTreeMap::new();
        for (variable, records) in labels.patient_records(patient) {
            let Some(spec) = schema.get(variable) else { continue };
            let obs = |r: &LabelRecord| Observation {
                value: r.value.clone(),
                date: r.event_date,
                known: !spec.is_unknown(&r.value),
            };
            let field = if spec.is_event_list() {
                Field::Events(records.iter().map(obs).collect())
            } else {
                match records.first() {
                    Some(r) => Field::Single(obs(r)),
                    None => continue,
                }
            };
            fields.insert(variable.to_string(), field);
        }
        PatientView {
            patient_id: patient.to_string(),
            fields,
        }
    }

    pub fn get(&self, variable: &str) -> Option<&Field> {
        self.fields.get(variable)
    }
}

/// View of one patient as seen by one source.
pub fn patient_view(dataset: &CohortDataset, source: Source, patient: &str) -> Result<PatientView, DataError> {
    if !dataset.contains_patient(patient) {
        return Err(DataError::UnknownPatient(patient.to_string()));
    }
    let view = match dataset.labels(source) {
        Some(labels) => PatientView::from_labels(labels, &dataset.schema, patient),
        None => PatientView {
            patient_id: patient.to_string(),
            fields: BTreeMap::new(),
        },
    };
    Ok(view)
}
