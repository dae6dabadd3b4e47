//! Stability of one variable across two snapshots of the same source.

use std::collections::BTreeSet;

use serde::Serialize;

use super::CheckError;
use crate::model::{LabelRecord, LabelSet, PatientId, Schema};
use crate::reference::Comparator;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefreshChange {
    pub patient_id: PatientId,
    pub before: String,
    /// `removed` when the newer snapshot no longer has the variable.
    pub after: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct RefreshDiff {
    /// Patients with the variable in either snapshot.
    pub n_compared: usize,
    /// Value changes, date moves beyond tolerance and removals.
    pub changed: Vec<RefreshChange>,
    /// Patients documented only in the newer snapshot.
    pub added: Vec<PatientId>,
}

fn render(records: &[LabelRecord]) -> String {
    if records.is_empty() {
        return "removed".into();
    }
    records
        .iter()
        .map(|r| match r.event_date {
            Some(d) => format!("{}@{}", r.value, d.format("%Y-%m-%d")),
            None => r.value.to_string(),
        })
        .collect::<Vec<_>>()
        .join(", ")
}

/// Compares `variable` between an older and a newer snapshot.
pub fn refresh_stability(older: &LabelSet, newer: &LabelSet, variable: &str, schema: &Schema, tolerance_days: u32) -> Result<RefreshDiff, CheckError> {
    let spec = schema.get(variable).ok_or_else(|| CheckError::UnknownVariable(variable.to_string()))?;
    let (v1, v2) = match (older.refresh_id(), newer.refresh_id()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(CheckError::MissingRefreshId),
    };
    if v1 >= v2 {
        return Err(CheckError::RefreshOrder {
            older: v1.to_string(),
            newer: v2.to_string(),
        });
    }
    let patients: BTreeSet<&str> = older.keys().chain(newer.keys()).filter(|(_, v)| *v == variable).map(|(p, _)| p).collect();
    let comparator = Comparator::new(tolerance_days);
    let mut diff = RefreshDiff {
        n_compared: patients.len(),
        ..RefreshDiff::default()
    };
    for p in patients {
        let (a, b) = (older.get(p, variable), newer.get(p, variable));
        if a.is_empty() {
            diff.added.push(p.to_string());
        } else if !comparator.agree(spec, a, b) {
            diff.changed.push(RefreshChange {
                patient_id: p.to_string(),
                before: render(a),
                after: render(b),
            });
        }
    }
    Ok(diff)
}
