//! Categorical distribution comparison and monthly trend series.

use std::collections::BTreeMap;

use serde::Serialize;

use super::ReplicationError;
use crate::checks::{evaluate_patient_check, month_label, monthly_counts, Expr, Outcome};
use crate::model::{CohortDataset, Field, LabelSet, PatientView, Source};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionComparison {
    pub n_extracted: u64,
    pub n_reference: u64,
    pub extracted: BTreeMap<String, f64>,
    pub reference: BTreeMap<String, f64>,
    /// Extracted minus reference fraction per category.
    pub deltas: BTreeMap<String, f64>,
    pub tvd: f64,
    /// Goodness of fit of the extracted counts to the reference
    /// proportions; `None` when some expected count is below 5.
    pub chi_square: Option<f64>,
    pub chi_square_df: usize,
}

/// Compares category counts. The reference defines the category space;
/// categories it lacks must not appear in the extracted counts.
pub fn compare_distribution(extracted: &BTreeMap<String, u64>, reference: &BTreeMap<String, u64>) -> Result<DistributionComparison, ReplicationError> {
    let foreign: Vec<String> = extracted.keys().filter(|k| !reference.contains_key(*k)).cloned().collect();
    if !foreign.is_empty() {
        return Err(ReplicationError::MismatchedCategories(foreign));
    }
    let n_ext: u64 = extracted.values().sum();
    let n_ref: u64 = reference.values().sum();
    if n_ext == 0 || n_ref == 0 {
        return Err(ReplicationError::EmptyDistribution);
    }
    let mut out = DistributionComparison {
        n_extracted: n_ext,
        n_reference: n_ref,
        extracted: BTreeMap::new(),
        reference: BTreeMap::new(),
        deltas: BTreeMap::new(),
        tvd: 0.0,
        chi_square: None,
        chi_square_df: reference.len().saturating_sub(1),
    };
    let mut chi = 0.0;
    let mut chi_ok = true;
    for (cat, &r) in reference {
        let e = extracted.get(cat).copied().unwrap_or(0);
        let (pe, pr) = (e as f64 / n_ext as f64, r as f64 / n_ref as f64);
        out.extracted.insert(cat.clone(), pe);
        out.reference.insert(cat.clone(), pr);
        out.deltas.insert(cat.clone(), pe - pr);
        out.tvd += (pe - pr).abs();
        let expected = n_ext as f64 * pr;
        if expected < 5.0 {
            chi_ok = false;
        } else {
            chi += (e as f64 - expected).powi(2) / expected;
        }
    }
    out.tvd /= 2.0;
    out.chi_square = chi_ok.then_some(chi);
    Ok(out)
}

fn views(dataset: &CohortDataset, labels: &LabelSet) -> Vec<PatientView> {
    dataset
        .patients()
        .iter()
        .map(|p| PatientView::from_labels(labels, &dataset.schema, p))
        .collect()
}

/// Known values of a single-valued variable over the patients passing
/// `filter`.
pub fn category_counts(dataset: &CohortDataset, source: Source, variable: &str, filter: Option<&Expr>) -> Result<BTreeMap<String, u64>, ReplicationError> {
    let spec = dataset
        .schema
        .get(variable)
        .ok_or_else(|| ReplicationError::UnknownVariable(variable.to_string()))?;
    if spec.is_event_list() {
        return Err(ReplicationError::NotSingleValued(variable.to_string()));
    }
    let labels = dataset.labels(source).ok_or(ReplicationError::MissingSource(source))?;
    let mut counts = BTreeMap::new();
    for view in views(dataset, labels) {
        if filter.is_some_and(|f| evaluate_patient_check(f, &view) != Outcome::Pass) {
            continue;
        }
        if let Some(Field::Single(o)) = view.get(variable) {
            if o.known {
                *counts.entry(o.value.to_string()).or_insert(0) += 1;
            }
        }
    }
    Ok(counts)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct MonthCount {
    pub month: String,
    pub count: u64,
}

/// Calendar-month counts of known dated records, zero-filled between the
/// first and last observed month.
pub fn trend_series(
    dataset: &CohortDataset,
    source: Source,
    variable: &str,
    value: Option<&str>,
    filter: Option<&Expr>,
) -> Result<Vec<MonthCount>, ReplicationError> {
    let spec = dataset
        .schema
        .get(variable)
        .ok_or_else(|| ReplicationError::UnknownVariable(variable.to_string()))?;
    if !spec.is_dated() {
        return Err(ReplicationError::NoDatedRecords(variable.to_string()));
    }
    let labels = dataset.labels(source).ok_or(ReplicationError::MissingSource(source))?;
    let months = monthly_counts(&views(dataset, labels), variable, value, filter);
    let (Some(&first), Some(&last)) = (months.keys().next(), months.keys().next_back()) else {
        return Err(ReplicationError::NoDatedRecords(variable.to_string()));
    };
    Ok((first..=last)
        .map(|m| MonthCount {
            month: month_label(m),
            count: months.get(&m).copied().unwrap_or(0),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{parse_date, AttributeMap, LabelRecord, Schema, Value, VariableSpec};
    use proptest::prelude::*;

    fn counts(pairs: &[(&str, u64)]) -> BTreeMap<String, u64> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn identical_is_zero() {
        let c = counts(&[("A", 50), ("B", 50)]);
        let d = compare_distribution(&c, &c).unwrap();
        assert_eq!(d.tvd, 0.0);
        assert_eq!(d.chi_square, Some(0.0));
    }

    #[test]
    fn ten_point_shift() {
        let d = compare_distribution(&counts(&[("A", 60), ("B", 40)]), &counts(&[("A", 50), ("B", 50)])).unwrap();
        assert!((d.tvd - 0.10).abs() < 1e-12);
        assert!((d.deltas["A"] - 0.10).abs() < 1e-12);
        // (60-50)^2/50 + (40-50)^2/50
        assert!((d.chi_square.unwrap() - 4.0).abs() < 1e-12);
    }

    #[test]
    fn absent_category() {
        let d = compare_distribution(&counts(&[("A", 10)]), &counts(&[("A", 7), ("B", 3)])).unwrap();
        assert!((d.deltas["B"] + 0.3).abs() < 1e-12);
        assert_eq!(d.chi_square, None, "expected count for B is 3");
    }

    #[test]
    fn mismatched_space() {
        assert!(matches!(
            compare_distribution(&counts(&[("C", 1)]), &counts(&[("A", 1)])),
            Err(ReplicationError::MismatchedCategories(_))
        ));
    }

    fn dataset(rows: &[(&str, &str)]) -> CohortDataset {
        let schema = Schema::new([VariableSpec::event_list("oral_drug", &[], None)]).unwrap();
        let records = rows
            .iter()
            .map(|(p, d)| LabelRecord::new(p, "oral_drug", Value::category("drug_x"), Some(parse_date(d).unwrap()), Source::Llm));
        let labels = LabelSet::from_records(Source::Llm, records, &schema).unwrap();
        CohortDataset::new(schema, AttributeMap::new(&[]), [labels])
    }

    #[test]
    fn trend_is_zero_filled() {
        let ds = dataset(&[
            ("p1", "2023-01-03"),
            ("p2", "2023-01-10"),
            ("p3", "2023-01-20"),
            ("p1", "2023-03-01"),
            ("p2", "2023-03-02"),
            ("p3", "2023-03-05"),
            ("p4", "2023-03-09"),
            ("p5", "2023-03-31"),
        ]);
        let series = trend_series(&ds, Source::Llm, "oral_drug", None, None).unwrap();
        let got: Vec<(String, u64)> = series.into_iter().map(|m| (m.month, m.count)).collect();
        assert_eq!(got, vec![("2023-01".into(), 3), ("2023-02".into(), 0), ("2023-03".into(), 5)]);
    }

    #[test]
    fn empty_trend_is_an_error() {
        let ds = dataset(&[]);
        assert!(matches!(
            trend_series(&ds, Source::Llm, "oral_drug", None, None),
            Err(ReplicationError::NoDatedRecords(_))
        ));
    }

    proptest! {
        #[test]
        fn tvd_bounds(a in prop::collection::vec(0u64..50, 4), b in prop::collection::vec(1u64..50, 4)) {
            let names = ["w", "x", "y", "z"];
            let ext: BTreeMap<String, u64> = names.iter().zip(&a).map(|(k, v)| (k.to_string(), *v)).collect();
            let refc: BTreeMap<String, u64> = names.iter().zip(&b).map(|(k, v)| (k.to_string(), *v)).collect();
            prop_assume!(a.iter().sum::<u64>() > 0);
            let d = compare_distribution(&ext, &refc).unwrap();
            prop_assert!((0.0..=1.0 + 1e-12).contains(&d.tvd));
            let same = d.extracted == d.reference;
            prop_assert_eq!(d.tvd == 0.0, same);
        }
    }
}
