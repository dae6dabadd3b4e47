//! Metrics per subgroup of one stratification attribute.

use std::collections::BTreeMap;

use serde::Serialize;

use super::confusion::report_from_tallies;
use super::{relative_difference, BootstrapConfig, MetricReport, MetricsError, RelativePerformance, Tally, Target};
use crate::model::{AttributeMap, PatientId};

pub const DEFAULT_MIN_STRATUM_N: u64 = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumMetrics {
    pub stratum: String,
    pub n: u64,
    /// Set when `n` is below the minimum; reports are still computed but
    /// should not be interpreted.
    pub suppressed: bool,
    pub llm_counts: Tally,
    pub abstraction_counts: Option<Tally>,
    pub llm: MetricReport,
    pub abstraction: Option<MetricReport>,
    pub deltas: Vec<RelativePerformance>,
}

/// Splits per-patient tallies by one attribute. Patients without a value
/// form the `missing` stratum. Both tally maps must cover the same cohort.
pub fn stratified_metrics(
    llm: &BTreeMap<PatientId, Tally>,
    abstraction: Option<&BTreeMap<PatientId, Tally>>,
    attributes: &AttributeMap,
    attribute: &str,
    target: &Target,
    min_stratum_n: u64,
    bootstrap: Option<&BootstrapConfig>,
) -> Result<Vec<StratumMetrics>, MetricsError> {
    if !attributes.declares(attribute) {
        return Err(MetricsError::UnknownStratum(attribute.to_string()));
    }
    if let Some(abs) = abstraction {
        if abs.len() != llm.len() || !abs.keys().eq(llm.keys()) {
            return Err(MetricsError::MismatchedCohorts);
        }
    }
    let mut groups: BTreeMap<&str, Vec<&PatientId>> = BTreeMap::new();
    for p in llm.keys() {
        groups.entry(attributes.get(p, attribute)).or_default().push(p);
    }
    let subset =
        |tallies: &BTreeMap<PatientId, Tally>, ids: &[&PatientId]| -> BTreeMap<PatientId, Tally> { ids.iter().map(|p| ((*p).clone(), tallies[*p])).collect() };
    let mut out = Vec::with_capacity(groups.len());
    for (stratum, ids) in groups {
        let llm_sub = subset(llm, &ids);
        let llm_report = report_from_tallies(&llm_sub, target, bootstrap)?;
        let (abs_counts, abs_report) = match abstraction {
            Some(abs) => {
                let sub = subset(abs, &ids);
                (Some(sub.values().sum()), Some(report_from_tallies(&sub, target, bootstrap)?))
            }
            None => (None, None),
        };
        let deltas = match &abs_report {
            Some(a) => relative_difference(&llm_report, a)?,
            None => Vec::new(),
        };
        let n = ids.len() as u64;
        out.push(StratumMetrics {
            stratum: stratum.to_string(),
            n,
            suppressed: n < min_stratum_n,
            llm_counts: llm_sub.values().sum(),
            abstraction_counts: abs_counts,
            llm: llm_report,
            abstraction: abs_report,
            deltas,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::MISSING_ATTRIBUTE;

    fn tallies(n: usize) -> BTreeMap<PatientId, Tally> {
        (0..n)
            .map(|i| {
                let t = Tally {
                    tp: u64::from(i % 3 != 0),
                    fn_: u64::from(i % 3 == 0),
                    fp: u64::from(i % 5 == 0),
                    n_patients: 1,
                    n_known: 1,
                    ..Tally::default()
                };
                (format!("p{i:03}"), t)
            })
            .collect()
    }

    fn attrs(n: usize) -> AttributeMap {
        let mut a = AttributeMap::new(&["group"]);
        for i in 0..n {
            if i % 7 == 6 {
                continue;
            }
            let g = if i % 2 == 0 { "A" } else { "B" };
            a.insert(&format!("p{i:03}"), [("group".to_string(), g.to_string())].into());
        }
        a
    }

    #[test]
    fn strata_partition_pooled_counts() {
        let t = tallies(100);
        let strata = stratified_metrics(&t, Some(&t), &attrs(100), "group", &Target::new("v", None), 20, None).unwrap();
        let pooled: Tally = t.values().sum();
        let mut summed = Tally::default();
        for s in &strata {
            summed += s.llm_counts;
        }
        assert_eq!(summed, pooled);
        assert!(strata.iter().any(|s| s.stratum == MISSING_ATTRIBUTE && s.suppressed));
        assert!(strata.iter().all(|s| s.deltas.iter().all(|d| d.delta_pp.is_none_or(|x| x == 0.0))));
    }

    #[test]
    fn single_stratum_equals_pooled() {
        let t = tallies(40);
        let mut a = AttributeMap::new(&["all"]);
        for p in t.keys() {
            a.insert(p, [("all".to_string(), "x".to_string())].into());
        }
        let target = Target::new("v", None);
        let strata = stratified_metrics(&t, None, &a, "all", &target, 20, None).unwrap();
        assert_eq!(strata.len(), 1);
        assert_eq!(strata[0].llm, report_from_tallies(&t, &target, None).unwrap());
    }

    #[test]
    fn unknown_attribute() {
        let t = tallies(5);
        assert_eq!(
            stratified_metrics(&t, None, &attrs(5), "race", &Target::new("v", None), 20, None).unwrap_err(),
            MetricsError::UnknownStratum("race".into())
        );
    }
}
