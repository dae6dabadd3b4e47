//! Concordance of extracted-data conclusions with benchmarks.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::km::{km_estimate, median_survival, KmCurve};
use super::{ReplicationError, SurvivalRecord, DAYS_PER_MONTH};
use crate::model::AttributeMap;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchmarkKind {
    /// Compared with the same quantity computed on the reference dataset.
    InternalDataset,
    /// Compared with values given in the configuration.
    ExternalValue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case", deny_unknown_fields)]
pub enum BenchmarkRule {
    /// Median survival of `better` exceeds that of `worse`.
    Direction { better: String, worse: String },
    /// Median survival of `arm` within `tolerance` months of the benchmark.
    /// `value` is required for external benchmarks and ignored for
    /// internal ones.
    Tolerance {
        arm: String,
        #[serde(default)]
        value: Option<f64>,
        tolerance: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkSpec {
    pub name: String,
    pub kind: BenchmarkKind,
    #[serde(flatten)]
    pub rule: BenchmarkRule,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationResult {
    pub name: String,
    /// `median_os_difference_months` or `median_os_months`.
    pub quantity: String,
    pub rule: String,
    pub value_extracted: Option<f64>,
    pub value_reference: Option<f64>,
    pub abs_difference: Option<f64>,
    pub concordant: bool,
    pub reason: Option<String>,
}

/// Median survival per arm, in months; `None` when undefined.
pub type ArmMedians = BTreeMap<String, Option<f64>>;

pub fn arm_medians(curves: &BTreeMap<String, KmCurve>) -> ArmMedians {
    curves
        .iter()
        .map(|(arm, c)| (arm.clone(), median_survival(c).map(|d| d as f64 / DAYS_PER_MONTH)))
        .collect()
}

fn median_of(medians: &ArmMedians, arm: &str) -> Result<Option<f64>, ReplicationError> {
    medians.get(arm).copied().ok_or_else(|| ReplicationError::UnknownArm(arm.to_string()))
}

fn direction_rule(medians: &ArmMedians, better: &str, worse: &str) -> Result<(Option<f64>, Option<String>), ReplicationError> {
    let (b, w) = (median_of(medians, better)?, median_of(medians, worse)?);
    Ok(match (b, w) {
        (Some(b), Some(w)) => (Some(b - w), None),
        (None, _) => (None, Some(format!("median undefined for arm {better}"))),
        (_, None) => (None, Some(format!("median undefined for arm {worse}"))),
    })
}

/// Checks one benchmark against extracted arm medians. Internal
/// benchmarks need the reference medians.
pub fn benchmark_concordance(extracted: &ArmMedians, reference: Option<&ArmMedians>, spec: &BenchmarkSpec) -> Result<ReplicationResult, ReplicationError> {
    let reference = match spec.kind {
        BenchmarkKind::InternalDataset => Some(reference.ok_or(ReplicationError::MissingReference)?),
        BenchmarkKind::ExternalValue => None,
    };
    let mut result = ReplicationResult {
        name: spec.name.clone(),
        quantity: String::new(),
        rule: String::new(),
        value_extracted: None,
        value_reference: None,
        abs_difference: None,
        concordant: false,
        reason: None,
    };
    match &spec.rule {
        BenchmarkRule::Direction { better, worse } => {
            result.quantity = "median_os_difference_months".into();
            result.rule = format!("sign(median {better} - median {worse})");
            let (ext, why) = direction_rule(extracted, better, worse)?;
            result.value_extracted = ext;
            result.reason = why;
            let expected_sign = match reference {
                Some(r) => {
                    let (rv, rwhy) = direction_rule(r, better, worse)?;
                    result.value_reference = rv;
                    if result.reason.is_none() {
                        result.reason = rwhy.map(|w| format!("reference {w}"));
                    }
                    rv.map(f64::signum)
                }
                None => Some(1.0),
            };
            if let (Some(e), Some(r)) = (result.value_extracted, result.value_reference) {
                result.abs_difference = Some((e - r).abs());
            }
            result.concordant = match (result.value_extracted, expected_sign) {
                (Some(e), Some(s)) => e != 0.0 && e.signum() == s,
                _ => false,
            };
            if !result.concordant && result.reason.is_none() {
                result.reason = Some("direction differs".into());
            }
        }
        BenchmarkRule::Tolerance { arm, value, tolerance } => {
            result.quantity = "median_os_months".into();
            result.rule = format!("|median {arm} - benchmark| <= {tolerance}");
            result.value_extracted = median_of(extracted, arm)?;
            result.value_reference = match reference {
                Some(r) => median_of(r, arm)?,
                None => Some(value.ok_or_else(|| ReplicationError::InvalidBenchmark(format!("`{}` needs a value", spec.name)))?),
            };
            match (result.value_extracted, result.value_reference) {
                (Some(e), Some(r)) => {
                    let diff = (e - r).abs();
                    result.abs_difference = Some(diff);
                    result.concordant = diff <= *tolerance;
                    if !result.concordant {
                        result.reason = Some("outside tolerance".into());
                    }
                }
                (None, _) => result.reason = Some(format!("median undefined for arm {arm}")),
                (_, None) => result.reason = Some(format!("reference median undefined for arm {arm}")),
            }
        }
    }
    Ok(result)
}

/// What a survival gap between strata is expected to look like.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "expect", rename_all = "snake_case", deny_unknown_fields)]
pub enum EquityExpectation {
    /// Gap signs must match those of the reference dataset.
    Dataset,
    /// Median survival of `higher` exceeds that of `lower`.
    Direction { higher: String, lower: String },
    /// Every pairwise median gap within `tolerance_days`.
    NoGap { tolerance_days: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StratumSurvival {
    pub stratum: String,
    pub n: u64,
    pub suppressed: bool,
    pub median_days: Option<i64>,
    #[serde(skip)]
    pub curve: Option<KmCurve>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MedianGap {
    pub a: String,
    pub b: String,
    /// Median of `a` minus median of `b`, in days.
    pub extracted: Option<i64>,
    pub reference: Option<i64>,
    pub concordant: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EquityResult {
    pub attribute: String,
    pub strata: Vec<StratumSurvival>,
    pub gaps: Vec<MedianGap>,
    pub concordant: bool,
}

fn stratum_curves(records: &[SurvivalRecord], attributes: &AttributeMap, attribute: &str, min_n: u64) -> Result<Vec<StratumSurvival>, ReplicationError> {
    let mut groups: BTreeMap<&str, Vec<SurvivalRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(attributes.get(&r.patient_id, attribute)).or_default().push(r.clone());
    }
    groups
        .into_par_iter()
        .map(|(stratum, rs)| {
            let n = rs.len() as u64;
            if n < min_n {
                return Ok(StratumSurvival {
                    stratum: stratum.to_string(),
                    n,
                    suppressed: true,
                    median_days: None,
                    curve: None,
                });
            }
            let curve = km_estimate(&rs)?;
            Ok(StratumSurvival {
                stratum: stratum.to_string(),
                n,
                suppressed: false,
                median_days: median_survival(&curve),
                curve: Some(curve),
            })
        })
        .collect()
}

fn gap(strata: &[StratumSurvival], a: &str, b: &str) -> Option<i64> {
    let m = |s: &str| strata.iter().find(|x| x.stratum == s && !x.suppressed).and_then(|x| x.median_days);
    m(a).zip(m(b)).map(|(x, y)| x - y)
}

/// Survival by stratum of `attribute` on extracted data, with median gaps
/// checked against `expectation`. Strata below `min_n` are suppressed.
pub fn equity_replication(
    extracted: &[SurvivalRecord],
    reference: Option<&[SurvivalRecord]>,
    attributes: &AttributeMap,
    attribute: &str,
    expectation: &EquityExpectation,
    min_n: u64,
) -> Result<EquityResult, ReplicationError> {
    if !attributes.declares(attribute) {
        return Err(ReplicationError::UnknownStratum(attribute.to_string()));
    }
    let strata = stratum_curves(extracted, attributes, attribute, min_n)?;
    let live: Vec<&str> = strata.iter().filter(|s| !s.suppressed).map(|s| s.stratum.as_str()).collect();
    if live.is_empty() {
        return Err(ReplicationError::AllStrataSuppressed(attribute.to_string()));
    }
    let pairs: Vec<(String, String)> = match expectation {
        EquityExpectation::Direction { higher, lower } => {
            for s in [higher, lower] {
                if !strata.iter().any(|x| &x.stratum == s) {
                    return Err(ReplicationError::UnknownStratum(format!("{attribute}={s}")));
                }
            }
            vec![(higher.clone(), lower.clone())]
        }
        _ => live
            .iter()
            .enumerate()
            .flat_map(|(i, a)| live[i + 1..].iter().map(move |b| (a.to_string(), b.to_string())))
            .collect(),
    };
    let ref_strata = match (expectation, reference) {
        (EquityExpectation::Dataset, Some(r)) => Some(stratum_curves(r, attributes, attribute, min_n)?),
        (EquityExpectation::Dataset, None) => return Err(ReplicationError::MissingReference),
        _ => None,
    };
    let gaps: Vec<MedianGap> = pairs
        .into_iter()
        .map(|(a, b)| {
            let extracted = gap(&strata, &a, &b);
            let reference = ref_strata.as_ref().and_then(|r| gap(r, &a, &b));
            let (concordant, reason) = match (expectation, extracted) {
                (_, None) => (false, Some("median undefined or stratum suppressed".to_string())),
                (EquityExpectation::Direction { .. }, Some(g)) => (g > 0, (g <= 0).then(|| "direction differs".to_string())),
                (EquityExpectation::NoGap { tolerance_days }, Some(g)) => {
                    let ok = (g as f64).abs() <= *tolerance_days;
                    (ok, (!ok).then(|| "gap exceeds tolerance".to_string()))
                }
                (EquityExpectation::Dataset, Some(g)) => match reference {
                    Some(r) => {
                        let ok = g.signum() == r.signum();
                        (ok, (!ok).then(|| "direction differs from reference".to_string()))
                    }
                    None => (false, Some("reference median undefined".to_string())),
                },
            };
            MedianGap {
                a,
                b,
                extracted,
                reference,
                concordant,
                reason,
            }
        })
        .collect();
    Ok(EquityResult {
        attribute: attribute.to_string(),
        concordant: !gaps.is_empty() && gaps.iter().all(|g| g.concordant),
        strata,
        gaps,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn medians(pairs: &[(&str, Option<f64>)]) -> ArmMedians {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    fn direction() -> BenchmarkSpec {
        BenchmarkSpec {
            name: "a_better".into(),
            kind: BenchmarkKind::ExternalValue,
            rule: BenchmarkRule::Direction {
                better: "A".into(),
                worse: "B".into(),
            },
        }
    }

    #[test]
    fn direction_only() {
        let r = benchmark_concordance(&medians(&[("A", Some(14.0)), ("B", Some(11.0))]), None, &direction()).unwrap();
        assert!(r.concordant);
        assert_eq!(r.value_extracted, Some(3.0));
        let r = benchmark_concordance(&medians(&[("A", Some(11.0)), ("B", Some(14.0))]), None, &direction()).unwrap();
        assert!(!r.concordant);
    }

    #[test]
    fn undefined_median_is_discordant() {
        let r = benchmark_concordance(&medians(&[("A", None), ("B", Some(11.0))]), None, &direction()).unwrap();
        assert!(!r.concordant);
        assert!(r.reason.unwrap().contains("undefined"));
    }

    #[test]
    fn tolerance_rule() {
        let spec = BenchmarkSpec {
            name: "median_a".into(),
            kind: BenchmarkKind::ExternalValue,
            rule: BenchmarkRule::Tolerance {
                arm: "A".into(),
                value: Some(24.0),
                tolerance: 3.0,
            },
        };
        let r = benchmark_concordance(&medians(&[("A", Some(26.1))]), None, &spec).unwrap();
        assert!(r.concordant);
        assert!((r.abs_difference.unwrap() - 2.1).abs() < 1e-9);
        let r = benchmark_concordance(&medians(&[("A", Some(27.5))]), None, &spec).unwrap();
        assert!(!r.concordant);
    }

    #[test]
    fn absent_arm_is_an_error() {
        assert!(matches!(
            benchmark_concordance(&medians(&[("A", Some(1.0))]), None, &direction()),
            Err(ReplicationError::UnknownArm(a)) if a == "B"
        ));
    }

    #[test]
    fn internal_benchmark_uses_reference_direction() {
        let spec = BenchmarkSpec {
            kind: BenchmarkKind::InternalDataset,
            ..direction()
        };
        let ext = medians(&[("A", Some(10.0)), ("B", Some(12.0))]);
        let refm = medians(&[("A", Some(9.0)), ("B", Some(13.0))]);
        let r = benchmark_concordance(&ext, Some(&refm), &spec).unwrap();
        assert!(r.concordant, "both say B is better");
        assert!(matches!(benchmark_concordance(&ext, None, &spec), Err(ReplicationError::MissingReference)));
    }

    #[test]
    fn spec_parses_from_toml() {
        let spec: BenchmarkSpec = toml::from_str("name = 'x'\nkind = 'external_value'\nrule = 'direction'\nbetter = 'A'\nworse = 'B'\n").unwrap();
        assert_eq!(spec, direction().clone_with_name("x"));
    }

    impl BenchmarkSpec {
        fn clone_with_name(&self, name: &str) -> Self {
            BenchmarkSpec {
                name: name.into(),
                ..self.clone()
            }
        }
    }
}
