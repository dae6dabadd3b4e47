//! Cohort-level checks: category distributions, month-over-month counts and
//! per-stratum rates.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};

use super::eval::{evaluate_patient_check, Outcome};
use super::expr::Expr;
use super::{CheckError, CheckFinding, Scope};
use crate::model::{AttributeMap, Field, PatientId, PatientView};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StratifyBy {
    Variable(String),
    Attribute(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum CohortCheck {
    /// Fraction of filtered patients with a known value of `variable` that
    /// carry each category. Observed categories without a range are
    /// expected at 0.
    DistributionRange {
        variable: String,
        filter: Option<Expr>,
        ranges: BTreeMap<String, (f64, f64)>,
    },
    /// Monthly counts of dated records compared with a rolling median. A
    /// month is flagged when its deviation exceeds both `k` x MAD and
    /// `min_deviation`.
    MonthlyCountStability {
        variable: String,
        value: Option<String>,
        filter: Option<Expr>,
        window: usize,
        k: f64,
        min_deviation: f64,
    },
    /// Share of filtered patients satisfying `condition`, per stratum.
    StratifiedRateRange {
        condition: Expr,
        filter: Option<Expr>,
        stratify_by: StratifyBy,
        ranges: BTreeMap<String, (f64, f64)>,
    },
}

/// Counts for one cohort check: each category, month or stratum is one
/// evaluated unit.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CohortOutcome {
    pub n_evaluated: usize,
    pub n_flagged: usize,
    pub n_not_applicable: usize,
    pub findings: Vec<CheckFinding>,
}

fn passes(filter: &Option<Expr>, view: &PatientView) -> bool {
    filter.as_ref().is_none_or(|f| evaluate_patient_check(f, view) == Outcome::Pass)
}

fn known_values(view: &PatientView, variable: &str) -> BTreeSet<String> {
    view.get(variable)
        .map(|f| f.observations().iter().filter(|o| o.known).map(|o| o.value.to_string()).collect())
        .unwrap_or_default()
}

fn fmt_range((lo, hi): (f64, f64)) -> String {
    format!("[{lo}, {hi}]")
}

fn median(xs: &mut [f64]) -> f64 {
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Rolling median and median absolute deviation over a window of `w`
/// values centred on each index, shifted inwards at the series ends.
pub fn rolling_median_mad(series: &[f64], w: usize) -> Vec<(f64, f64)> {
    let n = series.len();
    (0..n)
        .map(|i| {
            let start = i.saturating_sub(w / 2).min(n - w);
            let mut win: Vec<f64> = series[start..start + w].to_vec();
            let med = median(&mut win);
            let mut dev: Vec<f64> = win.iter().map(|x| (x - med).abs()).collect();
            (med, median(&mut dev))
        })
        .collect()
}

/// Months since year 0.
pub(crate) fn month_index(d: NaiveDate) -> i32 {
    d.year() * 12 + d.month0() as i32
}

/// `YYYY-MM` for a month index.
pub(crate) fn month_label(idx: i32) -> String {
    format!("{:04}-{:02}", idx.div_euclid(12), idx.rem_euclid(12) + 1)
}

/// Known, dated records of `variable` (optionally only `value`) per month
/// over the patients passing `filter`.
pub(crate) fn monthly_counts<'a>(
    views: impl IntoIterator<Item = &'a PatientView>,
    variable: &str,
    value: Option<&str>,
    filter: Option<&Expr>,
) -> BTreeMap<i32, u64> {
    let mut months: BTreeMap<i32, u64> = BTreeMap::new();
    for view in views {
        if filter.is_some_and(|f| evaluate_patient_check(f, view) != Outcome::Pass) {
            continue;
        }
        let Some(field) = view.get(variable) else { continue };
        for o in field.observations() {
            let wanted = o.known && value.is_none_or(|x| o.value.as_category() == Some(x));
            if let (true, Some(d)) = (wanted, o.date) {
                *months.entry(month_index(d)).or_default() += 1;
            }
        }
    }
    months
}

pub(crate) fn run(
    check_id: &str,
    check: &CohortCheck,
    views: &BTreeMap<PatientId, PatientView>,
    attributes: &AttributeMap,
) -> Result<CohortOutcome, CheckError> {
    if views.is_empty() {
        return Err(CheckError::EmptyDataset);
    }
    let finding = |slice: String, observed: String, expected: String| CheckFinding {
        check_id: check_id.to_string(),
        scope: Scope::Slice(slice),
        observed,
        expected,
    };
    let mut out = CohortOutcome::default();
    match check {
        CohortCheck::DistributionRange { variable, filter, ranges } => {
            let mut n = 0u64;
            let mut counts: BTreeMap<String, u64> = ranges.keys().map(|k| (k.clone(), 0)).collect();
            for view in views.values().filter(|v| passes(filter, v)) {
                let values = known_values(view, variable);
                if values.is_empty() {
                    continue;
                }
                n += 1;
                for v in values {
                    *counts.entry(v).or_default() += 1;
                }
            }
            for (category, count) in counts {
                out.n_evaluated += 1;
                if n == 0 {
                    out.n_not_applicable += 1;
                    continue;
                }
                let range = ranges.get(&category).copied().unwrap_or((0.0, 0.0));
                let frac = count as f64 / n as f64;
                if frac < range.0 || frac > range.1 {
                    out.n_flagged += 1;
                    out.findings
                        .push(finding(format!("{variable}={category}"), format!("{frac:.4} ({count}/{n})"), fmt_range(range)));
                }
            }
        }
        CohortCheck::MonthlyCountStability {
            variable,
            value,
            filter,
            window,
            k,
            min_deviation,
        } => {
            let months = monthly_counts(views.values(), variable, value.as_deref(), filter.as_ref());
            let (Some(&first), Some(&last)) = (months.keys().next(), months.keys().next_back()) else {
                return Err(CheckError::WindowTooLong { window: *window, months: 0 });
            };
            let series: Vec<f64> = (first..=last).map(|m| months.get(&m).copied().unwrap_or(0) as f64).collect();
            if *window == 0 || *window > series.len() {
                return Err(CheckError::WindowTooLong {
                    window: *window,
                    months: series.len(),
                });
            }
            for (i, (med, mad)) in rolling_median_mad(&series, *window).into_iter().enumerate() {
                out.n_evaluated += 1;
                let x = series[i];
                if (x - med).abs() > (k * mad).max(*min_deviation) {
                    out.n_flagged += 1;
                    out.findings.push(finding(
                        format!("month={}", month_label(first + i as i32)),
                        format!("count={x}"),
                        format!("|count - {med}| <= max({k} x MAD {mad}, {min_deviation})"),
                    ));
                }
            }
        }
        CohortCheck::StratifiedRateRange {
            condition,
            filter,
            stratify_by,
            ranges,
        } => {
            let mut tally: BTreeMap<&str, (u64, u64)> = ranges.keys().map(|k| (k.as_str(), (0, 0))).collect();
            for (patient, view) in views.iter().filter(|(_, v)| passes(filter, v)) {
                let stratum = match stratify_by {
                    StratifyBy::Attribute(a) => attributes.get(patient, a).to_string(),
                    StratifyBy::Variable(v) => match view.get(v) {
                        Some(Field::Single(o)) if o.known => o.value.to_string(),
                        _ => continue,
                    },
                };
                let Some(slot) = tally.get_mut(stratum.as_str()) else { continue };
                match evaluate_patient_check(condition, view) {
                    Outcome::Pass => {
                        slot.0 += 1;
                        slot.1 += 1;
                    }
                    Outcome::Fail => slot.1 += 1,
                    Outcome::NotApplicable => {}
                }
            }
            let label = match stratify_by {
                StratifyBy::Variable(v) | StratifyBy::Attribute(v) => v,
            };
            for (stratum, (hit, n)) in tally {
                out.n_evaluated += 1;
                if n == 0 {
                    out.n_not_applicable += 1;
                    continue;
                }
                let range = ranges[stratum];
                let rate = hit as f64 / n as f64;
                if rate < range.0 || rate > range.1 {
                    out.n_flagged += 1;
                    out.findings
                        .push(finding(format!("{label}={stratum}"), format!("{rate:.4} ({hit}/{n})"), fmt_range(range)));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks::expr::parse_check;
    use crate::model::{parse_date, LabelRecord, LabelSet, Schema, Source, Value, VariableSpec};

    fn schema() -> Schema {
        Schema::new([
            VariableSpec::dated("metastatic_dx", &["yes", "no"], None),
            VariableSpec::categorical("first_line", &["chemo", "parp", "unknown"], Some("unknown")),
            VariableSpec::categorical("stage", &["I", "IV"], None),
            VariableSpec::dated("surgery", &["yes", "no"], None),
        ])
        .unwrap()
    }

    fn views(records: Vec<LabelRecord>) -> BTreeMap<PatientId, PatientView> {
        let s = schema();
        let labels = LabelSet::from_records(Source::Llm, records, &s).unwrap();
        labels
            .patients()
            .into_iter()
            .map(|p| (p.to_string(), PatientView::from_labels(&labels, &s, p)))
            .collect()
    }

    fn met_per_month(counts: &[usize]) -> Vec<LabelRecord> {
        let mut out = Vec::new();
        for (m, &c) in counts.iter().enumerate() {
            let date = NaiveDate::from_ymd_opt(2015 + (m / 12) as i32, (m % 12) as u32 + 1, 10).unwrap();
            for j in 0..c {
                out.push(LabelRecord::new(
                    &format!("m{m:03}_{j:03}"),
                    "metastatic_dx",
                    Value::category("yes"),
                    Some(date),
                    Source::Llm,
                ));
            }
        }
        out
    }

    fn monthly(k: f64, window: usize) -> CohortCheck {
        CohortCheck::MonthlyCountStability {
            variable: "metastatic_dx".into(),
            value: Some("yes".into()),
            filter: None,
            window,
            k,
            min_deviation: 0.0,
        }
    }

    #[test]
    fn flat_series_has_no_findings() {
        let out = run("c", &monthly(5.0, 12), &views(met_per_month(&[100; 24])), &AttributeMap::new(&[])).unwrap();
        assert_eq!((out.n_evaluated, out.n_flagged), (24, 0));
    }

    #[test]
    fn deviation_floor_absorbs_small_wobble() {
        let mut counts = [20; 24];
        counts[5] = 22;
        let v = views(met_per_month(&counts));
        let bare = run("c", &monthly(5.0, 12), &v, &AttributeMap::new(&[])).unwrap();
        assert_eq!(bare.n_flagged, 1, "MAD of 0 flags any deviation");
        let mut floored = monthly(5.0, 12);
        if let CohortCheck::MonthlyCountStability { min_deviation, .. } = &mut floored {
            *min_deviation = 3.0;
        }
        assert_eq!(run("c", &floored, &v, &AttributeMap::new(&[])).unwrap().n_flagged, 0);
    }

    #[test]
    fn single_spike_is_flagged() {
        let mut counts = [20; 24];
        counts[9] = 100;
        let out = run("c", &monthly(5.0, 12), &views(met_per_month(&counts)), &AttributeMap::new(&[])).unwrap();
        assert_eq!(out.n_flagged, 1);
        assert!(matches!(&out.findings[0].scope, Scope::Slice(s) if s == "month=2015-10"));
    }

    #[test]
    fn window_longer_than_series() {
        let err = run("c", &monthly(5.0, 12), &views(met_per_month(&[5; 6])), &AttributeMap::new(&[])).unwrap_err();
        assert!(matches!(err, CheckError::WindowTooLong { window: 12, months: 6 }));
    }

    #[test]
    fn rolling_statistics_match_direct_computation() {
        let series: Vec<f64> = (0..15).map(|i| f64::from((i * 7) % 5)).collect();
        for (i, (med, mad)) in rolling_median_mad(&series, 5).into_iter().enumerate() {
            let start = i.saturating_sub(2).min(10);
            let mut win = series[start..start + 5].to_vec();
            win.sort_by(f64::total_cmp);
            assert_eq!(med, win[2]);
            let mut dev: Vec<f64> = win.iter().map(|x| (x - med).abs()).collect();
            dev.sort_by(f64::total_cmp);
            assert_eq!(mad, dev[2]);
        }
    }

    #[test]
    fn distribution_outside_range() {
        let mut records = Vec::new();
        for i in 0..10 {
            let regimen = if i < 4 { "parp" } else { "chemo" };
            records.push(LabelRecord::new(&format!("p{i}"), "first_line", Value::category(regimen), None, Source::Llm));
        }
        records.push(LabelRecord::new("px", "first_line", Value::category("unknown"), None, Source::Llm));
        let check = CohortCheck::DistributionRange {
            variable: "first_line".into(),
            filter: None,
            ranges: [("parp".to_string(), (0.05, 0.2)), ("chemo".to_string(), (0.5, 1.0))].into(),
        };
        let out = run("dist", &check, &views(records), &AttributeMap::new(&[])).unwrap();
        assert_eq!(out.n_flagged, 1);
        assert!(out.findings[0].observed.starts_with("0.4000"));
        assert_eq!(out.findings[0].expected, "[0.05, 0.2]");
    }

    #[test]
    fn surgery_rate_by_stage() {
        let mut records = Vec::new();
        for i in 0..10 {
            let id = format!("p{i}");
            let (stage, surgery) = if i < 5 { ("I", i < 2) } else { ("IV", i == 9) };
            records.push(LabelRecord::new(&id, "stage", Value::category(stage), None, Source::Llm));
            let (val, date) = if surgery {
                ("yes", Some(parse_date("2020-01-01").unwrap()))
            } else {
                ("no", None)
            };
            records.push(LabelRecord::new(&id, "surgery", Value::category(val), date, Source::Llm));
        }
        let check = CohortCheck::StratifiedRateRange {
            condition: parse_check("value(surgery) = 'yes'", &schema()).unwrap(),
            filter: None,
            stratify_by: StratifyBy::Variable("stage".into()),
            ranges: [("I".to_string(), (0.8, 1.0)), ("IV".to_string(), (0.0, 0.3))].into(),
        };
        let out = run("surg", &check, &views(records), &AttributeMap::new(&[])).unwrap();
        assert_eq!(out.n_evaluated, 2);
        assert_eq!(out.n_flagged, 1);
        assert!(matches!(&out.findings[0].scope, Scope::Slice(s) if s == "stage=I"));
    }
}
