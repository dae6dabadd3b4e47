//! Declarative verification checks at patient and cohort level.
//!
//! Patient-level checks are boolean expressions evaluated per patient with
//! three outcomes; a check whose inputs are missing is not applicable,
//! never failed. Cohort-level checks compare aggregate distributions, rates
//! and monthly counts with configured expectations. Refresh checks compare
//! a variable between two snapshots.

mod cohort;
mod eval;
mod expr;
mod refresh;

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize, Serializer};
use thiserror::Error;

pub(crate) use cohort::{month_label, monthly_counts};
pub use cohort::{rolling_median_mad, CohortCheck, CohortOutcome, StratifyBy};
pub use eval::{describe_fields, evaluate_patient_check, Outcome};
pub use expr::{parse_check, parse_expr, CmpOp, Expr, Literal, Term};
pub use refresh::{refresh_stability, RefreshChange, RefreshDiff};

use crate::model::{CohortDataset, DataError, LabelSet, PatientId, PatientView, Schema, Source};

#[derive(Debug, Error)]
pub enum CheckError {
    #[error("syntax error at column {position}: {message}")]
    Syntax { position: usize, message: String },
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("type error: {0}")]
    Type(String),
    #[error("check `{id}`: {source}")]
    InCheck {
        id: String,
        #[source]
        source: Box<CheckError>,
    },
    #[error("invalid check suite: {0}")]
    Suite(String),
    #[error("duplicate check id `{0}`")]
    DuplicateId(String),
    #[error("window of {window} months is longer than the observed series of {months} months")]
    WindowTooLong { window: usize, months: usize },
    #[error("dataset has no patients")]
    EmptyDataset,
    #[error("both snapshots need refresh ids")]
    MissingRefreshId,
    #[error("refresh id {older} is not older than {newer}")]
    RefreshOrder { older: String, newer: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

impl CheckError {
    fn in_check(self, id: &str) -> CheckError {
        CheckError::InCheck {
            id: id.to_string(),
            source: Box::new(self),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Conformance,
    Plausibility,
    Consistency,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Level {
    Patient,
    Cohort,
}

/// Reporting metadata only; no check stops a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefreshSpec {
    pub variable: String,
    #[serde(default)]
    pub tolerance_days: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub enum CheckBody {
    Patient(Expr),
    Refresh(RefreshSpec),
    Cohort(CohortCheck),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckDefinition {
    pub id: String,
    pub category: Category,
    pub level: Level,
    pub severity: Severity,
    pub description: String,
    pub body: CheckBody,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckSuite {
    pub checks: Vec<CheckDefinition>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSuite {
    #[serde(default, rename = "check")]
    checks: Vec<RawCheck>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCheck {
    id: String,
    category: Category,
    level: Level,
    #[serde(default = "default_severity")]
    severity: Severity,
    #[serde(default)]
    description: String,
    expr: Option<String>,
    refresh: Option<RefreshSpec>,
    cohort: Option<RawCohort>,
}

fn default_severity() -> Severity {
    Severity::Warning
}

fn default_window() -> usize {
    12
}

fn default_k() -> f64 {
    5.0
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
enum RawCohort {
    DistributionRange {
        variable: String,
        filter: Option<String>,
        ranges: BTreeMap<String, [f64; 2]>,
    },
    MonthlyCountStability {
        variable: String,
        value: Option<String>,
        filter: Option<String>,
        #[serde(default = "default_window")]
        window: usize,
        #[serde(default = "default_k")]
        k: f64,
        #[serde(default)]
        min_deviation: f64,
    },
    StratifiedRateRange {
        condition: String,
        filter: Option<String>,
        stratify_variable: Option<String>,
        stratify_attribute: Option<String>,
        ranges: BTreeMap<String, [f64; 2]>,
    },
}

fn ranges(raw: BTreeMap<String, [f64; 2]>) -> Result<BTreeMap<String, (f64, f64)>, CheckError> {
    raw.into_iter()
        .map(|(k, [lo, hi])| {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(CheckError::Suite(format!("range for `{k}` must satisfy 0 <= lo <= hi <= 1, got [{lo}, {hi}]")));
            }
            Ok((k, (lo, hi)))
        })
        .collect()
}

impl CheckSuite {
    /// Parses a suite and type-checks every expression against the schema.
    pub fn from_toml_str(text: &str, schema: &Schema) -> Result<Self, CheckError> {
        let raw: RawSuite = toml::from_str(text).map_err(|e| CheckError::Suite(e.to_string()))?;
        let mut seen = BTreeSet::new();
        let mut checks = Vec::with_capacity(raw.checks.len());
        for rc in raw.checks {
            if !seen.insert(rc.id.clone()) {
                return Err(CheckError::DuplicateId(rc.id));
            }
            let id = rc.id.clone();
            let body = Self::body(rc.level, rc.expr, rc.refresh, rc.cohort, schema).map_err(|e| e.in_check(&id))?;
            checks.push(CheckDefinition {
                id: rc.id,
                category: rc.category,
                level: rc.level,
                severity: rc.severity,
                description: rc.description,
                body,
            });
        }
        Ok(CheckSuite { checks })
    }

    pub fn load(path: &Path, schema: &Schema) -> Result<Self, CheckError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_toml_str(&text, schema)
    }

    fn body(level: Level, expr: Option<String>, refresh: Option<RefreshSpec>, cohort: Option<RawCohort>, schema: &Schema) -> Result<CheckBody, CheckError> {
        let opt = |f: Option<String>| f.map(|t| parse_check(&t, schema)).transpose();
        match (level, expr, refresh, cohort) {
            (Level::Patient, Some(text), None, None) => Ok(CheckBody::Patient(parse_check(&text, schema)?)),
            (Level::Patient, None, Some(spec), None) => {
                schema.get(&spec.variable).ok_or_else(|| CheckError::UnknownVariable(spec.variable.clone()))?;
                Ok(CheckBody::Refresh(spec))
            }
            (Level::Cohort, None, None, Some(raw)) => {
                let check = match raw {
                    RawCohort::DistributionRange { variable, filter, ranges: r } => {
                        schema.get(&variable).ok_or_else(|| CheckError::UnknownVariable(variable.clone()))?;
                        CohortCheck::DistributionRange {
                            variable,
                            filter: opt(filter)?,
                            ranges: ranges(r)?,
                        }
                    }
                    RawCohort::MonthlyCountStability {
                        variable,
                        value,
                        filter,
                        window,
                        k,
                        min_deviation,
                    } => {
                        let spec = schema.get(&variable).ok_or_else(|| CheckError::UnknownVariable(variable.clone()))?;
                        if !spec.is_dated() {
                            return Err(CheckError::Type(format!("`{variable}` carries no dates")));
                        }
                        if window == 0 || !(k > 0.0) || !(min_deviation >= 0.0) {
                            return Err(CheckError::Suite("window and k must be positive and min_deviation non-negative".into()));
                        }
                        CohortCheck::MonthlyCountStability {
                            variable,
                            value,
                            filter: opt(filter)?,
                            window,
                            k,
                            min_deviation,
                        }
                    }
                    RawCohort::StratifiedRateRange {
                        condition,
                        filter,
                        stratify_variable,
                        stratify_attribute,
                        ranges: r,
                    } => {
                        let stratify_by = match (stratify_variable, stratify_attribute) {
                            (Some(v), None) => {
                                schema.get(&v).ok_or_else(|| CheckError::UnknownVariable(v.clone()))?;
                                StratifyBy::Variable(v)
                            }
                            (None, Some(a)) => StratifyBy::Attribute(a),
                            _ => return Err(CheckError::Suite("give exactly one of stratify_variable and stratify_attribute".into())),
                        };
                        CohortCheck::StratifiedRateRange {
                            condition: parse_check(&condition, schema)?,
                            filter: opt(filter)?,
                            stratify_by,
                            ranges: ranges(r)?,
                        }
                    }
                };
                Ok(CheckBody::Cohort(check))
            }
            (Level::Patient, ..) => Err(CheckError::Suite("patient checks need exactly one of `expr` or `refresh`".into())),
            (Level::Cohort, ..) => Err(CheckError::Suite("cohort checks need a `cohort` block and nothing else".into())),
        }
    }

    pub fn get(&self, id: &str) -> Option<&CheckDefinition> {
        self.checks.iter().find(|c| c.id == id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Scope {
    Patient(PatientId),
    /// Cohort slice such as `month=2020-05` or `stage=I`.
    Slice(String),
}

impl std::fmt::Display for Scope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Scope::Patient(p) => write!(f, "patient={p}"),
            Scope::Slice(s) => f.write_str(s),
        }
    }
}

impl Serialize for Scope {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckFinding {
    pub check_id: String,
    pub scope: Scope,
    pub observed: String,
    pub expected: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StratumCounts {
    pub n_evaluated: usize,
    pub n_flagged: usize,
    pub n_not_applicable: usize,
    pub prevalence: Option<f64>,
}

fn prevalence(flagged: usize, evaluated: usize, na: usize) -> Option<f64> {
    let den = evaluated - na;
    (den > 0).then(|| flagged as f64 / den as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Ran,
    /// Refresh checks without an older snapshot.
    Skipped,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckResult {
    pub id: String,
    pub category: Category,
    pub level: Level,
    pub severity: Severity,
    pub description: String,
    pub status: CheckStatus,
    pub n_evaluated: usize,
    pub n_passed: usize,
    pub n_flagged: usize,
    pub n_not_applicable: usize,
    /// Flagged over applicable; undefined when nothing was applicable.
    pub prevalence: Option<f64>,
    pub findings: Vec<CheckFinding>,
    /// attribute → stratum → counts, patient-level checks only.
    #[serde(skip_serializing_if = "BTreeMap::is_empty")]
    pub strata: BTreeMap<String, BTreeMap<String, StratumCounts>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CheckReport {
    pub source: Source,
    pub n_patients: usize,
    pub checks: Vec<CheckResult>,
}

impl CheckReport {
    pub fn n_findings(&self) -> usize {
        self.checks.iter().map(|c| c.findings.len()).sum()
    }

    pub fn findings(&self) -> impl Iterator<Item = &CheckFinding> {
        self.checks.iter().flat_map(|c| &c.findings)
    }

    pub fn get(&self, id: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.id == id)
    }

    /// Findings as delimited text: `check_id, scope, observed, expected`.
    pub fn write_findings<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(["check_id", "scope", "observed", "expected"])?;
        for f in self.findings() {
            wtr.write_record([f.check_id.as_str(), &f.scope.to_string(), &f.observed, &f.expected])?;
        }
        wtr.flush().map_err(|e| DataError::Csv(e.into()))?;
        Ok(())
    }
}

fn views(labels: Option<&LabelSet>, dataset: &CohortDataset) -> BTreeMap<PatientId, PatientView> {
    let patients: Vec<&PatientId> = dataset.patients().iter().collect();
    patients
        .par_iter()
        .map(|p| {
            let view = match labels {
                Some(l) => PatientView::from_labels(l, &dataset.schema, p),
                None => PatientView {
                    patient_id: (*p).clone(),
                    fields: BTreeMap::new(),
                },
            };
            ((*p).clone(), view)
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect()
}

/// Runs one cohort-level check on a source's labels.
pub fn run_cohort_check(check: &CheckDefinition, dataset: &CohortDataset, source: Source) -> Result<CohortOutcome, CheckError> {
    let CheckBody::Cohort(spec) = &check.body else {
        return Err(CheckError::Suite(format!("`{}` is not a cohort check", check.id)));
    };
    cohort::run(&check.id, spec, &views(dataset.labels(source), dataset), &dataset.attributes)
}

fn stratum_counts(outcomes: &[(&PatientId, Outcome)], dataset: &CohortDataset, strata: &[String]) -> BTreeMap<String, BTreeMap<String, StratumCounts>> {
    let mut out = BTreeMap::new();
    for attr in strata {
        let mut per: BTreeMap<String, StratumCounts> = BTreeMap::new();
        for (p, o) in outcomes {
            let c = per.entry(dataset.attributes.get(p, attr).to_string()).or_default();
            c.n_evaluated += 1;
            match o {
                Outcome::Fail => c.n_flagged += 1,
                Outcome::NotApplicable => c.n_not_applicable += 1,
                Outcome::Pass => {}
            }
        }
        for c in per.values_mut() {
            c.prevalence = prevalence(c.n_flagged, c.n_evaluated, c.n_not_applicable);
        }
        out.insert(attr.clone(), per);
    }
    out
}

/// Evaluates a whole suite on one source.
///
/// Every patient-level check runs on every patient of the dataset; refresh
/// checks compare `previous` with the current labels and are skipped when
/// no previous snapshot is given. Per-stratum counts are reported for each
/// attribute in `strata`.
pub fn run_all_checks(
    suite: &CheckSuite,
    dataset: &CohortDataset,
    source: Source,
    previous: Option<&LabelSet>,
    strata: &[String],
) -> Result<CheckReport, CheckError> {
    for attr in strata {
        if !dataset.attributes.declares(attr) {
            return Err(CheckError::Suite(format!("stratum attribute `{attr}` is not declared")));
        }
    }
    let current = dataset.labels(source);
    let views = views(current, dataset);
    let empty = LabelSet::new(source);
    let mut results = Vec::with_capacity(suite.checks.len());
    for check in &suite.checks {
        let mut r = CheckResult {
            id: check.id.clone(),
            category: check.category,
            level: check.level,
            severity: check.severity,
            description: check.description.clone(),
            status: CheckStatus::Ran,
            n_evaluated: 0,
            n_passed: 0,
            n_flagged: 0,
            n_not_applicable: 0,
            prevalence: None,
            findings: Vec::new(),
            strata: BTreeMap::new(),
        };
        match &check.body {
            CheckBody::Patient(expr) => {
                let outcomes: Vec<(&PatientId, Outcome)> = views.par_iter().map(|(p, v)| (p, evaluate_patient_check(expr, v))).collect();
                for (p, o) in &outcomes {
                    r.n_evaluated += 1;
                    match o {
                        Outcome::Pass => r.n_passed += 1,
                        Outcome::NotApplicable => r.n_not_applicable += 1,
                        Outcome::Fail => {
                            r.n_flagged += 1;
                            r.findings.push(CheckFinding {
                                check_id: check.id.clone(),
                                scope: Scope::Patient((*p).clone()),
                                observed: describe_fields(expr, &views[*p]),
                                expected: expr.to_string(),
                            });
                        }
                    }
                }
                r.strata = stratum_counts(&outcomes, dataset, strata);
            }
            CheckBody::Refresh(spec) => {
                let Some(older) = previous else {
                    r.status = CheckStatus::Skipped;
                    results.push(r);
                    continue;
                };
                let diff = refresh_stability(older, current.unwrap_or(&empty), &spec.variable, &dataset.schema, spec.tolerance_days)
                    .map_err(|e| e.in_check(&check.id))?;
                let changed: BTreeSet<&str> = diff.changed.iter().map(|c| c.patient_id.as_str()).collect();
                let added: BTreeSet<&str> = diff.added.iter().map(String::as_str).collect();
                let outcomes: Vec<(&PatientId, Outcome)> = dataset
                    .patients()
                    .iter()
                    .filter(|p| !older.get(p, &spec.variable).is_empty() || current.is_some_and(|c| !c.get(p, &spec.variable).is_empty()))
                    .map(|p| {
                        let o = if changed.contains(p.as_str()) {
                            Outcome::Fail
                        } else if added.contains(p.as_str()) {
                            Outcome::NotApplicable
                        } else {
                            Outcome::Pass
                        };
                        (p, o)
                    })
                    .collect();
                r.n_evaluated = outcomes.len();
                r.n_flagged = changed.len();
                r.n_not_applicable = added.len();
                r.n_passed = r.n_evaluated - r.n_flagged - r.n_not_applicable;
                r.findings = diff
                    .changed
                    .iter()
                    .map(|c| CheckFinding {
                        check_id: check.id.clone(),
                        scope: Scope::Patient(c.patient_id.clone()),
                        observed: format!("{}: {} -> {}", spec.variable, c.before, c.after),
                        expected: format!("unchanged within {} days", spec.tolerance_days),
                    })
                    .collect();
                r.strata = stratum_counts(&outcomes, dataset, strata);
            }
            CheckBody::Cohort(spec) => {
                let out = cohort::run(&check.id, spec, &views, &dataset.attributes).map_err(|e| e.in_check(&check.id))?;
                r.n_evaluated = out.n_evaluated;
                r.n_flagged = out.n_flagged;
                r.n_not_applicable = out.n_not_applicable;
                r.n_passed = out.n_evaluated - out.n_flagged - out.n_not_applicable;
                r.findings = out.findings;
            }
        }
        r.prevalence = prevalence(r.n_flagged, r.n_evaluated, r.n_not_applicable);
        results.push(r);
    }
    Ok(CheckReport {
        source,
        n_patients: dataset.patients().len(),
        checks: results,
    })
}
