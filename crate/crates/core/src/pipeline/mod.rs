//! End-to-end validation runs driven by one configuration file.
//!
//! Pillars run in a fixed order (reference standard, metrics, checks,
//! replication, bias) and each one reads only the loaded inputs and the
//! reference standard, so disabling or failing one pillar leaves the others'
//! numbers unchanged. Failures are recorded in the pillar's section instead
//! of aborting the run; only unreadable core inputs abort.

mod config;
mod report;
mod simulate;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

pub use config::{
    BootstrapSettings, ChecksConfig, DistributionSpec, EquitySpec, Inputs, MetricsConfig, ReferenceConfig, ReplicationConfig, RiskProfile, RunConfig,
    Threshold, TrendSpec,
};
pub use report::{
    canonical_json, emit_report, render_summary, write_rendered, ArmSurvival, BiasGap, BiasSection, DistributionResult, MetricsSection, ReferenceSection,
    ReplicationSection, ReportFormat, RunMeta, Section, SurvivalSection, ThresholdResult, TrendResult, ValidationReport, VariableMetrics,
};
pub use simulate::{breast_cancer_run_config, simulate, SimulationConfig};

use crate::checks::{parse_check, run_all_checks, CheckReport, CheckSuite};
use crate::metrics::{
    end_to_end_metrics, patient_tallies, relative_difference, report_from_tallies, stratified_metrics, BootstrapConfig, MetricName, MetricsError, Tally,
};
use crate::model::{read_labels, AttributeMap, CohortDataset, DataError, LabelSet, PatientId, Schema, Source};
use crate::reference::{
    build_double_adjudication, build_duplicate_abstraction, build_triple_adjudication, Adjudications, Comparator, ReferenceMode, ReferenceStandard,
};
use crate::replication::{
    arm_medians, benchmark_concordance, category_counts, compare_curves, compare_distribution, equity_replication, km_estimate, median_survival,
    survival_records, trend_series, BenchmarkKind, EquityExpectation, KmCurve, ReplicationError, SurvivalRecord, DAYS_PER_MONTH,
};
use crate::seed;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("config: {0}")]
    Config(String),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("ingest: {role}: {source}")]
    Input {
        role: String,
        #[source]
        source: DataError,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("simulate: {0}")]
    Simulate(String),
}

/// Every input file of a run, parsed and fingerprinted.
#[derive(Debug, Clone)]
pub struct LoadedInputs {
    pub schema: Schema,
    pub attributes: AttributeMap,
    pub llm: LabelSet,
    pub abstractor_1: Option<LabelSet>,
    pub abstractor_2: Option<LabelSet>,
    pub previous: Option<LabelSet>,
    /// Read errors here belong to the reference pillar, not the run.
    pub adjudications: Option<Result<Adjudications, String>>,
    pub suite: Option<Result<CheckSuite, String>>,
    pub hashes: BTreeMap<String, String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

impl LoadedInputs {
    pub fn load(cfg: &RunConfig) -> Result<Self, PipelineError> {
        let mut hashes = BTreeMap::new();
        let mut read = |role: &str, path: &Path| -> Result<Vec<u8>, PipelineError> {
            let full = cfg.resolve(path);
            let bytes = std::fs::read(&full).map_err(|e| PipelineError::Input {
                role: role.to_string(),
                source: DataError::Io {
                    path: full.display().to_string(),
                    source: e,
                },
            })?;
            hashes.insert(role.to_string(), sha256_hex(&bytes));
            Ok(bytes)
        };
        let i = &cfg.inputs;
        let input_err = |role: &str| {
            let role = role.to_string();
            move |source: DataError| PipelineError::Input { role, source }
        };
        let schema_text = String::from_utf8_lossy(&read("schema", &i.schema)?).into_owned();
        let schema = Schema::from_toml_str(&schema_text).map_err(input_err("schema"))?;
        let attributes = match &i.attributes {
            Some(p) => AttributeMap::read(read("attributes", p)?.as_slice(), &i.strata).map_err(input_err("attributes"))?,
            None => AttributeMap::new(&i.strata.iter().map(String::as_str).collect::<Vec<_>>()),
        };
        let mut labels = |role: &str, path: &Path, source: Source| -> Result<LabelSet, PipelineError> {
            read_labels(read(role, path)?.as_slice(), &schema, source).map_err(input_err(role))
        };
        let llm = labels("llm", &i.llm, Source::Llm)?;
        let abstractor_1 = i.abstractor_1.as_deref().map(|p| labels("abstractor_1", p, Source::Abstractor1)).transpose()?;
        let abstractor_2 = i.abstractor_2.as_deref().map(|p| labels("abstractor_2", p, Source::Abstractor2)).transpose()?;
        let previous = i.previous.as_deref().map(|p| labels("previous", p, cfg.checks.source)).transpose()?;
        let adjudications = i.adjudication.as_deref().map(|p| {
            let full = cfg.resolve(p);
            std::fs::read(&full).map_err(|e| format!("{}: {e}", full.display())).and_then(|bytes| {
                hashes.insert("adjudication".into(), sha256_hex(&bytes));
                Adjudications::read(bytes.as_slice(), &schema).map_err(|e| e.to_string())
            })
        });
        let suite = i.suite.as_deref().map(|p| {
            let full = cfg.resolve(p);
            std::fs::read_to_string(&full).map_err(|e| format!("{}: {e}", full.display())).and_then(|text| {
                hashes.insert("suite".into(), sha256_hex(text.as_bytes()));
                CheckSuite::from_toml_str(&text, &schema).map_err(|e| e.to_string())
            })
        });
        Ok(LoadedInputs {
            schema,
            attributes,
            llm,
            abstractor_1,
            abstractor_2,
            previous,
            adjudications,
            suite,
            hashes,
        })
    }
}

/// Loads the configured inputs and runs every enabled pillar.
pub fn run_pipeline(cfg: &RunConfig) -> Result<ValidationReport, PipelineError> {
    let inputs = LoadedInputs::load(cfg)?;
    Ok(run_loaded(cfg, &inputs))
}

/// Runs the pillars on already loaded inputs.
pub fn run_loaded(cfg: &RunConfig, inputs: &LoadedInputs) -> ValidationReport {
    let config_json = serde_json::to_value(cfg).expect("config serializes");
    let meta = RunMeta {
        tool: "rwdval",
        version: env!("CARGO_PKG_VERSION"),
        seed: cfg.seed,
        config_sha256: sha256_hex(canonical_json(&config_json).as_bytes()),
        inputs: inputs.hashes.clone(),
    };

    let reference = if cfg.reference.enabled { Some(build_reference(cfg, inputs)) } else { None };
    let reference_section = match &reference {
        None => Section::NotRun { reason: "disabled".into() },
        Some(Err(reason)) => Section::Error { reason: reason.clone() },
        Some(Ok(rs)) => Section::Ok {
            result: ReferenceSection {
                summary: rs.summary(),
                n_disputed_keys: rs.cases.iter().map(|c| c.key()).collect::<BTreeSet<_>>().len(),
                n_adjudications: inputs.adjudications.as_ref().and_then(|a| a.as_ref().ok()).map_or(0, Adjudications::len),
            },
        },
    };
    let reference = reference.and_then(Result::ok);

    let metrics = match (&reference, cfg.metrics.enabled) {
        (_, false) => Section::NotRun { reason: "disabled".into() },
        (Some(rs), true) => match run_metrics(cfg, inputs, rs) {
            Ok(m) => Section::Ok { result: m },
            Err(e) => Section::Error {
                reason: format!("metrics: {e}"),
            },
        },
        (None, true) => match &reference_section {
            Section::Error { reason } => Section::Error {
                reason: format!("metrics: aborted, reference standard unavailable ({reason})"),
            },
            _ => Section::NotRun {
                reason: "reference standard not built".into(),
            },
        },
    };

    let checks = if !cfg.checks.enabled {
        Section::NotRun { reason: "disabled".into() }
    } else {
        match &inputs.suite {
            None => Section::NotRun {
                reason: "no check suite configured".into(),
            },
            Some(Err(e)) => Section::Error {
                reason: format!("checks: {e}"),
            },
            Some(Ok(suite)) => match run_checks(cfg, inputs, suite, reference.as_ref()) {
                Ok(r) => Section::Ok { result: r },
                Err(e) => Section::Error {
                    reason: format!("checks: {e}"),
                },
            },
        }
    };

    let replication = if cfg.replication.enabled {
        match run_replication(cfg, inputs, reference.as_ref()) {
            Ok(r) => Section::Ok { result: r },
            Err(e) => Section::Error {
                reason: format!("replication: {e}"),
            },
        }
    } else {
        Section::NotRun { reason: "disabled".into() }
    };

    let bias = match &metrics {
        Section::Ok { result } => Section::Ok { result: bias_summary(result) },
        Section::NotRun { reason } => Section::NotRun {
            reason: format!("metrics not run: {reason}"),
        },
        Section::Error { .. } => Section::Error {
            reason: "bias: metrics pillar failed".into(),
        },
    };

    let thresholds = evaluate_thresholds(cfg, metrics.result());
    ValidationReport {
        meta,
        reference: reference_section,
        metrics,
        checks,
        replication,
        bias,
        thresholds,
    }
}

/// Builds the configured reference standard; errors carry a module-qualified
/// message.
pub fn build_reference(cfg: &RunConfig, inputs: &LoadedInputs) -> Result<ReferenceStandard, String> {
    let qualify = |e: &dyn std::fmt::Display| format!("reference: {e}");
    let comparator = Comparator::new(cfg.default_tolerance_days);
    let adjudications = || -> Result<Adjudications, String> {
        match &inputs.adjudications {
            Some(Ok(a)) => Ok(a.clone()),
            Some(Err(e)) => Err(format!("reference: adjudication file: {e}")),
            None => Ok(Adjudications::new()),
        }
    };
    let missing = |what: &str| format!("reference: {} mode requires {what}", cfg.reference.mode);
    match cfg.reference.mode {
        ReferenceMode::DuplicateAbstraction => {
            let a2 = inputs.abstractor_2.as_ref().ok_or_else(|| missing("abstractor_2"))?;
            let empty = LabelSet::new(Source::Abstractor1);
            let a1 = inputs.abstractor_1.as_ref().unwrap_or(&empty);
            build_duplicate_abstraction(&inputs.llm, a1, a2).map(|(r, _)| r).map_err(|e| qualify(&e))
        }
        ReferenceMode::DoubleAdjudication => {
            let a1 = inputs.abstractor_1.as_ref().ok_or_else(|| missing("abstractor_1"))?;
            build_double_adjudication(&inputs.llm, a1, &adjudications()?, &inputs.schema, &comparator).map_err(|e| qualify(&e))
        }
        ReferenceMode::TripleAdjudication => {
            let a1 = inputs.abstractor_1.as_ref().ok_or_else(|| missing("abstractor_1"))?;
            let a2 = inputs.abstractor_2.as_ref().ok_or_else(|| missing("abstractor_2"))?;
            build_triple_adjudication(&inputs.llm, a1, a2, &adjudications()?, &inputs.schema, &comparator).map_err(|e| qualify(&e))
        }
    }
}

fn bootstrap_for(cfg: &RunConfig, variable: &str) -> Option<BootstrapConfig> {
    cfg.metrics.bootstrap.map(|b| b.with_seed(seed::derive(cfg.seed, &["bootstrap", variable])))
}

fn run_metrics(cfg: &RunConfig, inputs: &LoadedInputs, rs: &ReferenceStandard) -> Result<MetricsSection, MetricsError> {
    let cohort = &rs.patients;
    let skipped: Vec<String> = cfg.risk.iter().filter(|(_, p)| p.skip_benchmark).map(|(v, _)| v.clone()).collect();
    let mut variables = Vec::new();
    for target in cfg.metrics.targets.iter().filter(|t| !skipped.contains(&t.variable)) {
        let boot = bootstrap_for(cfg, &target.variable);
        let tallies = |pred: &LabelSet| -> Result<BTreeMap<PatientId, Tally>, MetricsError> {
            patient_tallies(pred, &rs.labels, cohort, &inputs.schema, target, cfg.default_tolerance_days)
        };
        if cohort.is_empty() {
            return Err(MetricsError::EmptyCohort);
        }
        let llm_t = tallies(&inputs.llm)?;
        let abs_t = inputs.abstractor_1.as_ref().map(tallies).transpose()?;
        let llm = report_from_tallies(&llm_t, target, boot.as_ref())?;
        let abstraction = abs_t.as_ref().map(|t| report_from_tallies(t, target, boot.as_ref())).transpose()?;
        let deltas = match &abstraction {
            Some(a) => relative_difference(&llm, a)?,
            None => Vec::new(),
        };
        let mut strata = BTreeMap::new();
        for attr in &cfg.metrics.strata {
            let s = stratified_metrics(
                &llm_t,
                abs_t.as_ref(),
                &inputs.attributes,
                attr,
                target,
                cfg.metrics.min_stratum_n,
                boot.as_ref(),
            )?;
            strata.insert(attr.clone(), s);
        }
        variables.push(VariableMetrics {
            variable: target.variable.clone(),
            positive_class: target.positive_class.clone(),
            llm,
            abstraction,
            deltas,
            strata,
        });
    }
    let mut derived = Vec::new();
    for rule in cfg.metrics.derived.iter().filter(|r| !skipped.contains(&r.name)) {
        rule.validate(&inputs.schema)?;
        let boot = bootstrap_for(cfg, &rule.name);
        derived.push(end_to_end_metrics(
            rule,
            &inputs.schema,
            &inputs.llm,
            inputs.abstractor_1.as_ref(),
            &rs.labels,
            cohort,
            boot.as_ref(),
        )?);
    }
    Ok(MetricsSection { variables, derived, skipped })
}

fn dataset(inputs: &LoadedInputs, reference: Option<&ReferenceStandard>) -> CohortDataset {
    let sets = std::iter::once(inputs.llm.clone())
        .chain(inputs.abstractor_1.clone())
        .chain(inputs.abstractor_2.clone())
        .chain(reference.map(|r| r.labels.clone()));
    CohortDataset::new(inputs.schema.clone(), inputs.attributes.clone(), sets)
}

fn run_checks(
    cfg: &RunConfig,
    inputs: &LoadedInputs,
    suite: &CheckSuite,
    reference: Option<&ReferenceStandard>,
) -> Result<CheckReport, crate::checks::CheckError> {
    let skip: BTreeSet<&str> = cfg
        .checks
        .skip
        .iter()
        .chain(cfg.risk.values().flat_map(|p| &p.skip_checks))
        .map(String::as_str)
        .collect();
    let suite = CheckSuite {
        checks: suite.checks.iter().filter(|c| !skip.contains(c.id.as_str())).cloned().collect(),
    };
    let ds = dataset(inputs, reference);
    run_all_checks(&suite, &ds, cfg.checks.source, inputs.previous.as_ref(), &cfg.checks.strata)
}

fn arm_survival(
    records: &[SurvivalRecord],
    attributes: &AttributeMap,
    attribute: &str,
) -> Result<(BTreeMap<String, ArmSurvival>, BTreeMap<String, KmCurve>), ReplicationError> {
    let mut by_arm: BTreeMap<String, Vec<SurvivalRecord>> = BTreeMap::new();
    for r in records {
        by_arm.entry(attributes.get(&r.patient_id, attribute).to_string()).or_default().push(r.clone());
    }
    let mut summary = BTreeMap::new();
    let mut curves = BTreeMap::new();
    for (arm, rs) in by_arm {
        let curve = km_estimate(&rs)?;
        summary.insert(
            arm.clone(),
            ArmSurvival {
                n: curve.n,
                n_events: curve.n_events,
                median_months: median_survival(&curve).map(|d| d as f64 / DAYS_PER_MONTH),
            },
        );
        curves.insert(arm, curve);
    }
    Ok((summary, curves))
}

fn run_replication(cfg: &RunConfig, inputs: &LoadedInputs, reference: Option<&ReferenceStandard>) -> Result<ReplicationSection, String> {
    let rc = &cfg.replication;
    let err = |e: ReplicationError| e.to_string();
    let extracted_ds = CohortDataset::new(inputs.schema.clone(), inputs.attributes.clone(), [inputs.llm.clone()]);
    let reference_ds = reference.map(|r| CohortDataset::new(inputs.schema.clone(), inputs.attributes.clone(), [r.labels.clone()]));
    let filter = |text: &Option<String>| text.as_deref().map(|t| parse_check(t, &inputs.schema)).transpose().map_err(|e| e.to_string());

    let mut out = ReplicationSection {
        survival: None,
        benchmarks: Vec::new(),
        distributions: Vec::new(),
        trends: Vec::new(),
        equity: Vec::new(),
        skipped: Vec::new(),
    };

    let mut records = None;
    if let Some(rule) = &rc.survival {
        let ext = survival_records(&inputs.llm, &inputs.schema, extracted_ds.patients(), rule).map_err(err)?;
        let refd = reference
            .map(|r| survival_records(&r.labels, &inputs.schema, &r.patients, rule))
            .transpose()
            .map_err(err)?;
        let curve = km_estimate(&ext.records).map_err(err)?;
        let ref_curve = refd.as_ref().map(|d| km_estimate(&d.records)).transpose().map_err(err)?;
        let (arms, arm_curves, reference_arms, ref_arm_curves) = match &rc.arm_attribute {
            Some(attr) => {
                let (a, c) = arm_survival(&ext.records, &inputs.attributes, attr).map_err(err)?;
                let (ra, rcur) = match &refd {
                    Some(d) => arm_survival(&d.records, &inputs.attributes, attr).map_err(err)?,
                    None => Default::default(),
                };
                (a, c, ra, rcur)
            }
            None => Default::default(),
        };
        if !rc.benchmarks.is_empty() {
            if rc.arm_attribute.is_none() {
                return Err("benchmarks need replication.arm_attribute".into());
            }
            let ext_m = arm_medians(&arm_curves);
            let ref_m = refd.is_some().then(|| arm_medians(&ref_arm_curves));
            for spec in &rc.benchmarks {
                if ref_m.is_none() && spec.kind == BenchmarkKind::InternalDataset {
                    out.skipped.push(format!("benchmark {}: needs the reference standard", spec.name));
                    continue;
                }
                out.benchmarks.push(benchmark_concordance(&ext_m, ref_m.as_ref(), spec).map_err(err)?);
            }
        }
        out.survival = Some(SurvivalSection {
            n_records: ext.records.len(),
            n_excluded: ext.excluded.len(),
            n_events: curve.n_events,
            median_days: median_survival(&curve),
            reference_median_days: ref_curve.as_ref().and_then(median_survival),
            comparison: ref_curve.as_ref().map(|r| compare_curves(&curve, r)),
            arms,
            reference_arms,
        });
        records = Some((ext.records, refd.map(|d| d.records)));
    } else if !rc.benchmarks.is_empty() || !rc.equity.is_empty() {
        return Err("benchmarks and equity analyses need replication.survival".into());
    }

    for d in &rc.distributions {
        let f = filter(&d.filter)?;
        let ext = category_counts(&extracted_ds, Source::Llm, &d.variable, f.as_ref()).map_err(err)?;
        let comparison = match &reference_ds {
            Some(rds) => {
                let mut refc = category_counts(rds, Source::Reference, &d.variable, f.as_ref()).map_err(err)?;
                // Both sides are schema-validated, so the category space is
                // their union.
                for k in ext.keys() {
                    refc.entry(k.clone()).or_insert(0);
                }
                match compare_distribution(&ext, &refc) {
                    Ok(c) => Some(c),
                    Err(ReplicationError::EmptyDistribution) => None,
                    Err(e) => return Err(e.to_string()),
                }
            }
            None => None,
        };
        out.distributions.push(DistributionResult {
            variable: d.variable.clone(),
            filter: d.filter.clone(),
            extracted_counts: ext,
            comparison,
        });
    }

    for t in &rc.trends {
        let f = filter(&t.filter)?;
        let ext = trend_series(&extracted_ds, Source::Llm, &t.variable, t.value.as_deref(), f.as_ref()).map_err(err)?;
        let refs = reference_ds
            .as_ref()
            .map(|rds| trend_series(rds, Source::Reference, &t.variable, t.value.as_deref(), f.as_ref()))
            .transpose()
            .map_err(err)?;
        let max_abs_delta = refs.as_ref().map(|r| {
            let mut months: BTreeMap<&str, (u64, u64)> = BTreeMap::new();
            for m in &ext {
                months.entry(&m.month).or_default().0 = m.count;
            }
            for m in r {
                months.entry(&m.month).or_default().1 = m.count;
            }
            months.values().map(|(a, b)| a.abs_diff(*b)).max().unwrap_or(0)
        });
        out.trends.push(TrendResult {
            variable: t.variable.clone(),
            value: t.value.clone(),
            extracted: ext,
            reference: refs,
            max_abs_delta,
        });
    }

    if let Some((ext, refr)) = &records {
        for e in &rc.equity {
            if refr.is_none() && e.expect == EquityExpectation::Dataset {
                out.skipped.push(format!("equity by {}: needs the reference standard", e.attribute));
                continue;
            }
            out.equity
                .push(equity_replication(ext, refr.as_deref(), &inputs.attributes, &e.attribute, &e.expect, e.min_n).map_err(err)?);
        }
    }
    Ok(out)
}

const BIAS_METRICS: [MetricName; 3] = [MetricName::Recall, MetricName::Precision, MetricName::F1];

fn bias_summary(m: &MetricsSection) -> BiasSection {
    let mut gaps = Vec::new();
    for v in &m.variables {
        for (attr, strata) in &v.strata {
            let live: Vec<_> = strata.iter().filter(|s| !s.suppressed).collect();
            for metric in BIAS_METRICS {
                let llm: Vec<(&str, f64)> = live.iter().filter_map(|s| s.llm.get(metric).map(|r| (s.stratum.as_str(), r.value()))).collect();
                let abs: Vec<f64> = live.iter().filter_map(|s| s.abstraction.as_ref()?.get(metric).map(|r| r.value())).collect();
                let lo = llm.iter().min_by(|a, b| a.1.total_cmp(&b.1));
                let hi = llm.iter().max_by(|a, b| a.1.total_cmp(&b.1));
                let spread = |xs: &[f64]| -> Option<f64> {
                    (xs.len() >= 2).then(|| 100.0 * (xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min)))
                };
                let llm_vals: Vec<f64> = llm.iter().map(|x| x.1).collect();
                gaps.push(BiasGap {
                    variable: v.variable.clone(),
                    attribute: attr.clone(),
                    metric,
                    llm_gap_pp: spread(&llm_vals),
                    abstraction_gap_pp: spread(&abs),
                    llm_lowest: lo.map(|x| x.0.to_string()),
                    llm_highest: hi.map(|x| x.0.to_string()),
                });
            }
        }
    }
    BiasSection { gaps }
}

fn evaluate_thresholds(cfg: &RunConfig, metrics: Option<&MetricsSection>) -> Vec<ThresholdResult> {
    let mut out = Vec::new();
    for t in &cfg.thresholds {
        let skipped = cfg.risk.get(&t.variable).is_some_and(|p| p.skip_benchmark);
        let scored = metrics.and_then(|m| {
            m.variables
                .iter()
                .find(|v| v.variable == t.variable)
                .map(|v| (&v.llm, &v.deltas))
                .or_else(|| m.derived.iter().find(|d| d.variable == t.variable).map(|d| (&d.llm, &d.deltas)))
        });
        let mut push = |kind: &'static str, limit: f64, observed: Option<f64>, breached: bool, reason: Option<String>| {
            out.push(ThresholdResult {
                variable: t.variable.clone(),
                metric: t.metric,
                kind,
                limit,
                observed,
                breached,
                reason,
            })
        };
        let unavailable = if skipped {
            Some("skipped by risk profile")
        } else if metrics.is_none() {
            Some("metrics not available")
        } else {
            None
        };
        if let Some(min) = t.min {
            match (unavailable, scored) {
                (Some(why), _) => push("min", min, None, false, Some(why.into())),
                (None, None) => push("min", min, None, true, Some("variable not scored".into())),
                (None, Some((llm, _))) => match llm.get(t.metric) {
                    Some(r) => push("min", min, Some(r.value()), r.value() < min, None),
                    None => push("min", min, None, true, Some("metric undefined".into())),
                },
            }
        }
        if let Some(max) = t.max_delta_pp {
            match (unavailable, scored) {
                (Some(why), _) => push("max_delta_pp", max, None, false, Some(why.into())),
                (None, None) => push("max_delta_pp", max, None, true, Some("variable not scored".into())),
                (None, Some((_, deltas))) => match deltas.iter().find(|d| d.metric == t.metric).and_then(|d| d.delta_pp) {
                    Some(d) => push("max_delta_pp", max, Some(d), d < -max, None),
                    None => push("max_delta_pp", max, None, false, Some("no abstraction comparison".into())),
                },
            }
        }
    }
    out
}
