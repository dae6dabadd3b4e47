use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::{BootstrapSettings, DistributionSpec, EquitySpec, Inputs, MetricsConfig, ReplicationConfig, TrendSpec};
use super::{ChecksConfig, PipelineError, ReferenceConfig, RunConfig};
use crate::metrics::{DerivedComponent, DerivedVariableRule, Target};
use crate::model::{parse_date, write_labels, LabelSet, Source};
use crate::reference::ReferenceMode;
use crate::replication::{BenchmarkKind, BenchmarkRule, BenchmarkSpec, EquityExpectation, SurvivalRule};
use crate::suites::BREAST_CANCER_SUITE;
use crate::synth::{corrupt, generate_truth, refresh_snapshots, ErrorModel, GeneratorConfig, STRATA};

/// Synthetic cohort plus one error model per labelling source.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub generator: GeneratorConfig,
    pub llm: ErrorModel,
    pub abstractor_1: ErrorModel,
    pub abstractor_2: ErrorModel,
    /// Also write an earlier LLM snapshot for refresh checks.
    pub previous_snapshot: bool,
}

impl SimulationConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, PipelineError> {
        let cfg: SimulationConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.generator.validate().map_err(|e| PipelineError::Simulate(e.to_string()))?;
        Ok(cfg)
    }
}

/// Run configuration matching the files written by [`simulate`].
pub fn breast_cancer_run_config(previous_snapshot: bool) -> RunConfig {
    let target = |v: &str, c: &str| Target::new(v, Some(c));
    let receptor = |v: &str| DerivedComponent {
        variable: v.into(),
        required_value: "negative".into(),
    };
    RunConfig {
        seed: 0,
        default_tolerance_days: 30,
        inputs: Inputs {
            schema: "schema.toml".into(),
            attributes: Some("attributes.csv".into()),
            strata: STRATA.iter().map(|s| s.to_string()).collect(),
            llm: "llm.csv".into(),
            abstractor_1: Some("abstractor_1.csv".into()),
            abstractor_2: Some("abstractor_2.csv".into()),
            adjudication: None,
            previous: previous_snapshot.then(|| "llm_previous.csv".into()),
            suite: Some("suite.toml".into()),
        },
        reference: ReferenceConfig {
            enabled: true,
            mode: ReferenceMode::DuplicateAbstraction,
        },
        metrics: MetricsConfig {
            enabled: true,
            targets: vec![
                target("metastatic_dx", "yes"),
                target("stage", "IV"),
                target("surgery", "yes"),
                target("er", "positive"),
                target("her2", "positive"),
                target("death", "yes"),
            ],
            derived: vec![DerivedVariableRule {
                name: "tnbc".into(),
                index_variable: "metastatic_dx".into(),
                index_value: Some("yes".into()),
                window_days: (-60, 60),
                components: vec![receptor("er"), receptor("pr"), receptor("her2")],
            }],
            strata: vec!["age_group".into(), "group".into()],
            min_stratum_n: 20,
            bootstrap: Some(BootstrapSettings {
                replicates: 200,
                confidence: 0.95,
            }),
        },
        checks: ChecksConfig {
            strata: vec!["group".into()],
            ..ChecksConfig::default()
        },
        replication: ReplicationConfig {
            enabled: true,
            survival: Some(SurvivalRule {
                index_variable: "metastatic_dx".into(),
                index_value: Some("yes".into()),
                event_variable: "death".into(),
                event_value: "yes".into(),
                censor_variable: Some("last_contact".into()),
                followup_end: parse_date("2025-12-31").expect("valid date"),
            }),
            arm_attribute: Some("arm".into()),
            benchmarks: vec![BenchmarkSpec {
                name: "arm_a_better".into(),
                kind: BenchmarkKind::ExternalValue,
                rule: BenchmarkRule::Direction {
                    better: "A".into(),
                    worse: "B".into(),
                },
            }],
            distributions: vec![
                DistributionSpec {
                    variable: "stage".into(),
                    filter: None,
                },
                DistributionSpec {
                    variable: "first_line".into(),
                    filter: Some("value(er) = 'negative' and value(pr) = 'negative' and value(her2) = 'negative'".into()),
                },
            ],
            trends: vec![TrendSpec {
                variable: "metastatic_dx".into(),
                value: Some("yes".into()),
                filter: None,
            }],
            equity: vec![EquitySpec {
                attribute: "group".into(),
                min_n: 20,
                expect: EquityExpectation::Dataset,
            }],
        },
        thresholds: Vec::new(),
        risk: Default::default(),
        base_dir: PathBuf::new(),
    }
}

fn write_file(dir: &Path, name: &str, text: &str, written: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    let path = dir.join(name);
    std::fs::write(&path, text).map_err(|e| PipelineError::Io(path.display().to_string(), e))?;
    written.push(path);
    Ok(())
}

fn write_label_file(dir: &Path, name: &str, labels: &LabelSet, written: &mut Vec<PathBuf>) -> Result<(), PipelineError> {
    let mut buf = Vec::new();
    write_labels(&mut buf, labels)?;
    write_file(dir, name, &String::from_utf8(buf).expect("csv is utf-8"), written)
}

/// Generates a cohort and writes schema, suite, attributes, ground truth,
/// one label file per source and a matching `run.toml` into `out_dir`.
pub fn simulate(cfg: &SimulationConfig, out_dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let sim = |e: crate::synth::SynthError| PipelineError::Simulate(e.to_string());
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::Io(out_dir.display().to_string(), e))?;
    let cohort = generate_truth(&cfg.generator).map_err(sim)?;
    let seed = cfg.generator.seed;
    let mut llm = corrupt(&cohort, &cfg.llm, Source::Llm, seed).map_err(sim)?;
    let a1 = corrupt(&cohort, &cfg.abstractor_1, Source::Abstractor1, seed).map_err(sim)?;
    let a2 = corrupt(&cohort, &cfg.abstractor_2, Source::Abstractor2, seed).map_err(sim)?;

    let mut written = Vec::new();
    if cfg.previous_snapshot {
        let mut snaps = refresh_snapshots(&llm, &cohort, &cfg.llm, 2, seed).map_err(sim)?;
        llm = snaps.pop().expect("two snapshots");
        write_label_file(out_dir, "llm_previous.csv", &snaps[0], &mut written)?;
    }
    write_file(out_dir, "schema.toml", &cohort.schema.to_toml_string(), &mut written)?;
    write_file(out_dir, "suite.toml", BREAST_CANCER_SUITE, &mut written)?;
    let mut attrs = Vec::new();
    cohort.attributes.write(&mut attrs)?;
    write_file(out_dir, "attributes.csv", &String::from_utf8(attrs).expect("csv is utf-8"), &mut written)?;
    write_label_file(out_dir, "truth.csv", &cohort.truth, &mut written)?;
    write_label_file(out_dir, "llm.csv", &llm, &mut written)?;
    write_label_file(out_dir, "abstractor_1.csv", &a1, &mut written)?;
    write_label_file(out_dir, "abstractor_2.csv", &a2, &mut written)?;
    let run = RunConfig {
        seed,
        ..breast_cancer_run_config(cfg.previous_snapshot)
    };
    write_file(out_dir, "run.toml", &run.to_toml_string(), &mut written)?;
    Ok(written)
}
