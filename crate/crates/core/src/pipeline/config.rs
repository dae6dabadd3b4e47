use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::metrics::{BootstrapConfig, DerivedVariableRule, MetricName, Target, DEFAULT_MIN_STRATUM_N};
use crate::model::Source;
use crate::reference::ReferenceMode;
use crate::replication::{BenchmarkSpec, EquityExpectation, SurvivalRule};

/// One validation run. Relative paths resolve against the directory of the
/// configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_tolerance")]
    pub default_tolerance_days: u32,
    pub inputs: Inputs,
    #[serde(default)]
    pub reference: ReferenceConfig,
    #[serde(default)]
    pub metrics: MetricsConfig,
    #[serde(default)]
    pub checks: ChecksConfig,
    #[serde(default)]
    pub replication: ReplicationConfig,
    #[serde(default, rename = "threshold", skip_serializing_if = "Vec::is_empty")]
    pub thresholds: Vec<Threshold>,
    /// Per-variable reductions of the validation effort.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub risk: BTreeMap<String, RiskProfile>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_tolerance() -> u32 {
    30
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Inputs {
    pub schema: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attributes: Option<PathBuf>,
    /// Stratification attributes declared in the attribute file.
    #[serde(default)]
    pub strata: Vec<String>,
    pub llm: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstractor_1: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abstractor_2: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub adjudication: Option<PathBuf>,
    /// Earlier LLM snapshot for refresh-stability checks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub previous: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub suite: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReferenceConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub mode: ReferenceMode,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        ReferenceConfig {
            enabled: true,
            mode: ReferenceMode::DuplicateAbstraction,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BootstrapSettings {
    pub replicates: usize,
    #[serde(default = "default_confidence")]
    pub confidence: f64,
}

fn default_confidence() -> f64 {
    0.95
}

impl BootstrapSettings {
    /// Bootstrap configuration seeded from the run seed.
    pub fn with_seed(self, seed: u64) -> BootstrapConfig {
        BootstrapConfig {
            replicates: self.replicates,
            confidence: self.confidence,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MetricsConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default, rename = "target")]
    pub targets: Vec<Target>,
    #[serde(default, rename = "derived")]
    pub derived: Vec<DerivedVariableRule>,
    #[serde(default)]
    pub strata: Vec<String>,
    #[serde(default = "default_min_stratum_n")]
    pub min_stratum_n: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<BootstrapSettings>,
}

fn default_min_stratum_n() -> u64 {
    DEFAULT_MIN_STRATUM_N
}

impl Default for MetricsConfig {
    fn default() -> Self {
        MetricsConfig {
            enabled: true,
            targets: Vec::new(),
            derived: Vec::new(),
            strata: Vec::new(),
            min_stratum_n: DEFAULT_MIN_STRATUM_N,
            bootstrap: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChecksConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default = "default_check_source")]
    pub source: Source,
    #[serde(default)]
    pub skip: Vec<String>,
    #[serde(default)]
    pub strata: Vec<String>,
}

fn default_check_source() -> Source {
    Source::Llm
}

impl Default for ChecksConfig {
    fn default() -> Self {
        ChecksConfig {
            enabled: true,
            source: Source::Llm,
            skip: Vec::new(),
            strata: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DistributionSpec {
    pub variable: String,
    /// Patient-level expression selecting the population.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrendSpec {
    pub variable: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub filter: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquitySpec {
    pub attribute: String,
    #[serde(default = "default_min_stratum_n")]
    pub min_n: u64,
    #[serde(flatten)]
    pub expect: EquityExpectation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplicationConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub survival: Option<SurvivalRule>,
    /// Attribute holding treatment arms for benchmarks.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arm_attribute: Option<String>,
    #[serde(default, rename = "benchmark")]
    pub benchmarks: Vec<BenchmarkSpec>,
    #[serde(default, rename = "distribution")]
    pub distributions: Vec<DistributionSpec>,
    #[serde(default, rename = "trend")]
    pub trends: Vec<TrendSpec>,
    #[serde(default)]
    pub equity: Vec<EquitySpec>,
}

impl Default for ReplicationConfig {
    fn default() -> Self {
        ReplicationConfig {
            enabled: true,
            survival: None,
            arm_attribute: None,
            benchmarks: Vec::new(),
            distributions: Vec::new(),
            trends: Vec::new(),
            equity: Vec::new(),
        }
    }
}

/// A quality gate on one LLM metric. `min` is a floor on the metric;
/// `max_delta_pp` bounds how far the LLM may fall below the abstraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Threshold {
    pub variable: String,
    pub metric: MetricName,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_delta_pp: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RiskProfile {
    /// Drop the variable from human benchmarking (metrics and bias).
    pub skip_benchmark: bool,
    /// Check ids not run for this variable.
    pub skip_checks: Vec<String>,
}

impl RunConfig {
    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self, PipelineError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| PipelineError::Config(e.to_string()))?;
        cfg.base_dir = base_dir.to_path_buf();
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::Io(path.display().to_string(), e))?;
        Self::from_toml_str(&text, path.parent().unwrap_or(Path::new(".")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        self.base_dir.join(path)
    }

    /// Structural validation; file existence is checked when inputs load.
    pub fn validate(&self) -> Result<(), PipelineError> {
        let bad = |m: String| Err(PipelineError::Config(m));
        if self.reference.enabled {
            let i = &self.inputs;
            match self.reference.mode {
                ReferenceMode::DuplicateAbstraction if i.abstractor_2.is_none() => return bad("duplicate_abstraction mode requires inputs.abstractor_2".into()),
                ReferenceMode::DoubleAdjudication if i.abstractor_1.is_none() => return bad("double_adjudication mode requires inputs.abstractor_1".into()),
                ReferenceMode::TripleAdjudication if i.abstractor_1.is_none() || i.abstractor_2.is_none() => {
                    return bad("triple_adjudication mode requires inputs.abstractor_1 and inputs.abstractor_2".into())
                }
                _ => {}
            }
        }
        if let Some(b) = &self.metrics.bootstrap {
            if b.replicates == 0 || !(b.confidence > 0.0 && b.confidence < 1.0) {
                return bad("metrics.bootstrap needs replicates > 0 and confidence in (0, 1)".into());
            }
        }
        for t in &self.thresholds {
            if t.min.is_none() && t.max_delta_pp.is_none() {
                return bad(format!("threshold on {}.{} sets neither min nor max_delta_pp", t.variable, t.metric));
            }
        }
        let declared = |attr: &String| self.inputs.strata.contains(attr);
        let used = self
            .metrics
            .strata
            .iter()
            .chain(&self.checks.strata)
            .chain(&self.replication.arm_attribute)
            .chain(self.replication.equity.iter().map(|e| &e.attribute));
        for attr in used {
            if !declared(attr) {
                return bad(format!("attribute `{attr}` is not listed in inputs.strata"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
seed = 7
[inputs]
schema = "schema.toml"
llm = "llm.csv"
abstractor_2 = "a2.csv"
"#;

    #[test]
    fn defaults() {
        let cfg = RunConfig::from_toml_str(MINIMAL, Path::new("/data")).unwrap();
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.reference.mode, ReferenceMode::DuplicateAbstraction);
        assert!(cfg.metrics.enabled && cfg.checks.enabled && cfg.replication.enabled);
        assert_eq!(cfg.resolve(&cfg.inputs.llm), PathBuf::from("/data/llm.csv"));
    }

    #[test]
    fn mode_requires_sources() {
        let text = MINIMAL.replace("abstractor_2 = \"a2.csv\"", "") + "[reference]\nmode = \"triple_adjudication\"\n";
        let err = RunConfig::from_toml_str(&text, Path::new(".")).unwrap_err();
        assert!(err.to_string().contains("triple_adjudication"));
    }

    #[test]
    fn undeclared_stratum() {
        let text = MINIMAL.to_string() + "[metrics]\nstrata = [\"race\"]\n";
        assert!(RunConfig::from_toml_str(&text, Path::new(".")).is_err());
    }

    #[test]
    fn unknown_field_rejected() {
        let text = MINIMAL.to_string() + "[checks]\nskipp = []\n";
        assert!(RunConfig::from_toml_str(&text, Path::new(".")).is_err());
    }

    #[test]
    fn toml_round_trip() {
        let text = MINIMAL.to_string()
            + r#"
[[threshold]]
variable = "surgery"
metric = "recall"
min = 0.9

[[replication.benchmark]]
name = "a_better"
kind = "external_value"
rule = "direction"
better = "A"
worse = "B"

[[replication.equity]]
attribute = "group"
expect = "no_gap"
tolerance_days = 60.0

[risk.stage]
skip_benchmark = true
"#;
        let text = text.replace("[inputs]", "[inputs]\nstrata = [\"group\"]");
        let cfg = RunConfig::from_toml_str(&text, Path::new(".")).unwrap();
        let again = RunConfig::from_toml_str(&cfg.to_toml_string(), Path::new(".")).unwrap();
        assert_eq!(cfg, again);
        assert!(cfg.risk["stage"].skip_benchmark);
    }
}
