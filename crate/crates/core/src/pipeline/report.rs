use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value as Json;

use super::PipelineError;
use crate::checks::CheckReport;
use crate::metrics::{EndToEnd, MetricName, MetricReport, RelativePerformance, StratumMetrics};
use crate::reference::ReferenceSummary;
use crate::replication::{CurveComparison, DistributionComparison, EquityResult, MonthCount, ReplicationResult};

/// Outcome of one pillar.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Section<T> {
    Ok { result: T },
    NotRun { reason: String },
    Error { reason: String },
}

impl<T> Section<T> {
    pub fn result(&self) -> Option<&T> {
        match self {
            Section::Ok { result } => Some(result),
            _ => None,
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Section::Error { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMeta {
    pub tool: &'static str,
    pub version: &'static str,
    pub seed: u64,
    /// SHA-256 of the canonical configuration.
    pub config_sha256: String,
    /// SHA-256 of each input file, keyed by role.
    pub inputs: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSection {
    pub summary: ReferenceSummary,
    /// Distinct (patient, variable) keys needing adjudication.
    pub n_disputed_keys: usize,
    pub n_adjudications: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VariableMetrics {
    pub variable: String,
    pub positive_class: Option<String>,
    pub llm: MetricReport,
    pub abstraction: Option<MetricReport>,
    /// LLM minus abstraction, in percentage points.
    pub deltas: Vec<RelativePerformance>,
    /// Keyed by stratification attribute.
    pub strata: BTreeMap<String, Vec<StratumMetrics>>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsSection {
    pub variables: Vec<VariableMetrics>,
    pub derived: Vec<EndToEnd>,
    /// Variables dropped from benchmarking by their risk profile.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSurvival {
    pub n: u64,
    pub n_events: u64,
    pub median_months: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalSection {
    pub n_records: usize,
    pub n_excluded: usize,
    pub n_events: u64,
    pub median_days: Option<i64>,
    pub reference_median_days: Option<i64>,
    pub comparison: Option<CurveComparison>,
    pub arms: BTreeMap<String, ArmSurvival>,
    pub reference_arms: BTreeMap<String, ArmSurvival>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistributionResult {
    pub variable: String,
    pub filter: Option<String>,
    pub extracted_counts: BTreeMap<String, u64>,
    pub comparison: Option<DistributionComparison>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendResult {
    pub variable: String,
    pub value: Option<String>,
    pub extracted: Vec<MonthCount>,
    pub reference: Option<Vec<MonthCount>>,
    /// Largest absolute monthly count difference.
    pub max_abs_delta: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSection {
    pub survival: Option<SurvivalSection>,
    pub benchmarks: Vec<ReplicationResult>,
    pub distributions: Vec<DistributionResult>,
    pub trends: Vec<TrendResult>,
    pub equity: Vec<EquityResult>,
    /// Analyses that could not run, with the reason.
    pub skipped: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasGap {
    pub variable: String,
    pub attribute: String,
    pub metric: MetricName,
    /// Highest minus lowest stratum value over unsuppressed strata, in
    /// percentage points.
    pub llm_gap_pp: Option<f64>,
    pub abstraction_gap_pp: Option<f64>,
    pub llm_lowest: Option<String>,
    pub llm_highest: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BiasSection {
    pub gaps: Vec<BiasGap>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdResult {
    pub variable: String,
    pub metric: MetricName,
    pub kind: &'static str,
    pub limit: f64,
    pub observed: Option<f64>,
    pub breached: bool,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub meta: RunMeta,
    pub reference: Section<ReferenceSection>,
    pub metrics: Section<MetricsSection>,
    pub checks: Section<CheckReport>,
    pub replication: Section<ReplicationSection>,
    pub bias: Section<BiasSection>,
    pub thresholds: Vec<ThresholdResult>,
}

impl ValidationReport {
    pub fn has_errors(&self) -> bool {
        self.reference.is_error() || self.metrics.is_error() || self.checks.is_error() || self.replication.is_error() || self.bias.is_error()
    }

    pub fn breaches(&self) -> impl Iterator<Item = &ThresholdResult> {
        self.thresholds.iter().filter(|t| t.breached)
    }

    /// 2 on any pillar error, 1 on a threshold breach, 0 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.has_errors() {
            2
        } else if self.breaches().next().is_some() {
            1
        } else {
            0
        }
    }

    /// Canonical structured form: key-sorted JSON, two-space indent,
    /// trailing newline.
    pub fn to_canonical_json(&self) -> String {
        let value = serde_json::to_value(self).expect("report serializes");
        canonical_json(&value)
    }
}

pub fn canonical_json(value: &Json) -> String {
    // serde_json maps are ordered by key unless `preserve_order` is enabled.
    let mut s = serde_json::to_string_pretty(value).expect("json serializes");
    s.push('\n');
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    Structured,
    Summary,
    #[default]
    Both,
}

impl std::str::FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "structured" => Ok(ReportFormat::Structured),
            "summary" => Ok(ReportFormat::Summary),
            "both" => Ok(ReportFormat::Both),
            other => Err(format!("unknown format `{other}` (structured, summary, both)")),
        }
    }
}

/// Writes `report.json`, `summary.txt` and, when checks ran,
/// `findings.csv` into `out_dir`.
pub fn emit_report(report: &ValidationReport, out_dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, PipelineError> {
    let json = serde_json::to_value(report).expect("report serializes");
    let mut written = write_rendered(&json, out_dir, format)?;
    if let Some(checks) = report.checks.result() {
        let path = out_dir.join("findings.csv");
        let file = std::fs::File::create(&path).map_err(|e| PipelineError::Io(path.display().to_string(), e))?;
        checks.write_findings(std::io::BufWriter::new(file))?;
        written.push(path);
    }
    Ok(written)
}

/// Writes the structured and/or summary rendering of a report document.
pub fn write_rendered(report: &Json, out_dir: &Path, format: ReportFormat) -> Result<Vec<PathBuf>, PipelineError> {
    std::fs::create_dir_all(out_dir).map_err(|e| PipelineError::Io(out_dir.display().to_string(), e))?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<(), PipelineError> {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| PipelineError::Io(path.display().to_string(), e))?;
        written.push(path);
        Ok(())
    };
    if format != ReportFormat::Summary {
        put("report.json", canonical_json(report))?;
    }
    if format != ReportFormat::Structured {
        put("summary.txt", render_summary(report))?;
    }
    Ok(written)
}

fn num(v: &Json) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.4}"),
        None => "-".into(),
    }
}

fn pp(v: &Json) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:+.1}"),
        None => "-".into(),
    }
}

fn gap(v: &Json) -> String {
    match v.as_f64() {
        Some(x) => format!("{x:.1}"),
        None => "-".into(),
    }
}

fn text(v: &Json) -> String {
    match v {
        Json::String(s) => s.clone(),
        other => other.to_string(),
    }
}

fn status_line(out: &mut String, title: &str, section: &Json) -> bool {
    let status = section["status"].as_str().unwrap_or("?");
    let _ = write!(out, "\n== {title} [{status}]");
    if let Some(reason) = section["reason"].as_str() {
        let _ = write!(out, ": {reason}");
    }
    out.push('\n');
    status == "ok"
}

fn metric_row(out: &mut String, label: &str, report: &Json) {
    let _ = writeln!(
        out,
        "  {label:<28} {:>9} {:>9} {:>9} {:>9} {:>9}",
        num(&report["recall"]),
        num(&report["precision"]),
        num(&report["f1"]),
        num(&report["date_accuracy"]),
        num(&report["completeness"]),
    );
}

/// Plain-text summary of a report document, with tables per section.
pub fn render_summary(r: &Json) -> String {
    let mut out = String::new();
    let meta = &r["meta"];
    let _ = writeln!(
        out,
        "{} {} validation report\nseed {}  config {}",
        meta["tool"].as_str().unwrap_or(""),
        meta["version"].as_str().unwrap_or(""),
        meta["seed"],
        meta["config_sha256"].as_str().unwrap_or("")
    );

    if status_line(&mut out, "Reference standard", &r["reference"]) {
        let s = &r["reference"]["result"]["summary"];
        let _ = writeln!(
            out,
            "  mode {}  patients {}  labels {}  agreed {}  adjudicated {}  single-source {}",
            s["mode"].as_str().unwrap_or(""),
            s["n_patients"],
            s["n_labels"],
            s["n_agreed_keys"],
            s["n_adjudicated_keys"],
            s["n_single_source_keys"]
        );
        if let Some(pairs) = s["cases_by_pair"].as_object() {
            for (pair, n) in pairs {
                let _ = writeln!(out, "  disagreements {pair}: {n}");
            }
        }
    }

    if status_line(&mut out, "Variable-level performance", &r["metrics"]) {
        let m = &r["metrics"]["result"];
        let _ = writeln!(
            out,
            "  {:<28} {:>9} {:>9} {:>9} {:>9} {:>9}",
            "variable / source", "recall", "precision", "f1", "date_acc", "complete"
        );
        for v in m["variables"]
            .as_array()
            .into_iter()
            .flatten()
            .chain(m["derived"].as_array().into_iter().flatten())
        {
            let name = match v["positive_class"].as_str() {
                Some(c) => format!("{}={c}", v["variable"].as_str().unwrap_or("")),
                None => v["variable"].as_str().unwrap_or("").to_string(),
            };
            metric_row(&mut out, &format!("{name} LLM"), &v["llm"]);
            if !v["abstraction"].is_null() {
                metric_row(&mut out, &format!("{name} abstraction"), &v["abstraction"]);
            }
            let deltas: Vec<String> = v["deltas"]
                .as_array()
                .into_iter()
                .flatten()
                .map(|d| format!("{} {}", d["metric"].as_str().unwrap_or(""), pp(&d["delta_pp"])))
                .collect();
            if !deltas.is_empty() {
                let _ = writeln!(out, "  {:<28} {}", format!("{name} delta (pp)"), deltas.join(", "));
            }
        }
        if let Some(skipped) = m["skipped"].as_array().filter(|s| !s.is_empty()) {
            let names: Vec<&str> = skipped.iter().filter_map(Json::as_str).collect();
            let _ = writeln!(out, "  skipped by risk profile: {}", names.join(", "));
        }
    }

    if status_line(&mut out, "Verification checks", &r["checks"]) {
        let c = &r["checks"]["result"];
        let _ = writeln!(out, "  {:<28} {:<8} {:>9} {:>9} {:>9}", "check", "status", "evaluated", "flagged", "findings");
        for check in c["checks"].as_array().into_iter().flatten() {
            let _ = writeln!(
                out,
                "  {:<28} {:<8} {:>9} {:>9} {:>9}",
                check["id"].as_str().unwrap_or(""),
                check["status"].as_str().unwrap_or(""),
                text(&check["n_evaluated"]),
                text(&check["n_flagged"]),
                check["findings"].as_array().map_or(0, Vec::len)
            );
        }
    }

    if status_line(&mut out, "Replication", &r["replication"]) {
        let rep = &r["replication"]["result"];
        let s = &rep["survival"];
        if !s.is_null() {
            let _ = writeln!(
                out,
                "  survival: {} records, {} events, median {} days (reference {})",
                s["n_records"], s["n_events"], s["median_days"], s["reference_median_days"]
            );
            if let Some(arms) = s["arms"].as_object() {
                for (arm, a) in arms {
                    let _ = writeln!(
                        out,
                        "  arm {arm}: n {}  events {}  median {} months",
                        a["n"],
                        a["n_events"],
                        num(&a["median_months"])
                    );
                }
            }
        }
        for b in rep["benchmarks"].as_array().into_iter().flatten() {
            let verdict = if b["concordant"].as_bool() == Some(true) {
                "concordant"
            } else {
                "DISCORDANT"
            };
            let _ = write!(
                out,
                "  benchmark {}: {} ({})",
                b["name"].as_str().unwrap_or(""),
                verdict,
                b["rule"].as_str().unwrap_or("")
            );
            if let Some(why) = b["reason"].as_str() {
                let _ = write!(out, ": {why}");
            }
            out.push('\n');
        }
        for d in rep["distributions"].as_array().into_iter().flatten() {
            let tvd = &d["comparison"]["tvd"];
            let _ = writeln!(out, "  distribution {}: tvd {}", d["variable"].as_str().unwrap_or(""), num(tvd));
        }
        for t in rep["trends"].as_array().into_iter().flatten() {
            let _ = writeln!(
                out,
                "  trend {}: {} months, max |delta| {}",
                t["variable"].as_str().unwrap_or(""),
                t["extracted"].as_array().map_or(0, Vec::len),
                t["max_abs_delta"]
            );
        }
        for e in rep["equity"].as_array().into_iter().flatten() {
            let verdict = if e["concordant"].as_bool() == Some(true) {
                "concordant"
            } else {
                "DISCORDANT"
            };
            let _ = writeln!(out, "  equity by {}: {verdict}", e["attribute"].as_str().unwrap_or(""));
        }
        for s in rep["skipped"].as_array().into_iter().flatten() {
            let _ = writeln!(out, "  skipped {}", s.as_str().unwrap_or(""));
        }
    }

    if status_line(&mut out, "Bias (stratified gaps, pp)", &r["bias"]) {
        let _ = writeln!(out, "  {:<20} {:<14} {:<10} {:>8} {:>8}", "variable", "attribute", "metric", "LLM", "abstr.");
        for g in r["bias"]["result"]["gaps"].as_array().into_iter().flatten() {
            let _ = writeln!(
                out,
                "  {:<20} {:<14} {:<10} {:>8} {:>8}",
                g["variable"].as_str().unwrap_or(""),
                g["attribute"].as_str().unwrap_or(""),
                g["metric"].as_str().unwrap_or(""),
                gap(&g["llm_gap_pp"]),
                gap(&g["abstraction_gap_pp"])
            );
        }
    }

    let thresholds = r["thresholds"].as_array().cloned().unwrap_or_default();
    if !thresholds.is_empty() {
        out.push_str("\n== Thresholds\n");
        for t in &thresholds {
            let mark = if t["breached"].as_bool() == Some(true) { "BREACH" } else { "ok" };
            let _ = writeln!(
                out,
                "  {mark:<6} {}.{} {} {} observed {}",
                t["variable"].as_str().unwrap_or(""),
                t["metric"].as_str().unwrap_or(""),
                t["kind"].as_str().unwrap_or(""),
                t["limit"],
                num(&t["observed"])
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn section_tagging() {
        let s: Section<u32> = Section::NotRun { reason: "disabled".into() };
        assert_eq!(
            serde_json::to_value(&s).unwrap(),
            serde_json::json!({"status": "not_run", "reason": "disabled"})
        );
        let s: Section<u32> = Section::Ok { result: 3 };
        assert_eq!(serde_json::to_value(&s).unwrap(), serde_json::json!({"status": "ok", "result": 3}));
    }

    #[test]
    fn canonical_keys_sorted() {
        let v = serde_json::json!({"b": 1, "a": {"d": 2, "c": 3}});
        assert_eq!(canonical_json(&v), "{\n  \"a\": {\n    \"c\": 3,\n    \"d\": 2\n  },\n  \"b\": 1\n}\n");
    }

    #[test]
    fn format_parse() {
        assert_eq!("both".parse::<ReportFormat>().unwrap(), ReportFormat::Both);
        assert!("pdf".parse::<ReportFormat>().is_err());
    }
}
