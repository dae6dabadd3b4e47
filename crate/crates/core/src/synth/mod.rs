//! Synthetic breast cancer cohorts with known ground truth.
//!
//! [`generate_truth`] draws an internally consistent cohort: every temporal
//! ordering, stage and receptor relationship checked by the default suite
//! holds by construction. [`corrupt`] then derives an extracted label set
//! from the truth with independent per-record errors, and
//! [`expected_metrics`] predicts the resulting metrics in closed form.

mod errors;
mod expected;

use std::collections::BTreeMap;

use chrono::{Datelike, Duration, Months, NaiveDate};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use errors::{corrupt, refresh_snapshots, ErrorModel, StratumMultiplier, VariableErrors};
pub use expected::{expected_end_to_end_accuracy, expected_metrics, ClassProfile, ExpectedMetrics};

use crate::model::{AttributeMap, CohortDataset, DataError, LabelRecord, LabelSet, PatientId, Schema, Source, Value};
use crate::replication::DAYS_PER_MONTH;
use crate::seed;
use crate::suites::breast_cancer_schema;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid generator config: {0}")]
    InvalidConfig(String),
    #[error("invalid error model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Arm {
    pub name: String,
    pub proportion: f64,
    pub median_os_months: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Group {
    pub name: String,
    pub proportion: f64,
    /// Multiplies the arm's death hazard.
    pub hazard_ratio: f64,
}

/// First-line regimen mixes by subtype. The TNBC mix switches once the
/// first-line start date reaches `io_approval`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FirstLineMix {
    pub io_approval: NaiveDate,
    pub hr_positive: BTreeMap<String, f64>,
    pub her2_positive: BTreeMap<String, f64>,
    pub tnbc_before_io: BTreeMap<String, f64>,
    pub tnbc_after_io: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub n_patients: usize,
    pub seed: u64,
    /// Metastatic diagnoses are uniform over this window.
    pub metastatic_window: (NaiveDate, NaiveDate),
    /// Initial diagnoses of never-metastatic patients are uniform here.
    pub initial_window: (NaiveDate, NaiveDate),
    pub followup_end: NaiveDate,
    pub stage_mix: BTreeMap<String, f64>,
    /// Probability of a later metastatic diagnosis, stages I to III.
    pub recurrence_by_stage: BTreeMap<String, f64>,
    pub surgery_by_stage: BTreeMap<String, f64>,
    pub radiation_rate: f64,
    pub adjuvant_rate: f64,
    pub endocrine_rate: f64,
    /// Keys `hr_positive`, `her2_positive`, `triple_negative`.
    pub subtype_mix: BTreeMap<String, f64>,
    pub pr_positive_given_hr: f64,
    pub hr_positive_given_her2: f64,
    pub gbrca1_tested: f64,
    pub gbrca1_positive: f64,
    pub first_line: FirstLineMix,
    pub arms: Vec<Arm>,
    pub groups: Vec<Group>,
    pub age_groups: BTreeMap<String, f64>,
}

fn mix(pairs: &[(&str, f64)]) -> BTreeMap<String, f64> {
    pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
}

fn date(s: &str) -> NaiveDate {
    NaiveDate::parse_from_str(s, "%Y-%m-%d").expect("static date")
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            n_patients: 10_000,
            seed: 20240601,
            metastatic_window: (date("2012-01-01"), date("2023-12-31")),
            initial_window: (date("2008-01-01"), date("2023-12-31")),
            followup_end: date("2025-12-31"),
            stage_mix: mix(&[("I", 0.35), ("II", 0.30), ("III", 0.15), ("IV", 0.20)]),
            recurrence_by_stage: mix(&[("I", 0.10), ("II", 0.20), ("III", 0.40)]),
            surgery_by_stage: mix(&[("I", 0.95), ("II", 0.92), ("III", 0.80), ("IV", 0.15)]),
            radiation_rate: 0.6,
            adjuvant_rate: 0.7,
            endocrine_rate: 0.85,
            subtype_mix: mix(&[("hr_positive", 0.65), ("her2_positive", 0.20), ("triple_negative", 0.15)]),
            pr_positive_given_hr: 0.8,
            hr_positive_given_her2: 0.5,
            gbrca1_tested: 0.4,
            gbrca1_positive: 0.1,
            first_line: FirstLineMix {
                io_approval: date("2019-03-01"),
                hr_positive: mix(&[("cdk46_ai", 0.7), ("ai_mono", 0.2), ("chemo", 0.1)]),
                her2_positive: mix(&[("anti_her2", 0.9), ("chemo", 0.1)]),
                tnbc_before_io: mix(&[("chemo", 0.85), ("parp", 0.15)]),
                tnbc_after_io: mix(&[("chemo", 0.45), ("chemo_io", 0.45), ("parp", 0.10)]),
            },
            arms: vec![
                Arm {
                    name: "A".into(),
                    proportion: 0.5,
                    median_os_months: 14.0,
                },
                Arm {
                    name: "B".into(),
                    proportion: 0.5,
                    median_os_months: 11.0,
                },
            ],
            groups: vec![
                Group {
                    name: "group_1".into(),
                    proportion: 0.7,
                    hazard_ratio: 1.0,
                },
                Group {
                    name: "group_2".into(),
                    proportion: 0.3,
                    hazard_ratio: 1.3,
                },
            ],
            age_groups: mix(&[("<50", 0.25), ("50-64", 0.40), ("65+", 0.35)]),
        }
    }
}

fn check_probability(name: &str, p: f64) -> Result<(), SynthError> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(SynthError::InvalidConfig(format!("{name} must be in [0, 1], got {p}")))
    }
}

fn check_mix(name: &str, m: &BTreeMap<String, f64>) -> Result<(), SynthError> {
    for (k, p) in m {
        check_probability(&format!("{name}.{k}"), *p)?;
    }
    let total: f64 = m.values().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(SynthError::InvalidConfig(format!("{name} sums to {total}, expected 1")));
    }
    Ok(())
}

const STAGES: [&str; 4] = ["I", "II", "III", "IV"];
const SUBTYPES: [&str; 3] = ["hr_positive", "her2_positive", "triple_negative"];
pub const STRATA: [&str; 3] = ["age_group", "arm", "group"];

impl GeneratorConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, SynthError> {
        let cfg: GeneratorConfig = toml::from_str(text).map_err(|e| SynthError::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        check_mix("stage_mix", &self.stage_mix)?;
        if !STAGES.iter().all(|s| self.stage_mix.contains_key(*s)) || self.stage_mix.len() != STAGES.len() {
            return Err(SynthError::InvalidConfig("stage_mix needs exactly the stages I, II, III, IV".into()));
        }
        for s in &STAGES[..3] {
            let p = self
                .recurrence_by_stage
                .get(*s)
                .ok_or_else(|| SynthError::InvalidConfig(format!("recurrence_by_stage misses {s}")))?;
            check_probability("recurrence_by_stage", *p)?;
        }
        for s in STAGES {
            let p = self
                .surgery_by_stage
                .get(s)
                .ok_or_else(|| SynthError::InvalidConfig(format!("surgery_by_stage misses {s}")))?;
            check_probability("surgery_by_stage", *p)?;
        }
        check_mix("subtype_mix", &self.subtype_mix)?;
        if !SUBTYPES.iter().all(|s| self.subtype_mix.contains_key(*s)) || self.subtype_mix.len() != SUBTYPES.len() {
            return Err(SynthError::InvalidConfig(format!("subtype_mix needs exactly {SUBTYPES:?}")));
        }
        for (name, p) in [
            ("radiation_rate", self.radiation_rate),
            ("adjuvant_rate", self.adjuvant_rate),
            ("endocrine_rate", self.endocrine_rate),
            ("pr_positive_given_hr", self.pr_positive_given_hr),
            ("hr_positive_given_her2", self.hr_positive_given_her2),
            ("gbrca1_tested", self.gbrca1_tested),
            ("gbrca1_positive", self.gbrca1_positive),
        ] {
            check_probability(name, p)?;
        }
        let fl = &self.first_line;
        check_mix("first_line.hr_positive", &fl.hr_positive)?;
        check_mix("first_line.her2_positive", &fl.her2_positive)?;
        check_mix("first_line.tnbc_before_io", &fl.tnbc_before_io)?;
        check_mix("first_line.tnbc_after_io", &fl.tnbc_after_io)?;
        check_mix("arms", &self.arms.iter().map(|a| (a.name.clone(), a.proportion)).collect())?;
        check_mix("groups", &self.groups.iter().map(|g| (g.name.clone(), g.proportion)).collect())?;
        check_mix("age_groups", &self.age_groups)?;
        if self.arms.iter().any(|a| !(a.median_os_months > 0.0)) || self.groups.iter().any(|g| !(g.hazard_ratio > 0.0)) {
            return Err(SynthError::InvalidConfig("survival medians and hazard ratios must be positive".into()));
        }
        let (m0, m1) = self.metastatic_window;
        let (i0, i1) = self.initial_window;
        if m0 > m1 || i0 > i1 {
            return Err(SynthError::InvalidConfig("date windows must be ordered".into()));
        }
        if self.followup_end < m1 {
            return Err(SynthError::InvalidConfig("followup_end precedes the end of the metastatic window".into()));
        }
        Ok(())
    }
}

/// Survival ground truth of one metastatic patient, indexed at the
/// metastatic diagnosis.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurvivalTruth {
    pub index_date: NaiveDate,
    /// Set when death falls on or before the end of follow-up.
    pub death_date: Option<NaiveDate>,
    pub last_contact: NaiveDate,
}

#[derive(Debug, Clone)]
pub struct SyntheticCohort {
    pub schema: Schema,
    pub attributes: AttributeMap,
    /// Ground-truth labels, attributed to the reference source.
    pub truth: LabelSet,
    pub survival: BTreeMap<PatientId, SurvivalTruth>,
}

impl SyntheticCohort {
    /// Dataset over this cohort's schema and attributes with the given
    /// label sets.
    pub fn dataset(&self, label_sets: impl IntoIterator<Item = LabelSet>) -> CohortDataset {
        CohortDataset::new(self.schema.clone(), self.attributes.clone(), label_sets)
    }

    pub fn patient_ids(&self) -> impl Iterator<Item = &str> {
        self.attributes.patients()
    }
}

pub fn patient_id(index: usize) -> PatientId {
    format!("P{index:07}")
}

fn draw<'a>(rng: &mut ChaCha8Rng, m: &'a BTreeMap<String, f64>) -> &'a str {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = "";
    for (k, p) in m {
        acc += p;
        last = k;
        if u < acc {
            return k;
        }
    }
    last
}

fn days(rng: &mut ChaCha8Rng, lo: i64, hi: i64) -> Duration {
    Duration::days(rng.random_range(lo..=hi))
}

fn uniform_date(rng: &mut ChaCha8Rng, (lo, hi): (NaiveDate, NaiveDate)) -> NaiveDate {
    lo + days(rng, 0, (hi - lo).num_days())
}

struct PatientTruth {
    id: PatientId,
    attributes: BTreeMap<String, String>,
    records: Vec<LabelRecord>,
    survival: Option<SurvivalTruth>,
}

/// Stage and metastatic status, drawn before everything else so that
/// metastatic diagnoses can be spread over calendar months.
fn disease_course(cfg: &GeneratorConfig, index: usize) -> (String, bool) {
    let mut rng = seed::rng(cfg.seed, &["course", &patient_id(index)]);
    let stage = draw(&mut rng, &cfg.stage_mix).to_string();
    let metastatic = stage == "IV" || rng.random_bool(cfg.recurrence_by_stage[&stage]);
    (stage, metastatic)
}

/// Calendar months of the window, clipped to its bounds.
fn month_slots((lo, hi): (NaiveDate, NaiveDate)) -> Vec<(NaiveDate, NaiveDate)> {
    let mut out = Vec::new();
    let mut start = lo;
    while start <= hi {
        let next = start.with_day(1).expect("day 1 exists").checked_add_months(Months::new(1)).expect("in range");
        out.push((start, (next - Duration::days(1)).min(hi)));
        start = next;
    }
    out
}

fn generate_patient(cfg: &GeneratorConfig, index: usize, stage: String, met_month: Option<(NaiveDate, NaiveDate)>) -> PatientTruth {
    let id = patient_id(index);
    let mut rng = seed::rng(cfg.seed, &["truth", &id]);
    let rng = &mut rng;
    let mut records = Vec::new();
    let mut push = |variable: &str, value: &str, d: Option<NaiveDate>| {
        records.push(LabelRecord::new(&id, variable, Value::category(value), d, Source::Reference));
    };

    let group = draw(rng, &cfg.groups.iter().map(|g| (g.name.clone(), g.proportion)).collect()).to_string();
    let arm = draw(rng, &cfg.arms.iter().map(|a| (a.name.clone(), a.proportion)).collect()).to_string();
    let age_group = draw(rng, &cfg.age_groups).to_string();
    let subtype = draw(rng, &cfg.subtype_mix);
    let (er, pr, her2) = match subtype {
        "triple_negative" => (false, false, false),
        "her2_positive" => {
            let hr = rng.random_bool(cfg.hr_positive_given_her2);
            (hr, hr, true)
        }
        _ => (true, rng.random_bool(cfg.pr_positive_given_hr), false),
    };
    let (initial, met) = match met_month {
        Some(month) if stage == "IV" => {
            let m = uniform_date(rng, month);
            (m, Some(m))
        }
        Some(month) => {
            let m = uniform_date(rng, month);
            (m - days(rng, 400, 2500), Some(m))
        }
        None => (uniform_date(rng, cfg.initial_window), None),
    };
    push("initial_dx", "yes", Some(initial));
    push("stage", &stage, None);
    match met {
        Some(m) => push("metastatic_dx", "yes", Some(m)),
        None => push("metastatic_dx", "no", None),
    }

    if rng.random_bool(cfg.surgery_by_stage[&stage]) {
        let s = initial + days(rng, 14, 60);
        push("surgery", "yes", Some(s));
        if rng.random_bool(cfg.radiation_rate) {
            push("radiation", "yes", Some(s + days(rng, 30, 90)));
        } else {
            push("radiation", "no", None);
        }
        if rng.random_bool(cfg.adjuvant_rate) {
            push("adjuvant_therapy", "yes", Some(s + days(rng, 21, 84)));
        } else {
            push("adjuvant_therapy", "no", None);
        }
    } else {
        push("surgery", "no", None);
    }

    if (er || pr) && rng.random_bool(cfg.endocrine_rate) {
        push("endocrine_therapy", "yes", Some(initial + days(rng, 30, 120)));
    } else {
        push("endocrine_therapy", "no", None);
    }

    let result = |positive: bool| if positive { "positive" } else { "negative" };
    let recurrent = met.is_some_and(|m| m != initial);
    for (variable, positive) in [("er", er), ("pr", pr), ("her2", her2)] {
        push(variable, result(positive), Some(initial + days(rng, 0, 14)));
        if recurrent {
            push(variable, result(positive), Some(met.unwrap() + days(rng, 0, 30)));
        }
    }
    if rng.random_bool(cfg.gbrca1_tested) {
        let positive = rng.random_bool(cfg.gbrca1_positive);
        push("gbrca1", result(positive), Some(met.unwrap_or(initial) + days(rng, 0, 30)));
    }

    let mut survival = None;
    if let Some(m) = met {
        let fl = &cfg.first_line;
        let start = m + days(rng, 7, 45);
        let regimen_mix = match subtype {
            "triple_negative" if start >= fl.io_approval => &fl.tnbc_after_io,
            "triple_negative" => &fl.tnbc_before_io,
            "her2_positive" => &fl.her2_positive,
            _ => &fl.hr_positive,
        };
        push("first_line", draw(rng, regimen_mix), Some(start));

        let median = cfg.arms.iter().find(|a| a.name == arm).expect("drawn arm").median_os_months;
        let hr = cfg.groups.iter().find(|g| g.name == group).expect("drawn group").hazard_ratio;
        let rate = std::f64::consts::LN_2 / (median * DAYS_PER_MONTH) * hr;
        let t: f64 = Exp::new(rate).expect("positive rate").sample(rng);
        let death = m + Duration::days(t.ceil().max(1.0) as i64);
        let (death_date, last_contact) = if death <= cfg.followup_end {
            let earliest = (death - Duration::days(30)).max(m);
            (Some(death), uniform_date(rng, (earliest, death)))
        } else {
            let earliest = (cfg.followup_end - Duration::days(60)).max(m);
            (None, uniform_date(rng, (earliest, cfg.followup_end)))
        };
        match death_date {
            Some(d) => push("death", "yes", Some(d)),
            None => push("death", "no", None),
        }
        push("last_contact", "yes", Some(last_contact));
        survival = Some(SurvivalTruth {
            index_date: m,
            death_date,
            last_contact,
        });
    }

    let attributes = [("age_group", age_group), ("arm", arm), ("group", group)]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    PatientTruth {
        id,
        attributes,
        records,
        survival,
    }
}

/// Draws a ground-truth cohort. Output depends only on the config.
///
/// Metastatic patients are dealt round-robin, in shuffled order, over the
/// calendar months of the metastatic window, so monthly diagnosis counts
/// differ by at most one.
pub fn generate_truth(config: &GeneratorConfig) -> Result<SyntheticCohort, SynthError> {
    config.validate()?;
    let schema = breast_cancer_schema();
    let courses: Vec<(String, bool)> = (0..config.n_patients).into_par_iter().map(|i| disease_course(config, i)).collect();
    let mut metastatic: Vec<usize> = courses.iter().enumerate().filter(|(_, c)| c.1).map(|(i, _)| i).collect();
    metastatic.shuffle(&mut seed::rng(config.seed, &["metastatic_months"]));
    let slots = month_slots(config.metastatic_window);
    let mut met_month = vec![None; config.n_patients];
    for (j, i) in metastatic.into_iter().enumerate() {
        met_month[i] = Some(slots[j % slots.len()]);
    }
    let patients: Vec<PatientTruth> = courses
        .into_par_iter()
        .zip(met_month)
        .enumerate()
        .map(|(i, ((stage, _), month))| generate_patient(config, i, stage, month))
        .collect();
    let mut attributes = AttributeMap::new(&STRATA);
    let mut truth = LabelSet::new(Source::Reference);
    let mut survival = BTreeMap::new();
    for p in patients {
        for r in p.records {
            truth.insert(r, &schema).map_err(DataError::from)?;
        }
        attributes.insert(&p.id, p.attributes);
        if let Some(s) = p.survival {
            survival.insert(p.id, s);
        }
    }
    Ok(SyntheticCohort {
        schema,
        attributes,
        truth,
        survival,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checks::run_all_checks;
    use crate::model::{write_labels, RefreshId};
    use crate::suites::breast_cancer_suite;

    fn small(n: usize) -> GeneratorConfig {
        GeneratorConfig {
            n_patients: n,
            ..GeneratorConfig::default()
        }
    }

    #[test]
    fn empty_cohort() {
        let c = generate_truth(&small(0)).unwrap();
        assert!(c.truth.is_empty() && c.attributes.is_empty());
    }

    #[test]
    fn same_seed_same_bytes() {
        let bytes = |cfg: &GeneratorConfig| {
            let mut buf = Vec::new();
            write_labels(&mut buf, &generate_truth(cfg).unwrap().truth).unwrap();
            buf
        };
        assert_eq!(bytes(&small(300)), bytes(&small(300)));
        let other = GeneratorConfig { seed: 7, ..small(300) };
        assert_ne!(bytes(&small(300)), bytes(&other));
    }

    #[test]
    fn surgery_prevalence_matches_config() {
        let mut cfg = small(10_000);
        for p in cfg.surgery_by_stage.values_mut() {
            *p = 0.3;
        }
        let c = generate_truth(&cfg).unwrap();
        let yes = c
            .patient_ids()
            .filter(|p| c.truth.single(p, "surgery").is_some_and(|r| r.value.as_category() == Some("yes")))
            .count() as f64;
        let n = 10_000.0;
        let sd = (0.3f64 * 0.7 / n).sqrt();
        assert!((yes / n - 0.3).abs() <= 3.0 * sd, "observed {}", yes / n);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small(10);
        cfg.stage_mix.insert("I".into(), 0.5);
        assert!(matches!(generate_truth(&cfg), Err(SynthError::InvalidConfig(_))));
        let mut cfg = small(10);
        cfg.arms[0].median_os_months = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = small(10);
        cfg.radiation_rate = 1.5;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_round_trips_through_toml() {
        let cfg = small(5);
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(GeneratorConfig::from_toml_str(&text).unwrap(), cfg);
    }

    #[test]
    fn truth_is_clean_under_default_suite() {
        let c = generate_truth(&small(2_000)).unwrap();
        let suite = breast_cancer_suite(&c.schema).unwrap();
        let older = c.truth.relabeled(Source::Llm).with_refresh_id(&RefreshId::new("1"));
        let newer = c.truth.relabeled(Source::Llm).with_refresh_id(&RefreshId::new("2"));
        let ds = c.dataset([newer]);
        let report = run_all_checks(&suite, &ds, Source::Llm, Some(&older), &[]).unwrap();
        let findings: Vec<_> = report.findings().collect();
        assert!(findings.is_empty(), "{findings:#?}");
    }

    #[test]
    fn io_regimen_only_after_approval() {
        let c = generate_truth(&small(5_000)).unwrap();
        let approval = GeneratorConfig::default().first_line.io_approval;
        let io: Vec<_> = c
            .truth
            .records()
            .filter(|r| r.variable == "first_line" && r.value.as_category() == Some("chemo_io"))
            .collect();
        assert!(!io.is_empty());
        assert!(io.iter().all(|r| r.event_date.unwrap() >= approval));
    }
}
