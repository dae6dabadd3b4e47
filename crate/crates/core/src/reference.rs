//! Reference standards built from duplicate abstraction or adjudication,
//! and the disagreement worklist that drives adjudication.
//!
//! Disagreement is pairwise: in triple mode a (patient, variable) needs
//! adjudication as soon as any pair of LLM, abstractor 1 and abstractor 2
//! disagree, even if two of the three agree.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::match_events;
use crate::model::{cell, parse_row, Columns, DataError, LabelRecord, LabelSet, PatientId, Schema, Source, Value, VariableSpec, LABEL_COLUMNS};

/// Value token an adjudicator uses to state that nothing is documented.
pub const ABSENT_VALUE: &str = "<none>";

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("abstractor 2 label set is empty")]
    EmptyReference,
    #[error("{} disagreement case(s) lack an adjudication: {}", .0.len(), format_keys(.0))]
    Uncovered(Vec<(PatientId, String)>),
    #[error("{} adjudication(s) do not correspond to a disagreement: {}", .0.len(), format_keys(.0))]
    Stale(Vec<(PatientId, String)>),
    #[error("adjudication for patient `{patient}`, variable `{variable}` mixes `{ABSENT_VALUE}` with values")]
    MixedAbsent { patient: String, variable: String },
    #[error("{mode} mode requires a {what} label set")]
    MissingInput { mode: ReferenceMode, what: &'static str },
    #[error(transparent)]
    Data(#[from] DataError),
}

fn format_keys(keys: &[(PatientId, String)]) -> String {
    keys.iter().map(|(p, v)| format!("{p}/{v}")).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    DuplicateAbstraction,
    DoubleAdjudication,
    TripleAdjudication,
}

impl std::fmt::Display for ReferenceMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ReferenceMode::DuplicateAbstraction => "duplicate_abstraction",
            ReferenceMode::DoubleAdjudication => "double_adjudication",
            ReferenceMode::TripleAdjudication => "triple_adjudication",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Pair {
    #[serde(rename = "LLM_vs_A1")]
    LlmVsA1,
    #[serde(rename = "LLM_vs_A2")]
    LlmVsA2,
    #[serde(rename = "A1_vs_A2")]
    A1VsA2,
}

impl Pair {
    pub fn as_str(self) -> &'static str {
        match self {
            Pair::LlmVsA1 => "LLM_vs_A1",
            Pair::LlmVsA2 => "LLM_vs_A2",
            Pair::A1VsA2 => "A1_vs_A2",
        }
    }

    pub fn members(self) -> (Source, Source) {
        match self {
            Pair::LlmVsA1 => (Source::Llm, Source::Abstractor1),
            Pair::LlmVsA2 => (Source::Llm, Source::Abstractor2),
            Pair::A1VsA2 => (Source::Abstractor1, Source::Abstractor2),
        }
    }

    pub fn parse(s: &str) -> Option<Pair> {
        [Pair::LlmVsA1, Pair::LlmVsA2, Pair::A1VsA2]
            .into_iter()
            .find(|p| p.as_str().eq_ignore_ascii_case(s.trim()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaseStatus {
    Open,
    Adjudicated,
}

/// A value with its date as asserted by one source.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Assertion {
    pub value: Value,
    pub date: Option<NaiveDate>,
}

fn assertions(records: &[LabelRecord]) -> Vec<Assertion> {
    records
        .iter()
        .map(|r| Assertion {
            value: r.value.clone(),
            date: r.event_date,
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DisagreementCase {
    pub patient_id: PatientId,
    pub variable: String,
    pub pair: Pair,
    pub llm: Vec<Assertion>,
    pub abstractor1: Vec<Assertion>,
    pub abstractor2: Option<Vec<Assertion>>,
    pub status: CaseStatus,
}

impl DisagreementCase {
    pub fn key(&self) -> (PatientId, String) {
        (self.patient_id.clone(), self.variable.clone())
    }
}

/// Matching rule shared by disagreement detection: values must be equal and
/// dates within the variable's tolerance (or the default).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Comparator {
    pub default_tolerance_days: u32,
}

impl Default for Comparator {
    fn default() -> Self {
        Comparator { default_tolerance_days: 30 }
    }
}

impl Comparator {
    pub fn new(default_tolerance_days: u32) -> Self {
        Comparator { default_tolerance_days }
    }

    pub fn tolerance(&self, spec: &VariableSpec) -> u32 {
        spec.date_tolerance_days.unwrap_or(self.default_tolerance_days)
    }

    /// Whether two sources' records for one (patient, variable) agree.
    ///
    /// Event lists agree only if every event on either side can be paired
    /// with an equal-valued event on the other side within tolerance.
    pub fn agree(&self, spec: &VariableSpec, left: &[LabelRecord], right: &[LabelRecord]) -> bool {
        let tol = i64::from(self.tolerance(spec));
        if !spec.is_event_list() {
            return match (left.first(), right.first()) {
                (None, None) => true,
                (Some(a), Some(b)) => a.value == b.value && dates_agree(a.event_date, b.event_date, tol),
                _ => false,
            };
        }
        if left.len() != right.len() {
            return false;
        }
        let mut values: Vec<&Value> = left.iter().map(|r| &r.value).collect();
        values.dedup();
        let mut seen = Vec::new();
        for v in values {
            if seen.contains(&v) {
                continue;
            }
            seen.push(v);
            let pick = |rs: &[LabelRecord], dated: bool| -> Vec<NaiveDate> {
                rs.iter()
                    .filter(|r| &r.value == v && r.event_date.is_some() == dated)
                    .map(|r| r.event_date.unwrap_or(NaiveDate::MIN))
                    .collect()
            };
            let (ld, rd) = (pick(left, true), pick(right, true));
            if ld.len() != rd.len() || pick(left, false).len() != pick(right, false).len() {
                return false;
            }
            let m = match_events(&ld, &rd, tol).expect("tolerance is non-negative");
            if m.pairs.len() != ld.len() {
                return false;
            }
        }
        // Every left value group is fully paired and sizes are equal, so the
        // right side has no values the left lacks.
        true
    }
}

fn dates_agree(a: Option<NaiveDate>, b: Option<NaiveDate>, tol: i64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).num_days().abs() <= tol,
        _ => false,
    }
}

/// Enumerates one case per (patient, variable, pair) whose members disagree.
///
/// Absence on one side is a disagreement when the other side asserts
/// anything. Output is ordered by (patient, variable, pair).
pub fn find_disagreements(llm: &LabelSet, a1: &LabelSet, a2: Option<&LabelSet>, schema: &Schema, comparator: &Comparator) -> Vec<DisagreementCase> {
    let mut keys: BTreeSet<(&str, &str)> = llm.keys().chain(a1.keys()).collect();
    if let Some(a2) = a2 {
        keys.extend(a2.keys());
    }
    let pairs: &[Pair] = if a2.is_some() {
        &[Pair::LlmVsA1, Pair::LlmVsA2, Pair::A1VsA2]
    } else {
        &[Pair::LlmVsA1]
    };
    let mut cases = Vec::new();
    for (patient, variable) in keys {
        let Some(spec) = schema.get(variable) else { continue };
        let side = |src: Source| -> &[LabelRecord] {
            match src {
                Source::Llm => llm.get(patient, variable),
                Source::Abstractor1 => a1.get(patient, variable),
                Source::Abstractor2 => a2.map(|s| s.get(patient, variable)).unwrap_or(&[]),
                _ => &[],
            }
        };
        for &pair in pairs {
            let (l, r) = pair.members();
            if comparator.agree(spec, side(l), side(r)) {
                continue;
            }
            cases.push(DisagreementCase {
                patient_id: patient.to_string(),
                variable: variable.to_string(),
                pair,
                llm: assertions(side(Source::Llm)),
                abstractor1: assertions(side(Source::Abstractor1)),
                abstractor2: a2.map(|_| assertions(side(Source::Abstractor2))),
                status: CaseStatus::Open,
            });
        }
    }
    cases
}

/// Adjudicator decisions per (patient, variable). An empty decision states
/// that nothing is documented.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Adjudications {
    decisions: BTreeMap<(PatientId, String), Vec<LabelRecord>>,
}

impl Adjudications {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn decide(&mut self, patient: &str, variable: &str, records: Vec<LabelRecord>) {
        self.decisions.insert((patient.to_string(), variable.to_string()), records);
    }

    pub fn get(&self, patient: &str, variable: &str) -> Option<&[LabelRecord]> {
        self.decisions.get(&(patient.to_string(), variable.to_string())).map(Vec::as_slice)
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.decisions.keys().map(|(p, v)| (p.as_str(), v.as_str()))
    }

    pub fn len(&self) -> usize {
        self.decisions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.decisions.is_empty()
    }

    /// Reads the adjudication file (standard label format, source
    /// ADJUDICATOR). A row whose value is [`ABSENT_VALUE`] records an
    /// explicit "nothing documented" decision.
    pub fn read<R: Read>(reader: R, schema: &Schema) -> Result<Self, ReferenceError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let cols = Columns::locate(rdr.headers().map_err(DataError::from)?)?;
        let mut set = LabelSet::new(Source::Adjudicator);
        let mut absent = BTreeSet::new();
        for row in rdr.records() {
            let row = row.map_err(DataError::from)?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            if cell(&row, Some(cols.value)) == ABSENT_VALUE {
                let key = (cell(&row, Some(cols.patient)).to_string(), cell(&row, Some(cols.variable)).to_string());
                schema.require(&key.1).map_err(|problem| DataError::Row { line, problem })?;
                absent.insert(key);
                continue;
            }
            let record = parse_row(&row, &cols, schema, Source::Adjudicator).map_err(|problem| DataError::Row { line, problem })?;
            set.insert(record, schema).map_err(|problem| DataError::Row { line, problem })?;
        }
        let mut out = Adjudications::from(set);
        for (patient, variable) in absent {
            if out.get(&patient, &variable).is_some() {
                return Err(ReferenceError::MixedAbsent { patient, variable });
            }
            out.decide(&patient, &variable, Vec::new());
        }
        Ok(out)
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(LABEL_COLUMNS)?;
        for ((patient, variable), records) in &self.decisions {
            if records.is_empty() {
                wtr.write_record([patient.as_str(), variable.as_str(), ABSENT_VALUE, "", Source::Adjudicator.as_str(), ""])?;
            }
            for r in records {
                let date = r.event_date.map(|d| d.to_string()).unwrap_or_default();
                wtr.write_record([
                    patient.as_str(),
                    variable.as_str(),
                    &r.value.to_string(),
                    &date,
                    Source::Adjudicator.as_str(),
                    r.refresh_id.as_ref().map(|t| t.0.as_str()).unwrap_or(""),
                ])?;
            }
        }
        wtr.flush().map_err(|e| DataError::Csv(e.into()))?;
        Ok(())
    }
}

impl From<LabelSet> for Adjudications {
    fn from(set: LabelSet) -> Self {
        let mut out = Adjudications::new();
        for ((patient, variable), records) in set.groups() {
            out.decide(patient, variable, records.to_vec());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Agreed,
    Adjudicated,
    SingleSource,
}

#[derive(Debug, Clone)]
pub struct ReferenceStandard {
    pub mode: ReferenceMode,
    /// Labels with source REFERENCE.
    pub labels: LabelSet,
    /// Per (patient, variable). Adjudicated keys whose decision is "nothing
    /// documented" keep a provenance entry but no label.
    pub provenance: BTreeMap<(PatientId, String), Provenance>,
    /// Test-set patients: everyone any input source mentions.
    pub patients: BTreeSet<PatientId>,
    pub cases: Vec<DisagreementCase>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReferenceSummary {
    pub mode: ReferenceMode,
    pub n_patients: usize,
    pub n_labels: usize,
    pub cases_by_pair: BTreeMap<Pair, usize>,
    pub n_adjudicated_keys: usize,
    pub n_agreed_keys: usize,
    pub n_single_source_keys: usize,
}

impl ReferenceStandard {
    pub fn summary(&self) -> ReferenceSummary {
        let mut cases_by_pair = BTreeMap::new();
        for c in &self.cases {
            *cases_by_pair.entry(c.pair).or_insert(0) += 1;
        }
        let count = |p: Provenance| self.provenance.values().filter(|&&x| x == p).count();
        ReferenceSummary {
            mode: self.mode,
            n_patients: self.patients.len(),
            n_labels: self.labels.len(),
            cases_by_pair,
            n_adjudicated_keys: count(Provenance::Adjudicated),
            n_agreed_keys: count(Provenance::Agreed),
            n_single_source_keys: count(Provenance::SingleSource),
        }
    }
}

fn universe(sets: &[&LabelSet]) -> BTreeSet<PatientId> {
    sets.iter().flat_map(|s| s.patients()).map(str::to_string).collect()
}

/// Reference = abstractor 2 verbatim; the LLM and abstractor 1 are the
/// evaluands.
pub fn build_duplicate_abstraction(llm: &LabelSet, a1: &LabelSet, a2: &LabelSet) -> Result<(ReferenceStandard, [Source; 2]), ReferenceError> {
    if a2.is_empty() {
        return Err(ReferenceError::EmptyReference);
    }
    let provenance = a2.keys().map(|(p, v)| ((p.to_string(), v.to_string()), Provenance::SingleSource)).collect();
    let reference = ReferenceStandard {
        mode: ReferenceMode::DuplicateAbstraction,
        labels: a2.relabeled(Source::Reference),
        provenance,
        patients: universe(&[llm, a1, a2]),
        cases: Vec::new(),
    };
    Ok((reference, [Source::Llm, Source::Abstractor1]))
}

/// Reference = abstractor 1 where the LLM agrees with it, the adjudicator's
/// decision wherever they disagree.
pub fn build_double_adjudication(
    llm: &LabelSet,
    a1: &LabelSet,
    adjudications: &Adjudications,
    schema: &Schema,
    comparator: &Comparator,
) -> Result<ReferenceStandard, ReferenceError> {
    let cases = find_disagreements(llm, a1, None, schema, comparator);
    assemble(ReferenceMode::DoubleAdjudication, &[llm, a1], a1, cases, adjudications, schema)
}

/// Reference = the unanimous label where all three sources agree, the
/// adjudicator's decision wherever any pair disagrees.
pub fn build_triple_adjudication(
    llm: &LabelSet,
    a1: &LabelSet,
    a2: &LabelSet,
    adjudications: &Adjudications,
    schema: &Schema,
    comparator: &Comparator,
) -> Result<ReferenceStandard, ReferenceError> {
    let cases = find_disagreements(llm, a1, Some(a2), schema, comparator);
    assemble(ReferenceMode::TripleAdjudication, &[llm, a1, a2], a1, cases, adjudications, schema)
}

fn assemble(
    mode: ReferenceMode,
    inputs: &[&LabelSet],
    agreed_source: &LabelSet,
    mut cases: Vec<DisagreementCase>,
    adjudications: &Adjudications,
    schema: &Schema,
) -> Result<ReferenceStandard, ReferenceError> {
    let disputed: BTreeSet<(PatientId, String)> = cases.iter().map(DisagreementCase::key).collect();
    let uncovered: Vec<_> = disputed.iter().filter(|(p, v)| adjudications.get(p, v).is_none()).cloned().collect();
    if !uncovered.is_empty() {
        return Err(ReferenceError::Uncovered(uncovered));
    }
    let stale: Vec<_> = adjudications
        .keys()
        .filter(|&(p, v)| !disputed.contains(&(p.to_string(), v.to_string())))
        .map(|(p, v)| (p.to_string(), v.to_string()))
        .collect();
    if !stale.is_empty() {
        return Err(ReferenceError::Stale(stale));
    }

    let mut labels = LabelSet::new(Source::Reference);
    let mut provenance = BTreeMap::new();
    let push = |records: &[LabelRecord], labels: &mut LabelSet| -> Result<(), ReferenceError> {
        for r in records {
            let mut r = r.clone();
            r.source = Source::Reference;
            labels.insert(r, schema).map_err(DataError::from)?;
        }
        Ok(())
    };
    let keys: BTreeSet<(&str, &str)> = inputs.iter().flat_map(|s| s.keys()).collect();
    for (patient, variable) in keys {
        let key = (patient.to_string(), variable.to_string());
        if disputed.contains(&key) {
            let decision = adjudications.get(patient, variable).expect("coverage checked");
            push(decision, &mut labels)?;
            provenance.insert(key, Provenance::Adjudicated);
        } else {
            push(agreed_source.get(patient, variable), &mut labels)?;
            provenance.insert(key, Provenance::Agreed);
        }
    }
    for case in &mut cases {
        case.status = CaseStatus::Adjudicated;
    }
    Ok(ReferenceStandard {
        mode,
        labels,
        provenance,
        patients: universe(inputs),
        cases,
    })
}

/// Writes the disagreement worklist: the label columns plus `pair`, one row
/// per record of each member of each case.
pub fn write_worklist<W: Write>(writer: W, cases: &[DisagreementCase]) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    let mut header = LABEL_COLUMNS.to_vec();
    header.push("pair");
    wtr.write_record(&header)?;
    for case in cases {
        let (l, r) = case.pair.members();
        for src in [l, r] {
            let side = match src {
                Source::Llm => &case.llm,
                Source::Abstractor1 => &case.abstractor1,
                _ => case.abstractor2.as_ref().expect("A2 pairs carry A2 values"),
            };
            if side.is_empty() {
                wtr.write_record([
                    case.patient_id.as_str(),
                    case.variable.as_str(),
                    ABSENT_VALUE,
                    "",
                    src.as_str(),
                    "",
                    case.pair.as_str(),
                ])?;
            }
            for a in side {
                let date = a.date.map(|d| d.to_string()).unwrap_or_default();
                wtr.write_record([
                    case.patient_id.as_str(),
                    case.variable.as_str(),
                    &a.value.to_string(),
                    &date,
                    src.as_str(),
                    "",
                    case.pair.as_str(),
                ])?;
            }
        }
    }
    wtr.flush().map_err(|e| DataError::Csv(e.into()))?;
    Ok(())
}

/// Reads back the (patient, variable, pair) keys of a worklist.
pub fn read_worklist_keys<R: Read>(reader: R) -> Result<BTreeSet<(PatientId, String, Pair)>, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr.headers()?.clone();
    let cols = Columns::locate(&header)?;
    let pair_col = header.iter().position(|h| h == "pair").ok_or_else(|| DataError::MissingColumn("pair".into()))?;
    let mut out = BTreeSet::new();
    for row in rdr.records() {
        let row = row?;
        if let Some(pair) = Pair::parse(cell(&row, Some(pair_col))) {
            out.insert((cell(&row, Some(cols.patient)).to_string(), cell(&row, Some(cols.variable)).to_string(), pair));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::parse_date;

    fn schema() -> Schema {
        Schema::new([
            VariableSpec::dated("surgery", &["yes", "no", "unknown"], Some("unknown")),
            VariableSpec::event_list("oral_drug", &["capecitabine", "olaparib"], None),
        ])
        .unwrap()
    }

    fn rec(src: Source, p: &str, var: &str, val: &str, date: Option<&str>) -> LabelRecord {
        LabelRecord::new(p, var, Value::category(val), date.map(|s| parse_date(s).unwrap()), src)
    }

    fn set(src: Source, rows: &[(&str, &str, &str, Option<&str>)]) -> LabelSet {
        LabelSet::from_records(src, rows.iter().map(|(p, v, x, d)| rec(src, p, v, x, *d)), &schema()).unwrap()
    }

    #[test]
    fn identical_sources_have_no_cases() {
        let rows = [("p1", "surgery", "yes", Some("2020-03-01"))];
        let cases = find_disagreements(
            &set(Source::Llm, &rows),
            &set(Source::Abstractor1, &rows),
            None,
            &schema(),
            &Comparator::default(),
        );
        assert!(cases.is_empty());
    }

    #[test]
    fn one_day_apart_depends_on_tolerance() {
        let llm = set(Source::Llm, &[("p1", "surgery", "yes", Some("2020-03-01"))]);
        let a1 = set(Source::Abstractor1, &[("p1", "surgery", "yes", Some("2020-03-02"))]);
        let strict = find_disagreements(&llm, &a1, None, &schema(), &Comparator::new(0));
        assert_eq!(strict.len(), 1);
        assert_eq!(strict[0].pair, Pair::LlmVsA1);
        assert!(find_disagreements(&llm, &a1, None, &schema(), &Comparator::new(30)).is_empty());
    }

    #[test]
    fn triple_mode_flags_every_disagreeing_pair() {
        let llm = set(Source::Llm, &[("p1", "surgery", "yes", None)]);
        let a1 = set(Source::Abstractor1, &[("p1", "surgery", "yes", None)]);
        let a2 = set(Source::Abstractor2, &[("p1", "surgery", "no", None)]);
        let pairs: Vec<Pair> = find_disagreements(&llm, &a1, Some(&a2), &schema(), &Comparator::default())
            .into_iter()
            .map(|c| c.pair)
            .collect();
        assert_eq!(pairs, vec![Pair::LlmVsA2, Pair::A1VsA2]);
    }

    #[test]
    fn absence_against_assertion_is_a_case() {
        let llm = set(Source::Llm, &[("p1", "surgery", "yes", None)]);
        let a1 = set(Source::Abstractor1, &[]);
        assert_eq!(find_disagreements(&llm, &a1, None, &schema(), &Comparator::default()).len(), 1);
    }

    #[test]
    fn event_lists_compare_as_whole_lists() {
        let llm = set(
            Source::Llm,
            &[
                ("p1", "oral_drug", "capecitabine", Some("2020-01-01")),
                ("p1", "oral_drug", "capecitabine", Some("2020-06-01")),
            ],
        );
        let same = set(
            Source::Abstractor1,
            &[
                ("p1", "oral_drug", "capecitabine", Some("2020-06-10")),
                ("p1", "oral_drug", "capecitabine", Some("2020-01-05")),
            ],
        );
        let fewer = set(Source::Abstractor1, &[("p1", "oral_drug", "capecitabine", Some("2020-01-01"))]);
        let other_drug = set(
            Source::Abstractor1,
            &[
                ("p1", "oral_drug", "capecitabine", Some("2020-01-01")),
                ("p1", "oral_drug", "olaparib", Some("2020-06-01")),
            ],
        );
        let cmp = Comparator::new(30);
        assert!(find_disagreements(&llm, &same, None, &schema(), &cmp).is_empty());
        assert_eq!(find_disagreements(&llm, &fewer, None, &schema(), &cmp).len(), 1);
        assert_eq!(find_disagreements(&llm, &other_drug, None, &schema(), &cmp).len(), 1);
    }

    #[test]
    fn duplicate_abstraction_takes_abstractor_2() {
        let a2 = set(Source::Abstractor2, &[("p1", "surgery", "yes", None)]);
        let (reference, evaluands) = build_duplicate_abstraction(&LabelSet::new(Source::Llm), &LabelSet::new(Source::Abstractor1), &a2).unwrap();
        assert_eq!(reference.labels, a2.relabeled(Source::Reference));
        assert_eq!(evaluands, [Source::Llm, Source::Abstractor1]);
        assert!(reference.provenance.values().all(|p| *p == Provenance::SingleSource));
    }

    #[test]
    fn duplicate_abstraction_requires_abstractor_2() {
        let empty = LabelSet::new(Source::Abstractor2);
        assert!(matches!(
            build_duplicate_abstraction(&LabelSet::new(Source::Llm), &LabelSet::new(Source::Abstractor1), &empty),
            Err(ReferenceError::EmptyReference)
        ));
    }

    #[test]
    fn double_adjudication_full_agreement() {
        let rows = [("p1", "surgery", "no", None)];
        let reference = build_double_adjudication(
            &set(Source::Llm, &rows),
            &set(Source::Abstractor1, &rows),
            &Adjudications::new(),
            &schema(),
            &Comparator::default(),
        )
        .unwrap();
        assert_eq!(reference.labels, set(Source::Abstractor1, &rows).relabeled(Source::Reference));
    }

    #[test]
    fn double_adjudication_uses_decision() {
        let llm = set(Source::Llm, &[("p1", "surgery", "yes", Some("2020-01-01"))]);
        let a1 = set(Source::Abstractor1, &[("p1", "surgery", "no", None)]);
        let adj = Adjudications::from(set(Source::Adjudicator, &[("p1", "surgery", "yes", Some("2020-01-01"))]));
        let reference = build_double_adjudication(&llm, &a1, &adj, &schema(), &Comparator::default()).unwrap();
        assert_eq!(reference.labels.single("p1", "surgery").unwrap().value, Value::category("yes"));
        assert_eq!(reference.provenance[&("p1".to_string(), "surgery".to_string())], Provenance::Adjudicated);
        assert!(reference.cases.iter().all(|c| c.status == CaseStatus::Adjudicated));
    }

    #[test]
    fn uncovered_case_is_named() {
        let llm = set(Source::Llm, &[("p1", "surgery", "yes", None), ("p2", "surgery", "yes", None)]);
        let a1 = set(Source::Abstractor1, &[("p1", "surgery", "no", None), ("p2", "surgery", "no", None)]);
        let err = build_double_adjudication(&llm, &a1, &Adjudications::new(), &schema(), &Comparator::default()).unwrap_err();
        match err {
            ReferenceError::Uncovered(keys) => {
                assert_eq!(keys, vec![("p1".into(), "surgery".into()), ("p2".into(), "surgery".into())])
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn stale_adjudication_rejected() {
        let rows = [("p1", "surgery", "no", None)];
        let adj = Adjudications::from(set(Source::Adjudicator, &rows));
        let err = build_double_adjudication(
            &set(Source::Llm, &rows),
            &set(Source::Abstractor1, &rows),
            &adj,
            &schema(),
            &Comparator::default(),
        )
        .unwrap_err();
        assert!(matches!(err, ReferenceError::Stale(_)));
    }

    #[test]
    fn triple_adjudication_overrule() {
        let llm = set(Source::Llm, &[("p1", "surgery", "yes", None)]);
        let a1 = set(Source::Abstractor1, &[("p1", "surgery", "yes", None)]);
        let a2 = set(Source::Abstractor2, &[("p1", "surgery", "no", None)]);
        let adj = Adjudications::from(set(Source::Adjudicator, &[("p1", "surgery", "unknown", None)]));
        let reference = build_triple_adjudication(&llm, &a1, &a2, &adj, &schema(), &Comparator::default()).unwrap();
        assert_eq!(reference.labels.single("p1", "surgery").unwrap().value, Value::category("unknown"));
    }

    #[test]
    fn absent_decision_round_trips_and_removes_label() {
        let llm = set(Source::Llm, &[("p1", "surgery", "yes", None)]);
        let a1 = LabelSet::new(Source::Abstractor1);
        let mut adj = Adjudications::new();
        adj.decide("p1", "surgery", Vec::new());
        let mut buf = Vec::new();
        adj.write(&mut buf).unwrap();
        let back = Adjudications::read(buf.as_slice(), &schema()).unwrap();
        assert_eq!(back, adj);
        let reference = build_double_adjudication(&llm, &a1, &back, &schema(), &Comparator::default()).unwrap();
        assert!(reference.labels.is_empty());
        assert_eq!(reference.summary().n_adjudicated_keys, 1);
    }

    #[test]
    fn worklist_round_trips_keys() {
        let llm = set(Source::Llm, &[("p1", "surgery", "yes", None)]);
        let a1 = set(Source::Abstractor1, &[("p2", "surgery", "no", None)]);
        let cases = find_disagreements(&llm, &a1, None, &schema(), &Comparator::default());
        let mut buf = Vec::new();
        write_worklist(&mut buf, &cases).unwrap();
        let keys = read_worklist_keys(buf.as_slice()).unwrap();
        let expected: BTreeSet<_> = cases.iter().map(|c| (c.patient_id.clone(), c.variable.clone(), c.pair)).collect();
        assert_eq!(keys, expected);
    }
}
