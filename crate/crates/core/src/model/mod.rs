//! Core domain types: variable schema, label records, label sets and the
//! cohort dataset that ties sources and patient attributes together.

mod attributes;
mod io;
mod view;

pub use attributes::{validate_attributes, AttributeMap, MISSING_ATTRIBUTE};
pub(crate) use io::{cell, parse_row, Columns};
pub use io::{ingest_labels, read_labels, write_labels, LABEL_COLUMNS};
pub use view::{patient_view, Field, Observation, PatientView};

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type PatientId = String;

/// Problems with a single label record, independent of where it came from.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RecordProblem {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),
    #[error("value `{value}` is not allowed for variable `{variable}`")]
    ValueNotAllowed { variable: String, value: String },
    #[error("value `{value}` for numeric variable `{variable}` is not a number")]
    InvalidNumber { variable: String, value: String },
    #[error("empty value for variable `{0}`")]
    EmptyValue(String),
    #[error("unparseable date `{0}` (expected YYYY-MM-DD)")]
    InvalidDate(String),
    #[error("variable `{0}` does not carry event dates")]
    UnexpectedEventDate(String),
    #[error("duplicate label for patient `{patient}`, variable `{variable}`")]
    Duplicate { patient: String, variable: String },
    #[error("record source {found} does not match label set source {expected}")]
    SourceMismatch { expected: Source, found: Source },
    #[error("unknown source `{0}`")]
    UnknownSource(String),
    #[error("empty patient_id")]
    EmptyPatient,
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid schema: {0}")]
    InvalidSchema(String),
    #[error("missing required column `{0}`")]
    MissingColumn(String),
    #[error("line {line}: {problem}")]
    Row { line: u64, problem: RecordProblem },
    #[error(transparent)]
    Record(#[from] RecordProblem),
    #[error("line {line}: duplicate row for patient `{patient}`")]
    DuplicatePatient { line: u64, patient: String },
    #[error("attribute column `{0}` is not a declared stratum")]
    UndeclaredAttribute(String),
    #[error("unknown patient `{0}`")]
    UnknownPatient(String),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl DataError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        DataError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VariableKind {
    Categorical,
    Date,
    Numeric,
    EventList,
}

/// Declares one extracted variable.
///
/// Date-kind variables may declare `allowed_values` for the asserted value
/// (e.g. `yes`/`no`), with the date itself carried in the record's
/// `event_date`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariableSpec {
    pub name: String,
    pub kind: VariableKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub allowed_values: Option<BTreeSet<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unknown_token: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_tolerance_days: Option<u32>,
}

impl VariableSpec {
    pub fn categorical(name: &str, values: &[&str], unknown: Option<&str>) -> Self {
        Self::with_values(name, VariableKind::Categorical, values, unknown)
    }

    pub fn dated(name: &str, values: &[&str], unknown: Option<&str>) -> Self {
        Self::with_values(name, VariableKind::Date, values, unknown)
    }

    pub fn event_list(name: &str, values: &[&str], unknown: Option<&str>) -> Self {
        Self::with_values(name, VariableKind::EventList, values, unknown)
    }

    pub fn numeric(name: &str) -> Self {
        VariableSpec {
            name: name.to_string(),
            kind: VariableKind::Numeric,
            allowed_values: None,
            unknown_token: None,
            date_tolerance_days: None,
        }
    }

    fn with_values(name: &str, kind: VariableKind, values: &[&str], unknown: Option<&str>) -> Self {
        let allowed = if values.is_empty() {
            None
        } else {
            Some(values.iter().map(|v| v.to_string()).collect())
        };
        VariableSpec {
            name: name.to_string(),
            kind,
            allowed_values: allowed,
            unknown_token: unknown.map(str::to_string),
            date_tolerance_days: None,
        }
    }

    pub fn with_tolerance(mut self, days: u32) -> Self {
        self.date_tolerance_days = Some(days);
        self
    }

    /// True for kinds whose records may carry an `event_date`.
    pub fn is_dated(&self) -> bool {
        matches!(self.kind, VariableKind::Date | VariableKind::EventList)
    }

    pub fn is_event_list(&self) -> bool {
        self.kind == VariableKind::EventList
    }

    pub fn is_unknown(&self, value: &Value) -> bool {
        match (value, &self.unknown_token) {
            (Value::Category(v), Some(tok)) => v == tok,
            _ => false,
        }
    }

    /// Allowed values minus the unknown token.
    pub fn known_values(&self) -> Vec<&str> {
        self.allowed_values
            .iter()
            .flatten()
            .filter(|v| Some(*v) != self.unknown_token.as_ref())
            .map(String::as_str)
            .collect()
    }

    fn check(&self) -> Result<(), DataError> {
        let bad = |msg: &str| Err(DataError::InvalidSchema(format!("variable `{}`: {msg}", self.name)));
        if self.name.trim().is_empty() {
            return Err(DataError::InvalidSchema("empty variable name".into()));
        }
        match (&self.kind, &self.allowed_values) {
            (VariableKind::Categorical, None) => return bad("categorical variables need allowed_values"),
            (VariableKind::Numeric, Some(_)) => return bad("numeric variables take no allowed_values"),
            (_, Some(set)) if set.is_empty() => return bad("allowed_values is empty"),
            _ => {}
        }
        if let Some(tok) = &self.unknown_token {
            match &self.allowed_values {
                Some(set) if set.contains(tok) => {}
                _ => return bad("unknown_token must be one of allowed_values"),
            }
        }
        Ok(())
    }

    /// Parses a raw cell into a value conforming to this variable.
    pub fn parse_value(&self, raw: &str) -> Result<Value, RecordProblem> {
        let raw = raw.trim();
        if raw.is_empty() {
            return Err(RecordProblem::EmptyValue(self.name.clone()));
        }
        let value = match self.kind {
            VariableKind::Numeric => raw
                .parse::<f64>()
                .ok()
                .filter(|x| x.is_finite())
                .map(Value::Number)
                .ok_or_else(|| RecordProblem::InvalidNumber {
                    variable: self.name.clone(),
                    value: raw.to_string(),
                })?,
            _ => Value::Category(raw.to_string()),
        };
        self.conform(&value)?;
        Ok(value)
    }

    pub fn conform(&self, value: &Value) -> Result<(), RecordProblem> {
        match (self.kind, value) {
            (VariableKind::Numeric, Value::Number(_)) => Ok(()),
            (VariableKind::Numeric, Value::Category(c)) => Err(RecordProblem::InvalidNumber {
                variable: self.name.clone(),
                value: c.clone(),
            }),
            (_, Value::Number(x)) => Err(RecordProblem::ValueNotAllowed {
                variable: self.name.clone(),
                value: x.to_string(),
            }),
            (_, Value::Category(c)) => match &self.allowed_values {
                Some(set) if !set.contains(c) => Err(RecordProblem::ValueNotAllowed {
                    variable: self.name.clone(),
                    value: c.clone(),
                }),
                _ if c.is_empty() => Err(RecordProblem::EmptyValue(self.name.clone())),
                _ => Ok(()),
            },
        }
    }
}

/// The set of variables a run works with.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    variables: BTreeMap<String, VariableSpec>,
}

#[derive(Deserialize)]
struct SchemaFile {
    #[serde(rename = "variable", default)]
    variables: Vec<VariableSpec>,
}

impl Schema {
    pub fn new(specs: impl IntoIterator<Item = VariableSpec>) -> Result<Self, DataError> {
        let mut variables = BTreeMap::new();
        for spec in specs {
            spec.check()?;
            let name = spec.name.clone();
            if variables.insert(name.clone(), spec).is_some() {
                return Err(DataError::InvalidSchema(format!("variable `{name}` declared twice")));
            }
        }
        Ok(Schema { variables })
    }

    /// Parses the TOML schema format (`[[variable]]` tables).
    pub fn from_toml_str(text: &str) -> Result<Self, DataError> {
        let file: SchemaFile = toml::from_str(text).map_err(|e| DataError::InvalidSchema(e.to_string()))?;
        Self::new(file.variables)
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            variable: Vec<&'a VariableSpec>,
        }
        toml::to_string(&Out {
            variable: self.variables.values().collect(),
        })
        .expect("schema serializes")
    }

    pub fn get(&self, name: &str) -> Option<&VariableSpec> {
        self.variables.get(name)
    }

    pub fn require(&self, name: &str) -> Result<&VariableSpec, RecordProblem> {
        self.get(name).ok_or_else(|| RecordProblem::UnknownVariable(name.to_string()))
    }

    pub fn variables(&self) -> impl Iterator<Item = &VariableSpec> {
        self.variables.values()
    }

    pub fn len(&self) -> usize {
        self.variables.len()
    }

    pub fn is_empty(&self) -> bool {
        self.variables.is_empty()
    }
}

/// Who produced a label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Source {
    #[serde(rename = "LLM")]
    Llm,
    #[serde(rename = "ABSTRACTOR_1")]
    Abstractor1,
    #[serde(rename = "ABSTRACTOR_2")]
    Abstractor2,
    #[serde(rename = "ADJUDICATOR")]
    Adjudicator,
    #[serde(rename = "REFERENCE")]
    Reference,
}

impl Source {
    pub const ALL: [Source; 5] = [Source::Llm, Source::Abstractor1, Source::Abstractor2, Source::Adjudicator, Source::Reference];

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Llm => "LLM",
            Source::Abstractor1 => "ABSTRACTOR_1",
            Source::Abstractor2 => "ABSTRACTOR_2",
            Source::Adjudicator => "ADJUDICATOR",
            Source::Reference => "REFERENCE",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = RecordProblem;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Source::ALL
            .into_iter()
            .find(|src| src.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| RecordProblem::UnknownSource(s.to_string()))
    }
}

/// A recorded value. Dates live in [`LabelRecord::event_date`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Number(f64),
    Category(String),
}

impl Value {
    pub fn category(s: &str) -> Self {
        Value::Category(s.to_string())
    }

    pub fn as_category(&self) -> Option<&str> {
        match self {
            Value::Category(c) => Some(c),
            Value::Number(_) => None,
        }
    }

    fn sort_cmp(&self, other: &Value) -> Ordering {
        match (self, other) {
            (Value::Number(a), Value::Number(b)) => a.total_cmp(b),
            (Value::Category(a), Value::Category(b)) => a.cmp(b),
            (Value::Number(_), Value::Category(_)) => Ordering::Less,
            (Value::Category(_), Value::Number(_)) => Ordering::Greater,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Number(x) => write!(f, "{x}"),
            Value::Category(c) => f.write_str(c),
        }
    }
}

/// Database refresh tag. Purely numeric tags compare numerically, anything
/// else lexicographically (so `2024-01` < `2024-02`).
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct RefreshId(pub String);

impl RefreshId {
    pub fn new(tag: &str) -> Self {
        RefreshId(tag.to_string())
    }
}

impl Ord for RefreshId {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self.0.parse::<u64>(), other.0.parse::<u64>()) {
            (Ok(a), Ok(b)) => a.cmp(&b),
            _ => self.0.cmp(&other.0),
        }
    }
}

impl PartialOrd for RefreshId {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for RefreshId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub patient_id: PatientId,
    pub variable: String,
    pub value: Value,
    pub event_date: Option<NaiveDate>,
    pub source: Source,
    pub refresh_id: Option<RefreshId>,
}

impl LabelRecord {
    pub fn new(patient: &str, variable: &str, value: Value, date: Option<NaiveDate>, source: Source) -> Self {
        LabelRecord {
            patient_id: patient.to_string(),
            variable: variable.to_string(),
            value,
            event_date: date,
            source,
            refresh_id: None,
        }
    }

    /// Canonical in-key ordering: by date (undated first), then value.
    fn sort_cmp(&self, other: &Self) -> Ordering {
        self.event_date
            .cmp(&other.event_date)
            .then_with(|| self.value.sort_cmp(&other.value))
            .then_with(|| self.refresh_id.cmp(&other.refresh_id))
    }
}

/// All assertions from one source, keyed by (patient, variable).
#[derive(Debug, Clone, PartialEq)]
pub struct LabelSet {
    source: Source,
    records: BTreeMap<(PatientId, String), Vec<LabelRecord>>,
}

impl LabelSet {
    pub fn new(source: Source) -> Self {
        LabelSet {
            source,
            records: BTreeMap::new(),
        }
    }

    /// Builds a label set, validating each record against the schema.
    pub fn from_records(source: Source, records: impl IntoIterator<Item = LabelRecord>, schema: &Schema) -> Result<Self, RecordProblem> {
        let mut set = LabelSet::new(source);
        for r in records {
            set.insert(r, schema)?;
        }
        Ok(set)
    }

    pub fn source(&self) -> Source {
        self.source
    }

    /// Validates and inserts one record, keeping event lists date-sorted.
    pub fn insert(&mut self, record: LabelRecord, schema: &Schema) -> Result<(), RecordProblem> {
        if record.patient_id.trim().is_empty() {
            return Err(RecordProblem::EmptyPatient);
        }
        if record.source != self.source {
            return Err(RecordProblem::SourceMismatch {
                expected: self.source,
                found: record.source,
            });
        }
        let spec = schema.require(&record.variable)?;
        spec.conform(&record.value)?;
        if record.event_date.is_some() && !spec.is_dated() {
            return Err(RecordProblem::UnexpectedEventDate(spec.name.clone()));
        }
        let key = (record.patient_id.clone(), record.variable.clone());
        let slot = self.records.entry(key).or_default();
        if !spec.is_event_list() && !slot.is_empty() {
            return Err(RecordProblem::Duplicate {
                patient: record.patient_id,
                variable: record.variable,
            });
        }
        let pos = slot.partition_point(|r| r.sort_cmp(&record) != Ordering::Greater);
        slot.insert(pos, record);
        Ok(())
    }

    /// Removes every record for a key, returning them.
    pub fn remove(&mut self, patient: &str, variable: &str) -> Vec<LabelRecord> {
        self.records.remove(&(patient.to_string(), variable.to_string())).unwrap_or_default()
    }

    pub fn get(&self, patient: &str, variable: &str) -> &[LabelRecord] {
        // BTreeMap lookups with tuple keys need owned parts.
        self.records.get(&(patient.to_string(), variable.to_string())).map(Vec::as_slice).unwrap_or(&[])
    }

    /// The single record of a non-event-list variable, if any.
    pub fn single(&self, patient: &str, variable: &str) -> Option<&LabelRecord> {
        self.get(patient, variable).first()
    }

    pub fn keys(&self) -> impl Iterator<Item = (&str, &str)> {
        self.records.keys().map(|(p, v)| (p.as_str(), v.as_str()))
    }

    pub fn groups(&self) -> impl Iterator<Item = ((&str, &str), &[LabelRecord])> {
        self.records.iter().map(|((p, v), rs)| ((p.as_str(), v.as_str()), rs.as_slice()))
    }

    pub fn records(&self) -> impl Iterator<Item = &LabelRecord> {
        self.records.values().flatten()
    }

    pub fn len(&self) -> usize {
        self.records.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn patients(&self) -> BTreeSet<&str> {
        self.records.keys().map(|(p, _)| p.as_str()).collect()
    }

    /// Records of one patient grouped by variable.
    pub fn patient_records<'a>(&'a self, patient: &'a str) -> impl Iterator<Item = (&'a str, &'a [LabelRecord])> + 'a {
        self.records
            .range((patient.to_string(), String::new())..)
            .take_while(move |((p, _), _)| p == patient)
            .map(|((_, v), rs)| (v.as_str(), rs.as_slice()))
    }

    /// Copy of this set attributed to another source.
    pub fn relabeled(&self, source: Source) -> LabelSet {
        let mut out = self.clone();
        out.source = source;
        for r in out.records.values_mut().flatten() {
            r.source = source;
        }
        out
    }

    /// Copy with every record stamped with the given refresh tag.
    pub fn with_refresh_id(&self, tag: &RefreshId) -> LabelSet {
        let mut out = self.clone();
        for r in out.records.values_mut().flatten() {
            r.refresh_id = Some(tag.clone());
        }
        out
    }

    /// The newest refresh tag carried by any record.
    pub fn refresh_id(&self) -> Option<&RefreshId> {
        self.records().filter_map(|r| r.refresh_id.as_ref()).max()
    }
}

/// Schema, patient universe with stratification attributes, and the label
/// sets of every source.
#[derive(Debug, Clone)]
pub struct CohortDataset {
    pub schema: Schema,
    pub attributes: AttributeMap,
    pub label_sets: BTreeMap<Source, LabelSet>,
    patients: BTreeSet<PatientId>,
}

impl CohortDataset {
    /// The patient universe is the union of attribute rows and labelled
    /// patients; labelled patients without attribute rows read as missing.
    pub fn new(schema: Schema, attributes: AttributeMap, label_sets: impl IntoIterator<Item = LabelSet>) -> Self {
        let label_sets: BTreeMap<Source, LabelSet> = label_sets.into_iter().map(|s| (s.source(), s)).collect();
        let mut patients: BTreeSet<PatientId> = attributes.patients().map(str::to_string).collect();
        for set in label_sets.values() {
            patients.extend(set.patients().into_iter().map(str::to_string));
        }
        CohortDataset {
            schema,
            attributes,
            label_sets,
            patients,
        }
    }

    pub fn patients(&self) -> &BTreeSet<PatientId> {
        &self.patients
    }

    pub fn labels(&self, source: Source) -> Option<&LabelSet> {
        self.label_sets.get(&source)
    }

    pub fn contains_patient(&self, patient: &str) -> bool {
        self.patients.contains(patient)
    }
}

/// Parses an ISO-8601 calendar date.
pub fn parse_date(raw: &str) -> Result<NaiveDate, RecordProblem> {
    NaiveDate::parse_from_str(raw.trim(), "%Y-%m-%d").map_err(|_| RecordProblem::InvalidDate(raw.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn schema() -> Schema {
        Schema::new([
            VariableSpec::dated("surgery", &["yes", "no", "unknown"], Some("unknown")),
            VariableSpec::categorical("stage", &["I", "II", "III", "IV", "unknown"], Some("unknown")),
            VariableSpec::event_list("oral_drug", &[], None),
            VariableSpec::numeric("age"),
        ])
        .unwrap()
    }

    fn d(s: &str) -> NaiveDate {
        parse_date(s).unwrap()
    }

    #[test]
    fn schema_rejects_unknown_token_outside_allowed() {
        let mut spec = VariableSpec::categorical("x", &["a", "b"], None);
        spec.unknown_token = Some("u".into());
        assert!(matches!(Schema::new([spec]), Err(DataError::InvalidSchema(_))));
    }

    #[test]
    fn schema_rejects_categorical_without_values() {
        let spec = VariableSpec::categorical("x", &[], None);
        assert!(Schema::new([spec]).is_err());
    }

    #[test]
    fn schema_toml_round_trip() {
        let s = schema();
        let text = s.to_toml_string();
        assert_eq!(Schema::from_toml_str(&text).unwrap(), s);
    }

    #[test]
    fn duplicate_single_valued_rejected() {
        let s = schema();
        let mut set = LabelSet::new(Source::Llm);
        let r = LabelRecord::new("p1", "stage", Value::category("II"), None, Source::Llm);
        set.insert(r.clone(), &s).unwrap();
        assert!(matches!(set.insert(r, &s), Err(RecordProblem::Duplicate { .. })));
    }

    #[test]
    fn event_list_keeps_date_order() {
        let s = schema();
        let mut set = LabelSet::new(Source::Llm);
        for date in ["2021-05-01", "2020-01-01", "2020-06-01"] {
            let r = LabelRecord::new("p1", "oral_drug", Value::category("tamoxifen"), Some(d(date)), Source::Llm);
            set.insert(r, &s).unwrap();
        }
        let dates: Vec<_> = set.get("p1", "oral_drug").iter().map(|r| r.event_date.unwrap()).collect();
        assert_eq!(dates, vec![d("2020-01-01"), d("2020-06-01"), d("2021-05-01")]);
    }

    #[test]
    fn undated_kind_rejects_event_date() {
        let s = schema();
        let mut set = LabelSet::new(Source::Llm);
        let r = LabelRecord::new("p1", "stage", Value::category("II"), Some(d("2020-01-01")), Source::Llm);
        assert!(matches!(set.insert(r, &s), Err(RecordProblem::UnexpectedEventDate(_))));
    }

    #[test]
    fn source_mismatch_rejected() {
        let s = schema();
        let mut set = LabelSet::new(Source::Llm);
        let r = LabelRecord::new("p1", "stage", Value::category("II"), None, Source::Abstractor1);
        assert!(matches!(set.insert(r, &s), Err(RecordProblem::SourceMismatch { .. })));
    }

    #[test]
    fn refresh_ids_compare_numerically_when_numeric() {
        assert!(RefreshId::new("9") < RefreshId::new("10"));
        assert!(RefreshId::new("2024-01") < RefreshId::new("2024-02"));
    }

    #[test]
    fn source_parses_case_insensitively() {
        assert_eq!("abstractor_2".parse::<Source>().unwrap(), Source::Abstractor2);
        assert!("ABSTRACTOR_3".parse::<Source>().is_err());
    }

    #[test]
    fn patient_records_is_scoped() {
        let s = schema();
        let mut set = LabelSet::new(Source::Llm);
        for p in ["p1", "p10", "p2"] {
            set.insert(LabelRecord::new(p, "stage", Value::category("I"), None, Source::Llm), &s).unwrap();
        }
        assert_eq!(set.patient_records("p1").count(), 1);
    }
}
