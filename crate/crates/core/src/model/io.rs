//! Delimited label files.
//!
//! Columns: `patient_id, variable, value, event_date, source, refresh_id`.
//! `event_date`, `source` and `refresh_id` may be empty; extra columns are
//! ignored so annotated worklists can be read back.

use std::io::{Read, Write};
use std::path::Path;

use super::{parse_date, DataError, LabelRecord, LabelSet, RecordProblem, RefreshId, Schema, Source};

pub const LABEL_COLUMNS: [&str; 6] = ["patient_id", "variable", "value", "event_date", "source", "refresh_id"];

pub(crate) struct Columns {
    pub(crate) patient: usize,
    pub(crate) variable: usize,
    pub(crate) value: usize,
    date: Option<usize>,
    source: Option<usize>,
    refresh: Option<usize>,
}

impl Columns {
    pub(crate) fn locate(header: &csv::StringRecord) -> Result<Self, DataError> {
        let find = |name: &str| header.iter().position(|h| h.trim() == name);
        let require = |name: &str| find(name).ok_or_else(|| DataError::MissingColumn(name.to_string()));
        Ok(Columns {
            patient: require("patient_id")?,
            variable: require("variable")?,
            value: require("value")?,
            date: find("event_date"),
            source: find("source"),
            refresh: find("refresh_id"),
        })
    }
}

pub(crate) fn cell(row: &csv::StringRecord, idx: Option<usize>) -> &str {
    idx.and_then(|i| row.get(i)).map(str::trim).unwrap_or("")
}

pub(crate) fn parse_row(row: &csv::StringRecord, cols: &Columns, schema: &Schema, source: Source) -> Result<LabelRecord, RecordProblem> {
    let patient = cell(row, Some(cols.patient));
    if patient.is_empty() {
        return Err(RecordProblem::EmptyPatient);
    }
    let variable = cell(row, Some(cols.variable));
    let spec = schema.require(variable)?;
    let value = spec.parse_value(cell(row, Some(cols.value)))?;
    let raw_date = cell(row, cols.date);
    let event_date = if raw_date.is_empty() { None } else { Some(parse_date(raw_date)?) };
    let raw_source = cell(row, cols.source);
    if !raw_source.is_empty() {
        let found: Source = raw_source.parse()?;
        if found != source {
            return Err(RecordProblem::SourceMismatch { expected: source, found });
        }
    }
    let raw_refresh = cell(row, cols.refresh);
    Ok(LabelRecord {
        patient_id: patient.to_string(),
        variable: variable.to_string(),
        value,
        event_date,
        source,
        refresh_id: (!raw_refresh.is_empty()).then(|| RefreshId::new(raw_refresh)),
    })
}

/// Reads and validates a label file from any reader.
pub fn read_labels<R: Read>(reader: R, schema: &Schema, source: Source) -> Result<LabelSet, DataError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).flexible(false).from_reader(reader);
    let cols = Columns::locate(rdr.headers()?)?;
    let mut set = LabelSet::new(source);
    for row in rdr.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let record = parse_row(&row, &cols, schema, source).map_err(|problem| DataError::Row { line, problem })?;
        set.insert(record, schema).map_err(|problem| DataError::Row { line, problem })?;
    }
    Ok(set)
}

/// Reads a label file from disk.
pub fn ingest_labels(path: &Path, schema: &Schema, source: Source) -> Result<LabelSet, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    read_labels(std::io::BufReader::new(file), schema, source)
}

/// Writes a label set in canonical order (patient, variable, in-key order).
pub fn write_labels<W: Write>(writer: W, labels: &LabelSet) -> Result<(), DataError> {
    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(LABEL_COLUMNS)?;
    for r in labels.records() {
        let date = r.event_date.map(|d| d.format("%Y-%m-%d").to_string()).unwrap_or_default();
        let refresh = r.refresh_id.as_ref().map(|t| t.0.as_str()).unwrap_or("");
        wtr.write_record([
            r.patient_id.as_str(),
            r.variable.as_str(),
            &r.value.to_string(),
            &date,
            r.source.as_str(),
            refresh,
        ])?;
    }
    wtr.flush().map_err(|e| DataError::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Value, VariableSpec};

    fn schema() -> Schema {
        Schema::new([
            VariableSpec::dated("surgery", &["yes", "no", "unknown"], Some("unknown")),
            VariableSpec::event_list("oral_drug", &[], None),
            VariableSpec::numeric("age"),
        ])
        .unwrap()
    }

    fn read(text: &str) -> Result<LabelSet, DataError> {
        read_labels(text.as_bytes(), &schema(), Source::Llm)
    }

    #[test]
    fn single_row() {
        let set = read("patient_id,variable,value,event_date,source,refresh_id\np1,surgery,yes,2020-03-01,LLM,\n").unwrap();
        assert_eq!(set.len(), 1);
        let r = set.single("p1", "surgery").unwrap();
        assert_eq!(r.value, Value::category("yes"));
        assert_eq!(r.event_date, Some(parse_date("2020-03-01").unwrap()));
    }

    #[test]
    fn header_only_is_empty() {
        let set = read("patient_id,variable,value,event_date,source,refresh_id\n").unwrap();
        assert!(set.is_empty());
    }

    #[test]
    fn disallowed_value_names_line_and_variable() {
        let err = read("patient_id,variable,value,event_date,source,refresh_id\np1,surgery,yes,2020-03-01,,\np2,surgery,maybe,,,\n").unwrap_err();
        let msg = err.to_string();
        assert!(matches!(
            err,
            DataError::Row {
                line: 3,
                problem: RecordProblem::ValueNotAllowed { .. }
            }
        ));
        assert!(msg.contains("surgery") && msg.contains("maybe"), "{msg}");
    }

    #[test]
    fn missing_column() {
        let err = read("patient_id,value\np1,yes\n").unwrap_err();
        assert!(matches!(err, DataError::MissingColumn(c) if c == "variable"));
    }

    #[test]
    fn bad_date() {
        let err = read("patient_id,variable,value,event_date\np1,surgery,yes,2020-13-01\n").unwrap_err();
        assert!(matches!(
            err,
            DataError::Row {
                problem: RecordProblem::InvalidDate(_),
                ..
            }
        ));
    }

    #[test]
    fn duplicate_key() {
        let err = read("patient_id,variable,value,event_date\np1,surgery,yes,2020-01-01\np1,surgery,no,\n").unwrap_err();
        assert!(matches!(
            err,
            DataError::Row {
                line: 3,
                problem: RecordProblem::Duplicate { .. }
            }
        ));
    }

    #[test]
    fn row_order_does_not_matter() {
        let a = read("patient_id,variable,value,event_date\np1,oral_drug,x,2021-01-01\np1,oral_drug,x,2020-01-01\np2,age,61,\n").unwrap();
        let b = read("patient_id,variable,value,event_date\np2,age,61,\np1,oral_drug,x,2020-01-01\np1,oral_drug,x,2021-01-01\n").unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn numeric_round_trip() {
        let set = read("patient_id,variable,value\np1,age,61.25\n").unwrap();
        let mut buf = Vec::new();
        write_labels(&mut buf, &set).unwrap();
        assert_eq!(read_labels(buf.as_slice(), &schema(), Source::Llm).unwrap(), set);
    }
}
