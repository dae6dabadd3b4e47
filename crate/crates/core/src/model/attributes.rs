use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use super::{DataError, PatientId};

/// Attribute value reported for patients without a row or a cell.
pub const MISSING_ATTRIBUTE: &str = "missing";

/// Per-patient stratification attributes.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttributeMap {
    strata: Vec<String>,
    rows: BTreeMap<PatientId, BTreeMap<String, String>>,
}

impl AttributeMap {
    pub fn new(strata: &[&str]) -> Self {
        AttributeMap {
            strata: strata.iter().map(|s| s.to_string()).collect(),
            rows: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, patient: &str, attributes: BTreeMap<String, String>) {
        self.rows.insert(patient.to_string(), attributes);
    }

    pub fn strata(&self) -> &[String] {
        &self.strata
    }

    pub fn patients(&self) -> impl Iterator<Item = &str> {
        self.rows.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Stratum value for a patient; absent patients or cells read as
    /// [`MISSING_ATTRIBUTE`].
    pub fn get(&self, patient: &str, stratum: &str) -> &str {
        self.rows
            .get(patient)
            .and_then(|attrs| attrs.get(stratum))
            .map(String::as_str)
            .filter(|v| !v.is_empty())
            .unwrap_or(MISSING_ATTRIBUTE)
    }

    pub fn declares(&self, stratum: &str) -> bool {
        self.strata.iter().any(|s| s == stratum)
    }

    pub fn read<R: Read>(reader: R, declared_strata: &[String]) -> Result<Self, DataError> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers()?.clone();
        let pid_col = header
            .iter()
            .position(|h| h == "patient_id")
            .ok_or_else(|| DataError::MissingColumn("patient_id".into()))?;
        for (i, name) in header.iter().enumerate() {
            if i != pid_col && !declared_strata.iter().any(|s| s == name) {
                return Err(DataError::UndeclaredAttribute(name.to_string()));
            }
        }
        let mut map = AttributeMap {
            strata: declared_strata.to_vec(),
            rows: BTreeMap::new(),
        };
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let patient = row.get(pid_col).unwrap_or("").to_string();
            let attrs = header
                .iter()
                .zip(row.iter())
                .enumerate()
                .filter(|(i, _)| *i != pid_col)
                .map(|(_, (k, v))| (k.to_string(), v.to_string()))
                .collect();
            if map.rows.insert(patient.clone(), attrs).is_some() {
                return Err(DataError::DuplicatePatient { line, patient });
            }
        }
        Ok(map)
    }

    pub fn write<W: std::io::Write>(&self, writer: W) -> Result<(), DataError> {
        let mut wtr = csv::Writer::from_writer(writer);
        let mut header = vec!["patient_id"];
        header.extend(self.strata.iter().map(String::as_str));
        wtr.write_record(&header)?;
        for (patient, attrs) in &self.rows {
            let mut row = vec![patient.as_str()];
            row.extend(self.strata.iter().map(|s| attrs.get(s).map(String::as_str).unwrap_or("")));
            wtr.write_record(&row)?;
        }
        wtr.flush().map_err(|e| DataError::Csv(e.into()))?;
        Ok(())
    }
}

/// Reads an attribute file, rejecting duplicate patients and undeclared
/// columns.
pub fn validate_attributes(path: &Path, declared_strata: &[String]) -> Result<AttributeMap, DataError> {
    let file = std::fs::File::open(path).map_err(|e| DataError::io(path, e))?;
    AttributeMap::read(std::io::BufReader::new(file), declared_strata)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn strata() -> Vec<String> {
        vec!["race_ethnicity".to_string()]
    }

    #[test]
    fn reads_three_patients() {
        let text = "patient_id,race_ethnicity\np1,A\np2,B\np3,A\n";
        let map = AttributeMap::read(text.as_bytes(), &strata()).unwrap();
        assert_eq!(map.len(), 3);
        assert_eq!(map.get("p2", "race_ethnicity"), "B");
    }

    #[test]
    fn absent_patient_reads_missing() {
        let map = AttributeMap::read("patient_id,race_ethnicity\np1,A\n".as_bytes(), &strata()).unwrap();
        assert_eq!(map.get("p9", "race_ethnicity"), MISSING_ATTRIBUTE);
    }

    #[test]
    fn duplicate_patient_rejected() {
        let err = AttributeMap::read("patient_id,race_ethnicity\np1,A\np1,B\n".as_bytes(), &strata()).unwrap_err();
        assert!(matches!(err, DataError::DuplicatePatient { line: 3, .. }));
    }

    #[test]
    fn undeclared_column_rejected() {
        let err = AttributeMap::read("patient_id,zip\np1,02139\n".as_bytes(), &strata()).unwrap_err();
        assert!(matches!(err, DataError::UndeclaredAttribute(c) if c == "zip"));
    }
}
