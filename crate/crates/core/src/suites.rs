//! Shipped schema and default check suite for breast cancer cohorts.

use crate::checks::{CheckError, CheckSuite};
use crate::model::Schema;

pub const BREAST_CANCER_SCHEMA: &str = include_str!("../suites/breast_cancer_schema.toml");
pub const BREAST_CANCER_SUITE: &str = include_str!("../suites/breast_cancer.toml");

pub fn breast_cancer_schema() -> Schema {
    Schema::from_toml_str(BREAST_CANCER_SCHEMA).expect("shipped schema is valid")
}

pub fn breast_cancer_suite(schema: &Schema) -> Result<CheckSuite, CheckError> {
    CheckSuite::from_toml_str(BREAST_CANCER_SUITE, schema)
}
