//! Validation engine for model-extracted longitudinal patient datasets.
//!
//! Three groups of evidence are produced from the same inputs:
//!
//! - variable-level performance of the model and of a human abstractor
//!   against a common reference standard ([`reference`], [`metrics`]);
//! - declarative patient- and cohort-level verification checks
//!   ([`checks`]);
//! - replication of cohort characteristics, survival outcomes and
//!   benchmark conclusions ([`replication`]).
//!
//! [`synth`] generates synthetic cohorts with known ground truth and
//! controlled error injection; [`pipeline`] wires everything into one run
//! driven by a configuration file.

pub mod checks;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod reference;
pub mod replication;
pub mod seed;
pub mod suites;
pub mod synth;
