//! Closed-form metric predictions for the error model.
//!
//! For a single-valued variable with `K` known classes scored on class `c`,
//! with miss rate `m`, flip rate `f`, hallucination rate `h` and shift rate
//! `s` after stratum scaling:
//!
//! ```text
//! recall        = (1 - m)(1 - f)
//! precision     = pi * recall / (pi * recall + (1 - pi)(1 - m) f / (K - 1))
//! completeness  = kappa (1 - m) + (1 - kappa) h
//! date accuracy = 1 - s * max(0, D - tol) / D
//! ```
//!
//! where `pi` is the prevalence of `c` among patients with a known truth
//! value, `kappa` the share of the cohort with a known truth value, and
//! `D` the maximum date shift. Flips pick uniformly among the other known
//! classes, and shifts are uniform over the non-zero offsets in `±D`.

use serde::Serialize;

use super::ErrorModel;

/// Class structure of one variable in the truth.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClassProfile {
    pub n_known_classes: usize,
    pub prevalence: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExpectedMetrics {
    pub recall: f64,
    pub precision: Option<f64>,
    pub completeness: f64,
    pub date_accuracy: f64,
}

/// Predicted metrics of `variable` for a patient population whose strata
/// are given by `stratum_of`.
pub fn expected_metrics(
    model: &ErrorModel,
    variable: &str,
    stratum_of: impl Fn(&str) -> String,
    profile: ClassProfile,
    tolerance_days: u32,
) -> ExpectedMetrics {
    let r = model.rates_for(variable, stratum_of);
    let (m, f, h, s) = (r.miss_rate, r.flip_rate, r.hallucination_rate, r.date_shift_rate);
    let recall = (1.0 - m) * (1.0 - f);
    let pi = profile.prevalence;
    let false_pos = if profile.n_known_classes > 1 {
        (1.0 - pi) * (1.0 - m) * f / (profile.n_known_classes - 1) as f64
    } else {
        0.0
    };
    let true_pos = pi * recall;
    let precision = (true_pos + false_pos > 0.0).then(|| true_pos / (true_pos + false_pos));
    let completeness = profile.coverage * (1.0 - m) + (1.0 - profile.coverage) * h;
    let max = f64::from(r.date_shift_max_days);
    let tol = f64::from(tolerance_days);
    let date_accuracy = if max > tol { 1.0 - s * (max - tol) / max } else { 1.0 };
    ExpectedMetrics {
        recall,
        precision,
        completeness,
        date_accuracy,
    }
}

/// A derived value that is correct only when every component is correct,
/// with independent component errors.
pub fn expected_end_to_end_accuracy(component_accuracies: &[f64]) -> f64 {
    component_accuracies.iter().product()
}
