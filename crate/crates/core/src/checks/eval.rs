//! Three-valued evaluation of check expressions over one patient.
//!
//! A term evaluates to the list of its known candidate values: one for a
//! single-valued field, one per event for an event list, none when the
//! field is missing or documented as unknown. A comparison is true if any
//! combination of candidates satisfies it, false if at least one
//! combination exists and none does, and indeterminate otherwise.
//! Connectives follow Kleene's strong three-valued logic.

use std::cmp::Ordering;

use chrono::NaiveDate;
use serde::Serialize;

use super::expr::{Expr, Literal, Term};
use crate::model::{PatientView, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Pass,
    Fail,
    NotApplicable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Truth {
    True,
    False,
    Unknown,
}

impl Truth {
    fn not(self) -> Truth {
        match self {
            Truth::True => Truth::False,
            Truth::False => Truth::True,
            Truth::Unknown => Truth::Unknown,
        }
    }

    fn and(self, o: Truth) -> Truth {
        match (self, o) {
            (Truth::False, _) | (_, Truth::False) => Truth::False,
            (Truth::True, Truth::True) => Truth::True,
            _ => Truth::Unknown,
        }
    }

    fn or(self, o: Truth) -> Truth {
        self.not().and(o.not()).not()
    }

    fn from_bool(b: bool) -> Truth {
        if b {
            Truth::True
        } else {
            Truth::False
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Scalar {
    Cat(String),
    Num(f64),
    Date(NaiveDate),
    Days(i64),
}

impl Scalar {
    fn cmp(&self, other: &Scalar) -> Option<Ordering> {
        match (self, other) {
            (Scalar::Cat(a), Scalar::Cat(b)) => Some(a.cmp(b)),
            (Scalar::Num(a), Scalar::Num(b)) => a.partial_cmp(b),
            (Scalar::Date(a), Scalar::Date(b)) => Some(a.cmp(b)),
            (Scalar::Days(a), Scalar::Days(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }
}

fn literal(l: &Literal) -> Scalar {
    match l {
        Literal::Str(s) => Scalar::Cat(s.clone()),
        Literal::Number(x) => Scalar::Num(*x),
        Literal::Date(d) => Scalar::Date(*d),
        Literal::Duration(n) => Scalar::Days(*n),
    }
}

fn candidates(t: &Term, view: &PatientView) -> Vec<Scalar> {
    let known = |v: &str| {
        view.get(v)
            .map(|f| f.observations().iter().filter(|o| o.known).cloned().collect::<Vec<_>>())
            .unwrap_or_default()
    };
    match t {
        Term::Value(v) => known(v)
            .into_iter()
            .map(|o| match o.value {
                Value::Number(x) => Scalar::Num(x),
                Value::Category(c) => Scalar::Cat(c),
            })
            .collect(),
        Term::Date(v) => known(v).into_iter().filter_map(|o| o.date).map(Scalar::Date).collect(),
        Term::DaysBetween(a, b) => {
            let (xs, ys) = (candidates(a, view), candidates(b, view));
            let mut out = Vec::with_capacity(xs.len() * ys.len());
            for x in &xs {
                for y in &ys {
                    if let (Scalar::Date(x), Scalar::Date(y)) = (x, y) {
                        out.push(Scalar::Days((*y - *x).num_days()));
                    }
                }
            }
            out
        }
        Term::Lit(l) => vec![literal(l)],
    }
}

fn exists_pair(lhs: &[Scalar], rhs: &[Scalar], pred: impl Fn(&Scalar, &Scalar) -> Option<bool>) -> Truth {
    let mut comparable = false;
    for a in lhs {
        for b in rhs {
            match pred(a, b) {
                Some(true) => return Truth::True,
                Some(false) => comparable = true,
                None => {}
            }
        }
    }
    if comparable {
        Truth::False
    } else {
        Truth::Unknown
    }
}

fn truth(e: &Expr, view: &PatientView) -> Truth {
    match e {
        Expr::Exists(v) => Truth::from_bool(view.get(v).is_some_and(|f| !f.observations().is_empty())),
        Expr::Known(v) => Truth::from_bool(view.get(v).is_some_and(|f| f.observations().iter().any(|o| o.known))),
        Expr::Compare { op, lhs, rhs } => exists_pair(&candidates(lhs, view), &candidates(rhs, view), |a, b| a.cmp(b).map(|o| op.holds(o))),
        Expr::Within { lhs, days, rhs } => exists_pair(&candidates(lhs, view), &candidates(rhs, view), |a, b| match (a, b) {
            (Scalar::Date(a), Scalar::Date(b)) => Some((*b - *a).num_days().abs() <= *days),
            _ => None,
        }),
        Expr::InRange { term, lo, hi } => {
            let (lo, hi) = (literal(lo), literal(hi));
            let xs = candidates(term, view);
            exists_pair(&xs, std::slice::from_ref(&lo), |x, _| {
                Some(lo.cmp(x)? != Ordering::Greater && x.cmp(&hi)? != Ordering::Greater)
            })
        }
        Expr::Not(a) => truth(a, view).not(),
        Expr::And(a, b) => truth(a, view).and(truth(b, view)),
        Expr::Or(a, b) => truth(a, view).or(truth(b, view)),
        Expr::Implies(a, b) => truth(a, view).not().or(truth(b, view)),
    }
}

/// Pass, fail, or not applicable when the data cannot settle the check.
pub fn evaluate_patient_check(expr: &Expr, view: &PatientView) -> Outcome {
    match truth(expr, view) {
        Truth::True => Outcome::Pass,
        Truth::False => Outcome::Fail,
        Truth::Unknown => Outcome::NotApplicable,
    }
}

/// Compact description of the fields an expression reads, for findings.
pub fn describe_fields(expr: &Expr, view: &PatientView) -> String {
    let one = |o: &crate::model::Observation| match o.date {
        Some(d) => format!("{}@{}", o.value, d.format("%Y-%m-%d")),
        None => o.value.to_string(),
    };
    expr.variables()
        .into_iter()
        .map(|v| match view.get(v) {
            None => format!("{v}=missing"),
            Some(crate::model::Field::Single(o)) => format!("{v}={}", one(o)),
            Some(crate::model::Field::Events(evs)) => {
                format!("{v}=[{}]", evs.iter().map(one).collect::<Vec<_>>().join(", "))
            }
        })
        .collect::<Vec<_>>()
        .join("; ")
}
