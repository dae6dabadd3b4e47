//! Patient-level check expressions: syntax tree, parser, printer and type
//! checker.
//!
//! ```text
//! expr       = implies ;
//! implies    = or [ "implies" implies ] ;
//! or         = and { "or" and } ;
//! and        = unary { "and" unary } ;
//! unary      = "not" unary | comparison ;
//! comparison = term [ cmp_op term
//!                   | "before" term | "after" term
//!                   | "within" DURATION "of" term
//!                   | "in" "[" literal "," literal "]" ] ;
//! term       = "(" expr ")" | "exists" "(" IDENT ")" | "known" "(" IDENT ")"
//!            | "value" "(" IDENT ")" | "date" "(" IDENT ")"
//!            | "days_between" "(" term "," term ")" | literal ;
//! cmp_op     = "=" | "!=" | "<" | "<=" | ">" | ">=" | "≠" | "≤" | "≥" ;
//! literal    = STRING | NUMBER | DATE | DURATION ;
//! ```
//!
//! Strings are single-quoted, dates are `YYYY-MM-DD`, durations are `Nd`.
//! A comparison without an operator must be boolean (`exists`, `known` or a
//! parenthesised expression).

use std::fmt;

use chrono::NaiveDate;

use super::CheckError;
use crate::model::{Schema, Value, VariableKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Before,
    After,
}

impl CmpOp {
    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "=",
            CmpOp::Ne => "!=",
            CmpOp::Lt => "<",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Ge => ">=",
            CmpOp::Before => "before",
            CmpOp::After => "after",
        }
    }

    pub(crate) fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Ne => ord != Equal,
            CmpOp::Lt | CmpOp::Before => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt | CmpOp::After => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Literal {
    Str(String),
    Number(f64),
    Date(NaiveDate),
    /// Days.
    Duration(i64),
}

impl fmt::Display for Literal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Literal::Str(s) => write!(f, "'{s}'"),
            Literal::Number(x) => write!(f, "{x}"),
            Literal::Date(d) => write!(f, "{}", d.format("%Y-%m-%d")),
            Literal::Duration(n) => write!(f, "{n}d"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Term {
    Value(String),
    Date(String),
    /// `b − a` in days.
    DaysBetween(Box<Term>, Box<Term>),
    Lit(Literal),
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Value(v) => write!(f, "value({v})"),
            Term::Date(v) => write!(f, "date({v})"),
            Term::DaysBetween(a, b) => write!(f, "days_between({a}, {b})"),
            Term::Lit(l) => write!(f, "{l}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    Exists(String),
    Known(String),
    Compare {
        op: CmpOp,
        lhs: Term,
        rhs: Term,
    },
    /// `|rhs − lhs| ≤ days`.
    Within {
        lhs: Term,
        days: i64,
        rhs: Term,
    },
    InRange {
        term: Term,
        lo: Literal,
        hi: Literal,
    },
    Not(Box<Expr>),
    And(Box<Expr>, Box<Expr>),
    Or(Box<Expr>, Box<Expr>),
    Implies(Box<Expr>, Box<Expr>),
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Exists(v) => write!(f, "exists({v})"),
            Expr::Known(v) => write!(f, "known({v})"),
            Expr::Compare { op, lhs, rhs } => write!(f, "{lhs} {} {rhs}", op.symbol()),
            Expr::Within { lhs, days, rhs } => write!(f, "{lhs} within {days}d of {rhs}"),
            Expr::InRange { term, lo, hi } => write!(f, "{term} in [{lo}, {hi}]"),
            Expr::Not(e) => write!(f, "not ({e})"),
            Expr::And(a, b) => write!(f, "({a} and {b})"),
            Expr::Or(a, b) => write!(f, "({a} or {b})"),
            Expr::Implies(a, b) => write!(f, "({a} implies {b})"),
        }
    }
}

impl Expr {
    /// Variables referenced anywhere in the expression, in first-use order.
    pub fn variables(&self) -> Vec<&str> {
        fn term<'a>(t: &'a Term, out: &mut Vec<&'a str>) {
            match t {
                Term::Value(v) | Term::Date(v) => push(v, out),
                Term::DaysBetween(a, b) => {
                    term(a, out);
                    term(b, out);
                }
                Term::Lit(_) => {}
            }
        }
        fn push<'a>(v: &'a str, out: &mut Vec<&'a str>) {
            if !out.contains(&v) {
                out.push(v);
            }
        }
        fn walk<'a>(e: &'a Expr, out: &mut Vec<&'a str>) {
            match e {
                Expr::Exists(v) | Expr::Known(v) => push(v, out),
                Expr::Compare { lhs, rhs, .. } | Expr::Within { lhs, rhs, .. } => {
                    term(lhs, out);
                    term(rhs, out);
                }
                Expr::InRange { term: t, .. } => term(t, out),
                Expr::Not(a) => walk(a, out),
                Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) => {
                    walk(a, out);
                    walk(b, out);
                }
            }
        }
        let mut out = Vec::new();
        walk(self, &mut out);
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Str(String),
    Number(f64),
    Date(NaiveDate),
    Duration(i64),
    Op(CmpOp),
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Str(s) => write!(f, "'{s}'"),
            Tok::Number(x) => write!(f, "{x}"),
            Tok::Date(d) => write!(f, "{d}"),
            Tok::Duration(n) => write!(f, "{n}d"),
            Tok::Op(op) => write!(f, "`{}`", op.symbol()),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::Comma => f.write_str("`,`"),
        }
    }
}

/// Tokens with their 1-based character column.
fn lex(text: &str) -> Result<Vec<(Tok, usize)>, CheckError> {
    let chars: Vec<char> = text.chars().collect();
    let err = |pos: usize, message: String| CheckError::Syntax { position: pos + 1, message };
    let mut out = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        let start = i;
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        let tok = match c {
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '[' => Tok::LBracket,
            ']' => Tok::RBracket,
            ',' => Tok::Comma,
            '=' => Tok::Op(CmpOp::Eq),
            '≠' => Tok::Op(CmpOp::Ne),
            '≤' => Tok::Op(CmpOp::Le),
            '≥' => Tok::Op(CmpOp::Ge),
            '!' if chars.get(i + 1) == Some(&'=') => {
                i += 1;
                Tok::Op(CmpOp::Ne)
            }
            '<' | '>' => {
                let eq = chars.get(i + 1) == Some(&'=');
                if eq {
                    i += 1;
                }
                Tok::Op(match (c, eq) {
                    ('<', false) => CmpOp::Lt,
                    ('<', true) => CmpOp::Le,
                    (_, false) => CmpOp::Gt,
                    (_, true) => CmpOp::Ge,
                })
            }
            '\'' => {
                let close = chars[i + 1..]
                    .iter()
                    .position(|&ch| ch == '\'')
                    .ok_or_else(|| err(start, "unterminated string literal".into()))?;
                let s: String = chars[i + 1..i + 1 + close].iter().collect();
                i += close + 1;
                Tok::Str(s)
            }
            c if c.is_ascii_digit() || (c == '-' && chars.get(i + 1).is_some_and(char::is_ascii_digit)) => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_ascii_alphanumeric() || chars[j] == '-' || chars[j] == '.') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                i = j - 1;
                if let Some(days) = word.strip_suffix('d') {
                    Tok::Duration(days.parse().map_err(|_| err(start, format!("malformed duration `{word}`")))?)
                } else if word.len() == 10 && word.as_bytes()[4] == b'-' && word.as_bytes()[7] == b'-' {
                    Tok::Date(NaiveDate::parse_from_str(&word, "%Y-%m-%d").map_err(|_| err(start, format!("invalid date `{word}`")))?)
                } else {
                    Tok::Number(
                        word.parse::<f64>()
                            .ok()
                            .filter(|x| x.is_finite())
                            .ok_or_else(|| err(start, format!("malformed number `{word}`")))?,
                    )
                }
            }
            c if c.is_alphabetic() || c == '_' => {
                let mut j = i + 1;
                while j < chars.len() && (chars[j].is_alphanumeric() || chars[j] == '_') {
                    j += 1;
                }
                let word: String = chars[i..j].iter().collect();
                i = j - 1;
                match word.as_str() {
                    "before" => Tok::Op(CmpOp::Before),
                    "after" => Tok::Op(CmpOp::After),
                    _ => Tok::Ident(word),
                }
            }
            other => return Err(err(start, format!("unexpected character `{other}`"))),
        };
        out.push((tok, start + 1));
        i += 1;
    }
    Ok(out)
}

struct Parser {
    toks: Vec<(Tok, usize)>,
    pos: usize,
    end: usize,
}

enum Operand {
    Bool(Expr),
    Term(Term),
}

impl Parser {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(t, _)| t)
    }

    fn column(&self) -> usize {
        self.toks.get(self.pos).map(|(_, c)| *c).unwrap_or(self.end)
    }

    fn fail<T>(&self, message: impl Into<String>) -> Result<T, CheckError> {
        Err(CheckError::Syntax {
            position: self.column(),
            message: message.into(),
        })
    }

    fn found(&self) -> String {
        match self.peek() {
            Some(t) => t.to_string(),
            None => "end of input".into(),
        }
    }

    fn keyword(&mut self, kw: &str) -> bool {
        if matches!(self.peek(), Some(Tok::Ident(w)) if w == kw) {
            self.pos += 1;
            true
        } else {
            false
        }
    }

    fn expect(&mut self, tok: Tok) -> Result<(), CheckError> {
        if self.peek() == Some(&tok) {
            self.pos += 1;
            Ok(())
        } else {
            self.fail(format!("expected {tok}, found {}", self.found()))
        }
    }

    fn ident(&mut self) -> Result<String, CheckError> {
        match self.peek() {
            Some(Tok::Ident(w)) if !is_reserved(w) => {
                let w = w.clone();
                self.pos += 1;
                Ok(w)
            }
            _ => self.fail(format!("expected a variable name, found {}", self.found())),
        }
    }

    fn implies(&mut self) -> Result<Expr, CheckError> {
        let lhs = self.or()?;
        if self.keyword("implies") {
            let rhs = self.implies()?;
            return Ok(Expr::Implies(Box::new(lhs), Box::new(rhs)));
        }
        Ok(lhs)
    }

    fn or(&mut self) -> Result<Expr, CheckError> {
        let mut lhs = self.and()?;
        while self.keyword("or") {
            lhs = Expr::Or(Box::new(lhs), Box::new(self.and()?));
        }
        Ok(lhs)
    }

    fn and(&mut self) -> Result<Expr, CheckError> {
        let mut lhs = self.unary()?;
        while self.keyword("and") {
            lhs = Expr::And(Box::new(lhs), Box::new(self.unary()?));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Expr, CheckError> {
        if self.keyword("not") {
            return Ok(Expr::Not(Box::new(self.unary()?)));
        }
        self.comparison()
    }

    fn comparison(&mut self) -> Result<Expr, CheckError> {
        let lhs = self.operand()?;
        let op = match self.peek() {
            Some(Tok::Op(op)) => Some(*op),
            _ => None,
        };
        if let Some(op) = op {
            let lhs = self.as_term(lhs)?;
            self.pos += 1;
            let rhs = self.term()?;
            return Ok(Expr::Compare { op, lhs, rhs });
        }
        if self.keyword("within") {
            let lhs = self.as_term(lhs)?;
            let days = match self.peek() {
                Some(Tok::Duration(n)) if *n >= 0 => *n,
                _ => return self.fail(format!("expected a non-negative duration such as 30d, found {}", self.found())),
            };
            self.pos += 1;
            if !self.keyword("of") {
                return self.fail(format!("expected `of`, found {}", self.found()));
            }
            let rhs = self.term()?;
            return Ok(Expr::Within { lhs, days, rhs });
        }
        if self.keyword("in") {
            let term = self.as_term(lhs)?;
            self.expect(Tok::LBracket)?;
            let lo = self.literal()?;
            self.expect(Tok::Comma)?;
            let hi = self.literal()?;
            self.expect(Tok::RBracket)?;
            return Ok(Expr::InRange { term, lo, hi });
        }
        match lhs {
            Operand::Bool(e) => Ok(e),
            Operand::Term(t) => self.fail(format!("`{t}` is not a condition; expected a comparison operator, found {}", self.found())),
        }
    }

    fn as_term(&self, op: Operand) -> Result<Term, CheckError> {
        match op {
            Operand::Term(t) => Ok(t),
            Operand::Bool(e) => self.fail(format!("condition `{e}` cannot be compared")),
        }
    }

    fn term(&mut self) -> Result<Term, CheckError> {
        let op = self.operand()?;
        self.as_term(op)
    }

    fn literal(&mut self) -> Result<Literal, CheckError> {
        let lit = match self.peek() {
            Some(Tok::Str(s)) => Literal::Str(s.clone()),
            Some(Tok::Number(x)) => Literal::Number(*x),
            Some(Tok::Date(d)) => Literal::Date(*d),
            Some(Tok::Duration(n)) => Literal::Duration(*n),
            _ => return self.fail(format!("expected a literal, found {}", self.found())),
        };
        self.pos += 1;
        Ok(lit)
    }

    fn call_arg(&mut self) -> Result<String, CheckError> {
        self.expect(Tok::LParen)?;
        let name = self.ident()?;
        self.expect(Tok::RParen)?;
        Ok(name)
    }

    fn operand(&mut self) -> Result<Operand, CheckError> {
        match self.peek() {
            Some(Tok::LParen) => {
                self.pos += 1;
                let e = self.implies()?;
                self.expect(Tok::RParen)?;
                Ok(Operand::Bool(e))
            }
            Some(Tok::Ident(w)) => {
                let w = w.clone();
                self.pos += 1;
                match w.as_str() {
                    "exists" => Ok(Operand::Bool(Expr::Exists(self.call_arg()?))),
                    "known" => Ok(Operand::Bool(Expr::Known(self.call_arg()?))),
                    "value" => Ok(Operand::Term(Term::Value(self.call_arg()?))),
                    "date" => Ok(Operand::Term(Term::Date(self.call_arg()?))),
                    "days_between" => {
                        self.expect(Tok::LParen)?;
                        let a = self.term()?;
                        self.expect(Tok::Comma)?;
                        let b = self.term()?;
                        self.expect(Tok::RParen)?;
                        Ok(Operand::Term(Term::DaysBetween(Box::new(a), Box::new(b))))
                    }
                    _ => {
                        self.pos -= 1;
                        self.fail(format!(
                            "expected value(..), date(..), exists(..), known(..), days_between(..) or a literal, found `{w}`"
                        ))
                    }
                }
            }
            _ => Ok(Operand::Term(Term::Lit(self.literal()?))),
        }
    }
}

fn is_reserved(w: &str) -> bool {
    matches!(
        w,
        "and" | "or" | "not" | "implies" | "within" | "of" | "in" | "before" | "after" | "value" | "date" | "exists" | "known" | "days_between"
    )
}

/// Parses an expression without consulting a schema.
pub fn parse_expr(text: &str) -> Result<Expr, CheckError> {
    let toks = lex(text)?;
    let mut p = Parser {
        toks,
        pos: 0,
        end: text.chars().count() + 1,
    };
    let e = p.implies()?;
    if p.pos < p.toks.len() {
        return p.fail(format!("unexpected {} after complete expression", p.found()));
    }
    Ok(e)
}

/// Parses and type-checks an expression against a schema.
pub fn parse_check(text: &str, schema: &Schema) -> Result<Expr, CheckError> {
    let e = parse_expr(text)?;
    typecheck(&e, schema)?;
    Ok(e)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Ty {
    Category,
    Number,
    Date,
    Duration,
}

impl fmt::Display for Ty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ty::Category => "category",
            Ty::Number => "number",
            Ty::Date => "date",
            Ty::Duration => "duration",
        })
    }
}

fn lit_ty(l: &Literal) -> Ty {
    match l {
        Literal::Str(_) => Ty::Category,
        Literal::Number(_) => Ty::Number,
        Literal::Date(_) => Ty::Date,
        Literal::Duration(_) => Ty::Duration,
    }
}

fn type_error<T>(message: String) -> Result<T, CheckError> {
    Err(CheckError::Type(message))
}

fn term_ty(t: &Term, schema: &Schema) -> Result<Ty, CheckError> {
    match t {
        Term::Value(v) => {
            let spec = schema.get(v).ok_or_else(|| CheckError::UnknownVariable(v.clone()))?;
            Ok(if spec.kind == VariableKind::Numeric { Ty::Number } else { Ty::Category })
        }
        Term::Date(v) => {
            let spec = schema.get(v).ok_or_else(|| CheckError::UnknownVariable(v.clone()))?;
            if !spec.is_dated() {
                return type_error(format!("`{v}` carries no dates; date({v}) is not allowed"));
            }
            Ok(Ty::Date)
        }
        Term::DaysBetween(a, b) => {
            for x in [a, b] {
                if term_ty(x, schema)? != Ty::Date {
                    return type_error(format!("days_between needs dates, got `{x}`"));
                }
            }
            Ok(Ty::Duration)
        }
        Term::Lit(l) => Ok(lit_ty(l)),
    }
}

/// Category literals compared with `value(v)` must be allowed values of v.
fn check_category(t: &Term, other: &Term, schema: &Schema) -> Result<(), CheckError> {
    if let (Term::Value(v), Term::Lit(Literal::Str(s))) = (t, other) {
        let spec = schema.get(v).ok_or_else(|| CheckError::UnknownVariable(v.clone()))?;
        if spec.conform(&Value::category(s)).is_err() {
            return type_error(format!("'{s}' is not an allowed value of `{v}`"));
        }
    }
    Ok(())
}

fn typecheck(e: &Expr, schema: &Schema) -> Result<(), CheckError> {
    match e {
        Expr::Exists(v) | Expr::Known(v) => {
            schema.get(v).ok_or_else(|| CheckError::UnknownVariable(v.clone()))?;
            Ok(())
        }
        Expr::Compare { op, lhs, rhs } => {
            let (a, b) = (term_ty(lhs, schema)?, term_ty(rhs, schema)?);
            if a != b {
                return type_error(format!("cannot compare {a} `{lhs}` with {b} `{rhs}`"));
            }
            if matches!(op, CmpOp::Before | CmpOp::After) && a != Ty::Date {
                return type_error(format!("`{}` needs dates, got {a}", op.symbol()));
            }
            if a == Ty::Category && !matches!(op, CmpOp::Eq | CmpOp::Ne) {
                return type_error(format!("categories support only = and !=, got `{}`", op.symbol()));
            }
            if matches!(lhs, Term::Lit(_)) && matches!(rhs, Term::Lit(_)) {
                return type_error(format!("comparison `{e}` references no variable"));
            }
            check_category(lhs, rhs, schema)?;
            check_category(rhs, lhs, schema)
        }
        Expr::Within { lhs, rhs, .. } => {
            for t in [lhs, rhs] {
                if term_ty(t, schema)? != Ty::Date {
                    return type_error(format!("`within` needs dates, got `{t}`"));
                }
            }
            Ok(())
        }
        Expr::InRange { term, lo, hi } => {
            let t = term_ty(term, schema)?;
            if t == Ty::Category {
                return type_error(format!("ranges need ordered values, `{term}` is a category"));
            }
            for l in [lo, hi] {
                if lit_ty(l) != t {
                    return type_error(format!("range bound {l} does not match {t} `{term}`"));
                }
            }
            Ok(())
        }
        Expr::Not(a) => typecheck(a, schema),
        Expr::And(a, b) | Expr::Or(a, b) | Expr::Implies(a, b) => {
            typecheck(a, schema)?;
            typecheck(b, schema)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::VariableSpec;
    use proptest::prelude::*;

    fn schema() -> Schema {
        Schema::new([
            VariableSpec::dated("surgery", &["yes", "no", "unknown"], Some("unknown")),
            VariableSpec::dated("initial_dx", &["yes"], None),
            VariableSpec::dated("radiation", &["yes", "no"], None),
            VariableSpec::event_list("gBRCA1", &["positive", "negative", "unknown"], Some("unknown")),
            VariableSpec::categorical("stage", &["I", "II", "III", "IV", "unknown"], Some("unknown")),
            VariableSpec::numeric("age"),
        ])
        .unwrap()
    }

    #[test]
    fn temporal_comparison() {
        let e = parse_check("date(surgery) after date(initial_dx)", &schema()).unwrap();
        assert_eq!(
            e,
            Expr::Compare {
                op: CmpOp::After,
                lhs: Term::Date("surgery".into()),
                rhs: Term::Date("initial_dx".into())
            }
        );
    }

    #[test]
    fn contradiction_over_event_list() {
        let e = parse_check("value(gBRCA1) = 'positive' and value(gBRCA1) = 'negative'", &schema()).unwrap();
        assert!(matches!(e, Expr::And(..)));
    }

    #[test]
    fn unmatched_parenthesis_reports_position() {
        let err = parse_expr("date(radiation before surgery").unwrap_err();
        match err {
            CheckError::Syntax { position, message } => {
                assert_eq!(position, 16, "{message}");
                assert!(message.contains("expected `)`"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn precedence_and_associativity() {
        let e = parse_expr("exists(a) or exists(b) and not exists(c) implies exists(d) implies exists(e)").unwrap();
        assert_eq!(
            e.to_string(),
            "((exists(a) or (exists(b) and not (exists(c)))) implies (exists(d) implies exists(e)))"
        );
    }

    #[test]
    fn all_operator_forms_parse() {
        let s = schema();
        for text in [
            "value(stage) != 'IV'",
            "value(stage) ≠ 'IV'",
            "value(age) >= 18 and value(age) ≤ 120.5",
            "date(surgery) within 30d of date(initial_dx)",
            "days_between(date(initial_dx), date(surgery)) in [0d, 180d]",
            "date(surgery) < 2020-01-01",
            "not known(stage) or exists(radiation)",
        ] {
            parse_check(text, &s).unwrap_or_else(|e| panic!("{text}: {e}"));
        }
    }

    #[test]
    fn type_errors() {
        let s = schema();
        let bad = [
            ("date(surgery) = 'yes'", "compare"),
            ("value(stage) = 'V'", "allowed"),
            ("value(stage) < 'IV'", "only"),
            ("date(stage) > 2020-01-01", "carries no dates"),
            ("value(nope) = 'x'", "nope"),
            ("value(age) in [0d, 5d]", "range bound"),
        ];
        for (text, needle) in bad {
            let err = parse_check(text, &s).unwrap_err().to_string();
            assert!(err.contains(needle), "{text}: {err}");
        }
    }

    #[test]
    fn syntax_errors() {
        for text in [
            "",
            "value(stage) =",
            "value(stage)",
            "exists(stage) exists(stage)",
            "'unterminated",
            "date(and) > 2020-01-01",
        ] {
            assert!(matches!(parse_expr(text), Err(CheckError::Syntax { .. })), "{text}");
        }
    }

    #[test]
    fn variables_in_first_use_order() {
        let e = parse_expr("date(b) > date(a) and exists(b) or known(c)").unwrap();
        assert_eq!(e.variables(), vec!["b", "a", "c"]);
    }

    fn arb_literal() -> impl Strategy<Value = Literal> {
        prop_oneof![
            "[a-z]{1,5}".prop_map(Literal::Str),
            (-1000i32..1000).prop_map(|x| Literal::Number(f64::from(x) / 4.0)),
            (0i64..20000).prop_map(|d| Literal::Date(NaiveDate::from_ymd_opt(1990, 1, 1).unwrap() + chrono::Duration::days(d))),
            (0i64..500).prop_map(Literal::Duration),
        ]
    }

    fn arb_term() -> impl Strategy<Value = Term> {
        let leaf = prop_oneof![
            "[a-z][a-z0-9_]{0,4}".prop_filter("reserved", |s| !is_reserved(s)).prop_map(Term::Value),
            "[a-z][a-z0-9_]{0,4}".prop_filter("reserved", |s| !is_reserved(s)).prop_map(Term::Date),
            arb_literal().prop_map(Term::Lit),
        ];
        leaf.prop_recursive(2, 4, 2, |inner| {
            (inner.clone(), inner).prop_map(|(a, b)| Term::DaysBetween(Box::new(a), Box::new(b)))
        })
    }

    fn arb_op() -> impl Strategy<Value = CmpOp> {
        prop_oneof![
            Just(CmpOp::Eq),
            Just(CmpOp::Ne),
            Just(CmpOp::Lt),
            Just(CmpOp::Le),
            Just(CmpOp::Gt),
            Just(CmpOp::Ge),
            Just(CmpOp::Before),
            Just(CmpOp::After)
        ]
    }

    fn arb_expr() -> impl Strategy<Value = Expr> {
        let ident = || "[a-z][a-z0-9_]{0,4}".prop_filter("reserved", |s| !is_reserved(s));
        let leaf = prop_oneof![
            ident().prop_map(Expr::Exists),
            ident().prop_map(Expr::Known),
            (arb_op(), arb_term(), arb_term()).prop_map(|(op, lhs, rhs)| Expr::Compare { op, lhs, rhs }),
            (arb_term(), 0i64..400, arb_term()).prop_map(|(lhs, days, rhs)| Expr::Within { lhs, days, rhs }),
            (arb_term(), arb_literal(), arb_literal()).prop_map(|(term, lo, hi)| Expr::InRange { term, lo, hi }),
        ];
        leaf.prop_recursive(4, 24, 2, |inner| {
            prop_oneof![
                inner.clone().prop_map(|e| Expr::Not(Box::new(e))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::And(Box::new(a), Box::new(b))),
                (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Or(Box::new(a), Box::new(b))),
                (inner.clone(), inner).prop_map(|(a, b)| Expr::Implies(Box::new(a), Box::new(b))),
            ]
        })
    }

    proptest! {
        #[test]
        fn print_then_parse_is_identity(e in arb_expr()) {
            let printed = e.to_string();
            let reparsed = parse_expr(&printed).unwrap();
            prop_assert_eq!(&reparsed, &e);
            prop_assert_eq!(reparsed.to_string(), printed);
        }
    }
}
