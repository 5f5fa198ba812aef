// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! The query annotation language.
//!
//! ```text
//! filter="@3 between(1999-01-01,2000-01-01) and @1 =(172.101.11.46)", projection={@1,@4}
//! ```
//!
//! Both parts are optional and may appear in either order. The whole text
//! may be wrapped in `@HailQuery( ... )`. Literals may be single-quoted,
//! which is needed for VARCHAR literals containing `,` or `)`.

use std::fmt;

use super::QueryError;
use crate::schema::{Record, Schema, Value};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum RawOp {
    Eq(String),
    Between(String, String),
    Ge(String),
    Le(String),
}

/// One conjunct as written, before literals are typed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawPredicate {
    pub position: usize,
    pub op: RawOp,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QueryAnnotation {
    /// Conjunction; empty means no filter.
    pub filter: Vec<RawPredicate>,
    /// Empty means all attributes.
    pub projection: Vec<usize>,
}

fn quote(lit: &str) -> String {
    if lit.is_empty() || lit.contains([',', '(', ')', '\'', '"', ' ']) {
        format!("'{}'", lit.replace('\'', "''"))
    } else {
        lit.to_owned()
    }
}

impl fmt::Display for RawPredicate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "@{} ", self.position)?;
        match &self.op {
            RawOp::Eq(v) => write!(f, "=({})", quote(v)),
            RawOp::Ge(v) => write!(f, ">=({})", quote(v)),
            RawOp::Le(v) => write!(f, "<=({})", quote(v)),
            RawOp::Between(a, b) => write!(f, "between({},{})", quote(a), quote(b)),
        }
    }
}

impl fmt::Display for QueryAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if !self.filter.is_empty() {
            let conj: Vec<String> = self.filter.iter().map(|p| p.to_string()).collect();
            parts.push(format!("filter=\"{}\"", conj.join(" and ")));
        }
        if !self.projection.is_empty() {
            let attrs: Vec<String> = self.projection.iter().map(|p| format!("@{p}")).collect();
            parts.push(format!("projection={{{}}}", attrs.join(",")));
        }
        f.write_str(&parts.join(", "))
    }
}

struct Cursor<'a> {
    s: &'a str,
    at: usize,
}

impl<'a> Cursor<'a> {
    fn rest(&self) -> &'a str {
        &self.s[self.at..]
    }

    fn skip_ws(&mut self) {
        let trimmed = self.rest().trim_start();
        self.at = self.s.len() - trimmed.len();
    }

    fn eat(&mut self, token: &str) -> bool {
        self.skip_ws();
        if self.rest().starts_with(token) {
            self.at += token.len();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, token: &str) -> Result<(), QueryError> {
        if self.eat(token) {
            Ok(())
        } else {
            Err(self.error(&format!("expected '{token}'")))
        }
    }

    fn error(&self, what: &str) -> QueryError {
        QueryError::Syntax(format!("{what} at offset {}", self.at))
    }

    fn is_done(&mut self) -> bool {
        self.skip_ws();
        self.at == self.s.len()
    }

    fn position(&mut self) -> Result<usize, QueryError> {
        self.expect("@")?;
        let digits = self.rest().bytes().take_while(u8::is_ascii_digit).count();
        if digits == 0 {
            return Err(self.error("expected attribute position"));
        }
        let n = self.rest()[..digits]
            .parse()
            .map_err(|_| self.error("attribute position too large"))?;
        self.at += digits;
        Ok(n)
    }

    /// A bare literal runs to the next `,` or `)`; a quoted one to the
    /// closing quote, with `''` as an escaped quote.
    fn literal(&mut self) -> Result<String, QueryError> {
        self.skip_ws();
        if self.rest().starts_with('\'') {
            self.at += 1;
            let mut out = String::new();
            loop {
                let Some(c) = self.rest().chars().next() else {
                    return Err(self.error("unterminated quoted literal"));
                };
                self.at += c.len_utf8();
                if c == '\'' {
                    if self.rest().starts_with('\'') {
                        self.at += 1;
                        out.push('\'');
                    } else {
                        return Ok(out);
                    }
                } else {
                    out.push(c);
                }
            }
        }
        let len = self.rest().find([',', ')']).unwrap_or(self.rest().len());
        let lit = self.rest()[..len].trim().to_owned();
        self.at += len;
        Ok(lit)
    }

    fn predicate(&mut self) -> Result<RawPredicate, QueryError> {
        let position = self.position()?;
        self.skip_ws();
        let op = if self.eat(">=") {
            ">="
        } else if self.eat("<=") {
            "<="
        } else if self.eat("=") {
            "="
        } else if self.rest().get(..7).is_some_and(|w| w.eq_ignore_ascii_case("between")) {
            self.at += 7;
            "between"
        } else {
            return Err(self.error("expected one of =, >=, <=, between"));
        };
        self.expect("(")?;
        let first = self.literal()?;
        let op = if op == "between" {
            self.expect(",")?;
            let second = self.literal()?;
            RawOp::Between(first, second)
        } else {
            match op {
                "=" => RawOp::Eq(first),
                ">=" => RawOp::Ge(first),
                _ => RawOp::Le(first),
            }
        };
        self.expect(")")?;
        Ok(RawPredicate { position, op })
    }

    fn and(&mut self) -> bool {
        self.skip_ws();
        let r = self.rest();
        if r.len() > 3 && r[..3].eq_ignore_ascii_case("and") && r[3..].starts_with(char::is_whitespace) {
            self.at += 3;
            true
        } else {
            false
        }
    }
}

fn parse_filter(text: &str) -> Result<Vec<RawPredicate>, QueryError> {
    let mut c = Cursor { s: text, at: 0 };
    let mut out = Vec::new();
    if c.is_done() {
        return Ok(out);
    }
    loop {
        out.push(c.predicate()?);
        if c.is_done() {
            return Ok(out);
        }
        if !c.and() {
            return Err(c.error("expected 'and'"));
        }
    }
}

/// Parses annotation text. Positions are checked later by [`QueryAnnotation::bind`].
pub fn parse_annotation(text: &str) -> Result<QueryAnnotation, QueryError> {
    let mut body = text.trim();
    if let Some(inner) = body.strip_prefix("@HailQuery") {
        body = inner
            .trim()
            .strip_prefix('(')
            .and_then(|b| b.strip_suffix(')'))
            .ok_or_else(|| QueryError::Syntax("unbalanced @HailQuery(...)".into()))?;
    }
    let mut c = Cursor { s: body, at: 0 };
    let mut q = QueryAnnotation::default();
    let (mut seen_filter, mut seen_projection) = (false, false);
    while !c.is_done() {
        if c.eat("filter") {
            if std::mem::replace(&mut seen_filter, true) {
                return Err(c.error("duplicate filter"));
            }
            c.expect("=")?;
            c.expect("\"")?;
            let len = c
                .rest()
                .find('"')
                .ok_or_else(|| c.error("unterminated filter string"))?;
            q.filter = parse_filter(&c.rest()[..len])?;
            c.at += len + 1;
        } else if c.eat("projection") {
            if std::mem::replace(&mut seen_projection, true) {
                return Err(c.error("duplicate projection"));
            }
            c.expect("=")?;
            c.expect("{")?;
            if !c.eat("}") {
                loop {
                    q.projection.push(c.position()?);
                    if c.eat("}") {
                        break;
                    }
                    c.expect(",")?;
                }
            }
        } else {
            return Err(c.error("expected 'filter' or 'projection'"));
        }
        if !c.is_done() {
            c.expect(",")?;
        }
    }
    Ok(q)
}

/// An inclusive range predicate on one attribute; `None` is unbounded.
#[derive(Debug, Clone, PartialEq)]
pub struct Predicate {
    pub position: usize,
    pub lo: Option<Value>,
    pub hi: Option<Value>,
}

impl Predicate {
    pub fn matches(&self, v: &Value) -> bool {
        self.lo.as_ref().is_none_or(|lo| v >= lo) && self.hi.as_ref().is_none_or(|hi| v <= hi)
    }

    /// True if no value can satisfy the predicate.
    pub fn is_empty(&self) -> bool {
        matches!((&self.lo, &self.hi), (Some(lo), Some(hi)) if lo > hi)
    }
}

/// An annotation checked against a schema, with literals typed and all
/// conjuncts on the same attribute merged into one range.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundQuery {
    /// In order of first appearance in the filter.
    pub predicates: Vec<Predicate>,
    /// Never empty: an empty annotation projection expands to all attributes.
    pub projection: Vec<usize>,
}

impl QueryAnnotation {
    pub fn bind(&self, schema: &Schema) -> Result<BoundQuery, QueryError> {
        let check = |pos: usize| schema.attr_type(pos).ok_or(QueryError::UnknownAttribute(pos));
        let mut predicates: Vec<Predicate> = Vec::new();
        for raw in &self.filter {
            let ty = check(raw.position)?;
            let lit = |s: &str| {
                ty.parse_value(s.as_bytes()).ok_or_else(|| QueryError::BadLiteral {
                    position: raw.position,
                    literal: s.to_owned(),
                })
            };
            let (lo, hi) = match &raw.op {
                RawOp::Eq(v) => {
                    let v = lit(v)?;
                    (Some(v.clone()), Some(v))
                }
                RawOp::Ge(v) => (Some(lit(v)?), None),
                RawOp::Le(v) => (None, Some(lit(v)?)),
                RawOp::Between(a, b) => {
                    let (a, b) = (lit(a)?, lit(b)?);
                    if a > b {
                        return Err(QueryError::InvalidRange(raw.position));
                    }
                    (Some(a), Some(b))
                }
            };
            match predicates.iter_mut().find(|p| p.position == raw.position) {
                Some(p) => {
                    p.lo = max_opt(p.lo.take(), lo);
                    p.hi = min_opt(p.hi.take(), hi);
                }
                None => predicates.push(Predicate {
                    position: raw.position,
                    lo,
                    hi,
                }),
            }
        }
        for &p in &self.projection {
            check(p)?;
        }
        let projection = if self.projection.is_empty() {
            (1..=schema.len()).collect()
        } else {
            self.projection.clone()
        };
        Ok(BoundQuery { predicates, projection })
    }
}

fn max_opt(a: Option<Value>, b: Option<Value>) -> Option<Value> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.max(b)),
        (a, b) => a.or(b),
    }
}

fn min_opt(a: Option<Value>, b: Option<Value>) -> Option<Value> {
    match (a, b) {
        (Some(a), Some(b)) => Some(a.min(b)),
        (a, b) => a.or(b),
    }
}

impl BoundQuery {
    pub fn predicate_on(&self, position: usize) -> Option<&Predicate> {
        self.predicates.iter().find(|p| p.position == position)
    }

    /// Evaluates the filter against a full record.
    pub fn matches(&self, record: &Record) -> bool {
        self.predicates
            .iter()
            .all(|p| p.matches(&record.values[p.position - 1]))
    }

    /// Projects a full record.
    pub fn project(&self, record: &Record) -> Record {
        Record::new(self.projection.iter().map(|&p| record.values[p - 1].clone()).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{parse_date, AttrType};

    fn schema() -> Schema {
        Schema::from_types(
            [("a", AttrType::Int32), ("b", AttrType::Varchar), ("c", AttrType::Date)],
            b',',
        )
        .unwrap()
    }

    #[test]
    fn parses_filter_and_projection() {
        let q = parse_annotation(r#"filter="@3 between(1999-01-01,2000-01-01)", projection={@1}"#).unwrap();
        assert_eq!(
            q.filter,
            vec![RawPredicate {
                position: 3,
                op: RawOp::Between("1999-01-01".into(), "2000-01-01".into())
            }]
        );
        assert_eq!(q.projection, vec![1]);
    }

    #[test]
    fn projection_only_and_wrapper() {
        let q = parse_annotation("@HailQuery(projection={@1,@2})").unwrap();
        assert!(q.filter.is_empty());
        assert_eq!(q.projection, vec![1, 2]);
        assert_eq!(parse_annotation("").unwrap(), QueryAnnotation::default());
    }

    #[test]
    fn conjunctions_and_quotes() {
        let q = parse_annotation(r#"projection={@2}, filter="@1 >=(5) AND @2 =('x, y') and @1 <=(9)""#).unwrap();
        assert_eq!(q.filter.len(), 3);
        assert_eq!(q.filter[1].op, RawOp::Eq("x, y".into()));
        let b = q.bind(&schema()).unwrap();
        assert_eq!(b.predicates.len(), 2);
        assert_eq!(b.predicates[0].lo, Some(Value::Int32(5)));
        assert_eq!(b.predicates[0].hi, Some(Value::Int32(9)));
    }

    #[test]
    fn syntax_errors() {
        for bad in [
            r#"filter="@1 ~(3)""#,
            r#"filter="@1 =(3"#,
            r#"filter="1 =(3)""#,
            r#"filter="@1 =(3) @2 =(4)""#,
            "projection={@1,}",
            "projection={1}",
            "select *",
            r#"filter="@1 between(3)""#,
            "projection={@1} projection={@2}",
        ] {
            assert!(matches!(parse_annotation(bad), Err(QueryError::Syntax(_))), "{bad}");
        }
    }

    #[test]
    fn binding_errors() {
        let s = schema();
        let bind = |t: &str| parse_annotation(t).unwrap().bind(&s);
        assert!(matches!(
            bind(r#"filter="@99 =(5)""#),
            Err(QueryError::UnknownAttribute(99))
        ));
        assert!(matches!(bind("projection={@0}"), Err(QueryError::UnknownAttribute(0))));
        assert!(matches!(
            bind(r#"filter="@1 =(x)""#),
            Err(QueryError::BadLiteral { position: 1, .. })
        ));
        assert!(matches!(
            bind(r#"filter="@1 between(5,4)""#),
            Err(QueryError::InvalidRange(1))
        ));
    }

    #[test]
    fn contradictory_conjuncts_are_empty_not_errors() {
        let b = parse_annotation(r#"filter="@1 >=(9) and @1 <=(3)""#)
            .unwrap()
            .bind(&schema())
            .unwrap();
        assert!(b.predicates[0].is_empty());
        assert_eq!(b.projection, vec![1, 2, 3]);
    }

    #[test]
    fn matches_and_projects() {
        let b = parse_annotation(r#"filter="@3 between(1999-01-01,2000-01-01)", projection={@2,@1}"#)
            .unwrap()
            .bind(&schema())
            .unwrap();
        let rec = |d: &str| {
            Record::new(vec![
                Value::Int32(1),
                Value::Varchar("u".into()),
                Value::Date(parse_date(d).unwrap()),
            ])
        };
        assert!(b.matches(&rec("1999-01-01")));
        assert!(b.matches(&rec("2000-01-01")));
        assert!(!b.matches(&rec("2000-01-02")));
        assert_eq!(
            b.project(&rec("1999-05-05")).values,
            vec![Value::Varchar("u".into()), Value::Int32(1)]
        );
    }

    #[test]
    fn display_round_trips() {
        let text =
            r#"filter="@1 >=(5) and @2 =('it''s, ok') and @3 between(1999-01-01,2000-01-01)", projection={@2,@1}"#;
        let q = parse_annotation(text).unwrap();
        assert_eq!(parse_annotation(&q.to_string()).unwrap(), q);
    }
}
