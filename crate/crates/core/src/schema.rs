// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Typed schemas, values and row parsing.
//!
//! A schema is an ordered list of attributes addressed by 1-based position.
//! Rows are parsed from delimited text; a row that does not fit the schema is
//! not an error but a [`BadRecord`] carrying the original bytes.

use std::cmp::Ordering;
use std::fmt;
use std::hash::{Hash, Hasher};
use std::net::Ipv4Addr;
use std::str::FromStr;

use chrono::{Datelike, NaiveDate};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("schema has no attributes")]
    Empty,
    #[error("attribute positions must be contiguous from 1, found {found} where {expected} was expected")]
    NonContiguous { expected: usize, found: usize },
    #[error("duplicate attribute position {0}")]
    DuplicatePosition(usize),
    #[error("unknown attribute type '{0}'")]
    UnknownType(String),
    #[error("delimiter must be a single byte other than newline or NUL")]
    BadDelimiter,
    #[error("line {line}: {message}")]
    Config { line: usize, message: String },
}

/// Storage type of an attribute.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AttrType {
    Int32,
    Int64,
    Float64,
    /// Days since 1970-01-01, written as `YYYY-MM-DD`.
    Date,
    /// Dotted-quad IPv4 address packed into 4 bytes.
    Ipv4,
    Varchar,
}

impl AttrType {
    pub const ALL: [AttrType; 6] = [
        AttrType::Int32,
        AttrType::Int64,
        AttrType::Float64,
        AttrType::Date,
        AttrType::Ipv4,
        AttrType::Varchar,
    ];

    /// Width in bytes of the packed representation, `None` for VARCHAR.
    pub fn fixed_size(self) -> Option<usize> {
        match self {
            AttrType::Int32 | AttrType::Date | AttrType::Ipv4 => Some(4),
            AttrType::Int64 | AttrType::Float64 => Some(8),
            AttrType::Varchar => None,
        }
    }

    pub fn is_fixed(self) -> bool {
        self.fixed_size().is_some()
    }

    pub fn tag(self) -> u8 {
        match self {
            AttrType::Int32 => 1,
            AttrType::Int64 => 2,
            AttrType::Float64 => 3,
            AttrType::Date => 4,
            AttrType::Ipv4 => 5,
            AttrType::Varchar => 6,
        }
    }

    pub fn from_tag(tag: u8) -> Option<AttrType> {
        AttrType::ALL.into_iter().find(|t| t.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            AttrType::Int32 => "int32",
            AttrType::Int64 => "int64",
            AttrType::Float64 => "float64",
            AttrType::Date => "date",
            AttrType::Ipv4 => "ipv4",
            AttrType::Varchar => "varchar",
        }
    }

    /// Parses one field. Returns `None` when the text is not a valid value of
    /// this type, including numeric overflow, NaN and embedded NUL bytes.
    pub fn parse_value(self, field: &[u8]) -> Option<Value> {
        if self == AttrType::Varchar {
            if field.contains(&0) {
                return None;
            }
            return std::str::from_utf8(field).ok().map(|s| Value::Varchar(s.to_owned()));
        }
        let text = std::str::from_utf8(field).ok()?;
        match self {
            AttrType::Int32 => text.parse().ok().map(Value::Int32),
            AttrType::Int64 => text.parse().ok().map(Value::Int64),
            AttrType::Float64 => {
                let v: f64 = text.parse().ok()?;
                if v.is_nan() {
                    None
                } else {
                    Some(Value::Float64(v))
                }
            }
            AttrType::Date => parse_date(text).map(Value::Date),
            AttrType::Ipv4 => Ipv4Addr::from_str(text).ok().map(|ip| Value::Ipv4(u32::from(ip))),
            AttrType::Varchar => unreachable!(),
        }
    }
}

impl fmt::Display for AttrType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AttrType {
    type Err = SchemaError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        AttrType::ALL
            .into_iter()
            .find(|t| t.name() == lower)
            .ok_or_else(|| SchemaError::UnknownType(s.to_owned()))
    }
}

const EPOCH_DAYS_FROM_CE: i32 = 719_163;

/// Parses `YYYY-MM-DD` into days since 1970-01-01.
pub fn parse_date(text: &str) -> Option<i32> {
    let b = text.as_bytes();
    if b.len() != 10 || b[4] != b'-' || b[7] != b'-' {
        return None;
    }
    let year: i32 = text[0..4].parse().ok()?;
    let month: u32 = text[5..7].parse().ok()?;
    let day: u32 = text[8..10].parse().ok()?;
    let date = NaiveDate::from_ymd_opt(year, month, day)?;
    Some(date.num_days_from_ce() - EPOCH_DAYS_FROM_CE)
}

pub fn format_date(days: i32) -> String {
    match NaiveDate::from_num_days_from_ce_opt(days + EPOCH_DAYS_FROM_CE) {
        Some(d) => format!("{:04}-{:02}-{:02}", d.year(), d.month(), d.day()),
        None => format!("#{days}"),
    }
}

/// A typed attribute value.
///
/// Floats compare and hash by their total order so values can be used in
/// multisets; NaN never survives parsing.
#[derive(Debug, Clone)]
pub enum Value {
    Int32(i32),
    Int64(i64),
    Float64(f64),
    Date(i32),
    Ipv4(u32),
    Varchar(String),
}

impl Value {
    pub fn attr_type(&self) -> AttrType {
        match self {
            Value::Int32(_) => AttrType::Int32,
            Value::Int64(_) => AttrType::Int64,
            Value::Float64(_) => AttrType::Float64,
            Value::Date(_) => AttrType::Date,
            Value::Ipv4(_) => AttrType::Ipv4,
            Value::Varchar(_) => AttrType::Varchar,
        }
    }

    /// Compares two values of the same type; `None` across types.
    pub fn cmp_same(&self, other: &Value) -> Option<Ordering> {
        match (self, other) {
            (Value::Int32(a), Value::Int32(b)) => Some(a.cmp(b)),
            (Value::Int64(a), Value::Int64(b)) => Some(a.cmp(b)),
            (Value::Float64(a), Value::Float64(b)) => Some(a.total_cmp(b)),
            (Value::Date(a), Value::Date(b)) => Some(a.cmp(b)),
            (Value::Ipv4(a), Value::Ipv4(b)) => Some(a.cmp(b)),
            (Value::Varchar(a), Value::Varchar(b)) => Some(a.cmp(b)),
            _ => None,
        }
    }
}

impl PartialEq for Value {
    fn eq(&self, other: &Self) -> bool {
        self.cmp_same(other) == Some(Ordering::Equal)
    }
}

impl Eq for Value {}

impl Hash for Value {
    fn hash<H: Hasher>(&self, state: &mut H) {
        self.attr_type().tag().hash(state);
        match self {
            Value::Int32(v) | Value::Date(v) => v.hash(state),
            Value::Int64(v) => v.hash(state),
            Value::Float64(v) => v.to_bits().hash(state),
            Value::Ipv4(v) => v.hash(state),
            Value::Varchar(v) => v.hash(state),
        }
    }
}

impl PartialOrd for Value {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Value {
    fn cmp(&self, other: &Self) -> Ordering {
        self.cmp_same(other)
            .unwrap_or_else(|| self.attr_type().tag().cmp(&other.attr_type().tag()))
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int32(v) => write!(f, "{v}"),
            Value::Int64(v) => write!(f, "{v}"),
            Value::Float64(v) => write!(f, "{v}"),
            Value::Date(v) => f.write_str(&format_date(*v)),
            Value::Ipv4(v) => write!(f, "{}", Ipv4Addr::from(*v)),
            Value::Varchar(v) => f.write_str(v),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Attribute {
    pub name: String,
    /// 1-based.
    pub position: usize,
    pub ty: AttrType,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    attributes: Vec<Attribute>,
    delimiter: u8,
}

impl Schema {
    /// Builds a schema; attributes may be given in any order but their
    /// positions must be exactly `1..=k`.
    pub fn new(mut attributes: Vec<Attribute>, delimiter: u8) -> Result<Schema, SchemaError> {
        if attributes.is_empty() {
            return Err(SchemaError::Empty);
        }
        if delimiter == b'\n' || delimiter == b'\r' || delimiter == 0 {
            return Err(SchemaError::BadDelimiter);
        }
        attributes.sort_by_key(|a| a.position);
        for (i, attr) in attributes.iter().enumerate() {
            if i > 0 && attributes[i - 1].position == attr.position {
                return Err(SchemaError::DuplicatePosition(attr.position));
            }
            if attr.position != i + 1 {
                return Err(SchemaError::NonContiguous {
                    expected: i + 1,
                    found: attr.position,
                });
            }
        }
        Ok(Schema { attributes, delimiter })
    }

    /// Convenience constructor with positions assigned in order.
    pub fn from_types<'a>(
        columns: impl IntoIterator<Item = (&'a str, AttrType)>,
        delimiter: u8,
    ) -> Result<Schema, SchemaError> {
        let attributes = columns
            .into_iter()
            .enumerate()
            .map(|(i, (name, ty))| Attribute {
                name: name.to_owned(),
                position: i + 1,
                ty,
            })
            .collect();
        Schema::new(attributes, delimiter)
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn delimiter(&self) -> u8 {
        self.delimiter
    }

    /// Attribute at a 1-based position.
    pub fn attribute(&self, position: usize) -> Option<&Attribute> {
        position.checked_sub(1).and_then(|i| self.attributes.get(i))
    }

    pub fn attr_type(&self, position: usize) -> Option<AttrType> {
        self.attribute(position).map(|a| a.ty)
    }

    pub fn position_of(&self, name: &str) -> Option<usize> {
        self.attributes.iter().find(|a| a.name == name).map(|a| a.position)
    }

    /// Parses the line-based schema config:
    ///
    /// ```text
    /// # comment
    /// delimiter ,
    /// attr 1 sourceIP ipv4
    /// attr 2 destURL varchar
    /// ```
    pub fn parse_config(text: &str) -> Result<Schema, SchemaError> {
        let mut attributes = Vec::new();
        let mut delimiter = b',';
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |message: &str| SchemaError::Config {
                line: i + 1,
                message: message.to_owned(),
            };
            let mut words = line.split_whitespace();
            match words.next() {
                Some("attr") => {
                    let position = words
                        .next()
                        .and_then(|w| w.parse::<usize>().ok())
                        .ok_or_else(|| err("expected attribute position"))?;
                    let name = words.next().ok_or_else(|| err("expected attribute name"))?;
                    let ty: AttrType = words.next().ok_or_else(|| err("expected attribute type"))?.parse()?;
                    if words.next().is_some() {
                        return Err(err("trailing tokens"));
                    }
                    attributes.push(Attribute {
                        name: name.to_owned(),
                        position,
                        ty,
                    });
                }
                Some("delimiter") => {
                    let rest = line["delimiter".len()..].trim();
                    delimiter = match rest {
                        "tab" | "\\t" => b'\t',
                        "space" => b' ',
                        s if s.len() == 1 => s.as_bytes()[0],
                        _ => return Err(err("delimiter must be one character")),
                    };
                }
                Some(other) => return Err(err(&format!("unknown directive '{other}'"))),
                None => {}
            }
        }
        Schema::new(attributes, delimiter)
    }

    pub fn to_config(&self) -> String {
        let delim = match self.delimiter {
            b'\t' => "tab".to_owned(),
            b' ' => "space".to_owned(),
            d => (d as char).to_string(),
        };
        let mut out = format!("delimiter {delim}\n");
        for a in &self.attributes {
            out.push_str(&format!("attr {} {} {}\n", a.position, a.name, a.ty));
        }
        out
    }
}

/// A parsed row; `values[i]` belongs to position `i + 1`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Record {
    pub values: Vec<Value>,
}

impl Record {
    pub fn new(values: Vec<Value>) -> Record {
        Record { values }
    }

    /// Formats the record as delimited text without a line terminator.
    pub fn to_line(&self, delimiter: u8) -> String {
        let mut out = String::new();
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                out.push(delimiter as char);
            }
            out.push_str(&v.to_string());
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BadReason {
    FieldCountMismatch,
    TypeParseFailure,
    OversizedLine,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BadRecord {
    /// The original line without its terminator.
    pub raw: Vec<u8>,
    pub reason: BadReason,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ParsedLine {
    Good(Record),
    Bad(BadRecord),
}

/// Parses one line (no `\n`) under `schema`.
pub fn parse_line(line: &[u8], schema: &Schema) -> ParsedLine {
    let bad = |reason| {
        ParsedLine::Bad(BadRecord {
            raw: line.to_vec(),
            reason,
        })
    };
    let k = schema.len();
    let field_count = if line.is_empty() {
        0
    } else {
        line.iter().filter(|&&b| b == schema.delimiter).count() + 1
    };
    if field_count != k {
        return bad(BadReason::FieldCountMismatch);
    }
    let mut values = Vec::with_capacity(k);
    for (field, attr) in line.split(|&b| b == schema.delimiter).zip(&schema.attributes) {
        match attr.ty.parse_value(field) {
            Some(v) => values.push(v),
            None => return bad(BadReason::TypeParseFailure),
        }
    }
    ParsedLine::Good(Record { values })
}
