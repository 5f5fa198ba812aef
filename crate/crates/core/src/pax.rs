// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! PAX block layout and the on-disk block format.
//!
//! A block stores every attribute in its own contiguous column. Fixed-size
//! columns hold packed little-endian values; VARCHAR columns hold a sequence
//! of zero-terminated strings. Rows that failed to parse live verbatim in a
//! separate bad region. The serialized file is
//!
//! ```text
//! [header | fixed columns | VARCHAR columns | bad region | index section]
//! ```
//!
//! and every section is located through the header alone. See `FORMAT.md`.

use thiserror::Error;

use crate::blocks::LogicalBlock;
use crate::codec::{PutLe, Reader};
use crate::index::IndexSection;
use crate::schema::{AttrType, Attribute, Record, Schema, SchemaError, Value};

pub const MAGIC: [u8; 4] = *b"HAIL";
pub const VERSION: u32 = 1;
/// magic + version + header length.
pub const HEADER_PREFIX_LEN: usize = 16;

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported format version {0}")]
    BadVersion(u32),
    #[error("truncated {0}")]
    Truncated(&'static str),
    #[error("sections do not tile the block: {0}")]
    Tiling(String),
    #[error("invalid schema in header: {0}")]
    Schema(#[from] SchemaError),
    #[error("corrupt block: {0}")]
    Corrupt(String),
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PaxError {
    #[error("attribute position {position} out of range 1..={arity}")]
    PositionOutOfRange { position: usize, arity: usize },
}

/// Zero-terminated VARCHAR column with derived value start offsets.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct VarColumn {
    bytes: Vec<u8>,
    starts: Vec<usize>,
}

impl VarColumn {
    pub fn push(&mut self, value: &str) {
        debug_assert!(!value.as_bytes().contains(&0));
        self.starts.push(self.bytes.len());
        self.bytes.extend_from_slice(value.as_bytes());
        self.bytes.push(0);
    }

    pub fn len(&self) -> usize {
        self.starts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.starts.is_empty()
    }

    pub fn bytes(&self) -> &[u8] {
        &self.bytes
    }

    /// Byte offset of each value within the column.
    pub fn starts(&self) -> &[usize] {
        &self.starts
    }

    pub fn get(&self, row: usize) -> &str {
        let start = self.starts[row];
        let end = self.bytes[start..]
            .iter()
            .position(|&b| b == 0)
            .map_or(self.bytes.len(), |p| start + p);
        std::str::from_utf8(&self.bytes[start..end]).expect("validated on construction")
    }

    pub fn from_bytes(bytes: Vec<u8>, rows: usize) -> Result<VarColumn, FormatError> {
        let mut starts = Vec::with_capacity(rows.min(bytes.len()));
        let mut start = 0;
        for (i, &b) in bytes.iter().enumerate() {
            if b == 0 {
                starts.push(start);
                start = i + 1;
            }
        }
        if start != bytes.len() {
            return Err(FormatError::Corrupt("VARCHAR column lacks a final terminator".into()));
        }
        if starts.len() != rows {
            return Err(FormatError::Corrupt(format!(
                "VARCHAR column has {} values, expected {rows}",
                starts.len()
            )));
        }
        std::str::from_utf8(&bytes).map_err(|_| FormatError::Corrupt("VARCHAR column is not UTF-8".into()))?;
        Ok(VarColumn { bytes, starts })
    }
}

/// One attribute's values for every row of a block.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnData {
    Int32(Vec<i32>),
    Int64(Vec<i64>),
    Float64(Vec<f64>),
    Date(Vec<i32>),
    Ipv4(Vec<u32>),
    Varchar(VarColumn),
}

macro_rules! fixed_column_op {
    ($col:expr, $v:ident => $e:expr, $var:ident => $ve:expr) => {
        match $col {
            ColumnData::Int32($v) | ColumnData::Date($v) => $e,
            ColumnData::Int64($v) => $e,
            ColumnData::Float64($v) => $e,
            ColumnData::Ipv4($v) => $e,
            ColumnData::Varchar($var) => $ve,
        }
    };
}

impl ColumnData {
    pub fn empty(ty: AttrType, capacity: usize) -> ColumnData {
        match ty {
            AttrType::Int32 => ColumnData::Int32(Vec::with_capacity(capacity)),
            AttrType::Int64 => ColumnData::Int64(Vec::with_capacity(capacity)),
            AttrType::Float64 => ColumnData::Float64(Vec::with_capacity(capacity)),
            AttrType::Date => ColumnData::Date(Vec::with_capacity(capacity)),
            AttrType::Ipv4 => ColumnData::Ipv4(Vec::with_capacity(capacity)),
            AttrType::Varchar => ColumnData::Varchar(VarColumn::default()),
        }
    }

    pub fn attr_type(&self) -> AttrType {
        match self {
            ColumnData::Int32(_) => AttrType::Int32,
            ColumnData::Int64(_) => AttrType::Int64,
            ColumnData::Float64(_) => AttrType::Float64,
            ColumnData::Date(_) => AttrType::Date,
            ColumnData::Ipv4(_) => AttrType::Ipv4,
            ColumnData::Varchar(_) => AttrType::Varchar,
        }
    }

    pub fn len(&self) -> usize {
        fixed_column_op!(self, v => v.len(), v => v.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Appends a value; the value must have the column's type.
    pub fn push(&mut self, value: &Value) {
        match (self, value) {
            (ColumnData::Int32(c), Value::Int32(v)) => c.push(*v),
            (ColumnData::Int64(c), Value::Int64(v)) => c.push(*v),
            (ColumnData::Float64(c), Value::Float64(v)) => c.push(*v),
            (ColumnData::Date(c), Value::Date(v)) => c.push(*v),
            (ColumnData::Ipv4(c), Value::Ipv4(v)) => c.push(*v),
            (ColumnData::Varchar(c), Value::Varchar(v)) => c.push(v),
            (col, v) => panic!(
                "type mismatch: {} value pushed into {} column",
                v.attr_type(),
                col.attr_type()
            ),
        }
    }

    pub fn value(&self, row: usize) -> Value {
        match self {
            ColumnData::Int32(c) => Value::Int32(c[row]),
            ColumnData::Int64(c) => Value::Int64(c[row]),
            ColumnData::Float64(c) => Value::Float64(c[row]),
            ColumnData::Date(c) => Value::Date(c[row]),
            ColumnData::Ipv4(c) => Value::Ipv4(c[row]),
            ColumnData::Varchar(c) => Value::Varchar(c.get(row).to_owned()),
        }
    }

    pub fn values(&self) -> Vec<Value> {
        (0..self.len()).map(|r| self.value(r)).collect()
    }

    /// Reorders rows so that output row `i` is input row `perm[i]`.
    pub fn permute(&self, perm: &[u32]) -> ColumnData {
        fn gather<T: Copy>(v: &[T], perm: &[u32]) -> Vec<T> {
            perm.iter().map(|&i| v[i as usize]).collect()
        }
        match self {
            ColumnData::Int32(c) => ColumnData::Int32(gather(c, perm)),
            ColumnData::Int64(c) => ColumnData::Int64(gather(c, perm)),
            ColumnData::Float64(c) => ColumnData::Float64(gather(c, perm)),
            ColumnData::Date(c) => ColumnData::Date(gather(c, perm)),
            ColumnData::Ipv4(c) => ColumnData::Ipv4(gather(c, perm)),
            ColumnData::Varchar(c) => {
                let mut out = VarColumn {
                    bytes: Vec::with_capacity(c.bytes.len()),
                    starts: Vec::with_capacity(c.len()),
                };
                for &i in perm {
                    let start = c.starts[i as usize];
                    let end = c.starts.get(i as usize + 1).copied().unwrap_or(c.bytes.len());
                    out.starts.push(out.bytes.len());
                    out.bytes.extend_from_slice(&c.bytes[start..end]);
                }
                ColumnData::Varchar(out)
            }
        }
    }

    pub fn encoded_len(&self) -> usize {
        match self {
            ColumnData::Varchar(c) => c.bytes.len(),
            other => other.len() * other.attr_type().fixed_size().expect("fixed"),
        }
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        match self {
            ColumnData::Int32(c) | ColumnData::Date(c) => {
                c.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes()))
            }
            ColumnData::Int64(c) => c.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            ColumnData::Float64(c) => c.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            ColumnData::Ipv4(c) => c.iter().for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
            ColumnData::Varchar(c) => out.extend_from_slice(&c.bytes),
        }
    }

    pub fn decode(ty: AttrType, bytes: &[u8], rows: usize) -> Result<ColumnData, FormatError> {
        if let Some(width) = ty.fixed_size() {
            if bytes.len() != rows * width {
                return Err(FormatError::Corrupt(format!(
                    "{ty} column has {} bytes, expected {}",
                    bytes.len(),
                    rows * width
                )));
            }
        }
        fn unpack<T, const N: usize>(bytes: &[u8], f: fn([u8; N]) -> T) -> Vec<T> {
            bytes
                .chunks_exact(N)
                .map(|c| f(c.try_into().expect("exact chunk")))
                .collect()
        }
        Ok(match ty {
            AttrType::Int32 => ColumnData::Int32(unpack(bytes, i32::from_le_bytes)),
            AttrType::Int64 => ColumnData::Int64(unpack(bytes, i64::from_le_bytes)),
            AttrType::Float64 => ColumnData::Float64(unpack(bytes, f64::from_le_bytes)),
            AttrType::Date => ColumnData::Date(unpack(bytes, i32::from_le_bytes)),
            AttrType::Ipv4 => ColumnData::Ipv4(unpack(bytes, u32::from_le_bytes)),
            AttrType::Varchar => ColumnData::Varchar(VarColumn::from_bytes(bytes.to_vec(), rows)?),
        })
    }
}

/// A byte range inside a serialized block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Extent {
    pub offset: u64,
    pub length: u64,
}

impl Extent {
    pub fn end(&self) -> u64 {
        self.offset + self.length
    }
}

/// The block header: everything a reader needs to locate each section.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockMetadata {
    pub version: u32,
    pub header_len: u64,
    pub schema: Schema,
    pub row_count: u64,
    /// Column extents in attribute position order.
    pub columns: Vec<Extent>,
    pub bad_region: Extent,
    pub bad_count: u64,
    /// Zero offset and length when the block carries no index.
    pub index: Extent,
}

impl BlockMetadata {
    pub fn encoded_len(schema: &Schema) -> usize {
        let attrs: usize = schema.attributes().iter().map(|a| 2 + 1 + 2 + a.name.len()).sum();
        HEADER_PREFIX_LEN + 8 + 1 + 2 + attrs + schema.len() * 16 + 24 + 16
    }

    pub fn column(&self, position: usize) -> Option<Extent> {
        position.checked_sub(1).and_then(|i| self.columns.get(i)).copied()
    }

    pub fn total_len(&self) -> u64 {
        let mut end = self.bad_region.end();
        if self.index.length > 0 {
            end = end.max(self.index.end());
        }
        end
    }

    pub fn has_index(&self) -> bool {
        self.index.length > 0
    }

    fn encode_into(&self, out: &mut Vec<u8>) {
        out.extend_from_slice(&MAGIC);
        out.put_u32(self.version);
        out.put_u64(self.header_len);
        out.put_u64(self.row_count);
        out.put_u8(self.schema.delimiter());
        out.put_u16(self.schema.len() as u16);
        for a in self.schema.attributes() {
            out.put_u16(a.position as u16);
            out.put_u8(a.ty.tag());
            out.put_u16(a.name.len() as u16);
            out.extend_from_slice(a.name.as_bytes());
        }
        for e in &self.columns {
            out.put_u64(e.offset);
            out.put_u64(e.length);
        }
        out.put_u64(self.bad_region.offset);
        out.put_u64(self.bad_region.length);
        out.put_u64(self.bad_count);
        out.put_u64(self.index.offset);
        out.put_u64(self.index.length);
    }

    /// Reads the header length from the fixed prefix.
    pub fn peek_header_len(prefix: &[u8]) -> Result<u64, FormatError> {
        let mut r = Reader::new(prefix, "header prefix");
        if r.array::<4>()? != MAGIC {
            return Err(FormatError::BadMagic);
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(FormatError::BadVersion(version));
        }
        r.u64()
    }

    /// Decodes a header from the first `header_len` bytes of a block.
    pub fn decode(bytes: &[u8]) -> Result<BlockMetadata, FormatError> {
        let header_len = Self::peek_header_len(bytes)?;
        if (bytes.len() as u64) < header_len {
            return Err(FormatError::Truncated("header"));
        }
        let mut r = Reader::new(&bytes[..header_len as usize], "header");
        r.bytes(HEADER_PREFIX_LEN)?;
        let row_count = r.u64()?;
        let delimiter = r.u8()?;
        let attr_count = r.u16()? as usize;
        let mut attributes = Vec::with_capacity(attr_count);
        for _ in 0..attr_count {
            let position = r.u16()? as usize;
            let tag = r.u8()?;
            let ty = AttrType::from_tag(tag).ok_or_else(|| FormatError::Corrupt(format!("unknown type tag {tag}")))?;
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.bytes(name_len)?)
                .map_err(|_| FormatError::Corrupt("attribute name is not UTF-8".into()))?
                .to_owned();
            attributes.push(Attribute { name, position, ty });
        }
        let schema = Schema::new(attributes, delimiter)?;
        let mut columns = Vec::with_capacity(attr_count);
        for _ in 0..attr_count {
            columns.push(Extent {
                offset: r.u64()?,
                length: r.u64()?,
            });
        }
        let bad_region = Extent {
            offset: r.u64()?,
            length: r.u64()?,
        };
        let bad_count = r.u64()?;
        let index = Extent {
            offset: r.u64()?,
            length: r.u64()?,
        };
        if r.remaining() != 0 || r.position() as u64 != header_len {
            return Err(FormatError::Corrupt("header length mismatch".into()));
        }
        Ok(BlockMetadata {
            version: VERSION,
            header_len,
            schema,
            row_count,
            columns,
            bad_region,
            bad_count,
            index,
        })
    }

    /// Positions in on-disk order: fixed-size columns first, then VARCHAR.
    pub fn layout_order(schema: &Schema) -> Vec<usize> {
        let attrs = schema.attributes();
        attrs
            .iter()
            .filter(|a| a.ty.is_fixed())
            .chain(attrs.iter().filter(|a| !a.ty.is_fixed()))
            .map(|a| a.position)
            .collect()
    }

    /// Checks that header, columns, bad region and index exactly tile
    /// `[0, total_len)` in canonical order.
    pub fn validate_tiling(&self, total_len: u64) -> Result<(), FormatError> {
        let mut cursor = self.header_len;
        let mut expect = |name: String, e: Extent| {
            if e.offset != cursor {
                return Err(FormatError::Tiling(format!(
                    "{name} starts at {} but previous section ends at {cursor}",
                    e.offset
                )));
            }
            cursor = e
                .offset
                .checked_add(e.length)
                .ok_or_else(|| FormatError::Tiling(format!("{name} length overflows")))?;
            Ok(())
        };
        for pos in Self::layout_order(&self.schema) {
            expect(format!("column @{pos}"), self.columns[pos - 1])?;
            let ty = self.schema.attr_type(pos).expect("layout positions are valid");
            if let Some(w) = ty.fixed_size() {
                if Some(self.columns[pos - 1].length) != self.row_count.checked_mul(w as u64) {
                    return Err(FormatError::Tiling(format!(
                        "column @{pos} length does not match row count"
                    )));
                }
            }
        }
        expect("bad region".into(), self.bad_region)?;
        if self.index.length > 0 {
            expect("index section".into(), self.index)?;
        } else if self.index.offset != 0 {
            return Err(FormatError::Tiling("empty index section with nonzero offset".into()));
        }
        if cursor != total_len {
            return Err(FormatError::Tiling(format!(
                "sections end at {cursor} but block has {total_len} bytes"
            )));
        }
        Ok(())
    }
}

/// A block in PAX layout, optionally carrying its clustered index.
#[derive(Debug, Clone, PartialEq)]
pub struct PaxBlock {
    schema: Schema,
    row_count: usize,
    columns: Vec<ColumnData>,
    bad_region: Vec<Vec<u8>>,
    index: Option<IndexSection>,
}

impl PaxBlock {
    /// Assembles a block from columns, checking that they agree with the schema.
    pub fn from_parts(
        schema: Schema,
        columns: Vec<ColumnData>,
        bad_region: Vec<Vec<u8>>,
    ) -> Result<PaxBlock, FormatError> {
        if columns.len() != schema.len() {
            return Err(FormatError::Corrupt(format!(
                "{} columns for {} attributes",
                columns.len(),
                schema.len()
            )));
        }
        let row_count = columns.first().map_or(0, |c| c.len());
        for (c, a) in columns.iter().zip(schema.attributes()) {
            if c.attr_type() != a.ty || c.len() != row_count {
                return Err(FormatError::Corrupt(format!(
                    "column @{} does not match the schema or row count",
                    a.position
                )));
            }
        }
        Ok(PaxBlock {
            schema,
            row_count,
            columns,
            bad_region,
            index: None,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    pub fn columns(&self) -> &[ColumnData] {
        &self.columns
    }

    pub fn bad_region(&self) -> &[Vec<u8>] {
        &self.bad_region
    }

    pub fn index(&self) -> Option<&IndexSection> {
        self.index.as_ref()
    }

    pub(crate) fn set_index(&mut self, index: Option<IndexSection>) {
        self.index = index;
    }

    pub(crate) fn with_columns(&self, columns: Vec<ColumnData>) -> PaxBlock {
        PaxBlock {
            schema: self.schema.clone(),
            row_count: self.row_count,
            columns,
            bad_region: self.bad_region.clone(),
            index: None,
        }
    }

    /// The column at a 1-based attribute position.
    pub fn read_column(&self, position: usize) -> Result<&ColumnData, PaxError> {
        position
            .checked_sub(1)
            .and_then(|i| self.columns.get(i))
            .ok_or(PaxError::PositionOutOfRange {
                position,
                arity: self.schema.len(),
            })
    }

    /// Reassembles row `row` from all columns.
    pub fn row(&self, row: usize) -> Record {
        Record::new(self.columns.iter().map(|c| c.value(row)).collect())
    }

    pub fn rows(&self) -> Vec<Record> {
        (0..self.row_count).map(|r| self.row(r)).collect()
    }

    /// Computes the header for the serialized form of this block.
    pub fn metadata(&self) -> BlockMetadata {
        let header_len = BlockMetadata::encoded_len(&self.schema) as u64;
        let mut columns = vec![Extent::default(); self.schema.len()];
        let mut offset = header_len;
        for pos in BlockMetadata::layout_order(&self.schema) {
            let length = self.columns[pos - 1].encoded_len() as u64;
            columns[pos - 1] = Extent { offset, length };
            offset += length;
        }
        let bad_len: u64 = self.bad_region.iter().map(|r| 4 + r.len() as u64).sum();
        let bad_region = Extent {
            offset,
            length: bad_len,
        };
        offset += bad_len;
        let index = match &self.index {
            Some(ix) => Extent {
                offset,
                length: ix.encoded_len() as u64,
            },
            None => Extent::default(),
        };
        BlockMetadata {
            version: VERSION,
            header_len,
            schema: self.schema.clone(),
            row_count: self.row_count as u64,
            columns,
            bad_region,
            bad_count: self.bad_region.len() as u64,
            index,
        }
    }

    pub fn serialize(&self) -> Vec<u8> {
        let meta = self.metadata();
        let mut out = Vec::with_capacity(meta.total_len() as usize);
        meta.encode_into(&mut out);
        debug_assert_eq!(out.len() as u64, meta.header_len);
        for pos in BlockMetadata::layout_order(&self.schema) {
            self.columns[pos - 1].encode_into(&mut out);
        }
        for raw in &self.bad_region {
            out.put_u32(raw.len() as u32);
            out.extend_from_slice(raw);
        }
        if let Some(ix) = &self.index {
            ix.encode_into(meta.index.offset, &mut out);
        }
        debug_assert_eq!(out.len() as u64, meta.total_len());
        out
    }

    pub fn deserialize(bytes: &[u8]) -> Result<PaxBlock, FormatError> {
        if bytes.len() < HEADER_PREFIX_LEN {
            return Err(FormatError::Truncated("header prefix"));
        }
        let meta = BlockMetadata::decode(bytes)?;
        meta.validate_tiling(bytes.len() as u64)?;
        let rows = meta.row_count as usize;
        let section = |e: Extent| &bytes[e.offset as usize..e.end() as usize];
        let columns = meta
            .schema
            .attributes()
            .iter()
            .map(|a| ColumnData::decode(a.ty, section(meta.columns[a.position - 1]), rows))
            .collect::<Result<Vec<_>, _>>()?;
        let bad_region = decode_bad_region(section(meta.bad_region), meta.bad_count)?;
        let mut block = PaxBlock::from_parts(meta.schema.clone(), columns, bad_region)?;
        if block.row_count != rows {
            return Err(FormatError::Corrupt("row count mismatch".into()));
        }
        if meta.has_index() {
            let ix = IndexSection::decode(section(meta.index), meta.index.offset, &block)?;
            block.index = Some(ix);
        }
        Ok(block)
    }
}

pub(crate) fn decode_bad_region(bytes: &[u8], count: u64) -> Result<Vec<Vec<u8>>, FormatError> {
    let mut r = Reader::new(bytes, "bad region");
    let mut out = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let len = r.u32()? as usize;
        out.push(r.bytes(len)?.to_vec());
    }
    if r.remaining() != 0 {
        return Err(FormatError::Corrupt("trailing bytes in bad region".into()));
    }
    Ok(out)
}

/// Converts a logical block into PAX layout.
pub fn to_pax(block: &LogicalBlock, schema: &Schema) -> PaxBlock {
    let rows = block.records.len();
    let mut columns: Vec<ColumnData> = schema
        .attributes()
        .iter()
        .map(|a| ColumnData::empty(a.ty, rows))
        .collect();
    for record in &block.records {
        debug_assert_eq!(record.values.len(), columns.len());
        for (col, v) in columns.iter_mut().zip(&record.values) {
            col.push(v);
        }
    }
    let bad_region = block.bad_records.iter().map(|b| b.raw.clone()).collect();
    PaxBlock {
        schema: schema.clone(),
        row_count: rows,
        columns,
        bad_region,
        index: None,
    }
}
