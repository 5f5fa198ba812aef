// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Sparse clustered indexes over sorted PAX blocks.
//!
//! After a block is sorted on a fixed-size key, the key column is divided
//! into partitions of `n` consecutive values. The index is a single root
//! directory holding the first key of every partition. Partition `p` starts
//! at byte `p * n * key_width` of the key column, so no child pointers are
//! stored. VARCHAR columns additionally get an offset list with the start of
//! every n-th value so that a single partition can be loaded on its own.

mod scan;
mod sort;

use std::cmp::Ordering;
use std::fmt;
use std::ops::Range;

use num_traits::Bounded;
use thiserror::Error;

use crate::codec::{PutLe, Reader};
use crate::pax::{ColumnData, Extent, FormatError, PaxBlock};
use crate::schema::{AttrType, Value};

pub use scan::{BlockReader, ByteSource, CountingSource, IndexHits, LoadedIndex, ReadError};
pub use sort::{build_index, sort_block, SortPermutation};

/// Default number of key values per partition.
pub const DEFAULT_PARTITION_SIZE: usize = 1024;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IndexError {
    #[error("attribute @{0} has type varchar and cannot be a sort key")]
    UnsupportedKeyType(usize),
    #[error("attribute position {0} does not exist")]
    UnknownAttribute(usize),
    #[error("key column is not sorted at row {0}")]
    NotSorted(usize),
    #[error("partition size must be at least 1")]
    ZeroPartitionSize,
}

/// A fixed-width key type that can be sorted and indexed.
pub trait IndexKey: Copy + PartialOrd + Bounded + fmt::Debug + Send + Sync + 'static {
    const WIDTH: usize;

    fn key_cmp(&self, other: &Self) -> Ordering;
    fn read_le(bytes: &[u8]) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    fn from_value(v: &Value) -> Option<Self>;
    fn to_value(self, ty: AttrType) -> Value;
}

impl IndexKey for i32 {
    const WIDTH: usize = 4;
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.cmp(other)
    }
    fn read_le(bytes: &[u8]) -> Self {
        i32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Int32(x) | Value::Date(x) => Some(*x),
            _ => None,
        }
    }
    fn to_value(self, ty: AttrType) -> Value {
        if ty == AttrType::Date {
            Value::Date(self)
        } else {
            Value::Int32(self)
        }
    }
}

impl IndexKey for i64 {
    const WIDTH: usize = 8;
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.cmp(other)
    }
    fn read_le(bytes: &[u8]) -> Self {
        i64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Int64(x) => Some(*x),
            _ => None,
        }
    }
    fn to_value(self, _: AttrType) -> Value {
        Value::Int64(self)
    }
}

impl IndexKey for f64 {
    const WIDTH: usize = 8;
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.total_cmp(other)
    }
    fn read_le(bytes: &[u8]) -> Self {
        f64::from_le_bytes(bytes[..8].try_into().unwrap())
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Float64(x) => Some(*x),
            _ => None,
        }
    }
    fn to_value(self, _: AttrType) -> Value {
        Value::Float64(self)
    }
}

impl IndexKey for u32 {
    const WIDTH: usize = 4;
    fn key_cmp(&self, other: &Self) -> Ordering {
        self.cmp(other)
    }
    fn read_le(bytes: &[u8]) -> Self {
        u32::from_le_bytes(bytes[..4].try_into().unwrap())
    }
    fn write_le(self, out: &mut Vec<u8>) {
        out.extend_from_slice(&self.to_le_bytes());
    }
    fn from_value(v: &Value) -> Option<Self> {
        match v {
            Value::Ipv4(x) => Some(*x),
            _ => None,
        }
    }
    fn to_value(self, _: AttrType) -> Value {
        Value::Ipv4(self)
    }
}

/// Single-level sparse directory over a sorted key column.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseClusteredIndex<K> {
    key_position: usize,
    partition_size: usize,
    row_count: usize,
    root: Vec<K>,
    max_key: Option<K>,
}

impl<K: IndexKey> SparseClusteredIndex<K> {
    /// Builds the directory over `keys`, which must be non-decreasing.
    pub fn build(keys: &[K], key_position: usize, partition_size: usize) -> Result<Self, IndexError> {
        if partition_size == 0 {
            return Err(IndexError::ZeroPartitionSize);
        }
        if let Some(i) = keys.windows(2).position(|w| w[0].key_cmp(&w[1]) == Ordering::Greater) {
            return Err(IndexError::NotSorted(i + 1));
        }
        Ok(SparseClusteredIndex {
            key_position,
            partition_size,
            row_count: keys.len(),
            root: keys.iter().step_by(partition_size).copied().collect(),
            max_key: keys.last().copied(),
        })
    }

    pub(crate) fn from_parts(
        key_position: usize,
        partition_size: usize,
        row_count: usize,
        root: Vec<K>,
        max_key: Option<K>,
    ) -> Self {
        SparseClusteredIndex {
            key_position,
            partition_size,
            row_count,
            root,
            max_key,
        }
    }

    pub fn key_position(&self) -> usize {
        self.key_position
    }

    pub fn partition_size(&self) -> usize {
        self.partition_size
    }

    pub fn row_count(&self) -> usize {
        self.row_count
    }

    /// First key of every partition.
    pub fn root_directory(&self) -> &[K] {
        &self.root
    }

    pub fn max_key(&self) -> Option<K> {
        self.max_key
    }

    pub fn partition_count(&self) -> usize {
        self.root.len()
    }

    /// Bytes of key column covered by one full partition.
    pub fn leaf_byte_size(&self) -> usize {
        self.partition_size * K::WIDTH
    }

    pub fn partition_rows(&self, partition: usize) -> Range<usize> {
        let start = partition * self.partition_size;
        start..(start + self.partition_size).min(self.row_count)
    }

    /// Byte range of a partition inside the key column.
    pub fn partition_bytes(&self, partition: usize) -> Range<u64> {
        let rows = self.partition_rows(partition);
        (rows.start * K::WIDTH) as u64..(rows.end * K::WIDTH) as u64
    }

    /// Determines the partitions that may hold keys in `[lo, hi]` using only
    /// the in-memory directory.
    ///
    /// The first partition is the last one whose first key is strictly below
    /// `lo`: a run of keys equal to `lo` may begin at the end of that
    /// partition. Returns `None` when the range misses `[min key, max key]`.
    pub fn lookup_range(&self, lo: K, hi: K) -> Option<(usize, usize)> {
        let (first_key, max) = (*self.root.first()?, self.max_key?);
        if lo.key_cmp(&hi) == Ordering::Greater
            || hi.key_cmp(&first_key) == Ordering::Less
            || lo.key_cmp(&max) == Ordering::Greater
        {
            return None;
        }
        let below_lo = self.root.partition_point(|k| k.key_cmp(&lo) == Ordering::Less);
        let at_most_hi = self.root.partition_point(|k| k.key_cmp(&hi) != Ordering::Greater);
        let first = below_lo.saturating_sub(1);
        let last = at_most_hi - 1;
        Some((first, last))
    }

    pub(crate) fn encoded_root_len(&self) -> usize {
        self.root.len() * K::WIDTH
    }
}

/// A sparse index over whichever key type the block is sorted on.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyIndex {
    Int32(SparseClusteredIndex<i32>),
    Int64(SparseClusteredIndex<i64>),
    Float64(SparseClusteredIndex<f64>),
    Date(SparseClusteredIndex<i32>),
    Ipv4(SparseClusteredIndex<u32>),
}

/// Runs a generic expression against the typed index inside an [`AnyIndex`].
macro_rules! with_index {
    ($any:expr, $ix:ident => $e:expr) => {
        match $any {
            $crate::index::AnyIndex::Int32($ix) => $e,
            $crate::index::AnyIndex::Int64($ix) => $e,
            $crate::index::AnyIndex::Float64($ix) => $e,
            $crate::index::AnyIndex::Date($ix) => $e,
            $crate::index::AnyIndex::Ipv4($ix) => $e,
        }
    };
}
pub(crate) use with_index;

impl AnyIndex {
    /// Builds the index over a sorted key column.
    pub fn build(column: &ColumnData, key_position: usize, n: usize) -> Result<AnyIndex, IndexError> {
        Ok(match column {
            ColumnData::Int32(k) => AnyIndex::Int32(SparseClusteredIndex::build(k, key_position, n)?),
            ColumnData::Int64(k) => AnyIndex::Int64(SparseClusteredIndex::build(k, key_position, n)?),
            ColumnData::Float64(k) => AnyIndex::Float64(SparseClusteredIndex::build(k, key_position, n)?),
            ColumnData::Date(k) => AnyIndex::Date(SparseClusteredIndex::build(k, key_position, n)?),
            ColumnData::Ipv4(k) => AnyIndex::Ipv4(SparseClusteredIndex::build(k, key_position, n)?),
            ColumnData::Varchar(_) => return Err(IndexError::UnsupportedKeyType(key_position)),
        })
    }

    pub fn key_type(&self) -> AttrType {
        match self {
            AnyIndex::Int32(_) => AttrType::Int32,
            AnyIndex::Int64(_) => AttrType::Int64,
            AnyIndex::Float64(_) => AttrType::Float64,
            AnyIndex::Date(_) => AttrType::Date,
            AnyIndex::Ipv4(_) => AttrType::Ipv4,
        }
    }

    pub fn key_width(&self) -> usize {
        self.key_type().fixed_size().expect("index keys are fixed-size")
    }

    pub fn key_position(&self) -> usize {
        with_index!(self, ix => ix.key_position())
    }

    pub fn partition_size(&self) -> usize {
        with_index!(self, ix => ix.partition_size())
    }

    pub fn partition_count(&self) -> usize {
        with_index!(self, ix => ix.partition_count())
    }

    pub fn row_count(&self) -> usize {
        with_index!(self, ix => ix.row_count())
    }

    pub fn leaf_byte_size(&self) -> usize {
        with_index!(self, ix => ix.leaf_byte_size())
    }

    pub fn partition_rows(&self, partition: usize) -> Range<usize> {
        with_index!(self, ix => ix.partition_rows(partition))
    }

    pub fn partition_bytes(&self, partition: usize) -> Range<u64> {
        with_index!(self, ix => ix.partition_bytes(partition))
    }

    pub fn root_values(&self) -> Vec<Value> {
        let ty = self.key_type();
        with_index!(self, ix => ix.root_directory().iter().map(|k| k.to_value(ty)).collect())
    }

    /// Range lookup with optional bounds given as typed values. Missing
    /// bounds are open. Bounds of the wrong type yield `None`.
    pub fn lookup_values(&self, lo: Option<&Value>, hi: Option<&Value>) -> Option<(usize, usize)> {
        fn bound<K: IndexKey>(v: Option<&Value>, open: K) -> Option<K> {
            match v {
                Some(v) => K::from_value(v),
                None => Some(open),
            }
        }
        with_index!(self, ix => {
            let lo = bound(lo, Bounded::min_value())?;
            let hi = bound(hi, Bounded::max_value())?;
            ix.lookup_range(lo, hi)
        })
    }

    fn encoded_root_len(&self) -> usize {
        with_index!(self, ix => ix.encoded_root_len())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IndexType {
    SparseClustered,
}

impl IndexType {
    pub fn tag(self) -> u8 {
        1
    }

    pub fn from_tag(tag: u8) -> Option<IndexType> {
        (tag == 1).then_some(IndexType::SparseClustered)
    }
}

impl fmt::Display for IndexType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("sparse-clustered")
    }
}

/// Start offsets of every n-th value of a VARCHAR column.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VarOffsetList {
    pub position: usize,
    pub offsets: Vec<u64>,
}

/// Location of a VARCHAR offset list inside the block file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VarListMeta {
    pub position: usize,
    pub extent: Extent,
    pub entries: u64,
}

/// Fixed part of the index section, decodable without the root directory.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexMetadata {
    pub key_position: usize,
    pub index_type: IndexType,
    pub key_type: AttrType,
    pub partition_size: usize,
    pub root_entries: u64,
    pub root: Extent,
    /// Little-endian max key, zero padded.
    pub max_key: [u8; 8],
    pub var_lists: Vec<VarListMeta>,
}

const INDEX_META_FIXED_LEN: usize = 42;
const VAR_LIST_META_LEN: usize = 18;

impl IndexMetadata {
    pub fn encoded_len(var_lists: usize) -> usize {
        INDEX_META_FIXED_LEN + var_lists * VAR_LIST_META_LEN
    }

    /// Decodes the metadata; `prefix` must start at the index section and
    /// hold at least the fixed part plus the list descriptors.
    pub fn decode(prefix: &[u8]) -> Result<IndexMetadata, FormatError> {
        let mut r = Reader::new(prefix, "index metadata");
        let key_position = r.u16()? as usize;
        let index_type =
            IndexType::from_tag(r.u8()?).ok_or_else(|| FormatError::Corrupt("unknown index type".into()))?;
        let key_type = AttrType::from_tag(r.u8()?)
            .filter(|t| t.is_fixed())
            .ok_or_else(|| FormatError::Corrupt("bad index key type".into()))?;
        let partition_size = r.u32()? as usize;
        if partition_size == 0 {
            return Err(FormatError::Corrupt("zero partition size".into()));
        }
        let root_entries = r.u64()?;
        let root = Extent {
            offset: r.u64()?,
            length: r.u64()?,
        };
        let max_key = r.array::<8>()?;
        let count = r.u16()? as usize;
        let mut var_lists = Vec::with_capacity(count);
        for _ in 0..count {
            let position = r.u16()? as usize;
            let offset = r.u64()?;
            let entries = r.u64()?;
            var_lists.push(VarListMeta {
                position,
                extent: Extent {
                    offset,
                    length: entries * 8,
                },
                entries,
            });
        }
        Ok(IndexMetadata {
            key_position,
            index_type,
            key_type,
            partition_size,
            root_entries,
            root,
            max_key,
            var_lists,
        })
    }

    pub fn var_list(&self, position: usize) -> Option<&VarListMeta> {
        self.var_lists.iter().find(|l| l.position == position)
    }
}

/// The index section stored at the end of an indexed block.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexSection {
    pub index: AnyIndex,
    pub var_offsets: Vec<VarOffsetList>,
}

impl IndexSection {
    pub fn encoded_len(&self) -> usize {
        IndexMetadata::encoded_len(self.var_offsets.len())
            + self.index.encoded_root_len()
            + self.var_offsets.iter().map(|l| l.offsets.len() * 8).sum::<usize>()
    }

    /// Size of the root directory in bytes.
    pub fn root_bytes(&self) -> usize {
        self.index.encoded_root_len()
    }

    /// Computes the metadata as it will be laid out at `base` in the file.
    pub fn metadata(&self, base: u64) -> IndexMetadata {
        let meta_len = IndexMetadata::encoded_len(self.var_offsets.len()) as u64;
        let root = Extent {
            offset: base + meta_len,
            length: self.index.encoded_root_len() as u64,
        };
        let mut cursor = root.end();
        let var_lists = self
            .var_offsets
            .iter()
            .map(|l| {
                let m = VarListMeta {
                    position: l.position,
                    extent: Extent {
                        offset: cursor,
                        length: l.offsets.len() as u64 * 8,
                    },
                    entries: l.offsets.len() as u64,
                };
                cursor += m.extent.length;
                m
            })
            .collect();
        let mut max_key = [0u8; 8];
        let mut buf = Vec::with_capacity(8);
        with_index!(&self.index, ix => if let Some(k) = ix.max_key() { k.write_le(&mut buf) });
        max_key[..buf.len()].copy_from_slice(&buf);
        IndexMetadata {
            key_position: self.index.key_position(),
            index_type: IndexType::SparseClustered,
            key_type: self.index.key_type(),
            partition_size: self.index.partition_size(),
            root_entries: self.index.partition_count() as u64,
            root,
            max_key,
            var_lists,
        }
    }

    pub(crate) fn encode_into(&self, base: u64, out: &mut Vec<u8>) {
        let meta = self.metadata(base);
        out.put_u16(meta.key_position as u16);
        out.put_u8(meta.index_type.tag());
        out.put_u8(meta.key_type.tag());
        out.put_u32(meta.partition_size as u32);
        out.put_u64(meta.root_entries);
        out.put_u64(meta.root.offset);
        out.put_u64(meta.root.length);
        out.extend_from_slice(&meta.max_key);
        out.put_u16(meta.var_lists.len() as u16);
        for l in &meta.var_lists {
            out.put_u16(l.position as u16);
            out.put_u64(l.extent.offset);
            out.put_u64(l.entries);
        }
        with_index!(&self.index, ix => ix.root_directory().iter().for_each(|k| k.write_le(out)));
        for l in &self.var_offsets {
            l.offsets.iter().for_each(|&o| out.put_u64(o));
        }
    }

    /// Decodes the section found at absolute offset `base`. The block's
    /// columns are used to cross-check the stored directory.
    pub(crate) fn decode(bytes: &[u8], base: u64, block: &PaxBlock) -> Result<IndexSection, FormatError> {
        let meta = IndexMetadata::decode(bytes)?;
        let section = Extent {
            offset: base,
            length: bytes.len() as u64,
        };
        let inside = |e: Extent| e.offset >= section.offset && e.end() <= section.end();
        if !inside(meta.root) || meta.var_lists.iter().any(|l| !inside(l.extent)) {
            return Err(FormatError::Corrupt("index extents outside index section".into()));
        }
        let slice = |e: Extent| &bytes[(e.offset - base) as usize..(e.end() - base) as usize];
        let key_column = block
            .read_column(meta.key_position)
            .map_err(|e| FormatError::Corrupt(e.to_string()))?;
        if key_column.attr_type() != meta.key_type {
            return Err(FormatError::Corrupt("index key type differs from column type".into()));
        }
        let index = decode_root(&meta, slice(meta.root), block.row_count())?;
        let var_offsets = meta
            .var_lists
            .iter()
            .map(|l| VarOffsetList {
                position: l.position,
                offsets: slice(l.extent)
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            })
            .collect();
        Ok(IndexSection { index, var_offsets })
    }
}

/// Rebuilds the typed directory from its serialized root bytes.
pub(crate) fn decode_root(meta: &IndexMetadata, root: &[u8], row_count: usize) -> Result<AnyIndex, FormatError> {
    fn typed<K: IndexKey>(
        meta: &IndexMetadata,
        root: &[u8],
        row_count: usize,
    ) -> Result<SparseClusteredIndex<K>, FormatError> {
        if root.len() != meta.root_entries as usize * K::WIDTH {
            return Err(FormatError::Corrupt("root directory length mismatch".into()));
        }
        let expected = row_count.div_ceil(meta.partition_size);
        if meta.root_entries as usize != expected {
            return Err(FormatError::Corrupt(format!(
                "root directory has {} entries, expected {expected}",
                meta.root_entries
            )));
        }
        let keys: Vec<K> = root.chunks_exact(K::WIDTH).map(K::read_le).collect();
        let max_key = (row_count > 0).then(|| K::read_le(&meta.max_key));
        Ok(SparseClusteredIndex::from_parts(
            meta.key_position,
            meta.partition_size,
            row_count,
            keys,
            max_key,
        ))
    }
    Ok(match meta.key_type {
        AttrType::Int32 => AnyIndex::Int32(typed(meta, root, row_count)?),
        AttrType::Int64 => AnyIndex::Int64(typed(meta, root, row_count)?),
        AttrType::Float64 => AnyIndex::Float64(typed(meta, root, row_count)?),
        AttrType::Date => AnyIndex::Date(typed(meta, root, row_count)?),
        AttrType::Ipv4 => AnyIndex::Ipv4(typed(meta, root, row_count)?),
        AttrType::Varchar => return Err(FormatError::Corrupt("varchar index key".into())),
    })
}

/// Index sizing arithmetic for a block of fixed-width rows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexSizing {
    pub rows: u64,
    pub root_entries: u64,
    pub root_bytes: u64,
    /// Root directory size relative to the block size.
    pub overhead_ratio: f64,
}

pub fn index_sizing(block_bytes: u64, row_width: u64, key_width: u64, partition_size: u64) -> IndexSizing {
    let rows = block_bytes / row_width;
    let root_entries = rows.div_ceil(partition_size);
    let root_bytes = root_entries * key_width;
    IndexSizing {
        rows,
        root_entries,
        root_bytes,
        overhead_ratio: root_bytes as f64 / block_bytes as f64,
    }
}
