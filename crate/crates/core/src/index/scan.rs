// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Index scans over serialized blocks.
//!
//! Everything here works through [`ByteSource`] range reads, so the same
//! code serves in-memory blocks and block files on a datanode. Only the
//! header, the index section and the partitions selected by the root
//! directory are read.

use std::ops::Range;
use std::sync::Mutex;

use thiserror::Error;

use super::{decode_root, with_index, AnyIndex, IndexKey, IndexMetadata, VarOffsetList};
use crate::pax::{
    decode_bad_region, BlockMetadata, ColumnData, FormatError, PaxBlock, PaxError, VarColumn, HEADER_PREFIX_LEN,
};
use crate::schema::{AttrType, Record, Value};

#[derive(Debug, Error)]
pub enum ReadError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Position(#[from] PaxError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("checksum mismatch in chunk {chunk}")]
    Checksum { chunk: u64 },
    #[error("replica unavailable: {0}")]
    Unavailable(String),
    #[error("read of {len} bytes at {offset} is past the block end {size}")]
    OutOfBounds { offset: u64, len: usize, size: u64 },
    #[error("row {row} out of range for a block of {rows} rows")]
    RowOutOfRange { row: u64, rows: u64 },
}

/// Positioned reads over a serialized block.
pub trait ByteSource {
    fn len(&self) -> u64;
    fn read_at(&self, offset: u64, len: usize) -> Result<Vec<u8>, ReadError>;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl ByteSource for [u8] {
    fn len(&self) -> u64 {
        <[u8]>::len(self) as u64
    }

    fn read_at(&self, offset: u64, len: usize) -> Result<Vec<u8>, ReadError> {
        let size = <[u8]>::len(self) as u64;
        let end = offset.checked_add(len as u64).filter(|&e| e <= size);
        match end {
            Some(end) => Ok(self[offset as usize..end as usize].to_vec()),
            None => Err(ReadError::OutOfBounds { offset, len, size }),
        }
    }
}

impl ByteSource for Vec<u8> {
    fn len(&self) -> u64 {
        self.as_slice().len() as u64
    }

    fn read_at(&self, offset: u64, len: usize) -> Result<Vec<u8>, ReadError> {
        self.as_slice().read_at(offset, len)
    }
}

impl<S: ByteSource + ?Sized> ByteSource for &S {
    fn len(&self) -> u64 {
        (**self).len()
    }

    fn read_at(&self, offset: u64, len: usize) -> Result<Vec<u8>, ReadError> {
        (**self).read_at(offset, len)
    }
}

/// Wraps a source and records every range read through it.
pub struct CountingSource<S> {
    inner: S,
    log: Mutex<Vec<Range<u64>>>,
}

impl<S: ByteSource> CountingSource<S> {
    pub fn new(inner: S) -> Self {
        CountingSource {
            inner,
            log: Mutex::new(Vec::new()),
        }
    }

    pub fn reads(&self) -> Vec<Range<u64>> {
        self.log.lock().unwrap().clone()
    }

    pub fn bytes_read(&self) -> u64 {
        self.log.lock().unwrap().iter().map(|r| r.end - r.start).sum()
    }

    pub fn clear(&self) {
        self.log.lock().unwrap().clear();
    }
}

impl<S: ByteSource> ByteSource for CountingSource<S> {
    fn len(&self) -> u64 {
        self.inner.len()
    }

    fn read_at(&self, offset: u64, len: usize) -> Result<Vec<u8>, ReadError> {
        self.log.lock().unwrap().push(offset..offset + len as u64);
        self.inner.read_at(offset, len)
    }
}

/// Index metadata, root directory and offset lists held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedIndex {
    pub meta: IndexMetadata,
    pub index: AnyIndex,
    pub var_offsets: Vec<VarOffsetList>,
}

impl LoadedIndex {
    pub fn key_position(&self) -> usize {
        self.meta.key_position
    }

    pub fn offsets_for(&self, position: usize) -> Option<&[u64]> {
        self.var_offsets
            .iter()
            .find(|l| l.position == position)
            .map(|l| l.offsets.as_slice())
    }
}

/// Rows produced by an index range scan. Because the block is clustered on
/// the key the qualifying rows are always contiguous.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexHits {
    pub rows: Range<u64>,
    pub keys: Vec<Value>,
}

impl IndexHits {
    pub fn row_ids(&self) -> Vec<u64> {
        self.rows.clone().collect()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

/// Reads sections of one serialized block through its header.
pub struct BlockReader<S> {
    src: S,
    meta: BlockMetadata,
}

impl<S: ByteSource> BlockReader<S> {
    pub fn open(src: S) -> Result<Self, ReadError> {
        let size = src.len();
        if size < HEADER_PREFIX_LEN as u64 {
            return Err(FormatError::Truncated("header prefix").into());
        }
        let prefix = src.read_at(0, HEADER_PREFIX_LEN)?;
        let header_len = BlockMetadata::peek_header_len(&prefix)?;
        if header_len > size {
            return Err(FormatError::Truncated("header").into());
        }
        let header = src.read_at(0, header_len as usize)?;
        let meta = BlockMetadata::decode(&header)?;
        meta.validate_tiling(size)?;
        Ok(BlockReader { src, meta })
    }

    pub fn metadata(&self) -> &BlockMetadata {
        &self.meta
    }

    pub fn source(&self) -> &S {
        &self.src
    }

    /// Reads and decodes the whole block.
    pub fn read_full(&self) -> Result<PaxBlock, ReadError> {
        let bytes = self.src.read_at(0, self.src.len() as usize)?;
        Ok(PaxBlock::deserialize(&bytes)?)
    }

    /// Reads and decodes one whole column.
    pub fn read_column(&self, position: usize) -> Result<ColumnData, ReadError> {
        let ty = self
            .meta
            .schema
            .attr_type(position)
            .ok_or(PaxError::PositionOutOfRange {
                position,
                arity: self.meta.schema.len(),
            })?;
        let e = self.meta.columns[position - 1];
        let bytes = self.src.read_at(e.offset, e.length as usize)?;
        Ok(ColumnData::decode(ty, &bytes, self.meta.row_count as usize)?)
    }

    pub fn bad_records(&self) -> Result<Vec<Vec<u8>>, ReadError> {
        let e = self.meta.bad_region;
        if e.length == 0 {
            return Ok(Vec::new());
        }
        let bytes = self.src.read_at(e.offset, e.length as usize)?;
        Ok(decode_bad_region(&bytes, self.meta.bad_count)?)
    }

    /// Loads the index section into memory, `None` for unindexed blocks.
    pub fn load_index(&self) -> Result<Option<LoadedIndex>, ReadError> {
        if !self.meta.has_index() {
            return Ok(None);
        }
        let section = self.meta.index;
        let fixed = IndexMetadata::encoded_len(0);
        if section.length < fixed as u64 {
            return Err(FormatError::Truncated("index metadata").into());
        }
        let mut prefix = self.src.read_at(section.offset, fixed)?;
        let lists = u16::from_le_bytes([prefix[fixed - 2], prefix[fixed - 1]]) as usize;
        let full = IndexMetadata::encoded_len(lists);
        if section.length < full as u64 {
            return Err(FormatError::Truncated("index metadata").into());
        }
        prefix.extend(self.src.read_at(section.offset + fixed as u64, full - fixed)?);
        let meta = IndexMetadata::decode(&prefix)?;

        let inside = |e: crate::pax::Extent| e.offset >= section.offset && e.end() <= section.end();
        if !inside(meta.root) || meta.var_lists.iter().any(|l| !inside(l.extent)) {
            return Err(FormatError::Corrupt("index extents outside index section".into()).into());
        }
        let key_ty = self
            .meta
            .schema
            .attr_type(meta.key_position)
            .ok_or_else(|| FormatError::Corrupt("index key position out of range".into()))?;
        if key_ty != meta.key_type {
            return Err(FormatError::Corrupt("index key type differs from column type".into()).into());
        }
        let root = self.src.read_at(meta.root.offset, meta.root.length as usize)?;
        let index = decode_root(&meta, &root, self.meta.row_count as usize)?;
        let mut var_offsets = Vec::with_capacity(meta.var_lists.len());
        for l in &meta.var_lists {
            let bytes = self.src.read_at(l.extent.offset, l.extent.length as usize)?;
            var_offsets.push(VarOffsetList {
                position: l.position,
                offsets: bytes
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
                    .collect(),
            });
        }
        Ok(Some(LoadedIndex {
            meta,
            index,
            var_offsets,
        }))
    }

    /// Reads the key column for partitions `first..=last` and returns the
    /// rows whose key lies in `[lo, hi]` (open bounds when `None`).
    ///
    /// Only the first and last partition are compared against the bounds;
    /// rows of interior partitions qualify without looking at their keys.
    pub fn read_partitions(
        &self,
        ix: &LoadedIndex,
        first: usize,
        last: usize,
        lo: Option<&Value>,
        hi: Option<&Value>,
    ) -> Result<IndexHits, ReadError> {
        let column = self
            .meta
            .column(ix.key_position())
            .ok_or(PaxError::PositionOutOfRange {
                position: ix.key_position(),
                arity: self.meta.schema.len(),
            })?;
        let ty = ix.index.key_type();
        with_index!(&ix.index, typed => {
            scan_partitions(&self.src, column.offset, typed, ty, first, last, lo, hi)
        })
    }

    /// Fetches the projected attributes of `rows` (ascending row ids).
    ///
    /// Fixed-size values are read by offset. A VARCHAR value is found by
    /// loading partition `row / n` of its column, bounded by the next stored
    /// offset, and walking to the wanted value in memory.
    pub fn reconstruct(
        &self,
        ix: Option<&LoadedIndex>,
        rows: &[u64],
        projection: &[usize],
    ) -> Result<Vec<Record>, ReadError> {
        let row_count = self.meta.row_count;
        if let Some(&bad) = rows.iter().find(|&&r| r >= row_count) {
            return Err(ReadError::RowOutOfRange {
                row: bad,
                rows: row_count,
            });
        }
        debug_assert!(rows.windows(2).all(|w| w[0] < w[1]), "row ids must ascend");
        let mut columns: Vec<Vec<Value>> = Vec::with_capacity(projection.len());
        for &pos in projection {
            let ty = self.meta.schema.attr_type(pos).ok_or(PaxError::PositionOutOfRange {
                position: pos,
                arity: self.meta.schema.len(),
            })?;
            if rows.is_empty() {
                columns.push(Vec::new());
                continue;
            }
            let extent = self.meta.columns[pos - 1];
            let values = match ty.fixed_size() {
                Some(width) => {
                    let (lo, hi) = (rows[0], *rows.last().unwrap());
                    let bytes = self.src.read_at(
                        extent.offset + lo * width as u64,
                        ((hi - lo + 1) * width as u64) as usize,
                    )?;
                    rows.iter()
                        .map(|&r| {
                            let at = ((r - lo) as usize) * width;
                            decode_fixed(ty, &bytes[at..at + width])
                        })
                        .collect()
                }
                None => match ix.and_then(|i| i.offsets_for(pos).map(|o| (i, o))) {
                    Some((ix, offsets)) => {
                        read_var_partitions(&self.src, extent, offsets, ix.meta.partition_size, rows)?
                    }
                    None => {
                        let bytes = self.src.read_at(extent.offset, extent.length as usize)?;
                        let col = VarColumn::from_bytes(bytes, row_count as usize)?;
                        rows.iter()
                            .map(|&r| Value::Varchar(col.get(r as usize).to_owned()))
                            .collect()
                    }
                },
            };
            columns.push(values);
        }
        Ok((0..rows.len())
            .map(|i| Record::new(columns.iter().map(|c| c[i].clone()).collect()))
            .collect())
    }
}

fn decode_fixed(ty: AttrType, bytes: &[u8]) -> Value {
    match ty {
        AttrType::Int32 => Value::Int32(i32::read_le(bytes)),
        AttrType::Date => Value::Date(i32::read_le(bytes)),
        AttrType::Int64 => Value::Int64(i64::read_le(bytes)),
        AttrType::Float64 => Value::Float64(f64::read_le(bytes)),
        AttrType::Ipv4 => Value::Ipv4(u32::read_le(bytes)),
        AttrType::Varchar => unreachable!("not a fixed-size type"),
    }
}

#[allow(clippy::too_many_arguments)]
fn scan_partitions<K: IndexKey, S: ByteSource>(
    src: &S,
    column_offset: u64,
    ix: &super::SparseClusteredIndex<K>,
    ty: AttrType,
    first: usize,
    last: usize,
    lo: Option<&Value>,
    hi: Option<&Value>,
) -> Result<IndexHits, ReadError> {
    let empty = IndexHits {
        rows: 0..0,
        keys: Vec::new(),
    };
    if first > last || last >= ix.partition_count() {
        return Ok(empty);
    }
    let lo = match lo {
        Some(v) => match K::from_value(v) {
            Some(k) => k,
            None => return Ok(empty),
        },
        None => K::min_value(),
    };
    let hi = match hi {
        Some(v) => match K::from_value(v) {
            Some(k) => k,
            None => return Ok(empty),
        },
        None => K::max_value(),
    };
    let start_row = ix.partition_rows(first).start;
    let end_row = ix.partition_rows(last).end;
    let bytes = src.read_at(
        column_offset + (start_row * K::WIDTH) as u64,
        (end_row - start_row) * K::WIDTH,
    )?;
    let keys: Vec<K> = bytes.chunks_exact(K::WIDTH).map(K::read_le).collect();
    let local = |r: Range<usize>| (r.start - start_row)..(r.end - start_row);

    let first_part = local(ix.partition_rows(first));
    let begin =
        first_part.start + keys[first_part.clone()].partition_point(|k| k.key_cmp(&lo) == std::cmp::Ordering::Less);
    let last_part = local(ix.partition_rows(last));
    let end =
        last_part.start + keys[last_part.clone()].partition_point(|k| k.key_cmp(&hi) != std::cmp::Ordering::Greater);
    if begin >= end {
        return Ok(empty);
    }
    Ok(IndexHits {
        rows: (start_row + begin) as u64..(start_row + end) as u64,
        keys: keys[begin..end].iter().map(|k| k.to_value(ty)).collect(),
    })
}

fn read_var_partitions<S: ByteSource>(
    src: &S,
    column: crate::pax::Extent,
    offsets: &[u64],
    partition_size: usize,
    rows: &[u64],
) -> Result<Vec<Value>, ReadError> {
    let n = partition_size as u64;
    let mut out = Vec::with_capacity(rows.len());
    let mut i = 0;
    while i < rows.len() {
        let partition = (rows[i] / n) as usize;
        let start = *offsets
            .get(partition)
            .ok_or_else(|| FormatError::Corrupt("offset list shorter than partition count".into()))?;
        let end = offsets.get(partition + 1).copied().unwrap_or(column.length);
        if end < start || end > column.length {
            return Err(FormatError::Corrupt("offset list out of order".into()).into());
        }
        let bytes = src.read_at(column.offset + start, (end - start) as usize)?;
        let values: Vec<&[u8]> = bytes.split(|&b| b == 0).collect();
        let base = partition as u64 * n;
        while i < rows.len() && rows[i] / n == partition as u64 {
            let local = (rows[i] - base) as usize;
            let raw = values
                .get(local)
                .ok_or_else(|| FormatError::Corrupt("VARCHAR partition too short".into()))?;
            let s = std::str::from_utf8(raw).map_err(|_| FormatError::Corrupt("VARCHAR value is not UTF-8".into()))?;
            out.push(Value::Varchar(s.to_owned()));
            i += 1;
        }
    }
    Ok(out)
}
