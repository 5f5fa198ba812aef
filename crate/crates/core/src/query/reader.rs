// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Record readers: index scan with full-scan fallback.

use std::time::{Duration, Instant};

use super::{BoundQuery, InputSplit, ScanMode};
use crate::cluster::{Cluster, DatanodeId};
use crate::index::{BlockReader, ByteSource, LoadedIndex, ReadError};
use crate::schema::{Record, Value};
use crate::transport::BlockId;

/// Output of reading one block.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BlockScan {
    /// Projected qualifying records, in storage order.
    pub records: Vec<Record>,
    /// Raw bad records of the block; always passed through.
    pub bad: Vec<Vec<u8>>,
    pub used_index: bool,
}

/// Reads `reader`'s block under `q`.
///
/// With `use_index` and a replica indexed on a filter attribute the block
/// is index-scanned; any other case scans the needed columns in full.
pub fn read_block<S: ByteSource>(
    reader: &BlockReader<S>,
    q: &BoundQuery,
    use_index: bool,
) -> Result<BlockScan, ReadError> {
    let bad = reader.bad_records()?;
    if use_index {
        if let Some(ix) = reader.load_index()? {
            if q.predicate_on(ix.key_position()).is_some() {
                let records = index_scan(reader, &ix, q)?;
                return Ok(BlockScan {
                    records,
                    bad,
                    used_index: true,
                });
            }
        }
    }
    Ok(BlockScan {
        records: full_scan(reader, q)?,
        bad,
        used_index: false,
    })
}

fn index_scan<S: ByteSource>(
    reader: &BlockReader<S>,
    ix: &LoadedIndex,
    q: &BoundQuery,
) -> Result<Vec<Record>, ReadError> {
    let key = ix.key_position();
    let p = q.predicate_on(key).expect("caller checked the key predicate");
    if p.is_empty() {
        return Ok(Vec::new());
    }
    let Some((first, last)) = ix.index.lookup_values(p.lo.as_ref(), p.hi.as_ref()) else {
        return Ok(Vec::new());
    };
    let hits = reader.read_partitions(ix, first, last, p.lo.as_ref(), p.hi.as_ref())?;
    if hits.is_empty() {
        return Ok(Vec::new());
    }
    // Everything except the key column, which the hits already carry.
    let mut needed: Vec<usize> = Vec::new();
    let residual: Vec<_> = q.predicates.iter().filter(|r| r.position != key).collect();
    for pos in q.projection.iter().copied().chain(residual.iter().map(|r| r.position)) {
        if pos != key && !needed.contains(&pos) {
            needed.push(pos);
        }
    }
    let rows = hits.row_ids();
    let fetched = reader.reconstruct(Some(ix), &rows, &needed)?;
    let mut out = Vec::new();
    for (rec, key_value) in fetched.iter().zip(&hits.keys) {
        let get = |pos: usize| -> &Value {
            if pos == key {
                key_value
            } else {
                &rec.values[needed.iter().position(|&n| n == pos).unwrap()]
            }
        };
        if residual.iter().all(|r| r.matches(get(r.position))) {
            out.push(Record::new(q.projection.iter().map(|&pos| get(pos).clone()).collect()));
        }
    }
    Ok(out)
}

fn full_scan<S: ByteSource>(reader: &BlockReader<S>, q: &BoundQuery) -> Result<Vec<Record>, ReadError> {
    let rows = reader.metadata().row_count as usize;
    let mut needed: Vec<usize> = q.projection.clone();
    for p in &q.predicates {
        if !needed.contains(&p.position) {
            needed.push(p.position);
        }
    }
    needed.sort_unstable();
    needed.dedup();
    if q.predicates.iter().any(|p| p.is_empty()) {
        return Ok(Vec::new());
    }
    let mut columns = Vec::with_capacity(needed.len());
    for &pos in &needed {
        columns.push(reader.read_column(pos)?);
    }
    let col = |pos: usize| &columns[needed.binary_search(&pos).unwrap()];
    let mut out = Vec::new();
    for row in 0..rows {
        if q.predicates.iter().all(|p| p.matches(&col(p.position).value(row))) {
            out.push(Record::new(
                q.projection.iter().map(|&pos| col(pos).value(row)).collect(),
            ));
        }
    }
    Ok(out)
}

/// Why a task attempt failed.
#[derive(Debug)]
pub struct TaskFailure {
    /// Block being read, `None` when the executing node itself died.
    pub block: Option<BlockId>,
    pub datanode: DatanodeId,
    pub error: ReadError,
}

/// Output of one task attempt.
#[derive(Debug, Clone, Default)]
pub struct TaskOutput {
    pub records: Vec<Record>,
    pub bad: Vec<Vec<u8>>,
    pub index_scans: usize,
    pub full_scans: usize,
    pub reader_time: Duration,
}

/// Reads every block of `split` on behalf of a task running on `executor`.
pub fn read_split(
    cluster: &Cluster,
    split: &InputSplit,
    q: &BoundQuery,
    executor: DatanodeId,
) -> Result<TaskOutput, TaskFailure> {
    let start = Instant::now();
    let mut out = TaskOutput::default();
    for r in &split.blocks {
        let fail = |error| TaskFailure {
            block: Some(r.block),
            datanode: r.target,
            error,
        };
        let reader = cluster.open_replica(r.block, r.target).map_err(fail)?;
        let scan = read_block(&reader, q, split.mode == ScanMode::IndexScan).map_err(fail)?;
        if scan.used_index {
            out.index_scans += 1;
        } else {
            out.full_scans += 1;
        }
        out.records.extend(scan.records);
        out.bad.extend(scan.bad);
    }
    out.reader_time = start.elapsed();
    // A task whose node died while it ran is lost with the node.
    if !cluster.datanode(executor).is_some_and(|d| d.is_alive()) {
        return Err(TaskFailure {
            block: None,
            datanode: executor,
            error: ReadError::Unavailable(format!("datanode {executor} died while running the task")),
        });
    }
    Ok(out)
}
