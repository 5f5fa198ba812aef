// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Content-aware block storage with per-replica clustered indexes.
//!
//! Text files are cut into blocks on row boundaries, converted to a
//! column-grouped binary layout, and uploaded through a replication
//! pipeline in which every replica sorts its copy on a different
//! attribute and builds a sparse clustered index. Queries pick the
//! replica whose index matches their filter.

pub(crate) mod codec;

pub mod bench;
pub mod blocks;
pub mod cluster;
pub mod datagen;
pub mod index;
pub mod pax;
pub mod query;
pub mod schema;
pub mod transport;

pub use blocks::{cut_blocks, BlockCutter, LogicalBlock};
pub use index::{AnyIndex, IndexKey, SparseClusteredIndex};
pub use pax::PaxBlock;
pub use schema::{AttrType, Record, Schema, Value};

pub type Int32Index = SparseClusteredIndex<i32>;
pub type Int64Index = SparseClusteredIndex<i64>;
pub type Float64Index = SparseClusteredIndex<f64>;
/// Dates are stored as days since 1970-01-01.
pub type DateIndex = SparseClusteredIndex<i32>;
pub type Ipv4Index = SparseClusteredIndex<u32>;
