// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Query side: annotations, splitting, scheduling, record readers and
//! map-only jobs.

mod annotation;
mod job;
mod reader;
mod split;

use thiserror::Error;

pub use annotation::{parse_annotation, BoundQuery, Predicate, QueryAnnotation, RawOp, RawPredicate};
pub use job::{
    identity_map, result_digest, run_job, slowdown, JobMetrics, JobOptions, JobResult, KillSpec, MapFn, MapInput,
};
pub use reader::{read_block, read_split, BlockScan, TaskFailure, TaskOutput};
pub use split::{
    choose_replica, default_splitting, hail_splitting, schedule, Assignment, BlockRef, InputSplit, ReplicaChoice,
    ScanMode, Splitting,
};

use crate::cluster::ClusterError;
use crate::index::ReadError;

#[derive(Debug, Error)]
pub enum QueryError {
    #[error("syntax error: {0}")]
    Syntax(String),
    #[error("unknown attribute @{0}")]
    UnknownAttribute(usize),
    #[error("literal '{literal}' does not parse as the type of @{position}")]
    BadLiteral { position: usize, literal: String },
    #[error("between on @{0} has lo > hi")]
    InvalidRange(usize),
    #[error("no alive datanodes")]
    NoAliveNodes,
    #[error("job failed: {0}")]
    JobFailed(String),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
