// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Map-only jobs: split, schedule, read, map, collect.

use std::collections::{BTreeMap, HashMap, HashSet, VecDeque};
use std::fmt::Write as _;
use std::hash::{Hash, Hasher};
use std::path::PathBuf;
use std::sync::{Condvar, Mutex};
use std::time::{Duration, Instant};

use super::reader::{read_split, TaskFailure, TaskOutput};
use super::split::{choose_replica, default_splitting, hail_splitting};
use super::{BlockRef, BoundQuery, InputSplit, QueryAnnotation, QueryError, ScanMode, Splitting};
use crate::cluster::{Cluster, DatanodeId};
use crate::index::ReadError;
use crate::schema::Record;
use crate::transport::BlockId;

/// What the map function sees.
#[derive(Debug, Clone, Copy)]
pub enum MapInput<'a> {
    Record(&'a Record),
    /// A row that did not parse under the schema, flagged as bad.
    Bad(&'a [u8]),
}

/// A map function emits zero or one output line per input.
pub type MapFn<'a> = dyn Fn(MapInput<'_>) -> Option<String> + Sync + 'a;

/// Emits each record as a delimited line and drops bad records.
pub fn identity_map(delimiter: u8) -> impl Fn(MapInput<'_>) -> Option<String> + Sync {
    move |input| match input {
        MapInput::Record(r) => Some(r.to_line(delimiter)),
        MapInput::Bad(_) => None,
    }
}

/// Kill a datanode once a fraction of the tasks have finished.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KillSpec {
    /// `None` picks the node with the most unfinished work, lowest id on ties.
    pub datanode: Option<DatanodeId>,
    /// In (0, 1).
    pub fraction: f64,
}

#[derive(Debug, Clone)]
pub struct JobOptions {
    pub splitting: Splitting,
    /// `false` forces full scans everywhere.
    pub use_index: bool,
    pub kill: Option<KillSpec>,
    /// Where to write the result lines.
    pub output: Option<PathBuf>,
    /// Attempts per task before the job fails.
    pub max_attempts: usize,
}

impl Default for JobOptions {
    fn default() -> Self {
        JobOptions {
            splitting: Splitting::Hail,
            use_index: true,
            kill: None,
            output: None,
            max_attempts: 4,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct JobResult {
    pub lines: Vec<String>,
    pub bad_records: usize,
}

impl JobResult {
    /// Order-insensitive digest of the output lines.
    pub fn digest(&self) -> u64 {
        result_digest(&self.lines)
    }
}

/// Hash of the sorted lines, stable across runs.
pub fn result_digest(lines: &[String]) -> u64 {
    let mut sorted: Vec<&String> = lines.iter().collect();
    sorted.sort_unstable();
    let mut h = std::collections::hash_map::DefaultHasher::new();
    sorted.hash(&mut h);
    h.finish()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct JobMetrics {
    pub t_end_to_end: f64,
    /// Seconds per successful task.
    pub record_reader_times: Vec<f64>,
    pub t_ideal: f64,
    pub t_overhead: f64,
    pub map_tasks: usize,
    pub parallel_map_tasks: usize,
    pub attempts: usize,
    pub local_tasks: usize,
    pub remote_tasks: usize,
    pub rescheduled_tasks: usize,
    /// Rescheduled tasks whose every block was index-scanned.
    pub rescheduled_index_scans: usize,
    pub index_scan_blocks: usize,
    pub full_scan_blocks: usize,
    pub output_records: usize,
    pub bad_records: usize,
    pub bytes_read: u64,
    pub killed: Option<DatanodeId>,
    /// Set by the caller when comparing against a failure-free run.
    pub slowdown: Option<f64>,
}

/// Percentage slowdown of a run with failures `t_f` over a baseline `t_b`.
pub fn slowdown(t_b: f64, t_f: f64) -> f64 {
    (t_f - t_b) / t_b * 100.0
}

impl JobMetrics {
    pub fn avg_record_reader(&self) -> f64 {
        if self.record_reader_times.is_empty() {
            0.0
        } else {
            self.record_reader_times.iter().sum::<f64>() / self.record_reader_times.len() as f64
        }
    }

    /// Fills `t_ideal` and `t_overhead` from the recorded times.
    pub fn finish(&mut self) {
        self.t_ideal = if self.parallel_map_tasks == 0 {
            0.0
        } else {
            self.map_tasks as f64 / self.parallel_map_tasks as f64 * self.avg_record_reader()
        };
        self.t_overhead = self.t_end_to_end - self.t_ideal;
    }

    /// Flat `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("t_end_to_end", format!("{:.6}", self.t_end_to_end));
        kv("t_ideal", format!("{:.6}", self.t_ideal));
        kv("t_overhead", format!("{:.6}", self.t_overhead));
        kv("avg_record_reader", format!("{:.6}", self.avg_record_reader()));
        kv("map_tasks", self.map_tasks.to_string());
        kv("parallel_map_tasks", self.parallel_map_tasks.to_string());
        kv("attempts", self.attempts.to_string());
        kv("local_tasks", self.local_tasks.to_string());
        kv("remote_tasks", self.remote_tasks.to_string());
        kv("rescheduled_tasks", self.rescheduled_tasks.to_string());
        kv("rescheduled_index_scans", self.rescheduled_index_scans.to_string());
        kv("index_scan_blocks", self.index_scan_blocks.to_string());
        kv("full_scan_blocks", self.full_scan_blocks.to_string());
        kv("output_records", self.output_records.to_string());
        kv("bad_records", self.bad_records.to_string());
        kv("bytes_read", self.bytes_read.to_string());
        kv("killed", self.killed.map_or("none".into(), |d| d.to_string()));
        kv("slowdown", self.slowdown.map_or("none".into(), |v| format!("{v:.3}")));
        s
    }
}

struct Task {
    split: InputSplit,
    attempts: usize,
    not_before: Instant,
    rescheduled: bool,
    excluded: HashSet<(BlockId, DatanodeId)>,
}

#[derive(Default)]
struct Queue {
    pending: VecDeque<Task>,
    /// Executor of each running task.
    running: HashMap<usize, DatanodeId>,
    busy: HashMap<DatanodeId, usize>,
    workers: HashMap<DatanodeId, usize>,
    done: usize,
    failed: Option<QueryError>,
    killed: bool,
    result: JobResult,
    metrics: JobMetrics,
}

struct Job<'a> {
    cluster: &'a Cluster,
    q: BoundQuery,
    map: &'a MapFn<'a>,
    opts: &'a JobOptions,
    slots: usize,
    total: usize,
    queue: Mutex<Queue>,
    wake: Condvar,
}

/// Runs a map-only job over the file at `path`.
pub fn run_job(
    cluster: &Cluster,
    path: &str,
    annotation: &QueryAnnotation,
    map: &MapFn<'_>,
    opts: &JobOptions,
) -> Result<(JobResult, JobMetrics), QueryError> {
    let start = Instant::now();
    let schema = cluster.file_schema(path)?;
    let q = annotation.bind(&schema)?;
    let blocks = cluster.file(path)?.block_ids();
    let slots = cluster.config().map_slots;
    let nn = cluster.namenode();

    let mut splits = match opts.splitting {
        Splitting::Hail if opts.use_index => hail_splitting(&blocks, nn, &q, slots)?,
        _ => default_splitting(&blocks, nn, &q)?,
    };
    if !opts.use_index {
        splits.iter_mut().for_each(|s| s.mode = ScanMode::FullScan);
    }
    let alive: Vec<DatanodeId> = cluster
        .running_datanodes()
        .into_iter()
        .filter(|&d| nn.is_live(d))
        .collect();
    if alive.is_empty() {
        return Err(QueryError::NoAliveNodes);
    }

    let stats_before = cluster.stats();
    let now = Instant::now();
    let mut queue = Queue {
        pending: splits
            .into_iter()
            .map(|split| Task {
                split,
                attempts: 0,
                not_before: now,
                rescheduled: false,
                excluded: HashSet::new(),
            })
            .collect(),
        ..Queue::default()
    };
    queue.metrics.map_tasks = queue.pending.len();
    queue.metrics.parallel_map_tasks = alive.len() * slots;
    for &dn in &alive {
        queue.workers.insert(dn, slots);
    }
    let job = Job {
        cluster,
        total: queue.pending.len(),
        q,
        map,
        opts,
        slots,
        queue: Mutex::new(queue),
        wake: Condvar::new(),
    };
    std::thread::scope(|s| {
        for &dn in &alive {
            for _ in 0..slots {
                let job = &job;
                s.spawn(move || job.worker(dn));
            }
        }
    });

    let mut queue = job.queue.into_inner().unwrap();
    if let Some(e) = queue.failed.take() {
        return Err(e);
    }
    let mut metrics = queue.metrics;
    let result = queue.result;
    metrics.output_records = result.lines.len();
    metrics.bad_records = result.bad_records;
    metrics.bytes_read = cluster.stats().bytes_read - stats_before.bytes_read;
    if let Some(out) = &opts.output {
        let mut text = result.lines.join("\n");
        if !text.is_empty() {
            text.push('\n');
        }
        std::fs::write(out, text)?;
    }
    metrics.t_end_to_end = start.elapsed().as_secs_f64();
    metrics.finish();
    Ok((result, metrics))
}

const IDLE_WAIT: Duration = Duration::from_millis(2);

impl Job<'_> {
    fn node_alive(&self, dn: DatanodeId) -> bool {
        self.cluster.datanode(dn).is_some_and(|d| d.is_alive())
    }

    fn worker(&self, dn: DatanodeId) {
        loop {
            let Some((task, local)) = self.next_task(dn) else {
                return;
            };
            let result = read_split(self.cluster, &task.split, &self.q, dn);
            let mapped = result.map(|out| {
                let lines: Vec<String> = out
                    .records
                    .iter()
                    .map(MapInput::Record)
                    .chain(out.bad.iter().map(|b| MapInput::Bad(b)))
                    .filter_map(|i| (self.map)(i))
                    .collect();
                (out, lines)
            });
            self.complete(dn, task, local, mapped);
        }
    }

    /// Blocks until there is a task for `dn`, or returns `None` when the job
    /// is over or `dn` has died.
    fn next_task(&self, dn: DatanodeId) -> Option<(Task, bool)> {
        let mut g = self.queue.lock().unwrap();
        loop {
            if g.failed.is_some() || g.done == self.total {
                return None;
            }
            if !self.node_alive(dn) {
                let w = g.workers.get_mut(&dn).unwrap();
                *w -= 1;
                if *w == 0 {
                    g.workers.remove(&dn);
                }
                if g.workers.is_empty() {
                    g.failed = Some(QueryError::NoAliveNodes);
                }
                self.wake.notify_all();
                return None;
            }
            let now = Instant::now();
            let ready = |t: &Task| t.not_before <= now;
            let pick = g
                .pending
                .iter()
                .position(|t| ready(t) && t.split.target() == dn)
                .map(|i| (i, true))
                .or_else(|| {
                    g.pending
                        .iter()
                        .position(|t| {
                            let target = t.split.target();
                            ready(t)
                                && (!g.workers.contains_key(&target)
                                    || g.busy.get(&target).copied().unwrap_or(0) >= self.slots)
                        })
                        .map(|i| (i, false))
                });
            if let Some((i, local)) = pick {
                let mut task = g.pending.remove(i).unwrap();
                if task.rescheduled {
                    if let Err(e) = self.retarget(&mut task) {
                        g.failed = Some(e);
                        self.wake.notify_all();
                        return None;
                    }
                }
                task.attempts += 1;
                *g.busy.entry(dn).or_default() += 1;
                g.running.insert(task.split.id, dn);
                g.metrics.attempts += 1;
                return Some((task, local));
            }
            g = self.wake.wait_timeout(g, IDLE_WAIT).unwrap().0;
        }
    }

    /// Points every block of a retried task at a usable replica.
    fn retarget(&self, task: &mut Task) -> Result<(), QueryError> {
        let nn = self.cluster.namenode();
        let mut any_index = false;
        for r in task.split.blocks.iter_mut() {
            let choice = choose_replica(nn, r.block, &self.q, &task.excluded)?
                .ok_or_else(|| QueryError::JobFailed(format!("block {} has no alive replica", r.block)))?;
            *r = BlockRef {
                block: r.block,
                target: choice.datanode,
            };
            any_index |= choice.indexed.is_some();
        }
        task.split.mode = if any_index && self.opts.use_index {
            ScanMode::IndexScan
        } else {
            ScanMode::FullScan
        };
        Ok(())
    }

    fn complete(
        &self,
        dn: DatanodeId,
        mut task: Task,
        local: bool,
        result: Result<(TaskOutput, Vec<String>), TaskFailure>,
    ) {
        let mut g = self.queue.lock().unwrap();
        *g.busy.get_mut(&dn).unwrap() -= 1;
        g.running.remove(&task.split.id);
        match result {
            Ok((out, lines)) => {
                g.done += 1;
                let m = &mut g.metrics;
                m.record_reader_times.push(out.reader_time.as_secs_f64());
                m.index_scan_blocks += out.index_scans;
                m.full_scan_blocks += out.full_scans;
                if local {
                    m.local_tasks += 1;
                } else {
                    m.remote_tasks += 1;
                }
                if task.rescheduled {
                    m.rescheduled_tasks += 1;
                    if out.full_scans == 0 {
                        m.rescheduled_index_scans += 1;
                    }
                }
                g.result.bad_records += out.bad.len();
                g.result.lines.extend(lines);
                self.maybe_kill(&mut g);
            }
            Err(f) => {
                if task.attempts >= self.opts.max_attempts {
                    g.failed = Some(QueryError::JobFailed(format!(
                        "split {} failed {} times, last on datanode {}: {}",
                        task.split.id, task.attempts, f.datanode, f.error
                    )));
                } else {
                    let nn = self.cluster.namenode();
                    let dead = matches!(f.error, ReadError::Unavailable(_));
                    if dead {
                        // The scheduler learns about a dead node only once
                        // the namenode's expiry interval has passed.
                        task.not_before = nn.declared_dead_at(f.datanode).unwrap_or_else(Instant::now);
                        for r in &task.split.blocks {
                            task.excluded.insert((r.block, f.datanode));
                        }
                    } else if let Some(b) = f.block {
                        task.excluded.insert((b, f.datanode));
                    }
                    task.rescheduled = true;
                    g.pending.push_front(task);
                }
            }
        }
        self.wake.notify_all();
    }

    fn maybe_kill(&self, g: &mut Queue) {
        let Some(spec) = self.opts.kill else { return };
        if g.killed || (g.done as f64) < spec.fraction * self.total as f64 {
            return;
        }
        g.killed = true;
        let victim = spec.datanode.or_else(|| {
            let mut load: BTreeMap<DatanodeId, usize> = BTreeMap::new();
            for dn in g.running.values() {
                *load.entry(*dn).or_default() += 1;
            }
            for t in &g.pending {
                *load.entry(t.split.target()).or_default() += 1;
            }
            load.retain(|dn, _| self.node_alive(*dn));
            // Max load, lowest id on ties.
            load.into_iter()
                .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
                .map(|(dn, _)| dn)
        });
        if let Some(v) = victim {
            if self.cluster.kill_node(v).is_ok() {
                g.metrics.killed = Some(v);
            }
        }
    }
}
