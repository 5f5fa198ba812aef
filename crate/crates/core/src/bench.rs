// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Bench scenarios: uploads with a growing number of indexes, queries under
//! three systems, node-kill failover and replication sweeps. Results go to a
//! CSV report and a gnuplot data file; see BENCH.md for the columns.

use std::fmt::Write as _;
use std::fs;
use std::io::{self, BufWriter};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;

use crate::cluster::{Cluster, ClusterConfig, ReplicaConfig};
use crate::datagen::{
    bob_queries, synthetic_queries, synthetic_schema, uservisits_schema, write_synthetic, write_uservisits, NamedQuery,
};
use crate::query::{identity_map, parse_annotation, run_job, slowdown, JobMetrics, JobOptions, KillSpec, Splitting};
use crate::schema::Schema;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("scenario failed at {step}: {reason}")]
    ScenarioFailed { step: String, reason: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

fn failed(step: impl Into<String>, reason: impl ToString) -> BenchError {
    BenchError::ScenarioFailed {
        step: step.into(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dataset {
    UserVisits,
    Synthetic,
}

impl Dataset {
    pub fn schema(self) -> Schema {
        match self {
            Dataset::UserVisits => uservisits_schema(),
            Dataset::Synthetic => synthetic_schema(),
        }
    }

    pub fn write(self, out: impl io::Write, rows: u64, seed: u64) -> io::Result<()> {
        match self {
            Dataset::UserVisits => write_uservisits(out, rows, seed),
            Dataset::Synthetic => write_synthetic(out, rows, seed),
        }
    }

    pub fn queries(self) -> Vec<NamedQuery> {
        match self {
            Dataset::UserVisits => bob_queries(),
            Dataset::Synthetic => synthetic_queries(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchScenario {
    pub name: String,
    pub dataset: Dataset,
    pub rows_per_node: u64,
    /// `cluster.replicas` is the indexed configuration under test.
    pub cluster: ClusterConfig,
    pub queries: Vec<NamedQuery>,
    pub repetitions: usize,
    /// Upload with 0, 1, ..., r indexes.
    pub upload_sweep: bool,
    /// Kill a node after this fraction of the first query's tasks.
    pub failover: Option<f64>,
    /// Upload with r = lo..=hi replicas, each sorted on a different key.
    pub replication_sweep: Option<(usize, usize)>,
    pub seed: u64,
}

impl BenchScenario {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.repetitions == 0 {
            return Err(BenchError::Invalid("repetitions must be at least 1".into()));
        }
        if let Some(f) = self.failover {
            if !(f > 0.0 && f < 1.0) {
                return Err(BenchError::Invalid(format!("failover fraction {f} is not in (0, 1)")));
            }
        }
        if let Some((lo, hi)) = self.replication_sweep {
            if lo == 0 || lo > hi || hi > self.cluster.datanodes {
                return Err(BenchError::Invalid(format!(
                    "replication sweep {lo}..={hi} does not fit {} datanodes",
                    self.cluster.datanodes
                )));
            }
        }
        self.cluster
            .validate()
            .map_err(|e| BenchError::Invalid(e.to_string()))?;
        self.cluster
            .replicas
            .validate(&self.dataset.schema())
            .map_err(|e| BenchError::Invalid(e.to_string()))
    }

    pub fn rows(&self) -> u64 {
        self.rows_per_node * self.cluster.datanodes as u64
    }
}

/// Built-in scenarios: `bob`, `synthetic`, `failover`, `replication`.
pub fn scenario(name: &str) -> Option<BenchScenario> {
    let base = |dataset, keys: &str, rows_per_node| BenchScenario {
        name: name.to_owned(),
        dataset,
        rows_per_node,
        cluster: ClusterConfig {
            datanodes: 5,
            map_slots: 2,
            replicas: keys.parse().unwrap(),
            block_size: 1 << 20,
            partition_size: 1024,
            expiry: Duration::from_secs(2),
            upload_parallelism: 4,
        },
        queries: dataset.queries(),
        repetitions: 3,
        upload_sweep: true,
        failover: None,
        replication_sweep: None,
        seed: 42,
    };
    Some(match name {
        "bob" => base(Dataset::UserVisits, "3,1,4", 20_000),
        "synthetic" => base(Dataset::Synthetic, "1,2,3", 20_000),
        "failover" => BenchScenario {
            upload_sweep: false,
            failover: Some(0.5),
            queries: bob_queries().into_iter().take(1).collect(),
            ..base(Dataset::UserVisits, "3,1,4", 20_000)
        },
        "replication" => BenchScenario {
            cluster: ClusterConfig {
                datanodes: 6,
                ..base(Dataset::Synthetic, "1,2,3", 0).cluster
            },
            upload_sweep: false,
            queries: Vec::new(),
            replication_sweep: Some((3, 6)),
            ..base(Dataset::Synthetic, "1,2,3", 10_000)
        },
        _ => return None,
    })
}

pub const SCENARIOS: [&str; 4] = ["bob", "synthetic", "failover", "replication"];

/// One CSV line.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchRow {
    pub scenario: String,
    /// `upload`, `query`, `failover` or `replication`.
    pub kind: String,
    pub system: String,
    pub label: String,
    pub param: usize,
    pub reps: usize,
    pub mean_s: f64,
    pub min_s: f64,
    pub max_s: f64,
    pub metrics: Option<JobMetrics>,
    pub result_hash: Option<u64>,
    pub equivalent: Option<bool>,
    pub slowdown_pct: Option<f64>,
}

pub const CSV_HEADER: &str = "scenario,kind,system,label,param,reps,mean_s,min_s,max_s,t_ideal_s,t_overhead_s,\
avg_record_reader_s,map_tasks,index_scan_blocks,full_scan_blocks,bytes_read,output_records,result_hash,equivalent,\
slowdown_pct";

impl BenchRow {
    fn csv(&self) -> String {
        let opt = |v: Option<String>| v.unwrap_or_default();
        let m = self.metrics.as_ref();
        [
            self.scenario.clone(),
            self.kind.clone(),
            self.system.clone(),
            self.label.clone(),
            self.param.to_string(),
            self.reps.to_string(),
            format!("{:.6}", self.mean_s),
            format!("{:.6}", self.min_s),
            format!("{:.6}", self.max_s),
            opt(m.map(|m| format!("{:.6}", m.t_ideal))),
            opt(m.map(|m| format!("{:.6}", m.t_overhead))),
            opt(m.map(|m| format!("{:.6}", m.avg_record_reader()))),
            opt(m.map(|m| m.map_tasks.to_string())),
            opt(m.map(|m| m.index_scan_blocks.to_string())),
            opt(m.map(|m| m.full_scan_blocks.to_string())),
            opt(m.map(|m| m.bytes_read.to_string())),
            opt(m.map(|m| m.output_records.to_string())),
            opt(self.result_hash.map(|h| format!("{h:016x}"))),
            opt(self.equivalent.map(|e| e.to_string())),
            opt(self.slowdown_pct.map(|s| format!("{s:.3}"))),
        ]
        .join(",")
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
}

impl BenchReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from(CSV_HEADER);
        s.push('\n');
        for r in &self.rows {
            s.push_str(&r.csv());
            s.push('\n');
        }
        s
    }

    /// Whitespace-separated blocks for gnuplot, one `index` per kind.
    pub fn to_dat(&self) -> String {
        let mut s = String::new();
        for kind in ["upload", "replication", "query", "failover"] {
            let rows: Vec<&BenchRow> = self.rows.iter().filter(|r| r.kind == kind).collect();
            if rows.is_empty() {
                continue;
            }
            writeln!(s, "# {kind}: system label param mean_s min_s max_s equivalent").unwrap();
            for r in rows {
                writeln!(
                    s,
                    "{} {} {} {:.6} {:.6} {:.6} {}",
                    r.system,
                    r.label,
                    r.param,
                    r.mean_s,
                    r.min_s,
                    r.max_s,
                    r.equivalent.map_or(1, |e| e as u8)
                )
                .unwrap();
            }
            s.push_str("\n\n");
        }
        s
    }

    /// Writes `<dir>/<name>.csv` and `<dir>/<name>.dat`.
    pub fn write(&self, dir: &Path, name: &str) -> io::Result<(PathBuf, PathBuf)> {
        fs::create_dir_all(dir)?;
        let csv = dir.join(format!("{name}.csv"));
        let dat = dir.join(format!("{name}.dat"));
        fs::write(&csv, self.to_csv())?;
        fs::write(&dat, self.to_dat())?;
        Ok((csv, dat))
    }
}

fn stats(times: &[f64]) -> (f64, f64, f64) {
    let mean = times.iter().sum::<f64>() / times.len() as f64;
    let min = times.iter().copied().fold(f64::INFINITY, f64::min);
    let max = times.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    (mean, min, max)
}

struct Runner<'a> {
    s: &'a BenchScenario,
    work: PathBuf,
    input: PathBuf,
    clusters: usize,
    report: BenchReport,
}

impl Runner<'_> {
    fn fresh_cluster(&mut self, cfg: ClusterConfig) -> Result<(Arc<Cluster>, PathBuf), BenchError> {
        self.clusters += 1;
        let root = self.work.join(format!("cluster{}", self.clusters));
        if root.exists() {
            fs::remove_dir_all(&root)?;
        }
        let c = Cluster::start(&root, cfg).map_err(|e| failed("cluster start", e))?;
        Ok((c, root))
    }

    /// Uploads into fresh clusters `reps` times; returns the wall times and
    /// the last cluster, still running.
    fn timed_uploads(&mut self, replicas: &ReplicaConfig, step: &str) -> Result<(Vec<f64>, Arc<Cluster>), BenchError> {
        let mut times = Vec::new();
        let mut last = None;
        for rep in 0..self.s.repetitions {
            let cfg = ClusterConfig {
                replicas: replicas.clone(),
                ..self.s.cluster.clone()
            };
            let (c, root) = self.fresh_cluster(cfg)?;
            let report = c
                .upload_file("/data", &self.input, &self.s.dataset.schema(), replicas)
                .map_err(|e| failed(format!("{step} (rep {rep})"), e))?;
            times.push(report.wall.as_secs_f64());
            if let Some((_, old_root)) = last.replace((c, root)) {
                fs::remove_dir_all(old_root)?;
            }
        }
        Ok((times, last.unwrap().0))
    }

    fn push_upload(&mut self, kind: &str, label: String, param: usize, times: &[f64]) {
        let (mean, min, max) = stats(times);
        self.report.rows.push(BenchRow {
            scenario: self.s.name.clone(),
            kind: kind.into(),
            system: "hail".into(),
            label,
            param,
            reps: times.len(),
            mean_s: mean,
            min_s: min,
            max_s: max,
            ..BenchRow::default()
        });
    }

    fn query(&self, c: &Cluster, q: &NamedQuery, opts: &JobOptions) -> Result<(Vec<f64>, JobMetrics, u64), BenchError> {
        let annotation = parse_annotation(&q.annotation).map_err(|e| failed(q.name, e))?;
        let map = identity_map(self.s.dataset.schema().delimiter());
        let mut times = Vec::new();
        let mut last = None;
        for _ in 0..self.s.repetitions {
            let (res, m) = run_job(c, "/data", &annotation, &map, opts).map_err(|e| failed(q.name, e))?;
            times.push(m.t_end_to_end);
            last = Some((m, res.digest()));
        }
        let (m, h) = last.unwrap();
        Ok((times, m, h))
    }

    fn run_queries(&mut self, c: &Cluster) -> Result<(), BenchError> {
        let systems = [
            ("hadoop", Splitting::Default, false),
            ("hail-default", Splitting::Default, true),
            ("hail", Splitting::Hail, true),
        ];
        for (i, q) in self.s.queries.iter().enumerate() {
            let mut reference = None;
            for (system, splitting, use_index) in systems {
                let opts = JobOptions {
                    splitting,
                    use_index,
                    ..JobOptions::default()
                };
                let (times, m, hash) = self.query(c, q, &opts)?;
                let reference = *reference.get_or_insert(hash);
                let (mean, min, max) = stats(&times);
                self.report.rows.push(BenchRow {
                    scenario: self.s.name.clone(),
                    kind: "query".into(),
                    system: system.into(),
                    label: q.name.into(),
                    param: i + 1,
                    reps: times.len(),
                    mean_s: mean,
                    min_s: min,
                    max_s: max,
                    metrics: Some(m),
                    result_hash: Some(hash),
                    equivalent: Some(hash == reference),
                    slowdown_pct: None,
                });
                if hash != reference {
                    return Err(failed(
                        format!("{} under {system}", q.name),
                        "result hash differs from the full-scan result",
                    ));
                }
            }
        }
        Ok(())
    }

    fn run_failover(&mut self, fraction: f64, c: &Cluster, one_idx: &Cluster) -> Result<(), BenchError> {
        let Some(q) = self.s.queries.first().cloned() else {
            return Err(BenchError::Invalid("failover needs a query".into()));
        };
        let runs = [
            ("hadoop", c, Splitting::Default, false),
            ("hail", c, Splitting::Hail, true),
            ("hail-1idx", one_idx, Splitting::Hail, true),
        ];
        let mut reference = None;
        for (system, cluster, splitting, use_index) in runs {
            let base = JobOptions {
                splitting,
                use_index,
                ..JobOptions::default()
            };
            let (times, _, hash) = self.query(cluster, &q, &base)?;
            let (t_b, _, _) = stats(&times);
            let kill = JobOptions {
                kill: Some(KillSpec {
                    datanode: None,
                    fraction,
                }),
                ..base
            };
            let annotation = parse_annotation(&q.annotation).map_err(|e| failed(q.name, e))?;
            let map = identity_map(self.s.dataset.schema().delimiter());
            let (res, mut m) = run_job(cluster, "/data", &annotation, &map, &kill)
                .map_err(|e| failed(format!("{system} failover"), e))?;
            if let Some(v) = m.killed {
                cluster.revive_node(v).map_err(|e| failed("revive", e))?;
            }
            let pct = slowdown(t_b, m.t_end_to_end);
            m.slowdown = Some(pct);
            let reference = *reference.get_or_insert(hash);
            let ok = res.digest() == hash && hash == reference;
            self.report.rows.push(BenchRow {
                scenario: self.s.name.clone(),
                kind: "failover".into(),
                system: system.into(),
                label: q.name.into(),
                param: m.killed.unwrap_or(0) as usize,
                reps: 1,
                mean_s: m.t_end_to_end,
                min_s: t_b,
                max_s: m.t_end_to_end,
                metrics: Some(m),
                result_hash: Some(res.digest()),
                equivalent: Some(ok),
                slowdown_pct: Some(pct),
            });
            if !ok {
                return Err(failed(
                    format!("{system} failover"),
                    "results differ from the failure-free run",
                ));
            }
        }
        Ok(())
    }
}

/// Runs `s`, keeping clusters and the generated input under `work`.
pub fn run_scenario(s: &BenchScenario, work: &Path) -> Result<BenchReport, BenchError> {
    s.validate()?;
    fs::create_dir_all(work)?;
    let input = work.join(format!("{}.txt", s.name));
    s.dataset
        .write(BufWriter::new(fs::File::create(&input)?), s.rows(), s.seed)?;
    let mut r = Runner {
        s,
        work: work.to_path_buf(),
        input,
        clusters: 0,
        report: BenchReport::default(),
    };
    let keys = &s.cluster.replicas.sort_keys;

    let mut indexed = None;
    if s.upload_sweep {
        for k in 0..=s.cluster.replicas.index_count() {
            let mut used = 0;
            let cfg = ReplicaConfig::new(
                keys.iter()
                    .map(|key| {
                        let keep = key.is_some() && used < k;
                        used += keep as usize;
                        key.filter(|_| keep)
                    })
                    .collect(),
            );
            let (times, c) = r.timed_uploads(&cfg, &format!("upload with {k} indexes"))?;
            r.push_upload("upload", format!("indexes={k}"), k, &times);
            indexed = Some(c);
        }
    }
    if let Some((lo, hi)) = s.replication_sweep {
        for rep in lo..=hi {
            let arity = s.dataset.schema().len();
            let cfg = ReplicaConfig::new((0..rep).map(|i| Some(i % arity + 1)).collect());
            let (times, _) = r.timed_uploads(&cfg, &format!("upload with r={rep}"))?;
            r.push_upload("replication", format!("r={rep}"), rep, &times);
        }
    }
    if !s.queries.is_empty() {
        let c = match indexed {
            Some(c) => c,
            None => {
                let (c, _) = r.fresh_cluster(s.cluster.clone())?;
                c.upload_file("/data", &r.input, &s.dataset.schema(), &s.cluster.replicas)
                    .map_err(|e| failed("upload", e))?;
                c
            }
        };
        r.run_queries(&c)?;
        if let Some(f) = s.failover {
            let first = keys.iter().flatten().next().copied();
            let one = ReplicaConfig::new(vec![first; keys.len()]);
            let (one_idx, _) = r.fresh_cluster(ClusterConfig {
                replicas: one.clone(),
                ..s.cluster.clone()
            })?;
            one_idx
                .upload_file("/data", &r.input, &s.dataset.schema(), &one)
                .map_err(|e| failed("upload (one index)", e))?;
            r.run_failover(f, &c, &one_idx)?;
        }
    }
    Ok(r.report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(name: &str) -> BenchScenario {
        let mut s = scenario(name).unwrap();
        s.rows_per_node = 400;
        s.repetitions = 1;
        s.cluster.block_size = 16 * 1024;
        s.cluster.partition_size = 64;
        s.cluster.expiry = Duration::from_millis(100);
        s
    }

    #[test]
    fn bob_report_has_upload_and_five_query_rows_per_system() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_scenario(&tiny("bob"), dir.path()).unwrap();
        let uploads = report.rows.iter().filter(|r| r.kind == "upload").count();
        assert_eq!(uploads, 4);
        for system in ["hadoop", "hail-default", "hail"] {
            let q = report
                .rows
                .iter()
                .filter(|r| r.kind == "query" && r.system == system)
                .count();
            assert_eq!(q, 5, "{system}");
        }
        assert!(report.rows.iter().all(|r| r.equivalent != Some(false)));
        let csv = report.to_csv();
        let header_cols = CSV_HEADER.split(',').count();
        assert!(csv.lines().all(|l| l.split(',').count() == header_cols));
        assert!(report.to_dat().contains("# query"));
    }

    #[test]
    fn failover_reports_slowdown_for_three_systems() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_scenario(&tiny("failover"), dir.path()).unwrap();
        let rows: Vec<_> = report.rows.iter().filter(|r| r.kind == "failover").collect();
        assert_eq!(rows.len(), 3);
        for r in rows {
            let m = r.metrics.as_ref().unwrap();
            assert!(m.killed.is_some());
            assert_eq!(r.slowdown_pct, Some(slowdown(r.min_s, r.mean_s)));
            if r.system == "hail-1idx" {
                assert_eq!(m.rescheduled_index_scans, m.rescheduled_tasks);
            }
        }
    }

    #[test]
    fn replication_sweep_runs_three_to_six() {
        let dir = tempfile::tempdir().unwrap();
        let report = run_scenario(&tiny("replication"), dir.path()).unwrap();
        let params: Vec<usize> = report.rows.iter().map(|r| r.param).collect();
        assert_eq!(params, vec![3, 4, 5, 6]);
    }

    #[test]
    fn invalid_scenarios_are_rejected() {
        let mut s = tiny("bob");
        s.repetitions = 0;
        assert!(matches!(
            run_scenario(&s, Path::new("/nonexistent")),
            Err(BenchError::Invalid(_))
        ));
        let mut s = tiny("failover");
        s.failover = Some(1.0);
        assert!(matches!(s.validate(), Err(BenchError::Invalid(_))));
        let mut s = tiny("replication");
        s.replication_sweep = Some((3, 7));
        assert!(s.validate().is_err());
        assert!(scenario("nope").is_none());
    }
}
