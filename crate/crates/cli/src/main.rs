// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! `hail`: generate data, upload it, query it, break nodes and benchmark.
//!
//! Exit codes: 0 success, 1 runtime error, 2 usage error, 3 bench scenario
//! failure.

use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use hail_core::bench::{run_scenario, scenario, BenchError, Dataset, SCENARIOS};
use hail_core::cluster::{Cluster, ClusterConfig, ReplicaConfig};
use hail_core::index::BlockReader;
use hail_core::query::{identity_map, parse_annotation, run_job, JobOptions, Splitting};
use hail_core::transport::BlockId;
use hail_core::Schema;

#[derive(Parser, Debug)]
#[command(name = "hail", version, about = "Per-replica indexed block store")]
struct Cli {
    /// Directory holding the cluster's datanodes and namespace.
    #[arg(long, global = true, default_value = "hail-data")]
    root: PathBuf,
    /// Cluster config file; defaults to <root>/cluster.conf, then built-ins.
    #[arg(long, global = true)]
    cluster_config: Option<PathBuf>,
    /// Schema config file (`attr <pos> <name> <type>` lines).
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[arg(long, global = true, default_value = "hail")]
    splitting: String,
    /// Filter conjunction, e.g. `@3 between(1999-01-01,2000-01-01)`.
    #[arg(long, global = true)]
    filter: Option<String>,
    /// Projected positions, e.g. `@1,@4`.
    #[arg(long, global = true)]
    projection: Option<String>,
    /// Replication factor; unsorted replicas unless --sort-keys is given.
    #[arg(long, global = true)]
    replication: Option<usize>,
    /// Sort key per replica, e.g. `3,1,none`.
    #[arg(long, global = true)]
    sort_keys: Option<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DatasetArg {
    Uservisits,
    Synthetic,
}

impl From<DatasetArg> for Dataset {
    fn from(d: DatasetArg) -> Dataset {
        match d {
            DatasetArg::Uservisits => Dataset::UserVisits,
            DatasetArg::Synthetic => Dataset::Synthetic,
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a dataset; with --schema also write its schema file.
    Gen {
        #[arg(long, value_enum, default_value = "uservisits")]
        dataset: DatasetArg,
        #[arg(long)]
        rows: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Upload a text file into the cluster.
    Upload {
        input: PathBuf,
        /// Namespace path of the new file.
        #[arg(long, default_value = "/data")]
        path: String,
        /// Use a built-in dataset schema instead of --schema.
        #[arg(long, value_enum)]
        dataset: Option<DatasetArg>,
    },
    /// Run a map-only selection/projection job.
    Query {
        #[arg(long, default_value = "/data")]
        path: String,
        /// Full annotation text; overrides --filter/--projection.
        #[arg(long)]
        annotation: Option<String>,
        /// Force full scans.
        #[arg(long)]
        no_index: bool,
        /// Result file; stdout when absent.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Write job metrics as key=value lines.
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Run a bench scenario and write <out>/<scenario>.csv and .dat.
    Bench {
        scenario: String,
        #[arg(long, default_value = "bench-out")]
        out: PathBuf,
        /// Scratch space for generated input and clusters.
        #[arg(long)]
        work: Option<PathBuf>,
        #[arg(long)]
        rows_per_node: Option<u64>,
        #[arg(long)]
        repetitions: Option<usize>,
    },
    /// Kill a datanode (persists across invocations).
    Kill { datanode: u32 },
    /// Bring a killed datanode back.
    Revive { datanode: u32 },
    /// Dump block headers and index metadata.
    Inspect {
        /// A `.hail` file to read directly.
        file: Option<PathBuf>,
        #[arg(long, default_value = "/data")]
        path: String,
        #[arg(long, default_value_t = 0)]
        block: u32,
        /// Only this replica.
        #[arg(long)]
        datanode: Option<u32>,
    },
}

#[derive(Debug)]
enum Failure {
    Usage(String),
    Runtime(String),
    Scenario(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => e.exit(),
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("hail: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("hail: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Scenario(m)) => {
            eprintln!("hail: {m}");
            ExitCode::from(3)
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match &cli.command {
        Command::Gen { dataset, rows, out } => {
            let d = Dataset::from(*dataset);
            d.write(BufWriter::new(fs::File::create(out)?), *rows, cli.seed)?;
            if let Some(s) = &cli.schema {
                fs::write(s, d.schema().to_config())?;
            }
            Ok(())
        }
        Command::Upload { input, path, dataset } => {
            let schema = match (dataset, &cli.schema) {
                (Some(d), _) => Dataset::from(*d).schema(),
                (None, Some(p)) => read_schema(p)?,
                (None, None) => return Err(Failure::Usage("upload needs --schema or --dataset".into())),
            };
            let cluster = start(&cli)?;
            let replicas = replicas(&cli, cluster.config())?;
            let r = cluster.upload_file(path, input, &schema, &replicas)?;
            println!(
                "uploaded {} as file {}: {} blocks, {} rows, {} bad, {} -> {} bytes in {:.3}s",
                r.path,
                r.file_id,
                r.blocks,
                r.rows,
                r.bad_records,
                r.input_bytes,
                r.stored_bytes,
                r.wall.as_secs_f64()
            );
            Ok(())
        }
        Command::Query {
            path,
            annotation,
            no_index,
            output,
            metrics,
        } => {
            let text = match annotation {
                Some(a) => a.clone(),
                None => annotation_text(cli.filter.as_deref(), cli.projection.as_deref()),
            };
            let a = parse_annotation(&text).map_err(|e| Failure::Usage(e.to_string()))?;
            let splitting: Splitting = cli.splitting.parse().map_err(Failure::Usage)?;
            let cluster = start(&cli)?;
            let delimiter = cluster.file_schema(path)?.delimiter();
            let opts = JobOptions {
                splitting,
                use_index: !no_index,
                output: output.clone(),
                ..JobOptions::default()
            };
            let (res, m) = run_job(&cluster, path, &a, &identity_map(delimiter), &opts)?;
            if output.is_none() {
                let mut out = BufWriter::new(io::stdout().lock());
                for l in &res.lines {
                    writeln!(out, "{l}")?;
                }
            }
            if let Some(p) = metrics {
                fs::write(p, m.to_kv())?;
            }
            eprintln!(
                "{} records, {} bad, {} map tasks, {:.3}s",
                m.output_records, m.bad_records, m.map_tasks, m.t_end_to_end
            );
            Ok(())
        }
        Command::Bench {
            scenario: name,
            out,
            work,
            rows_per_node,
            repetitions,
        } => {
            let mut s = scenario(name).ok_or_else(|| {
                Failure::Usage(format!(
                    "unknown scenario '{name}', expected one of {}",
                    SCENARIOS.join(", ")
                ))
            })?;
            s.seed = cli.seed;
            if let Some(r) = rows_per_node {
                s.rows_per_node = *r;
            }
            if let Some(r) = repetitions {
                s.repetitions = *r;
            }
            if let Some(p) = &cli.cluster_config {
                s.cluster = read_config(p)?;
            }
            let work = work.clone().unwrap_or_else(|| out.join("work"));
            let report = run_scenario(&s, &work).map_err(|e| match e {
                BenchError::Invalid(m) => Failure::Usage(m),
                other => Failure::Scenario(other.to_string()),
            })?;
            let (csv, dat) = report.write(out, name)?;
            println!("{}\n{}", csv.display(), dat.display());
            Ok(())
        }
        Command::Kill { datanode } => liveness(&cli, *datanode, false),
        Command::Revive { datanode } => liveness(&cli, *datanode, true),
        Command::Inspect {
            file,
            path,
            block,
            datanode,
        } => {
            if let Some(f) = file {
                let bytes = fs::read(f)?;
                print!("{}", describe(BlockReader::open(bytes.as_slice())?)?);
                return Ok(());
            }
            let cluster = start(&cli)?;
            let id = BlockId::new(cluster.file(path)?.id, *block);
            let mut hosts = cluster.namenode().get_hosts(id)?;
            hosts.sort_unstable();
            for dn in hosts.into_iter().filter(|d| datanode.is_none_or(|want| want == *d)) {
                println!("== block {id} on dn{dn}");
                print!("{}", describe(cluster.open_replica(id, dn)?)?);
            }
            Ok(())
        }
    }
}

fn annotation_text(filter: Option<&str>, projection: Option<&str>) -> String {
    let mut parts = Vec::new();
    if let Some(f) = filter {
        parts.push(format!("filter=\"{f}\""));
    }
    if let Some(p) = projection {
        let p = p.trim().trim_start_matches('{').trim_end_matches('}');
        parts.push(format!("projection={{{p}}}"));
    }
    parts.join(", ")
}

fn read_schema(p: &Path) -> Result<Schema, Failure> {
    let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
    Schema::parse_config(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
}

fn read_config(p: &Path) -> Result<ClusterConfig, Failure> {
    let text = fs::read_to_string(p).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))?;
    ClusterConfig::parse(&text).map_err(|e| Failure::Usage(format!("{}: {e}", p.display())))
}

/// Explicit config, else the one saved with the cluster, else defaults. The
/// chosen config is saved so later invocations see the same cluster.
fn config(cli: &Cli) -> Result<ClusterConfig, Failure> {
    let saved = cli.root.join("cluster.conf");
    let cfg = match &cli.cluster_config {
        Some(p) => read_config(p)?,
        None if saved.exists() => read_config(&saved)?,
        None => ClusterConfig::default(),
    };
    fs::create_dir_all(&cli.root)?;
    fs::write(saved, cfg.to_text())?;
    Ok(cfg)
}

fn start(cli: &Cli) -> Result<Arc<Cluster>, Failure> {
    let cfg = config(cli)?;
    Ok(Cluster::start(&cli.root, cfg)?)
}

fn replicas(cli: &Cli, cfg: &ClusterConfig) -> Result<ReplicaConfig, Failure> {
    let keys = match &cli.sort_keys {
        Some(k) => Some(
            k.parse::<ReplicaConfig>()
                .map_err(|e| Failure::Usage(format!("--sort-keys: {e}")))?,
        ),
        None => None,
    };
    match (keys, cli.replication) {
        (Some(k), Some(r)) if k.replication() != r => Err(Failure::Usage(format!(
            "--replication {r} disagrees with {} sort keys",
            k.replication()
        ))),
        (Some(k), _) => Ok(k),
        (None, Some(r)) => Ok(ReplicaConfig::unsorted(r)),
        (None, None) => Ok(cfg.replicas.clone()),
    }
}

fn liveness(cli: &Cli, id: u32, alive: bool) -> Result<(), Failure> {
    let cfg = config(cli)?;
    if id == 0 || id as usize > cfg.datanodes {
        return Err(Failure::Usage(format!(
            "no datanode {id}; ids run from 1 to {}",
            cfg.datanodes
        )));
    }
    // Starting the cluster creates the datanode directories if needed.
    drop(Cluster::start(&cli.root, cfg)?);
    Cluster::persist_liveness(&cli.root, id, alive)?;
    println!("dn{id} {}", if alive { "revived" } else { "killed" });
    Ok(())
}

fn describe<S: hail_core::index::ByteSource>(reader: BlockReader<S>) -> Result<String, Failure> {
    let m = reader.metadata();
    let mut s = String::new();
    let mut line = |l: String| {
        s.push_str(&l);
        s.push('\n');
    };
    line(format!("version      {}", m.version));
    line(format!("header_len   {}", m.header_len));
    line(format!("rows         {}", m.row_count));
    line(format!("bad_records  {}", m.bad_count));
    for (attr, e) in m.schema.attributes().iter().zip(&m.columns) {
        line(format!(
            "column @{} {} {}  offset {} length {}",
            attr.position, attr.name, attr.ty, e.offset, e.length
        ));
    }
    line(format!(
        "bad_region   offset {} length {}",
        m.bad_region.offset, m.bad_region.length
    ));
    match reader.load_index()? {
        None => line("index        none".into()),
        Some(ix) => {
            let n = ix.meta.partition_size as u64;
            line(format!(
                "index        offset {} length {}",
                m.index.offset, m.index.length
            ));
            line(format!("index_type   {:?}", ix.meta.index_type));
            line(format!("key          @{} {}", ix.meta.key_position, ix.meta.key_type));
            line(format!("partition    {n}"));
            line(format!(
                "root_entries {} (ceil(rows/n) = {})",
                ix.meta.root_entries,
                m.row_count.div_ceil(n)
            ));
            for l in &ix.meta.var_lists {
                line(format!("var_offsets  @{} entries {}", l.position, l.entries));
            }
        }
    }
    Ok(s)
}
