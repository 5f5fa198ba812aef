// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! A simulated cluster: one namenode and a set of datanodes running as
//! in-process actors, plus the upload client.
//!
//! Storage layout under the cluster root:
//!
//! ```text
//! <root>/dn<i>/<file>_<block>.hail   replica data
//! <root>/dn<i>/<file>_<block>.crc    its checksums
//! <root>/dn<i>/DEAD                  present while the node is killed
//! <root>/namenode/namespace          committed files
//! <root>/namenode/<file>.schema      schema of each file
//! ```

mod config;
mod datanode;
mod namenode;

pub use config::{ClusterConfig, ReplicaConfig};
pub use datanode::{BlockFile, Datanode, DatanodeStats, StatsSnapshot};
pub use namenode::{DatanodeId, FileEntry, Namenode, ReplicaInfo};

use std::fmt;
use std::fs;
use std::io::{self, BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::mpsc::{self, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::blocks::{BlockCutter, LogicalBlock};
use crate::index::{BlockReader, ReadError};
use crate::pax::to_pax;
use crate::schema::{Schema, SchemaError};
use crate::transport::{packetize, AckKind, AckStatus, BlockId, BlockSetup, CorruptAt, Frame};

use datanode::Network;

/// Longest the client waits for the next ACK before giving up.
const ACK_TIMEOUT: Duration = Duration::from_secs(120);

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error("need {needed} live datanodes but only {alive} are available")]
    InsufficientDatanodes { alive: usize, needed: usize },
    #[error("unknown block {0}")]
    UnknownBlock(BlockId),
    #[error("unknown datanode {0}")]
    UnknownDatanode(DatanodeId),
    #[error("file {0} already exists")]
    FileExists(String),
    #[error("no such file {0}")]
    UnknownFile(String),
    #[error("upload failed: {}", describe_failures(.0))]
    UploadFailed(Vec<(BlockId, UploadFailure)>),
    #[error(transparent)]
    Read(#[from] ReadError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

fn describe_failures(f: &[(BlockId, UploadFailure)]) -> String {
    f.iter()
        .map(|(b, why)| format!("block {b}: {why}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Why a single block did not make it into the cluster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UploadFailure {
    Corrupt {
        detected_by: DatanodeId,
        seq: u64,
        at: CorruptAt,
    },
    Failed {
        datanode: Option<DatanodeId>,
        reason: String,
    },
    Unreachable(DatanodeId),
    AckOutOfOrder {
        expected: u64,
        got: u64,
    },
    Disconnected,
    InsufficientDatanodes,
}

impl UploadFailure {
    pub fn is_corrupt(&self) -> bool {
        matches!(self, UploadFailure::Corrupt { .. })
    }
}

impl fmt::Display for UploadFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            UploadFailure::Corrupt { detected_by, seq, at } => {
                write!(f, "dn{detected_by} found packet {seq} corrupt at {at:?}")
            }
            UploadFailure::Failed {
                datanode: Some(d),
                reason,
            } => write!(f, "dn{d}: {reason}"),
            UploadFailure::Failed { datanode: None, reason } => f.write_str(reason),
            UploadFailure::Unreachable(d) => write!(f, "dn{d} unreachable"),
            UploadFailure::AckOutOfOrder { expected, got } => {
                write!(f, "ACK {got} arrived where {expected} was expected")
            }
            UploadFailure::Disconnected => f.write_str("pipeline closed before the block was flushed"),
            UploadFailure::InsufficientDatanodes => f.write_str("not enough live datanodes"),
        }
    }
}

/// Flip one bit of one encoded packet frame as the client sends it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BitFlip {
    pub block_index: u32,
    pub seq: u64,
    /// Bit offset into the frame body.
    pub bit: usize,
}

/// Kill a datanode once the client has sent this many packets in total.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct KillAfter {
    pub datanode: DatanodeId,
    pub packets: usize,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UploadFaults {
    pub flip: Option<BitFlip>,
    pub kill: Option<KillAfter>,
}

/// Time spent per upload phase. Client phases are summed over the upload
/// workers; replica phases are summed over all datanodes.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct UploadPhases {
    pub parse: Duration,
    pub convert: Duration,
    pub transfer: Duration,
    pub sort: Duration,
    pub index: Duration,
    pub checksum: Duration,
    pub flush: Duration,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UploadReport {
    pub path: String,
    pub file_id: u32,
    pub blocks: u32,
    pub rows: u64,
    pub bad_records: u64,
    pub input_bytes: u64,
    /// Bytes written to data files across all replicas.
    pub stored_bytes: u64,
    pub wall: Duration,
    pub phases: UploadPhases,
}

pub struct Cluster {
    root: PathBuf,
    config: ClusterConfig,
    namenode: Arc<Namenode>,
    net: Arc<Network>,
}

impl Cluster {
    /// Starts a cluster over `root`, re-registering replicas already on disk.
    pub fn start(root: impl AsRef<Path>, config: ClusterConfig) -> Result<Arc<Cluster>, ClusterError> {
        config.validate()?;
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(root.join("namenode"))?;
        let ids: Vec<DatanodeId> = (1..=config.datanodes as DatanodeId).collect();
        let namenode = Arc::new(Namenode::new(ids.clone(), config.expiry));
        let nodes = ids
            .iter()
            .map(|&id| Datanode::new(id, root.join(format!("dn{id}")), namenode.clone()).map(Arc::new))
            .collect::<io::Result<Vec<_>>>()?;
        let cluster = Cluster {
            root,
            config,
            namenode,
            net: Arc::new(Network::new(nodes)),
        };
        cluster.recover()?;
        Ok(Arc::new(cluster))
    }

    fn namespace_path(&self) -> PathBuf {
        self.root.join("namenode").join("namespace")
    }

    fn schema_path(&self, file_id: u32) -> PathBuf {
        self.root.join("namenode").join(format!("{file_id}.schema"))
    }

    fn recover(&self) -> Result<(), ClusterError> {
        if let Ok(text) = fs::read_to_string(self.namespace_path()) {
            for line in text.lines().filter(|l| !l.trim().is_empty()) {
                let mut parts = line.splitn(4, '\t');
                let mut num = || parts.next().and_then(|p| p.parse::<u64>().ok());
                let (Some(id), Some(blocks), Some(r)) = (num(), num(), num()) else {
                    return Err(ClusterError::Config(format!("bad namespace entry {line:?}")));
                };
                let path = parts.next().unwrap_or_default().to_string();
                self.namenode.commit_file(FileEntry {
                    id: id as u32,
                    path,
                    blocks: blocks as u32,
                    replication: r as usize,
                })?;
            }
        }
        let committed: std::collections::HashSet<u32> = self.namenode.files().iter().map(|f| f.id).collect();
        let past = Instant::now()
            .checked_sub(self.config.expiry)
            .unwrap_or_else(Instant::now);
        for dn in self.net.nodes() {
            for block in dn.stored_blocks()? {
                self.namenode.bump_file_id(block.file);
                if committed.contains(&block.file) {
                    self.namenode.restore_replica(block, dn.replica_info(block)?);
                }
            }
            if dn.dir().join("DEAD").exists() {
                dn.set_alive(false);
                self.namenode.report_dead(dn.id(), past);
            }
        }
        Ok(())
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn config(&self) -> &ClusterConfig {
        &self.config
    }

    pub fn namenode(&self) -> &Namenode {
        &self.namenode
    }

    pub fn datanode(&self, id: DatanodeId) -> Option<&Arc<Datanode>> {
        self.net.node(id)
    }

    pub fn datanode_ids(&self) -> Vec<DatanodeId> {
        self.net.nodes().map(|d| d.id()).collect()
    }

    /// Nodes that are actually running, regardless of the namenode's view.
    pub fn running_datanodes(&self) -> Vec<DatanodeId> {
        self.net.nodes().filter(|d| d.is_alive()).map(|d| d.id()).collect()
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.net
            .nodes()
            .map(|d| d.stats())
            .fold(StatsSnapshot::default(), |a, b| a + b)
    }

    /// Stops a datanode: it immediately refuses connections and reads.
    pub fn kill_node(&self, id: DatanodeId) -> Result<(), ClusterError> {
        let dn = self.net.node(id).ok_or(ClusterError::UnknownDatanode(id))?;
        dn.set_alive(false);
        self.namenode.report_dead(id, Instant::now());
        Ok(())
    }

    pub fn revive_node(&self, id: DatanodeId) -> Result<(), ClusterError> {
        let dn = self.net.node(id).ok_or(ClusterError::UnknownDatanode(id))?;
        dn.set_alive(true);
        self.namenode.report_alive(id);
        Ok(())
    }

    /// Marks a node dead (or alive) across restarts of a cluster over `root`.
    pub fn persist_liveness(root: &Path, id: DatanodeId, alive: bool) -> io::Result<()> {
        let dir = root.join(format!("dn{id}"));
        if !dir.is_dir() {
            return Err(io::Error::new(
                io::ErrorKind::NotFound,
                format!("no datanode dn{id} under {}", root.display()),
            ));
        }
        let marker = dir.join("DEAD");
        if alive {
            match fs::remove_file(marker) {
                Err(e) if e.kind() != io::ErrorKind::NotFound => Err(e),
                _ => Ok(()),
            }
        } else {
            fs::write(marker, b"")
        }
    }

    pub fn file(&self, path: &str) -> Result<FileEntry, ClusterError> {
        self.namenode
            .file(path)
            .ok_or_else(|| ClusterError::UnknownFile(path.into()))
    }

    pub fn file_schema(&self, path: &str) -> Result<Schema, ClusterError> {
        let entry = self.file(path)?;
        let text = fs::read_to_string(self.schema_path(entry.id))?;
        Ok(Schema::parse_config(&text)?)
    }

    /// Opens one replica of `block` for reading.
    pub fn open_replica(&self, block: BlockId, dn: DatanodeId) -> Result<BlockReader<BlockFile>, ReadError> {
        let node = self
            .net
            .node(dn)
            .ok_or_else(|| ReadError::Unavailable(format!("unknown datanode {dn}")))?;
        BlockReader::open(node.open_block(block)?)
    }

    /// Uploads a local text file.
    pub fn upload_file(
        &self,
        path: &str,
        input: &Path,
        schema: &Schema,
        replicas: &ReplicaConfig,
    ) -> Result<UploadReport, ClusterError> {
        let reader = BufReader::with_capacity(1 << 20, fs::File::open(input)?);
        self.upload(path, reader, schema, replicas, UploadFaults::default())
    }

    /// Cuts `input` into blocks and pushes each through a replication
    /// pipeline. Several blocks are in flight at once. The file becomes
    /// visible only if every block succeeds.
    pub fn upload<R: BufRead>(
        &self,
        path: &str,
        input: R,
        schema: &Schema,
        replicas: &ReplicaConfig,
        faults: UploadFaults,
    ) -> Result<UploadReport, ClusterError> {
        if self.namenode.file(path).is_some() {
            return Err(ClusterError::FileExists(path.into()));
        }
        replicas.validate(schema)?;
        let started = Instant::now();
        let before = self.stats();
        let file_id = self.namenode.reserve_file_id();
        let ctx = UploadCtx {
            schema,
            replicas,
            faults,
            packets_sent: AtomicUsize::new(0),
            failed: AtomicBool::new(false),
            convert_ns: AtomicU64::new(0),
            transfer_ns: AtomicU64::new(0),
            failures: Mutex::new(Vec::new()),
        };
        let mut blocks = 0u32;
        let mut rows = 0u64;
        let mut bad = 0u64;
        let mut input_bytes = 0u64;
        let mut parse = Duration::ZERO;

        let (tx, rx) = mpsc::sync_channel::<(u32, LogicalBlock)>(self.config.upload_parallelism);
        let rx = Mutex::new(rx);
        thread::scope(|s| -> Result<(), ClusterError> {
            let tx = tx;
            for _ in 0..self.config.upload_parallelism {
                s.spawn(|| loop {
                    let job = rx.lock().unwrap().recv();
                    let Ok((index, block)) = job else { break };
                    if ctx.failed.load(Ordering::SeqCst) {
                        continue;
                    }
                    let id = BlockId::new(file_id, index);
                    if let Err(why) = self.upload_block(&ctx, id, &block) {
                        ctx.failed.store(true, Ordering::SeqCst);
                        self.namenode.abort_block(id);
                        ctx.failures.lock().unwrap().push((id, why));
                    }
                });
            }
            let mut cutter = BlockCutter::new(input, schema, self.config.block_size);
            loop {
                let t = Instant::now();
                let next = cutter.next();
                parse += t.elapsed();
                let Some(block) = next else { break };
                let block = block?;
                rows += block.records.len() as u64;
                bad += block.bad_records.len() as u64;
                input_bytes += block.text.len() as u64;
                if ctx.failed.load(Ordering::SeqCst) || tx.send((blocks, block)).is_err() {
                    break;
                }
                blocks += 1;
            }
            Ok(())
        })?;

        let mut failures = ctx.failures.into_inner().unwrap();
        if !failures.is_empty() {
            failures.sort_by_key(|(b, _)| *b);
            return Err(ClusterError::UploadFailed(failures));
        }
        let entry = FileEntry {
            id: file_id,
            path: path.to_string(),
            blocks,
            replication: replicas.replication(),
        };
        fs::write(self.schema_path(file_id), schema.to_config())?;
        self.namenode.commit_file(entry.clone())?;
        let mut ns = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.namespace_path())?;
        io::Write::write_all(
            &mut ns,
            format!(
                "{}\t{}\t{}\t{}\n",
                entry.id, entry.blocks, entry.replication, entry.path
            )
            .as_bytes(),
        )?;

        let after = self.stats();
        let ns_since = |a: u64, b: u64| Duration::from_nanos(a.saturating_sub(b));
        Ok(UploadReport {
            path: path.to_string(),
            file_id,
            blocks,
            rows,
            bad_records: bad,
            input_bytes,
            stored_bytes: after.data_bytes_written - before.data_bytes_written,
            wall: started.elapsed(),
            phases: UploadPhases {
                parse,
                convert: Duration::from_nanos(ctx.convert_ns.load(Ordering::Relaxed)),
                transfer: Duration::from_nanos(ctx.transfer_ns.load(Ordering::Relaxed)),
                sort: ns_since(after.sort_ns, before.sort_ns),
                index: ns_since(after.index_ns, before.index_ns),
                checksum: ns_since(after.checksum_ns, before.checksum_ns),
                flush: ns_since(after.flush_ns, before.flush_ns),
            },
        })
    }

    fn upload_block(&self, ctx: &UploadCtx<'_>, id: BlockId, block: &LogicalBlock) -> Result<(), UploadFailure> {
        let t = Instant::now();
        let bytes = to_pax(block, ctx.schema).serialize();
        ctx.convert_ns
            .fetch_add(t.elapsed().as_nanos() as u64, Ordering::Relaxed);

        let t = Instant::now();
        let pipeline = self
            .namenode
            .allocate_pipeline(id, ctx.replicas.replication())
            .map_err(|_| UploadFailure::InsufficientDatanodes)?;
        let conn = self
            .net
            .connect(pipeline[0])
            .ok_or(UploadFailure::Unreachable(pipeline[0]))?;
        let setup = BlockSetup {
            block: id,
            block_len: bytes.len() as u64,
            partition_size: self.config.partition_size as u32,
            pipeline: pipeline.clone(),
            sort_keys: ctx.replicas.sort_keys.iter().map(|k| k.map(|p| p as u16)).collect(),
        };
        if conn.tx.send(Frame::Setup(setup).encode()).is_err() {
            return Err(UploadFailure::Unreachable(pipeline[0]));
        }
        let packets = packetize(id, &bytes);
        let count = packets.len() as u64;
        drop(bytes);
        for p in packets {
            let seq = p.seq;
            let mut body = Frame::Packet(p).encode();
            if let Some(f) = ctx.faults.flip.filter(|f| f.block_index == id.index && f.seq == seq) {
                if f.bit / 8 < body.len() {
                    body[f.bit / 8] ^= 1 << (f.bit % 8);
                }
            }
            if conn.tx.send(body).is_err() {
                break;
            }
            let sent = ctx.packets_sent.fetch_add(1, Ordering::SeqCst) + 1;
            if let Some(k) = ctx.faults.kill.filter(|k| k.packets == sent) {
                let _ = self.kill_node(k.datanode);
            }
        }

        // ACKs must arrive in order, each carrying the whole chain.
        let chain: Vec<DatanodeId> = pipeline.iter().rev().copied().collect();
        for expected in 0..count {
            let body = match conn.acks.recv_timeout(ACK_TIMEOUT) {
                Ok(b) => b,
                Err(RecvTimeoutError::Timeout | RecvTimeoutError::Disconnected) => {
                    return Err(UploadFailure::Disconnected)
                }
            };
            let ack = match Frame::decode(&body) {
                Ok(Frame::Ack(a)) => a,
                _ => {
                    return Err(UploadFailure::Failed {
                        datanode: Some(pipeline[0]),
                        reason: "unreadable ACK".into(),
                    })
                }
            };
            match ack.status {
                AckStatus::Success => {}
                AckStatus::Corrupt(at) => {
                    return Err(UploadFailure::Corrupt {
                        detected_by: ack.datanodes.first().copied().unwrap_or(0),
                        seq: ack.seq,
                        at,
                    })
                }
                AckStatus::Failed(reason) => {
                    return Err(UploadFailure::Failed {
                        datanode: ack.datanodes.first().copied(),
                        reason,
                    })
                }
            }
            if ack.seq != expected || ack.block != id {
                return Err(UploadFailure::AckOutOfOrder { expected, got: ack.seq });
            }
            let kind = if expected + 1 == count {
                AckKind::BlockFlushed
            } else {
                AckKind::PacketValidated
            };
            if ack.kind != kind || ack.datanodes != chain {
                return Err(UploadFailure::Failed {
                    datanode: None,
                    reason: format!("malformed ACK chain {:?} for packet {expected}", ack.datanodes),
                });
            }
        }
        ctx.transfer_ns
            .fetch_add(t.elapsed().as_nanos() as u64, Ordering::Relaxed);
        Ok(())
    }
}

struct UploadCtx<'a> {
    schema: &'a Schema,
    replicas: &'a ReplicaConfig,
    faults: UploadFaults,
    packets_sent: AtomicUsize,
    failed: AtomicBool,
    convert_ns: AtomicU64,
    transfer_ns: AtomicU64,
    failures: Mutex<Vec<(BlockId, UploadFailure)>>,
}
