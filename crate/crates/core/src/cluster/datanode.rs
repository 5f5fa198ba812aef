// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Datanodes and the in-process network connecting them.
//!
//! Each connection is served by its own xceiver thread. A relay node
//! forwards every frame downstream before looking at it; only the tail
//! verifies packet checksums. ACKs travel back on a separate channel and
//! every node appends its ID.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::Write;
use std::os::unix::fs::FileExt;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender, SyncSender};
use std::sync::Arc;
use std::thread;
use std::time::Instant;

use crate::index::{build_index, sort_block, BlockReader, ByteSource, ReadError};
use crate::pax::{FormatError, PaxBlock};
use crate::transport::{
    checksum_file, verify_packet, Ack, AckKind, AckStatus, BlockId, BlockSetup, ChecksumFile, CorruptAt, Frame,
    Verification,
};

use super::namenode::{DatanodeId, Namenode, ReplicaInfo};

/// Frames buffered per hop before the sender blocks.
const DATA_CHANNEL_DEPTH: usize = 16;

#[derive(Debug, Default)]
pub struct DatanodeStats {
    pub data_files_written: AtomicU64,
    pub data_bytes_written: AtomicU64,
    pub crc_files_written: AtomicU64,
    pub bytes_read: AtomicU64,
    pub read_calls: AtomicU64,
    pub checksum_failures: AtomicU64,
    pub corrupt_packets: AtomicU64,
    pub sort_ns: AtomicU64,
    pub index_ns: AtomicU64,
    pub checksum_ns: AtomicU64,
    pub flush_ns: AtomicU64,
}

/// Plain copy of [`DatanodeStats`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct StatsSnapshot {
    pub data_files_written: u64,
    pub data_bytes_written: u64,
    pub crc_files_written: u64,
    pub bytes_read: u64,
    pub read_calls: u64,
    pub checksum_failures: u64,
    pub corrupt_packets: u64,
    pub sort_ns: u64,
    pub index_ns: u64,
    pub checksum_ns: u64,
    pub flush_ns: u64,
}

impl DatanodeStats {
    pub fn snapshot(&self) -> StatsSnapshot {
        let g = |a: &AtomicU64| a.load(Ordering::Relaxed);
        StatsSnapshot {
            data_files_written: g(&self.data_files_written),
            data_bytes_written: g(&self.data_bytes_written),
            crc_files_written: g(&self.crc_files_written),
            bytes_read: g(&self.bytes_read),
            read_calls: g(&self.read_calls),
            checksum_failures: g(&self.checksum_failures),
            corrupt_packets: g(&self.corrupt_packets),
            sort_ns: g(&self.sort_ns),
            index_ns: g(&self.index_ns),
            checksum_ns: g(&self.checksum_ns),
            flush_ns: g(&self.flush_ns),
        }
    }
}

impl std::ops::Add for StatsSnapshot {
    type Output = StatsSnapshot;
    fn add(self, o: StatsSnapshot) -> StatsSnapshot {
        StatsSnapshot {
            data_files_written: self.data_files_written + o.data_files_written,
            data_bytes_written: self.data_bytes_written + o.data_bytes_written,
            crc_files_written: self.crc_files_written + o.crc_files_written,
            bytes_read: self.bytes_read + o.bytes_read,
            read_calls: self.read_calls + o.read_calls,
            checksum_failures: self.checksum_failures + o.checksum_failures,
            corrupt_packets: self.corrupt_packets + o.corrupt_packets,
            sort_ns: self.sort_ns + o.sort_ns,
            index_ns: self.index_ns + o.index_ns,
            checksum_ns: self.checksum_ns + o.checksum_ns,
            flush_ns: self.flush_ns + o.flush_ns,
        }
    }
}

fn add_elapsed(counter: &AtomicU64, since: Instant) {
    counter.fetch_add(since.elapsed().as_nanos() as u64, Ordering::Relaxed);
}

pub struct Datanode {
    id: DatanodeId,
    dir: PathBuf,
    alive: AtomicBool,
    namenode: Arc<Namenode>,
    stats: DatanodeStats,
}

/// Client end of a connection to a datanode.
pub(crate) struct ClientConn {
    pub tx: SyncSender<Vec<u8>>,
    pub acks: Receiver<Vec<u8>>,
}

struct ServerConn {
    rx: Receiver<Vec<u8>>,
    acks: Sender<Vec<u8>>,
}

/// Routes connection requests to datanodes by ID.
pub(crate) struct Network {
    nodes: BTreeMap<DatanodeId, Arc<Datanode>>,
}

impl Network {
    pub fn new(nodes: impl IntoIterator<Item = Arc<Datanode>>) -> Network {
        Network {
            nodes: nodes.into_iter().map(|d| (d.id, d)).collect(),
        }
    }

    pub fn node(&self, id: DatanodeId) -> Option<&Arc<Datanode>> {
        self.nodes.get(&id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &Arc<Datanode>> {
        self.nodes.values()
    }

    /// Opens a connection served by a fresh xceiver thread; refused when
    /// the node is dead.
    pub fn connect(self: &Arc<Self>, id: DatanodeId) -> Option<ClientConn> {
        let dn = self.nodes.get(&id)?.clone();
        if !dn.is_alive() {
            return None;
        }
        let (tx, rx) = mpsc::sync_channel(DATA_CHANNEL_DEPTH);
        let (ack_tx, ack_rx) = mpsc::channel();
        let net = self.clone();
        thread::Builder::new()
            .name(format!("dn{id}-xceiver"))
            .spawn(move || xceiver(dn, net, ServerConn { rx, acks: ack_tx }))
            .ok()?;
        Some(ClientConn { tx, acks: ack_rx })
    }
}

fn send_ack(to: &Sender<Vec<u8>>, ack: Ack) -> bool {
    to.send(Frame::Ack(ack).encode()).is_ok()
}

fn xceiver(dn: Arc<Datanode>, net: Arc<Network>, conn: ServerConn) {
    let ServerConn { rx, acks } = conn;
    let Ok(first) = rx.recv() else { return };
    if !dn.is_alive() {
        return;
    }
    let fail = |block, msg: String| {
        send_ack(
            &acks,
            Ack {
                block,
                seq: 0,
                kind: AckKind::BlockFlushed,
                status: AckStatus::Failed(msg),
                datanodes: vec![dn.id],
            },
        )
    };
    let setup = match Frame::decode(&first) {
        Ok(Frame::Setup(s)) => s,
        _ => {
            fail(BlockId::new(0, 0), "expected a block setup frame".into());
            return;
        }
    };
    let Some(pos) = setup.pipeline.iter().position(|&d| d == dn.id) else {
        fail(setup.block, format!("dn{} is not in the pipeline", dn.id));
        return;
    };
    match setup.pipeline.get(pos + 1) {
        None => dn.receive_as_tail(&setup, pos, rx, acks),
        Some(&next) => match net.connect(next) {
            Some(down) if down.tx.send(first).is_ok() => dn.receive_as_relay(&setup, pos, rx, acks, down),
            _ => {
                fail(setup.block, format!("downstream dn{next} unreachable"));
            }
        },
    }
}

impl Datanode {
    pub(crate) fn new(id: DatanodeId, dir: PathBuf, namenode: Arc<Namenode>) -> std::io::Result<Datanode> {
        fs::create_dir_all(&dir)?;
        Ok(Datanode {
            id,
            dir,
            alive: AtomicBool::new(true),
            namenode,
            stats: DatanodeStats::default(),
        })
    }

    pub fn id(&self) -> DatanodeId {
        self.id
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn is_alive(&self) -> bool {
        self.alive.load(Ordering::SeqCst)
    }

    pub(crate) fn set_alive(&self, alive: bool) {
        self.alive.store(alive, Ordering::SeqCst);
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.stats.snapshot()
    }

    pub fn block_path(&self, block: BlockId) -> PathBuf {
        self.dir.join(format!("{block}.hail"))
    }

    pub fn crc_path(&self, block: BlockId) -> PathBuf {
        self.dir.join(format!("{block}.crc"))
    }

    /// Block IDs with a data file on this node.
    pub fn stored_blocks(&self) -> std::io::Result<Vec<BlockId>> {
        let mut out = Vec::new();
        for entry in fs::read_dir(&self.dir)? {
            let name = entry?.file_name();
            let Some(stem) = name.to_str().and_then(|n| n.strip_suffix(".hail")) else {
                continue;
            };
            if let Some((f, i)) = stem.split_once('_') {
                if let (Ok(f), Ok(i)) = (f.parse(), i.parse()) {
                    out.push(BlockId::new(f, i));
                }
            }
        }
        out.sort();
        Ok(out)
    }

    /// Opens a stored replica for checksum-verified range reads.
    pub fn open_block(self: &Arc<Self>, block: BlockId) -> Result<BlockFile, ReadError> {
        if !self.is_alive() {
            return Err(ReadError::Unavailable(format!("dn{} is dead", self.id)));
        }
        let crc_bytes = fs::read(self.crc_path(block))?;
        let crc = ChecksumFile::decode(&crc_bytes)
            .map_err(|e| FormatError::Corrupt(format!("checksum file of {block}: {e}")))?;
        let file = File::open(self.block_path(block))?;
        let len = file.metadata()?.len();
        if crc.data_len != len {
            return Err(FormatError::Corrupt(format!(
                "checksum file of {block} covers {} bytes, data file has {len}",
                crc.data_len
            ))
            .into());
        }
        Ok(BlockFile {
            dn: self.clone(),
            file,
            crc,
            len,
        })
    }

    /// Reads back the replica's header and index to describe it.
    pub fn replica_info(self: &Arc<Self>, block: BlockId) -> Result<ReplicaInfo, ReadError> {
        let reader = BlockReader::open(self.open_block(block)?)?;
        let index = reader.load_index()?;
        Ok(ReplicaInfo::from_metadata(
            self.id,
            reader.metadata(),
            index.as_ref().map(|i| &i.meta),
        ))
    }

    fn discard(&self, block: BlockId) {
        let _ = fs::remove_file(self.block_path(block));
        let _ = fs::remove_file(self.crc_path(block));
    }

    /// Turns the received PAX bytes into this node's replica: sort, index,
    /// checksum, then a single write of each file.
    fn materialize(&self, setup: &BlockSetup, pos: usize, bytes: Vec<u8>) -> Result<ReplicaInfo, String> {
        let key = setup.sort_keys.get(pos).copied().flatten().map(usize::from);
        let out = match key {
            None => bytes,
            Some(k) => {
                let t = Instant::now();
                let block = PaxBlock::deserialize(&bytes).map_err(|e| e.to_string())?;
                drop(bytes);
                let (sorted, _) = sort_block(&block, k).map_err(|e| e.to_string())?;
                drop(block);
                add_elapsed(&self.stats.sort_ns, t);
                let t = Instant::now();
                let indexed = build_index(sorted, k, setup.partition_size as usize).map_err(|e| e.to_string())?;
                let out = indexed.serialize();
                add_elapsed(&self.stats.index_ns, t);
                out
            }
        };
        let t = Instant::now();
        let crc = checksum_file(&out);
        add_elapsed(&self.stats.checksum_ns, t);

        let t = Instant::now();
        let write = |path: PathBuf, bytes: &[u8]| -> std::io::Result<()> {
            let mut f = File::create(path)?;
            f.write_all(bytes)?;
            f.flush()
        };
        write(self.block_path(setup.block), &out).map_err(|e| e.to_string())?;
        self.stats.data_files_written.fetch_add(1, Ordering::Relaxed);
        self.stats
            .data_bytes_written
            .fetch_add(out.len() as u64, Ordering::Relaxed);
        write(self.crc_path(setup.block), &crc).map_err(|e| e.to_string())?;
        self.stats.crc_files_written.fetch_add(1, Ordering::Relaxed);
        add_elapsed(&self.stats.flush_ns, t);

        let reader = BlockReader::open(out.as_slice()).map_err(|e| e.to_string())?;
        let index = reader.load_index().map_err(|e| e.to_string())?;
        Ok(ReplicaInfo::from_metadata(
            self.id,
            reader.metadata(),
            index.as_ref().map(|i| &i.meta),
        ))
    }

    fn receive_as_tail(self: &Arc<Self>, setup: &BlockSetup, pos: usize, rx: Receiver<Vec<u8>>, acks: Sender<Vec<u8>>) {
        let block = setup.block;
        let ack = |seq, kind, status| Ack {
            block,
            seq,
            kind,
            status,
            datanodes: vec![self.id],
        };
        let mut buf = Vec::with_capacity(setup.block_len as usize);
        let mut next = 0u64;
        while let Ok(body) = rx.recv() {
            if !self.is_alive() {
                return;
            }
            let packet = match Frame::decode(&body) {
                Ok(Frame::Packet(p)) => p,
                _ => {
                    self.stats.corrupt_packets.fetch_add(1, Ordering::Relaxed);
                    send_ack(
                        &acks,
                        ack(next, AckKind::PacketValidated, AckStatus::Corrupt(CorruptAt::Header)),
                    );
                    return;
                }
            };
            if let Verification::Corrupt(at) = verify_packet(&packet) {
                self.stats.corrupt_packets.fetch_add(1, Ordering::Relaxed);
                send_ack(&acks, ack(next, AckKind::PacketValidated, AckStatus::Corrupt(at)));
                return;
            }
            if packet.block != block || packet.seq != next {
                let msg = format!(
                    "packet {} of {} where {next} of {block} was expected",
                    packet.seq, packet.block
                );
                send_ack(&acks, ack(next, AckKind::PacketValidated, AckStatus::Failed(msg)));
                return;
            }
            buf.extend_from_slice(&packet.data);
            next += 1;
            if !packet.last {
                send_ack(&acks, ack(packet.seq, AckKind::PacketValidated, AckStatus::Success));
                continue;
            }
            let status = match self.materialize(setup, pos, std::mem::take(&mut buf)) {
                Ok(_) if !self.is_alive() => return,
                Ok(info) => {
                    self.namenode.register_replica(block, info, setup.pipeline.len());
                    AckStatus::Success
                }
                Err(e) => {
                    self.discard(block);
                    self.namenode.abort_block(block);
                    AckStatus::Failed(e)
                }
            };
            send_ack(&acks, ack(packet.seq, AckKind::BlockFlushed, status));
            return;
        }
    }

    fn receive_as_relay(
        self: &Arc<Self>,
        setup: &BlockSetup,
        pos: usize,
        rx: Receiver<Vec<u8>>,
        acks: Sender<Vec<u8>>,
        down: ClientConn,
    ) {
        let block = setup.block;
        let ClientConn {
            tx: down_tx,
            acks: down_acks,
        } = down;
        let (local_tx, local_rx) = mpsc::channel();
        let responder = {
            let me = self.clone();
            let setup = setup.clone();
            thread::spawn(move || me.relay_acks(&setup, down_acks, acks, local_rx))
        };
        let mut buf = Vec::with_capacity(setup.block_len as usize);
        let mut next = 0u64;
        let mut poisoned = false;
        while let Ok(body) = rx.recv() {
            if !self.is_alive() {
                break;
            }
            let decoded = Frame::decode(&body);
            if down_tx.send(body).is_err() {
                break;
            }
            // Damage is reported by the tail; a relay only stops assembling
            // and waits for the tail's verdict.
            match decoded {
                Ok(Frame::Packet(p))
                    if !poisoned && p.block == block && p.seq == next && verify_packet(&p) == Verification::Ok =>
                {
                    buf.extend_from_slice(&p.data);
                    next += 1;
                    if p.last {
                        let result = self.materialize(setup, pos, std::mem::take(&mut buf));
                        let _ = local_tx.send(result);
                        break;
                    }
                }
                _ => poisoned = true,
            }
        }
        drop(local_tx);
        drop(down_tx);
        let _ = responder.join();
    }

    fn relay_acks(
        self: Arc<Self>,
        setup: &BlockSetup,
        down: Receiver<Vec<u8>>,
        up: Sender<Vec<u8>>,
        local: Receiver<Result<ReplicaInfo, String>>,
    ) {
        let block = setup.block;
        while let Ok(body) = down.recv() {
            if !self.is_alive() {
                return;
            }
            let mut ack = match Frame::decode(&body) {
                Ok(Frame::Ack(a)) => a,
                _ => Ack {
                    block,
                    seq: 0,
                    kind: AckKind::BlockFlushed,
                    status: AckStatus::Failed("unreadable ACK from downstream".into()),
                    datanodes: Vec::new(),
                },
            };
            if ack.is_success() && ack.kind == AckKind::PacketValidated {
                ack.datanodes.push(self.id);
                if !send_ack(&up, ack) {
                    return;
                }
                continue;
            }
            if ack.is_success() {
                // Downstream has flushed and registered; now it is our turn.
                match local.recv() {
                    Ok(Ok(info)) => {
                        if !self.is_alive() {
                            return;
                        }
                        self.namenode.register_replica(block, info, setup.pipeline.len());
                        ack.datanodes.push(self.id);
                        send_ack(&up, ack);
                        return;
                    }
                    Ok(Err(e)) => ack.status = AckStatus::Failed(e),
                    Err(_) => ack.status = AckStatus::Failed(format!("dn{} did not assemble the block", self.id)),
                }
            }
            // Failure: report first so the client can stop sending, then
            // wait for local assembly to end before removing its files.
            ack.datanodes.push(self.id);
            self.namenode.abort_block(block);
            send_ack(&up, ack);
            let _ = local.recv();
            self.discard(block);
            return;
        }
        if self.is_alive() {
            let next = setup
                .pipeline
                .get(setup.pipeline.iter().position(|&d| d == self.id).unwrap_or(0) + 1);
            self.namenode.abort_block(block);
            send_ack(
                &up,
                Ack {
                    block,
                    seq: 0,
                    kind: AckKind::BlockFlushed,
                    status: AckStatus::Failed(format!("lost contact with dn{}", next.copied().unwrap_or(0))),
                    datanodes: vec![self.id],
                },
            );
            let _ = local.recv();
            self.discard(block);
        }
    }
}

/// A stored replica read through its `.crc` file: every range read is
/// widened to whole chunks and each chunk is verified before use.
pub struct BlockFile {
    dn: Arc<Datanode>,
    file: File,
    crc: ChecksumFile,
    len: u64,
}

impl BlockFile {
    pub fn datanode(&self) -> DatanodeId {
        self.dn.id
    }
}

impl ByteSource for BlockFile {
    fn len(&self) -> u64 {
        self.len
    }

    fn read_at(&self, offset: u64, len: usize) -> Result<Vec<u8>, ReadError> {
        if !self.dn.is_alive() {
            return Err(ReadError::Unavailable(format!("dn{} is dead", self.dn.id)));
        }
        if offset.checked_add(len as u64).is_none_or(|e| e > self.len) {
            return Err(ReadError::OutOfBounds {
                offset,
                len,
                size: self.len,
            });
        }
        if len == 0 {
            return Ok(Vec::new());
        }
        let span = self.crc.chunk_span(offset, len as u64);
        let cs = self.crc.chunk_size as u64;
        let start = span.start as u64 * cs;
        let end = (span.end as u64 * cs).min(self.len);
        let mut buf = vec![0; (end - start) as usize];
        self.file.read_exact_at(&mut buf, start)?;
        self.dn.stats.read_calls.fetch_add(1, Ordering::Relaxed);
        self.dn.stats.bytes_read.fetch_add(buf.len() as u64, Ordering::Relaxed);
        if let Err(chunk) = self.crc.verify_chunks(span.start, &buf) {
            self.dn.stats.checksum_failures.fetch_add(1, Ordering::Relaxed);
            return Err(ReadError::Checksum { chunk: chunk as u64 });
        }
        let from = (offset - start) as usize;
        buf.truncate(from + len);
        buf.drain(..from);
        Ok(buf)
    }
}
