// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Chunks, packets, acknowledgements and checksum files.
//!
//! A block travels as a setup frame followed by packets of up to 126
//! chunks of 512 bytes. Every chunk carries a CRC32C; checksums are
//! grouped ahead of the chunk data inside a packet. All frames are
//! length-prefixed so the same bytes can cross a channel or a socket.

use std::fmt;
use std::io::{self, Read, Write};

use thiserror::Error;

use crate::codec::{PutLe, Reader};
use crate::pax::FormatError;

pub const CHUNK_SIZE: usize = 512;
pub const CHUNKS_PER_PACKET: usize = 126;
pub const MAX_FRAME_LEN: usize = 64 * 1024;

const FRAME_SETUP: u8 = 1;
const FRAME_PACKET: u8 = 2;
const FRAME_ACK: u8 = 3;
/// Kind byte plus the fixed packet header, before the header checksum.
const PACKET_HEADER_LEN: usize = 24;

#[derive(Debug, Error)]
pub enum TransportError {
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error("unknown frame kind {0}")]
    UnknownFrame(u8),
    #[error("frame of {0} bytes exceeds the frame limit")]
    FrameTooLarge(usize),
    #[error("packet {got} arrived where {expected} was expected")]
    OutOfOrder { expected: u64, got: u64 },
    #[error("packet stream ended before the last packet")]
    MissingLastPacket,
    #[error("checksum file: {0}")]
    ChecksumFile(&'static str),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Identifies a block as (file, index within file).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct BlockId {
    pub file: u32,
    pub index: u32,
}

impl BlockId {
    pub fn new(file: u32, index: u32) -> Self {
        BlockId { file, index }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.file, self.index)
    }
}

pub fn crc(bytes: &[u8]) -> u32 {
    crc32c::crc32c(bytes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Chunk {
    pub data: Vec<u8>,
    pub checksum: u32,
}

impl Chunk {
    pub fn new(data: &[u8]) -> Chunk {
        debug_assert!(data.len() <= CHUNK_SIZE);
        Chunk {
            data: data.to_vec(),
            checksum: crc(data),
        }
    }

    pub fn is_valid(&self) -> bool {
        crc(&self.data) == self.checksum
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Packet {
    pub block: BlockId,
    pub seq: u64,
    pub last: bool,
    /// One checksum per chunk, in chunk order.
    pub checksums: Vec<u32>,
    /// Concatenated chunk data; every chunk but the final one is full.
    pub data: Vec<u8>,
    pub header_crc: u32,
}

impl Packet {
    fn new(block: BlockId, seq: u64, last: bool, data: &[u8]) -> Packet {
        let checksums = data.chunks(CHUNK_SIZE).map(crc).collect();
        let mut p = Packet {
            block,
            seq,
            last,
            checksums,
            data: data.to_vec(),
            header_crc: 0,
        };
        p.header_crc = crc(&p.header_bytes());
        p
    }

    pub fn chunk_count(&self) -> usize {
        self.checksums.len()
    }

    pub fn chunks(&self) -> Vec<Chunk> {
        self.data
            .chunks(CHUNK_SIZE)
            .zip(&self.checksums)
            .map(|(d, &c)| Chunk {
                data: d.to_vec(),
                checksum: c,
            })
            .collect()
    }

    pub fn encoded_len(&self) -> usize {
        4 + PACKET_HEADER_LEN + 4 + 4 * self.checksums.len() + self.data.len()
    }

    fn header_bytes(&self) -> Vec<u8> {
        let mut h = Vec::with_capacity(PACKET_HEADER_LEN);
        h.put_u8(FRAME_PACKET);
        h.put_u32(self.block.file);
        h.put_u32(self.block.index);
        h.put_u64(self.seq);
        h.put_u8(self.last as u8);
        h.put_u16(self.checksums.len() as u16);
        h.put_u32(self.data.len() as u32);
        h
    }
}

/// Where verification found damage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorruptAt {
    Header,
    /// Index of the first failing chunk within the packet.
    Chunk(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verification {
    Ok,
    Corrupt(CorruptAt),
}

pub fn verify_packet(p: &Packet) -> Verification {
    if crc(&p.header_bytes()) != p.header_crc {
        return Verification::Corrupt(CorruptAt::Header);
    }
    let expected_chunks = p.data.len().div_ceil(CHUNK_SIZE);
    if expected_chunks != p.checksums.len() {
        return Verification::Corrupt(CorruptAt::Header);
    }
    for (i, (d, &c)) in p.data.chunks(CHUNK_SIZE).zip(&p.checksums).enumerate() {
        if crc(d) != c {
            return Verification::Corrupt(CorruptAt::Chunk(i));
        }
    }
    Verification::Ok
}

/// Cuts block bytes into packets. The caller guarantees a non-empty block.
pub fn packetize(block: BlockId, bytes: &[u8]) -> Vec<Packet> {
    assert!(!bytes.is_empty(), "packetize needs a non-empty block");
    let per_packet = CHUNK_SIZE * CHUNKS_PER_PACKET;
    let count = bytes.len().div_ceil(per_packet);
    bytes
        .chunks(per_packet)
        .enumerate()
        .map(|(i, d)| Packet::new(block, i as u64, i + 1 == count, d))
        .collect()
}

/// Concatenates packet data, checking sequence contiguity and termination.
pub fn depacketize(packets: &[Packet]) -> Result<Vec<u8>, TransportError> {
    let mut out = Vec::new();
    for (i, p) in packets.iter().enumerate() {
        if p.seq != i as u64 {
            return Err(TransportError::OutOfOrder {
                expected: i as u64,
                got: p.seq,
            });
        }
        out.extend_from_slice(&p.data);
        if p.last {
            return if i + 1 == packets.len() {
                Ok(out)
            } else {
                Err(TransportError::OutOfOrder {
                    expected: i as u64 + 1,
                    got: packets[i + 1].seq,
                })
            };
        }
    }
    Err(TransportError::MissingLastPacket)
}

/// Block-level metadata sent ahead of the first packet.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSetup {
    pub block: BlockId,
    pub block_len: u64,
    pub partition_size: u32,
    /// Datanode IDs, client side first.
    pub pipeline: Vec<u32>,
    /// Sort key per pipeline position; `None` leaves that replica unsorted.
    pub sort_keys: Vec<Option<u16>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AckKind {
    /// The last datanode received and verified a non-final packet.
    PacketValidated,
    /// The final packet: sent once the replica is sorted, indexed,
    /// flushed and registered.
    BlockFlushed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum AckStatus {
    Success,
    Corrupt(CorruptAt),
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Ack {
    pub block: BlockId,
    pub seq: u64,
    pub kind: AckKind,
    pub status: AckStatus,
    /// Datanodes that handled the ACK, last pipeline node first.
    pub datanodes: Vec<u32>,
}

impl Ack {
    pub fn is_success(&self) -> bool {
        self.status == AckStatus::Success
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Frame {
    Setup(BlockSetup),
    Packet(Packet),
    Ack(Ack),
}

impl Frame {
    /// Serializes the frame body (no length prefix).
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        match self {
            Frame::Setup(s) => {
                out.put_u8(FRAME_SETUP);
                out.put_u32(s.block.file);
                out.put_u32(s.block.index);
                out.put_u64(s.block_len);
                out.put_u32(s.partition_size);
                out.put_u8(s.pipeline.len() as u8);
                s.pipeline.iter().for_each(|&d| out.put_u32(d));
                out.put_u8(s.sort_keys.len() as u8);
                s.sort_keys.iter().for_each(|k| out.put_u16(k.unwrap_or(0)));
            }
            Frame::Packet(p) => {
                out.reserve(p.encoded_len());
                out.extend(p.header_bytes());
                out.put_u32(p.header_crc);
                p.checksums.iter().for_each(|&c| out.put_u32(c));
                out.extend_from_slice(&p.data);
            }
            Frame::Ack(a) => {
                out.put_u8(FRAME_ACK);
                out.put_u32(a.block.file);
                out.put_u32(a.block.index);
                out.put_u64(a.seq);
                out.put_u8(match a.kind {
                    AckKind::PacketValidated => 0,
                    AckKind::BlockFlushed => 1,
                });
                match &a.status {
                    AckStatus::Success => out.put_u8(0),
                    AckStatus::Corrupt(at) => {
                        out.put_u8(1);
                        out.put_u32(match at {
                            CorruptAt::Header => u32::MAX,
                            CorruptAt::Chunk(i) => *i as u32,
                        });
                    }
                    AckStatus::Failed(msg) => {
                        out.put_u8(2);
                        let msg = &msg.as_bytes()[..msg.len().min(u16::MAX as usize)];
                        out.put_u16(msg.len() as u16);
                        out.extend_from_slice(msg);
                    }
                }
                out.put_u8(a.datanodes.len() as u8);
                a.datanodes.iter().for_each(|&d| out.put_u32(d));
            }
        }
        out
    }

    /// Parses a frame body. Packet checksums are not verified here.
    pub fn decode(bytes: &[u8]) -> Result<Frame, TransportError> {
        let mut r = Reader::new(bytes, "frame");
        let kind = r.u8()?;
        let block = BlockId::new(r.u32()?, r.u32()?);
        let frame = match kind {
            FRAME_SETUP => {
                let block_len = r.u64()?;
                let partition_size = r.u32()?;
                let n = r.u8()? as usize;
                let pipeline = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
                let k = r.u8()? as usize;
                let sort_keys = (0..k)
                    .map(|_| r.u16().map(|v| (v != 0).then_some(v)))
                    .collect::<Result<_, _>>()?;
                Frame::Setup(BlockSetup {
                    block,
                    block_len,
                    partition_size,
                    pipeline,
                    sort_keys,
                })
            }
            FRAME_PACKET => {
                let seq = r.u64()?;
                let last = match r.u8()? {
                    0 => false,
                    1 => true,
                    _ => return Err(FormatError::Corrupt("packet flags".into()).into()),
                };
                let chunks = r.u16()? as usize;
                let data_len = r.u32()? as usize;
                let header_crc = r.u32()?;
                let checksums = (0..chunks).map(|_| r.u32()).collect::<Result<_, _>>()?;
                let data = r.bytes(data_len)?.to_vec();
                Frame::Packet(Packet {
                    block,
                    seq,
                    last,
                    checksums,
                    data,
                    header_crc,
                })
            }
            FRAME_ACK => {
                let seq = r.u64()?;
                let kind = match r.u8()? {
                    0 => AckKind::PacketValidated,
                    1 => AckKind::BlockFlushed,
                    _ => return Err(FormatError::Corrupt("ack kind".into()).into()),
                };
                let status = match r.u8()? {
                    0 => AckStatus::Success,
                    1 => AckStatus::Corrupt(match r.u32()? {
                        u32::MAX => CorruptAt::Header,
                        i => CorruptAt::Chunk(i as usize),
                    }),
                    2 => {
                        let len = r.u16()? as usize;
                        AckStatus::Failed(String::from_utf8_lossy(r.bytes(len)?).into_owned())
                    }
                    _ => return Err(FormatError::Corrupt("ack status".into()).into()),
                };
                let n = r.u8()? as usize;
                let datanodes = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
                Frame::Ack(Ack {
                    block,
                    seq,
                    kind,
                    status,
                    datanodes,
                })
            }
            other => return Err(TransportError::UnknownFrame(other)),
        };
        if r.remaining() != 0 {
            return Err(FormatError::Corrupt("trailing bytes in frame".into()).into());
        }
        Ok(frame)
    }
}

/// Writes `body` with its u32 length prefix.
pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> Result<(), TransportError> {
    if body.len() > MAX_FRAME_LEN {
        return Err(TransportError::FrameTooLarge(body.len()));
    }
    w.write_all(&(body.len() as u32).to_le_bytes())?;
    w.write_all(body)?;
    Ok(())
}

/// Reads one length-prefixed frame body; `None` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<Vec<u8>>, TransportError> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    let len = u32::from_le_bytes(len) as usize;
    if len > MAX_FRAME_LEN {
        return Err(TransportError::FrameTooLarge(len));
    }
    let mut body = vec![0; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

const CRC_MAGIC: [u8; 4] = *b"HCRC";
const CRC_VERSION: u8 = 1;
const ALGO_CRC32C: u8 = 1;
pub const CRC_HEADER_LEN: usize = 18;

/// Parsed contents of a `.crc` sibling file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChecksumFile {
    pub chunk_size: u32,
    pub data_len: u64,
    pub checksums: Vec<u32>,
}

impl ChecksumFile {
    pub fn compute(bytes: &[u8]) -> ChecksumFile {
        ChecksumFile {
            chunk_size: CHUNK_SIZE as u32,
            data_len: bytes.len() as u64,
            checksums: bytes.chunks(CHUNK_SIZE).map(crc).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(CRC_HEADER_LEN + 4 * self.checksums.len());
        out.extend_from_slice(&CRC_MAGIC);
        out.put_u8(CRC_VERSION);
        out.put_u8(ALGO_CRC32C);
        out.put_u32(self.chunk_size);
        out.put_u64(self.data_len);
        self.checksums.iter().for_each(|&c| out.put_u32(c));
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<ChecksumFile, TransportError> {
        let mut r = Reader::new(bytes, "checksum file");
        if r.array::<4>()? != CRC_MAGIC {
            return Err(TransportError::ChecksumFile("bad magic"));
        }
        if r.u8()? != CRC_VERSION {
            return Err(TransportError::ChecksumFile("unsupported version"));
        }
        if r.u8()? != ALGO_CRC32C {
            return Err(TransportError::ChecksumFile("unknown algorithm"));
        }
        let chunk_size = r.u32()?;
        if chunk_size == 0 {
            return Err(TransportError::ChecksumFile("zero chunk size"));
        }
        let data_len = r.u64()?;
        let n = data_len.div_ceil(chunk_size as u64) as usize;
        if r.remaining() != 4 * n {
            return Err(TransportError::ChecksumFile("entry count does not match data length"));
        }
        let checksums = (0..n).map(|_| r.u32()).collect::<Result<_, _>>()?;
        Ok(ChecksumFile {
            chunk_size,
            data_len,
            checksums,
        })
    }

    /// Chunk range covering bytes `offset..offset + len`.
    pub fn chunk_span(&self, offset: u64, len: u64) -> std::ops::Range<usize> {
        if len == 0 {
            return 0..0;
        }
        let cs = self.chunk_size as u64;
        (offset / cs) as usize..(offset + len).div_ceil(cs) as usize
    }

    /// Checks `data`, which must start at chunk `first`, chunk by chunk.
    /// Returns the first failing chunk index.
    pub fn verify_chunks(&self, first: usize, data: &[u8]) -> Result<(), usize> {
        for (i, d) in data.chunks(self.chunk_size as usize).enumerate() {
            let idx = first + i;
            if self.checksums.get(idx) != Some(&crc(d)) {
                return Err(idx);
            }
        }
        Ok(())
    }
}

/// The checksum file for `bytes`: header plus one CRC32C per 512-byte chunk.
pub fn checksum_file(bytes: &[u8]) -> Vec<u8> {
    ChecksumFile::compute(bytes).encode()
}
