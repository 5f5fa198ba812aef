// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::{Mutex, RwLock};
use std::time::{Duration, Instant};

use crate::index::IndexType;
use crate::pax::BlockMetadata;
use crate::transport::BlockId;

use super::ClusterError;

pub type DatanodeId = u32;

/// What the namenode knows about one replica of one block.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaInfo {
    pub datanode: DatanodeId,
    pub sort_key: Option<usize>,
    pub indexed_attribute: Option<usize>,
    pub index_type: Option<IndexType>,
    /// Size of the replica's block file in bytes.
    pub block_size: u64,
    pub index_offset: Option<u64>,
    pub partition_size: Option<usize>,
    pub row_count: u64,
}

impl ReplicaInfo {
    /// Derives the entry from a replica's block header. The sort key equals
    /// the indexed attribute: an unsorted replica has neither.
    pub fn from_metadata(
        datanode: DatanodeId,
        meta: &BlockMetadata,
        index: Option<&crate::index::IndexMetadata>,
    ) -> ReplicaInfo {
        ReplicaInfo {
            datanode,
            sort_key: index.map(|i| i.key_position),
            indexed_attribute: index.map(|i| i.key_position),
            index_type: index.map(|i| i.index_type),
            block_size: meta.total_len(),
            index_offset: meta.has_index().then_some(meta.index.offset),
            partition_size: index.map(|i| i.partition_size),
            row_count: meta.row_count,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileEntry {
    pub id: u32,
    pub path: String,
    pub blocks: u32,
    pub replication: usize,
}

impl FileEntry {
    pub fn block_ids(&self) -> Vec<BlockId> {
        (0..self.blocks).map(|i| BlockId::new(self.id, i)).collect()
    }
}

#[derive(Default)]
struct Directories {
    dir_block: BTreeMap<BlockId, BTreeSet<DatanodeId>>,
    dir_rep: HashMap<(BlockId, DatanodeId), ReplicaInfo>,
    /// Replicas registered for blocks that are not yet complete.
    staging: HashMap<BlockId, (usize, Vec<ReplicaInfo>)>,
    log: Vec<(BlockId, DatanodeId)>,
    pipelines: HashMap<BlockId, Vec<DatanodeId>>,
    files: BTreeMap<String, FileEntry>,
    next_file: u32,
}

/// Block and replica directories plus the namenode's view of liveness.
///
/// A block becomes visible in `dir_block` only once every replica of its
/// pipeline has registered.
pub struct Namenode {
    dirs: RwLock<Directories>,
    datanodes: Vec<DatanodeId>,
    dead_since: Mutex<HashMap<DatanodeId, Instant>>,
    expiry: Duration,
    cursor: Mutex<usize>,
}

impl Namenode {
    pub fn new(datanodes: Vec<DatanodeId>, expiry: Duration) -> Namenode {
        Namenode {
            dirs: RwLock::new(Directories {
                next_file: 1,
                ..Default::default()
            }),
            datanodes,
            dead_since: Mutex::new(HashMap::new()),
            expiry,
            cursor: Mutex::new(0),
        }
    }

    pub fn expiry(&self) -> Duration {
        self.expiry
    }

    pub fn datanodes(&self) -> &[DatanodeId] {
        &self.datanodes
    }

    /// Records that `id` stopped responding. The namenode keeps treating
    /// it as alive until the expiry interval has passed.
    pub fn report_dead(&self, id: DatanodeId, at: Instant) {
        self.dead_since.lock().unwrap().entry(id).or_insert(at);
    }

    pub fn report_alive(&self, id: DatanodeId) {
        self.dead_since.lock().unwrap().remove(&id);
    }

    pub fn is_live(&self, id: DatanodeId) -> bool {
        match self.dead_since.lock().unwrap().get(&id) {
            None => true,
            Some(t) => t.elapsed() < self.expiry,
        }
    }

    /// When the namenode will (or did) declare `id` dead.
    pub fn declared_dead_at(&self, id: DatanodeId) -> Option<Instant> {
        self.dead_since.lock().unwrap().get(&id).map(|t| *t + self.expiry)
    }

    pub fn live_datanodes(&self) -> Vec<DatanodeId> {
        self.datanodes.iter().copied().filter(|&d| self.is_live(d)).collect()
    }

    /// Picks `r` distinct live datanodes for `block`, rotating the start
    /// per call.
    pub fn allocate_pipeline(&self, block: BlockId, r: usize) -> Result<Vec<DatanodeId>, ClusterError> {
        let live = self.live_datanodes();
        if live.len() < r || r == 0 {
            return Err(ClusterError::InsufficientDatanodes {
                alive: live.len(),
                needed: r,
            });
        }
        let mut c = self.cursor.lock().unwrap();
        let start = *c % live.len();
        *c = c.wrapping_add(1);
        let pipeline: Vec<DatanodeId> = (0..r).map(|j| live[(start + j) % live.len()]).collect();
        self.dirs.write().unwrap().pipelines.insert(block, pipeline.clone());
        Ok(pipeline)
    }

    /// The pipeline most recently allocated for `block`.
    pub fn pipeline_of(&self, block: BlockId) -> Option<Vec<DatanodeId>> {
        self.dirs.read().unwrap().pipelines.get(&block).cloned()
    }

    pub fn reserve_file_id(&self) -> u32 {
        let mut d = self.dirs.write().unwrap();
        let id = d.next_file;
        d.next_file += 1;
        id
    }

    pub(crate) fn bump_file_id(&self, seen: u32) {
        let mut d = self.dirs.write().unwrap();
        d.next_file = d.next_file.max(seen + 1);
    }

    pub fn file(&self, path: &str) -> Option<FileEntry> {
        self.dirs.read().unwrap().files.get(path).cloned()
    }

    pub fn files(&self) -> Vec<FileEntry> {
        self.dirs.read().unwrap().files.values().cloned().collect()
    }

    pub fn commit_file(&self, entry: FileEntry) -> Result<(), ClusterError> {
        let mut d = self.dirs.write().unwrap();
        if d.files.contains_key(&entry.path) {
            return Err(ClusterError::FileExists(entry.path));
        }
        d.next_file = d.next_file.max(entry.id + 1);
        d.files.insert(entry.path.clone(), entry);
        Ok(())
    }

    /// Registers one replica; the block is published when `replication`
    /// replicas have arrived. Returns whether the block is now complete.
    pub fn register_replica(&self, block: BlockId, info: ReplicaInfo, replication: usize) -> bool {
        let mut d = self.dirs.write().unwrap();
        d.log.push((block, info.datanode));
        let entry = d.staging.entry(block).or_insert_with(|| (replication, Vec::new()));
        entry.1.retain(|r| r.datanode != info.datanode);
        entry.1.push(info);
        if entry.1.len() < entry.0 {
            return false;
        }
        let (_, replicas) = d.staging.remove(&block).unwrap();
        for r in replicas {
            d.dir_block.entry(block).or_default().insert(r.datanode);
            d.dir_rep.insert((block, r.datanode), r);
        }
        true
    }

    /// Restores an already complete replica found on disk at startup.
    pub(crate) fn restore_replica(&self, block: BlockId, info: ReplicaInfo) {
        let mut d = self.dirs.write().unwrap();
        d.dir_block.entry(block).or_default().insert(info.datanode);
        d.dir_rep.insert((block, info.datanode), info);
    }

    /// Drops partial registrations of a failed block.
    pub fn abort_block(&self, block: BlockId) {
        self.dirs.write().unwrap().staging.remove(&block);
    }

    pub fn registration_log(&self) -> Vec<(BlockId, DatanodeId)> {
        self.dirs.read().unwrap().log.clone()
    }

    pub fn is_visible(&self, block: BlockId) -> bool {
        self.dirs.read().unwrap().dir_block.contains_key(&block)
    }

    pub fn visible_blocks(&self) -> Vec<BlockId> {
        self.dirs.read().unwrap().dir_block.keys().copied().collect()
    }

    /// All registered replicas of `block`, dead nodes included.
    pub fn replicas(&self, block: BlockId) -> Result<Vec<ReplicaInfo>, ClusterError> {
        let d = self.dirs.read().unwrap();
        let nodes = d.dir_block.get(&block).ok_or(ClusterError::UnknownBlock(block))?;
        Ok(nodes.iter().map(|n| d.dir_rep[&(block, *n)].clone()).collect())
    }

    pub fn replica_info(&self, block: BlockId, datanode: DatanodeId) -> Option<ReplicaInfo> {
        self.dirs.read().unwrap().dir_rep.get(&(block, datanode)).cloned()
    }

    /// Live replicas of `block` in ascending id order, rotated left by the
    /// block index.
    pub fn get_hosts(&self, block: BlockId) -> Result<Vec<DatanodeId>, ClusterError> {
        let d = self.dirs.read().unwrap();
        let nodes = d.dir_block.get(&block).ok_or(ClusterError::UnknownBlock(block))?;
        // Rotating by block index spreads "first host" choices evenly over
        // the replicas instead of always favouring the lowest id.
        let mut hosts: Vec<DatanodeId> = nodes.iter().copied().collect();
        if !hosts.is_empty() {
            let shift = block.index as usize % hosts.len();
            hosts.rotate_left(shift);
        }
        Ok(hosts.into_iter().filter(|&n| self.is_live(n)).collect())
    }

    /// Live replicas indexed on `attribute` first, then the rest.
    pub fn get_hosts_with_index(&self, block: BlockId, attribute: usize) -> Result<Vec<DatanodeId>, ClusterError> {
        let hosts = self.get_hosts(block)?;
        let d = self.dirs.read().unwrap();
        let (mut matching, rest): (Vec<_>, Vec<_>) = hosts
            .into_iter()
            .partition(|n| d.dir_rep[&(block, *n)].indexed_attribute == Some(attribute));
        matching.extend(rest);
        Ok(matching)
    }

    /// Checks the directory invariants; used by tests.
    pub fn check_invariants(&self) -> Result<(), String> {
        let d = self.dirs.read().unwrap();
        for (block, dn) in d.dir_rep.keys() {
            if !d.dir_block.get(block).is_some_and(|s| s.contains(dn)) {
                return Err(format!("replica ({block}, dn{dn}) missing from dir_block"));
            }
        }
        for (block, nodes) in &d.dir_block {
            if nodes.iter().any(|n| !d.dir_rep.contains_key(&(*block, *n))) {
                return Err(format!("block {block} lists a node without replica info"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn info(dn: DatanodeId, key: Option<usize>) -> ReplicaInfo {
        ReplicaInfo {
            datanode: dn,
            sort_key: key,
            indexed_attribute: key,
            index_type: key.map(|_| IndexType::SparseClustered),
            block_size: 100,
            index_offset: key.map(|_| 90),
            partition_size: key.map(|_| 1024),
            row_count: 10,
        }
    }

    #[test]
    fn pipelines_rotate_evenly() {
        let nn = Namenode::new((1..=10).collect(), Duration::from_secs(1));
        let mut count = HashMap::new();
        for i in 0..10 {
            let p = nn.allocate_pipeline(BlockId::new(1, i), 3).unwrap();
            assert_eq!(p.iter().collect::<BTreeSet<_>>().len(), 3);
            p.into_iter().for_each(|d| *count.entry(d).or_insert(0) += 1);
        }
        assert!((1..=10).all(|d| count[&d] == 3));

        let nn = Namenode::new(vec![1, 2, 3], Duration::from_secs(1));
        let p = nn.allocate_pipeline(BlockId::new(1, 0), 3).unwrap();
        assert_eq!(nn.pipeline_of(BlockId::new(1, 0)), Some(p.clone()));
        assert_eq!(p.iter().collect::<BTreeSet<_>>(), [1, 2, 3].iter().collect());
    }

    #[test]
    fn too_few_live_nodes() {
        let nn = Namenode::new(vec![1, 2, 3], Duration::ZERO);
        nn.report_dead(2, Instant::now());
        assert!(matches!(
            nn.allocate_pipeline(BlockId::new(1, 0), 3),
            Err(ClusterError::InsufficientDatanodes { alive: 2, needed: 3 })
        ));
    }

    #[test]
    fn block_is_visible_only_when_complete() {
        let nn = Namenode::new(vec![1, 2, 3], Duration::from_secs(1));
        let b = BlockId::new(1, 0);
        assert!(!nn.register_replica(b, info(3, Some(1)), 3));
        assert!(!nn.register_replica(b, info(2, Some(2)), 3));
        assert!(matches!(nn.get_hosts(b), Err(ClusterError::UnknownBlock(_))));
        assert!(nn.register_replica(b, info(1, None), 3));
        assert_eq!(nn.get_hosts(b).unwrap(), vec![1, 2, 3]);
        assert_eq!(nn.get_hosts_with_index(b, 2).unwrap(), vec![2, 1, 3]);
        assert_eq!(nn.get_hosts_with_index(b, 7).unwrap(), vec![1, 2, 3]);
        nn.check_invariants().unwrap();
    }

    #[test]
    fn liveness_respects_expiry() {
        let nn = Namenode::new(vec![1, 2, 3], Duration::from_millis(50));
        let b = BlockId::new(1, 0);
        for dn in 1..=3 {
            nn.register_replica(b, info(dn, Some(dn as usize)), 3);
        }
        nn.report_dead(2, Instant::now());
        assert_eq!(nn.get_hosts(b).unwrap().len(), 3);
        std::thread::sleep(Duration::from_millis(60));
        assert_eq!(nn.get_hosts(b).unwrap(), vec![1, 3]);
        assert_eq!(nn.get_hosts_with_index(b, 2).unwrap(), vec![1, 3]);
        nn.report_alive(2);
        assert_eq!(nn.get_hosts(b).unwrap().len(), 3);
    }

    #[test]
    fn aborted_blocks_leave_no_trace() {
        let nn = Namenode::new(vec![1, 2], Duration::from_secs(1));
        let b = BlockId::new(4, 2);
        nn.register_replica(b, info(2, None), 2);
        nn.abort_block(b);
        assert!(!nn.register_replica(b, info(1, None), 2));
        assert!(!nn.is_visible(b));
    }

    #[test]
    fn duplicate_paths_are_rejected() {
        let nn = Namenode::new(vec![1], Duration::from_secs(1));
        let e = FileEntry {
            id: nn.reserve_file_id(),
            path: "/a".into(),
            blocks: 0,
            replication: 1,
        };
        nn.commit_file(e.clone()).unwrap();
        assert!(matches!(nn.commit_file(e), Err(ClusterError::FileExists(_))));
    }
}
