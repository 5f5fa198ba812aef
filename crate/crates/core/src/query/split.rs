// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Input splits and task placement.

use std::collections::{BTreeMap, HashSet};

use super::{BoundQuery, QueryError};
use crate::cluster::{DatanodeId, Namenode};
use crate::transport::BlockId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ScanMode {
    IndexScan,
    FullScan,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Splitting {
    /// Pack index-matching blocks per datanode into one split per map slot.
    Hail,
    /// One split per block.
    Default,
}

impl std::str::FromStr for Splitting {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "hail" => Ok(Splitting::Hail),
            "default" => Ok(Splitting::Default),
            other => Err(format!("unknown splitting '{other}', expected hail or default")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockRef {
    pub block: BlockId,
    /// Replica to read.
    pub target: DatanodeId,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InputSplit {
    pub id: usize,
    pub blocks: Vec<BlockRef>,
    pub mode: ScanMode,
}

impl InputSplit {
    /// The datanode the split prefers to run on.
    pub fn target(&self) -> DatanodeId {
        self.blocks[0].target
    }
}

/// A replica choice for one block.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReplicaChoice {
    pub datanode: DatanodeId,
    /// Filter attribute the replica is indexed on, if it matches one.
    pub indexed: Option<usize>,
}

/// Picks the replica for `block`: the first live replica indexed on the
/// earliest filter attribute that has one, else the first live replica.
/// Replicas in `excluded` are skipped. `None` if nothing is left.
pub fn choose_replica(
    nn: &Namenode,
    block: BlockId,
    q: &BoundQuery,
    excluded: &HashSet<(BlockId, DatanodeId)>,
) -> Result<Option<ReplicaChoice>, QueryError> {
    let usable = |dn: &DatanodeId| !excluded.contains(&(block, *dn));
    for p in &q.predicates {
        let hosts = nn.get_hosts_with_index(block, p.position)?;
        if let Some(&dn) = hosts.iter().find(|dn| usable(dn)) {
            let info = nn.replica_info(block, dn);
            if info.is_some_and(|i| i.indexed_attribute == Some(p.position)) {
                return Ok(Some(ReplicaChoice {
                    datanode: dn,
                    indexed: Some(p.position),
                }));
            }
        }
    }
    Ok(nn
        .get_hosts(block)?
        .into_iter()
        .find(usable)
        .map(|datanode| ReplicaChoice {
            datanode,
            indexed: None,
        }))
}

fn no_replica(block: BlockId) -> QueryError {
    QueryError::JobFailed(format!("block {block} has no alive replica"))
}

/// Groups index-matching blocks by their preferred datanode and cuts each
/// group into `min(map_slots, |group|)` splits, dealing blocks round-robin.
/// Blocks without a matching replica get one full-scan split each.
pub fn hail_splitting(
    blocks: &[BlockId],
    nn: &Namenode,
    q: &BoundQuery,
    map_slots: usize,
) -> Result<Vec<InputSplit>, QueryError> {
    assert!(map_slots > 0, "map_slots must be positive");
    let none = HashSet::new();
    let mut groups: BTreeMap<DatanodeId, Vec<BlockId>> = BTreeMap::new();
    let mut singles = Vec::new();
    for &b in blocks {
        let choice = choose_replica(nn, b, q, &none)?.ok_or_else(|| no_replica(b))?;
        match choice.indexed {
            Some(_) => groups.entry(choice.datanode).or_default().push(b),
            None => singles.push(BlockRef {
                block: b,
                target: choice.datanode,
            }),
        }
    }
    let mut out = Vec::new();
    for (dn, group) in groups {
        let k = map_slots.min(group.len());
        let mut splits: Vec<Vec<BlockRef>> = vec![Vec::new(); k];
        for (i, b) in group.into_iter().enumerate() {
            splits[i % k].push(BlockRef { block: b, target: dn });
        }
        for blocks in splits {
            out.push(InputSplit {
                id: out.len(),
                blocks,
                mode: ScanMode::IndexScan,
            });
        }
    }
    for r in singles {
        out.push(InputSplit {
            id: out.len(),
            blocks: vec![r],
            mode: ScanMode::FullScan,
        });
    }
    Ok(out)
}

/// One split per block. The split still targets an index-matching replica
/// when there is one and is marked for an index scan.
pub fn default_splitting(blocks: &[BlockId], nn: &Namenode, q: &BoundQuery) -> Result<Vec<InputSplit>, QueryError> {
    let none = HashSet::new();
    blocks
        .iter()
        .enumerate()
        .map(|(id, &b)| {
            let choice = choose_replica(nn, b, q, &none)?.ok_or_else(|| no_replica(b))?;
            Ok(InputSplit {
                id,
                blocks: vec![BlockRef {
                    block: b,
                    target: choice.datanode,
                }],
                mode: if choice.indexed.is_some() {
                    ScanMode::IndexScan
                } else {
                    ScanMode::FullScan
                },
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assignment {
    pub split: usize,
    pub datanode: DatanodeId,
    /// Wave in which the task runs when every task takes equal time.
    pub wave: usize,
    pub local: bool,
}

/// Places splits on `alive` datanodes with `map_slots` slots each.
///
/// A split runs on its target when the target has a free slot in the
/// current wave, otherwise on the lowest-id node with a free slot (a remote
/// read). When every slot is taken a new wave starts.
pub fn schedule(splits: &[InputSplit], alive: &[DatanodeId], map_slots: usize) -> Result<Vec<Assignment>, QueryError> {
    if alive.is_empty() || map_slots == 0 {
        return Err(QueryError::NoAliveNodes);
    }
    let mut nodes: Vec<DatanodeId> = alive.to_vec();
    nodes.sort_unstable();
    nodes.dedup();
    let mut free: BTreeMap<DatanodeId, usize> = nodes.iter().map(|&n| (n, map_slots)).collect();
    let mut wave = 0;
    let mut out = Vec::with_capacity(splits.len());
    for s in splits {
        if free.values().all(|&f| f == 0) {
            wave += 1;
            free.values_mut().for_each(|f| *f = map_slots);
        }
        let target = s.target();
        let (dn, local) = match free.get(&target) {
            Some(&f) if f > 0 => (target, true),
            _ => (*free.iter().find(|(_, &f)| f > 0).unwrap().0, false),
        };
        *free.get_mut(&dn).unwrap() -= 1;
        out.push(Assignment {
            split: s.id,
            datanode: dn,
            wave,
            local,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn split(id: usize, target: DatanodeId) -> InputSplit {
        InputSplit {
            id,
            blocks: vec![BlockRef {
                block: BlockId::new(1, id as u32),
                target,
            }],
            mode: ScanMode::IndexScan,
        }
    }

    #[test]
    fn free_target_is_local() {
        let a = schedule(&[split(0, 2)], &[1, 2, 3], 2).unwrap();
        assert_eq!(a[0].datanode, 2);
        assert!(a[0].local);
    }

    #[test]
    fn saturated_target_goes_remote_to_lowest_id() {
        let splits: Vec<_> = (0..3).map(|i| split(i, 2)).collect();
        let a = schedule(&splits, &[1, 2, 3], 2).unwrap();
        assert_eq!(
            a.iter().map(|x| (x.datanode, x.local)).collect::<Vec<_>>(),
            vec![(2, true), (2, true), (1, false)]
        );
        assert!(a.iter().all(|x| x.wave == 0));
    }

    #[test]
    fn dead_target_goes_remote_and_waves_roll_over() {
        let splits: Vec<_> = (0..5).map(|i| split(i, 9)).collect();
        let a = schedule(&splits, &[3, 1], 2).unwrap();
        let placed: Vec<_> = a.iter().map(|x| (x.datanode, x.wave)).collect();
        assert_eq!(placed, vec![(1, 0), (1, 0), (3, 0), (3, 0), (1, 1)]);
        assert!(a.iter().all(|x| !x.local));
    }

    #[test]
    fn no_alive_nodes() {
        assert!(matches!(
            schedule(&[split(0, 1)], &[], 2),
            Err(QueryError::NoAliveNodes)
        ));
    }

    #[test]
    fn splitting_names() {
        assert_eq!("HAIL".parse::<Splitting>().unwrap(), Splitting::Hail);
        assert_eq!("default".parse::<Splitting>().unwrap(), Splitting::Default);
        assert!("hadoop".parse::<Splitting>().is_err());
    }
}
