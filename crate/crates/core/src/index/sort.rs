// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

use super::{AnyIndex, IndexError, IndexKey, IndexSection, VarOffsetList};
use crate::pax::{ColumnData, PaxBlock};

/// Maps each output row to the input row it came from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SortPermutation {
    pub perm: Vec<u32>,
}

impl SortPermutation {
    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i as u32 == p)
    }
}

fn stable_order<K: IndexKey>(keys: &[K]) -> Vec<u32> {
    let mut perm: Vec<u32> = (0..keys.len() as u32).collect();
    perm.sort_by(|&a, &b| keys[a as usize].key_cmp(&keys[b as usize]));
    perm
}

/// Stably sorts every column of `block` by the attribute at `key_position`.
/// The bad region is carried over untouched; any existing index is dropped.
pub fn sort_block(block: &PaxBlock, key_position: usize) -> Result<(PaxBlock, SortPermutation), IndexError> {
    let key = block
        .read_column(key_position)
        .map_err(|_| IndexError::UnknownAttribute(key_position))?;
    let perm = match key {
        ColumnData::Int32(k) | ColumnData::Date(k) => stable_order(k),
        ColumnData::Int64(k) => stable_order(k),
        ColumnData::Float64(k) => stable_order(k),
        ColumnData::Ipv4(k) => stable_order(k),
        ColumnData::Varchar(_) => return Err(IndexError::UnsupportedKeyType(key_position)),
    };
    let columns = block.columns().iter().map(|c| c.permute(&perm)).collect();
    Ok((block.with_columns(columns), SortPermutation { perm }))
}

/// Builds the sparse clustered index of an already sorted block plus an
/// offset list for every VARCHAR column, and embeds them into the block.
pub fn build_index(mut sorted: PaxBlock, key_position: usize, partition_size: usize) -> Result<PaxBlock, IndexError> {
    if partition_size == 0 {
        return Err(IndexError::ZeroPartitionSize);
    }
    let key = sorted
        .read_column(key_position)
        .map_err(|_| IndexError::UnknownAttribute(key_position))?;
    let index = AnyIndex::build(key, key_position, partition_size)?;
    let var_offsets = sorted
        .schema()
        .attributes()
        .iter()
        .zip(sorted.columns())
        .filter_map(|(attr, col)| match col {
            ColumnData::Varchar(v) => Some(VarOffsetList {
                position: attr.position,
                offsets: v.starts().iter().step_by(partition_size).map(|&s| s as u64).collect(),
            }),
            _ => None,
        })
        .collect();
    sorted.set_index(Some(IndexSection { index, var_offsets }));
    Ok(sorted)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::blocks::LogicalBlock;
    use crate::pax::to_pax;
    use crate::schema::{AttrType, Record, Schema, Value};
    use std::collections::HashMap;

    fn kv_block(keys: &[i32], payload: &[&str]) -> PaxBlock {
        let schema = Schema::from_types([("k", AttrType::Int32), ("p", AttrType::Varchar)], b',').unwrap();
        let recs = keys
            .iter()
            .zip(payload)
            .map(|(k, p)| Record::new(vec![Value::Int32(*k), Value::Varchar((*p).into())]))
            .collect();
        to_pax(&LogicalBlock::from_records(recs, vec![]), &schema)
    }

    #[test]
    fn three_row_sort() {
        let (sorted, perm) = sort_block(&kv_block(&[5, 1, 3], &["a", "b", "c"]), 1).unwrap();
        assert_eq!(sorted.read_column(1).unwrap(), &ColumnData::Int32(vec![1, 3, 5]));
        assert_eq!(
            sorted.read_column(2).unwrap().values(),
            ["b", "c", "a"].map(|s| Value::Varchar(s.into()))
        );
        assert_eq!(perm.perm, vec![1, 2, 0]);
    }

    #[test]
    fn sorted_input_gives_identity() {
        let (_, perm) = sort_block(&kv_block(&[1, 2, 2, 9], &["a", "b", "c", "d"]), 1).unwrap();
        assert!(perm.is_identity());
    }

    #[test]
    fn varchar_keys_are_rejected() {
        assert_eq!(
            sort_block(&kv_block(&[1], &["a"]), 2).unwrap_err(),
            IndexError::UnsupportedKeyType(2)
        );
        assert_eq!(
            sort_block(&kv_block(&[1], &["a"]), 3).unwrap_err(),
            IndexError::UnknownAttribute(3)
        );
    }

    #[test]
    fn sort_is_stable_and_preserves_the_row_multiset() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let keys: Vec<i32> = (0..10_000).map(|_| rng.gen_range(0..500)).collect();
        let payload: Vec<String> = (0..10_000).map(|i| format!("row{i}")).collect();
        let refs: Vec<&str> = payload.iter().map(String::as_str).collect();
        let block = kv_block(&keys, &refs);
        let (sorted, _) = sort_block(&block, 1).unwrap();

        let mut before: HashMap<Record, usize> = HashMap::new();
        block
            .rows()
            .into_iter()
            .for_each(|r| *before.entry(r).or_default() += 1);
        let mut after: HashMap<Record, usize> = HashMap::new();
        sorted
            .rows()
            .into_iter()
            .for_each(|r| *after.entry(r).or_default() += 1);
        assert_eq!(before, after);

        // Equal keys keep input order: payload row numbers ascend within a run.
        let rows = sorted.rows();
        for w in rows.windows(2) {
            if w[0].values[0] == w[1].values[0] {
                let id = |r: &Record| match &r.values[1] {
                    Value::Varchar(s) => s[3..].parse::<usize>().unwrap(),
                    _ => unreachable!(),
                };
                assert!(id(&w[0]) < id(&w[1]));
            }
        }
    }

    #[test]
    fn build_index_rejects_unsorted_blocks() {
        let block = kv_block(&[2, 1], &["a", "b"]);
        assert_eq!(build_index(block, 1, 4).unwrap_err(), IndexError::NotSorted(1));
    }

    #[test]
    fn offset_lists_mark_every_nth_value() {
        let block = kv_block(&[1, 2, 3, 4, 5], &["aa", "b", "", "cccc", "d"]);
        let indexed = build_index(block, 1, 2).unwrap();
        let section = indexed.index().unwrap();
        assert_eq!(section.index.partition_count(), 3);
        // Column bytes: "aa\0b\0\0cccc\0d\0"
        assert_eq!(
            section.var_offsets,
            vec![VarOffsetList {
                position: 2,
                offsets: vec![0, 5, 11]
            }]
        );
    }

    #[test]
    fn indexed_block_round_trips_through_bytes() {
        let (sorted, _) = sort_block(&kv_block(&[9, 4, 7, 1, 4], &["x", "yy", "", "z", "w"]), 1).unwrap();
        let indexed = build_index(sorted, 1, 2).unwrap();
        let back = PaxBlock::deserialize(&indexed.serialize()).unwrap();
        assert_eq!(back, indexed);
        assert_eq!(
            back.index().unwrap().index.root_values(),
            vec![Value::Int32(1), Value::Int32(4), Value::Int32(9)]
        );
    }
}
