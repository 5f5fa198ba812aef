// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use crate::blocks::DEFAULT_BLOCK_BUDGET;
use crate::index::DEFAULT_PARTITION_SIZE;
use crate::schema::Schema;

use super::ClusterError;

/// Sort key per replica; the i-th pipeline node sorts by `sort_keys[i]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReplicaConfig {
    pub sort_keys: Vec<Option<usize>>,
}

impl ReplicaConfig {
    pub fn new(sort_keys: Vec<Option<usize>>) -> Self {
        ReplicaConfig { sort_keys }
    }

    /// `r` replicas, none sorted.
    pub fn unsorted(r: usize) -> Self {
        ReplicaConfig {
            sort_keys: vec![None; r],
        }
    }

    pub fn replication(&self) -> usize {
        self.sort_keys.len()
    }

    pub fn index_count(&self) -> usize {
        self.sort_keys.iter().flatten().count()
    }

    /// Every key must name a fixed-size attribute of `schema`.
    pub fn validate(&self, schema: &Schema) -> Result<(), ClusterError> {
        if self.sort_keys.is_empty() {
            return Err(ClusterError::Config("replication factor must be at least 1".into()));
        }
        for &k in self.sort_keys.iter().flatten() {
            match schema.attr_type(k) {
                None => return Err(ClusterError::Config(format!("sort key @{k} is not in the schema"))),
                Some(t) if !t.is_fixed() => {
                    return Err(ClusterError::Config(format!(
                        "sort key @{k} has variable-size type {t}"
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }
}

impl FromStr for ReplicaConfig {
    type Err = ClusterError;

    /// Comma-separated positions, `none` for an unsorted replica: `3,1,none`.
    fn from_str(s: &str) -> Result<Self, ClusterError> {
        let keys = s
            .split(',')
            .map(|k| match k.trim() {
                "none" | "NONE" | "-" => Ok(None),
                k => k
                    .trim_start_matches('@')
                    .parse::<usize>()
                    .ok()
                    .filter(|&p| p >= 1 && p <= u16::MAX as usize)
                    .map(Some)
                    .ok_or_else(|| ClusterError::Config(format!("bad sort key {k:?}"))),
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(ReplicaConfig { sort_keys: keys })
    }
}

impl fmt::Display for ReplicaConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .sort_keys
            .iter()
            .map(|k| k.map_or("none".to_string(), |p| p.to_string()))
            .collect();
        f.write_str(&parts.join(","))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterConfig {
    pub datanodes: usize,
    pub map_slots: usize,
    pub replicas: ReplicaConfig,
    pub block_size: usize,
    pub partition_size: usize,
    /// How long the namenode keeps believing a killed node is alive.
    pub expiry: Duration,
    /// Blocks the client keeps in flight during an upload.
    pub upload_parallelism: usize,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        ClusterConfig {
            datanodes: 3,
            map_slots: 2,
            replicas: ReplicaConfig::unsorted(3),
            block_size: DEFAULT_BLOCK_BUDGET,
            partition_size: DEFAULT_PARTITION_SIZE,
            expiry: Duration::from_secs(2),
            upload_parallelism: 4,
        }
    }
}

impl ClusterConfig {
    pub fn validate(&self) -> Result<(), ClusterError> {
        let bad = |m: &str| Err(ClusterError::Config(m.into()));
        if self.datanodes == 0 {
            return bad("need at least one datanode");
        }
        if self.map_slots == 0 {
            return bad("map_slots must be positive");
        }
        if self.block_size == 0 || self.partition_size == 0 || self.upload_parallelism == 0 {
            return bad("block_size, partition_size and upload_parallelism must be positive");
        }
        if self.replicas.replication() == 0 {
            return bad("replication must be at least 1");
        }
        Ok(())
    }

    /// Parses `key value` lines; `#` starts a comment. Missing keys keep
    /// their defaults. `replication r` without `sort_keys` means r unsorted
    /// replicas.
    pub fn parse(text: &str) -> Result<ClusterConfig, ClusterError> {
        let mut cfg = ClusterConfig::default();
        let mut replication = None;
        let mut keys = None;
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |m: String| ClusterError::Config(format!("line {}: {m}", no + 1));
            let (key, value) = line
                .split_once(char::is_whitespace)
                .map(|(k, v)| (k, v.trim()))
                .ok_or_else(|| err(format!("expected `key value`, got {line:?}")))?;
            let num = || value.parse::<u64>().map_err(|_| err(format!("{key} needs a number")));
            match key {
                "datanodes" => cfg.datanodes = num()? as usize,
                "map_slots" => cfg.map_slots = num()? as usize,
                "replication" => replication = Some(num()? as usize),
                "sort_keys" => keys = Some(value.parse::<ReplicaConfig>().map_err(|e| err(e.to_string()))?),
                "block_size" => cfg.block_size = num()? as usize,
                "partition_size" => cfg.partition_size = num()? as usize,
                "expiry_ms" => cfg.expiry = Duration::from_millis(num()?),
                "upload_parallelism" => cfg.upload_parallelism = num()? as usize,
                other => return Err(err(format!("unknown key {other:?}"))),
            }
        }
        cfg.replicas = match (replication, keys) {
            (Some(r), Some(k)) if k.replication() != r => {
                return Err(ClusterError::Config(format!(
                    "replication {r} but {} sort keys",
                    k.replication()
                )))
            }
            (_, Some(k)) => k,
            (Some(r), None) => ReplicaConfig::unsorted(r),
            (None, None) => cfg.replicas,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        format!(
            "datanodes {}\nmap_slots {}\nreplication {}\nsort_keys {}\nblock_size {}\npartition_size {}\nexpiry_ms {}\nupload_parallelism {}\n",
            self.datanodes,
            self.map_slots,
            self.replicas.replication(),
            self.replicas,
            self.block_size,
            self.partition_size,
            self.expiry.as_millis(),
            self.upload_parallelism
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::AttrType;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ClusterConfig::parse(
            "# desk cluster\ndatanodes 5\nmap_slots 2\nsort_keys 3, 1, none  # per replica\nblock_size 1024\nexpiry_ms 250\n",
        )
        .unwrap();
        assert_eq!(cfg.datanodes, 5);
        assert_eq!(cfg.replicas.sort_keys, vec![Some(3), Some(1), None]);
        assert_eq!(cfg.expiry, Duration::from_millis(250));
        assert_eq!(ClusterConfig::parse(&cfg.to_text()).unwrap(), cfg);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(ClusterConfig::parse("datanodes x").is_err());
        assert!(ClusterConfig::parse("colour blue").is_err());
        assert!(ClusterConfig::parse("replication 2\nsort_keys 1,2,3").is_err());
        assert!(ClusterConfig::parse("datanodes 0").is_err());
        assert!("1,0".parse::<ReplicaConfig>().is_err());
    }

    #[test]
    fn replication_alone_means_unsorted() {
        let cfg = ClusterConfig::parse("replication 4").unwrap();
        assert_eq!(cfg.replicas, ReplicaConfig::unsorted(4));
    }

    #[test]
    fn sort_keys_must_be_fixed_size_attributes() {
        let schema = Schema::from_types([("a", AttrType::Int32), ("b", AttrType::Varchar)], b',').unwrap();
        assert!(ReplicaConfig::new(vec![Some(1), None]).validate(&schema).is_ok());
        assert!(ReplicaConfig::new(vec![Some(2)]).validate(&schema).is_err());
        assert!(ReplicaConfig::new(vec![Some(3)]).validate(&schema).is_err());
    }
}
