// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

mod common;

use std::collections::{BTreeSet, HashSet};
use std::fs;
use std::io::{BufWriter, Cursor};
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use hail_core::cluster::{BitFlip, Cluster, ClusterConfig, ClusterError, ReplicaConfig, UploadFailure, UploadFaults};
use hail_core::datagen::{
    bob_queries, generate_uservisits, synthetic_schema, uservisits_schema, write_synthetic, write_uservisits,
};
use hail_core::index::{index_sizing, BlockReader, CountingSource, ReadError};
use hail_core::pax::to_pax;
use hail_core::query::{
    identity_map, parse_annotation, run_job, slowdown, JobMetrics, JobOptions, KillSpec, Splitting,
};
use hail_core::{cut_blocks, AttrType, Schema, Value};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn e<E: std::fmt::Display>(err: E) -> String {
    err.to_string()
}

fn main() {
    let criteria: [Criterion; 10] = [
        ("oracle equivalence", c1_oracle_equivalence),
        ("index sizing arithmetic", c2_index_sizing),
        ("partition mapping", c3_partition_mapping),
        ("map-task reduction", c4_map_task_reduction),
        ("record-reader speedup", c5_record_reader_speedup),
        ("upload overhead", c6_upload_overhead),
        ("replication scaling", c7_replication_scaling),
        ("failover", c8_failover),
        ("corruption detection", c9_corruption_detection),
        ("checksum divergence", c10_checksum_divergence),
    ];
    let only: Option<Vec<usize>> = std::env::var("HAIL_ACCEPTANCE_ONLY")
        .ok()
        .map(|v| v.split(',').filter_map(|s| s.trim().parse().ok()).collect());
    let mut failures = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let n = i + 1;
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                failures += 1;
                println!("criterion {n:>2} FAIL  {name}: {why} [{secs:.1}s]");
            }
        }
    }
    if failures > 0 {
        eprintln!("{failures} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn c1_oracle_equivalence() -> Outcome {
    let start = Instant::now();
    // Cases that fall back to a full scan are checked too but do not count.
    let mut cases = 0u64;
    let mut indexed = 0;
    let mut varchar_projected = 0;
    for seed in 0..5000u64 {
        if indexed >= 1000 {
            break;
        }
        cases += 1;
        let case = common::random_case(seed.wrapping_mul(0x9E37_79B9_7F4A_7C15));
        if common::check_case(&case).map_err(|m| format!("seed {seed}: {m}"))? {
            indexed += 1;
        }
        let q = case.annotation.bind(&case.schema).map_err(e)?;
        if q.projection
            .iter()
            .any(|&p| case.schema.attr_type(p) == Some(AttrType::Varchar))
        {
            varchar_projected += 1;
        }
    }
    ensure(indexed >= 1000, || format!("only {indexed} cases used the index"))?;
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < 120.0, || format!("took {secs:.1}s"))?;
    Ok(format!(
        "{cases} random triples match the brute-force oracle ({indexed} via index scan, {varchar_projected} reconstruct VARCHAR)"
    ))
}

fn c2_index_sizing() -> Outcome {
    let block = 256u64 << 20;
    let s = index_sizing(block, 40, 4, 1024);
    // Independent arithmetic: 256 MiB of 40-byte rows, one 4-byte key per 1,024 rows.
    let expected = ((block as f64 / 40.0).floor() / 1024.0).ceil() as u64;
    ensure(s.root_entries == expected, || {
        format!("{} entries, oracle {expected}", s.root_entries)
    })?;
    ensure(s.root_entries.abs_diff(6554) <= 1, || {
        format!("{} entries", s.root_entries)
    })?;
    let kb = s.root_bytes as f64 / 1024.0;
    ensure((kb - 25.6).abs() < 0.1, || format!("root is {kb:.2} KiB"))?;
    ensure(s.overhead_ratio <= 0.0002, || format!("ratio {}", s.overhead_ratio))?;
    Ok(format!(
        "{} root entries, {} bytes ({kb:.2} KiB), {:.4}% of the block",
        s.root_entries,
        s.root_bytes,
        s.overhead_ratio * 100.0
    ))
}

fn c3_partition_mapping() -> Outcome {
    let schema = Schema::from_types([("id", AttrType::Int32), ("url", AttrType::Varchar)], b',').unwrap();
    let mut text = String::new();
    for i in 0..50_000 {
        text.push_str(&format!("{i},http://example.org/page/{}\n", i * 7 % 1000));
    }
    let bytes = common::build_block(&schema, text.as_bytes(), Some(1), 1024);
    let src = CountingSource::new(bytes.as_slice());
    let reader = BlockReader::open(&src).map_err(e)?;
    let ix = reader.load_index().map_err(e)?.ok_or("no index")?;
    let offsets = ix.offsets_for(2).ok_or("no offset list for @2")?.to_vec();
    let column = reader.metadata().column(2).unwrap();
    src.clear();
    let rec = reader.reconstruct(Some(&ix), &[43_425], &[2]).map_err(e)?;
    let reads = src.reads();
    let want = column.offset + offsets[42]..column.offset + offsets[43];
    ensure(reads == vec![want.clone()], || {
        format!("reads {reads:?}, expected only {want:?}")
    })?;
    let value = Value::Varchar(format!("http://example.org/page/{}", 43_425 * 7 % 1000));
    ensure(rec[0].values[0] == value, || format!("got {:?}", rec[0].values[0]))?;
    Ok(format!(
        "row 43,425 read VARCHAR partition {} only ({} bytes)",
        43_425 / 1024,
        want.end - want.start
    ))
}

fn c4_map_task_reduction() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let schema = uservisits_schema();
    let budget = 4096;
    let all = generate_uservisits(6000, 11);
    let blocks = cut_blocks(&all, &schema, budget);
    ensure(blocks.len() >= 160, || format!("only {} blocks", blocks.len()))?;
    let input: Vec<u8> = blocks[..160].iter().flat_map(|b| b.text.iter().copied()).collect();
    let cfg = ClusterConfig {
        datanodes: 10,
        map_slots: 2,
        replicas: "3,1,4".parse().unwrap(),
        block_size: budget,
        partition_size: 64,
        ..ClusterConfig::default()
    };
    let c = Cluster::start(dir.path(), cfg).map_err(e)?;
    let r = c
        .upload(
            "/uv",
            Cursor::new(input),
            &schema,
            &"3,1,4".parse().unwrap(),
            UploadFaults::default(),
        )
        .map_err(e)?;
    ensure(r.blocks == 160, || format!("{} blocks uploaded", r.blocks))?;
    let q = parse_annotation(&bob_queries()[0].annotation).unwrap();
    let map = identity_map(b',');
    let run = |splitting| {
        let o = JobOptions {
            splitting,
            ..JobOptions::default()
        };
        run_job(&c, "/uv", &q, &map, &o).map_err(e)
    };
    let (hr, hail) = run(Splitting::Hail)?;
    let (dr, dflt) = run(Splitting::Default)?;
    ensure(hail.map_tasks <= 20, || format!("{} HAIL map tasks", hail.map_tasks))?;
    ensure(dflt.map_tasks == 160, || {
        format!("{} default map tasks", dflt.map_tasks)
    })?;
    ensure(hr.digest() == dr.digest(), || "results differ".into())?;
    Ok(format!(
        "160 blocks on 10 datanodes: {} map tasks with HAIL splitting, {} by default",
        hail.map_tasks, dflt.map_tasks
    ))
}

/// Generates at least `bytes` of UserVisits text into `path`.
fn uservisits_file(path: &Path, bytes: u64, seed: u64) -> Result<u64, String> {
    let sample = generate_uservisits(10_000, seed).len() as f64 / 10_000.0;
    let rows = (bytes as f64 / sample * 1.02).ceil() as u64;
    write_uservisits(BufWriter::new(fs::File::create(path).map_err(e)?), rows, seed).map_err(e)?;
    let size = fs::metadata(path).map_err(e)?.len();
    ensure(size >= bytes, || format!("fixture has only {size} bytes"))?;
    Ok(rows)
}

fn c5_record_reader_speedup() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let input = dir.path().join("uv.txt");
    let rows = uservisits_file(&input, 500_000_000, 5)?;
    let size = fs::metadata(&input).map_err(e)?.len();
    let keys: ReplicaConfig = "1,3,4".parse().unwrap();
    let cfg = ClusterConfig {
        datanodes: 5,
        map_slots: 2,
        replicas: keys.clone(),
        block_size: 8 << 20,
        partition_size: 1024,
        ..ClusterConfig::default()
    };
    let c = Cluster::start(dir.path().join("cluster"), cfg).map_err(e)?;
    let report = c.upload_file("/uv", &input, &uservisits_schema(), &keys).map_err(e)?;
    fs::remove_file(&input).map_err(e)?;

    // Bob-Q2: point lookup on the hot source IP.
    let nq = &bob_queries()[1];
    let q = parse_annotation(&nq.annotation).unwrap();
    let map = identity_map(b',');
    let run = |use_index| {
        let o = JobOptions {
            splitting: Splitting::Default,
            use_index,
            ..JobOptions::default()
        };
        run_job(&c, "/uv", &q, &map, &o).map_err(e)
    };
    let (full_res, full) = run(false)?;
    let (ix_res, ix) = run(true)?;
    let selectivity = full_res.lines.len() as f64 / rows as f64;
    ensure(selectivity > 0.0 && selectivity <= 1e-3, || {
        format!("selectivity {selectivity}")
    })?;
    ensure(ix_res.digest() == full_res.digest(), || {
        "index and full scan disagree".into()
    })?;
    ensure(ix.index_scan_blocks == report.blocks as usize, || {
        format!("{} index scans", ix.index_scan_blocks)
    })?;
    let (t_ix, t_full) = (ix.avg_record_reader(), full.avg_record_reader());
    ensure(t_ix * 5.0 <= t_full, || {
        format!("index {t_ix:.6}s vs full {t_full:.6}s per block")
    })?;
    Ok(format!(
        "{} MB, {} blocks, selectivity {selectivity:.2e}: record reader {:.3} ms (index) vs {:.3} ms (full), {:.1}x",
        size / 1_000_000,
        report.blocks,
        t_ix * 1e3,
        t_full * 1e3,
        t_full / t_ix
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn timed_upload(
    root: &Path,
    input: &Path,
    schema: &Schema,
    cfg: &ClusterConfig,
) -> Result<(f64, Arc<Cluster>), String> {
    if root.exists() {
        fs::remove_dir_all(root).map_err(e)?;
    }
    let c = Cluster::start(root, cfg.clone()).map_err(e)?;
    let r = c.upload_file("/data", input, schema, &cfg.replicas).map_err(e)?;
    Ok((r.wall.as_secs_f64(), c))
}

fn c6_upload_overhead() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let input = dir.path().join("uv.txt");
    uservisits_file(&input, 64_000_000, 6)?;
    let schema = uservisits_schema();
    let base = ClusterConfig {
        datanodes: 3,
        block_size: 4 << 20,
        partition_size: 1024,
        ..ClusterConfig::default()
    };
    let mut t0 = Vec::new();
    let mut t3 = Vec::new();
    for rep in 0..3 {
        for (keys, times) in [("none,none,none", &mut t0), ("1,3,4", &mut t3)] {
            let cfg = ClusterConfig {
                replicas: keys.parse().unwrap(),
                ..base.clone()
            };
            let (t, c) = timed_upload(&dir.path().join(format!("c{rep}")), &input, &schema, &cfg)?;
            times.push(t);
            // Exactly one data file write per replica, of exactly its size.
            let blocks = c.file("/data").map_err(e)?.block_ids();
            let stats = c.stats();
            let expected = blocks.len() as u64 * 3;
            ensure(stats.data_files_written == expected, || {
                format!("{} data writes for {expected} replicas", stats.data_files_written)
            })?;
            let mut on_disk = 0;
            for b in &blocks {
                for dn in c.namenode().get_hosts(*b).map_err(e)? {
                    on_disk += fs::metadata(c.datanode(dn).unwrap().block_path(*b)).map_err(e)?.len();
                }
            }
            ensure(stats.data_bytes_written == on_disk, || {
                format!("{} bytes written, {on_disk} on disk", stats.data_bytes_written)
            })?;
        }
    }
    let (m0, m3) = (median(t0), median(t3));
    ensure(m3 <= 2.0 * m0, || format!("3 indexes {m3:.3}s vs none {m0:.3}s"))?;
    Ok(format!(
        "64 MB: {m0:.3}s without indexes, {m3:.3}s with 3 ({:.2}x); one data write per replica",
        m3 / m0
    ))
}

fn c7_replication_scaling() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let input = dir.path().join("syn.txt");
    write_synthetic(BufWriter::new(fs::File::create(&input).map_err(e)?), 300_000, 7).map_err(e)?;
    let schema = synthetic_schema();
    let base = ClusterConfig {
        datanodes: 6,
        block_size: 4 << 20,
        partition_size: 1024,
        ..ClusterConfig::default()
    };
    let cfg = |r: usize| ClusterConfig {
        replicas: ReplicaConfig::new((1..=r).map(Some).collect()),
        ..base.clone()
    };
    let mut t3 = Vec::new();
    let mut t6 = Vec::new();
    let mut last = None;
    for rep in 0..3 {
        t3.push(timed_upload(&dir.path().join(format!("r3-{rep}")), &input, &schema, &cfg(3))?.0);
        let (t, c) = timed_upload(&dir.path().join(format!("r6-{rep}")), &input, &schema, &cfg(6))?;
        t6.push(t);
        last = Some(c);
    }
    let c = last.unwrap();
    let blocks = c.file("/data").map_err(e)?.block_ids();
    for b in &blocks {
        let hosts = c.namenode().get_hosts(*b).map_err(e)?;
        ensure(hosts.len() == 6, || format!("{b} has {} replicas", hosts.len()))?;
        let mut keys = BTreeSet::new();
        for dn in hosts {
            let reader = c.open_replica(*b, dn).map_err(e)?;
            let ix = reader
                .load_index()
                .map_err(e)?
                .ok_or_else(|| format!("{b} on dn{dn} has no index"))?;
            let key = ix.key_position();
            let rows = reader.metadata().row_count;
            ensure(ix.meta.root_entries == rows.div_ceil(1024), || {
                format!("{b} dn{dn}: root size")
            })?;
            let col = reader.read_column(key).map_err(e)?.values();
            ensure(col.windows(2).all(|w| w[0] <= w[1]), || {
                format!("{b} dn{dn}: not sorted on @{key}")
            })?;
            ensure(
                ix.index.root_values() == col.iter().step_by(1024).cloned().collect::<Vec<_>>(),
                || format!("{b} dn{dn}: root directory mismatch"),
            )?;
            keys.insert(key);
        }
        ensure(keys == (1..=6).collect(), || format!("{b} keys {keys:?}"))?;
    }
    let (m3, m6) = (median(t3), median(t6));
    let ratio = m6 / m3;
    ensure(ratio <= 2.2, || format!("r=6 {m6:.3}s vs r=3 {m3:.3}s ({ratio:.2}x)"))?;
    Ok(format!(
        "{} blocks: r=3 {m3:.3}s, r=6 {m6:.3}s ({ratio:.2}x); 6 distinct valid indexes per block",
        blocks.len()
    ))
}

fn failover_run(keys: &str, dir: &Path) -> Result<(JobMetrics, JobMetrics), String> {
    let cfg = ClusterConfig {
        datanodes: 5,
        map_slots: 2,
        replicas: keys.parse().unwrap(),
        block_size: 64 * 1024,
        partition_size: 256,
        expiry: Duration::from_millis(300),
        ..ClusterConfig::default()
    };
    let c = Cluster::start(dir, cfg).map_err(e)?;
    c.upload(
        "/uv",
        Cursor::new(generate_uservisits(40_000, 8)),
        &uservisits_schema(),
        &keys.parse().unwrap(),
        UploadFaults::default(),
    )
    .map_err(e)?;
    let q = parse_annotation(&bob_queries()[0].annotation).unwrap();
    let map = identity_map(b',');
    let (base, bm) = run_job(&c, "/uv", &q, &map, &JobOptions::default()).map_err(e)?;
    let o = JobOptions {
        kill: Some(KillSpec {
            datanode: None,
            fraction: 0.5,
        }),
        ..JobOptions::default()
    };
    let (failed, mut fm) = run_job(&c, "/uv", &q, &map, &o).map_err(e)?;
    ensure(fm.killed.is_some(), || "no node was killed".into())?;
    ensure(base.digest() == failed.digest(), || {
        format!("{keys}: results differ after the kill")
    })?;
    fm.slowdown = Some(slowdown(bm.t_end_to_end, fm.t_end_to_end));
    Ok((bm, fm))
}

fn c8_failover() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let (hb, hf) = failover_run("3,1,4", &dir.path().join("hail"))?;
    let (_, of) = failover_run("3,3,3", &dir.path().join("one"))?;
    ensure(of.rescheduled_tasks > 0, || "nothing was rescheduled".into())?;
    ensure(of.rescheduled_index_scans == of.rescheduled_tasks, || {
        format!(
            "{} of {} rescheduled tasks index-scanned",
            of.rescheduled_index_scans, of.rescheduled_tasks
        )
    })?;
    let pct = |b: &JobMetrics, f: &JobMetrics| (f.t_end_to_end - b.t_end_to_end) / b.t_end_to_end * 100.0;
    ensure((hf.slowdown.unwrap() - pct(&hb, &hf)).abs() < 1e-9, || {
        "slowdown formula".into()
    })?;
    Ok(format!(
        "results unchanged; slowdown HAIL {:.1}% ({} rescheduled), HAIL-1Idx {:.1}% ({}/{} rescheduled tasks index-scanned)",
        hf.slowdown.unwrap(),
        hf.rescheduled_tasks,
        of.slowdown.unwrap(),
        of.rescheduled_index_scans,
        of.rescheduled_tasks
    ))
}

fn c9_corruption_detection() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let schema = uservisits_schema();
    let input = generate_uservisits(4, 9);
    let pax_len = to_pax(&cut_blocks(&input, &schema, 64 * 1024)[0], &schema)
        .serialize()
        .len();
    let chunks = pax_len.div_ceil(512);
    let body_bits = 8 * (28 + 4 * chunks + pax_len);
    let cfg = ClusterConfig {
        datanodes: 3,
        replicas: "3,1,4".parse().unwrap(),
        block_size: 64 * 1024,
        partition_size: 2,
        ..ClusterConfig::default()
    };
    let c = Cluster::start(dir.path(), cfg).map_err(e)?;
    let keys: ReplicaConfig = "3,1,4".parse().unwrap();
    for bit in 0..body_bits {
        let faults = UploadFaults {
            flip: Some(BitFlip {
                block_index: 0,
                seq: 0,
                bit,
            }),
            ..Default::default()
        };
        let err = c.upload(&format!("/flip{bit}"), Cursor::new(&input), &schema, &keys, faults);
        let Err(ClusterError::UploadFailed(f)) = err else {
            return Err(format!("bit {bit}: upload did not fail: {err:?}"));
        };
        let last = *c.namenode().pipeline_of(f[0].0).unwrap().last().unwrap();
        match &f[0].1 {
            UploadFailure::Corrupt { detected_by, .. } if *detected_by == last => {}
            other => return Err(format!("bit {bit}: {other}")),
        }
    }

    c.upload("/good", Cursor::new(&input), &schema, &keys, UploadFaults::default())
        .map_err(e)?;
    let block = c.file("/good").map_err(e)?.block_ids()[0];
    let mut stored_bits = 0;
    for dn in c.namenode().get_hosts(block).map_err(e)? {
        let node = c.datanode(dn).unwrap();
        for (path, is_crc) in [(node.block_path(block), false), (node.crc_path(block), true)] {
            let original = fs::read(&path).map_err(e)?;
            for bit in 0..original.len() * 8 {
                let mut bytes = original.clone();
                bytes[bit / 8] ^= 1 << (bit % 8);
                fs::write(&path, &bytes).map_err(e)?;
                let read = c.open_replica(block, dn).and_then(|r| r.read_full().map(|_| ()));
                match read {
                    Err(ReadError::Checksum { .. }) => {}
                    Err(_) if is_crc => {}
                    other => return Err(format!("{} bit {bit}: read gave {other:?}", path.display())),
                }
                stored_bits += 1;
            }
            fs::write(&path, &original).map_err(e)?;
            c.open_replica(block, dn).and_then(|r| r.read_full()).map_err(e)?;
        }
    }
    Ok(format!(
        "all {body_bits} packet bit flips failed the upload at the last pipeline node; all {stored_bits} stored-file flips caught on read"
    ))
}

fn c10_checksum_divergence() -> Outcome {
    let dir = tempfile::tempdir().map_err(e)?;
    let cfg = ClusterConfig {
        datanodes: 3,
        block_size: 64 * 1024,
        partition_size: 64,
        ..ClusterConfig::default()
    };
    let c = Cluster::start(dir.path(), cfg).map_err(e)?;
    let schema = uservisits_schema();
    let input = generate_uservisits(2000, 10);
    let mut summary = Vec::new();
    for (path, keys, distinct) in [("/sorted", "3,1,4", true), ("/plain", "none,none,none", false)] {
        c.upload(
            path,
            Cursor::new(&input),
            &schema,
            &keys.parse().unwrap(),
            UploadFaults::default(),
        )
        .map_err(e)?;
        let blocks = c.file(path).map_err(e)?.block_ids();
        for b in &blocks {
            let crcs: Vec<Vec<u8>> = c
                .namenode()
                .get_hosts(*b)
                .map_err(e)?
                .into_iter()
                .map(|dn| fs::read(c.datanode(dn).unwrap().crc_path(*b)))
                .collect::<Result<_, _>>()
                .map_err(e)?;
            let unique: HashSet<&Vec<u8>> = crcs.iter().collect();
            let want = if distinct { crcs.len() } else { 1 };
            ensure(unique.len() == want, || {
                format!("{path} {b}: {} distinct .crc files of {}", unique.len(), crcs.len())
            })?;
        }
        summary.push(format!("{path} ({keys}): {} blocks", blocks.len()));
    }
    Ok(format!(
        "sorted replicas have pairwise different .crc files, unsorted identical; {}",
        summary.join(", ")
    ))
}
