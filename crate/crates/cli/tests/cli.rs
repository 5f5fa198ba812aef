// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

use std::path::Path;
use std::process::{Command, Output};

fn hail(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_hail"))
        .arg("--root")
        .arg(root)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn setup(dir: &Path) -> std::path::PathBuf {
    let root = dir.join("cluster");
    let conf = dir.join("cluster.conf");
    std::fs::write(
        &conf,
        "datanodes 4\nmap_slots 2\nreplication 3\nsort_keys 3,1,4\nblock_size 65536\npartition_size 128\nexpiry_ms 100\n",
    )
    .unwrap();
    let data = dir.join("uv.txt");
    let schema = dir.join("uv.schema");
    ok(&hail(
        &root,
        &[
            "gen",
            "--rows",
            "3000",
            "--out",
            data.to_str().unwrap(),
            "--schema",
            schema.to_str().unwrap(),
        ],
    ));
    ok(&hail(
        &root,
        &[
            "--cluster-config",
            conf.to_str().unwrap(),
            "--schema",
            schema.to_str().unwrap(),
            "--sort-keys",
            "3,1,4",
            "upload",
            data.to_str().unwrap(),
            "--path",
            "/uv",
        ],
    ));
    root
}

#[test]
fn upload_query_inspect_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let root = setup(dir.path());

    let result = dir.path().join("result.txt");
    let metrics = dir.path().join("metrics.txt");
    ok(&hail(
        &root,
        &[
            "query",
            "--path",
            "/uv",
            "--filter",
            "@4 between(7,8)",
            "--projection",
            "@4,@9",
            "--output",
            result.to_str().unwrap(),
            "--metrics",
            metrics.to_str().unwrap(),
        ],
    ));
    let lines = std::fs::read_to_string(&result).unwrap();
    assert!(!lines.is_empty());
    assert!(lines.lines().all(|l| l.starts_with("7")));
    let m = std::fs::read_to_string(&metrics).unwrap();
    assert!(m.contains(&format!("output_records={}", lines.lines().count())));

    // Same answer with full scans and default splitting, on stdout.
    let full = ok(&hail(
        &root,
        &[
            "--splitting",
            "default",
            "query",
            "--path",
            "/uv",
            "--no-index",
            "--annotation",
            r#"filter="@4 between(7,8)", projection={@4,@9}"#,
        ],
    ));
    let mut a: Vec<&str> = lines.lines().collect();
    let mut b: Vec<&str> = full.lines().collect();
    a.sort_unstable();
    b.sort_unstable();
    assert_eq!(a, b);

    let dump = ok(&hail(&root, &["inspect", "--path", "/uv", "--block", "1"]));
    assert_eq!(dump.matches("== block").count(), 3);
    for replica in dump.split("== block").skip(1) {
        let rows: u64 = field(replica, "rows").parse().unwrap();
        let entries = replica.lines().find(|l| l.starts_with("root_entries")).unwrap();
        let n: u64 = field(replica, "partition").parse().unwrap();
        let count: u64 = entries.split_whitespace().nth(1).unwrap().parse().unwrap();
        assert_eq!(count, rows.div_ceil(n));
    }
}

fn field<'a>(text: &'a str, key: &str) -> &'a str {
    text.lines()
        .find_map(|l| l.strip_prefix(key).filter(|rest| rest.starts_with(' ')))
        .unwrap()
        .trim()
}

#[test]
fn uploading_to_an_existing_path_fails() {
    let dir = tempfile::tempdir().unwrap();
    let root = setup(dir.path());
    let out = hail(&root, &["--dataset-does-not-exist"]);
    assert_eq!(out.status.code(), Some(2));
    let data = dir.path().join("uv.txt");
    let again = hail(
        &root,
        &[
            "upload",
            data.to_str().unwrap(),
            "--path",
            "/uv",
            "--dataset",
            "uservisits",
        ],
    );
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("/uv"));
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("c");
    assert_eq!(hail(&root, &["frobnicate"]).status.code(), Some(2));
    assert_eq!(hail(&root, &["query", "--filter", "@1 ~(3)"]).status.code(), Some(2));
    assert_eq!(hail(&root, &["--splitting", "hadoop", "query"]).status.code(), Some(2));
    assert_eq!(hail(&root, &["bench", "nope"]).status.code(), Some(2));
    assert_eq!(hail(&root, &["kill", "99"]).status.code(), Some(2));
    let data = dir.path().join("x.txt");
    std::fs::write(&data, "1\n").unwrap();
    assert_eq!(hail(&root, &["upload", data.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn killed_node_stays_dead_across_invocations() {
    let dir = tempfile::tempdir().unwrap();
    let root = setup(dir.path());
    ok(&hail(&root, &["kill", "2"]));
    let dump = ok(&hail(
        &root,
        &["inspect", "--path", "/uv", "--block", "0", "--datanode", "2"],
    ));
    assert!(dump.is_empty(), "dead node served {dump}");
    let q = ok(&hail(&root, &["query", "--path", "/uv", "--projection", "@1"]));
    assert_eq!(q.lines().count(), 3000);
    ok(&hail(&root, &["revive", "2"]));
    let dump = ok(&hail(
        &root,
        &["inspect", "--path", "/uv", "--block", "0", "--datanode", "2"],
    ));
    assert!(dump.contains("rows"));
}

#[test]
fn bench_writes_csv_and_dat() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let stdout = ok(&hail(
        &dir.path().join("c"),
        &[
            "bench",
            "replication",
            "--rows-per-node",
            "200",
            "--repetitions",
            "1",
            "--out",
            out.to_str().unwrap(),
        ],
    ));
    assert!(stdout.contains("replication.csv"));
    let csv = std::fs::read_to_string(out.join("replication.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 4);
    assert!(out.join("replication.dat").exists());
}
