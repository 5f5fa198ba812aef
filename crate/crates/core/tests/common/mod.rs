// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Random blocks and queries plus a row-at-a-time oracle.

#![allow(dead_code)]

use std::collections::HashMap;

use hail_core::index::{build_index, sort_block, BlockReader};
use hail_core::pax::to_pax;
use hail_core::query::{read_block, BoundQuery, QueryAnnotation, RawOp, RawPredicate};
use hail_core::schema::{format_date, parse_line, ParsedLine};
use hail_core::{cut_blocks, AttrType, Record, Schema};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct OracleCase {
    pub schema: Schema,
    pub text: Vec<u8>,
    pub sort_key: Option<usize>,
    pub partition_size: usize,
    pub annotation: QueryAnnotation,
}

fn random_field(rng: &mut ChaCha8Rng, ty: AttrType) -> String {
    // Small domains so that duplicates span partitions.
    match ty {
        AttrType::Int32 => rng.gen_range(-20i32..20).to_string(),
        AttrType::Int64 => (rng.gen_range(-20i64..20) * 1_000_000_007).to_string(),
        AttrType::Float64 => (rng.gen_range(-40i32..40) as f64 / 4.0).to_string(),
        AttrType::Date => format_date(9000 + rng.gen_range(0..40)),
        AttrType::Ipv4 => format!("10.0.{}.{}", rng.gen_range(0..3), rng.gen_range(0..8)),
        AttrType::Varchar => {
            let len = rng.gen_range(0..5);
            (0..len).map(|_| *b"abcde".choose(rng).unwrap() as char).collect()
        }
    }
}

/// A random block, sort key, partition size and query, all from `seed`.
pub fn random_case(seed: u64) -> OracleCase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let arity = rng.gen_range(1..=5);
    let mut types: Vec<AttrType> = (0..arity).map(|_| *AttrType::ALL.choose(&mut rng).unwrap()).collect();
    // Every case exercises VARCHAR reconstruction and has an indexable key.
    if !types.contains(&AttrType::Varchar) {
        types.push(AttrType::Varchar);
    }
    if types.iter().all(|t| !t.is_fixed()) {
        types.insert(0, AttrType::Int32);
    }
    types.shuffle(&mut rng);
    let names: Vec<String> = (1..=types.len()).map(|i| format!("a{i}")).collect();
    let schema = Schema::from_types(names.iter().map(|n| n.as_str()).zip(types.iter().copied()), b',').unwrap();

    let rows = rng.gen_range(1..400);
    let mut text = Vec::new();
    for _ in 0..rows {
        if rng.gen_bool(0.03) {
            text.extend_from_slice(b"not,a,row,,,,,,\n");
            continue;
        }
        let fields: Vec<String> = types.iter().map(|&t| random_field(&mut rng, t)).collect();
        text.extend_from_slice(fields.join(",").as_bytes());
        text.push(b'\n');
    }

    let fixed: Vec<usize> = (1..=types.len()).filter(|&p| types[p - 1].is_fixed()).collect();
    let sort_key = if rng.gen_bool(0.9) {
        Some(*fixed.choose(&mut rng).unwrap())
    } else {
        None
    };
    let partition_size = *[1usize, 2, 3, 7, 16, 64, 1024].choose(&mut rng).unwrap();

    let mut filter = Vec::new();
    let conjuncts = rng.gen_range(0..=3);
    for i in 0..conjuncts {
        let position = match sort_key {
            Some(k) if i == 0 && rng.gen_bool(0.8) => k,
            _ => rng.gen_range(1..=types.len()),
        };
        let ty = types[position - 1];
        let a = random_field(&mut rng, ty);
        let b = random_field(&mut rng, ty);
        let (va, vb) = (
            ty.parse_value(a.as_bytes()).unwrap(),
            ty.parse_value(b.as_bytes()).unwrap(),
        );
        let (lo, hi) = if va <= vb { (a, b) } else { (b, a) };
        let op = match rng.gen_range(0..4) {
            0 => RawOp::Eq(lo),
            1 => RawOp::Between(lo, hi),
            2 => RawOp::Ge(lo),
            _ => RawOp::Le(hi),
        };
        filter.push(RawPredicate { position, op });
    }
    let mut projection: Vec<usize> = (1..=types.len()).filter(|_| rng.gen_bool(0.5)).collect();
    projection.shuffle(&mut rng);
    OracleCase {
        schema,
        text,
        sort_key,
        partition_size,
        annotation: QueryAnnotation { filter, projection },
    }
}

/// Serializes `text` as one block, sorted and indexed on `sort_key`.
pub fn build_block(schema: &Schema, text: &[u8], sort_key: Option<usize>, n: usize) -> Vec<u8> {
    let blocks = cut_blocks(text, schema, text.len() + 1);
    assert_eq!(blocks.len(), 1);
    let pax = to_pax(&blocks[0], schema);
    match sort_key {
        Some(k) => {
            let (sorted, _) = sort_block(&pax, k).unwrap();
            build_index(sorted, k, n).unwrap().serialize()
        }
        None => pax.serialize(),
    }
}

/// Brute force: parse every line, filter, project.
pub fn oracle(schema: &Schema, text: &[u8], q: &BoundQuery) -> (Vec<Record>, Vec<Vec<u8>>) {
    let mut good = Vec::new();
    let mut bad = Vec::new();
    let body = text.strip_suffix(b"\n").unwrap_or(text);
    for line in body.split(|&b| b == b'\n') {
        match parse_line(line, schema) {
            ParsedLine::Good(r) if q.matches(&r) => good.push(q.project(&r)),
            ParsedLine::Good(_) => {}
            ParsedLine::Bad(b) => bad.push(b.raw),
        }
    }
    (good, bad)
}

pub fn multiset<T: std::hash::Hash + Eq>(items: impl IntoIterator<Item = T>) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for i in items {
        *m.entry(i).or_default() += 1;
    }
    m
}

/// Checks index scan and full scan against the oracle. Returns whether the
/// index was used.
pub fn check_case(case: &OracleCase) -> Result<bool, String> {
    let q = case.annotation.bind(&case.schema).map_err(|e| e.to_string())?;
    let bytes = build_block(&case.schema, &case.text, case.sort_key, case.partition_size);
    let reader = BlockReader::open(bytes.as_slice()).map_err(|e| e.to_string())?;
    let (want, want_bad) = oracle(&case.schema, &case.text, &q);
    let indexed = read_block(&reader, &q, true).map_err(|e| e.to_string())?;
    let full = read_block(&reader, &q, false).map_err(|e| e.to_string())?;
    if multiset(indexed.records.clone()) != multiset(want.clone()) {
        return Err(format!(
            "index scan gave {} rows, oracle {} (query {}, key {:?}, n {})",
            indexed.records.len(),
            want.len(),
            case.annotation,
            case.sort_key,
            case.partition_size
        ));
    }
    if multiset(full.records) != multiset(want) {
        return Err(format!("full scan differs from oracle (query {})", case.annotation));
    }
    if indexed.bad != want_bad || full.bad != want_bad {
        return Err("bad records differ".into());
    }
    let expect_index = case.sort_key.is_some_and(|k| q.predicate_on(k).is_some());
    if indexed.used_index != expect_index {
        return Err(format!("used_index {} but expected {expect_index}", indexed.used_index));
    }
    Ok(indexed.used_index)
}
