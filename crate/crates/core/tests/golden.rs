// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Byte-exact block files. Regenerate with `HAIL_BLESS=1` after an
//! intentional format change and update FORMAT.md alongside.

use std::path::PathBuf;

use hail_core::index::{build_index, sort_block, BlockReader};
use hail_core::pax::to_pax;
use hail_core::transport::checksum_file;
use hail_core::{cut_blocks, AttrType, PaxBlock, Schema, Value};

const INPUT: &[u8] = b"\
3,alpha,2001-02-03,1.5,10.0.0.1,9000000000
1,,1999-12-31,-0.25,192.168.1.7,-4
not a row
2,gamma,2000-01-01,100,8.8.8.8,0
1,beta,1970-01-01,2.75,127.0.0.1,42
";

fn schema() -> Schema {
    Schema::from_types(
        [
            ("id", AttrType::Int32),
            ("name", AttrType::Varchar),
            ("day", AttrType::Date),
            ("score", AttrType::Float64),
            ("ip", AttrType::Ipv4),
            ("big", AttrType::Int64),
        ],
        b',',
    )
    .unwrap()
}

fn golden(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name)
}

fn check(name: &str, bytes: &[u8]) {
    let path = golden(name);
    if std::env::var_os("HAIL_BLESS").is_some() {
        std::fs::write(&path, bytes).unwrap();
    }
    let want = std::fs::read(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert!(want == bytes, "{name} differs from the golden file");
}

fn plain() -> PaxBlock {
    let blocks = cut_blocks(INPUT, &schema(), 1 << 20);
    to_pax(&blocks[0], &schema())
}

fn indexed() -> PaxBlock {
    let (sorted, _) = sort_block(&plain(), 1).unwrap();
    build_index(sorted, 1, 2).unwrap()
}

#[test]
fn unsorted_block_matches_golden() {
    let bytes = plain().serialize();
    check("plain.hail", &bytes);
    check("plain.crc", &checksum_file(&bytes));
}

#[test]
fn indexed_block_matches_golden() {
    let bytes = indexed().serialize();
    check("indexed.hail", &bytes);
    check("indexed.crc", &checksum_file(&bytes));
}

#[test]
fn golden_files_decode_to_the_input() {
    let plain = PaxBlock::deserialize(&std::fs::read(golden("plain.hail")).unwrap()).unwrap();
    assert_eq!(plain.row_count(), 4);
    assert_eq!(plain.bad_region(), &[b"not a row".to_vec()]);
    assert_eq!(plain.row(1).values[1], Value::Varchar(String::new()));

    let bytes = std::fs::read(golden("indexed.hail")).unwrap();
    let reader = BlockReader::open(bytes.as_slice()).unwrap();
    let ix = reader.load_index().unwrap().unwrap();
    assert_eq!(ix.key_position(), 1);
    assert_eq!(ix.index.root_values(), vec![Value::Int32(1), Value::Int32(2)]);
    assert_eq!(ix.offsets_for(2).unwrap(), &[0, 6]); // "" and "beta\0" precede partition 1
    let ids: Vec<Value> = reader.read_column(1).unwrap().values();
    assert_eq!(
        ids,
        vec![Value::Int32(1), Value::Int32(1), Value::Int32(2), Value::Int32(3)]
    );
}

#[test]
fn header_starts_with_magic_and_version() {
    let bytes = std::fs::read(golden("indexed.hail")).unwrap();
    assert_eq!(&bytes[..4], b"HAIL");
    assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
}
