// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Deterministic dataset generators.
//!
//! UserVisits-like rows:
//!
//! | pos | name         | type    | distribution                                   |
//! |-----|--------------|---------|------------------------------------------------|
//! | 1   | sourceIP     | IPV4    | uniform; [`HOT_IP`] with prob. [`HOT_IP_RATE`]  |
//! | 2   | destURL      | VARCHAR | `http://<word>.<tld>/<path>`, 20-70 chars       |
//! | 3   | visitDate    | DATE    | uniform 1990-01-01..=2012-12-31; hot-IP rows hit [`HOT_DATE`] with prob. [`HOT_DATE_RATE`] |
//! | 4   | adRevenue    | FLOAT64 | uniform [0, 500), 4 decimals                    |
//! | 5   | userAgent    | VARCHAR | one of 12 strings                               |
//! | 6   | countryCode  | VARCHAR | one of 20 codes                                 |
//! | 7   | languageCode | VARCHAR | one of 12 codes                                 |
//! | 8   | searchWord   | VARCHAR | 3-12 lowercase letters                          |
//! | 9   | duration     | INT32   | uniform 1..=100                                 |
//!
//! Synthetic rows: 19 INT32 columns, each uniform in `[0, SYNTHETIC_DOMAIN)`.

use std::io::{self, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::schema::{format_date, parse_date, AttrType, Schema};

pub const HOT_IP: &str = "172.101.11.46";
pub const HOT_IP_RATE: f64 = 2e-4;
pub const HOT_DATE: &str = "1992-12-22";
pub const HOT_DATE_RATE: f64 = 0.25;
pub const SYNTHETIC_COLUMNS: usize = 19;
pub const SYNTHETIC_DOMAIN: i32 = 1_000_000_000;

const AGENTS: [&str; 12] = [
    "Mozilla/5.0 (X11; Linux x86_64)",
    "Mozilla/5.0 (Windows NT 10.0; Win64; x64)",
    "Mozilla/5.0 (Macintosh; Intel Mac OS X 10_15_7)",
    "Opera/9.80 (Windows NT 6.1)",
    "Lynx/2.8.9rel.1",
    "curl/7.88.1",
    "Wget/1.21",
    "Googlebot/2.1",
    "Mozilla/4.0 (compatible; MSIE 6.0)",
    "Safari/605.1.15",
    "Links (2.29; Linux)",
    "w3m/0.5.3",
];
const COUNTRIES: [&str; 20] = [
    "USA", "DEU", "FRA", "GBR", "JPN", "CHN", "BRA", "IND", "CAN", "AUS", "ITA", "ESP", "MEX", "KOR", "RUS", "NLD",
    "SWE", "CHE", "ARG", "ZAF",
];
const LANGUAGES: [&str; 12] = [
    "en-US", "en-GB", "de-DE", "fr-FR", "ja-JP", "zh-CN", "pt-BR", "hi-IN", "it-IT", "es-ES", "ko-KR", "ru-RU",
];
const TLDS: [&str; 6] = ["com", "org", "net", "de", "io", "edu"];

pub fn uservisits_schema() -> Schema {
    Schema::from_types(
        [
            ("sourceIP", AttrType::Ipv4),
            ("destURL", AttrType::Varchar),
            ("visitDate", AttrType::Date),
            ("adRevenue", AttrType::Float64),
            ("userAgent", AttrType::Varchar),
            ("countryCode", AttrType::Varchar),
            ("languageCode", AttrType::Varchar),
            ("searchWord", AttrType::Varchar),
            ("duration", AttrType::Int32),
        ],
        b',',
    )
    .expect("static schema")
}

pub fn synthetic_schema() -> Schema {
    let names: Vec<String> = (1..=SYNTHETIC_COLUMNS).map(|i| format!("a{i}")).collect();
    Schema::from_types(names.iter().map(|n| (n.as_str(), AttrType::Int32)), b',').expect("static schema")
}

fn word(rng: &mut ChaCha8Rng, min: usize, max: usize, out: &mut String) {
    let n = rng.gen_range(min..=max);
    out.extend((0..n).map(|_| rng.gen_range(b'a'..=b'z') as char));
}

/// Writes `rows` UserVisits lines. Same seed, same bytes.
pub fn write_uservisits<W: Write>(mut out: W, rows: u64, seed: u64) -> io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let first = parse_date("1990-01-01").unwrap();
    let last = parse_date("2012-12-31").unwrap();
    let hot_date = parse_date(HOT_DATE).unwrap();
    let mut line = String::with_capacity(256);
    for _ in 0..rows {
        line.clear();
        let hot = rng.gen_bool(HOT_IP_RATE);
        if hot {
            line.push_str(HOT_IP);
        } else {
            let mut ip: [u8; 4] = rng.gen();
            while std::net::Ipv4Addr::from(ip).to_string() == HOT_IP {
                ip = rng.gen();
            }
            line.push_str(&std::net::Ipv4Addr::from(ip).to_string());
        }
        line.push_str(",http://");
        word(&mut rng, 4, 16, &mut line);
        line.push('.');
        line.push_str(TLDS[rng.gen_range(0..TLDS.len())]);
        line.push('/');
        word(&mut rng, 1, 30, &mut line);
        line.push(',');
        let date = if hot && rng.gen_bool(HOT_DATE_RATE) {
            hot_date
        } else {
            rng.gen_range(first..=last)
        };
        line.push_str(&format_date(date));
        line.push(',');
        let revenue: f64 = rng.gen_range(0.0..500.0);
        line.push_str(&format!("{revenue:.4}"));
        line.push(',');
        line.push_str(AGENTS[rng.gen_range(0..AGENTS.len())]);
        line.push(',');
        line.push_str(COUNTRIES[rng.gen_range(0..COUNTRIES.len())]);
        line.push(',');
        line.push_str(LANGUAGES[rng.gen_range(0..LANGUAGES.len())]);
        line.push(',');
        word(&mut rng, 3, 12, &mut line);
        line.push(',');
        line.push_str(&rng.gen_range(1..=100).to_string());
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()
}

pub fn generate_uservisits(rows: u64, seed: u64) -> Vec<u8> {
    let mut out = Vec::new();
    write_uservisits(&mut out, rows, seed).expect("writing to memory");
    out
}

/// Writes `rows` lines of 19 uniform integers. Same seed, same bytes.
pub fn write_synthetic<W: Write>(mut out: W, rows: u64, seed: u64) -> io::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut line = String::with_capacity(SYNTHETIC_COLUMNS * 11);
    for _ in 0..rows {
        line.clear();
        for c in 0..SYNTHETIC_COLUMNS {
            if c > 0 {
                line.push(',');
            }
            line.push_str(&rng.gen_range(0..SYNTHETIC_DOMAIN).to_string());
        }
        line.push('\n');
        out.write_all(line.as_bytes())?;
    }
    out.flush()
}

pub fn generate_synthetic(rows: u64, seed: u64) -> Vec<u8> {
    let mut out = Vec::new();
    write_synthetic(&mut out, rows, seed).expect("writing to memory");
    out
}

/// A named query over a generated dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NamedQuery {
    pub name: &'static str,
    pub annotation: String,
}

fn q(name: &'static str, annotation: &str) -> NamedQuery {
    NamedQuery {
        name,
        annotation: annotation.to_string(),
    }
}

/// The five selection/projection queries over UserVisits.
pub fn bob_queries() -> Vec<NamedQuery> {
    vec![
        q(
            "Bob-Q1",
            r#"filter="@3 between(1999-01-01,2000-01-01)", projection={@1}"#,
        ),
        q(
            "Bob-Q2",
            &format!(r#"filter="@1 =({HOT_IP})", projection={{@8,@9,@4}}"#),
        ),
        q(
            "Bob-Q3",
            &format!(r#"filter="@1 =({HOT_IP}) and @3 =({HOT_DATE})", projection={{@8,@9,@4}}"#),
        ),
        q("Bob-Q4", r#"filter="@4 >=(1) and @4 <=(10)", projection={@8,@9,@4}"#),
        q("Bob-Q5", r#"filter="@4 >=(1) and @4 <=(100)", projection={@8,@9,@4}"#),
    ]
}

/// Selectivity 0.10 (Q1) and 0.01 (Q2) on attribute 1, projecting 19, 9
/// or 1 attributes.
pub fn synthetic_queries() -> Vec<NamedQuery> {
    let proj = |k: usize| (1..=k).map(|p| format!("@{p}")).collect::<Vec<_>>().join(",");
    let cut1 = SYNTHETIC_DOMAIN / 10 - 1;
    let cut2 = SYNTHETIC_DOMAIN / 100 - 1;
    vec![
        NamedQuery {
            name: "Syn-Q1a",
            annotation: format!(r#"filter="@1 <=({cut1})", projection={{{}}}"#, proj(19)),
        },
        NamedQuery {
            name: "Syn-Q1b",
            annotation: format!(r#"filter="@1 <=({cut1})", projection={{{}}}"#, proj(9)),
        },
        NamedQuery {
            name: "Syn-Q1c",
            annotation: format!(r#"filter="@1 <=({cut1})", projection={{{}}}"#, proj(1)),
        },
        NamedQuery {
            name: "Syn-Q2a",
            annotation: format!(r#"filter="@1 <=({cut2})", projection={{{}}}"#, proj(19)),
        },
        NamedQuery {
            name: "Syn-Q2b",
            annotation: format!(r#"filter="@1 <=({cut2})", projection={{{}}}"#, proj(9)),
        },
        NamedQuery {
            name: "Syn-Q2c",
            annotation: format!(r#"filter="@1 <=({cut2})", projection={{{}}}"#, proj(1)),
        },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::{parse_line, ParsedLine, Value};

    #[test]
    fn empty_and_deterministic() {
        assert!(generate_uservisits(0, 1).is_empty());
        assert!(generate_synthetic(0, 1).is_empty());
        assert_eq!(generate_uservisits(500, 7), generate_uservisits(500, 7));
        assert_ne!(generate_uservisits(500, 7), generate_uservisits(500, 8));
        assert_eq!(generate_synthetic(500, 7), generate_synthetic(500, 7));
    }

    #[test]
    fn every_generated_line_parses() {
        let uv = uservisits_schema();
        for line in generate_uservisits(2000, 3)
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty())
        {
            assert!(
                matches!(parse_line(line, &uv), ParsedLine::Good(_)),
                "{}",
                String::from_utf8_lossy(line)
            );
        }
        let syn = synthetic_schema();
        assert_eq!(syn.len(), 19);
        for line in generate_synthetic(500, 3)
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty())
        {
            assert!(matches!(parse_line(line, &syn), ParsedLine::Good(_)));
        }
    }

    #[test]
    fn synthetic_q1_selects_about_a_tenth() {
        let syn = synthetic_schema();
        let data = generate_synthetic(20_000, 5);
        let mut hits = 0;
        let mut rows = 0;
        for line in data.split(|&b| b == b'\n').filter(|l| !l.is_empty()) {
            let ParsedLine::Good(r) = parse_line(line, &syn) else {
                panic!()
            };
            rows += 1;
            if r.values[0] <= Value::Int32(SYNTHETIC_DOMAIN / 10 - 1) {
                hits += 1;
            }
        }
        let sel = hits as f64 / rows as f64;
        assert!((sel - 0.10).abs() <= 0.01, "{sel}");
    }

    #[test]
    fn hot_ip_appears_at_the_configured_rate() {
        let uv = uservisits_schema();
        let data = generate_uservisits(100_000, 11);
        let hot = crate::schema::AttrType::Ipv4.parse_value(HOT_IP.as_bytes()).unwrap();
        let count = data
            .split(|&b| b == b'\n')
            .filter(|l| !l.is_empty())
            .filter(|l| match parse_line(l, &uv) {
                ParsedLine::Good(r) => r.values[0] == hot,
                _ => false,
            })
            .count();
        // 20 expected; a Poisson count this far out is vanishingly rare.
        assert!((5..=40).contains(&count), "{count}");
    }
}
