// Copyright 2026 The hail Authors
// SPDX-License-Identifier: Apache-2.0

//! Content-aware blocking: cut a text stream into logical blocks at line
//! boundaries so that no row is ever split between two blocks.

use std::io::{self, BufRead};

use crate::schema::{parse_line, BadReason, BadRecord, ParsedLine, Record, Schema};

/// Desk-scale default block budget.
pub const DEFAULT_BLOCK_BUDGET: usize = 4 * 1024 * 1024;

/// Where the i-th input line of a block ended up.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RowRef {
    Good(usize),
    Bad(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogicalBlock {
    pub records: Vec<Record>,
    pub bad_records: Vec<BadRecord>,
    /// Input order of all lines in this block.
    pub order: Vec<RowRef>,
    pub byte_budget: usize,
    /// Exact input bytes covered by this block, terminators included.
    pub text: Vec<u8>,
}

impl LogicalBlock {
    fn new(byte_budget: usize) -> LogicalBlock {
        LogicalBlock {
            records: Vec::new(),
            bad_records: Vec::new(),
            order: Vec::new(),
            byte_budget,
            text: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn line_count(&self) -> usize {
        self.order.len()
    }

    /// Builds a block straight from parsed records (no source text).
    pub fn from_records(records: Vec<Record>, bad_records: Vec<BadRecord>) -> LogicalBlock {
        let order = (0..records.len())
            .map(RowRef::Good)
            .chain((0..bad_records.len()).map(RowRef::Bad))
            .collect();
        LogicalBlock {
            records,
            bad_records,
            order,
            byte_budget: usize::MAX,
            text: Vec::new(),
        }
    }

    fn push_line(&mut self, line_with_terminator: &[u8], schema: &Schema) {
        let mut content = line_with_terminator;
        if let Some(stripped) = content.strip_suffix(b"\n") {
            content = stripped;
            if let Some(stripped) = content.strip_suffix(b"\r") {
                content = stripped;
            }
        }
        let parsed = if line_with_terminator.len() > self.byte_budget {
            ParsedLine::Bad(BadRecord {
                raw: content.to_vec(),
                reason: BadReason::OversizedLine,
            })
        } else {
            parse_line(content, schema)
        };
        match parsed {
            ParsedLine::Good(r) => {
                self.order.push(RowRef::Good(self.records.len()));
                self.records.push(r);
            }
            ParsedLine::Bad(b) => {
                self.order.push(RowRef::Bad(self.bad_records.len()));
                self.bad_records.push(b);
            }
        }
        self.text.extend_from_slice(line_with_terminator);
    }
}

/// Streaming block cutter over any buffered reader.
///
/// A block is closed as soon as the next line would push its text size past
/// the budget. A line longer than the budget becomes an oversized bad record
/// in a block of its own.
pub struct BlockCutter<'s, R> {
    reader: R,
    schema: &'s Schema,
    byte_budget: usize,
    pending: Option<Vec<u8>>,
    done: bool,
}

impl<'s, R: BufRead> BlockCutter<'s, R> {
    pub fn new(reader: R, schema: &'s Schema, byte_budget: usize) -> Self {
        assert!(byte_budget > 0, "block budget must be positive");
        BlockCutter {
            reader,
            schema,
            byte_budget,
            pending: None,
            done: false,
        }
    }

    fn next_line(&mut self) -> io::Result<Option<Vec<u8>>> {
        if let Some(line) = self.pending.take() {
            return Ok(Some(line));
        }
        let mut line = Vec::new();
        if self.reader.read_until(b'\n', &mut line)? == 0 {
            return Ok(None);
        }
        Ok(Some(line))
    }
}

impl<R: BufRead> Iterator for BlockCutter<'_, R> {
    type Item = io::Result<LogicalBlock>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.done {
            return None;
        }
        let mut block = LogicalBlock::new(self.byte_budget);
        loop {
            let line = match self.next_line() {
                Ok(Some(line)) => line,
                Ok(None) => {
                    self.done = true;
                    break;
                }
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            };
            if !block.is_empty() && block.text.len() + line.len() > self.byte_budget {
                self.pending = Some(line);
                break;
            }
            block.push_line(&line, self.schema);
        }
        if block.is_empty() {
            None
        } else {
            Some(Ok(block))
        }
    }
}

/// Cuts an in-memory byte stream into logical blocks.
pub fn cut_blocks(input: &[u8], schema: &Schema, byte_budget: usize) -> Vec<LogicalBlock> {
    BlockCutter::new(input, schema, byte_budget)
        .map(|b| b.expect("reading from a slice cannot fail"))
        .collect()
}
