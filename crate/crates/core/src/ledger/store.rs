//! Append-only block store and the line-oriented ledger file.
//!
//! File layout: line 1 is the canonical-JSON [`FileHeader`]; every following
//! line is one canonical-JSON [`Block`]. Lines end with `\n`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::codec::{canonical_encode, Digest};

use super::block::{header_digest, Block};
use super::LedgerError;

pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileHeader {
    pub format_version: u32,
    pub scheme_id: String,
    pub channel: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockStore {
    pub scheme_id: String,
    pub channel: String,
    blocks: Vec<Block>,
    /// Bumped on any mutable access, so cached audits know to start over.
    epoch: u64,
}

impl BlockStore {
    pub fn new(scheme_id: &str, channel: &str) -> Self {
        Self { scheme_id: scheme_id.to_string(), channel: channel.to_string(), blocks: Vec::new(), epoch: 0 }
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn blocks(&self) -> &[Block] {
        &self.blocks
    }

    pub fn last(&self) -> Option<&Block> {
        self.blocks.last()
    }

    pub fn head_digest(&self) -> Option<Digest> {
        self.last().map(Block::digest)
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// The previous-hash a block appended now must carry.
    pub fn expected_previous_hash(&self) -> Digest {
        self.head_digest().unwrap_or(Digest::ZERO)
    }

    pub fn append_block(&mut self, block: Block) -> Result<(), LedgerError> {
        let number = block.header.number;
        if number != self.blocks.len() as u64 || block.header.previous_hash != self.expected_previous_hash() {
            return Err(LedgerError::ChainLink { block_number: number });
        }
        self.blocks.push(block);
        Ok(())
    }

    pub fn read_block(&self, index: usize) -> Option<&Block> {
        self.blocks.get(index)
    }

    /// Raw mutable access for fault injection and tooling. Bypasses linkage
    /// checks.
    pub fn blocks_mut(&mut self) -> &mut Vec<Block> {
        self.epoch += 1;
        &mut self.blocks
    }

    /// Builds a store without linkage checks (for tools that must load
    /// damaged chains).
    pub fn from_blocks_unchecked(scheme_id: &str, channel: &str, blocks: Vec<Block>) -> Self {
        Self { scheme_id: scheme_id.to_string(), channel: channel.to_string(), blocks, epoch: 0 }
    }

    pub fn file_header(&self) -> FileHeader {
        FileHeader { format_version: FORMAT_VERSION, scheme_id: self.scheme_id.clone(), channel: self.channel.clone() }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = canonical_encode(&self.file_header());
        out.push(b'\n');
        for block in &self.blocks {
            out.extend_from_slice(&canonical_encode(block));
            out.push(b'\n');
        }
        out
    }

    /// Parses a ledger file, enforcing chain linkage like [`append_block`](Self::append_block).
    pub fn from_bytes(bytes: &[u8]) -> Result<Self, LedgerError> {
        let mut lines = bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty());
        let first = lines.next().ok_or(LedgerError::Parse { line: 1, reason: "missing file header".into() })?;
        let header: FileHeader =
            serde_json::from_slice(first).map_err(|e| LedgerError::Parse { line: 1, reason: e.to_string() })?;
        if header.format_version != FORMAT_VERSION {
            return Err(LedgerError::Parse {
                line: 1,
                reason: format!("unsupported format_version {}", header.format_version),
            });
        }
        let mut store = Self::new(&header.scheme_id, &header.channel);
        for (i, line) in lines.enumerate() {
            let block: Block =
                serde_json::from_slice(line).map_err(|e| LedgerError::Parse { line: i + 2, reason: e.to_string() })?;
            store.append_block(block)?;
        }
        Ok(store)
    }

    pub fn write_file(&self, path: &Path) -> Result<(), LedgerError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn read_file(path: &Path) -> Result<Self, LedgerError> {
        Self::from_bytes(&fs::read(path)?)
    }

    /// Chain-continuity predicate over every adjacent pair.
    pub fn is_continuous(&self) -> bool {
        self.blocks.iter().enumerate().all(|(i, b)| {
            b.header.number == i as u64
                && b.header.previous_hash
                    == if i == 0 { Digest::ZERO } else { header_digest(&self.blocks[i - 1].header) }
        })
    }
}
