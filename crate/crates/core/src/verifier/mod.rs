//! Integrity verification: per-block content hash checks with transaction
//! signature validation, chain linkage, orderer metadata signatures, and the
//! genesis configuration anchor.
//!
//! Nothing stored is trusted. The content hash is recomputed from the
//! envelope region itself (from the raw bytes when reading a ledger file, so
//! even non-canonical edits are caught) and compared with the header.

mod tamper;

pub use tamper::{
    apply_manifest, select_random_targets, tamper_bytes, tamper_file, MutationRule, TamperError, TamperRecord,
    TamperTarget, RECORD_FIELD_PATHS,
};

use std::ops::RangeInclusive;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::value::RawValue;

use crate::codec::{canonical_encode, sha256_digest, Digest};
use crate::identity::{verify_signature, MembershipDirectory, Role};
use crate::ledger::{
    channel_config, header_digest, BlockHeader, BlockMetadata, BlockStore, FileHeader, TransactionEnvelope,
    FORMAT_VERSION,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ViolationKind {
    DataHashMismatch,
    ChainLinkBroken,
    OrdererSignatureInvalid,
    CreatorSignatureInvalid,
    EndorsementSignatureInvalid,
    EmptyBlockData,
    ConfigInvalid,
}

impl ViolationKind {
    pub fn is_signature(self) -> bool {
        matches!(
            self,
            ViolationKind::OrdererSignatureInvalid
                | ViolationKind::CreatorSignatureInvalid
                | ViolationKind::EndorsementSignatureInvalid
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub block_number: u64,
    pub tx_index: Option<usize>,
    pub kind: ViolationKind,
    pub tx_id: Option<String>,
    pub signer: Option<String>,
    pub detail: String,
}

impl Violation {
    fn block(block_number: u64, kind: ViolationKind, detail: impl Into<String>) -> Self {
        Self { block_number, tx_index: None, kind, tx_id: None, signer: None, detail: detail.into() }
    }

    fn sort_key(&self) -> (u64, Option<usize>, ViolationKind, Option<&str>) {
        (self.block_number, self.tx_index, self.kind, self.signer.as_deref())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum VerifyMode {
    /// Creator signatures are checked only for blocks whose content hash
    /// mismatches, as in the original per-block algorithm.
    Paper,
    /// Every creator and endorsement signature is checked unconditionally.
    #[default]
    Strict,
}

impl std::str::FromStr for VerifyMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "paper" => Ok(VerifyMode::Paper),
            "strict" => Ok(VerifyMode::Strict),
            other => Err(format!("unknown mode {other:?}; expected paper or strict")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Intact,
    Tampered,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntegrityReport {
    pub mode: VerifyMode,
    pub blocks_checked: u64,
    pub transactions_checked: u64,
    pub signatures_checked: u64,
    pub signatures_failed: u64,
    pub violations: Vec<Violation>,
    pub verdict: Verdict,
}

impl IntegrityReport {
    pub fn count(&self, kind: ViolationKind) -> usize {
        self.violations.iter().filter(|v| v.kind == kind).count()
    }

    /// Distinct block numbers carrying at least one violation.
    pub fn flagged_blocks(&self) -> std::collections::BTreeSet<u64> {
        self.violations.iter().map(|v| v.block_number).collect()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum VerifyError {
    #[error("ledger file header unreadable: {0}")]
    FileHeader(String),
    #[error("ledger contains no blocks")]
    Empty,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One transaction position inside a block as the verifier sees it.
#[derive(Debug, Clone)]
enum Slot {
    Decoded(Box<TransactionEnvelope>),
    /// `null` or `{}`: no transaction data.
    Empty,
    Malformed {
        tx_id: Option<String>,
        detail: String,
    },
}

/// A block decomposed for checking; any part may be unreadable.
#[derive(Debug, Clone)]
struct BlockParts {
    index: u64,
    header: Option<BlockHeader>,
    metadata: Option<BlockMetadata>,
    content_hash: Digest,
    /// `None` when the envelope region is not a JSON array.
    slots: Option<Vec<Slot>>,
}

impl BlockParts {
    fn from_block(block: &crate::ledger::Block, index: u64) -> Self {
        let slots = block
            .envelopes
            .iter()
            .map(|e| if e.payload.is_empty() { Slot::Empty } else { Slot::Decoded(Box::new(e.clone())) })
            .collect();
        Self {
            index,
            header: Some(block.header.clone()),
            metadata: Some(block.metadata.clone()),
            content_hash: sha256_digest(&canonical_encode(&block.envelopes)),
            slots: Some(slots),
        }
    }

    fn from_line(line: &[u8], index: u64) -> Result<Self, String> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct RawLine<'a> {
            #[serde(borrow)]
            header: &'a RawValue,
            #[serde(borrow)]
            envelopes: &'a RawValue,
            #[serde(borrow)]
            metadata: &'a RawValue,
        }
        let raw: RawLine<'_> = serde_json::from_slice(line).map_err(|e| e.to_string())?;
        let slots = serde_json::from_str::<Vec<&RawValue>>(raw.envelopes.get())
            .ok()
            .map(|items| items.into_iter().map(|item| Self::slot_from_raw(item.get())).collect());
        Ok(Self {
            index,
            header: serde_json::from_str(raw.header.get()).ok(),
            metadata: serde_json::from_str(raw.metadata.get()).ok(),
            content_hash: sha256_digest(raw.envelopes.get().as_bytes()),
            slots,
        })
    }

    fn slot_from_raw(text: &str) -> Slot {
        if matches!(text.trim(), "null" | "{}") {
            return Slot::Empty;
        }
        match serde_json::from_str::<TransactionEnvelope>(text) {
            Ok(env) if env.payload.is_empty() => Slot::Empty,
            Ok(env) => Slot::Decoded(Box::new(env)),
            Err(e) => {
                let tx_id = serde_json::from_str::<serde_json::Value>(text)
                    .ok()
                    .and_then(|v| v.pointer("/header/tx_id").and_then(|t| t.as_str()).map(str::to_string));
                Slot::Malformed { tx_id, detail: e.to_string() }
            }
        }
    }
}

#[derive(Debug, Default)]
struct Counters {
    transactions: u64,
    signatures: u64,
}

fn check_signatures(
    index: u64,
    tx_index: usize,
    env: &TransactionEnvelope,
    directory: &MembershipDirectory,
    endorsements: bool,
    counters: &mut Counters,
    out: &mut Vec<Violation>,
) {
    let content = env.signed_content();
    let tx_id = Some(env.header.tx_id.clone());
    counters.signatures += 1;
    let creator_ok = directory
        .resolve(&env.header.creator)
        .is_some_and(|c| verify_signature(&c.public_key, &content, &env.creator_signature));
    if !creator_ok {
        out.push(Violation {
            block_number: index,
            tx_index: Some(tx_index),
            kind: ViolationKind::CreatorSignatureInvalid,
            tx_id: tx_id.clone(),
            signer: Some(env.header.creator.clone()),
            detail: format!("block {index} tampered in transaction {}: creator signature invalid", env.header.tx_id),
        });
    }
    if !endorsements {
        return;
    }
    for e in &env.endorsements {
        counters.signatures += 1;
        let ok = directory
            .resolve(&e.endorser)
            .filter(|c| c.role.may_endorse())
            .is_some_and(|c| verify_signature(&c.public_key, &content, &e.signature));
        if !ok {
            out.push(Violation {
                block_number: index,
                tx_index: Some(tx_index),
                kind: ViolationKind::EndorsementSignatureInvalid,
                tx_id: tx_id.clone(),
                signer: Some(e.endorser.clone()),
                detail: format!("block {index} tampered in transaction {}: endorsement invalid", env.header.tx_id),
            });
        }
    }
}

/// Walks the block's transactions: signatures for decoded envelopes, an
/// `EmptyBlockData` for empty slots, a creator-signature failure for slots
/// whose signature cannot even be extracted.
fn check_transactions(
    parts: &BlockParts,
    directory: &MembershipDirectory,
    endorsements: bool,
    counters: &mut Counters,
    out: &mut Vec<Violation>,
) {
    let index = parts.index;
    let Some(slots) = &parts.slots else {
        return;
    };
    if slots.is_empty() {
        out.push(Violation::block(
            index,
            ViolationKind::EmptyBlockData,
            format!("no transaction data in block {index}"),
        ));
        return;
    }
    for (i, slot) in slots.iter().enumerate() {
        counters.transactions += 1;
        match slot {
            Slot::Decoded(env) => check_signatures(index, i, env, directory, endorsements, counters, out),
            Slot::Empty => out.push(Violation {
                block_number: index,
                tx_index: Some(i),
                kind: ViolationKind::EmptyBlockData,
                tx_id: None,
                signer: None,
                detail: format!("no transaction data in block {index} at position {i}"),
            }),
            Slot::Malformed { tx_id, detail } => {
                counters.signatures += 1;
                out.push(Violation {
                    block_number: index,
                    tx_index: Some(i),
                    kind: ViolationKind::CreatorSignatureInvalid,
                    tx_id: tx_id.clone(),
                    signer: None,
                    detail: format!("transaction unreadable, signature cannot be validated: {detail}"),
                });
            }
        }
    }
}

fn integrity_of(
    parts: &BlockParts,
    stored_data_hash: &Digest,
    directory: &MembershipDirectory,
    mode: VerifyMode,
    counters: &mut Counters,
) -> Vec<Violation> {
    let mut out = Vec::new();
    let mismatch = parts.content_hash != *stored_data_hash;
    if mismatch {
        out.push(Violation::block(
            parts.index,
            ViolationKind::DataHashMismatch,
            format!("content hash {} differs from stored data hash {}", parts.content_hash, stored_data_hash),
        ));
    }
    match mode {
        VerifyMode::Paper if mismatch => check_transactions(parts, directory, false, counters, &mut out),
        VerifyMode::Paper => {
            counters.transactions += parts.slots.as_ref().map_or(0, |s| s.len() as u64);
        }
        VerifyMode::Strict => check_transactions(parts, directory, true, counters, &mut out),
    }
    out
}

/// Per-block integrity check: compares the recomputed content hash with the
/// stored data hash and validates transaction signatures. In paper mode the
/// signature walk happens only on a mismatch and covers creators only.
pub fn verify_block_integrity(
    content_hash: &Digest,
    stored_data_hash: &Digest,
    block: &crate::ledger::Block,
    index: u64,
    directory: &MembershipDirectory,
    mode: VerifyMode,
) -> Vec<Violation> {
    let mut parts = BlockParts::from_block(block, index);
    parts.content_hash = *content_hash;
    let mut out = integrity_of(&parts, stored_data_hash, directory, mode, &mut Counters::default());
    sort(&mut out);
    out
}

fn sort(violations: &mut [Violation]) {
    violations.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

struct ChainContext<'a> {
    directory: &'a MembershipDirectory,
    mode: VerifyMode,
    scheme_id: &'a str,
    channel: &'a str,
    /// Blocks whose content and signatures are checked; linkage is always
    /// checked for every block.
    scope: RangeInclusive<u64>,
}

fn check_genesis(parts: &BlockParts, ctx: &ChainContext<'_>, out: &mut Vec<Violation>) {
    let fail = |out: &mut Vec<Violation>, d: String| out.push(Violation::block(0, ViolationKind::ConfigInvalid, d));
    let env = match parts.slots.as_deref() {
        Some([Slot::Decoded(env)]) => env,
        _ => return fail(out, "genesis must hold exactly one readable configuration envelope".into()),
    };
    let block = crate::ledger::Block {
        header: parts.header.clone().unwrap_or(BlockHeader {
            number: 0,
            previous_hash: Digest::ZERO,
            data_hash: Digest::ZERO,
        }),
        envelopes: vec![(**env).clone()],
        metadata: BlockMetadata {
            orderer: String::new(),
            orderer_signature: Default::default(),
            validity_flags: vec![],
        },
    };
    let Some(config) = channel_config(&block) else {
        return fail(out, "configuration envelope payload unreadable".into());
    };
    if config.scheme_id != ctx.scheme_id {
        fail(out, format!("config scheme {} differs from file scheme {}", config.scheme_id, ctx.scheme_id));
    }
    if config.channel != ctx.channel {
        fail(out, format!("config channel {} differs from ledger channel {}", config.channel, ctx.channel));
    }
    if config.certificate_bundle_digest != ctx.directory.bundle_digest() {
        fail(out, "certificate bundle digest does not match the supplied bundle".into());
    }
    let signed_by_admin = ctx.directory.resolve(&env.header.creator).is_some_and(|c| {
        c.role == Role::Admin && verify_signature(&c.public_key, &env.signed_content(), &env.creator_signature)
    });
    if !signed_by_admin {
        fail(out, format!("configuration not validly signed by an admin ({})", env.header.creator));
    }
}

fn verify_parts<I>(blocks: I, ctx: &ChainContext<'_>) -> IntegrityReport
where
    I: IntoIterator<Item = Result<BlockParts, (u64, String)>>,
{
    let mut counters = Counters::default();
    let mut violations = Vec::new();
    let mut previous: Option<Option<Digest>> = None;
    let mut blocks_checked = 0;
    for item in blocks {
        blocks_checked += 1;
        let parts = match item {
            Ok(p) => p,
            Err((index, reason)) => {
                violations.push(Violation::block(
                    index,
                    ViolationKind::DataHashMismatch,
                    format!("block unreadable: {reason}"),
                ));
                previous = Some(None);
                continue;
            }
        };
        let index = parts.index;
        let expected_prev = match previous {
            None => Some(Digest::ZERO),
            Some(prev) => prev,
        };
        match &parts.header {
            None => {
                violations.push(Violation::block(index, ViolationKind::ChainLinkBroken, "block header unreadable"));
                previous = Some(None);
                counters.transactions += parts.slots.as_ref().map_or(0, |s| s.len() as u64);
                continue;
            }
            Some(header) => {
                if header.number != index {
                    violations.push(Violation::block(
                        index,
                        ViolationKind::ChainLinkBroken,
                        format!("header number {} at position {index}", header.number),
                    ));
                }
                if let Some(expected) = expected_prev {
                    if header.previous_hash != expected {
                        violations.push(Violation::block(
                            index,
                            ViolationKind::ChainLinkBroken,
                            format!("previous_hash {} but prior header digests to {expected}", header.previous_hash),
                        ));
                    }
                }
                previous = Some(Some(header_digest(header)));
            }
        }
        let header = parts.header.as_ref().expect("checked above");
        if !ctx.scope.contains(&index) {
            continue;
        }

        counters.signatures += 1;
        let orderer_ok = parts.metadata.as_ref().is_some_and(|m| {
            ctx.directory
                .resolve(&m.orderer)
                .filter(|c| c.role.may_sign_blocks())
                .is_some_and(|c| verify_signature(&c.public_key, &canonical_encode(header), &m.orderer_signature))
        });
        if !orderer_ok {
            violations.push(Violation {
                signer: parts.metadata.as_ref().map(|m| m.orderer.clone()),
                ..Violation::block(index, ViolationKind::OrdererSignatureInvalid, "block metadata signature invalid")
            });
        }

        if index == 0 {
            check_genesis(&parts, ctx, &mut violations);
            if parts.content_hash != header.data_hash {
                violations.push(Violation::block(0, ViolationKind::DataHashMismatch, "genesis content hash mismatch"));
            }
            continue;
        }
        violations.extend(integrity_of(&parts, &header.data_hash, ctx.directory, ctx.mode, &mut counters));
    }
    sort(&mut violations);
    let signatures_failed = violations.iter().filter(|v| v.kind.is_signature()).count() as u64;
    IntegrityReport {
        mode: ctx.mode,
        blocks_checked,
        transactions_checked: counters.transactions,
        signatures_checked: counters.signatures,
        signatures_failed,
        verdict: if violations.is_empty() { Verdict::Intact } else { Verdict::Tampered },
        violations,
    }
}

/// Full-chain verification of an in-memory store.
pub fn verify_chain(store: &BlockStore, directory: &MembershipDirectory, mode: VerifyMode) -> IntegrityReport {
    let ctx =
        ChainContext { directory, mode, scheme_id: &store.scheme_id, channel: &store.channel, scope: 0..=u64::MAX };
    let parts = store.blocks().iter().enumerate().map(|(i, b)| Ok(BlockParts::from_block(b, i as u64)));
    verify_parts(parts, &ctx)
}

/// Verifies the bytes of a ledger file without requiring them to parse as a
/// valid chain first; unreadable regions become violations.
pub fn verify_ledger_bytes(
    bytes: &[u8],
    directory: &MembershipDirectory,
    mode: VerifyMode,
) -> Result<IntegrityReport, VerifyError> {
    verify_ledger_range(bytes, directory, mode, 0..=u64::MAX)
}

/// Spot audit: chain linkage is checked across the whole file, content
/// hashes and signatures only for blocks in `scope`. Envelope edits outside
/// `scope` go unreported.
pub fn verify_ledger_range(
    bytes: &[u8],
    directory: &MembershipDirectory,
    mode: VerifyMode,
    scope: RangeInclusive<u64>,
) -> Result<IntegrityReport, VerifyError> {
    let mut lines = bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty());
    let first = lines.next().ok_or_else(|| VerifyError::FileHeader("missing".into()))?;
    let header: FileHeader = serde_json::from_slice(first).map_err(|e| VerifyError::FileHeader(e.to_string()))?;
    if header.format_version != FORMAT_VERSION {
        return Err(VerifyError::FileHeader(format!("unsupported format_version {}", header.format_version)));
    }
    let lines: Vec<&[u8]> = lines.collect();
    if lines.is_empty() {
        return Err(VerifyError::Empty);
    }
    let ctx = ChainContext { directory, mode, scheme_id: &header.scheme_id, channel: &header.channel, scope };
    let parts =
        lines.into_iter().enumerate().map(|(i, line)| BlockParts::from_line(line, i as u64).map_err(|e| (i as u64, e)));
    Ok(verify_parts(parts, &ctx))
}

pub fn verify_ledger_file(
    path: &Path,
    directory: &MembershipDirectory,
    mode: VerifyMode,
) -> Result<IntegrityReport, VerifyError> {
    verify_ledger_bytes(&std::fs::read(path)?, directory, mode)
}
