//! Direct edits of a ledger file, for reproducing tamper experiments.
//!
//! Field paths are dot-separated. With a `tx_index` they address a field of
//! that envelope; a leading `payload` segment descends into the hex-encoded
//! contract invocation (decoded, edited, re-encoded canonically). Without a
//! `tx_index` they address the block itself, e.g. `header.previous_hash`.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codec::{canonical_value_bytes, decode_lower_hex, sha256_digest};
use crate::contract::{ContractFunction, ContractInvocation};

/// Record fields the random selector edits: a data hash, a metadata value,
/// or a collaborator name.
pub const RECORD_FIELD_PATHS: [&str; 3] = [
    "payload.args.record.raw_data.content_hash",
    "payload.args.record.metadata",
    "payload.args.record.collaborator_name",
];

#[derive(Debug, thiserror::Error)]
pub enum TamperError {
    #[error("target not found: block {block_number}, tx {tx_index:?}, field {field_path:?}")]
    TargetNotFound { block_number: u64, tx_index: Option<usize>, field_path: String },
    #[error("cannot mutate value at {0:?}")]
    Unsupported(String),
    #[error("ledger file unreadable: {0}")]
    Unreadable(String),
    #[error("only {available} eligible transactions in distinct blocks, {requested} requested")]
    NotEnoughTargets { available: usize, requested: usize },
    #[error("manifest entry for block {0} does not match the file's current value")]
    ManifestMismatch(u64),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TamperTarget {
    pub block_number: u64,
    pub tx_index: Option<usize>,
    pub field_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MutationRule {
    /// Hex strings get one seeded nibble changed, other text gets a suffix,
    /// numbers are incremented, booleans negated.
    Auto,
    Set(Value),
}

/// One applied mutation; a list of these is the tamper manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TamperRecord {
    pub block_number: u64,
    pub tx_index: Option<usize>,
    pub field_path: String,
    pub old_value: Value,
    pub new_value: Value,
}

fn split_lines(bytes: &[u8]) -> Result<(Vec<u8>, Vec<Vec<u8>>), TamperError> {
    let mut lines = bytes.split(|b| *b == b'\n').filter(|l| !l.is_empty()).map(<[u8]>::to_vec);
    let header = lines.next().ok_or_else(|| TamperError::Unreadable("empty file".into()))?;
    Ok((header, lines.collect()))
}

fn join_lines(header: Vec<u8>, lines: Vec<Vec<u8>>) -> Vec<u8> {
    let mut out = header;
    out.push(b'\n');
    for l in lines {
        out.extend_from_slice(&l);
        out.push(b'\n');
    }
    out
}

fn mutate(old: &Value, rule: &MutationRule, rng: &mut ChaCha8Rng, path: &str) -> Result<Value, TamperError> {
    match rule {
        MutationRule::Set(v) => Ok(v.clone()),
        MutationRule::Auto => match old {
            Value::String(s)
                if !s.is_empty() && s.bytes().all(|b| b.is_ascii_hexdigit() && !b.is_ascii_uppercase()) =>
            {
                let mut chars: Vec<char> = s.chars().collect();
                let i = rng.gen_range(0..chars.len());
                let current = chars[i].to_digit(16).expect("hex");
                let replacement = (current + rng.gen_range(1..16)) % 16;
                chars[i] = std::char::from_digit(replacement, 16).expect("nibble");
                Ok(Value::String(chars.into_iter().collect()))
            }
            Value::String(s) => Ok(Value::String(format!("{s} (edited)"))),
            Value::Number(n) => n
                .as_u64()
                .map(|x| Value::from(x.wrapping_add(1)))
                .or_else(|| n.as_i64().map(|x| Value::from(x.wrapping_add(1))))
                .ok_or_else(|| TamperError::Unsupported(path.to_string())),
            Value::Bool(b) => Ok(Value::Bool(!b)),
            _ => Err(TamperError::Unsupported(path.to_string())),
        },
    }
}

fn navigate<'a>(mut value: &'a mut Value, segments: &[&str]) -> Option<&'a mut Value> {
    for seg in segments {
        value = match value {
            Value::Object(map) => map.get_mut(*seg)?,
            Value::Array(items) => items.get_mut(seg.parse::<usize>().ok()?)?,
            _ => return None,
        };
    }
    Some(value)
}

/// Applies `edit` to the field at `segments` under `root`, descending into a
/// hex-encoded JSON payload when the path crosses a `payload` segment.
fn edit_field(
    root: &mut Value,
    segments: &[&str],
    edit: &mut dyn FnMut(&Value) -> Result<Value, TamperError>,
) -> Option<Result<(Value, Value), TamperError>> {
    if segments.first() == Some(&"payload") && segments.len() > 1 {
        let hex_text = root.get_mut("payload")?;
        let raw = decode_lower_hex(hex_text.as_str()?).ok()?;
        let mut inner: Value = serde_json::from_slice(&raw).ok()?;
        let result = edit_field(&mut inner, &segments[1..], edit)?;
        if result.is_ok() {
            *hex_text = Value::String(hex::encode(canonical_value_bytes(&inner)));
        }
        return Some(result);
    }
    let slot = navigate(root, segments)?;
    let old = slot.clone();
    Some(edit(&old).map(|new| {
        *slot = new.clone();
        (old, new)
    }))
}

fn apply_one(
    lines: &mut [Vec<u8>],
    block_number: u64,
    tx_index: Option<usize>,
    field_path: &str,
    edit: &mut dyn FnMut(&Value) -> Result<Value, TamperError>,
) -> Result<(Value, Value), TamperError> {
    let not_found = || TamperError::TargetNotFound { block_number, tx_index, field_path: field_path.to_string() };
    let line = lines.get_mut(block_number as usize).ok_or_else(not_found)?;
    let mut block: Value = serde_json::from_slice(line).map_err(|e| TamperError::Unreadable(e.to_string()))?;
    let segments: Vec<&str> = field_path.split('.').collect();
    let root = match tx_index {
        Some(i) => block.get_mut("envelopes").and_then(|e| e.get_mut(i)).ok_or_else(not_found)?,
        None => &mut block,
    };
    let (old, new) = edit_field(root, &segments, edit).ok_or_else(not_found)??;
    *line = canonical_value_bytes(&block);
    Ok((old, new))
}

/// Edits ledger bytes at every target. Headers are never recomputed, so the
/// stored data hashes and signatures keep describing the original content.
pub fn tamper_bytes(
    bytes: &[u8],
    targets: &[TamperTarget],
    rule: &MutationRule,
    seed: u64,
) -> Result<(Vec<u8>, Vec<TamperRecord>), TamperError> {
    let (header, mut lines) = split_lines(bytes)?;
    let mut rng = ChaCha8Rng::from_seed(sha256_digest(format!("tamper/{seed}").as_bytes()).0);
    let mut manifest = Vec::with_capacity(targets.len());
    for t in targets {
        let mut edit = |old: &Value| mutate(old, rule, &mut rng, &t.field_path);
        let (old_value, new_value) = apply_one(&mut lines, t.block_number, t.tx_index, &t.field_path, &mut edit)?;
        manifest.push(TamperRecord {
            block_number: t.block_number,
            tx_index: t.tx_index,
            field_path: t.field_path.clone(),
            old_value,
            new_value,
        });
    }
    Ok((join_lines(header, lines), manifest))
}

/// Tampers a ledger file in place and returns the manifest.
pub fn tamper_file(
    path: &Path,
    targets: &[TamperTarget],
    rule: &MutationRule,
    seed: u64,
) -> Result<Vec<TamperRecord>, TamperError> {
    let (bytes, manifest) = tamper_bytes(&std::fs::read(path)?, targets, rule, seed)?;
    std::fs::write(path, bytes)?;
    Ok(manifest)
}

/// Replays a manifest, checking each old value first.
pub fn apply_manifest(bytes: &[u8], manifest: &[TamperRecord]) -> Result<Vec<u8>, TamperError> {
    let (header, mut lines) = split_lines(bytes)?;
    for m in manifest {
        let mut edit = |old: &Value| {
            if *old == m.old_value {
                Ok(m.new_value.clone())
            } else {
                Err(TamperError::ManifestMismatch(m.block_number))
            }
        };
        apply_one(&mut lines, m.block_number, m.tx_index, &m.field_path, &mut edit)?;
    }
    Ok(join_lines(header, lines))
}

/// Picks `k` record-creating transactions uniformly at random, at most one
/// per block, and a record field to edit in each (data hash, a metadata
/// value, or the collaborator name).
pub fn select_random_targets(bytes: &[u8], k: usize, seed: u64) -> Result<Vec<TamperTarget>, TamperError> {
    let (_, lines) = split_lines(bytes)?;
    let mut candidates = Vec::new();
    for (number, line) in lines.iter().enumerate().skip(1) {
        let block: crate::ledger::Block =
            serde_json::from_slice(line).map_err(|e| TamperError::Unreadable(format!("block {number}: {e}")))?;
        for (i, env) in block.envelopes.iter().enumerate() {
            if let Ok(inv) = ContractInvocation::from_payload(&env.payload) {
                if inv.function == ContractFunction::CreateRecord && inv.is_record_invocation() {
                    let metadata_keys: Vec<String> = inv
                        .args
                        .pointer("/record/metadata")
                        .and_then(Value::as_object)
                        .map(|m| m.keys().cloned().collect())
                        .unwrap_or_default();
                    candidates.push((number as u64, i, metadata_keys));
                }
            }
        }
    }
    let mut rng = ChaCha8Rng::from_seed(sha256_digest(format!("tamper-select/{seed}").as_bytes()).0);
    candidates.shuffle(&mut rng);
    let mut used_blocks = BTreeSet::new();
    let mut targets = Vec::with_capacity(k);
    for (block_number, tx_index, keys) in candidates {
        if targets.len() == k {
            break;
        }
        if !used_blocks.insert(block_number) {
            continue;
        }
        let mut field_path = RECORD_FIELD_PATHS[rng.gen_range(0..RECORD_FIELD_PATHS.len())].to_string();
        if field_path.ends_with("metadata") {
            match keys.choose(&mut rng) {
                Some(key) => field_path = format!("{field_path}.{key}"),
                None => field_path = RECORD_FIELD_PATHS[0].to_string(),
            }
        }
        targets.push(TamperTarget { block_number, tx_index: Some(tx_index), field_path });
    }
    if targets.len() < k {
        return Err(TamperError::NotEnoughTargets { available: targets.len(), requested: k });
    }
    targets.sort_by_key(|t| (t.block_number, t.tx_index));
    Ok(targets)
}

#[cfg(test)]
mod tests {
    use super::super::tests::chain;
    use super::super::{verify_ledger_bytes, Verdict, VerifyMode, ViolationKind};
    use super::*;

    fn target(block: u64, tx: Option<usize>, path: &str) -> TamperTarget {
        TamperTarget { block_number: block, tx_index: tx, field_path: path.into() }
    }

    #[test]
    fn payload_edit_is_detected_in_that_block_only() {
        let c = chain(4, 2);
        let bytes = c.store.to_bytes();
        let (tampered, manifest) =
            tamper_bytes(&bytes, &[target(2, Some(1), "payload.n")], &MutationRule::Auto, 1).unwrap();
        assert_eq!(manifest.len(), 1);
        assert_eq!(manifest[0].new_value, Value::from(manifest[0].old_value.as_u64().unwrap() + 1));
        let r = verify_ledger_bytes(&tampered, &c.dir, VerifyMode::Strict).unwrap();
        assert_eq!(r.verdict, Verdict::Tampered);
        assert_eq!(r.flagged_blocks(), [2].into());
        assert_eq!(r.count(ViolationKind::DataHashMismatch), 1);
        assert_eq!(r.signatures_failed, 5);
    }

    #[test]
    fn header_field_edit_breaks_link() {
        let c = chain(3, 1);
        let (tampered, m) =
            tamper_bytes(&c.store.to_bytes(), &[target(2, None, "header.previous_hash")], &MutationRule::Auto, 3)
                .unwrap();
        assert_ne!(m[0].old_value, m[0].new_value);
        let r = verify_ledger_bytes(&tampered, &c.dir, VerifyMode::Strict).unwrap();
        assert!(r.violations.iter().any(|v| v.kind == ViolationKind::ChainLinkBroken && v.block_number == 2));
    }

    #[test]
    fn missing_target_is_an_error() {
        let c = chain(1, 1);
        let bytes = c.store.to_bytes();
        for t in [target(9, Some(0), "payload.n"), target(1, Some(4), "payload.n"), target(1, Some(0), "payload.zz")] {
            assert!(matches!(
                tamper_bytes(&bytes, &[t], &MutationRule::Auto, 0),
                Err(TamperError::TargetNotFound { .. })
            ));
        }
    }

    #[test]
    fn seeded_tamper_is_reproducible_and_manifest_replays() {
        let c = chain(3, 2);
        let bytes = c.store.to_bytes();
        let targets = [target(1, Some(0), "header.nonce"), target(3, Some(1), "creator_signature")];
        let a = tamper_bytes(&bytes, &targets, &MutationRule::Auto, 42).unwrap();
        let b = tamper_bytes(&bytes, &targets, &MutationRule::Auto, 42).unwrap();
        assert_eq!(a, b);
        assert_eq!(apply_manifest(&bytes, &a.1).unwrap(), a.0);
        assert!(matches!(apply_manifest(&a.0, &a.1), Err(TamperError::ManifestMismatch(1))));
    }

    #[test]
    fn set_rule_writes_value() {
        let c = chain(1, 1);
        let (out, m) = tamper_bytes(
            &c.store.to_bytes(),
            &[target(1, Some(0), "header.creator")],
            &MutationRule::Set("mallory".into()),
            0,
        )
        .unwrap();
        assert_eq!(m[0].new_value, Value::from("mallory"));
        assert!(String::from_utf8(out).unwrap().contains("\"creator\":\"mallory\""));
    }
}
