//! Canonical ledger types, hash chaining, and the block store.

mod block;
mod store;

pub use block::{
    build_block, compute_data_hash, header_digest, orderer_signature_valid, signed_content, Block, BlockHeader,
    BlockMetadata, Endorsement, Nonce, TransactionEnvelope, TransactionHeader,
};
pub use store::{BlockStore, FileHeader, FORMAT_VERSION};

use serde::{Deserialize, Serialize};

use crate::codec::{canonical_encode, sha256_digest, Digest};
use crate::identity::{Identity, Role};

#[derive(Debug, thiserror::Error)]
pub enum LedgerError {
    #[error("chain linkage violated at block {block_number}")]
    ChainLink { block_number: u64 },
    #[error("{subject} has role {role}; only orderers may build blocks")]
    NotOrderer { subject: String, role: Role },
    #[error("ledger file line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Minimum number of valid peer endorsements for an envelope to commit as valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EndorsementPolicy {
    pub required: u32,
}

impl Default for EndorsementPolicy {
    fn default() -> Self {
        Self { required: 4 }
    }
}

/// Payload of the single envelope in block 0.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelConfig {
    pub channel: String,
    pub scheme_id: String,
    pub endorsement_policy: EndorsementPolicy,
    pub certificate_bundle_digest: Digest,
}

/// Builds block 0: previous hash all-zero, one configuration envelope signed
/// by an admin, block signed by an orderer.
pub fn genesis_block(config: &ChannelConfig, admin: &Identity, orderer: &Identity) -> Result<Block, LedgerError> {
    let seed = sha256_digest(format!("genesis/{}", config.channel).as_bytes());
    let mut nonce = [0u8; 16];
    nonce.copy_from_slice(&seed.0[..16]);
    let header = TransactionHeader::new(admin.name(), &config.channel, 0, Nonce(nonce));
    let payload = canonical_encode(config);
    let creator_signature = admin.sign(&signed_content(&header, &payload));
    let envelope = TransactionEnvelope { header, payload, creator_signature, endorsements: Vec::new() };
    build_block(0, Digest::ZERO, vec![envelope], orderer)
}

/// Decodes the channel configuration from a genesis block.
pub fn channel_config(genesis: &Block) -> Option<ChannelConfig> {
    match genesis.envelopes.as_slice() {
        [env] => serde_json::from_slice(&env.payload).ok(),
        _ => None,
    }
}
