use std::fmt;

use serde::{Deserialize, Serialize};

use crate::codec::{self, canonical_encode, sha256_digest, Digest};
use crate::identity::{verify_signature, Certificate, Identity, MembershipDirectory, Role, Signature};

use super::LedgerError;

/// 16 random bytes making a transaction id unique per creator.
#[derive(Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Nonce(#[serde(with = "codec::hex_array")] pub [u8; 16]);

impl fmt::Debug for Nonce {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Nonce({})", hex::encode(self.0))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransactionHeader {
    pub tx_id: String,
    pub creator: String,
    pub channel: String,
    /// Simulation-clock milliseconds.
    pub timestamp: u64,
    pub nonce: Nonce,
}

#[derive(Serialize)]
struct TxIdPreimage<'a> {
    creator: &'a str,
    nonce: &'a Nonce,
}

impl TransactionHeader {
    pub fn new(creator: &str, channel: &str, timestamp: u64, nonce: Nonce) -> Self {
        Self {
            tx_id: Self::compute_tx_id(creator, &nonce),
            creator: creator.to_string(),
            channel: channel.to_string(),
            timestamp,
            nonce,
        }
    }

    pub fn compute_tx_id(creator: &str, nonce: &Nonce) -> String {
        sha256_digest(&canonical_encode(&TxIdPreimage { creator, nonce })).to_hex()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Endorsement {
    pub endorser: String,
    pub signature: Signature,
}

#[derive(Serialize)]
struct SignedContent<'a> {
    header: &'a TransactionHeader,
    #[serde(with = "codec::hex_bytes")]
    payload: &'a [u8],
}

/// Bytes covered by the creator signature and by every endorsement.
pub fn signed_content(header: &TransactionHeader, payload: &[u8]) -> Vec<u8> {
    canonical_encode(&SignedContent { header, payload })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransactionEnvelope {
    pub header: TransactionHeader,
    #[serde(with = "codec::hex_bytes")]
    pub payload: Vec<u8>,
    pub creator_signature: Signature,
    pub endorsements: Vec<Endorsement>,
}

impl TransactionEnvelope {
    pub fn signed_content(&self) -> Vec<u8> {
        signed_content(&self.header, &self.payload)
    }

    pub fn tx_id(&self) -> &str {
        &self.header.tx_id
    }

    /// Creator signature check against the directory; false for unknown creators.
    pub fn creator_signature_valid(&self, directory: &MembershipDirectory) -> bool {
        directory
            .resolve(&self.header.creator)
            .is_some_and(|c| verify_signature(&c.public_key, &self.signed_content(), &self.creator_signature))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockHeader {
    pub number: u64,
    pub previous_hash: Digest,
    pub data_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockMetadata {
    pub orderer: String,
    pub orderer_signature: Signature,
    pub validity_flags: Vec<bool>,
}

/// A block. Its own digest is never stored; only the successor's
/// `previous_hash` refers to it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Block {
    pub header: BlockHeader,
    pub envelopes: Vec<TransactionEnvelope>,
    pub metadata: BlockMetadata,
}

impl Block {
    pub fn digest(&self) -> Digest {
        header_digest(&self.header)
    }

    pub fn number(&self) -> u64 {
        self.header.number
    }

    pub fn orderer_signature_valid(&self, directory: &MembershipDirectory) -> bool {
        orderer_signature_valid(&self.header, &self.metadata, directory)
    }
}

pub fn orderer_signature_valid(
    header: &BlockHeader,
    metadata: &BlockMetadata,
    directory: &MembershipDirectory,
) -> bool {
    directory
        .resolve(&metadata.orderer)
        .filter(|c| c.role.may_sign_blocks())
        .is_some_and(|c| verify_signature(&c.public_key, &canonical_encode(header), &metadata.orderer_signature))
}

pub fn compute_data_hash(envelopes: &[TransactionEnvelope]) -> Digest {
    sha256_digest(&canonical_encode(envelopes))
}

pub fn header_digest(header: &BlockHeader) -> Digest {
    sha256_digest(&canonical_encode(header))
}

fn require_orderer(cert: &Certificate) -> Result<(), LedgerError> {
    if cert.role == Role::Orderer {
        Ok(())
    } else {
        Err(LedgerError::NotOrderer { subject: cert.subject_name.clone(), role: cert.role })
    }
}

/// Assembles and signs a block. Validity flags start all-true until a peer
/// validates the envelopes.
pub fn build_block(
    number: u64,
    previous_hash: Digest,
    envelopes: Vec<TransactionEnvelope>,
    orderer: &Identity,
) -> Result<Block, LedgerError> {
    require_orderer(&orderer.certificate)?;
    let header = BlockHeader { number, previous_hash, data_hash: compute_data_hash(&envelopes) };
    let metadata = BlockMetadata {
        orderer: orderer.name().to_string(),
        orderer_signature: orderer.sign(&canonical_encode(&header)),
        validity_flags: vec![true; envelopes.len()],
    };
    Ok(Block { header, envelopes, metadata })
}
