use serde::{Deserialize, Serialize};

use crate::codec::Digest;
use crate::contract::{apply_envelope, plan_invocation, ContractError, ContractInvocation, WorldState};
use crate::identity::{verify_signature, Identity, MembershipDirectory};
use crate::ledger::{
    compute_data_hash, header_digest, signed_content, Block, BlockStore, Endorsement, EndorsementPolicy,
    TransactionHeader,
};
use crate::verifier::{verify_chain, Verdict, VerifyMode};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PeerStatus {
    Healthy,
    Diverged,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum PeerError {
    #[error("peer {0} unavailable")]
    PeerUnavailable(String),
    #[error("endorsement refused: {0}")]
    EndorsementRefused(String),
    #[error("chain linkage violated at block {0}")]
    ChainLink(u64),
    #[error("block {0} rejected: {1}")]
    BlockRejected(u64, String),
    #[error("local ledger failed its integrity audit at block {0}")]
    Corrupt(u64),
    #[error("resync source failed verification")]
    SourceInvalid,
}

/// A signed but not yet endorsed transaction.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Proposal {
    pub header: TransactionHeader,
    #[serde(with = "crate::codec::hex_bytes")]
    pub payload: Vec<u8>,
    pub creator_signature: crate::identity::Signature,
}

impl Proposal {
    pub fn new(creator: &Identity, header: TransactionHeader, invocation: &ContractInvocation) -> Self {
        let payload = invocation.to_payload();
        let creator_signature = creator.sign(&signed_content(&header, &payload));
        Self { header, payload, creator_signature }
    }

    pub fn signed_content(&self) -> Vec<u8> {
        signed_content(&self.header, &self.payload)
    }
}

#[derive(Debug, Clone)]
pub struct Peer {
    pub peer_id: String,
    pub organization: String,
    pub identity: Identity,
    pub store: BlockStore,
    pub state: WorldState,
    pub policy: EndorsementPolicy,
    pub online: bool,
    pub partitioned: bool,
    diverged: bool,
    /// (store epoch, blocks whose content hash and linkage were audited).
    audit_mark: (u64, usize),
}

impl Peer {
    /// A peer holding only the genesis block.
    pub fn new(
        identity: Identity,
        organization: &str,
        genesis: &Block,
        policy: EndorsementPolicy,
        scheme_id: &str,
        channel: &str,
    ) -> Self {
        let mut store = BlockStore::new(scheme_id, channel);
        store.append_block(genesis.clone()).expect("genesis links to the zero hash");
        Self {
            peer_id: identity.name().to_string(),
            organization: organization.to_string(),
            identity,
            store,
            state: WorldState::new(),
            policy,
            online: true,
            partitioned: false,
            diverged: false,
            audit_mark: (0, 0),
        }
    }

    pub fn status(&self) -> PeerStatus {
        if !self.online {
            PeerStatus::Offline
        } else if self.diverged {
            PeerStatus::Diverged
        } else {
            PeerStatus::Healthy
        }
    }

    pub fn is_diverged(&self) -> bool {
        self.diverged
    }

    pub fn mark_diverged(&mut self) {
        self.diverged = true;
    }

    pub fn reachable(&self) -> bool {
        self.online && !self.partitioned
    }

    pub fn height(&self) -> usize {
        self.store.len()
    }

    pub fn head_digest(&self) -> Digest {
        self.store.head_digest().unwrap_or(Digest::ZERO)
    }

    /// Recomputes content hashes and linkage of the local chain. Incremental:
    /// blocks already audited are skipped unless the store was mutated
    /// through raw access since.
    pub fn audit(&mut self) -> Result<(), PeerError> {
        let epoch = self.store.epoch();
        let start = if self.audit_mark.0 == epoch { self.audit_mark.1 } else { 0 };
        let blocks = self.store.blocks();
        for i in start..blocks.len() {
            let b = &blocks[i];
            let prev = if i == 0 { Digest::ZERO } else { header_digest(&blocks[i - 1].header) };
            if b.header.number != i as u64
                || b.header.previous_hash != prev
                || compute_data_hash(&b.envelopes) != b.header.data_hash
            {
                self.audit_mark = (epoch, i);
                return Err(PeerError::Corrupt(i as u64));
            }
        }
        self.audit_mark = (epoch, blocks.len());
        Ok(())
    }

    /// Simulates the invocation against current state and, if it would
    /// succeed, signs the proposal.
    pub fn endorse_proposal(
        &mut self,
        proposal: &Proposal,
        directory: &MembershipDirectory,
    ) -> Result<Endorsement, PeerError> {
        if self.status() != PeerStatus::Healthy || self.partitioned {
            return Err(PeerError::PeerUnavailable(self.peer_id.clone()));
        }
        if self.audit().is_err() {
            self.diverged = true;
            return Err(PeerError::PeerUnavailable(self.peer_id.clone()));
        }
        let header = &proposal.header;
        let creator = directory
            .resolve(&header.creator)
            .ok_or_else(|| PeerError::EndorsementRefused(format!("unknown creator {}", header.creator)))?;
        if header.tx_id != TransactionHeader::compute_tx_id(&header.creator, &header.nonce) {
            return Err(PeerError::EndorsementRefused("tx_id does not match creator and nonce".into()));
        }
        let content = proposal.signed_content();
        if !verify_signature(&creator.public_key, &content, &proposal.creator_signature) {
            return Err(PeerError::EndorsementRefused("creator signature invalid".into()));
        }
        let invocation = ContractInvocation::from_payload(&proposal.payload)
            .map_err(|e: ContractError| PeerError::EndorsementRefused(e.to_string()))?;
        plan_invocation(&self.state, creator, &invocation).map_err(|e| PeerError::EndorsementRefused(e.to_string()))?;
        Ok(Endorsement { endorser: self.peer_id.clone(), signature: self.identity.sign(&content) })
    }

    /// Checks and appends the next block, computing validity flags by applying
    /// each envelope to the world state. A linkage failure or a failed
    /// self-audit halts the peer.
    pub fn validate_and_commit(&mut self, mut block: Block, directory: &MembershipDirectory) -> Result<(), PeerError> {
        if !self.online || self.diverged {
            return Err(PeerError::PeerUnavailable(self.peer_id.clone()));
        }
        if let Err(e) = self.audit() {
            self.diverged = true;
            return Err(e);
        }
        let number = block.header.number;
        if number != self.store.len() as u64 || block.header.previous_hash != self.store.expected_previous_hash() {
            self.diverged = true;
            return Err(PeerError::ChainLink(number));
        }
        if compute_data_hash(&block.envelopes) != block.header.data_hash {
            return Err(PeerError::BlockRejected(number, "data hash mismatch".into()));
        }
        if !block.orderer_signature_valid(directory) {
            return Err(PeerError::BlockRejected(number, "orderer signature invalid".into()));
        }
        let flags =
            block.envelopes.iter().map(|e| apply_envelope(&mut self.state, e, directory, &self.policy)).collect();
        block.metadata.validity_flags = flags;
        self.store.append_block(block).map_err(|_| PeerError::ChainLink(number))?;
        Ok(())
    }

    /// True iff the head differs from the authoritative digest or the local
    /// audit fails.
    pub fn detect_divergence(&mut self, authoritative: &Digest) -> bool {
        self.head_digest() != *authoritative || self.audit().is_err()
    }

    /// Replaces the local chain with a verified copy of `source` and rebuilds
    /// the world state by replay.
    pub fn resync(&mut self, source: &BlockStore, directory: &MembershipDirectory) -> Result<(), PeerError> {
        if source.is_empty() || verify_chain(source, directory, VerifyMode::Strict).verdict != Verdict::Intact {
            return Err(PeerError::SourceInvalid);
        }
        let state = replay_state(source, directory, &self.policy).ok_or(PeerError::SourceInvalid)?;
        self.store = source.clone();
        self.state = state;
        self.diverged = false;
        self.audit_mark = (self.store.epoch(), 0);
        self.audit().map_err(|_| PeerError::SourceInvalid)
    }
}

/// World state from replaying every non-genesis block; `None` if any stored
/// validity flag disagrees with the replay.
pub fn replay_state(
    store: &BlockStore,
    directory: &MembershipDirectory,
    policy: &EndorsementPolicy,
) -> Option<WorldState> {
    let mut state = WorldState::new();
    for block in store.blocks().iter().skip(1) {
        for (env, flag) in block.envelopes.iter().zip(&block.metadata.validity_flags) {
            if apply_envelope(&mut state, env, directory, policy) != *flag {
                return None;
            }
        }
        if block.envelopes.len() != block.metadata.validity_flags.len() {
            return None;
        }
    }
    Some(state)
}
