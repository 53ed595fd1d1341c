//! The user-facing side of the network: record ingestion, the per-proposal
//! peer poll that excludes diverged peers, endorser selection, ledger
//! statistics, and off-chain file checks.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::Digest;
use crate::contract::{hash_data_file, ContractInvocation, SchemaViolation, ScientificRecord, WorldState};
use crate::identity::{Certificate, Identity, KeyPair, MembershipDirectory};
use crate::ledger::{channel_config, BlockStore, EndorsementPolicy};
use crate::peernet::{replay_state, Peer};

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("{available} eligible peers, policy requires {required} endorsements")]
    InsufficientEndorsements { available: usize, required: usize },
    #[error("endorsement refused: {0}")]
    EndorsementRefused(String),
    #[error("envelope rejected by ordering: {0}")]
    Rejected(String),
    #[error("no ordering leader available")]
    NoLeaderAvailable,
    #[error("transaction {0} not committed before timeout")]
    CommitTimeout(String),
    #[error("{0} may not submit records")]
    PermissionDenied(String),
    #[error("{0}")]
    Parse(String),
    #[error("{} invalid record(s): {}", .0.len(), describe_violations(.0))]
    SchemaViolations(Vec<(usize, SchemaViolation)>),
    #[error("ledger is empty")]
    EmptyLedger,
    #[error("invalid gateway config: {0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn describe_violations(v: &[(usize, SchemaViolation)]) -> String {
    v.iter().map(|(i, s)| format!("[{i}] {s}")).collect::<Vec<_>>().join("; ")
}

/// Gateway settings. Endpoints name nodes of the simulated network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GatewayConfig {
    /// File holding the submitting identity's certificate and private key.
    pub identity: PathBuf,
    pub channel: String,
    pub peers: Vec<String>,
    pub orderers: Vec<String>,
    pub endorsements_per_org: usize,
    pub poll_interval_ms: u64,
}

impl GatewayConfig {
    pub fn validate(&self, organizations: usize, policy: &EndorsementPolicy) -> Result<(), GatewayError> {
        if self.endorsements_per_org * organizations < policy.required as usize {
            return Err(GatewayError::Config(format!(
                "fan-out {} x {organizations} organizations is below policy {}",
                self.endorsements_per_org, policy.required
            )));
        }
        Ok(())
    }
}

/// On-disk form of an identity: certificate plus private key.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdentityFile {
    pub certificate: Certificate,
    #[serde(with = "crate::codec::hex_bytes")]
    pub private_key: Vec<u8>,
}

impl IdentityFile {
    pub fn from_identity(identity: &Identity) -> Self {
        Self { certificate: identity.certificate.clone(), private_key: identity.keys.private_key_bytes() }
    }

    /// Fails if the key is malformed or does not match the certificate.
    pub fn into_identity(self) -> Result<Identity, GatewayError> {
        let keys = KeyPair::from_private_key(&self.private_key)
            .ok_or_else(|| GatewayError::Parse("identity file: invalid private key".into()))?;
        if *keys.public_key() != self.certificate.public_key {
            return Err(GatewayError::Parse("identity file: key does not match certificate".into()));
        }
        Ok(Identity { certificate: self.certificate, keys })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Receipt {
    pub tx_id: String,
    pub block_number: u64,
    pub valid: bool,
}

/// Result of polling peer head digests before a proposal round.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PollOutcome {
    pub authoritative: Option<Digest>,
    /// In sync with the authoritative head; may receive proposals.
    pub eligible: Vec<usize>,
    /// Marked diverged by this poll.
    pub newly_diverged: Vec<usize>,
    /// On the authoritative chain but behind or ahead; skipped this round only.
    pub skipped: Vec<usize>,
}

/// Takes the majority head digest among reachable, non-diverged peers as
/// authoritative (ties broken by chain height). Peers failing their local
/// audit, or whose chain is not a prefix or extension of the authoritative
/// one, are marked diverged.
pub fn poll_peers(peers: &mut [Peer]) -> PollOutcome {
    let mut outcome = PollOutcome::default();
    for (i, p) in peers.iter_mut().enumerate() {
        if p.reachable() && !p.is_diverged() && p.audit().is_err() {
            p.mark_diverged();
            outcome.newly_diverged.push(i);
        }
    }
    let live: Vec<usize> = (0..peers.len()).filter(|i| peers[*i].reachable() && !peers[*i].is_diverged()).collect();
    let mut tally: BTreeMap<Digest, (usize, usize)> = BTreeMap::new();
    for &i in &live {
        let entry = tally.entry(peers[i].head_digest()).or_insert((0, peers[i].height()));
        entry.0 += 1;
    }
    let Some((auth, (_, auth_height))) = tally.iter().max_by_key(|(_, (count, height))| (*count, *height)) else {
        return outcome;
    };
    let (auth, auth_height) = (*auth, *auth_height);
    outcome.authoritative = Some(auth);
    let holder = live.iter().copied().find(|i| peers[*i].head_digest() == auth).expect("tallied");
    for &i in &live {
        let p = &peers[i];
        if p.head_digest() == auth {
            outcome.eligible.push(i);
            continue;
        }
        let h = p.height();
        let on_chain = if h < auth_height {
            peers[holder].store.blocks()[h - 1].digest() == p.head_digest()
        } else if h > auth_height {
            p.store.blocks()[auth_height - 1].digest() == auth
        } else {
            false
        };
        if on_chain {
            outcome.skipped.push(i);
        } else {
            outcome.newly_diverged.push(i);
        }
    }
    for &i in &outcome.newly_diverged {
        peers[i].mark_diverged();
    }
    outcome.newly_diverged.sort_unstable();
    outcome
}

/// Seeded-random choice of `per_org` eligible peers from each organization,
/// topped up from other organizations when one falls short.
pub fn select_endorsers(
    peers: &[Peer],
    eligible: &[usize],
    per_org: usize,
    required: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<usize>, GatewayError> {
    let mut by_org: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for &i in eligible {
        by_org.entry(peers[i].organization.as_str()).or_default().push(i);
    }
    let mut chosen = Vec::new();
    let mut spare = Vec::new();
    for members in by_org.values_mut() {
        members.shuffle(rng);
        let take = per_org.min(members.len());
        chosen.extend_from_slice(&members[..take]);
        spare.extend_from_slice(&members[take..]);
    }
    spare.shuffle(rng);
    let target = required.max(per_org * by_org.len().min(1));
    while chosen.len() < target {
        match spare.pop() {
            Some(i) => chosen.push(i),
            None => break,
        }
    }
    if chosen.len() < required {
        return Err(GatewayError::InsufficientEndorsements { available: eligible.len(), required });
    }
    chosen.sort_unstable();
    Ok(chosen)
}

/// Reads a JSON array of records and validates each, reporting every failing
/// index.
pub fn ingest_records(path: &Path) -> Result<Vec<ScientificRecord>, GatewayError> {
    let text = std::fs::read_to_string(path)?;
    parse_records(&text)
}

pub fn parse_records(text: &str) -> Result<Vec<ScientificRecord>, GatewayError> {
    let items: Vec<serde_json::Value> =
        serde_json::from_str(text).map_err(|e| GatewayError::Parse(format!("records file: {e}")))?;
    let mut records = Vec::with_capacity(items.len());
    let mut failures = Vec::new();
    for (i, item) in items.into_iter().enumerate() {
        match serde_json::from_value::<ScientificRecord>(item) {
            Ok(r) => match r.validate() {
                Ok(()) => records.push(r),
                Err(v) => failures.push((i, v)),
            },
            Err(e) => failures.push((i, SchemaViolation::new("record", e.to_string()))),
        }
    }
    if failures.is_empty() {
        Ok(records)
    } else {
        Err(GatewayError::SchemaViolations(failures))
    }
}

/// Ledger statistics from a full scan of the non-genesis blocks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsSummary {
    pub block_count: u64,
    pub transaction_count: u64,
    pub contract_invocation_count: u64,
    pub valid_transaction_count: u64,
    pub first_timestamp_ms: Option<u64>,
    pub last_timestamp_ms: Option<u64>,
    /// `None` when all transactions share one timestamp.
    pub transactions_per_minute: Option<f64>,
}

pub fn stats(store: &BlockStore) -> Result<StatsSummary, GatewayError> {
    if store.is_empty() {
        return Err(GatewayError::EmptyLedger);
    }
    let mut s = StatsSummary {
        block_count: 0,
        transaction_count: 0,
        contract_invocation_count: 0,
        valid_transaction_count: 0,
        first_timestamp_ms: None,
        last_timestamp_ms: None,
        transactions_per_minute: None,
    };
    for block in store.blocks().iter().skip(1) {
        s.block_count += 1;
        for (i, env) in block.envelopes.iter().enumerate() {
            s.transaction_count += 1;
            if block.metadata.validity_flags.get(i).copied().unwrap_or(false) {
                s.valid_transaction_count += 1;
            }
            if ContractInvocation::from_payload(&env.payload).is_ok_and(|inv| inv.is_record_invocation()) {
                s.contract_invocation_count += 1;
            }
            let ts = env.header.timestamp;
            s.first_timestamp_ms = Some(s.first_timestamp_ms.map_or(ts, |f| f.min(ts)));
            s.last_timestamp_ms = Some(s.last_timestamp_ms.map_or(ts, |l| l.max(ts)));
        }
    }
    if let (Some(first), Some(last)) = (s.first_timestamp_ms, s.last_timestamp_ms) {
        if last > first {
            s.transactions_per_minute = Some(s.transaction_count as f64 / ((last - first) as f64 / 60_000.0));
        }
    }
    Ok(s)
}

/// World state rebuilt by replaying the ledger under the policy recorded in
/// its genesis block.
pub fn world_state(store: &BlockStore, directory: &MembershipDirectory) -> Result<WorldState, GatewayError> {
    let genesis = store.blocks().first().ok_or(GatewayError::EmptyLedger)?;
    let config =
        channel_config(genesis).ok_or_else(|| GatewayError::Parse("genesis block has no channel config".into()))?;
    replay_state(store, directory, &config.endorsement_policy)
        .ok_or_else(|| GatewayError::Parse("stored validity flags disagree with replay".into()))
}

/// True iff the file's SHA-256 equals the record's raw-data hash.
pub fn check_offchain(record: &ScientificRecord, path: &Path) -> Result<bool, GatewayError> {
    let pointer = hash_data_file(path, path.display().to_string())?;
    Ok(pointer.content_hash == record.raw_data.content_hash)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::contract::record::tests::sample;
    use crate::contract::Level;
    use crate::peernet::{collaborator_name, ScenarioConfig, Simulation};
    use rand::SeedableRng;
    use std::io::Write;

    fn sim() -> Simulation {
        Simulation::new(&ScenarioConfig::default()).unwrap()
    }

    fn submit(sim: &mut Simulation, id: &str) -> Receipt {
        sim.submit(&collaborator_name("OrgUIS"), ContractInvocation::create_record(sample(id, Level::L0))).unwrap()
    }

    #[test]
    fn poll_of_healthy_network_makes_everyone_eligible() {
        let mut s = sim();
        let genesis = s.network.genesis.digest();
        let poll = poll_peers(&mut s.network.peers);
        assert_eq!(poll.authoritative, Some(genesis));
        assert_eq!(poll.eligible, (0..6).collect::<Vec<_>>());
        assert!(poll.newly_diverged.is_empty() && poll.skipped.is_empty());
    }

    #[test]
    fn poll_marks_corrupt_peer_and_skips_lagging_peer() {
        let mut s = sim();
        submit(&mut s, "a");
        let peers = &mut s.network.peers;
        // peer 1: flip a payload byte of its committed block.
        peers[1].store.blocks_mut()[1].envelopes[0].payload[0] ^= 1;
        // peer 2: one block behind.
        let store = &peers[2].store;
        peers[2].store =
            BlockStore::from_blocks_unchecked(&store.scheme_id, &store.channel, store.blocks()[..1].to_vec());
        let poll = poll_peers(peers);
        assert_eq!(poll.newly_diverged, vec![1]);
        assert_eq!(poll.skipped, vec![2]);
        assert_eq!(poll.eligible, vec![0, 3, 4, 5]);
        assert!(peers[1].is_diverged() && !peers[2].is_diverged());
    }

    #[test]
    fn poll_marks_forked_peer_diverged() {
        let mut s = sim();
        submit(&mut s, "a");
        let peers = &mut s.network.peers;
        // Same height, internally consistent, different content.
        let block = &mut peers[4].store.blocks_mut()[1];
        block.envelopes.clear();
        block.header.data_hash = crate::ledger::compute_data_hash(&block.envelopes);
        let poll = poll_peers(peers);
        assert_eq!(poll.newly_diverged, vec![4]);
    }

    #[test]
    fn endorsers_are_two_per_org_and_topped_up_when_short() {
        let s = sim();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let picked = select_endorsers(&s.network.peers, &[0, 1, 2, 3, 4, 5], 2, 4, &mut rng).unwrap();
        assert_eq!(picked.len(), 4);
        assert_eq!(picked.iter().filter(|i| **i < 3).count(), 2);
        let short = select_endorsers(&s.network.peers, &[0, 3, 4, 5], 2, 4, &mut rng).unwrap();
        assert_eq!(short, vec![0, 3, 4, 5]);
        let err = select_endorsers(&s.network.peers, &[0, 3, 4], 2, 4, &mut rng).unwrap_err();
        assert!(matches!(err, GatewayError::InsufficientEndorsements { available: 3, required: 4 }));
    }

    #[test]
    fn receipt_of_healthy_submit_is_valid() {
        let mut s = sim();
        let r = submit(&mut s, "a");
        assert!(r.valid);
        assert_eq!(r.block_number, 1);
        let state = world_state(s.ledger(), &s.network.directory).unwrap();
        assert_eq!(state.entries()["a"], sample("a", Level::L0));
    }

    #[test]
    fn parse_records_examples() {
        let two = serde_json::to_string(&[sample("a", Level::L0), sample("b", Level::S2)]).unwrap();
        assert_eq!(parse_records(&two).unwrap().len(), 2);
        assert!(parse_records("[]").unwrap().is_empty());
        let mut bad = sample("c", Level::L0);
        bad.raw_data.content_hash.pop();
        let text = serde_json::to_string(&[sample("a", Level::L0), bad]).unwrap();
        match parse_records(&text).unwrap_err() {
            GatewayError::SchemaViolations(v) => {
                assert_eq!(v.len(), 1);
                assert_eq!(v[0].0, 1);
                assert_eq!(v[0].1.field, "raw_data.content_hash");
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn stats_of_single_batch() {
        use crate::peernet::{FaultSchedule, Workload, WorkloadAction, WorkloadItem};
        let mut s = sim();
        // Three submissions inside one batch window, committed as one block.
        let items = ["a", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, id)| WorkloadItem {
                at_ms: 3_000 + i as u64 * 100,
                creator: collaborator_name("OrgUIS"),
                action: WorkloadAction::CreateRecord { record: Box::new(sample(id, Level::L0)) },
            })
            .collect();
        s.run(&Workload { items }, &FaultSchedule::none()).unwrap();
        let st = stats(s.ledger()).unwrap();
        assert_eq!(st.block_count, 1);
        assert_eq!((st.transaction_count, st.contract_invocation_count, st.valid_transaction_count), (3, 3, 3));
        assert_eq!(st.last_timestamp_ms.unwrap() - st.first_timestamp_ms.unwrap(), 200);
        assert_eq!(st.transactions_per_minute, Some(3.0 / (200.0 / 60_000.0)));
        assert!(matches!(stats(&BlockStore::new("x", "y")), Err(GatewayError::EmptyLedger)));
    }

    #[test]
    fn offchain_check_detects_any_change() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("raw.dat");
        std::fs::File::create(&path).unwrap().write_all(b"lago measurement").unwrap();
        let mut record = sample("a", Level::L0);
        record.raw_data = hash_data_file(&path, "raw.dat").unwrap();
        assert!(check_offchain(&record, &path).unwrap());
        std::fs::write(&path, b"lago measuremenT").unwrap();
        assert!(!check_offchain(&record, &path).unwrap());
        let other = dir.path().join("other.dat");
        std::fs::write(&other, b"something else").unwrap();
        assert!(!check_offchain(&record, &other).unwrap());
        assert!(matches!(check_offchain(&record, &dir.path().join("missing")), Err(GatewayError::Io(_))));
    }

    #[test]
    fn identity_file_round_trip_and_mismatch() {
        let s = sim();
        let id = s.network.identity("collaborator.OrgUIS").unwrap();
        let file = IdentityFile::from_identity(id);
        let text = serde_json::to_string(&file).unwrap();
        let back: IdentityFile = serde_json::from_str(&text).unwrap();
        assert_eq!(back.into_identity().unwrap().certificate, id.certificate);
        let mut wrong = file.clone();
        wrong.private_key = s.network.identity("admin.OrgUIS").unwrap().keys.private_key_bytes();
        assert!(wrong.into_identity().is_err());
    }
}
