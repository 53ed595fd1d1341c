use std::collections::{BTreeMap, VecDeque};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{sha256_digest, Digest};
use crate::contract::ContractInvocation;
use crate::gateway::{poll_peers, select_endorsers, stats, GatewayError, Receipt};
use crate::ledger::{BlockStore, Nonce, TransactionEnvelope, TransactionHeader};
use crate::ordering::{LeaderRecord, OrderingCluster, OrderingError};

use super::network::{ConfigError, Network, ScenarioConfig};
use super::peer::{PeerError, PeerStatus, Proposal};
use super::schedule::{FaultAction, FaultEvent, FaultSchedule, Workload, LEADER_TARGET};

const STEP_MS: u64 = 50;

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("unknown identity {0}")]
    UnknownIdentity(String),
    #[error("unknown fault target {0}")]
    UnknownTarget(String),
    #[error("ordering: {0}")]
    Ordering(#[from] OrderingError),
    #[error("replaying existing ledger: {0}")]
    Replay(PeerError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimelineEvent {
    pub at_ms: u64,
    pub event: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedSubmission {
    pub creator: String,
    pub tx_id: Option<String>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PeerSummary {
    pub peer_id: String,
    pub organization: String,
    pub status: PeerStatus,
    pub height: usize,
    pub head_digest: Digest,
    pub state_digest: Digest,
    pub proposals_received: usize,
    pub corrupted_at_ms: Option<u64>,
    pub diverged_at_ms: Option<u64>,
    pub proposals_after_corruption: usize,
    pub resynced_at_ms: Option<u64>,
}

/// Everything a scenario run produced apart from the ledger itself.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub seed: u64,
    pub blocks_committed: u64,
    pub transactions_total: u64,
    pub contract_invocations: u64,
    pub valid_transactions: u64,
    pub transactions_per_minute: Option<f64>,
    pub rejected_envelopes: u64,
    pub refused_proposals: u64,
    /// Transaction ids accepted by the ordering service, in first-submission order.
    pub submitted: Vec<String>,
    pub duplicate_commits: u64,
    pub failed_submissions: Vec<FailedSubmission>,
    pub receipts: Vec<Receipt>,
    pub peers: Vec<PeerSummary>,
    pub leaders: Vec<LeaderRecord>,
    pub ordering_safety_violations: Vec<String>,
    pub timeline: Vec<TimelineEvent>,
    pub final_time_ms: u64,
    pub ledger_head_digest: Digest,
}

#[derive(Debug, Clone)]
struct Submission {
    creator: String,
    invocation: ContractInvocation,
    endorsement_cap: Option<usize>,
    envelope: Option<TransactionEnvelope>,
    next_action_ms: u64,
    accepted: bool,
}

enum Progress {
    Waiting,
    Failed(GatewayError),
}

/// A whole network (peers, ordering cluster, gateway) advanced on one
/// simulated clock.
#[derive(Debug)]
pub struct Simulation {
    pub network: Network,
    cluster: OrderingCluster,
    rng: ChaCha8Rng,
    base_len: usize,
    faults: VecDeque<FaultEvent>,
    inflight: Vec<Submission>,
    scanned: usize,
    commit_counts: BTreeMap<String, u32>,
    proposal_log: Vec<Vec<u64>>,
    corrupted_at: Vec<Option<u64>>,
    diverged_at: Vec<Option<u64>>,
    resynced_at: Vec<Option<u64>>,
    timeline: Vec<TimelineEvent>,
    leaders_seen: usize,
    refused_proposals: u64,
    rejected_envelopes: u64,
    submitted: Vec<String>,
    failures: Vec<FailedSubmission>,
    last_outcome: Option<Result<String, GatewayError>>,
    leader_faulted: Option<String>,
}

impl Simulation {
    pub fn new(config: &ScenarioConfig) -> Result<Self, ScenarioError> {
        let network = Network::bootstrap(config)?;
        Self::with_network(network)
    }

    /// Rebuilds the network from the seed and replays an existing ledger into
    /// every peer so new submissions extend it.
    pub fn resume(config: &ScenarioConfig, ledger: &BlockStore) -> Result<Self, ScenarioError> {
        let mut network = Network::bootstrap(config)?;
        let blocks = ledger.blocks();
        if blocks.first() != Some(&network.genesis) {
            return Err(ScenarioError::Replay(PeerError::ChainLink(0)));
        }
        for peer in &mut network.peers {
            for block in &blocks[1..] {
                peer.validate_and_commit(block.clone(), &network.directory).map_err(ScenarioError::Replay)?;
            }
        }
        Self::with_network(network)
    }

    fn with_network(network: Network) -> Result<Self, ScenarioError> {
        let config = &network.config;
        let base_peer = &network.peers[0];
        let base = ((base_peer.height() - 1) as u64, base_peer.head_digest());
        let mut cluster = OrderingCluster::new(
            config.ordering.clone(),
            network.orderer_identities(),
            network.directory.clone(),
            base,
            config.seed,
        )?;
        cluster.set_latency(config.latency_min_ms, config.latency_max_ms);
        let n = network.peers.len();
        Ok(Self {
            rng: ChaCha8Rng::from_seed(sha256_digest(format!("gateway/{}", config.seed).as_bytes()).0),
            base_len: base_peer.height(),
            cluster,
            faults: VecDeque::new(),
            inflight: Vec::new(),
            scanned: 0,
            commit_counts: BTreeMap::new(),
            proposal_log: vec![Vec::new(); n],
            corrupted_at: vec![None; n],
            diverged_at: vec![None; n],
            resynced_at: vec![None; n],
            timeline: Vec::new(),
            leaders_seen: 0,
            refused_proposals: 0,
            rejected_envelopes: 0,
            submitted: Vec::new(),
            failures: Vec::new(),
            last_outcome: None,
            leader_faulted: None,
            network,
        })
    }

    pub fn now(&self) -> u64 {
        self.cluster.now()
    }

    pub fn cluster(&self) -> &OrderingCluster {
        &self.cluster
    }

    /// Simulated times at which each peer received a proposal.
    pub fn proposal_log(&self) -> &[Vec<u64>] {
        &self.proposal_log
    }

    /// Chain of the healthy peer with the greatest height.
    pub fn ledger(&self) -> &BlockStore {
        let best = self
            .network
            .peers
            .iter()
            .filter(|p| p.status() == PeerStatus::Healthy)
            .max_by_key(|p| p.height())
            .or_else(|| self.network.peers.iter().filter(|p| !p.is_diverged()).max_by_key(|p| p.height()))
            .unwrap_or(&self.network.peers[0]);
        &best.store
    }

    fn note(&mut self, event: String) {
        tracing::debug!(at_ms = self.now(), "{event}");
        self.timeline.push(TimelineEvent { at_ms: self.now(), event });
    }

    fn peer_index(&self, name: &str) -> Option<usize> {
        self.network.peers.iter().position(|p| p.peer_id == name)
    }

    fn apply_fault(&mut self, fault: &FaultEvent) -> Result<(), ScenarioError> {
        let undo = matches!(fault.action, FaultAction::Restart | FaultAction::PartitionOff);
        let target = if fault.target == LEADER_TARGET {
            let resolved = if undo { self.leader_faulted.take() } else { self.cluster.leader().map(str::to_string) };
            match resolved {
                Some(l) => {
                    if !undo {
                        self.leader_faulted = Some(l.clone());
                    }
                    l
                }
                None => {
                    self.note(format!("{} on {LEADER_TARGET} skipped: no leader", fault.action.as_str()));
                    return Ok(());
                }
            }
        } else {
            fault.target.clone()
        };
        if let Some(i) = self.peer_index(&target) {
            let now = self.now();
            let peer = &mut self.network.peers[i];
            match fault.action {
                FaultAction::Crash => peer.online = false,
                FaultAction::Restart => peer.online = true,
                FaultAction::PartitionOn => peer.partitioned = true,
                FaultAction::PartitionOff => peer.partitioned = false,
                FaultAction::CorruptLedger => {
                    let blocks = peer.store.blocks_mut();
                    let last = blocks.last_mut().expect("genesis present");
                    if let Some(byte) = last.envelopes.first_mut().and_then(|e| e.payload.first_mut()) {
                        *byte ^= 0x01;
                    }
                    self.corrupted_at[i] = Some(now);
                }
            }
        } else if self.network.orderers.contains(&target) {
            match fault.action {
                FaultAction::Crash => self.cluster.crash(&target)?,
                FaultAction::Restart => self.cluster.restart(&target)?,
                FaultAction::PartitionOn => self.cluster.set_partitioned(&target, true)?,
                FaultAction::PartitionOff => self.cluster.set_partitioned(&target, false)?,
                FaultAction::CorruptLedger => return Err(ScenarioError::UnknownTarget(target)),
            }
        } else {
            return Err(ScenarioError::UnknownTarget(target));
        }
        self.note(format!("{} {target}", fault.action.as_str()));
        Ok(())
    }

    fn enqueue(&mut self, creator: &str, invocation: ContractInvocation, endorsement_cap: Option<usize>) {
        self.inflight.push(Submission {
            creator: creator.to_string(),
            invocation,
            endorsement_cap,
            envelope: None,
            next_action_ms: self.now(),
            accepted: false,
        });
    }

    /// Polls peers, collects endorsements and assembles the envelope.
    fn propose(&mut self, sub: &Submission) -> Result<TransactionEnvelope, GatewayError> {
        let now = self.now();
        let creator = self.network.identities.get(&sub.creator).expect("validated").clone();
        let poll = poll_peers(&mut self.network.peers);
        self.record_divergence();
        let config = &self.network.config;
        let required = sub.endorsement_cap.unwrap_or(config.endorsement_policy.required as usize);
        let mut endorsers = select_endorsers(
            &self.network.peers,
            &poll.eligible,
            config.endorsements_per_org,
            required,
            &mut self.rng,
        )?;
        if let Some(cap) = sub.endorsement_cap {
            endorsers.truncate(cap);
        }
        let mut nonce = [0u8; 16];
        self.rng.fill_bytes(&mut nonce);
        let header = TransactionHeader::new(&sub.creator, &config.channel, config.start_epoch_ms + now, Nonce(nonce));
        let proposal = Proposal::new(&creator, header, &sub.invocation);
        let mut endorsements = Vec::with_capacity(endorsers.len());
        for i in endorsers {
            self.proposal_log[i].push(now);
            match self.network.peers[i].endorse_proposal(&proposal, &self.network.directory) {
                Ok(e) => endorsements.push(e),
                Err(PeerError::EndorsementRefused(reason)) => {
                    self.refused_proposals += 1;
                    return Err(GatewayError::EndorsementRefused(reason));
                }
                // The peer failed its own audit mid-round; retry with a fresh poll.
                Err(_) => {
                    return Err(GatewayError::InsufficientEndorsements { available: endorsements.len(), required })
                }
            }
        }
        Ok(TransactionEnvelope {
            header: proposal.header,
            payload: proposal.payload,
            creator_signature: proposal.creator_signature,
            endorsements,
        })
    }

    fn advance(&mut self, sub: &mut Submission) -> Progress {
        let now = self.now();
        let retry = self.network.config.retry_interval_ms;
        if sub.envelope.is_none() {
            match self.propose(sub) {
                Ok(env) => sub.envelope = Some(env),
                Err(GatewayError::InsufficientEndorsements { .. }) => {
                    sub.next_action_ms = now + retry;
                    return Progress::Waiting;
                }
                Err(e) => return Progress::Failed(e),
            }
        }
        let env = sub.envelope.as_ref().expect("just set");
        match self.cluster.submit_envelope(env, None) {
            Ok(_) => {
                if !sub.accepted {
                    sub.accepted = true;
                    self.submitted.push(env.header.tx_id.clone());
                }
                // Resubmitted if still uncommitted at the deadline; the leader
                // drops duplicates by tx_id.
                sub.next_action_ms = now + self.network.config.commit_timeout_ms;
                Progress::Waiting
            }
            Err(OrderingError::NoLeaderAvailable) => {
                sub.next_action_ms = now + retry;
                Progress::Waiting
            }
            Err(e) => {
                self.rejected_envelopes += 1;
                Progress::Failed(GatewayError::Rejected(e.to_string()))
            }
        }
    }

    fn process_submissions(&mut self) {
        let now = self.now();
        let mut keep = Vec::with_capacity(self.inflight.len());
        for mut sub in std::mem::take(&mut self.inflight) {
            let tx = sub.envelope.as_ref().map(|e| e.header.tx_id.clone());
            if let Some(tx) = &tx {
                if self.commit_counts.contains_key(tx) {
                    self.last_outcome = Some(Ok(tx.clone()));
                    continue;
                }
            }
            if sub.next_action_ms > now {
                keep.push(sub);
                continue;
            }
            match self.advance(&mut sub) {
                Progress::Waiting => keep.push(sub),
                Progress::Failed(error) => {
                    self.failures.push(FailedSubmission { creator: sub.creator, tx_id: tx, reason: error.to_string() });
                    self.last_outcome = Some(Err(error));
                }
            }
        }
        self.inflight = keep;
    }

    fn scan_commits(&mut self) {
        let blocks = self.cluster.committed_blocks();
        for block in &blocks[self.scanned..] {
            for env in &block.envelopes {
                *self.commit_counts.entry(env.header.tx_id.clone()).or_default() += 1;
            }
        }
        self.scanned = blocks.len();
        let leaders = self.cluster.leader_history().len();
        for i in self.leaders_seen..leaders {
            let rec = self.cluster.leader_history()[i].clone();
            self.timeline
                .push(TimelineEvent { at_ms: rec.at_ms, event: format!("leader {} term {}", rec.node, rec.term) });
        }
        self.leaders_seen = leaders;
    }

    /// Reachable peers pull committed blocks they have not yet seen, in order.
    fn pull_blocks(&mut self) {
        let committed = self.cluster.committed_blocks();
        for peer in &mut self.network.peers {
            if !peer.reachable() || peer.is_diverged() || peer.height() < self.base_len {
                continue;
            }
            while let Some(block) = committed.get(peer.height() - self.base_len) {
                if peer.validate_and_commit(block.clone(), &self.network.directory).is_err() {
                    break;
                }
            }
        }
        self.record_divergence();
    }

    fn record_divergence(&mut self) {
        let now = self.now();
        for (i, p) in self.network.peers.iter().enumerate() {
            let fresh = match (self.diverged_at[i], self.resynced_at[i]) {
                (None, _) => true,
                (Some(d), Some(r)) => r >= d,
                (Some(_), None) => false,
            };
            if p.is_diverged() && fresh {
                self.diverged_at[i] = Some(now);
                self.timeline.push(TimelineEvent { at_ms: now, event: format!("{} diverged", p.peer_id) });
            }
        }
    }

    /// Resynchronises every online diverged peer from the healthy peer with
    /// the greatest height.
    pub fn resync_diverged(&mut self) {
        let source = self.ledger().clone();
        let now = self.now();
        for i in 0..self.network.peers.len() {
            let peer = &mut self.network.peers[i];
            if peer.online && peer.is_diverged() {
                let result = peer.resync(&source, &self.network.directory);
                let name = peer.peer_id.clone();
                match result {
                    Ok(()) => {
                        self.resynced_at[i] = Some(now);
                        self.note(format!("{name} resynced to height {}", source.len()));
                    }
                    Err(e) => self.note(format!("{name} resync failed: {e}")),
                }
            }
        }
    }

    fn step(&mut self) -> Result<(), ScenarioError> {
        while self.faults.front().is_some_and(|f| f.at_ms <= self.now()) {
            let fault = self.faults.pop_front().expect("checked");
            self.apply_fault(&fault)?;
        }
        self.scan_commits();
        self.pull_blocks();
        self.process_submissions();
        Ok(())
    }

    fn next_time(&self, next_item: Option<u64>) -> u64 {
        let now = self.now();
        let mut next = now + STEP_MS;
        let candidates = self
            .faults
            .front()
            .map(|f| f.at_ms)
            .into_iter()
            .chain(next_item)
            .chain(self.inflight.iter().map(|s| s.next_action_ms));
        for t in candidates {
            if t > now {
                next = next.min(t);
            }
        }
        next
    }

    fn check_identities(&self, workload: &Workload) -> Result<(), ScenarioError> {
        for item in &workload.items {
            if !self.network.identities.contains_key(&item.creator) {
                return Err(ScenarioError::UnknownIdentity(item.creator.clone()));
            }
        }
        Ok(())
    }

    /// Drives the workload and fault schedule to completion.
    pub fn run(&mut self, workload: &Workload, faults: &FaultSchedule) -> Result<(), ScenarioError> {
        workload.validate()?;
        faults.validate()?;
        self.check_identities(workload)?;
        self.faults = faults.events.iter().cloned().collect();
        let mut items: VecDeque<_> = workload.items.iter().collect();
        let horizon = workload
            .items
            .last()
            .map(|i| i.at_ms)
            .into_iter()
            .chain(faults.events.last().map(|f| f.at_ms))
            .max()
            .unwrap_or(0)
            .max(self.now())
            + self.network.config.drain_ms;
        loop {
            while items.front().is_some_and(|i| i.at_ms <= self.now()) {
                let item = items.pop_front().expect("checked");
                self.enqueue(&item.creator, item.action.invocation(), None);
            }
            self.step()?;
            if items.is_empty() && self.inflight.is_empty() && self.faults.is_empty() {
                break;
            }
            if self.now() >= horizon {
                for sub in std::mem::take(&mut self.inflight) {
                    let tx_id = sub.envelope.map(|e| e.header.tx_id);
                    self.failures.push(FailedSubmission {
                        creator: sub.creator,
                        tx_id,
                        reason: "not committed before the drain deadline".into(),
                    });
                }
                break;
            }
            let next = self.next_time(items.front().map(|i| i.at_ms));
            self.cluster.run_until(next);
        }
        self.resync_diverged();
        Ok(())
    }

    /// Submits one invocation and runs until it commits or fails.
    pub fn submit(&mut self, creator: &str, invocation: ContractInvocation) -> Result<Receipt, GatewayError> {
        self.submit_inner(creator, invocation, None)
    }

    /// Like [`Simulation::submit`] but gathers at most `count` endorsements,
    /// even when that is below the policy.
    pub fn submit_with_endorsements(
        &mut self,
        creator: &str,
        invocation: ContractInvocation,
        count: usize,
    ) -> Result<Receipt, GatewayError> {
        self.submit_inner(creator, invocation, Some(count))
    }

    fn submit_inner(
        &mut self,
        creator: &str,
        invocation: ContractInvocation,
        cap: Option<usize>,
    ) -> Result<Receipt, GatewayError> {
        let identity = self
            .network
            .identities
            .get(creator)
            .ok_or_else(|| GatewayError::Parse(format!("unknown identity {creator}")))?;
        if !identity.role().may_write_records() && invocation.is_record_invocation() {
            return Err(GatewayError::PermissionDenied(creator.to_string()));
        }
        self.last_outcome = None;
        self.enqueue(creator, invocation, cap);
        let limit = self.now() + self.network.config.drain_ms;
        while self.last_outcome.is_none() {
            self.step().map_err(|e| GatewayError::Parse(e.to_string()))?;
            if self.last_outcome.is_some() {
                break;
            }
            if self.now() >= limit {
                let sub = self.inflight.pop();
                let tx = sub.and_then(|s| s.envelope).map(|e| e.header.tx_id).unwrap_or_default();
                return Err(if self.cluster.leader().is_none() {
                    GatewayError::NoLeaderAvailable
                } else {
                    GatewayError::CommitTimeout(tx)
                });
            }
            let next = self.next_time(None);
            self.cluster.run_until(next);
        }
        match self.last_outcome.take().expect("loop exit") {
            Err(error) => Err(error),
            Ok(tx_id) => {
                // Let every reachable peer apply the block before reporting.
                self.pull_blocks();
                let store = self.ledger();
                store
                    .blocks()
                    .iter()
                    .find_map(|b| {
                        b.envelopes.iter().position(|e| e.header.tx_id == tx_id).map(|i| Receipt {
                            tx_id: tx_id.clone(),
                            block_number: b.header.number,
                            valid: b.metadata.validity_flags[i],
                        })
                    })
                    .ok_or(GatewayError::CommitTimeout(tx_id))
            }
        }
    }

    pub fn report(&self) -> ScenarioReport {
        let store = self.ledger();
        let summary = stats(store).expect("genesis present");
        let mut receipts = Vec::new();
        let mut seen = BTreeMap::new();
        for block in store.blocks().iter().skip(self.base_len) {
            for (i, env) in block.envelopes.iter().enumerate() {
                *seen.entry(env.header.tx_id.clone()).or_insert(0u64) += 1;
                if seen[&env.header.tx_id] == 1 {
                    receipts.push(Receipt {
                        tx_id: env.header.tx_id.clone(),
                        block_number: block.header.number,
                        valid: block.metadata.validity_flags[i],
                    });
                }
            }
        }
        let duplicate_commits = self.commit_counts.values().map(|c| u64::from(*c) - 1).sum();
        let peers = self
            .network
            .peers
            .iter()
            .enumerate()
            .map(|(i, p)| PeerSummary {
                peer_id: p.peer_id.clone(),
                organization: p.organization.clone(),
                status: p.status(),
                height: p.height(),
                head_digest: p.head_digest(),
                state_digest: p.state.state_digest(),
                proposals_received: self.proposal_log[i].len(),
                corrupted_at_ms: self.corrupted_at[i],
                diverged_at_ms: self.diverged_at[i],
                proposals_after_corruption: self.corrupted_at[i]
                    .map_or(0, |c| self.proposal_log[i].iter().filter(|t| **t >= c).count()),
                resynced_at_ms: self.resynced_at[i],
            })
            .collect();
        ScenarioReport {
            seed: self.network.config.seed,
            blocks_committed: summary.block_count,
            transactions_total: summary.transaction_count,
            contract_invocations: summary.contract_invocation_count,
            valid_transactions: summary.valid_transaction_count,
            transactions_per_minute: summary.transactions_per_minute,
            rejected_envelopes: self.rejected_envelopes,
            refused_proposals: self.refused_proposals,
            submitted: self.submitted.clone(),
            duplicate_commits,
            failed_submissions: self.failures.clone(),
            receipts,
            peers,
            leaders: self.cluster.leader_history().to_vec(),
            ordering_safety_violations: self.cluster.safety_violations().to_vec(),
            timeline: self.timeline.clone(),
            final_time_ms: self.now(),
            ledger_head_digest: store.head_digest().unwrap_or(Digest::ZERO),
        }
    }
}

/// Bootstraps a network from `config`, runs the workload under the fault
/// schedule, and returns the report with the authoritative ledger.
pub fn run_scenario(
    config: &ScenarioConfig,
    workload: &Workload,
    faults: &FaultSchedule,
) -> Result<(ScenarioReport, BlockStore), ScenarioError> {
    let mut sim = Simulation::new(config)?;
    sim.run(workload, faults)?;
    Ok((sim.report(), sim.ledger().clone()))
}
