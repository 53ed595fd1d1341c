//! One Raft participant as a pure state machine: `tick` and `step` consume an
//! input at a given simulation time and return the messages to send.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::codec::{sha256_digest, Digest};
use crate::identity::{Identity, Role};
use crate::ledger::{build_block, Block, TransactionEnvelope};

use super::{OrderingConfig, OrderingError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum NodeRole {
    Follower,
    Candidate,
    Leader,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LogPayload {
    /// Appended by a new leader so entries from earlier terms can commit.
    Noop,
    Block(Box<Block>),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LogEntry {
    pub term: u64,
    pub payload: LogPayload,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MessageBody {
    RequestVote { last_log_index: u64, last_log_term: u64 },
    VoteReply { granted: bool },
    AppendEntries { prev_log_index: u64, prev_log_term: u64, entries: Vec<LogEntry>, leader_commit: u64 },
    AppendReply { success: bool, match_index: u64 },
    SubmitEnvelope { envelope: Box<TransactionEnvelope> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RaftMessage {
    pub term: u64,
    pub sender: String,
    pub recipient: String,
    pub body: MessageBody,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubmitOutcome {
    Queued,
    /// Already in the log or the pending queue.
    Duplicate,
    /// Not the leader; carries the last known leader, if any.
    Redirect(Option<String>),
}

#[derive(Debug, Clone)]
pub struct RaftNode {
    id: String,
    peers: Vec<String>,
    config: OrderingConfig,
    identity: Identity,
    /// Number and digest of the block preceding the first block in the log.
    base_number: u64,
    base_hash: Digest,

    current_term: u64,
    voted_for: Option<String>,
    log: Vec<LogEntry>,
    commit_index: u64,

    role: NodeRole,
    leader_hint: Option<String>,
    votes: BTreeSet<String>,
    election_deadline: u64,
    next_index: BTreeMap<String, u64>,
    match_index: BTreeMap<String, u64>,
    heartbeat_due: u64,
    quorum_check_due: u64,
    heard_from: BTreeSet<String>,
    pending: VecDeque<TransactionEnvelope>,
    batch_deadline: Option<u64>,
    known_tx: BTreeSet<String>,
    rng: ChaCha8Rng,
}

impl RaftNode {
    /// `base` is (number of the last block already on the ledger, its digest);
    /// the first block this cluster cuts is `base.0 + 1`.
    pub fn new(
        identity: Identity,
        peers: Vec<String>,
        config: OrderingConfig,
        base: (u64, Digest),
        seed: u64,
        now: u64,
    ) -> Result<Self, OrderingError> {
        config.validate()?;
        if identity.role() != Role::Orderer {
            return Err(OrderingError::Config(format!("{} is not an orderer", identity.name())));
        }
        let id = identity.name().to_string();
        let rng_seed = sha256_digest(format!("raft/{seed}/{id}").as_bytes()).0;
        let mut node = Self {
            peers: peers.into_iter().filter(|p| *p != id).collect(),
            id,
            config,
            identity,
            base_number: base.0 + 1,
            base_hash: base.1,
            current_term: 0,
            voted_for: None,
            log: Vec::new(),
            commit_index: 0,
            role: NodeRole::Follower,
            leader_hint: None,
            votes: BTreeSet::new(),
            election_deadline: 0,
            next_index: BTreeMap::new(),
            match_index: BTreeMap::new(),
            heartbeat_due: 0,
            quorum_check_due: 0,
            heard_from: BTreeSet::new(),
            pending: VecDeque::new(),
            batch_deadline: None,
            known_tx: BTreeSet::new(),
            rng: ChaCha8Rng::from_seed(rng_seed),
        };
        node.reset_election_deadline(now);
        Ok(node)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn term(&self) -> u64 {
        self.current_term
    }

    pub fn role(&self) -> NodeRole {
        self.role
    }

    pub fn voted_for(&self) -> Option<&str> {
        self.voted_for.as_deref()
    }

    pub fn leader_hint(&self) -> Option<&str> {
        self.leader_hint.as_deref()
    }

    pub fn log(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn commit_index(&self) -> u64 {
        self.commit_index
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn batch_deadline(&self) -> Option<u64> {
        self.batch_deadline
    }

    pub fn election_deadline(&self) -> u64 {
        self.election_deadline
    }

    /// Earliest time at which `tick` has work to do.
    pub fn next_wakeup(&self) -> u64 {
        match self.role {
            NodeRole::Leader => {
                if self.pending.len() >= self.config.max_envelopes_per_block {
                    return 0;
                }
                let batch = self.batch_deadline.unwrap_or(u64::MAX);
                self.heartbeat_due.min(self.quorum_check_due).min(batch)
            }
            _ => self.election_deadline,
        }
    }

    fn majority(&self) -> usize {
        let cluster = self.peers.len() + 1;
        cluster / 2 + 1
    }

    fn last_log_index(&self) -> u64 {
        self.log.len() as u64
    }

    fn term_at(&self, index: u64) -> u64 {
        if index == 0 {
            0
        } else {
            self.log[index as usize - 1].term
        }
    }

    fn reset_election_deadline(&mut self, now: u64) {
        let timeout = self.rng.gen_range(self.config.election_timeout_min_ms..self.config.election_timeout_max_ms);
        self.election_deadline = now + timeout;
    }

    fn rebuild_known_tx(&mut self) {
        self.known_tx = self
            .log
            .iter()
            .filter_map(|e| match &e.payload {
                LogPayload::Block(b) => Some(b),
                LogPayload::Noop => None,
            })
            .flat_map(|b| b.envelopes.iter().map(|e| e.header.tx_id.clone()))
            .chain(self.pending.iter().map(|e| e.header.tx_id.clone()))
            .collect();
    }

    fn message(&self, recipient: &str, body: MessageBody) -> RaftMessage {
        RaftMessage { term: self.current_term, sender: self.id.clone(), recipient: recipient.to_string(), body }
    }

    fn become_follower(&mut self, now: u64) {
        if self.role == NodeRole::Leader && !self.pending.is_empty() {
            tracing::debug!(node = %self.id, dropped = self.pending.len(), "leader stepped down with queued envelopes");
        }
        self.role = NodeRole::Follower;
        self.votes.clear();
        self.pending.clear();
        self.batch_deadline = None;
        self.next_index.clear();
        self.match_index.clear();
        self.rebuild_known_tx();
        self.reset_election_deadline(now);
    }

    /// Simulates a process restart: persistent state (term, vote, log, commit
    /// index) survives, everything else is reset.
    pub fn restart(&mut self, now: u64) {
        self.leader_hint = None;
        self.become_follower(now);
    }

    fn start_election(&mut self, now: u64) -> Vec<RaftMessage> {
        self.current_term += 1;
        self.role = NodeRole::Candidate;
        self.voted_for = Some(self.id.clone());
        self.votes = BTreeSet::from([self.id.clone()]);
        self.leader_hint = None;
        self.reset_election_deadline(now);
        tracing::debug!(node = %self.id, term = self.current_term, "starting election");
        if self.votes.len() >= self.majority() {
            return self.become_leader(now);
        }
        let (last_log_index, last_log_term) = (self.last_log_index(), self.term_at(self.last_log_index()));
        self.peers.iter().map(|p| self.message(p, MessageBody::RequestVote { last_log_index, last_log_term })).collect()
    }

    fn become_leader(&mut self, now: u64) -> Vec<RaftMessage> {
        tracing::debug!(node = %self.id, term = self.current_term, "became leader");
        self.role = NodeRole::Leader;
        self.leader_hint = Some(self.id.clone());
        self.votes.clear();
        self.log.push(LogEntry { term: self.current_term, payload: LogPayload::Noop });
        let next = self.last_log_index();
        for p in &self.peers {
            self.next_index.insert(p.clone(), next);
            self.match_index.insert(p.clone(), 0);
        }
        self.heard_from.clear();
        self.quorum_check_due = now + self.config.election_timeout_max_ms;
        self.heartbeat_due = now + self.config.heartbeat_interval_ms;
        self.rebuild_known_tx();
        self.advance_commit();
        self.broadcast_append()
    }

    fn append_for(&self, peer: &str) -> RaftMessage {
        let next = self.next_index.get(peer).copied().unwrap_or(1).max(1);
        let prev_log_index = next - 1;
        let entries = self.log[prev_log_index as usize..].to_vec();
        self.message(
            peer,
            MessageBody::AppendEntries {
                prev_log_index,
                prev_log_term: self.term_at(prev_log_index),
                entries,
                leader_commit: self.commit_index,
            },
        )
    }

    fn broadcast_append(&self) -> Vec<RaftMessage> {
        self.peers.iter().map(|p| self.append_for(p)).collect()
    }

    fn advance_commit(&mut self) {
        for n in (self.commit_index + 1..=self.last_log_index()).rev() {
            if self.term_at(n) != self.current_term {
                break;
            }
            let replicas = 1 + self.match_index.values().filter(|m| **m >= n).count();
            if replicas >= self.majority() {
                self.commit_index = n;
                break;
            }
        }
    }

    /// Next block number and previous-hash for a block appended to this log.
    fn log_tip(&self) -> (u64, Digest) {
        self.log
            .iter()
            .rev()
            .find_map(|e| match &e.payload {
                LogPayload::Block(b) => Some((b.header.number + 1, b.digest())),
                LogPayload::Noop => None,
            })
            .unwrap_or((self.base_number, self.base_hash))
    }

    /// Cuts blocks while the size cap is reached or the batch timer has fired.
    fn cut_ready_blocks(&mut self, now: u64) -> bool {
        let mut cut = false;
        while !self.pending.is_empty()
            && (self.pending.len() >= self.config.max_envelopes_per_block
                || self.batch_deadline.is_some_and(|d| now >= d))
        {
            let take = self.pending.len().min(self.config.max_envelopes_per_block);
            let envelopes: Vec<_> = self.pending.drain(..take).collect();
            let (number, previous_hash) = self.log_tip();
            let block = build_block(number, previous_hash, envelopes, &self.identity)
                .expect("orderer role checked at construction");
            tracing::debug!(node = %self.id, number, envelopes = block.envelopes.len(), "cut block");
            self.log.push(LogEntry { term: self.current_term, payload: LogPayload::Block(Box::new(block)) });
            cut = true;
        }
        if self.pending.is_empty() {
            self.batch_deadline = None;
        } else if cut {
            self.batch_deadline = Some(now + self.config.batch_timeout_ms);
        }
        if cut {
            self.advance_commit();
        }
        cut
    }

    pub fn tick(&mut self, now: u64) -> Vec<RaftMessage> {
        match self.role {
            NodeRole::Leader => {
                if now >= self.quorum_check_due {
                    if self.heard_from.len() + 1 < self.majority() {
                        tracing::debug!(node = %self.id, term = self.current_term, "lost quorum contact, stepping down");
                        self.become_follower(now);
                        return Vec::new();
                    }
                    self.heard_from.clear();
                    self.quorum_check_due = now + self.config.election_timeout_max_ms;
                }
                let cut = self.cut_ready_blocks(now);
                if cut || now >= self.heartbeat_due {
                    self.heartbeat_due = now + self.config.heartbeat_interval_ms;
                    return self.broadcast_append();
                }
                Vec::new()
            }
            NodeRole::Follower | NodeRole::Candidate => {
                if now >= self.election_deadline {
                    self.start_election(now)
                } else {
                    Vec::new()
                }
            }
        }
    }

    /// Client entry point. Only the leader queues; the first envelope of an
    /// empty queue starts the batch timer.
    pub fn submit(&mut self, envelope: TransactionEnvelope, now: u64) -> SubmitOutcome {
        if self.role != NodeRole::Leader {
            return SubmitOutcome::Redirect(self.leader_hint.clone());
        }
        if !self.known_tx.insert(envelope.header.tx_id.clone()) {
            return SubmitOutcome::Duplicate;
        }
        self.pending.push_back(envelope);
        if self.batch_deadline.is_none() {
            self.batch_deadline = Some(now + self.config.batch_timeout_ms);
        }
        SubmitOutcome::Queued
    }

    pub fn step(&mut self, msg: RaftMessage, now: u64) -> Vec<RaftMessage> {
        if let MessageBody::SubmitEnvelope { envelope } = msg.body {
            return match self.submit(*envelope.clone(), now) {
                SubmitOutcome::Redirect(Some(leader)) if leader != msg.sender && leader != self.id => {
                    vec![self.message(&leader, MessageBody::SubmitEnvelope { envelope })]
                }
                _ => Vec::new(),
            };
        }
        if msg.term > self.current_term {
            self.current_term = msg.term;
            self.voted_for = None;
            if self.role != NodeRole::Follower {
                self.become_follower(now);
            }
        }
        match msg.body {
            MessageBody::RequestVote { last_log_index, last_log_term } => {
                let my_last = self.last_log_index();
                let up_to_date = (last_log_term, last_log_index) >= (self.term_at(my_last), my_last);
                let granted = msg.term == self.current_term
                    && self.voted_for.as_ref().is_none_or(|v| *v == msg.sender)
                    && up_to_date;
                if granted {
                    self.voted_for = Some(msg.sender.clone());
                    self.reset_election_deadline(now);
                }
                vec![self.message(&msg.sender, MessageBody::VoteReply { granted })]
            }
            MessageBody::VoteReply { granted } => {
                if self.role == NodeRole::Candidate && msg.term == self.current_term && granted {
                    self.votes.insert(msg.sender);
                    if self.votes.len() >= self.majority() {
                        return self.become_leader(now);
                    }
                }
                Vec::new()
            }
            MessageBody::AppendEntries { prev_log_index, prev_log_term, entries, leader_commit } => {
                if msg.term < self.current_term {
                    return vec![self.message(&msg.sender, MessageBody::AppendReply { success: false, match_index: 0 })];
                }
                if self.role != NodeRole::Follower {
                    self.become_follower(now);
                }
                self.leader_hint = Some(msg.sender.clone());
                self.reset_election_deadline(now);
                if prev_log_index > self.last_log_index() || self.term_at(prev_log_index) != prev_log_term {
                    let hint = self.last_log_index().min(prev_log_index.saturating_sub(1));
                    return vec![
                        self.message(&msg.sender, MessageBody::AppendReply { success: false, match_index: hint })
                    ];
                }
                let count = entries.len() as u64;
                let mut truncated = false;
                for (i, entry) in entries.into_iter().enumerate() {
                    let index = prev_log_index + 1 + i as u64;
                    if index <= self.last_log_index() {
                        if self.term_at(index) == entry.term {
                            continue;
                        }
                        debug_assert!(index > self.commit_index, "committed entry overwritten");
                        self.log.truncate(index as usize - 1);
                        truncated = true;
                    }
                    if let LogPayload::Block(b) = &entry.payload {
                        self.known_tx.extend(b.envelopes.iter().map(|e| e.header.tx_id.clone()));
                    }
                    self.log.push(entry);
                }
                if truncated {
                    self.rebuild_known_tx();
                }
                let match_index = prev_log_index + count;
                if leader_commit > self.commit_index {
                    self.commit_index = leader_commit.min(match_index).max(self.commit_index);
                }
                vec![self.message(&msg.sender, MessageBody::AppendReply { success: true, match_index })]
            }
            MessageBody::AppendReply { success, match_index } => {
                if self.role != NodeRole::Leader || msg.term != self.current_term {
                    tracing::trace!(node = %self.id, from = %msg.sender, "dropping stale append reply");
                    return Vec::new();
                }
                self.heard_from.insert(msg.sender.clone());
                if success {
                    let m = self.match_index.entry(msg.sender.clone()).or_insert(0);
                    *m = (*m).max(match_index);
                    let m = *m;
                    self.next_index.insert(msg.sender.clone(), m + 1);
                    self.advance_commit();
                    if m < self.last_log_index() {
                        return vec![self.append_for(&msg.sender)];
                    }
                    Vec::new()
                } else {
                    let next = self.next_index.get(&msg.sender).copied().unwrap_or(1);
                    self.next_index.insert(msg.sender.clone(), (match_index + 1).min(next.saturating_sub(1)).max(1));
                    vec![self.append_for(&msg.sender)]
                }
            }
            MessageBody::SubmitEnvelope { .. } => unreachable!("handled above"),
        }
    }
}
