//! Discrete-event driver for a set of [`RaftNode`]s: seeded message latency,
//! crash/restart and partition faults, client submission with redirects, and
//! the committed block stream.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::codec::{sha256_digest, Digest};
use crate::identity::{Identity, MembershipDirectory};
use crate::ledger::{Block, TransactionEnvelope};

use super::node::{LogPayload, NodeRole, RaftMessage, RaftNode, SubmitOutcome};
use super::{OrderingConfig, OrderingError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubmitAck {
    pub leader: String,
    /// False when the leader already held the envelope.
    pub queued: bool,
}

/// First time a node was observed leading a term.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeaderRecord {
    pub term: u64,
    pub node: String,
    pub at_ms: u64,
}

#[derive(Debug, Clone)]
pub struct OrderingCluster {
    nodes: BTreeMap<String, RaftNode>,
    down: BTreeSet<String>,
    isolated: BTreeSet<String>,
    queue: BTreeMap<(u64, u64), RaftMessage>,
    seq: u64,
    now: u64,
    rng: ChaCha8Rng,
    latency_ms: (u64, u64),
    directory: MembershipDirectory,
    committed: Vec<Block>,
    committed_terms: Vec<u64>,
    observed_commit: BTreeMap<String, usize>,
    leaders: Vec<LeaderRecord>,
    leader_by_term: BTreeMap<u64, String>,
    safety_violations: Vec<String>,
    last_leader: Option<String>,
}

impl OrderingCluster {
    /// `base` is (number, digest) of the last block already on the ledger.
    pub fn new(
        config: OrderingConfig,
        orderers: Vec<Identity>,
        directory: MembershipDirectory,
        base: (u64, Digest),
        seed: u64,
    ) -> Result<Self, OrderingError> {
        config.validate()?;
        if orderers.len() != config.orderer_count {
            return Err(OrderingError::Config(format!(
                "{} orderer identities for orderer_count {}",
                orderers.len(),
                config.orderer_count
            )));
        }
        let names: Vec<String> = orderers.iter().map(|o| o.name().to_string()).collect();
        let mut nodes = BTreeMap::new();
        for identity in orderers {
            let node = RaftNode::new(identity, names.clone(), config.clone(), base, seed, 0)?;
            nodes.insert(node.id().to_string(), node);
        }
        Ok(Self {
            nodes,
            down: BTreeSet::new(),
            isolated: BTreeSet::new(),
            queue: BTreeMap::new(),
            seq: 0,
            now: 0,
            rng: ChaCha8Rng::from_seed(sha256_digest(format!("cluster/{seed}").as_bytes()).0),
            latency_ms: (2, 12),
            directory,
            committed: Vec::new(),
            committed_terms: Vec::new(),
            observed_commit: BTreeMap::new(),
            leaders: Vec::new(),
            leader_by_term: BTreeMap::new(),
            safety_violations: Vec::new(),
            last_leader: None,
        })
    }

    /// Inclusive range of one-way message delay.
    pub fn set_latency(&mut self, min_ms: u64, max_ms: u64) {
        self.latency_ms = (min_ms, max_ms.max(min_ms));
    }

    pub fn now(&self) -> u64 {
        self.now
    }

    pub fn node(&self, id: &str) -> Option<&RaftNode> {
        self.nodes.get(id)
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &str> {
        self.nodes.keys().map(String::as_str)
    }

    /// Committed blocks in order, with term-start no-ops removed.
    pub fn committed_blocks(&self) -> &[Block] {
        &self.committed
    }

    pub fn leader_history(&self) -> &[LeaderRecord] {
        &self.leaders
    }

    /// Empty unless two nodes led the same term or committed prefixes diverged.
    pub fn safety_violations(&self) -> &[String] {
        &self.safety_violations
    }

    pub fn is_up(&self, id: &str) -> bool {
        self.nodes.contains_key(id) && !self.down.contains(id)
    }

    fn reachable(&self, id: &str) -> bool {
        self.is_up(id) && !self.isolated.contains(id)
    }

    /// The reachable node that believes it leads the highest term.
    pub fn leader(&self) -> Option<&str> {
        self.nodes
            .values()
            .filter(|n| n.role() == NodeRole::Leader && self.reachable(n.id()))
            .max_by_key(|n| n.term())
            .map(|n| n.id())
    }

    pub fn crash(&mut self, id: &str) -> Result<(), OrderingError> {
        self.known(id)?;
        self.down.insert(id.to_string());
        Ok(())
    }

    pub fn restart(&mut self, id: &str) -> Result<(), OrderingError> {
        self.known(id)?;
        if self.down.remove(id) {
            let now = self.now;
            self.nodes.get_mut(id).expect("known").restart(now);
        }
        Ok(())
    }

    /// Isolates a node from every other node and from clients, both directions.
    pub fn set_partitioned(&mut self, id: &str, on: bool) -> Result<(), OrderingError> {
        self.known(id)?;
        if on {
            self.isolated.insert(id.to_string());
        } else {
            self.isolated.remove(id);
        }
        Ok(())
    }

    fn known(&self, id: &str) -> Result<(), OrderingError> {
        if self.nodes.contains_key(id) {
            Ok(())
        } else {
            Err(OrderingError::UnknownNode(id.to_string()))
        }
    }

    /// Hands an envelope to `target` (or the last known leader). Followers
    /// redirect once to the leader they know of.
    pub fn submit_envelope(
        &mut self,
        envelope: &TransactionEnvelope,
        target: Option<&str>,
    ) -> Result<SubmitAck, OrderingError> {
        if !envelope.creator_signature_valid(&self.directory) {
            return Err(OrderingError::InvalidCreatorSignature(envelope.header.tx_id.clone()));
        }
        let first = target
            .map(str::to_string)
            .or_else(|| self.last_leader.clone().filter(|l| self.reachable(l)))
            .or_else(|| self.nodes.keys().find(|k| self.reachable(k)).cloned())
            .ok_or(OrderingError::NoLeaderAvailable)?;
        let mut current = first;
        for _ in 0..2 {
            if !self.reachable(&current) {
                return Err(OrderingError::NoLeaderAvailable);
            }
            let now = self.now;
            let outcome = self.nodes.get_mut(&current).expect("reachable").submit(envelope.clone(), now);
            match outcome {
                SubmitOutcome::Queued | SubmitOutcome::Duplicate => {
                    self.last_leader = Some(current.clone());
                    return Ok(SubmitAck { leader: current, queued: outcome == SubmitOutcome::Queued });
                }
                SubmitOutcome::Redirect(Some(leader)) if leader != current => current = leader,
                SubmitOutcome::Redirect(_) => break,
            }
        }
        Err(OrderingError::NoLeaderAvailable)
    }

    fn send(&mut self, msgs: Vec<RaftMessage>) {
        for m in msgs {
            if self.isolated.contains(&m.sender) || self.isolated.contains(&m.recipient) {
                continue;
            }
            let delay = self.rng.gen_range(self.latency_ms.0..=self.latency_ms.1);
            self.seq += 1;
            self.queue.insert((self.now + delay, self.seq), m);
        }
    }

    fn next_timer(&self) -> Option<(u64, String)> {
        self.nodes
            .values()
            .filter(|n| self.is_up(n.id()))
            .map(|n| (n.next_wakeup().max(self.now), n.id().to_string()))
            .min()
    }

    /// Processes every message delivery and timer due at or before `until`.
    pub fn run_until(&mut self, until: u64) {
        loop {
            let msg_at = self.queue.keys().next().map(|k| k.0);
            let timer = self.next_timer();
            let deliver = match (msg_at, &timer) {
                (Some(m), Some((t, _))) => m <= *t,
                (Some(_), None) => true,
                (None, Some(_)) => false,
                (None, None) => break,
            };
            let at = if deliver { msg_at.expect("checked") } else { timer.as_ref().expect("checked").0 };
            if at > until {
                break;
            }
            self.now = self.now.max(at);
            let touched = if deliver {
                let (_, msg) = self.queue.pop_first().expect("checked");
                let to = msg.recipient.clone();
                if !self.reachable(&to) || self.isolated.contains(&msg.sender) {
                    continue;
                }
                let now = self.now;
                let out = self.nodes.get_mut(&to).expect("known").step(msg, now);
                self.send(out);
                to
            } else {
                let id = timer.expect("checked").1;
                let now = self.now;
                let out = self.nodes.get_mut(&id).expect("known").tick(now);
                self.send(out);
                id
            };
            self.observe(&touched);
        }
        self.now = self.now.max(until);
    }

    fn observe(&mut self, id: &str) {
        let node = &self.nodes[id];
        if node.role() == NodeRole::Leader {
            let term = node.term();
            match self.leader_by_term.get(&term) {
                None => {
                    self.leader_by_term.insert(term, id.to_string());
                    self.leaders.push(LeaderRecord { term, node: id.to_string(), at_ms: self.now });
                    self.last_leader = Some(id.to_string());
                }
                Some(existing) if existing != id => {
                    self.safety_violations.push(format!("term {term} led by {existing} and {id}"));
                }
                Some(_) => {}
            }
        }
        let commit = node.commit_index() as usize;
        let seen = self.observed_commit.get(id).copied().unwrap_or(0);
        for i in seen..commit {
            let entry = &node.log()[i];
            if let Some(term) = self.committed_terms.get(i) {
                if *term != entry.term {
                    self.safety_violations.push(format!("{id} committed a different entry at index {}", i + 1));
                }
                continue;
            }
            self.committed_terms.push(entry.term);
            if let LogPayload::Block(block) = &entry.payload {
                self.committed.push((**block).clone());
            }
        }
        self.observed_commit.insert(id.to_string(), commit);
    }
}

#[cfg(test)]
mod tests {
    use super::super::node::tests::{envelope, orderers};
    use super::*;

    fn cluster(seed: u64) -> (OrderingCluster, Identity) {
        let (ids, dir, client) = orderers(3);
        (OrderingCluster::new(OrderingConfig::default(), ids, dir, (0, Digest::ZERO), seed).unwrap(), client)
    }

    fn wait_for_leader(c: &mut OrderingCluster, limit: u64) -> String {
        let start = c.now();
        while c.now() < start + limit {
            if let Some(l) = c.leader() {
                return l.to_string();
            }
            let t = c.now() + 10;
            c.run_until(t);
        }
        panic!("no leader within {limit} ms");
    }

    #[test]
    fn submit_to_follower_is_redirected() {
        let (mut c, client) = cluster(1);
        let leader = wait_for_leader(&mut c, 20_000);
        c.run_until(c.now() + 100);
        let follower = c.node_ids().find(|n| *n != leader).unwrap().to_string();
        let ack = c.submit_envelope(&envelope(&client, 1, c.now()), Some(&follower)).unwrap();
        assert_eq!(ack.leader, leader);
        assert!(ack.queued);
        assert_eq!(c.node(&leader).unwrap().batch_deadline(), Some(c.now() + 2000));
    }

    #[test]
    fn blocks_commit_in_order_and_chain() {
        let (mut c, client) = cluster(2);
        wait_for_leader(&mut c, 20_000);
        for i in 0..25 {
            c.submit_envelope(&envelope(&client, i, c.now()), None).unwrap();
        }
        c.run_until(c.now() + 5000);
        let blocks = c.committed_blocks();
        assert_eq!(blocks.iter().map(|b| b.envelopes.len()).collect::<Vec<_>>(), vec![10, 10, 5]);
        assert_eq!(blocks[0].header.number, 1);
        for w in blocks.windows(2) {
            assert_eq!(w[1].header.previous_hash, w[0].digest());
        }
        assert!(c.safety_violations().is_empty());
    }

    #[test]
    fn batch_window_boundary() {
        let (mut c, client) = cluster(3);
        wait_for_leader(&mut c, 20_000);
        c.run_until(c.now() + 100);
        let t = c.now();
        c.submit_envelope(&envelope(&client, 1, t), None).unwrap();
        c.run_until(t + 1999);
        c.submit_envelope(&envelope(&client, 2, t + 1999), None).unwrap();
        c.run_until(t + 2001);
        c.submit_envelope(&envelope(&client, 3, t + 2001), None).unwrap();
        c.run_until(t + 8000);
        let sizes: Vec<_> = c.committed_blocks().iter().map(|b| b.envelopes.len()).collect();
        assert_eq!(sizes, vec![2, 1]);
    }

    #[test]
    fn two_orderers_down_means_no_leader_and_no_commits() {
        let (mut c, client) = cluster(4);
        let leader = wait_for_leader(&mut c, 20_000);
        c.submit_envelope(&envelope(&client, 1, c.now()), None).unwrap();
        c.run_until(c.now() + 3000);
        let committed = c.committed_blocks().len();
        let others: Vec<String> = c.node_ids().filter(|n| *n != leader).map(str::to_string).collect();
        for o in &others {
            c.crash(o).unwrap();
        }
        c.run_until(c.now() + 10_000);
        assert_eq!(c.leader(), None);
        assert_eq!(c.submit_envelope(&envelope(&client, 2, c.now()), None), Err(OrderingError::NoLeaderAvailable));
        c.run_until(c.now() + 10_000);
        assert_eq!(c.committed_blocks().len(), committed);
    }

    #[test]
    fn tampered_envelope_fails_precheck() {
        let (mut c, client) = cluster(5);
        wait_for_leader(&mut c, 20_000);
        let mut e = envelope(&client, 1, 0);
        e.payload.push(b' ');
        assert!(matches!(c.submit_envelope(&e, None), Err(OrderingError::InvalidCreatorSignature(_))));
    }

    #[test]
    fn partitioned_leader_is_replaced() {
        let (mut c, client) = cluster(6);
        let leader = wait_for_leader(&mut c, 20_000);
        c.set_partitioned(&leader, true).unwrap();
        c.run_until(c.now() + 10_000);
        let new_leader = c.leader().unwrap().to_string();
        assert_ne!(new_leader, leader);
        c.submit_envelope(&envelope(&client, 1, c.now()), None).unwrap();
        c.run_until(c.now() + 3000);
        c.set_partitioned(&leader, false).unwrap();
        c.run_until(c.now() + 5000);
        let n = c.committed_blocks().len();
        assert_eq!(n, 1);
        for id in c.node_ids() {
            let node = c.node(id).unwrap();
            assert!(node.commit_index() >= 2, "{id} did not catch up");
        }
        assert!(c.safety_violations().is_empty());
    }
}
