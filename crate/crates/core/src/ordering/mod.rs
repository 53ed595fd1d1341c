//! Crash-fault-tolerant ordering service: a Raft cluster whose log entries are
//! whole blocks, cut from a pending envelope queue on a batch timer or size cap.

mod cluster;
mod node;

pub use cluster::{LeaderRecord, OrderingCluster, SubmitAck};
pub use node::{LogEntry, LogPayload, MessageBody, NodeRole, RaftMessage, RaftNode, SubmitOutcome};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum OrderingError {
    #[error("no ordering leader available")]
    NoLeaderAvailable,
    #[error("creator signature on envelope {0} does not verify")]
    InvalidCreatorSignature(String),
    #[error("unknown orderer {0:?}")]
    UnknownNode(String),
    #[error("invalid ordering config: {0}")]
    Config(String),
}

/// Millisecond timing knobs for the ordering cluster.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrderingConfig {
    pub orderer_count: usize,
    pub batch_timeout_ms: u64,
    pub max_envelopes_per_block: usize,
    pub election_timeout_min_ms: u64,
    pub election_timeout_max_ms: u64,
    pub heartbeat_interval_ms: u64,
}

impl Default for OrderingConfig {
    fn default() -> Self {
        Self {
            orderer_count: 3,
            batch_timeout_ms: 2000,
            max_envelopes_per_block: 10,
            election_timeout_min_ms: 1500,
            election_timeout_max_ms: 3000,
            heartbeat_interval_ms: 500,
        }
    }
}

impl OrderingConfig {
    pub fn validate(&self) -> Result<(), OrderingError> {
        let fail = |m: &str| Err(OrderingError::Config(m.to_string()));
        if self.orderer_count == 0 {
            return fail("orderer_count must be positive");
        }
        if self.max_envelopes_per_block == 0 {
            return fail("max_envelopes_per_block must be positive");
        }
        if self.batch_timeout_ms == 0 {
            return fail("batch_timeout_ms must be positive");
        }
        if self.election_timeout_min_ms >= self.election_timeout_max_ms {
            return fail("election timeout min must be below max");
        }
        if self.heartbeat_interval_ms == 0 || self.heartbeat_interval_ms >= self.election_timeout_min_ms {
            return fail("heartbeat interval must be positive and below the election timeout minimum");
        }
        Ok(())
    }
}
