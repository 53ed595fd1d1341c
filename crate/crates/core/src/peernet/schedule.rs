use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::contract::{ContractInvocation, ScientificRecord};

use super::network::ConfigError;

/// Resolved at event time to whichever orderer currently leads. For
/// `restart` and `partition_off` it names the orderer that the last
/// `@leader` crash or partition hit.
pub const LEADER_TARGET: &str = "@leader";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultAction {
    Crash,
    Restart,
    PartitionOn,
    PartitionOff,
    /// Flips one payload bit in a block stored by the target peer.
    CorruptLedger,
}

impl FaultAction {
    pub fn as_str(self) -> &'static str {
        match self {
            FaultAction::Crash => "crash",
            FaultAction::Restart => "restart",
            FaultAction::PartitionOn => "partition_on",
            FaultAction::PartitionOff => "partition_off",
            FaultAction::CorruptLedger => "corrupt_ledger",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEvent {
    pub at_ms: u64,
    pub target: String,
    pub action: FaultAction,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSchedule {
    pub events: Vec<FaultEvent>,
}

impl FaultSchedule {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.events.windows(2).any(|w| w[1].at_ms < w[0].at_ms) {
            return Err(ConfigError("fault event times must be non-decreasing".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum WorkloadAction {
    Lifecycle { operation: String, sequence: u64 },
    CreateRecord { record: Box<ScientificRecord> },
    UpdateRecord { id: String, changes: BTreeMap<String, Value> },
}

impl WorkloadAction {
    pub fn invocation(&self) -> ContractInvocation {
        match self {
            WorkloadAction::Lifecycle { operation, sequence } => ContractInvocation::lifecycle(operation, *sequence),
            WorkloadAction::CreateRecord { record } => ContractInvocation::create_record((**record).clone()),
            WorkloadAction::UpdateRecord { id, changes } => ContractInvocation::update_record(id, changes.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkloadItem {
    pub at_ms: u64,
    /// Subject name of the submitting identity.
    pub creator: String,
    pub action: WorkloadAction,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Workload {
    pub items: Vec<WorkloadItem>,
}

impl Workload {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.items.windows(2).any(|w| w[1].at_ms < w[0].at_ms) {
            return Err(ConfigError("workload times must be non-decreasing".into()));
        }
        Ok(())
    }
}
