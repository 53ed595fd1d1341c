//! Peers, the seeded network bootstrap, and the discrete-event simulation
//! that ties peers, the gateway and the ordering cluster together under a
//! workload and a fault schedule.

mod network;
mod peer;
mod schedule;
mod sim;

pub use network::{
    admin_name, collaborator_name, orderer_names, peer_name, ConfigError, Network, OrganizationSpec, ScenarioConfig,
};
pub use peer::{replay_state, Peer, PeerError, PeerStatus, Proposal};
pub use schedule::{FaultAction, FaultEvent, FaultSchedule, Workload, WorkloadAction, WorkloadItem, LEADER_TARGET};
pub use sim::{run_scenario, FailedSubmission, PeerSummary, ScenarioError, ScenarioReport, Simulation, TimelineEvent};
