use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::codec::sha256_digest;
use crate::identity::{
    create_ca, derive_seed, issue_certificate, Identity, KeyPair, MembershipDirectory, Role, SCHEME_ID,
};
use crate::ledger::{genesis_block, Block, ChannelConfig, EndorsementPolicy};
use crate::ordering::OrderingConfig;

use super::peer::Peer;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OrganizationSpec {
    pub name: String,
    /// Site whose records this organization submits.
    pub site: String,
    pub peers: usize,
}

/// Network topology and simulation knobs; canonical JSON on disk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub channel: String,
    pub organizations: Vec<OrganizationSpec>,
    pub ordering: OrderingConfig,
    pub endorsement_policy: EndorsementPolicy,
    pub endorsements_per_org: usize,
    pub seed: u64,
    pub commit_timeout_ms: u64,
    pub retry_interval_ms: u64,
    /// How long to keep running after the last workload item before giving
    /// up on outstanding submissions.
    pub drain_ms: u64,
    pub latency_min_ms: u64,
    pub latency_max_ms: u64,
    /// Wall-clock epoch that simulation time zero maps to, for timestamps.
    pub start_epoch_ms: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            channel: "lago-channel".into(),
            organizations: vec![
                OrganizationSpec { name: "OrgUIS".into(), site: "bucaramanga".into(), peers: 3 },
                OrganizationSpec { name: "OrgESPOCH".into(), site: "riobamba".into(), peers: 3 },
            ],
            ordering: OrderingConfig::default(),
            endorsement_policy: EndorsementPolicy::default(),
            endorsements_per_org: 2,
            seed: 2024,
            commit_timeout_ms: 10_000,
            retry_interval_ms: 1_000,
            drain_ms: 120_000,
            latency_min_ms: 2,
            latency_max_ms: 12,
            // 2024-01-15T08:00:00Z
            start_epoch_ms: 1_705_305_600_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("invalid scenario config: {0}")]
pub struct ConfigError(pub String);

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError(m));
        if self.channel.is_empty() {
            return fail("channel must not be empty".into());
        }
        if self.organizations.is_empty() {
            return fail("at least one organization is required".into());
        }
        for org in &self.organizations {
            if org.name.is_empty() || org.peers == 0 {
                return fail(format!("organization {:?} needs a name and at least one peer", org.name));
            }
        }
        let fan_out = self.endorsements_per_org * self.organizations.len();
        if fan_out < self.endorsement_policy.required as usize {
            return fail(format!(
                "endorsement fan-out {fan_out} cannot satisfy policy {}",
                self.endorsement_policy.required
            ));
        }
        if self.latency_min_ms > self.latency_max_ms {
            return fail("latency_min_ms exceeds latency_max_ms".into());
        }
        if self.commit_timeout_ms == 0 || self.retry_interval_ms == 0 {
            return fail("timeouts must be positive".into());
        }
        self.ordering.validate().map_err(|e| ConfigError(e.to_string()))
    }

    pub fn organization(&self, name: &str) -> Option<&OrganizationSpec> {
        self.organizations.iter().find(|o| o.name == name)
    }
}

pub fn peer_name(org: &str, i: usize) -> String {
    format!("peer{i}.{org}")
}

pub fn collaborator_name(org: &str) -> String {
    format!("collaborator.{org}")
}

pub fn admin_name(org: &str) -> String {
    format!("admin.{org}")
}

/// Orderers are spread round-robin across organizations.
pub fn orderer_names(config: &ScenarioConfig) -> Vec<String> {
    (0..config.ordering.orderer_count)
        .map(|i| format!("orderer{i}.{}", config.organizations[i % config.organizations.len()].name))
        .collect()
}

/// Every identity, certificate, and the genesis block of a scenario, all
/// derived from its seed.
#[derive(Debug, Clone)]
pub struct Network {
    pub config: ScenarioConfig,
    pub directory: MembershipDirectory,
    pub identities: BTreeMap<String, Identity>,
    pub peers: Vec<Peer>,
    pub orderers: Vec<String>,
    pub genesis: Block,
}

impl Network {
    pub fn bootstrap(config: &ScenarioConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let master = sha256_digest(format!("ledgerlab/network/{}", config.seed).as_bytes()).0;
        let mut directory = MembershipDirectory::new();
        let mut ca_keys = BTreeMap::new();
        for org in &config.organizations {
            let (ca, keys) = create_ca(&org.name, &derive_seed(&master, &format!("ca/{}", org.name)))
                .map_err(|e| ConfigError(e.to_string()))?;
            directory.add_root(&ca, &keys);
            ca_keys.insert(org.name.clone(), (ca, keys));
        }
        let mut identities = BTreeMap::new();
        let mut issue = |name: String, org: &str, role: Role| -> Result<(), ConfigError> {
            let (ca, keys) = &ca_keys[org];
            let subject_keys = KeyPair::from_seed(&derive_seed(&master, &format!("id/{name}")));
            let certificate = issue_certificate(keys, &ca.name, &name, org, role, subject_keys.public_key().clone())
                .map_err(|e| ConfigError(e.to_string()))?;
            directory.add_certificate(certificate.clone()).map_err(|e| ConfigError(e.to_string()))?;
            identities.insert(name, Identity { certificate, keys: subject_keys });
            Ok(())
        };
        for org in &config.organizations {
            issue(admin_name(&org.name), &org.name, Role::Admin)?;
            issue(collaborator_name(&org.name), &org.name, Role::Collaborator)?;
            for i in 0..org.peers {
                issue(peer_name(&org.name, i), &org.name, Role::Peer)?;
            }
        }
        let orderers = orderer_names(config);
        for (i, name) in orderers.iter().enumerate() {
            issue(name.clone(), &config.organizations[i % config.organizations.len()].name, Role::Orderer)?;
        }

        let channel_config = ChannelConfig {
            channel: config.channel.clone(),
            scheme_id: SCHEME_ID.into(),
            endorsement_policy: config.endorsement_policy,
            certificate_bundle_digest: directory.bundle_digest(),
        };
        let first_org = &config.organizations[0].name;
        let genesis = genesis_block(&channel_config, &identities[&admin_name(first_org)], &identities[&orderers[0]])
            .map_err(|e| ConfigError(e.to_string()))?;

        let peers = config
            .organizations
            .iter()
            .flat_map(|org| (0..org.peers).map(move |i| (org.name.clone(), peer_name(&org.name, i))))
            .map(|(org, name)| {
                Peer::new(
                    identities[&name].clone(),
                    &org,
                    &genesis,
                    config.endorsement_policy,
                    SCHEME_ID,
                    &config.channel,
                )
            })
            .collect();
        Ok(Self { config: config.clone(), directory, identities, peers, orderers, genesis })
    }

    pub fn identity(&self, name: &str) -> Option<&Identity> {
        self.identities.get(name)
    }

    pub fn orderer_identities(&self) -> Vec<Identity> {
        self.orderers.iter().map(|o| self.identities[o].clone()).collect()
    }
}
