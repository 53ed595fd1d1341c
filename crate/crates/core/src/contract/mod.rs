//! The `ScientificDataCollection` contract: record schema, role-based access
//! control, and the deterministic world-state transition applied at commit.

pub(crate) mod record;

pub use record::{
    dmp_id, hash_data_file, is_orcid, DataKind, DataPointer, Level, Metadata, SchemaViolation, ScientificRecord,
    IMMUTABLE_FIELDS, MUTABLE_FIELDS,
};

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::codec::{canonical_encode, sha256_digest, Digest};
use crate::identity::{verify_signature, Certificate, MembershipDirectory, Role};
use crate::ledger::{EndorsementPolicy, TransactionEnvelope, TransactionHeader};

pub const CONTRACT_NAME: &str = "ScientificDataCollection";
pub const LIFECYCLE_CONTRACT: &str = "lifecycle";

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum ContractError {
    #[error("role {role} may not call {function:?}")]
    PermissionDenied { role: Role, function: ContractFunction },
    #[error("record {0:?} already exists")]
    DuplicateId(String),
    #[error("schema violation: {0}")]
    SchemaViolation(SchemaViolation),
    #[error("record {0:?} not found")]
    NotFound(String),
    #[error("field {0:?} is immutable")]
    ImmutableField(String),
    #[error("bad arguments: {0}")]
    BadArguments(String),
    #[error("unknown contract {0:?}")]
    UnknownContract(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContractFunction {
    CreateRecord,
    UpdateRecord,
    ReadRecord,
    RecordExists,
    LifecycleOp,
}

impl ContractFunction {
    pub const ALL: [ContractFunction; 5] = [
        ContractFunction::CreateRecord,
        ContractFunction::UpdateRecord,
        ContractFunction::ReadRecord,
        ContractFunction::RecordExists,
        ContractFunction::LifecycleOp,
    ];
}

/// Role-based access table.
pub fn is_permitted(role: Role, function: ContractFunction) -> bool {
    match function {
        ContractFunction::CreateRecord | ContractFunction::UpdateRecord => role.may_write_records(),
        ContractFunction::ReadRecord | ContractFunction::RecordExists => true,
        ContractFunction::LifecycleOp => role == Role::Admin,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContractInvocation {
    pub contract_name: String,
    pub function: ContractFunction,
    pub args: Value,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateRecordArgs {
    pub record: ScientificRecord,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpdateRecordArgs {
    pub id: String,
    pub changes: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordIdArgs {
    pub id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LifecycleArgs {
    pub operation: String,
    pub chaincode: String,
    pub sequence: u64,
}

impl ContractInvocation {
    fn new(contract: &str, function: ContractFunction, args: impl Serialize) -> Self {
        Self {
            contract_name: contract.to_string(),
            function,
            args: serde_json::to_value(args).expect("argument types encode"),
        }
    }

    pub fn create_record(record: ScientificRecord) -> Self {
        Self::new(CONTRACT_NAME, ContractFunction::CreateRecord, CreateRecordArgs { record })
    }

    pub fn update_record(id: &str, changes: BTreeMap<String, Value>) -> Self {
        Self::new(CONTRACT_NAME, ContractFunction::UpdateRecord, UpdateRecordArgs { id: id.into(), changes })
    }

    pub fn read_record(id: &str) -> Self {
        Self::new(CONTRACT_NAME, ContractFunction::ReadRecord, RecordIdArgs { id: id.into() })
    }

    pub fn record_exists(id: &str) -> Self {
        Self::new(CONTRACT_NAME, ContractFunction::RecordExists, RecordIdArgs { id: id.into() })
    }

    pub fn lifecycle(operation: &str, sequence: u64) -> Self {
        Self::new(
            LIFECYCLE_CONTRACT,
            ContractFunction::LifecycleOp,
            LifecycleArgs { operation: operation.into(), chaincode: CONTRACT_NAME.into(), sequence },
        )
    }

    pub fn to_payload(&self) -> Vec<u8> {
        canonical_encode(self)
    }

    pub fn from_payload(bytes: &[u8]) -> Result<Self, ContractError> {
        serde_json::from_slice(bytes).map_err(|e| ContractError::BadArguments(e.to_string()))
    }

    pub fn is_record_invocation(&self) -> bool {
        self.contract_name == CONTRACT_NAME
    }

    fn args<T: serde::de::DeserializeOwned>(&self) -> Result<T, ContractError> {
        serde_json::from_value(self.args.clone()).map_err(|e| ContractError::BadArguments(e.to_string()))
    }
}

/// Committed records keyed by id.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WorldState {
    entries: BTreeMap<String, ScientificRecord>,
}

impl WorldState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &BTreeMap<String, ScientificRecord> {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// SHA-256 of the canonical encoding of all entries, recomputed on demand.
    pub fn state_digest(&self) -> Digest {
        sha256_digest(&canonical_encode(&self.entries))
    }
}

/// What a successful invocation does to the world state.
#[derive(Debug, Clone, PartialEq)]
pub enum Effect {
    Put(Box<ScientificRecord>),
    None,
}

fn authorize(invoker: &Certificate, function: ContractFunction) -> Result<(), ContractError> {
    if is_permitted(invoker.role, function) {
        Ok(())
    } else {
        Err(ContractError::PermissionDenied { role: invoker.role, function })
    }
}

fn plan_create(state: &WorldState, invoker: &Certificate, record: ScientificRecord) -> Result<Effect, ContractError> {
    authorize(invoker, ContractFunction::CreateRecord)?;
    record.validate().map_err(ContractError::SchemaViolation)?;
    if state.entries.contains_key(&record.id) {
        return Err(ContractError::DuplicateId(record.id));
    }
    Ok(Effect::Put(Box::new(record)))
}

fn plan_update(
    state: &WorldState,
    invoker: &Certificate,
    id: &str,
    changes: &BTreeMap<String, Value>,
) -> Result<Effect, ContractError> {
    authorize(invoker, ContractFunction::UpdateRecord)?;
    let current = state.entries.get(id).ok_or_else(|| ContractError::NotFound(id.to_string()))?;
    let Value::Object(mut fields) = serde_json::to_value(current).expect("records encode") else {
        unreachable!("records encode as objects")
    };
    for (name, value) in changes {
        if IMMUTABLE_FIELDS.contains(&name.as_str()) {
            return Err(ContractError::ImmutableField(name.clone()));
        }
        if !MUTABLE_FIELDS.contains(&name.as_str()) {
            return Err(ContractError::SchemaViolation(SchemaViolation::new(name.clone(), "unknown field")));
        }
        if value.is_null() {
            fields.remove(name);
        } else {
            fields.insert(name.clone(), value.clone());
        }
    }
    let updated: ScientificRecord = serde_json::from_value(Value::Object(fields))
        .map_err(|e| ContractError::SchemaViolation(SchemaViolation::new("changes", e.to_string())))?;
    updated.validate().map_err(ContractError::SchemaViolation)?;
    Ok(Effect::Put(Box::new(updated)))
}

/// Evaluates an invocation against `state` without changing it.
pub fn plan_invocation(
    state: &WorldState,
    invoker: &Certificate,
    invocation: &ContractInvocation,
) -> Result<Effect, ContractError> {
    match (invocation.contract_name.as_str(), invocation.function) {
        (CONTRACT_NAME, ContractFunction::CreateRecord) => {
            let args: CreateRecordArgs = invocation.args()?;
            plan_create(state, invoker, args.record)
        }
        (CONTRACT_NAME, ContractFunction::UpdateRecord) => {
            let args: UpdateRecordArgs = invocation.args()?;
            plan_update(state, invoker, &args.id, &args.changes)
        }
        (CONTRACT_NAME, ContractFunction::ReadRecord) => {
            authorize(invoker, ContractFunction::ReadRecord)?;
            let args: RecordIdArgs = invocation.args()?;
            read_record(state, &args.id).map(|_| Effect::None)
        }
        (CONTRACT_NAME, ContractFunction::RecordExists) => {
            authorize(invoker, ContractFunction::RecordExists)?;
            let _: RecordIdArgs = invocation.args()?;
            Ok(Effect::None)
        }
        (LIFECYCLE_CONTRACT, ContractFunction::LifecycleOp) => {
            authorize(invoker, ContractFunction::LifecycleOp)?;
            let _: LifecycleArgs = invocation.args()?;
            Ok(Effect::None)
        }
        (CONTRACT_NAME | LIFECYCLE_CONTRACT, f) => {
            Err(ContractError::BadArguments(format!("{f:?} is not offered by {}", invocation.contract_name)))
        }
        (other, _) => Err(ContractError::UnknownContract(other.to_string())),
    }
}

fn commit(state: &mut WorldState, effect: Effect) {
    if let Effect::Put(record) = effect {
        state.entries.insert(record.id.clone(), *record);
    }
}

pub fn create_record(
    state: &mut WorldState,
    invoker: &Certificate,
    record: ScientificRecord,
) -> Result<(), ContractError> {
    let effect = plan_create(state, invoker, record)?;
    commit(state, effect);
    Ok(())
}

pub fn update_record(
    state: &mut WorldState,
    invoker: &Certificate,
    id: &str,
    changes: &BTreeMap<String, Value>,
) -> Result<(), ContractError> {
    let effect = plan_update(state, invoker, id, changes)?;
    commit(state, effect);
    Ok(())
}

pub fn read_record<'a>(state: &'a WorldState, id: &str) -> Result<&'a ScientificRecord, ContractError> {
    state.entries.get(id).ok_or_else(|| ContractError::NotFound(id.to_string()))
}

pub fn record_exists(state: &WorldState, id: &str) -> bool {
    state.entries.contains_key(id)
}

/// Why an envelope was flagged invalid at commit.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
pub enum InvalidReason {
    #[error("creator {0:?} is not a member")]
    UnknownCreator(String),
    #[error("tx_id does not match creator and nonce")]
    TxIdMismatch,
    #[error("creator signature invalid")]
    CreatorSignature,
    #[error("endorsement by {0:?} invalid")]
    Endorsement(String),
    #[error("{have} endorsements, policy requires {need}")]
    EndorsementPolicy { have: u32, need: u32 },
    #[error(transparent)]
    Contract(#[from] ContractError),
}

/// Signature and policy checks for an envelope; returns the creator's certificate.
pub fn check_envelope_signatures<'d>(
    envelope: &TransactionEnvelope,
    directory: &'d MembershipDirectory,
    policy: &EndorsementPolicy,
) -> Result<&'d Certificate, InvalidReason> {
    let header = &envelope.header;
    let creator =
        directory.resolve(&header.creator).ok_or_else(|| InvalidReason::UnknownCreator(header.creator.clone()))?;
    if header.tx_id != TransactionHeader::compute_tx_id(&header.creator, &header.nonce) {
        return Err(InvalidReason::TxIdMismatch);
    }
    let content = envelope.signed_content();
    if !verify_signature(&creator.public_key, &content, &envelope.creator_signature) {
        return Err(InvalidReason::CreatorSignature);
    }
    let mut endorsers = std::collections::BTreeSet::new();
    for e in &envelope.endorsements {
        let valid = directory
            .resolve(&e.endorser)
            .filter(|c| c.role.may_endorse())
            .is_some_and(|c| verify_signature(&c.public_key, &content, &e.signature));
        if !valid {
            return Err(InvalidReason::Endorsement(e.endorser.clone()));
        }
        endorsers.insert(e.endorser.as_str());
    }
    let have = endorsers.len() as u32;
    if have < policy.required {
        return Err(InvalidReason::EndorsementPolicy { have, need: policy.required });
    }
    Ok(creator)
}

/// Commit-time validation and application of one envelope. State changes only
/// when the envelope is valid.
pub fn validate_envelope(
    state: &mut WorldState,
    envelope: &TransactionEnvelope,
    directory: &MembershipDirectory,
    policy: &EndorsementPolicy,
) -> Result<(), InvalidReason> {
    let creator = check_envelope_signatures(envelope, directory, policy)?;
    let invocation = ContractInvocation::from_payload(&envelope.payload)?;
    let effect = plan_invocation(state, creator, &invocation)?;
    commit(state, effect);
    Ok(())
}

/// Returns the validity flag; invalid envelopes are flagged, never thrown.
pub fn apply_envelope(
    state: &mut WorldState,
    envelope: &TransactionEnvelope,
    directory: &MembershipDirectory,
    policy: &EndorsementPolicy,
) -> bool {
    validate_envelope(state, envelope, directory, policy).is_ok()
}

#[cfg(test)]
mod tests {
    use super::record::tests::sample;
    use super::*;
    use crate::identity::{create_ca, issue_certificate, Identity, KeyPair};
    use crate::ledger::{signed_content, Endorsement, Nonce};
    use serde_json::json;

    struct Net {
        dir: MembershipDirectory,
        ids: BTreeMap<String, Identity>,
    }

    fn net() -> Net {
        let (ca, ca_keys) = create_ca("OrgUIS", &[0; 32]).unwrap();
        let mut dir = MembershipDirectory::with_root(&ca, &ca_keys);
        let mut ids = BTreeMap::new();
        let mut add = |name: &str, role: Role, seed: u8| {
            let keys = KeyPair::from_seed(&[seed; 32]);
            let cert = issue_certificate(&ca_keys, &ca.name, name, "OrgUIS", role, keys.public_key().clone()).unwrap();
            dir.add_certificate(cert.clone()).unwrap();
            ids.insert(name.to_string(), Identity { certificate: cert, keys });
        };
        add("collab", Role::Collaborator, 1);
        add("admin", Role::Admin, 2);
        add("orderer", Role::Orderer, 3);
        for i in 0..5 {
            add(&format!("peer{i}"), Role::Peer, 10 + i);
        }
        Net { dir, ids }
    }

    fn envelope(
        net: &Net,
        creator: &str,
        inv: &ContractInvocation,
        endorsers: usize,
        nonce: u8,
    ) -> TransactionEnvelope {
        let header = TransactionHeader::new(creator, "ch", 1, Nonce([nonce; 16]));
        let payload = inv.to_payload();
        let content = signed_content(&header, &payload);
        let endorsements = (0..endorsers)
            .map(|i| {
                let p = &net.ids[&format!("peer{i}")];
                Endorsement { endorser: p.name().into(), signature: p.sign(&content) }
            })
            .collect();
        TransactionEnvelope { creator_signature: net.ids[creator].sign(&content), header, payload, endorsements }
    }

    fn cert<'a>(net: &'a Net, name: &str) -> &'a Certificate {
        &net.ids[name].certificate
    }

    #[test]
    fn create_read_exists() {
        let n = net();
        let mut s = WorldState::new();
        assert!(!record_exists(&s, "a"));
        let r = sample("a", Level::L0);
        create_record(&mut s, cert(&n, "collab"), r.clone()).unwrap();
        assert_eq!(read_record(&s, "a").unwrap(), &r);
        assert!(record_exists(&s, "a"));
        assert_eq!(create_record(&mut s, cert(&n, "collab"), r.clone()), Err(ContractError::DuplicateId("a".into())));
        assert!(matches!(
            create_record(&mut s, cert(&n, "peer0"), sample("b", Level::L0)),
            Err(ContractError::PermissionDenied { role: Role::Peer, .. })
        ));
        assert_eq!(read_record(&s, "zz"), Err(ContractError::NotFound("zz".into())));
    }

    #[test]
    fn update_touches_only_listed_fields() {
        let n = net();
        let mut s = WorldState::new();
        create_record(&mut s, cert(&n, "admin"), sample("a", Level::L1)).unwrap();
        let before = read_record(&s, "a").unwrap().clone();
        let changes = BTreeMap::from([("access_url".to_string(), json!("https://new"))]);
        update_record(&mut s, cert(&n, "collab"), "a", &changes).unwrap();
        let after = read_record(&s, "a").unwrap();
        assert_eq!(after.access_url, "https://new");
        assert_eq!(ScientificRecord { access_url: before.access_url.clone(), ..after.clone() }, before);

        let immut = BTreeMap::from([("record_type".to_string(), json!("L2"))]);
        assert_eq!(
            update_record(&mut s, cert(&n, "collab"), "a", &immut),
            Err(ContractError::ImmutableField("record_type".into()))
        );
        assert_eq!(
            update_record(&mut s, cert(&n, "collab"), "nope", &changes),
            Err(ContractError::NotFound("nope".into()))
        );
        let bad = BTreeMap::from([("orcid".to_string(), json!("bad"))]);
        let digest = s.state_digest();
        assert!(matches!(update_record(&mut s, cert(&n, "collab"), "a", &bad), Err(ContractError::SchemaViolation(_))));
        assert_eq!(s.state_digest(), digest);
    }

    #[test]
    fn read_after_updates_matches_replay() {
        let n = net();
        let mut s = WorldState::new();
        let mut oracle = sample("a", Level::L0);
        create_record(&mut s, cert(&n, "collab"), oracle.clone()).unwrap();
        for (i, name) in ["Grace", "Hedy"].iter().enumerate() {
            let changes = BTreeMap::from([
                ("collaborator_name".to_string(), json!(name)),
                ("metadata".to_string(), json!({"rev": i.to_string()})),
            ]);
            update_record(&mut s, cert(&n, "collab"), "a", &changes).unwrap();
            oracle.collaborator_name = name.to_string();
            oracle.metadata = [("rev".to_string(), i.to_string())].into();
        }
        assert_eq!(read_record(&s, "a").unwrap(), &oracle);
    }

    #[test]
    fn permission_table_is_complete() {
        let n = net();
        let names =
            [("collab", Role::Collaborator), ("peer0", Role::Peer), ("orderer", Role::Orderer), ("admin", Role::Admin)];
        for (name, role) in names {
            for f in ContractFunction::ALL {
                let mut s = WorldState::new();
                create_record(&mut s, cert(&n, "admin"), sample("seed", Level::L0)).unwrap();
                let inv = match f {
                    ContractFunction::CreateRecord => ContractInvocation::create_record(sample("new", Level::L0)),
                    ContractFunction::UpdateRecord => ContractInvocation::update_record(
                        "seed",
                        BTreeMap::from([("site_name".to_string(), json!("riobamba"))]),
                    ),
                    ContractFunction::ReadRecord => ContractInvocation::read_record("seed"),
                    ContractFunction::RecordExists => ContractInvocation::record_exists("seed"),
                    ContractFunction::LifecycleOp => ContractInvocation::lifecycle("approve", 1),
                };
                let outcome = plan_invocation(&s, cert(&n, name), &inv);
                assert_eq!(outcome.is_ok(), is_permitted(role, f), "{role} {f:?}: {outcome:?}");
                let mutates = matches!(outcome, Ok(Effect::Put(_)));
                assert!(!mutates || role.may_write_records());
            }
        }
    }

    #[test]
    fn policy_threshold() {
        let n = net();
        let policy = EndorsementPolicy::default();
        let inv = ContractInvocation::create_record(sample("a", Level::L0));

        let mut s = WorldState::new();
        let digest = s.state_digest();
        let three = envelope(&n, "collab", &inv, 3, 1);
        assert!(!apply_envelope(&mut s, &three, &n.dir, &policy));
        assert_eq!(s.state_digest(), digest);
        assert_eq!(
            validate_envelope(&mut s, &three, &n.dir, &policy),
            Err(InvalidReason::EndorsementPolicy { have: 3, need: 4 })
        );

        let four = envelope(&n, "collab", &inv, 4, 2);
        assert!(apply_envelope(&mut s, &four, &n.dir, &policy));
        assert!(record_exists(&s, "a"));
    }

    #[test]
    fn duplicate_endorsers_count_once() {
        let n = net();
        let inv = ContractInvocation::create_record(sample("a", Level::L0));
        let mut env = envelope(&n, "collab", &inv, 3, 1);
        env.endorsements.push(env.endorsements[0].clone());
        assert_eq!(
            validate_envelope(&mut WorldState::new(), &env, &n.dir, &EndorsementPolicy::default()),
            Err(InvalidReason::EndorsementPolicy { have: 3, need: 4 })
        );
    }

    #[test]
    fn mutated_payload_is_rejected() {
        let n = net();
        let inv = ContractInvocation::create_record(sample("a", Level::L0));
        let mut env = envelope(&n, "collab", &inv, 4, 1);
        let pos = env.payload.len() / 2;
        env.payload[pos] ^= 0x01;
        let mut s = WorldState::new();
        assert_eq!(
            validate_envelope(&mut s, &env, &n.dir, &EndorsementPolicy::default()),
            Err(InvalidReason::CreatorSignature)
        );
        assert!(s.is_empty());
    }

    #[test]
    fn endorsement_from_non_peer_is_invalid() {
        let n = net();
        let inv = ContractInvocation::create_record(sample("a", Level::L0));
        let mut env = envelope(&n, "collab", &inv, 4, 1);
        let content = env.signed_content();
        env.endorsements[3] = Endorsement { endorser: "orderer".into(), signature: n.ids["orderer"].sign(&content) };
        assert_eq!(
            validate_envelope(&mut WorldState::new(), &env, &n.dir, &EndorsementPolicy::default()),
            Err(InvalidReason::Endorsement("orderer".into()))
        );
    }

    #[test]
    fn lifecycle_changes_no_state() {
        let n = net();
        let mut s = WorldState::new();
        let env = envelope(&n, "admin", &ContractInvocation::lifecycle("commit", 1), 4, 1);
        assert!(apply_envelope(&mut s, &env, &n.dir, &EndorsementPolicy::default()));
        assert!(s.is_empty());
        let by_collab = envelope(&n, "collab", &ContractInvocation::lifecycle("commit", 1), 4, 2);
        assert!(!apply_envelope(&mut s, &by_collab, &n.dir, &EndorsementPolicy::default()));
    }

    #[test]
    fn replay_is_deterministic() {
        let n = net();
        let policy = EndorsementPolicy::default();
        let envs: Vec<_> = (0..6)
            .map(|i| {
                let inv = ContractInvocation::create_record(sample(&format!("r{}", i % 4), Level::L0));
                envelope(&n, "collab", &inv, 4 - (i as usize % 2), i)
            })
            .collect();
        let run = || {
            let mut s = WorldState::new();
            let flags: Vec<bool> = envs.iter().map(|e| apply_envelope(&mut s, e, &n.dir, &policy)).collect();
            (flags, s.state_digest())
        };
        assert_eq!(run(), run());
    }
}
