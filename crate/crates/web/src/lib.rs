//! WebAssembly bindings behind `www/index.html`. Each export returns a
//! canonical-JSON string so the page only needs `JSON.parse`.

use std::collections::BTreeMap;

use serde::Serialize;
use sha2::{Digest as _, Sha256};
use wasm_bindgen::prelude::wasm_bindgen;

use ledgerlab::codec::canonical_encode;
use ledgerlab::fixtures::generate_records;
use ledgerlab::ordering::{LeaderRecord, OrderingCluster};
use ledgerlab::peernet::{
    collaborator_name, run_scenario, FaultSchedule, Network, ScenarioConfig, Workload, WorkloadAction, WorkloadItem,
};
use ledgerlab::verifier::{
    select_random_targets, tamper_bytes, verify_ledger_bytes, IntegrityReport, MutationRule, Verdict, VerifyMode,
};

fn to_json<T: Serialize>(value: &T) -> String {
    String::from_utf8(canonical_encode(value)).expect("canonical JSON is UTF-8")
}

#[wasm_bindgen]
pub fn sha256_hex(input: &str) -> String {
    hex::encode(Sha256::digest(input.as_bytes()))
}

#[derive(Serialize)]
struct VerifySummary {
    verdict: Verdict,
    signatures_checked: u64,
    signatures_failed: u64,
    violations_by_kind: BTreeMap<String, usize>,
    flagged_blocks: Vec<u64>,
}

impl From<&IntegrityReport> for VerifySummary {
    fn from(r: &IntegrityReport) -> Self {
        let mut violations_by_kind = BTreeMap::new();
        for v in &r.violations {
            *violations_by_kind.entry(format!("{:?}", v.kind)).or_insert(0) += 1;
        }
        Self {
            verdict: r.verdict,
            signatures_checked: r.signatures_checked,
            signatures_failed: r.signatures_failed,
            violations_by_kind,
            flagged_blocks: r.flagged_blocks().into_iter().collect(),
        }
    }
}

#[derive(Serialize)]
struct TamperDemo {
    blocks: u64,
    transactions: u64,
    before: VerifySummary,
    edits: Vec<(u64, String)>,
    after: VerifySummary,
}

/// Commits `records` synthetic records on a fault-free network, tampers `k`
/// of them in distinct blocks, and verifies before and after.
#[wasm_bindgen]
pub fn run_tamper_demo(seed: u32, records: u32, k: u32) -> Result<String, String> {
    let config = ScenarioConfig { seed: u64::from(seed), ..ScenarioConfig::default() };
    let items = generate_records(config.seed, &config)
        .into_iter()
        .take(records as usize)
        .enumerate()
        .map(|(i, record)| {
            let org = config.organizations.iter().find(|o| o.site == record.site_name).expect("known site");
            WorkloadItem {
                at_ms: 1_000 + i as u64 * 2_500,
                creator: collaborator_name(&org.name),
                action: WorkloadAction::CreateRecord { record: Box::new(record) },
            }
        })
        .collect();
    let (report, ledger) =
        run_scenario(&config, &Workload { items }, &FaultSchedule::none()).map_err(|e| e.to_string())?;
    let directory = Network::bootstrap(&config).map_err(|e| e.to_string())?.directory;
    let bytes = ledger.to_bytes();
    let before = verify_ledger_bytes(&bytes, &directory, VerifyMode::Strict).map_err(|e| e.to_string())?;
    let targets = select_random_targets(&bytes, k as usize, config.seed).map_err(|e| e.to_string())?;
    let (tampered, manifest) =
        tamper_bytes(&bytes, &targets, &MutationRule::Auto, config.seed).map_err(|e| e.to_string())?;
    let after = verify_ledger_bytes(&tampered, &directory, VerifyMode::Strict).map_err(|e| e.to_string())?;
    Ok(to_json(&TamperDemo {
        blocks: report.blocks_committed,
        transactions: report.transactions_total,
        before: (&before).into(),
        edits: manifest.into_iter().map(|m| (m.block_number, m.field_path)).collect(),
        after: (&after).into(),
    }))
}

#[derive(Serialize)]
struct ElectionDemo {
    crashed: Option<String>,
    leaders: Vec<LeaderRecord>,
    safety_violations: Vec<String>,
}

/// Elects a leader among three orderers, crashes it at `crash_at_ms`, and
/// runs on until `until_ms`.
#[wasm_bindgen]
pub fn run_election_demo(seed: u32, crash_at_ms: u32, until_ms: u32) -> Result<String, String> {
    let config = ScenarioConfig { seed: u64::from(seed), ..ScenarioConfig::default() };
    let network = Network::bootstrap(&config).map_err(|e| e.to_string())?;
    let base = (0, network.genesis.digest());
    let mut cluster = OrderingCluster::new(
        config.ordering.clone(),
        network.orderer_identities(),
        network.directory.clone(),
        base,
        config.seed,
    )
    .map_err(|e| e.to_string())?;
    cluster.set_latency(config.latency_min_ms, config.latency_max_ms);
    cluster.run_until(u64::from(crash_at_ms));
    let crashed = cluster.leader().map(str::to_string);
    if let Some(id) = &crashed {
        cluster.crash(id).map_err(|e| e.to_string())?;
    }
    cluster.run_until(u64::from(until_ms.max(crash_at_ms)));
    Ok(to_json(&ElectionDemo {
        crashed,
        leaders: cluster.leader_history().to_vec(),
        safety_violations: cluster.safety_violations().to_vec(),
    }))
}
