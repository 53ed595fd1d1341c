//! Reproducible corpus: synthetic LAGO-like records, the reference workload,
//! fault schedules, a golden ledger, and a seeded tamper manifest.
//!
//! Record field distributions: sites alternate between the two
//! organizations in seeded order (215 each); levels are L0 35%, L1 25%,
//! L2 12%, L3 8%, and S0-S3 5% each; off-chain file sizes are uniform in
//! 1-64 KiB; acquisition dates fall in 2023.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{Duration, NaiveDate};
use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

use crate::codec::{canonical_encode, sha256_digest};
use crate::contract::{dmp_id, DataKind, DataPointer, Level, ScientificRecord};
use crate::ledger::BlockStore;
use crate::peernet::{
    admin_name, collaborator_name, run_scenario, FaultAction, FaultEvent, FaultSchedule, Network, ScenarioConfig,
    ScenarioError, ScenarioReport, Workload, WorkloadAction, WorkloadItem, LEADER_TARGET,
};
use crate::verifier::{select_random_targets, tamper_bytes, MutationRule, TamperError, TamperRecord};

pub const FIXTURE_VERSION: &str = "v1";
pub const DEFAULT_SEED: u64 = 2024;
pub const RECORD_COUNT: usize = 430;
pub const LIFECYCLE_OPERATIONS: [&str; 4] = ["install", "approve_for_org", "approve_for_org", "commit"];
pub const TAMPER_K: usize = 13;
/// Off-chain files written alongside the fixtures for `check-offchain`.
pub const SAMPLE_OFFCHAIN_FILES: usize = 3;

const FIRST_RECORD_AT_MS: u64 = 5_000;
const BURST_SPACING_MS: u64 = 200;
const BURST_GAP_MS: (u64, u64) = (15_000, 22_500);

#[derive(Debug, thiserror::Error)]
pub enum FixtureError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Tamper(#[from] TamperError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TamperManifest {
    pub seed: u64,
    pub k: usize,
    pub entries: Vec<TamperRecord>,
}

#[derive(Debug, Clone)]
pub struct FixtureSet {
    pub seed: u64,
    pub config: ScenarioConfig,
    pub records: Vec<ScientificRecord>,
    pub workload: Workload,
    pub lifecycle_count: usize,
    pub schedules: BTreeMap<String, FaultSchedule>,
    pub certificates: Vec<u8>,
    pub golden_ledger: BlockStore,
    pub golden_report: ScenarioReport,
    pub tamper_manifest: TamperManifest,
}

fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(sha256_digest(format!("fixtures/{seed}/{label}").as_bytes()).0)
}

/// ISO 7064 MOD 11-2 check character over the first 15 digits.
pub fn orcid_check_char(digits: &[u8; 15]) -> char {
    let total = digits.iter().fold(0u32, |acc, d| (acc + u32::from(*d)) * 2);
    match (12 - total % 11) % 11 {
        10 => 'X',
        r => char::from_digit(r, 10).expect("below 10"),
    }
}

fn orcid(rng: &mut ChaCha8Rng) -> String {
    let mut digits = [0u8; 15];
    digits[7] = rng.gen_range(1..4);
    for d in digits.iter_mut().skip(8) {
        *d = rng.gen_range(0..10);
    }
    let mut s: String = digits.iter().map(|d| char::from(b'0' + d)).collect();
    s.push(orcid_check_char(&digits));
    format!("{}-{}-{}-{}", &s[0..4], &s[4..8], &s[8..12], &s[12..16])
}

/// Deterministic bytes of the off-chain file behind a record's raw data.
pub fn offchain_bytes(seed: u64, record_id: &str, size: u64) -> Vec<u8> {
    let mut rng = rng_for(seed, &format!("offchain/{record_id}"));
    let mut bytes = vec![0u8; size as usize];
    rng.fill_bytes(&mut bytes);
    bytes
}

fn pointer(seed: u64, id: &str, suffix: &str, size: u64, site: &str) -> DataPointer {
    let name = format!("{id}{suffix}");
    DataPointer {
        content_hash: hex::encode(Sha256::digest(offchain_bytes(seed, &name, size))),
        location: format!("onedata://lago/{site}/{name}.dat"),
        size_bytes: size,
    }
}

fn pick_level(rng: &mut ChaCha8Rng) -> Level {
    const WEIGHTS: [(Level, u32); 8] = [
        (Level::L0, 35),
        (Level::L1, 25),
        (Level::L2, 12),
        (Level::L3, 8),
        (Level::S0, 5),
        (Level::S1, 5),
        (Level::S2, 5),
        (Level::S3, 5),
    ];
    let mut roll = rng.gen_range(0..100);
    for (level, w) in WEIGHTS {
        if roll < w {
            return level;
        }
        roll -= w;
    }
    unreachable!("weights sum to 100")
}

/// The synthetic records, split evenly across the organizations' sites.
pub fn generate_records(seed: u64, config: &ScenarioConfig) -> Vec<ScientificRecord> {
    let mut rng = rng_for(seed, "records");
    let orgs = &config.organizations;
    let mut sites: Vec<usize> = (0..RECORD_COUNT).map(|i| i % orgs.len()).collect();
    sites.shuffle(&mut rng);
    let collaborators: Vec<(String, String)> =
        orgs.iter().map(|_| (format!("{:04}", rng.gen_range(0..10_000)), orcid(&mut rng))).collect();
    let start = NaiveDate::from_ymd_opt(2023, 1, 1).expect("valid date");
    let mut records = Vec::with_capacity(RECORD_COUNT);
    for (n, org_index) in sites.into_iter().enumerate() {
        let org = &orgs[org_index];
        let level = pick_level(&mut rng);
        let date = start + Duration::days(rng.gen_range(0..365));
        let id = dmp_id(level, &org.site, date, &format!("{:08x}", rng.next_u32()));
        let size = rng.gen_range(1024..=65_536);
        let station = format!("{}-wcd-{:02}", org.site, rng.gen_range(1..4));
        let mut metadata: BTreeMap<String, String> = BTreeMap::new();
        metadata.insert("station".into(), station);
        metadata.insert("start_utc".into(), format!("{}T{:02}:00:00Z", date, rng.gen_range(0..24)));
        metadata.insert("duration_s".into(), (3600 * rng.gen_range(1..13)).to_string());
        metadata.insert("sequence".into(), n.to_string());
        let simulation = level.kind() == DataKind::Simulation;
        if simulation {
            metadata.insert("generator".into(), "corsika-arti".into());
        } else {
            metadata.insert("altitude_m".into(), if org.site == "riobamba" { "2754" } else { "956" }.into());
        }
        let (input_data, input_metadata, output_data, output_metadata) = if simulation {
            let showers = rng.gen_range(1..100) * 10_000;
            (
                Some(pointer(seed, &id, ".in", rng.gen_range(512..=4096), &org.site)),
                Some(BTreeMap::from([("showers".to_string(), showers.to_string())])),
                Some(pointer(seed, &id, ".out", rng.gen_range(1024..=65_536), &org.site)),
                Some(BTreeMap::from([("format".to_string(), "hdf5".to_string())])),
            )
        } else {
            (None, None, None, None)
        };
        let (collab_tag, orcid) = &collaborators[org_index];
        records.push(ScientificRecord {
            raw_data: pointer(seed, &id, "", size, &org.site),
            access_url: format!("https://datahub.lago.example/{}/{id}", org.site),
            id,
            record_type: level,
            metadata,
            input_data,
            input_metadata,
            output_data,
            output_metadata,
            site_name: org.site.clone(),
            collaborator_name: format!("collaborator-{collab_tag}.{}", org.name),
            orcid: orcid.clone(),
        });
    }
    records
}

/// Four lifecycle envelopes at one-second intervals, then the records in
/// seeded bursts of 1-4 submissions separated by 15-22.5 s gaps, which puts
/// the whole run at roughly 54 simulated minutes.
pub fn reference_workload(seed: u64, config: &ScenarioConfig, records: &[ScientificRecord]) -> Workload {
    let admin = admin_name(&config.organizations[0].name);
    let mut items: Vec<WorkloadItem> = LIFECYCLE_OPERATIONS
        .iter()
        .enumerate()
        .map(|(i, op)| WorkloadItem {
            at_ms: i as u64 * 1000,
            creator: admin.clone(),
            action: WorkloadAction::Lifecycle { operation: (*op).into(), sequence: 1 },
        })
        .collect();
    let mut rng = rng_for(seed, "workload");
    let mut at = FIRST_RECORD_AT_MS;
    let mut queue = records.iter();
    'bursts: loop {
        let burst = rng.gen_range(1..=4);
        for j in 0..burst {
            let Some(record) = queue.next() else { break 'bursts };
            let org = config
                .organizations
                .iter()
                .find(|o| o.site == record.site_name)
                .expect("record site belongs to an organization");
            items.push(WorkloadItem {
                at_ms: at + j * BURST_SPACING_MS,
                creator: collaborator_name(&org.name),
                action: WorkloadAction::CreateRecord { record: Box::new(record.clone()) },
            });
        }
        at += rng.gen_range(BURST_GAP_MS.0..=BURST_GAP_MS.1);
    }
    Workload { items }
}

/// Named fault schedules: `leader-crash`, `peer-corrupt`, `partition`.
pub fn fault_schedules(config: &ScenarioConfig) -> BTreeMap<String, FaultSchedule> {
    let event = |at_ms, target: &str, action| FaultEvent { at_ms, target: target.into(), action };
    let corrupt_target = crate::peernet::peer_name(&config.organizations[0].name, 1);
    BTreeMap::from([
        (
            "leader-crash".to_string(),
            FaultSchedule {
                events: vec![
                    event(600_000, LEADER_TARGET, FaultAction::Crash),
                    event(660_000, LEADER_TARGET, FaultAction::Restart),
                ],
            },
        ),
        (
            "peer-corrupt".to_string(),
            FaultSchedule { events: vec![event(900_000, &corrupt_target, FaultAction::CorruptLedger)] },
        ),
        (
            "partition".to_string(),
            FaultSchedule {
                events: vec![
                    event(1_200_000, LEADER_TARGET, FaultAction::PartitionOn),
                    event(1_230_000, LEADER_TARGET, FaultAction::PartitionOff),
                ],
            },
        ),
    ])
}

/// Builds the whole fixture set, including a fault-free golden run.
pub fn generate_fixtures(seed: u64) -> Result<FixtureSet, FixtureError> {
    let config = ScenarioConfig { seed, ..ScenarioConfig::default() };
    let records = generate_records(seed, &config);
    let workload = reference_workload(seed, &config, &records);
    let (golden_report, golden_ledger) = run_scenario(&config, &workload, &FaultSchedule::none())?;
    let certificates = Network::bootstrap(&config).map_err(ScenarioError::from)?.directory.bundle_bytes();
    let bytes = golden_ledger.to_bytes();
    let targets = select_random_targets(&bytes, TAMPER_K, seed)?;
    let (_, entries) = tamper_bytes(&bytes, &targets, &MutationRule::Auto, seed)?;
    Ok(FixtureSet {
        seed,
        schedules: fault_schedules(&config),
        lifecycle_count: LIFECYCLE_OPERATIONS.len(),
        config,
        records,
        workload,
        certificates,
        golden_ledger,
        golden_report,
        tamper_manifest: TamperManifest { seed, k: TAMPER_K, entries },
    })
}

fn json_file<T: Serialize>(value: &T) -> Vec<u8> {
    let mut bytes = canonical_encode(value);
    bytes.push(b'\n');
    bytes
}

impl FixtureSet {
    /// Every fixture file as (relative path, bytes), sorted by path, without
    /// the checksum file.
    pub fn files(&self) -> Vec<(String, Vec<u8>)> {
        let mut files = vec![
            ("network.json".to_string(), json_file(&self.config)),
            ("records.json".to_string(), json_file(&self.records)),
            ("workload.json".to_string(), json_file(&self.workload)),
            ("certs.jsonl".to_string(), self.certificates.clone()),
            ("golden-ledger.jsonl".to_string(), self.golden_ledger.to_bytes()),
            ("golden-report.json".to_string(), json_file(&self.golden_report)),
            (format!("tamper-k{}.json", self.tamper_manifest.k), json_file(&self.tamper_manifest)),
        ];
        for (name, schedule) in &self.schedules {
            files.push((format!("faults-{name}.json"), json_file(schedule)));
        }
        for record in self.records.iter().take(SAMPLE_OFFCHAIN_FILES) {
            files.push((
                format!("offchain/{}.dat", record.id),
                offchain_bytes(self.seed, &record.id, record.raw_data.size_bytes),
            ));
        }
        files.sort();
        files
    }

    /// `sha256sum`-compatible listing of [`FixtureSet::files`].
    pub fn checksums(&self) -> String {
        self.files().iter().map(|(name, bytes)| format!("{}  {name}\n", hex::encode(Sha256::digest(bytes)))).collect()
    }

    /// Writes the files and `SHA256SUMS` under `dir`; returns the paths written.
    pub fn write(&self, dir: &Path) -> Result<Vec<PathBuf>, FixtureError> {
        let mut written = Vec::new();
        let mut files = self.files();
        files.push(("SHA256SUMS".to_string(), self.checksums().into_bytes()));
        for (name, bytes) in files {
            let path = dir.join(&name);
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            std::fs::write(&path, bytes)?;
            written.push(path);
        }
        Ok(written)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orcid_check_digit_matches_published_example() {
        // 0000-0002-1825-0097 is the ORCID documentation's sample identifier.
        assert_eq!(orcid_check_char(&[0, 0, 0, 0, 0, 0, 0, 2, 1, 8, 2, 5, 0, 0, 9]), '7');
        assert_eq!(orcid_check_char(&[0, 0, 0, 0, 0, 0, 0, 2, 1, 6, 9, 4, 2, 3, 3]), 'X');
    }

    #[test]
    fn records_are_valid_unique_and_split_across_sites() {
        let config = ScenarioConfig::default();
        let records = generate_records(7, &config);
        assert_eq!(records.len(), RECORD_COUNT);
        for r in &records {
            r.validate().unwrap();
        }
        let ids: std::collections::BTreeSet<_> = records.iter().map(|r| &r.id).collect();
        assert_eq!(ids.len(), RECORD_COUNT);
        let uis = records.iter().filter(|r| r.site_name == "bucaramanga").count();
        let espoch = records.iter().filter(|r| r.site_name == "riobamba").count();
        assert_eq!((uis, espoch), (215, 215));
        assert_eq!(generate_records(7, &config), records);
    }

    #[test]
    fn workload_span_gives_about_eight_per_minute() {
        let config = ScenarioConfig::default();
        let records = generate_records(DEFAULT_SEED, &config);
        let workload = reference_workload(DEFAULT_SEED, &config, &records);
        workload.validate().unwrap();
        assert_eq!(workload.items.len(), RECORD_COUNT + 4);
        let span_min = workload.items.last().unwrap().at_ms as f64 / 60_000.0;
        let rate = workload.items.len() as f64 / span_min;
        assert!((7.0..=9.0).contains(&rate), "{rate} tx/min over {span_min} min");
    }

    #[test]
    fn offchain_bytes_hash_to_the_recorded_pointer() {
        let config = ScenarioConfig::default();
        let r = &generate_records(3, &config)[0];
        let bytes = offchain_bytes(3, &r.id, r.raw_data.size_bytes);
        assert_eq!(hex::encode(Sha256::digest(&bytes)), r.raw_data.content_hash);
    }
}
