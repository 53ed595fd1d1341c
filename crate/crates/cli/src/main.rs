//! `ledgerlab`: drive the simulated permissioned ledger from the shell.
//!
//! Every file read or written is canonical JSON (JSON Lines for ledgers and
//! certificate bundles). `verify` exits 0 when the ledger is intact, 1 when
//! it was tampered with, and 2 on usage or I/O errors; other commands use 2
//! for errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

use ledgerlab::codec::canonical_encode;
use ledgerlab::contract::{read_record, ContractInvocation, ScientificRecord};
use ledgerlab::fixtures::{self, generate_fixtures};
use ledgerlab::gateway::{self, GatewayConfig, IdentityFile};
use ledgerlab::identity::MembershipDirectory;
use ledgerlab::ledger::BlockStore;
use ledgerlab::peernet::{
    collaborator_name, run_scenario, FaultSchedule, Network, ScenarioConfig, Simulation, Workload,
};
use ledgerlab::verifier::{
    apply_manifest, select_random_targets, tamper_bytes, verify_ledger_range, MutationRule, TamperTarget, Verdict,
    VerifyMode,
};

#[derive(Parser)]
#[command(name = "ledgerlab", version, about = "Permissioned ledger simulator for scientific data integrity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate CAs, identities, certificates and the genesis ledger.
    Init(InitArgs),
    /// Run a workload under a fault schedule and emit the scenario report.
    RunScenario(RunArgs),
    /// Submit one record through the gateway and append it to the ledger.
    Submit(SubmitArgs),
    /// Validate a records file, optionally submitting every record.
    Ingest(IngestArgs),
    /// Look up a record in the world state replayed from a ledger.
    Query(QueryArgs),
    /// Audit a ledger file and emit the integrity report.
    Verify(VerifyArgs),
    /// Edit committed transactions in a ledger file without fixing hashes.
    Tamper(TamperArgs),
    /// Block, transaction and throughput counts of a ledger file.
    Stats(StatsArgs),
    /// Compare an off-chain file against the hash its record committed.
    CheckOffchain(OffchainArgs),
    /// Regenerate the versioned fixture corpus.
    GenFixtures(GenFixturesArgs),
}

#[derive(Args)]
struct InitArgs {
    /// Output directory.
    #[arg(long, default_value = "net")]
    dir: PathBuf,
    #[arg(long, env = "LEDGERLAB_SEED")]
    seed: Option<u64>,
    /// Start from this scenario config instead of the default topology.
    #[arg(long)]
    network: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    /// Scenario config (network.json); defaults to the reference topology.
    #[arg(long)]
    network: Option<PathBuf>,
    /// Workload file; defaults to the reference workload for the seed.
    #[arg(long)]
    workload: Option<PathBuf>,
    #[arg(long)]
    faults: Option<PathBuf>,
    #[arg(long, env = "LEDGERLAB_SEED")]
    seed: Option<u64>,
    /// Where to write the resulting ledger.
    #[arg(long)]
    ledger_out: Option<PathBuf>,
    /// Where to write the report; stdout when omitted.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct GatewayArgs {
    /// Gateway config; network.json and ledger.jsonl are looked up next to it.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args)]
struct SubmitArgs {
    #[command(flatten)]
    gateway: GatewayArgs,
    /// File holding one ScientificRecord.
    record: PathBuf,
}

#[derive(Args)]
struct IngestArgs {
    /// JSON array of ScientificRecords.
    records: PathBuf,
    /// Gateway config; when given, every validated record is submitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    network: Option<PathBuf>,
    #[arg(long)]
    ledger: Option<PathBuf>,
}

#[derive(Args)]
struct LedgerArgs {
    #[arg(long, default_value = "net/ledger.jsonl")]
    ledger: PathBuf,
    /// Certificate bundle; defaults to certs.jsonl next to the ledger.
    #[arg(long)]
    certs: Option<PathBuf>,
}

#[derive(Args)]
struct QueryArgs {
    id: String,
    #[command(flatten)]
    ledger: LedgerArgs,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    ledger: LedgerArgs,
    #[arg(long, default_value = "strict")]
    mode: VerifyMode,
    /// Check content and signatures only from this block on; linkage is
    /// always checked across the whole file.
    #[arg(long, default_value_t = 0)]
    from_block: u64,
    #[arg(long, default_value_t = u64::MAX, hide_default_value = true)]
    to_block: u64,
    /// Where to write the report; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TamperArgs {
    /// Ledger file to read.
    ledger: PathBuf,
    /// Output file; the input is edited in place when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Tamper `k` randomly chosen record transactions in distinct blocks.
    #[arg(long, conflicts_with_all = ["block", "manifest"])]
    k: Option<usize>,
    #[arg(long, env = "LEDGERLAB_SEED", default_value_t = fixtures::DEFAULT_SEED)]
    seed: u64,
    /// Block of a single explicit target.
    #[arg(long, requires = "field", conflicts_with = "manifest")]
    block: Option<u64>,
    /// Envelope index in the block; omit for block-level fields.
    #[arg(long, requires = "block")]
    tx: Option<usize>,
    /// Dot-separated field path, e.g. payload.args.record.raw_data.content_hash.
    #[arg(long, requires = "block")]
    field: Option<String>,
    /// JSON value to write instead of the automatic mutation.
    #[arg(long, requires = "block")]
    value: Option<String>,
    /// Replay an existing manifest.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Where to write the manifest; stdout when omitted.
    #[arg(long)]
    manifest_out: Option<PathBuf>,
}

#[derive(Args)]
struct StatsArgs {
    #[arg(long, default_value = "net/ledger.jsonl")]
    ledger: PathBuf,
    /// Emit canonical JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct OffchainArgs {
    /// Id of the committed record.
    id: String,
    /// Local copy of the record's raw data file.
    file: PathBuf,
    #[command(flatten)]
    ledger: LedgerArgs,
}

#[derive(Args)]
struct GenFixturesArgs {
    #[arg(long, default_value = "fixtures/v1")]
    out: PathBuf,
    #[arg(long, env = "LEDGERLAB_SEED", default_value_t = fixtures::DEFAULT_SEED)]
    seed: u64,
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn json_line<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = canonical_encode(value);
    out.push(b'\n');
    out
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, json_line(value)).with_context(|| format!("writing {}", path.display()))
}

/// Writes to `path`, or to stdout when `None`.
fn emit<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    match path {
        Some(p) => write_json(p, value),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&json_line(value))?;
            Ok(())
        }
    }
}

fn sibling(base: &Path, name: &str) -> PathBuf {
    base.parent().unwrap_or(Path::new(".")).join(name)
}

fn load_directory(ledger: &LedgerArgs) -> Result<MembershipDirectory> {
    let path = ledger.certs.clone().unwrap_or_else(|| sibling(&ledger.ledger, "certs.jsonl"));
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    Ok(MembershipDirectory::from_bundle(&text)?)
}

fn load_store(path: &Path) -> Result<BlockStore> {
    BlockStore::read_file(path).with_context(|| format!("reading ledger {}", path.display()))
}

fn init(args: InitArgs) -> Result<()> {
    let mut config: ScenarioConfig = match &args.network {
        Some(p) => read_json(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let network = Network::bootstrap(&config)?;
    let dir = &args.dir;
    std::fs::create_dir_all(dir.join("identities"))?;
    write_json(&dir.join("network.json"), &config)?;
    std::fs::write(dir.join("certs.jsonl"), network.directory.bundle_bytes())?;
    for (name, identity) in &network.identities {
        write_json(&dir.join("identities").join(format!("{name}.json")), &IdentityFile::from_identity(identity))?;
    }
    let mut store = BlockStore::new(ledgerlab::identity::SCHEME_ID, &config.channel);
    store.append_block(network.genesis.clone())?;
    store.write_file(&dir.join("ledger.jsonl"))?;
    let submitter = collaborator_name(&config.organizations[0].name);
    let gateway = GatewayConfig {
        identity: PathBuf::from("identities").join(format!("{submitter}.json")),
        channel: config.channel.clone(),
        peers: network.peers.iter().map(|p| p.peer_id.clone()).collect(),
        orderers: network.orderers.clone(),
        endorsements_per_org: config.endorsements_per_org,
        poll_interval_ms: 1000,
    };
    write_json(&dir.join("gateway.json"), &gateway)?;
    println!(
        "initialised {} identities, genesis {} in {}",
        network.identities.len(),
        store.head_digest().expect("genesis").to_hex(),
        dir.display()
    );
    Ok(())
}

fn run(args: RunArgs) -> Result<()> {
    let mut config: ScenarioConfig = match &args.network {
        Some(p) => read_json(p)?,
        None => ScenarioConfig::default(),
    };
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    let workload: Workload = match &args.workload {
        Some(p) => read_json(p)?,
        None => {
            let records = fixtures::generate_records(config.seed, &config);
            fixtures::reference_workload(config.seed, &config, &records)
        }
    };
    let faults: FaultSchedule = match &args.faults {
        Some(p) => read_json(p)?,
        None => FaultSchedule::none(),
    };
    let (report, ledger) = run_scenario(&config, &workload, &faults)?;
    if let Some(path) = &args.ledger_out {
        ledger.write_file(path)?;
    }
    emit(args.report_out.as_deref(), &report)
}

/// The simulation behind a gateway config, with the ledger replayed into it.
struct Session {
    sim: Simulation,
    creator: String,
    ledger_path: PathBuf,
}

fn open_session(config_path: &Path, network: Option<&Path>, ledger: Option<&Path>) -> Result<Session> {
    let gateway: GatewayConfig = read_json(config_path)?;
    let network_path = network.map(Path::to_path_buf).unwrap_or_else(|| sibling(config_path, "network.json"));
    let ledger_path = ledger.map(Path::to_path_buf).unwrap_or_else(|| sibling(config_path, "ledger.jsonl"));
    let scenario: ScenarioConfig = read_json(&network_path)?;
    let identity_path = if gateway.identity.is_absolute() {
        gateway.identity.clone()
    } else {
        sibling(config_path, "").join(&gateway.identity)
    };
    let identity = read_json::<IdentityFile>(&identity_path)?.into_identity()?;
    if gateway.channel != scenario.channel {
        bail!("gateway channel {} does not match network channel {}", gateway.channel, scenario.channel);
    }
    gateway.validate(scenario.organizations.len(), &scenario.endorsement_policy)?;
    let store = load_store(&ledger_path)?;
    let sim = Simulation::resume(&scenario, &store)?;
    let known = sim.network.identity(identity.name());
    if known.map(|k| &k.certificate) != Some(&identity.certificate) {
        bail!("identity {} is not part of this network", identity.name());
    }
    for name in gateway.peers.iter().chain(&gateway.orderers) {
        if sim.network.identity(name).is_none() {
            bail!("gateway endpoint {name} is not a node of this network");
        }
    }
    Ok(Session { sim, creator: identity.name().to_string(), ledger_path })
}

fn submit_all(session: &mut Session, records: Vec<ScientificRecord>) -> Result<()> {
    let mut result = Ok(());
    for record in records {
        match session.sim.submit(&session.creator, ContractInvocation::create_record(record)) {
            Ok(receipt) => println!("{}", String::from_utf8(canonical_encode(&receipt))?),
            Err(e) => {
                result = Err(e.into());
                break;
            }
        }
    }
    session.sim.ledger().write_file(&session.ledger_path)?;
    result
}

fn submit(args: SubmitArgs) -> Result<()> {
    let record: ScientificRecord = read_json(&args.record)?;
    record.validate()?;
    let g = &args.gateway;
    let mut session = open_session(&g.config, g.network.as_deref(), g.ledger.as_deref())?;
    submit_all(&mut session, vec![record])
}

fn ingest(args: IngestArgs) -> Result<()> {
    let records = gateway::ingest_records(&args.records)?;
    match &args.config {
        None => {
            println!("{} valid records", records.len());
            Ok(())
        }
        Some(config) => {
            let mut session = open_session(config, args.network.as_deref(), args.ledger.as_deref())?;
            submit_all(&mut session, records)
        }
    }
}

fn query(args: QueryArgs) -> Result<()> {
    let directory = load_directory(&args.ledger)?;
    let store = load_store(&args.ledger.ledger)?;
    let state = gateway::world_state(&store, &directory)?;
    emit(None, read_record(&state, &args.id)?)
}

fn verify(args: VerifyArgs) -> Result<ExitCode> {
    let directory = load_directory(&args.ledger)?;
    let bytes =
        std::fs::read(&args.ledger.ledger).with_context(|| format!("reading {}", args.ledger.ledger.display()))?;
    let report = verify_ledger_range(&bytes, &directory, args.mode, args.from_block..=args.to_block)?;
    emit(args.out.as_deref(), &report)?;
    Ok(match report.verdict {
        Verdict::Intact => ExitCode::SUCCESS,
        Verdict::Tampered => ExitCode::from(1),
    })
}

fn tamper(args: TamperArgs) -> Result<()> {
    let bytes = std::fs::read(&args.ledger).with_context(|| format!("reading {}", args.ledger.display()))?;
    let (tampered, manifest) = if let Some(path) = &args.manifest {
        let manifest: fixtures::TamperManifest = read_json(path)?;
        (apply_manifest(&bytes, &manifest.entries)?, manifest)
    } else {
        let (targets, k) = match (args.k, args.block) {
            (Some(k), None) => (select_random_targets(&bytes, k, args.seed)?, k),
            (None, Some(block_number)) => {
                let field_path = args.field.clone().expect("clap requires --field");
                (vec![TamperTarget { block_number, tx_index: args.tx, field_path }], 1)
            }
            _ => bail!("give one of --k, --block/--field, or --manifest"),
        };
        let rule = match &args.value {
            Some(v) => MutationRule::Set(serde_json::from_str(v).context("--value must be JSON")?),
            None => MutationRule::Auto,
        };
        let (tampered, entries) = tamper_bytes(&bytes, &targets, &rule, args.seed)?;
        (tampered, fixtures::TamperManifest { seed: args.seed, k, entries })
    };
    let out = args.out.as_ref().unwrap_or(&args.ledger);
    std::fs::write(out, tampered).with_context(|| format!("writing {}", out.display()))?;
    emit(args.manifest_out.as_deref(), &manifest)
}

fn stats(args: StatsArgs) -> Result<()> {
    let store = load_store(&args.ledger)?;
    let s = gateway::stats(&store)?;
    if args.json {
        return emit(None, &s);
    }
    println!("blocks:                {}", s.block_count);
    println!("transactions:          {}", s.transaction_count);
    println!("contract invocations:  {}", s.contract_invocation_count);
    println!("valid transactions:    {}", s.valid_transaction_count);
    match s.transactions_per_minute {
        Some(rate) => println!("transactions/minute:   {rate:.2}"),
        None => println!("transactions/minute:   n/a (single timestamp)"),
    }
    Ok(())
}

fn check_offchain(args: OffchainArgs) -> Result<ExitCode> {
    let directory = load_directory(&args.ledger)?;
    let store = load_store(&args.ledger.ledger)?;
    let state = gateway::world_state(&store, &directory)?;
    let record = read_record(&state, &args.id)?;
    let matches = gateway::check_offchain(record, &args.file)?;
    println!("{matches}");
    Ok(if matches { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn gen_fixtures(args: GenFixturesArgs) -> Result<()> {
    let set = generate_fixtures(args.seed)?;
    let written = set.write(&args.out)?;
    println!("wrote {} files to {}", written.len(), args.out.display());
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::from_env("LEDGERLAB_LOG"))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Init(a) => init(a).map(|()| ExitCode::SUCCESS),
        Command::RunScenario(a) => run(a).map(|()| ExitCode::SUCCESS),
        Command::Submit(a) => submit(a).map(|()| ExitCode::SUCCESS),
        Command::Ingest(a) => ingest(a).map(|()| ExitCode::SUCCESS),
        Command::Query(a) => query(a).map(|()| ExitCode::SUCCESS),
        Command::Verify(a) => verify(a),
        Command::Tamper(a) => tamper(a).map(|()| ExitCode::SUCCESS),
        Command::Stats(a) => stats(a).map(|()| ExitCode::SUCCESS),
        Command::CheckOffchain(a) => check_offchain(a),
        Command::GenFixtures(a) => gen_fixtures(a).map(|()| ExitCode::SUCCESS),
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(2)
    })
}
