//! The checked-in fixtures under `fixtures/v1` must be exactly what the
//! generator produces for the default seed.

use std::path::PathBuf;

use sha2::{Digest as _, Sha256};

use ledgerlab::fixtures::{generate_fixtures, DEFAULT_SEED};
use ledgerlab::identity::MembershipDirectory;
use ledgerlab::ledger::BlockStore;
use ledgerlab::verifier::{verify_ledger_bytes, Verdict, VerifyMode};

const GOLDEN_LEDGER_SHA256: &str = "c72ec34843d88202cf5fbcd1f55c3690e3afa7bfb7124283062d6aca951a4278";
const GENESIS_HEADER_DIGEST: &str = "522ad5eb12d577f654a1cc382821d14a47b15c25e526ffc760bb596fde4df025";
const HEAD_HEADER_DIGEST: &str = "201673e4b3a6a7a2b62476d2b719698eddc8a08f6dec1046b47f72d6a3c63e3e";

fn dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/v1")
}

#[test]
fn regenerated_fixtures_are_byte_identical() {
    let set = generate_fixtures(DEFAULT_SEED).unwrap();
    for (name, bytes) in set.files() {
        let on_disk = std::fs::read(dir().join(&name)).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(on_disk == bytes, "{name} differs from the generator output");
    }
    let sums = std::fs::read_to_string(dir().join("SHA256SUMS")).unwrap();
    assert_eq!(sums, set.checksums());
    for line in sums.lines() {
        let (digest, name) = line.split_once("  ").unwrap();
        assert_eq!(hex::encode(Sha256::digest(std::fs::read(dir().join(name)).unwrap())), digest, "{name}");
    }
}

#[test]
fn golden_ledger_is_pinned_and_intact() {
    let bytes = std::fs::read(dir().join("golden-ledger.jsonl")).unwrap();
    assert_eq!(hex::encode(Sha256::digest(&bytes)), GOLDEN_LEDGER_SHA256);
    let store = BlockStore::from_bytes(&bytes).unwrap();
    assert_eq!(store.blocks()[0].digest().to_hex(), GENESIS_HEADER_DIGEST);
    assert_eq!(store.head_digest().unwrap().to_hex(), HEAD_HEADER_DIGEST);
    assert!(store.is_continuous());

    let bundle = std::fs::read_to_string(dir().join("certs.jsonl")).unwrap();
    let directory = MembershipDirectory::from_bundle(&bundle).unwrap();
    for mode in [VerifyMode::Paper, VerifyMode::Strict] {
        let report = verify_ledger_bytes(&bytes, &directory, mode).unwrap();
        assert_eq!(report.verdict, Verdict::Intact, "{mode:?}: {:?}", report.violations);
        // Genesis plus 174 committed blocks.
        assert_eq!(report.blocks_checked, 175);
    }
}
