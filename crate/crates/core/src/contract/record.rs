use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{self, Read};
use std::path::Path;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// Processing level. `L*` are measurements, `S*` simulations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L0,
    L1,
    L2,
    L3,
    S0,
    S1,
    S2,
    S3,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DataKind {
    Measurement,
    Simulation,
}

impl Level {
    pub const ALL: [Level; 8] =
        [Level::L0, Level::L1, Level::L2, Level::L3, Level::S0, Level::S1, Level::S2, Level::S3];

    pub fn kind(self) -> DataKind {
        match self {
            Level::L0 | Level::L1 | Level::L2 | Level::L3 => DataKind::Measurement,
            _ => DataKind::Simulation,
        }
    }
}

impl fmt::Display for Level {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

/// Hash and location of an off-chain file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPointer {
    pub content_hash: String,
    pub location: String,
    pub size_bytes: u64,
}

impl DataPointer {
    fn check(&self, field: &str) -> Result<(), SchemaViolation> {
        let ok =
            self.content_hash.len() == 64 && self.content_hash.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f'));
        if ok {
            Ok(())
        } else {
            Err(SchemaViolation::new(
                format!("{field}.content_hash"),
                format!("must be 64 lowercase hex characters, got {} characters", self.content_hash.len()),
            ))
        }
    }
}

pub type Metadata = BTreeMap<String, String>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScientificRecord {
    pub id: String,
    pub record_type: Level,
    pub metadata: Metadata,
    pub raw_data: DataPointer,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_data: Option<DataPointer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_metadata: Option<Metadata>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_data: Option<DataPointer>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_metadata: Option<Metadata>,
    pub site_name: String,
    pub collaborator_name: String,
    pub orcid: String,
    pub access_url: String,
}

/// Field names a record update may touch.
pub const MUTABLE_FIELDS: [&str; 10] = [
    "metadata",
    "raw_data",
    "input_data",
    "input_metadata",
    "output_data",
    "output_metadata",
    "site_name",
    "collaborator_name",
    "orcid",
    "access_url",
];

pub const IMMUTABLE_FIELDS: [&str; 2] = ["id", "record_type"];

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[error("{field}: {reason}")]
pub struct SchemaViolation {
    pub field: String,
    pub reason: String,
}

impl SchemaViolation {
    pub fn new(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Self { field: field.into(), reason: reason.into() }
    }
}

/// `NNNN-NNNN-NNNN-NNN[0-9X]`.
pub fn is_orcid(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 19
        && b.iter().enumerate().all(|(i, c)| match i {
            4 | 9 | 14 => *c == b'-',
            18 => c.is_ascii_digit() || *c == b'X',
            _ => c.is_ascii_digit(),
        })
}

impl ScientificRecord {
    /// Checks every record invariant, reporting the first one that fails.
    pub fn validate(&self) -> Result<(), SchemaViolation> {
        if self.id.trim().is_empty() {
            return Err(SchemaViolation::new("id", "must not be empty"));
        }
        if !is_orcid(&self.orcid) {
            return Err(SchemaViolation::new(
                "orcid",
                format!("{:?} does not match NNNN-NNNN-NNNN-NNN[0-9X]", self.orcid),
            ));
        }
        self.raw_data.check("raw_data")?;
        if let Some(p) = &self.input_data {
            p.check("input_data")?;
        }
        if let Some(p) = &self.output_data {
            p.check("output_data")?;
        }
        if self.record_type.kind() == DataKind::Simulation {
            if self.input_data.is_none() {
                return Err(SchemaViolation::new("input_data", "simulation records must carry input data"));
            }
            if self.output_data.is_none() {
                return Err(SchemaViolation::new("output_data", "simulation records must carry output data"));
            }
        }
        Ok(())
    }
}

/// Record id in the adopted DMP-style form
/// `<level>_<site>_<YYYYMMDD>_<8-hex discriminator>`.
pub fn dmp_id(level: Level, site_name: &str, date: NaiveDate, discriminator: &str) -> String {
    format!("{level}_{site_name}_{}_{discriminator}", date.format("%Y%m%d"))
}

/// SHA-256 of a local file, streamed.
pub fn hash_data_file(path: &Path, location: impl Into<String>) -> io::Result<DataPointer> {
    let mut file = File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 64 * 1024];
    let mut size = 0u64;
    loop {
        let n = file.read(&mut buf)?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        size += n as u64;
    }
    Ok(DataPointer { content_hash: hex::encode(hasher.finalize()), location: location.into(), size_bytes: size })
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use std::io::Write;

    pub(crate) fn pointer(seed: u8) -> DataPointer {
        DataPointer {
            content_hash: format!("{seed:02x}").repeat(32),
            location: format!("lago://data/{seed}"),
            size_bytes: 1024,
        }
    }

    pub(crate) fn sample(id: &str, level: Level) -> ScientificRecord {
        let sim = level.kind() == DataKind::Simulation;
        ScientificRecord {
            id: id.to_string(),
            record_type: level,
            metadata: [("detector".to_string(), "wcd-01".to_string())].into(),
            raw_data: pointer(1),
            input_data: sim.then(|| pointer(2)),
            input_metadata: None,
            output_data: sim.then(|| pointer(3)),
            output_metadata: None,
            site_name: "bucaramanga".into(),
            collaborator_name: "Ada".into(),
            orcid: "0000-0002-1825-009X".into(),
            access_url: "https://example.org/lago".into(),
        }
    }

    #[test]
    fn valid_records_pass() {
        sample("L0_x", Level::L0).validate().unwrap();
        sample("S1_x", Level::S1).validate().unwrap();
    }

    #[test]
    fn each_invariant_is_named() {
        let mut r = sample("", Level::L0);
        assert_eq!(r.validate().unwrap_err().field, "id");
        r.id = "a".into();
        r.orcid = "0000-0002-1825-00".into();
        assert_eq!(r.validate().unwrap_err().field, "orcid");
        r.orcid = "0000-0002-1825-0097".into();
        r.raw_data.content_hash.pop();
        let err = r.validate().unwrap_err();
        assert_eq!(err.field, "raw_data.content_hash");
        assert!(err.reason.contains("63"));
        r.raw_data.content_hash = "A".repeat(64);
        assert_eq!(r.validate().unwrap_err().field, "raw_data.content_hash");

        let mut s = sample("s", Level::S0);
        s.output_data = None;
        assert_eq!(s.validate().unwrap_err().field, "output_data");
        s.input_data = None;
        assert_eq!(s.validate().unwrap_err().field, "input_data");
    }

    #[test]
    fn orcid_pattern() {
        assert!(is_orcid("0000-0003-4575-5899"));
        assert!(is_orcid("0000-0002-1825-009X"));
        assert!(!is_orcid("0000-0002-1825-009x"));
        assert!(!is_orcid("000000021825009X000"));
        assert!(!is_orcid("0000-0002-1825-0097 "));
    }

    #[test]
    fn dmp_id_format() {
        let d = NaiveDate::from_ymd_opt(2024, 1, 15).unwrap();
        assert_eq!(dmp_id(Level::L0, "bucaramanga", d, "a1b2c3d4"), "L0_bucaramanga_20240115_a1b2c3d4");
    }

    #[test]
    fn optional_fields_are_omitted() {
        let json = String::from_utf8(crate::codec::canonical_encode(&sample("x", Level::L1))).unwrap();
        assert!(!json.contains("input_data"));
        let back: ScientificRecord = serde_json::from_str(&json).unwrap();
        assert_eq!(back, sample("x", Level::L1));
    }

    #[test]
    fn file_hashing() {
        let dir = tempfile::tempdir().unwrap();
        let empty = dir.path().join("empty.bin");
        File::create(&empty).unwrap();
        let p = hash_data_file(&empty, "empty.bin").unwrap();
        assert_eq!(p.content_hash, "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
        assert_eq!(p.size_bytes, 0);
        assert_eq!(hash_data_file(&empty, "empty.bin").unwrap(), p);

        File::options().append(true).open(&empty).unwrap().write_all(&[0]).unwrap();
        let q = hash_data_file(&empty, "empty.bin").unwrap();
        assert_ne!(q.content_hash, p.content_hash);
        assert_eq!(q.size_bytes, 1);
        assert!(hash_data_file(&dir.path().join("missing"), "m").is_err());
    }
}
