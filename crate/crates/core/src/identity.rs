//! Membership service: key pairs, per-organization certificate authorities,
//! simplified certificates, and the directory every signature check resolves
//! signers through.

use std::collections::BTreeMap;
use std::fmt;

use k256::ecdsa::signature::{Signer, Verifier};
use k256::ecdsa::{Signature as EcdsaSignature, SigningKey, VerifyingKey};
use serde::{Deserialize, Serialize};

use crate::codec::{self, canonical_encode, sha256_digest, Digest};

/// Self-description written into every ledger file header.
pub const SCHEME_ID: &str = "ecdsa-secp256k1-sha256";

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum IdentityError {
    #[error("{0} must not be empty")]
    EmptyName(&'static str),
    #[error("no CA root registered for organization {0:?}")]
    UnknownOrganization(String),
    #[error("certificate for {0:?} does not verify under its organization's CA root")]
    BadCertificate(String),
    #[error("bundle line {line}: {reason}")]
    Bundle { line: usize, reason: String },
}

/// SEC1-compressed public key bytes.
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PublicKey(#[serde(with = "codec::hex_bytes")] pub Vec<u8>);

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({})", hex::encode(&self.0))
    }
}

/// Fixed-width `r || s` signature bytes.
#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct Signature(#[serde(with = "codec::hex_bytes")] pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({})", hex::encode(&self.0))
    }
}

#[derive(Clone)]
pub struct KeyPair {
    signing: SigningKey,
    public: PublicKey,
}

impl KeyPair {
    /// Derives a key pair from a 32-byte seed. The same seed always yields the
    /// same pair.
    pub fn from_seed(seed: &[u8; 32]) -> Self {
        for counter in 0u32.. {
            let mut material = Vec::with_capacity(52);
            material.extend_from_slice(b"ledgerlab/key/v1");
            material.extend_from_slice(seed);
            material.extend_from_slice(&counter.to_be_bytes());
            let candidate = sha256_digest(&material);
            // Rejects zero and values >= the group order; retry with the next counter.
            if let Ok(signing) = SigningKey::from_bytes(&candidate.0.into()) {
                return Self::from_signing_key(signing);
            }
        }
        unreachable!("scalar derivation exhausted")
    }

    /// Fresh key pair from operating-system entropy.
    #[cfg(feature = "os-rng")]
    pub fn generate() -> Self {
        Self::from_seed(&rand::random::<[u8; 32]>())
    }

    pub fn from_private_key(bytes: &[u8]) -> Option<Self> {
        SigningKey::from_slice(bytes).ok().map(Self::from_signing_key)
    }

    fn from_signing_key(signing: SigningKey) -> Self {
        let point = signing.verifying_key().to_encoded_point(true);
        let public = PublicKey(point.as_bytes().to_vec());
        Self { signing, public }
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.public
    }

    pub fn private_key_bytes(&self) -> Vec<u8> {
        self.signing.to_bytes().to_vec()
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        sign(self, message)
    }
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

/// ECDSA signature over the SHA-256 digest of `message`.
pub fn sign(key: &KeyPair, message: &[u8]) -> Signature {
    let sig: EcdsaSignature = key.signing.sign(message);
    Signature(sig.to_bytes().to_vec())
}

/// Total: malformed keys or signatures yield `false`, never a panic.
pub fn verify_signature(public_key: &PublicKey, message: &[u8], signature: &Signature) -> bool {
    let Ok(key) = VerifyingKey::from_sec1_bytes(&public_key.0) else {
        return false;
    };
    let Ok(sig) = EcdsaSignature::from_slice(&signature.0) else {
        return false;
    };
    key.verify(message, &sig).is_ok()
}

/// Derives a child seed for a named identity from a scenario master seed.
pub fn derive_seed(master: &[u8; 32], label: &str) -> [u8; 32] {
    let mut material = master.to_vec();
    material.extend_from_slice(label.as_bytes());
    sha256_digest(&material).0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Collaborator,
    Peer,
    Orderer,
    Admin,
}

impl Role {
    pub const ALL: [Role; 4] = [Role::Collaborator, Role::Peer, Role::Orderer, Role::Admin];

    pub fn may_write_records(self) -> bool {
        matches!(self, Role::Collaborator | Role::Admin)
    }

    pub fn may_endorse(self) -> bool {
        self == Role::Peer
    }

    pub fn may_sign_blocks(self) -> bool {
        self == Role::Orderer
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Role::Collaborator => "collaborator",
            Role::Peer => "peer",
            Role::Orderer => "orderer",
            Role::Admin => "admin",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertificateAuthority {
    pub name: String,
    pub organization: String,
    pub public_key: PublicKey,
}

impl CertificateAuthority {
    /// The CA's self-signed root certificate, as carried in certificate bundles.
    pub fn root_certificate(&self, keys: &KeyPair) -> Certificate {
        issue_certificate(keys, &self.name, &self.name, &self.organization, Role::Admin, self.public_key.clone())
            .expect("CA name is non-empty")
    }
}

/// Creates the certificate authority for `org_name`. Deterministic in `seed`.
pub fn create_ca(org_name: &str, seed: &[u8; 32]) -> Result<(CertificateAuthority, KeyPair), IdentityError> {
    if org_name.is_empty() {
        return Err(IdentityError::EmptyName("organization name"));
    }
    let keys = KeyPair::from_seed(seed);
    let ca = CertificateAuthority {
        name: format!("ca.{org_name}"),
        organization: org_name.to_string(),
        public_key: keys.public_key().clone(),
    };
    Ok((ca, keys))
}

/// The signed portion of a certificate.
#[derive(Serialize)]
struct CertificateBody<'a> {
    subject_name: &'a str,
    organization: &'a str,
    role: Role,
    public_key: &'a PublicKey,
    issuer: &'a str,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Certificate {
    pub subject_name: String,
    pub organization: String,
    pub role: Role,
    pub public_key: PublicKey,
    pub issuer: String,
    pub issuer_signature: Signature,
}

impl Certificate {
    pub fn body_bytes(&self) -> Vec<u8> {
        canonical_encode(&CertificateBody {
            subject_name: &self.subject_name,
            organization: &self.organization,
            role: self.role,
            public_key: &self.public_key,
            issuer: &self.issuer,
        })
    }

    fn is_self_signed(&self) -> bool {
        self.subject_name == self.issuer
    }
}

pub fn issue_certificate(
    ca_key: &KeyPair,
    issuer: &str,
    subject_name: &str,
    organization: &str,
    role: Role,
    public_key: PublicKey,
) -> Result<Certificate, IdentityError> {
    if subject_name.is_empty() {
        return Err(IdentityError::EmptyName("subject name"));
    }
    let mut cert = Certificate {
        subject_name: subject_name.to_string(),
        organization: organization.to_string(),
        role,
        public_key,
        issuer: issuer.to_string(),
        issuer_signature: Signature::default(),
    };
    cert.issuer_signature = ca_key.sign(&cert.body_bytes());
    Ok(cert)
}

/// True iff the issuer signature verifies under `roots[cert.organization]`.
pub fn verify_certificate(cert: &Certificate, roots: &BTreeMap<String, PublicKey>) -> bool {
    roots.get(&cert.organization).is_some_and(|root| verify_signature(root, &cert.body_bytes(), &cert.issuer_signature))
}

/// A certificate together with its private key.
#[derive(Debug, Clone)]
pub struct Identity {
    pub certificate: Certificate,
    pub keys: KeyPair,
}

impl Identity {
    pub fn name(&self) -> &str {
        &self.certificate.subject_name
    }

    pub fn role(&self) -> Role {
        self.certificate.role
    }

    pub fn sign(&self, message: &[u8]) -> Signature {
        self.keys.sign(message)
    }
}

/// CA roots and issued certificates. Append-only; every stored certificate
/// was verified against its organization's root when it was added.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct MembershipDirectory {
    ca_roots: BTreeMap<String, PublicKey>,
    certificates: BTreeMap<String, Certificate>,
    root_certificates: BTreeMap<String, Certificate>,
}

impl MembershipDirectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_root(ca: &CertificateAuthority, ca_keys: &KeyPair) -> Self {
        let mut dir = Self::new();
        dir.add_root(ca, ca_keys);
        dir
    }

    pub fn add_root(&mut self, ca: &CertificateAuthority, ca_keys: &KeyPair) {
        self.ca_roots.insert(ca.organization.clone(), ca.public_key.clone());
        self.root_certificates.insert(ca.organization.clone(), ca.root_certificate(ca_keys));
    }

    pub fn add_certificate(&mut self, cert: Certificate) -> Result<(), IdentityError> {
        if !self.ca_roots.contains_key(&cert.organization) {
            return Err(IdentityError::UnknownOrganization(cert.organization));
        }
        if !verify_certificate(&cert, &self.ca_roots) {
            return Err(IdentityError::BadCertificate(cert.subject_name));
        }
        self.certificates.insert(cert.subject_name.clone(), cert);
        Ok(())
    }

    pub fn ca_roots(&self) -> &BTreeMap<String, PublicKey> {
        &self.ca_roots
    }

    pub fn certificates(&self) -> &BTreeMap<String, Certificate> {
        &self.certificates
    }

    pub fn get(&self, subject_name: &str) -> Option<&Certificate> {
        self.certificates.get(subject_name)
    }

    /// Resolves a signer. Certificates are chain-checked on insertion and the
    /// directory is append-only, so lookup needs no re-verification.
    pub fn resolve(&self, subject_name: &str) -> Option<&Certificate> {
        self.get(subject_name)
    }

    /// Certificate bundle: root certificates first, then issued certificates,
    /// one canonical-JSON object per line.
    pub fn bundle_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for cert in self.root_certificates.values().chain(self.certificates.values()) {
            out.extend_from_slice(&canonical_encode(cert));
            out.push(b'\n');
        }
        out
    }

    pub fn bundle_digest(&self) -> Digest {
        sha256_digest(&self.bundle_bytes())
    }

    /// Parses a bundle. Self-signed lines become CA roots.
    pub fn from_bundle(text: &str) -> Result<Self, IdentityError> {
        let mut dir = Self::new();
        let mut issued = Vec::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let cert: Certificate =
                serde_json::from_str(line).map_err(|e| IdentityError::Bundle { line: i + 1, reason: e.to_string() })?;
            if cert.is_self_signed() {
                if !verify_signature(&cert.public_key, &cert.body_bytes(), &cert.issuer_signature) {
                    return Err(IdentityError::BadCertificate(cert.subject_name));
                }
                dir.ca_roots.insert(cert.organization.clone(), cert.public_key.clone());
                dir.root_certificates.insert(cert.organization.clone(), cert);
            } else {
                issued.push(cert);
            }
        }
        for cert in issued {
            dir.add_certificate(cert)?;
        }
        Ok(dir)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn seed(b: u8) -> [u8; 32] {
        [b; 32]
    }

    #[test]
    fn ca_creation_is_deterministic() {
        let (a, _) = create_ca("OrgUIS", &seed(0)).unwrap();
        let (b, _) = create_ca("OrgUIS", &seed(0)).unwrap();
        let (c, _) = create_ca("OrgESPOCH", &seed(1)).unwrap();
        assert_eq!(a.public_key, b.public_key);
        assert_ne!(a.public_key, c.public_key);
        assert_eq!(create_ca("", &seed(0)).unwrap_err(), IdentityError::EmptyName("organization name"));
        let dir = MembershipDirectory::with_root(&a, &KeyPair::from_seed(&seed(0)));
        assert_eq!(dir.ca_roots()["OrgUIS"], a.public_key);
    }

    #[test]
    fn certificate_verifies_only_under_its_root() {
        let (uis, uis_keys) = create_ca("OrgUIS", &seed(0)).unwrap();
        let (espoch, _) = create_ca("OrgESPOCH", &seed(1)).unwrap();
        let subject = KeyPair::from_seed(&seed(9));
        let cert = issue_certificate(
            &uis_keys,
            &uis.name,
            "alice",
            "OrgUIS",
            Role::Collaborator,
            subject.public_key().clone(),
        )
        .unwrap();

        let mut roots = BTreeMap::new();
        roots.insert("OrgUIS".to_string(), uis.public_key.clone());
        assert!(verify_certificate(&cert, &roots));

        let mut tampered = cert.clone();
        tampered.organization.replace_range(0..1, "X");
        roots.insert(tampered.organization.clone(), uis.public_key.clone());
        assert!(!verify_certificate(&tampered, &roots));

        let mut wrong = BTreeMap::new();
        wrong.insert("OrgUIS".to_string(), espoch.public_key.clone());
        assert!(!verify_certificate(&cert, &wrong));

        assert_eq!(
            issue_certificate(&uis_keys, &uis.name, "", "OrgUIS", Role::Peer, subject.public_key().clone())
                .unwrap_err(),
            IdentityError::EmptyName("subject name")
        );
    }

    #[test]
    fn sign_verify_basics() {
        let k = KeyPair::from_seed(&seed(3));
        let other = KeyPair::from_seed(&seed(4));
        let msg = b"block payload";
        let sig = k.sign(msg);
        assert_eq!(sig.0.len(), 64);
        assert!(verify_signature(k.public_key(), msg, &sig));
        assert!(!verify_signature(k.public_key(), b"block payload!", &sig));
        assert!(!verify_signature(other.public_key(), msg, &sig));
        assert!(!verify_signature(k.public_key(), msg, &Signature(vec![])));
        assert!(!verify_signature(&PublicKey(vec![1, 2, 3]), msg, &sig));
    }

    #[test]
    fn signing_is_deterministic() {
        let k = KeyPair::from_seed(&seed(5));
        assert_eq!(k.sign(b"m"), k.sign(b"m"));
        let restored = KeyPair::from_private_key(&k.private_key_bytes()).unwrap();
        assert_eq!(restored.public_key(), k.public_key());
    }

    #[test]
    fn directory_rejects_foreign_certificates() {
        let (uis, uis_keys) = create_ca("OrgUIS", &seed(0)).unwrap();
        let (_, espoch_keys) = create_ca("OrgESPOCH", &seed(1)).unwrap();
        let mut dir = MembershipDirectory::with_root(&uis, &uis_keys);
        let pk = KeyPair::from_seed(&seed(7)).public_key().clone();
        let forged =
            issue_certificate(&espoch_keys, "ca.OrgESPOCH", "mallory", "OrgUIS", Role::Admin, pk.clone()).unwrap();
        assert_eq!(dir.add_certificate(forged), Err(IdentityError::BadCertificate("mallory".into())));
        let stranger = issue_certificate(&espoch_keys, "ca.OrgESPOCH", "eve", "OrgESPOCH", Role::Peer, pk).unwrap();
        assert!(matches!(dir.add_certificate(stranger), Err(IdentityError::UnknownOrganization(_))));
    }

    #[test]
    fn bundle_round_trip() {
        let (uis, uis_keys) = create_ca("OrgUIS", &seed(0)).unwrap();
        let mut dir = MembershipDirectory::with_root(&uis, &uis_keys);
        for (i, role) in Role::ALL.iter().enumerate() {
            let pk = KeyPair::from_seed(&seed(20 + i as u8)).public_key().clone();
            dir.add_certificate(
                issue_certificate(&uis_keys, &uis.name, &format!("user{i}"), "OrgUIS", *role, pk).unwrap(),
            )
            .unwrap();
        }
        let bytes = dir.bundle_bytes();
        let text = String::from_utf8(bytes.clone()).unwrap();
        assert_eq!(text.lines().count(), 5);
        let parsed = MembershipDirectory::from_bundle(&text).unwrap();
        assert_eq!(parsed, dir);
        assert_eq!(parsed.bundle_bytes(), bytes);
    }

    #[test]
    fn role_permissions() {
        let writers: Vec<_> = Role::ALL.iter().filter(|r| r.may_write_records()).collect();
        assert_eq!(writers, [&Role::Collaborator, &Role::Admin]);
        assert!(Role::ALL.iter().filter(|r| r.may_endorse()).eq([&Role::Peer]));
        assert!(Role::ALL.iter().filter(|r| r.may_sign_blocks()).eq([&Role::Orderer]));
    }
}
