//! Permissioned ledger for scientific data integrity.
//!
//! Records describing off-chain measurement and simulation files are created
//! through a contract, endorsed by peers of several organizations, ordered by
//! a Raft cluster into hash-chained blocks, and audited by a verifier that
//! pinpoints every altered transaction.

pub mod codec;
pub mod contract;
pub mod fixtures;
pub mod gateway;
pub mod identity;
pub mod ledger;
pub mod ordering;
pub mod peernet;
pub mod verifier;
