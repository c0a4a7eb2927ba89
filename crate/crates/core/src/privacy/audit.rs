//! Append-only audit trail with a SHA-256 hash chain. The genesis previous
//! hash is 32 zero bytes; each record's chain hash covers the previous hash
//! and the record's canonical serialization.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditAction {
    SnapshotServed,
    EvidencePushed,
    FeaturePruned,
    BudgetCharged,
    QueryDenied,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub at: DateTime<Utc>,
    pub actor: String,
    pub action: AuditAction,
    #[serde(default)]
    pub detail: std::collections::BTreeMap<String, serde_json::Value>,
    /// Lowercase hex SHA-256 of (previous chain hash bytes || record body).
    pub chain_hash: String,
}

impl AuditRecord {
    /// Canonical body bytes: the record without its chain hash, serialized
    /// with sorted keys.
    fn body_bytes(&self) -> Vec<u8> {
        #[derive(Serialize)]
        struct Body<'a> {
            at: &'a DateTime<Utc>,
            actor: &'a str,
            action: &'a AuditAction,
            detail: &'a std::collections::BTreeMap<String, serde_json::Value>,
        }
        serde_json::to_vec(&Body {
            at: &self.at,
            actor: &self.actor,
            action: &self.action,
            detail: &self.detail,
        })
        .expect("audit record body serializes")
    }
}

const GENESIS: [u8; 32] = [0u8; 32];

fn chain_digest(previous: &[u8], body: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(previous);
    hasher.update(body);
    hex::encode(hasher.finalize())
}

/// In-memory audit chain; persisted as JSON Lines by the server.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AuditChain {
    pub records: Vec<AuditRecord>,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("audit chain broken at record {index}")]
pub struct TamperedRecord {
    pub index: usize,
}

impl AuditChain {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    fn tail_hash_bytes(&self) -> Vec<u8> {
        match self.records.last() {
            Some(record) => hex::decode(&record.chain_hash).unwrap_or_else(|_| GENESIS.to_vec()),
            None => GENESIS.to_vec(),
        }
    }

    /// Append a record, computing its chain hash from the current tail.
    pub fn append(
        &mut self,
        at: DateTime<Utc>,
        actor: &str,
        action: AuditAction,
        detail: std::collections::BTreeMap<String, serde_json::Value>,
    ) -> &AuditRecord {
        let mut record = AuditRecord {
            at,
            actor: actor.to_string(),
            action,
            detail,
            chain_hash: String::new(),
        };
        record.chain_hash = chain_digest(&self.tail_hash_bytes(), &record.body_bytes());
        self.records.push(record);
        self.records.last().expect("just pushed")
    }

    pub fn verify(&self) -> Result<(), TamperedRecord> {
        verify_chain(&self.records)
    }
}

/// Recompute every link; the first mismatch identifies the tampered record.
pub fn verify_chain(records: &[AuditRecord]) -> Result<(), TamperedRecord> {
    let mut previous = GENESIS.to_vec();
    for (index, record) in records.iter().enumerate() {
        let expected = chain_digest(&previous, &record.body_bytes());
        if expected != record.chain_hash {
            return Err(TamperedRecord { index });
        }
        previous = hex::decode(&record.chain_hash).expect("verified hash is hex");
    }
    Ok(())
}
