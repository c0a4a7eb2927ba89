//! Canonical JSON-LD serialization and content hashing.
//!
//! Canonical bytes are deterministic: recursively sorted keys, no
//! insignificant whitespace, RFC3339 UTC timestamps, shortest round-trip
//! decimals, lowercase hex digests. Two semantically equal contexts
//! serialize to identical bytes.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::model::LearnerContext;

use super::StoreError;

/// Media type profile identifier embedded in every canonical document.
pub const PROFILE: &str = "lc/v1";
pub const MEDIA_TYPE: &str = "application/ld+json";

/// Canonical byte form of one context.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CanonicalDocument {
    pub bytes: Vec<u8>,
}

impl CanonicalDocument {
    pub fn as_str(&self) -> &str {
        std::str::from_utf8(&self.bytes).expect("canonical bytes are UTF-8")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextDigest {
    pub algorithm: String,
    pub hex: String,
}

/// Minimal JSON-LD @context mapping lc/v1 terms. No canonical external
/// vocabulary exists for this schema, so the terms live under a profile URN.
fn ld_context() -> Value {
    serde_json::json!({
        "@vocab": "urn:lc:v1#",
        "lc": "urn:lc:v1#",
        "profile": PROFILE,
    })
}

/// Rebuild every object with sorted keys. Independent of serde_json's map
/// ordering feature flags, so canonical bytes survive feature unification.
fn sort_value(value: &Value) -> Value {
    match value {
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            let mut sorted = serde_json::Map::new();
            for key in keys {
                sorted.insert(key.clone(), sort_value(&map[key]));
            }
            Value::Object(sorted)
        }
        Value::Array(items) => Value::Array(items.iter().map(sort_value).collect()),
        other => other.clone(),
    }
}

/// Serialize a context to canonical bytes. Requires zero schema-conformance
/// violations.
pub fn canonical_serialize(ctx: &LearnerContext) -> Result<CanonicalDocument, StoreError> {
    let violations = ctx.schema_report();
    if !violations.is_empty() {
        return Err(StoreError::InvalidContext {
            violations: violations.into_iter().map(|v| v.message).collect(),
        });
    }
    let mut value = serde_json::to_value(ctx).map_err(|e| StoreError::Storage(e.to_string()))?;
    if let Value::Object(map) = &mut value {
        map.insert("@context".to_string(), ld_context());
    }
    let bytes = serde_json::to_vec(&sort_value(&value))
        .map_err(|e| StoreError::Storage(e.to_string()))?;
    Ok(CanonicalDocument { bytes })
}

/// Parse canonical (or semantically equivalent) bytes back into a context.
pub fn canonical_deserialize(bytes: &[u8]) -> Result<LearnerContext, StoreError> {
    let mut value: Value =
        serde_json::from_slice(bytes).map_err(|e| StoreError::Storage(e.to_string()))?;
    if let Value::Object(map) = &mut value {
        map.remove("@context");
    }
    serde_json::from_value(value).map_err(|e| StoreError::Storage(e.to_string()))
}

/// SHA-256 digest of the canonical bytes.
pub fn content_hash(ctx: &LearnerContext) -> Result<ContextDigest, StoreError> {
    let doc = canonical_serialize(ctx)?;
    Ok(digest_of(&doc))
}

pub fn digest_of(doc: &CanonicalDocument) -> ContextDigest {
    ContextDigest {
        algorithm: "sha-256".to_string(),
        hex: hex::encode(Sha256::digest(&doc.bytes)),
    }
}
