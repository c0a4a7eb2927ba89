//! Context-snapshot assembly: the serving pipeline that turns a stored
//! context into the budgeted, privacy-filtered projection handed to tools.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use lc_core::model::{BeliefModel, ConsentScope, Dimension, FeatureKind, LearnerContext};
use lc_core::prioritize::{select_features, PrioritizeError, TaskKind};
use lc_core::privacy::{
    authorize_query, blur_value, DenialReason, DisclosurePolicy, GranularityLevel,
};
use lc_core::store::{content_hash, ContextDigest, StoreError};
use lc_core::temporal::{effective_confidence, prune_forgotten};
use lc_core::LcConfig;
use lc_core::model::ScalarValue;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SnapshotError {
    #[error("no servable features remain after selection and policy filtering")]
    EmptyAfterFiltering,
    #[error("snapshot budget must be at least 1")]
    ZeroBudget,
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Prioritize(#[from] PrioritizeError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SnapshotRequest {
    pub purpose: ConsentScope,
    pub task: TaskKind,
    pub budget: usize,
}

/// One served working-context entry: blurred value plus the metadata a tool
/// needs to interpret it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingEntry {
    pub key: String,
    pub value: ScalarValue,
    pub kind: FeatureKind,
    pub dimension: Dimension,
    /// Decay-weighted confidence at serving time.
    pub confidence: f64,
    pub granularity: GranularityLevel,
}

/// Budgeted, privacy-filtered projection of one learner context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextSnapshot {
    pub learner_id: String,
    pub generated_at: DateTime<Utc>,
    pub working: Vec<WorkingEntry>,
    /// None when policy redacts belief-level content for this request.
    pub beliefs: Option<BeliefModel>,
    pub budget_used: usize,
    pub context_digest: ContextDigest,
    /// Laplace-noised feature count; present only when the caller asked for
    /// the DP aggregate (and paid for it).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_feature_count: Option<f64>,
}

/// What the serving pipeline produced besides the snapshot itself: the
/// denied keys and the keys the read-time prune dropped, both destined for
/// the audit trail.
#[derive(Debug, Clone, Default)]
pub struct ServingTrace {
    pub denied: Vec<(String, DenialReason)>,
    pub pruned: Vec<String>,
}

/// Run the serving pipeline on an in-memory context: prune-aware effective
/// weights, budgeted selection, authorization, blurring. Returns the
/// snapshot and the audit trace.
pub fn assemble_snapshot(
    ctx: &LearnerContext,
    policy: &DisclosurePolicy,
    config: &LcConfig,
    request: &SnapshotRequest,
    now: DateTime<Utc>,
) -> Result<(ContextSnapshot, ServingTrace), SnapshotError> {
    if request.budget == 0 {
        return Err(SnapshotError::ZeroBudget);
    }
    let digest = content_hash(ctx)?;
    let (live, pruned) = prune_forgotten(ctx, now);

    let working = match select_features(
        &live,
        &Default::default(),
        request.budget,
        request.task,
        now,
        config,
    ) {
        Ok(working) => working,
        Err(PrioritizeError::NoFeatures) => return Err(SnapshotError::EmptyAfterFiltering),
        Err(other) => return Err(other.into()),
    };

    let keys: Vec<String> = working.features.iter().map(|(k, _)| k.clone()).collect();
    let decision = authorize_query(policy, request.purpose, &keys, &live, now);
    let allowed: std::collections::BTreeMap<&str, GranularityLevel> = decision
        .allowed
        .iter()
        .map(|(k, level)| (k.as_str(), *level))
        .collect();

    let mut entries = Vec::new();
    for (key, _) in &working.features {
        let Some(&level) = allowed.get(key.as_str()) else {
            continue;
        };
        let feature = live.feature(key).expect("selected keys exist");
        entries.push(WorkingEntry {
            key: key.clone(),
            value: blur_value(&feature.value, level, config),
            kind: feature.kind,
            dimension: feature.dimension,
            confidence: effective_confidence(feature, now).unwrap_or(0.0),
            granularity: level,
        });
    }
    if entries.is_empty() {
        return Err(SnapshotError::EmptyAfterFiltering);
    }

    let beliefs = if serve_beliefs(policy, request.purpose) {
        Some(live.beliefs.clone())
    } else {
        None
    };

    let budget_used = entries.len();
    Ok((
        ContextSnapshot {
            learner_id: ctx.learner_id.clone(),
            generated_at: now,
            working: entries,
            beliefs,
            budget_used,
            context_digest: digest,
            noisy_feature_count: None,
        },
        ServingTrace {
            denied: decision.denied,
            pruned,
        },
    ))
}

/// Belief-level content is treated as High sensitivity: served unless the
/// policy redacts High, denies the purpose, or denies the beliefs key.
fn serve_beliefs(policy: &DisclosurePolicy, purpose: ConsentScope) -> bool {
    policy.allowed_purposes.contains(&purpose)
        && policy.level_for(lc_core::model::Sensitivity::High) < GranularityLevel::Redact
        && !policy
            .deny_keys
            .iter()
            .any(|pattern| pattern == "beliefs" || pattern == "beliefs*" || pattern == "**")
}
