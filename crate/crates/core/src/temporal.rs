//! Keeps the context a living model: evidence ingestion, mastery updates,
//! exponential decay, smoothing, and adaptive forgetting.
//!
//! Decay is applied at read time and never mutates stored confidence, so the
//! full context stays available for longitudinal analysis while the working
//! view fades.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{DEFAULT_FLOOR, DEFAULT_STATE_LAMBDA, DEFAULT_TRAIT_LAMBDA};
use crate::model::{
    ConsentScope, Dimension, Feature, FeatureKind, LearnerContext, ModelError, Provenance,
    ScalarValue, Sensitivity,
};

pub const SECONDS_PER_DAY: f64 = 86_400.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TemporalError {
    #[error("elapsed time is negative (now precedes observed_at)")]
    NegativeElapsed,
    #[error("invalid BKT parameters: {0}")]
    InvalidParams(String),
    #[error("smoothing alpha {0} outside (0,1]")]
    AlphaOutOfRange(f64),
    #[error("series timestamps are not strictly increasing at index {0}")]
    NonMonotoneTimestamps(usize),
    #[error("evidence target {0} cannot be resolved")]
    UnresolvableTarget(String),
    #[error("evidence for {target} arrived after its retention deadline")]
    StaleEvent { target: String },
    #[error("evidence payload missing field {0}")]
    MissingPayloadField(&'static str),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Exponential decay policy: weight(t) = exp(-lambda * days) with a floor
/// below which the pruner may drop the feature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayPolicy {
    /// Decay constant per day, >= 0.
    pub lambda: f64,
    /// Prunable-weight floor in [0,1].
    pub floor: f64,
}

impl DecayPolicy {
    pub fn new(lambda: f64, floor: f64) -> Self {
        Self { lambda, floor }
    }

    pub fn state_default() -> Self {
        Self::new(DEFAULT_STATE_LAMBDA, DEFAULT_FLOOR)
    }

    pub fn trait_default() -> Self {
        Self::new(DEFAULT_TRAIT_LAMBDA, DEFAULT_FLOOR)
    }
}

/// Read-time decay multiplier in [0,1]; does not touch stored confidence.
pub fn decay_weight(
    observed_at: DateTime<Utc>,
    now: DateTime<Utc>,
    policy: &DecayPolicy,
) -> Result<f64, TemporalError> {
    if now < observed_at {
        return Err(TemporalError::NegativeElapsed);
    }
    let elapsed_days = (now - observed_at)
        .num_milliseconds()
        .max(0) as f64
        / (SECONDS_PER_DAY * 1_000.0);
    Ok((-policy.lambda * elapsed_days).exp())
}

/// Decayed confidence of a feature at `now`.
pub fn effective_confidence(feature: &Feature, now: DateTime<Utc>) -> Result<f64, TemporalError> {
    Ok(decay_weight(feature.observed_at, now, &feature.decay)? * feature.confidence)
}

/// Two-state BKT parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BktParams {
    pub p_init: f64,
    pub p_transit: f64,
    pub p_slip: f64,
    pub p_guess: f64,
}

impl BktParams {
    pub fn validate(&self) -> Result<(), TemporalError> {
        for (name, p) in [
            ("p_init", self.p_init),
            ("p_transit", self.p_transit),
            ("p_slip", self.p_slip),
            ("p_guess", self.p_guess),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(TemporalError::InvalidParams(format!(
                    "{name}={p} outside [0,1]"
                )));
            }
        }
        if self.p_slip + self.p_guess >= 1.0 {
            return Err(TemporalError::InvalidParams(format!(
                "p_slip + p_guess = {} >= 1",
                self.p_slip + self.p_guess
            )));
        }
        Ok(())
    }
}

impl Default for BktParams {
    fn default() -> Self {
        Self {
            p_init: 0.3,
            p_transit: 0.1,
            p_slip: 0.1,
            p_guess: 0.2,
        }
    }
}

/// One BKT step: Bayes posterior on the observation, then the learning
/// transition p' = post + (1 - post) * p_transit.
pub fn bkt_update(
    p_mastery: f64,
    correct: bool,
    params: &BktParams,
) -> Result<f64, TemporalError> {
    params.validate()?;
    if !(0.0..=1.0).contains(&p_mastery) {
        return Err(TemporalError::InvalidParams(format!(
            "p_mastery={p_mastery} outside [0,1]"
        )));
    }
    let (s, g) = (params.p_slip, params.p_guess);
    let posterior = if correct {
        let evidence = p_mastery * (1.0 - s) + (1.0 - p_mastery) * g;
        if evidence == 0.0 {
            0.0
        } else {
            p_mastery * (1.0 - s) / evidence
        }
    } else {
        let evidence = p_mastery * s + (1.0 - p_mastery) * (1.0 - g);
        if evidence == 0.0 {
            1.0
        } else {
            p_mastery * s / evidence
        }
    };
    Ok((posterior + (1.0 - posterior) * params.p_transit).clamp(0.0, 1.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceKind {
    Answer,
    DialogueTurn,
    SurveyItem,
    PlatformEvent,
}

/// A timestamped observation driving context updates. `payload` carries the
/// kind-specific fields (answer: correct + item; survey_item: instrument +
/// response + scale bounds; dialogue_turn: speaker + text; platform_event:
/// name + attributes).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceEvent {
    pub learner_id: String,
    pub at: DateTime<Utc>,
    pub kind: EvidenceKind,
    pub target: String,
    #[serde(default)]
    pub payload: BTreeMap<String, serde_json::Value>,
}

impl EvidenceEvent {
    pub fn answer(learner_id: &str, at: DateTime<Utc>, skill: &str, correct: bool, item: &str) -> Self {
        let mut payload = BTreeMap::new();
        payload.insert("correct".to_string(), serde_json::Value::Bool(correct));
        payload.insert("item".to_string(), serde_json::Value::String(item.to_string()));
        Self {
            learner_id: learner_id.to_string(),
            at,
            kind: EvidenceKind::Answer,
            target: skill.to_string(),
            payload,
        }
    }
}

/// Interaction-stream events (dialogue turns, platform events) retained for
/// the simulation harness rather than folded into a feature.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvidenceLog {
    pub events: Vec<EvidenceEvent>,
}

impl EvidenceLog {
    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Mastery features created by answer evidence live under this prefix.
pub fn mastery_key(skill: &str) -> String {
    format!("who.knowledge.{skill}")
}

/// Apply one evidence event to a context. Answer events route through BKT
/// (creating the mastery feature at p_init when absent); survey items
/// min-max-normalize into the target feature; dialogue turns and platform
/// events append to `log`.
pub fn ingest_evidence(
    ctx: &LearnerContext,
    event: &EvidenceEvent,
    params: &BktParams,
    log: &mut EvidenceLog,
) -> Result<LearnerContext, TemporalError> {
    match event.kind {
        EvidenceKind::Answer => ingest_answer(ctx, event, params),
        EvidenceKind::SurveyItem => ingest_survey(ctx, event),
        EvidenceKind::DialogueTurn | EvidenceKind::PlatformEvent => {
            log.events.push(event.clone());
            let mut next = ctx.clone();
            next.version += 1;
            next.clock = next.clock.max(event.at);
            Ok(next)
        }
    }
}

fn check_retention(feature: &Feature, event: &EvidenceEvent) -> Result<(), TemporalError> {
    if let Some(deadline) = feature.provenance.retention_until {
        if event.at > deadline {
            return Err(TemporalError::StaleEvent {
                target: feature.key.clone(),
            });
        }
    }
    Ok(())
}

fn ingest_answer(
    ctx: &LearnerContext,
    event: &EvidenceEvent,
    params: &BktParams,
) -> Result<LearnerContext, TemporalError> {
    params.validate()?;
    let correct = event
        .payload
        .get("correct")
        .and_then(|v| v.as_bool())
        .ok_or(TemporalError::MissingPayloadField("correct"))?;
    let key = if event.target.contains('.') {
        // Already a feature key; must be a Who-dimension mastery key.
        if Dimension::from_key(&event.target) != Some(Dimension::Who) {
            return Err(TemporalError::UnresolvableTarget(event.target.clone()));
        }
        event.target.clone()
    } else {
        mastery_key(&event.target)
    };
    let current = ctx.feature(&key).cloned();
    if let Some(existing) = &current {
        check_retention(existing, event)?;
    }
    let prior = match &current {
        Some(f) => match f.value {
            ScalarValue::Probability(p) => p,
            _ => return Err(TemporalError::UnresolvableTarget(key)),
        },
        None => params.p_init,
    };
    let updated = bkt_update(prior, correct, params)?;
    let feature = match current {
        Some(mut f) => {
            f.value = ScalarValue::Probability(updated);
            f.observed_at = event.at;
            f.updated_at = event.at;
            f.demoted_at = None;
            f
        }
        None => Feature {
            key: key.clone(),
            dimension: Dimension::Who,
            kind: FeatureKind::State,
            value: ScalarValue::Probability(updated),
            confidence: 1.0,
            observed_at: event.at,
            updated_at: event.at,
            decay: DecayPolicy::state_default(),
            sensitivity: Sensitivity::Low,
            provenance: Provenance::new("evidence/answer", ConsentScope::Instruction, event.at),
            demoted_at: None,
        },
    };
    Ok(ctx.set_feature_at(feature, event.at)?)
}

fn ingest_survey(ctx: &LearnerContext, event: &EvidenceEvent) -> Result<LearnerContext, TemporalError> {
    let Some(dimension) = Dimension::from_key(&event.target) else {
        return Err(TemporalError::UnresolvableTarget(event.target.clone()));
    };
    if event.target.split('.').nth(1).is_none() {
        return Err(TemporalError::UnresolvableTarget(event.target.clone()));
    }
    let response = event
        .payload
        .get("response")
        .and_then(|v| v.as_f64())
        .ok_or(TemporalError::MissingPayloadField("response"))?;
    let scale_min = event
        .payload
        .get("scale_min")
        .and_then(|v| v.as_f64())
        .unwrap_or(0.0);
    let scale_max = event
        .payload
        .get("scale_max")
        .and_then(|v| v.as_f64())
        .unwrap_or(1.0);
    if scale_max <= scale_min {
        return Err(TemporalError::MissingPayloadField("scale_max"));
    }
    let normalized = ((response - scale_min) / (scale_max - scale_min)).clamp(0.0, 1.0);
    let instrument = event
        .payload
        .get("instrument")
        .and_then(|v| v.as_str())
        .unwrap_or("survey")
        .to_string();
    let feature = match ctx.feature(&event.target).cloned() {
        Some(mut f) => {
            check_retention(&f, event)?;
            f.value = ScalarValue::Probability(normalized);
            f.observed_at = event.at;
            f.updated_at = event.at;
            f.demoted_at = None;
            f
        }
        None => Feature {
            key: event.target.clone(),
            dimension,
            kind: FeatureKind::State,
            value: ScalarValue::Probability(normalized),
            confidence: 1.0,
            observed_at: event.at,
            updated_at: event.at,
            decay: DecayPolicy::state_default(),
            sensitivity: Sensitivity::Low,
            provenance: Provenance::new(
                format!("survey/{instrument}"),
                ConsentScope::Instruction,
                event.at,
            ),
            demoted_at: None,
        },
    };
    Ok(ctx.set_feature_at(feature, event.at)?)
}

/// Exponential smoothing: s1 = v1, sk = alpha*vk + (1-alpha)*s(k-1).
pub fn smooth_series(
    values: &[(DateTime<Utc>, f64)],
    alpha: f64,
) -> Result<Vec<(DateTime<Utc>, f64)>, TemporalError> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(TemporalError::AlphaOutOfRange(alpha));
    }
    for (i, pair) in values.windows(2).enumerate() {
        if pair[1].0 <= pair[0].0 {
            return Err(TemporalError::NonMonotoneTimestamps(i + 1));
        }
    }
    let mut smoothed = Vec::with_capacity(values.len());
    let mut state = 0.0;
    for (i, &(at, value)) in values.iter().enumerate() {
        state = if i == 0 {
            value
        } else {
            alpha * value + (1.0 - alpha) * state
        };
        smoothed.push((at, state));
    }
    Ok(smoothed)
}

/// Drop features whose decayed weight fell below their floor. States go in
/// one pass; Traits are demoted (confidence halved) on the first trip and
/// pruned only on a second trip at a strictly later instant.
pub fn prune_forgotten(
    ctx: &LearnerContext,
    now: DateTime<Utc>,
) -> (LearnerContext, Vec<String>) {
    let mut pruned = Vec::new();
    let mut demoted = Vec::new();
    let mut recovered = Vec::new();
    for feature in ctx.features() {
        let weight = match effective_confidence(feature, now) {
            Ok(w) => w,
            // Feature observed after `now` (clock skew): never prunable.
            Err(_) => continue,
        };
        if weight >= feature.decay.floor {
            if feature.demoted_at.is_some() {
                recovered.push(feature.key.clone());
            }
            continue;
        }
        match feature.kind {
            FeatureKind::State => pruned.push(feature.key.clone()),
            FeatureKind::Trait => match feature.demoted_at {
                None => demoted.push(feature.key.clone()),
                Some(t) if t >= now => {} // same-instant rule: one strike per distinct now
                Some(_) => pruned.push(feature.key.clone()),
            },
        }
    }
    if pruned.is_empty() && demoted.is_empty() && recovered.is_empty() {
        return (ctx.clone(), pruned);
    }
    let mut next = ctx.clone();
    next.version += 1;
    next.clock = next.clock.max(now);
    for key in &pruned {
        next.remove_feature(key);
    }
    for key in &demoted {
        if let Some(f) = next.feature_mut(key) {
            f.confidence *= 0.5;
            f.demoted_at = Some(now);
        }
    }
    for key in &recovered {
        if let Some(f) = next.feature_mut(key) {
            f.demoted_at = None;
        }
    }
    (next, pruned)
}
