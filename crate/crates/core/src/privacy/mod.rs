//! Controlled disclosure: granularity blurring, differential-privacy budget
//! accounting, query authorization, and the append-only audit chain.

pub mod audit;

pub use audit::{verify_chain, AuditAction, AuditChain, AuditRecord, TamperedRecord};

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ConsentScope, LearnerContext, ScalarValue, Sensitivity};
use crate::LcConfig;

pub const REDACTED: &str = "REDACTED";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrivacyError {
    #[error("charging {requested} would exceed the remaining budget {remaining}")]
    BudgetExhausted { requested: f64, remaining: f64 },
    #[error("epsilon must be strictly positive, got {0}")]
    NonPositiveEpsilon(f64),
    #[error("policy maps PII to {0:?}; PII requires at least coarse granularity")]
    PiiTooPrecise(GranularityLevel),
    #[error("invalid deny-key pattern {0}")]
    BadPattern(String),
}

/// Disclosure granularity, totally ordered from most to least precise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GranularityLevel {
    Exact,
    Coarse,
    Category,
    Redact,
}

/// Sequential-composition epsilon accountant for one learner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyBudget {
    pub learner_id: String,
    pub epsilon_total: f64,
    pub epsilon_spent: f64,
}

impl PrivacyBudget {
    pub fn new(learner_id: &str, epsilon_total: f64) -> Self {
        Self {
            learner_id: learner_id.to_string(),
            epsilon_total,
            epsilon_spent: 0.0,
        }
    }

    pub fn remaining(&self) -> f64 {
        (self.epsilon_total - self.epsilon_spent).max(0.0)
    }
}

/// Charge a query against the budget. A denied charge leaves the budget
/// unchanged and the query must not execute.
pub fn charge_budget(
    budget: &PrivacyBudget,
    query_epsilon: f64,
) -> Result<PrivacyBudget, PrivacyError> {
    if !(query_epsilon > 0.0) {
        return Err(PrivacyError::NonPositiveEpsilon(query_epsilon));
    }
    if budget.epsilon_spent + query_epsilon > budget.epsilon_total {
        return Err(PrivacyError::BudgetExhausted {
            requested: query_epsilon,
            remaining: budget.remaining(),
        });
    }
    let mut next = budget.clone();
    next.epsilon_spent += query_epsilon;
    Ok(next)
}

/// Laplace scale for a counting query (sensitivity 1).
pub fn laplace_scale(epsilon: f64) -> Result<f64, PrivacyError> {
    if !(epsilon > 0.0) {
        return Err(PrivacyError::NonPositiveEpsilon(epsilon));
    }
    Ok(1.0 / epsilon)
}

/// Laplace-noised count, seeded for reproducible tests. The budget must
/// already have been charged via [`charge_budget`].
pub fn dp_noisy_count(true_count: u64, epsilon: f64, rng_seed: u64) -> Result<f64, PrivacyError> {
    let scale = laplace_scale(epsilon)?;
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let u: f64 = rng.random_range(-0.5..0.5);
    let noise = -scale * u.signum() * (1.0 - 2.0 * u.abs()).ln();
    Ok(true_count as f64 + noise)
}

/// Coarsen a value to the requested granularity.
///
/// Numeric values round to the coarse step (declared bucket table for
/// integers) and band to {low, medium, high} at category level; the category
/// band is computed from the coarse output so each level's partition refines
/// the next. Free text and categorical labels have no declared scale, so any
/// level below exact redacts them.
pub fn blur_value(value: &ScalarValue, level: GranularityLevel, config: &LcConfig) -> ScalarValue {
    match level {
        GranularityLevel::Exact => value.clone(),
        GranularityLevel::Redact => ScalarValue::Categorical(REDACTED.to_string()),
        GranularityLevel::Coarse => match value {
            ScalarValue::Probability(p) => ScalarValue::Probability(round_step(*p, config.coarse_step)),
            ScalarValue::Real(v) => ScalarValue::Real(round_step(*v, config.coarse_step)),
            ScalarValue::Integer(v) => ScalarValue::Categorical(integer_bucket(*v, config).0),
            ScalarValue::Text(_) | ScalarValue::Categorical(_) => {
                ScalarValue::Categorical(REDACTED.to_string())
            }
        },
        GranularityLevel::Category => match value {
            ScalarValue::Probability(p) => {
                ScalarValue::Categorical(band(round_step(*p, config.coarse_step), 0.0, 1.0))
            }
            ScalarValue::Real(v) => {
                ScalarValue::Categorical(band(round_step(*v, config.coarse_step), 0.0, 1.0))
            }
            ScalarValue::Integer(v) => {
                let (_, midpoint) = integer_bucket(*v, config);
                ScalarValue::Categorical(band(midpoint, 0.0, config.integer_scale_max as f64))
            }
            ScalarValue::Text(_) | ScalarValue::Categorical(_) => {
                ScalarValue::Categorical(REDACTED.to_string())
            }
        },
    }
}

fn round_step(v: f64, step: f64) -> f64 {
    (v / step).round() * step
}

/// Bucket label and midpoint for an integer under the declared bucket table.
fn integer_bucket(v: i64, config: &LcConfig) -> (String, f64) {
    let starts = &config.integer_bucket_starts;
    debug_assert!(!starts.is_empty());
    let mut idx = 0;
    for (i, &start) in starts.iter().enumerate() {
        if v >= start {
            idx = i;
        }
    }
    let low = starts[idx];
    if idx + 1 < starts.len() {
        let high = starts[idx + 1] - 1;
        (format!("[{low}-{high}]"), (low + high) as f64 / 2.0)
    } else {
        let high = config.integer_scale_max.max(low);
        (format!("[{low}+]"), (low + high) as f64 / 2.0)
    }
}

fn band(v: f64, scale_min: f64, scale_max: f64) -> String {
    let span = (scale_max - scale_min).max(f64::MIN_POSITIVE);
    let fraction = ((v - scale_min) / span).clamp(0.0, 1.0);
    if fraction <= 1.0 / 3.0 {
        "low".to_string()
    } else if fraction <= 2.0 / 3.0 {
        "medium".to_string()
    } else {
        "high".to_string()
    }
}

/// Per-purpose disclosure rules loaded from a JSON policy file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DisclosurePolicy {
    /// Granularity level served per sensitivity class.
    pub max_granularity: BTreeMap<Sensitivity, GranularityLevel>,
    pub allowed_purposes: Vec<ConsentScope>,
    /// Glob patterns ('*' within a segment, '**' across segments).
    #[serde(default)]
    pub deny_keys: Vec<String>,
}

impl DisclosurePolicy {
    /// Permissive default used by tests and the simulation harness: serve
    /// everything exactly except PII, which is redacted.
    pub fn permissive() -> Self {
        Self {
            max_granularity: [
                (Sensitivity::None, GranularityLevel::Exact),
                (Sensitivity::Low, GranularityLevel::Exact),
                (Sensitivity::High, GranularityLevel::Exact),
                (Sensitivity::Pii, GranularityLevel::Redact),
            ]
            .into(),
            allowed_purposes: vec![ConsentScope::Research, ConsentScope::Instruction],
            deny_keys: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<(), PrivacyError> {
        let pii = self.level_for(Sensitivity::Pii);
        if pii < GranularityLevel::Coarse {
            return Err(PrivacyError::PiiTooPrecise(pii));
        }
        for pattern in &self.deny_keys {
            compile_glob(pattern)?;
        }
        Ok(())
    }

    pub fn level_for(&self, sensitivity: Sensitivity) -> GranularityLevel {
        self.max_granularity
            .get(&sensitivity)
            .copied()
            .unwrap_or(GranularityLevel::Redact)
    }

    fn denies(&self, key: &str) -> bool {
        self.deny_keys
            .iter()
            .any(|pattern| match compile_glob(pattern) {
                Ok(re) => re.is_match(key),
                Err(_) => true, // malformed patterns fail closed
            })
    }
}

fn compile_glob(pattern: &str) -> Result<regex::Regex, PrivacyError> {
    let mut re = String::from("^");
    let mut chars = pattern.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '*' => {
                if chars.peek() == Some(&'*') {
                    chars.next();
                    re.push_str(".*");
                } else {
                    re.push_str("[^.]*");
                }
            }
            '?' => re.push('.'),
            other => re.push_str(&regex::escape(&other.to_string())),
        }
    }
    re.push('$');
    regex::Regex::new(&re).map_err(|_| PrivacyError::BadPattern(pattern.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DenialReason {
    DeniedByPattern,
    ConsentScopeNotAllowed,
    PurposeIncompatible,
    RetentionLapsed,
    UnknownKey,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryDecision {
    pub allowed: Vec<(String, GranularityLevel)>,
    pub denied: Vec<(String, DenialReason)>,
}

/// Decide, per requested key, whether and how precisely it may be served.
/// Denials are data; the caller audits them.
pub fn authorize_query(
    policy: &DisclosurePolicy,
    purpose: ConsentScope,
    keys: &[String],
    ctx: &LearnerContext,
    now: DateTime<Utc>,
) -> QueryDecision {
    let mut decision = QueryDecision {
        allowed: Vec::new(),
        denied: Vec::new(),
    };
    for key in keys {
        if policy.denies(key) {
            decision.denied.push((key.clone(), DenialReason::DeniedByPattern));
            continue;
        }
        let Some(feature) = ctx.feature(key) else {
            decision.denied.push((key.clone(), DenialReason::UnknownKey));
            continue;
        };
        let scope = feature.provenance.consent_scope;
        if scope == ConsentScope::None || !policy.allowed_purposes.contains(&scope) {
            decision
                .denied
                .push((key.clone(), DenialReason::ConsentScopeNotAllowed));
            continue;
        }
        if scope != purpose {
            decision
                .denied
                .push((key.clone(), DenialReason::PurposeIncompatible));
            continue;
        }
        if let Some(deadline) = feature.provenance.retention_until {
            if now > deadline {
                decision
                    .denied
                    .push((key.clone(), DenialReason::RetentionLapsed));
                continue;
            }
        }
        decision
            .allowed
            .push((key.clone(), policy.level_for(feature.sensitivity)));
    }
    decision
}
