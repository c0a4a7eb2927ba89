//! Salience measurement and working-context compression: leave-one-out TVD
//! over strategy distributions, plug-in mutual information, and greedy
//! budgeted feature selection.

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Dimension, LearnerContext, NodeKind};
use crate::temporal::effective_confidence;
use crate::LcConfig;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PrioritizeError {
    #[error("invalid distribution{}: {reason}", key.as_deref().map(|k| format!(" for {k}")).unwrap_or_default())]
    InvalidDistribution { key: Option<String>, reason: String },
    #[error("per-feature key {0} has no declared relevance")]
    MissingRelevance(String),
    #[error("mutual information needs at least one sample")]
    EmptySamples,
    #[error("context carries no features to select from")]
    NoFeatures,
    #[error("selection budget must be at least 1")]
    ZeroBudget,
}

/// A categorical distribution over strategy labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub support: Vec<String>,
    pub probs: Vec<f64>,
}

impl Distribution {
    pub fn new(pairs: &[(&str, f64)]) -> Self {
        Self {
            support: pairs.iter().map(|(k, _)| k.to_string()).collect(),
            probs: pairs.iter().map(|(_, p)| *p).collect(),
        }
    }

    pub fn validate(&self) -> Result<(), PrioritizeError> {
        let fail = |reason: String| PrioritizeError::InvalidDistribution { key: None, reason };
        if self.support.len() != self.probs.len() {
            return Err(fail(format!(
                "support has {} labels but {} probabilities",
                self.support.len(),
                self.probs.len()
            )));
        }
        if self.support.is_empty() {
            return Err(fail("empty support".to_string()));
        }
        let mut seen = BTreeSet::new();
        for label in &self.support {
            if !seen.insert(label) {
                return Err(fail(format!("duplicate category {label}")));
            }
        }
        for &p in &self.probs {
            if !(p >= 0.0) {
                return Err(fail(format!("negative or NaN probability {p}")));
            }
        }
        let total: f64 = self.probs.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(fail(format!("probabilities sum to {total}")));
        }
        Ok(())
    }

    fn as_map(&self) -> BTreeMap<&str, f64> {
        self.support
            .iter()
            .map(String::as_str)
            .zip(self.probs.iter().copied())
            .collect()
    }
}

/// Total variation distance: half the L1 distance over the unified support.
pub fn tvd(p: &Distribution, q: &Distribution) -> Result<f64, PrioritizeError> {
    p.validate()?;
    q.validate()?;
    let pm = p.as_map();
    let qm = q.as_map();
    let labels: BTreeSet<&str> = pm.keys().chain(qm.keys()).copied().collect();
    let l1: f64 = labels
        .iter()
        .map(|label| {
            let a = pm.get(label).copied().unwrap_or(0.0);
            let b = qm.get(label).copied().unwrap_or(0.0);
            (a - b).abs()
        })
        .sum();
    Ok(0.5 * l1)
}

/// Leave-one-out impact: per key, TVD between the full-context distribution
/// and the distribution with that key's feature removed.
pub fn loo_impact(
    full: &Distribution,
    variants: &BTreeMap<String, Distribution>,
) -> Result<BTreeMap<String, f64>, PrioritizeError> {
    let mut impacts = BTreeMap::new();
    for (key, variant) in variants {
        let impact = tvd(full, variant).map_err(|err| match err {
            PrioritizeError::InvalidDistribution { reason, .. } => {
                PrioritizeError::InvalidDistribution {
                    key: Some(key.clone()),
                    reason,
                }
            }
            other => other,
        })?;
        impacts.insert(key.clone(), impact);
    }
    Ok(impacts)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MisalignmentReason {
    /// A declared-irrelevant key out-shifts at least one relevant key.
    HallucinatedRelevance,
    /// A declared-relevant key barely shifts the output.
    InvisibleTrait,
}

/// Relevance-impact comparison across features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SalienceReport {
    pub per_feature: BTreeMap<String, f64>,
    pub relevance: BTreeMap<String, f64>,
    pub misaligned: Vec<(String, MisalignmentReason)>,
}

/// Flag relevance-impact misalignment. A relevance-0 key whose TVD exceeds
/// any relevance->=0.5 key's TVD is hallucinated; a relevant key under
/// `threshold` is invisible.
pub fn rank_misalignment(
    per_feature: &BTreeMap<String, f64>,
    relevance: &BTreeMap<String, f64>,
    threshold: f64,
) -> Result<SalienceReport, PrioritizeError> {
    for key in per_feature.keys() {
        if !relevance.contains_key(key) {
            return Err(PrioritizeError::MissingRelevance(key.clone()));
        }
    }
    let relevant_tvds: Vec<f64> = per_feature
        .iter()
        .filter(|(key, _)| relevance.get(*key).copied().unwrap_or(0.0) >= 0.5)
        .map(|(_, &t)| t)
        .collect();
    let min_relevant = relevant_tvds.iter().copied().fold(f64::INFINITY, f64::min);

    let mut misaligned = Vec::new();
    for (key, &impact) in per_feature {
        let declared = relevance.get(key).copied().unwrap_or(0.0);
        if declared == 0.0 && impact > min_relevant {
            misaligned.push((key.clone(), MisalignmentReason::HallucinatedRelevance));
        } else if declared >= 0.5 && impact < threshold {
            misaligned.push((key.clone(), MisalignmentReason::InvisibleTrait));
        }
    }
    Ok(SalienceReport {
        per_feature: per_feature.clone(),
        relevance: relevance.clone(),
        misaligned,
    })
}

/// Plug-in mutual information over an empirical joint table, in bits.
/// Computed as H(X) + H(Y) - H(X,Y); the test oracle sums the joint terms
/// directly.
pub fn mutual_information(samples: &[(String, String)]) -> Result<f64, PrioritizeError> {
    if samples.is_empty() {
        return Err(PrioritizeError::EmptySamples);
    }
    let n = samples.len() as f64;
    let mut joint: BTreeMap<(&str, &str), f64> = BTreeMap::new();
    let mut left: BTreeMap<&str, f64> = BTreeMap::new();
    let mut right: BTreeMap<&str, f64> = BTreeMap::new();
    for (x, y) in samples {
        *joint.entry((x, y)).or_default() += 1.0;
        *left.entry(x).or_default() += 1.0;
        *right.entry(y).or_default() += 1.0;
    }
    let entropy = |counts: &[f64]| -> f64 {
        counts
            .iter()
            .filter(|&&c| c > 0.0)
            .map(|&c| {
                let p = c / n;
                -p * p.log2()
            })
            .sum()
    };
    let hx = entropy(&left.values().copied().collect::<Vec<_>>());
    let hy = entropy(&right.values().copied().collect::<Vec<_>>());
    let hxy = entropy(&joint.values().copied().collect::<Vec<_>>());
    Ok((hx + hy - hxy).max(0.0))
}

/// Bin numeric observations into `bins` equal-width categories, labelled
/// "bin0".."bin{n-1}". Used to discretize continuous features before the
/// plug-in estimator.
pub fn bin_numeric(values: &[f64], bins: usize) -> Vec<String> {
    assert!(bins >= 1);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if max > min { (max - min) / bins as f64 } else { 1.0 };
    values
        .iter()
        .map(|&v| {
            let idx = (((v - min) / width).floor() as usize).min(bins - 1);
            format!("bin{idx}")
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    FormativeFeedback,
    Assessment,
    Collaboration,
    Generic,
}

impl TaskKind {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "formative_feedback" => Some(Self::FormativeFeedback),
            "assessment" => Some(Self::Assessment),
            "collaboration" => Some(Self::Collaboration),
            "generic" => Some(Self::Generic),
            _ => None,
        }
    }
}

/// Weight multiplier for a feature under a task, from the config table.
pub fn task_weight(config: &LcConfig, task: TaskKind, key: &str, dimension: Dimension) -> f64 {
    let mut weight = 1.0;
    for rule in &config.task_weights {
        if rule.task != task {
            continue;
        }
        let matches = match (&rule.key_prefix, rule.dimension) {
            (Some(prefix), _) => key.starts_with(prefix.as_str()),
            (None, Some(dim)) => dim == dimension,
            (None, None) => true,
        };
        if matches {
            weight *= rule.weight;
        }
    }
    weight
}

/// The nodes and edges referenced by the selected features, plus the learner node.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Subgraph {
    pub node_ids: BTreeSet<String>,
    pub edge_ids: BTreeSet<String>,
}

/// Budgeted, salience-ranked projection of a context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkingContext {
    /// (feature key, score) ranked by non-increasing score.
    pub features: Vec<(String, f64)>,
    pub subgraph: Subgraph,
    pub budget: usize,
}

/// Score each feature as task_weight x MI(feature; outcome) x effective
/// decayed confidence, then keep the top `budget` with a lexicographic
/// tie-break on key. Features with no outcome samples keep an MI factor of
/// 1 so contexts can be served before any outcome data exists.
pub fn select_features(
    ctx: &LearnerContext,
    outcome_samples: &BTreeMap<String, Vec<(String, String)>>,
    budget: usize,
    task: TaskKind,
    now: DateTime<Utc>,
    config: &LcConfig,
) -> Result<WorkingContext, PrioritizeError> {
    if budget == 0 {
        return Err(PrioritizeError::ZeroBudget);
    }
    if ctx.feature_count() == 0 {
        return Err(PrioritizeError::NoFeatures);
    }
    let mut scored: Vec<(String, f64)> = Vec::with_capacity(ctx.feature_count());
    for feature in ctx.features() {
        let weight = task_weight(config, task, &feature.key, feature.dimension);
        let mi_factor = match outcome_samples.get(&feature.key) {
            Some(samples) => mutual_information(samples)?,
            None => 1.0,
        };
        let decayed = effective_confidence(feature, now).unwrap_or(0.0);
        scored.push((feature.key.clone(), weight * mi_factor * decayed));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored.truncate(budget);

    let mut subgraph = Subgraph::default();
    subgraph.node_ids.extend(
        ctx.nodes
            .values()
            .filter(|n| n.kind == NodeKind::Learner)
            .map(|n| n.id.clone()),
    );
    for (key, _) in &scored {
        for segment in key.split('.') {
            if ctx.nodes.contains_key(segment) {
                subgraph.node_ids.insert(segment.to_string());
            }
        }
    }
    for edge in &ctx.edges {
        if subgraph.node_ids.contains(&edge.src) && subgraph.node_ids.contains(&edge.dst) {
            subgraph.edge_ids.insert(edge.identity());
        }
    }

    Ok(WorkingContext {
        features: scored,
        subgraph,
        budget,
    })
}
