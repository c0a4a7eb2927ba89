//! Multi-layer learner-context graph across the five contextual dimensions.
//!
//! A [`LearnerContext`] is the unit of storage and synchronization: one
//! learner node, the surrounding entity graph, dimension-partitioned
//! features, and a belief model. Mutating operations are functional (they
//! return a new context) and bump the version exactly once when accepted,
//! matching the single-writer contract.

mod types;
mod validate;

pub use types::*;
pub use validate::{ValidationCheck, ValidationReport, Violation};

use std::collections::{BTreeMap, BTreeSet};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::DEFAULT_STATE_LAMBDA;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("learner id must be non-empty")]
    EmptyId,
    #[error("node kind {kind:?} requires dimension {expected}, got {got}")]
    KindDimensionMismatch {
        kind: NodeKind,
        expected: Dimension,
        got: Dimension,
    },
    #[error("context already has a Learner node ({existing})")]
    DuplicateLearnerNode { existing: String },
    #[error("edge endpoint {0} does not exist")]
    MissingEndpoint(String),
    #[error("edge weight {0} outside [0,1]")]
    WeightOutOfRange(f64),
    #[error("prerequisite_of edge {src} -> {dst} would close a cycle")]
    PrerequisiteCycle { src: String, dst: String },
    #[error("probability value {0} outside [0,1]")]
    InvalidProbability(f64),
    #[error("confidence {0} outside [0,1]")]
    InvalidConfidence(f64),
    #[error("trait decay lambda {lambda} must be strictly below the state default {max}")]
    TraitDecayTooFast { lambda: f64, max: f64 },
    #[error("feature key {key} does not start with dimension prefix {expected}")]
    KeyDimensionMismatch { key: String, expected: String },
    #[error("feature timestamps out of order: updated_at precedes observed_at")]
    TimestampOrder,
    #[error("misconception triple field {0} is empty")]
    EmptyTripleField(&'static str),
    #[error("unknown profile attribute {0}")]
    UnknownProfileAttribute(String),
}

/// Per-learner context graph. `features` is partitioned by dimension so a
/// read of one dimension never touches another's storage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearnerContext {
    pub learner_id: String,
    pub nodes: BTreeMap<String, ContextNode>,
    pub edges: Vec<ContextEdge>,
    pub(crate) features: BTreeMap<Dimension, BTreeMap<String, Feature>>,
    pub beliefs: BeliefModel,
    pub version: u64,
    pub clock: DateTime<Utc>,
}

impl LearnerContext {
    /// Build a fresh context holding only the learner node, version 1.
    pub fn new(learner_id: &str) -> Result<Self, ModelError> {
        Self::new_at(learner_id, Utc::now())
    }

    /// Like [`LearnerContext::new`] with an injected clock, for deterministic tests.
    pub fn new_at(learner_id: &str, now: DateTime<Utc>) -> Result<Self, ModelError> {
        if learner_id.is_empty() {
            return Err(ModelError::EmptyId);
        }
        let learner_node = ContextNode {
            id: learner_id.to_string(),
            kind: NodeKind::Learner,
            dimension: Dimension::Who,
            attributes: BTreeMap::new(),
            metadata: Provenance::new("lc", ConsentScope::Instruction, now),
        };
        let mut nodes = BTreeMap::new();
        nodes.insert(learner_node.id.clone(), learner_node);
        let features = Dimension::ALL
            .into_iter()
            .map(|d| (d, BTreeMap::new()))
            .collect();
        Ok(Self {
            learner_id: learner_id.to_string(),
            nodes,
            edges: Vec::new(),
            features,
            beliefs: BeliefModel::default(),
            version: 1,
            clock: now,
        })
    }

    pub fn learner_node(&self) -> Option<&ContextNode> {
        self.nodes.values().find(|n| n.kind == NodeKind::Learner)
    }

    /// All features across dimensions, in key order (keys embed the prefix,
    /// so the flattened order equals global key order).
    pub fn features(&self) -> impl Iterator<Item = &Feature> {
        self.features.values().flat_map(|m| m.values())
    }

    pub fn feature(&self, key: &str) -> Option<&Feature> {
        let dim = Dimension::from_key(key)?;
        self.features.get(&dim).and_then(|m| m.get(key))
    }

    pub fn feature_count(&self) -> usize {
        self.features.values().map(|m| m.len()).sum()
    }

    /// Exactly the features tagged with `dim`; other dimensions' maps are not read.
    pub fn get_dimension(&self, dim: Dimension) -> Vec<&Feature> {
        self.features
            .get(&dim)
            .map(|m| m.values().collect())
            .unwrap_or_default()
    }

    fn bumped(&self, now: DateTime<Utc>) -> Self {
        let mut next = self.clone();
        next.version += 1;
        next.clock = now.max(self.clock);
        next
    }

    /// Insert or replace a node. Kind and dimension must agree and at most
    /// one Learner node may exist.
    pub fn upsert_node(&self, node: ContextNode) -> Result<Self, ModelError> {
        self.upsert_node_at(node, Utc::now())
    }

    pub fn upsert_node_at(&self, node: ContextNode, now: DateTime<Utc>) -> Result<Self, ModelError> {
        if node.kind.dimension() != node.dimension {
            return Err(ModelError::KindDimensionMismatch {
                kind: node.kind,
                expected: node.kind.dimension(),
                got: node.dimension,
            });
        }
        if node.kind == NodeKind::Learner {
            if let Some(existing) = self.learner_node() {
                if existing.id != node.id {
                    return Err(ModelError::DuplicateLearnerNode {
                        existing: existing.id.clone(),
                    });
                }
            }
        }
        let mut next = self.bumped(now);
        next.nodes.insert(node.id.clone(), node);
        Ok(next)
    }

    /// Insert or replace an edge (identity = src|relation|dst). Endpoints
    /// must exist, the weight must lie in [0,1], and prerequisite edges must
    /// keep the prerequisite subgraph acyclic.
    pub fn upsert_edge(&self, edge: ContextEdge) -> Result<Self, ModelError> {
        self.upsert_edge_at(edge, Utc::now())
    }

    pub fn upsert_edge_at(&self, edge: ContextEdge, now: DateTime<Utc>) -> Result<Self, ModelError> {
        if !self.nodes.contains_key(&edge.src) {
            return Err(ModelError::MissingEndpoint(edge.src));
        }
        if !self.nodes.contains_key(&edge.dst) {
            return Err(ModelError::MissingEndpoint(edge.dst));
        }
        if !(0.0..=1.0).contains(&edge.weight) {
            return Err(ModelError::WeightOutOfRange(edge.weight));
        }
        let mut next = self.bumped(now);
        let identity = edge.identity();
        next.edges.retain(|e| e.identity() != identity);
        next.edges.push(edge);
        next.edges
            .sort_by(|a, b| a.identity().cmp(&b.identity()));
        if let Some((src, dst)) = prerequisite_cycle(&next.edges) {
            return Err(ModelError::PrerequisiteCycle { src, dst });
        }
        Ok(next)
    }

    /// Store a feature under its key. Invariants checked here: probability
    /// and confidence ranges, timestamp order, dimension/key-prefix
    /// agreement, and the trait-decays-slower-than-state rule.
    pub fn set_feature(&self, feature: Feature) -> Result<Self, ModelError> {
        self.set_feature_at(feature, Utc::now())
    }

    pub fn set_feature_at(&self, feature: Feature, now: DateTime<Utc>) -> Result<Self, ModelError> {
        check_feature(&feature)?;
        let mut next = self.bumped(now);
        next.features
            .entry(feature.dimension)
            .or_default()
            .insert(feature.key.clone(), feature);
        Ok(next)
    }

    pub(crate) fn remove_feature(&mut self, key: &str) -> Option<Feature> {
        let dim = Dimension::from_key(key)?;
        self.features.get_mut(&dim).and_then(|m| m.remove(key))
    }

    pub(crate) fn feature_mut(&mut self, key: &str) -> Option<&mut Feature> {
        let dim = Dimension::from_key(key)?;
        self.features.get_mut(&dim).and_then(|m| m.get_mut(key))
    }

    /// Replace the belief model wholesale.
    pub fn attach_belief(&self, beliefs: BeliefModel) -> Result<Self, ModelError> {
        self.attach_belief_at(beliefs, Utc::now())
    }

    pub fn attach_belief_at(
        &self,
        beliefs: BeliefModel,
        now: DateTime<Utc>,
    ) -> Result<Self, ModelError> {
        check_beliefs(&beliefs)?;
        let mut next = self.bumped(now);
        next.beliefs = beliefs;
        Ok(next)
    }
}

pub(crate) fn check_feature(feature: &Feature) -> Result<(), ModelError> {
    if let ScalarValue::Probability(p) = feature.value {
        if !(0.0..=1.0).contains(&p) {
            return Err(ModelError::InvalidProbability(p));
        }
    }
    if !(0.0..=1.0).contains(&feature.confidence) {
        return Err(ModelError::InvalidConfidence(feature.confidence));
    }
    if feature.updated_at < feature.observed_at {
        return Err(ModelError::TimestampOrder);
    }
    if feature.kind == FeatureKind::Trait && feature.decay.lambda >= DEFAULT_STATE_LAMBDA {
        return Err(ModelError::TraitDecayTooFast {
            lambda: feature.decay.lambda,
            max: DEFAULT_STATE_LAMBDA,
        });
    }
    let expected = feature.dimension.key_prefix();
    let mut segments = feature.key.split('.');
    if segments.next() != Some(expected) || segments.next().is_none() {
        return Err(ModelError::KeyDimensionMismatch {
            key: feature.key.clone(),
            expected: expected.to_string(),
        });
    }
    Ok(())
}

pub(crate) fn check_beliefs(beliefs: &BeliefModel) -> Result<(), ModelError> {
    for triple in &beliefs.misconceptions {
        if triple.underlying_belief.trim().is_empty() {
            return Err(ModelError::EmptyTripleField("underlying_belief"));
        }
        if triple.erroneous_example.trim().is_empty() {
            return Err(ModelError::EmptyTripleField("erroneous_example"));
        }
        if triple.triggering_feature.trim().is_empty() {
            return Err(ModelError::EmptyTripleField("triggering_feature"));
        }
    }
    for attribute in beliefs.profile.keys() {
        if !PROFILE_ATTRIBUTES.contains(&attribute.as_str()) {
            return Err(ModelError::UnknownProfileAttribute(attribute.clone()));
        }
    }
    Ok(())
}

/// Returns the first edge that closes a cycle in the prerequisite subgraph,
/// if any. Plain DFS over prerequisite_of adjacency.
fn prerequisite_cycle(edges: &[ContextEdge]) -> Option<(String, String)> {
    let mut adjacency: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for edge in edges {
        if edge.relation == EdgeRelation::PrerequisiteOf {
            adjacency.entry(&edge.src).or_default().push(&edge.dst);
        }
    }
    let mut done: BTreeSet<&str> = BTreeSet::new();
    for &start in adjacency.keys() {
        if done.contains(start) {
            continue;
        }
        let mut in_progress: BTreeSet<&str> = BTreeSet::new();
        let mut stack: Vec<(&str, usize)> = vec![(start, 0)];
        in_progress.insert(start);
        while let Some((node, next_child)) = stack.pop() {
            let children = adjacency.get(node).map(Vec::as_slice).unwrap_or(&[]);
            if next_child < children.len() {
                stack.push((node, next_child + 1));
                let child = children[next_child];
                if in_progress.contains(child) {
                    return Some((node.to_string(), child.to_string()));
                }
                if !done.contains(child) {
                    in_progress.insert(child);
                    stack.push((child, 0));
                }
            } else {
                in_progress.remove(node);
                done.insert(node);
            }
        }
    }
    None
}
