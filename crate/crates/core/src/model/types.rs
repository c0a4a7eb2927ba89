//! Core vocabulary of the learner-context graph.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::temporal::DecayPolicy;

/// The five contextual dimensions. Every feature and node belongs to exactly one.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(rename_all = "snake_case")]
pub enum Dimension {
    Who,
    WithWhom,
    What,
    When,
    Where,
}

impl Dimension {
    pub const ALL: [Dimension; 5] = [
        Dimension::Who,
        Dimension::WithWhom,
        Dimension::What,
        Dimension::When,
        Dimension::Where,
    ];

    /// First dotted segment expected of feature keys in this dimension.
    pub fn key_prefix(self) -> &'static str {
        match self {
            Dimension::Who => "who",
            Dimension::WithWhom => "with_whom",
            Dimension::What => "what",
            Dimension::When => "when",
            Dimension::Where => "where",
        }
    }

    /// Parse a dimension from the first segment of a dotted feature key.
    pub fn from_key(key: &str) -> Option<Dimension> {
        let first = key.split('.').next()?;
        Dimension::ALL.into_iter().find(|d| d.key_prefix() == first)
    }
}

impl std::fmt::Display for Dimension {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.key_prefix())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Learner,
    Peer,
    Instructor,
    ContentItem,
    Skill,
    Activity,
    Environment,
}

impl NodeKind {
    /// The dimension a node of this kind must be tagged with.
    pub fn dimension(self) -> Dimension {
        match self {
            NodeKind::Learner => Dimension::Who,
            NodeKind::Peer | NodeKind::Instructor => Dimension::WithWhom,
            NodeKind::ContentItem | NodeKind::Skill | NodeKind::Activity => Dimension::What,
            NodeKind::Environment => Dimension::Where,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EdgeRelation {
    PrerequisiteOf,
    CollaboratesWith,
    AuthoredFeedback,
    Attempted,
    OccursIn,
    MemberOf,
}

impl EdgeRelation {
    pub fn as_str(self) -> &'static str {
        match self {
            EdgeRelation::PrerequisiteOf => "prerequisite_of",
            EdgeRelation::CollaboratesWith => "collaborates_with",
            EdgeRelation::AuthoredFeedback => "authored_feedback",
            EdgeRelation::Attempted => "attempted",
            EdgeRelation::OccursIn => "occurs_in",
            EdgeRelation::MemberOf => "member_of",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConsentScope {
    Research,
    Instruction,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sensitivity {
    None,
    Low,
    High,
    Pii,
}

/// Origin, consent, and retention metadata carried by every stored component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source: String,
    pub consent_scope: ConsentScope,
    /// `None` means retention is unbounded.
    pub retention_until: Option<DateTime<Utc>>,
    pub recorded_at: DateTime<Utc>,
}

impl Provenance {
    pub fn new(source: impl Into<String>, consent_scope: ConsentScope, at: DateTime<Utc>) -> Self {
        Self {
            source: source.into(),
            consent_scope,
            retention_until: None,
            recorded_at: at,
        }
    }
}

/// A single typed context value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "value", rename_all = "snake_case")]
pub enum ScalarValue {
    Real(f64),
    Integer(i64),
    Text(String),
    Categorical(String),
    Probability(f64),
}

impl ScalarValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ScalarValue::Real(v) | ScalarValue::Probability(v) => Some(*v),
            ScalarValue::Integer(v) => Some(*v as f64),
            _ => None,
        }
    }

    /// Human-readable rendering, used by privacy string-absence checks.
    pub fn render(&self) -> String {
        match self {
            ScalarValue::Real(v) | ScalarValue::Probability(v) => format!("{v}"),
            ScalarValue::Integer(v) => format!("{v}"),
            ScalarValue::Text(s) | ScalarValue::Categorical(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureKind {
    State,
    Trait,
}

/// One context variable: a dotted key under its dimension, a typed value, and
/// the freshness/consent metadata that drives decay and disclosure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Feature {
    pub key: String,
    pub dimension: Dimension,
    pub kind: FeatureKind,
    pub value: ScalarValue,
    pub confidence: f64,
    pub observed_at: DateTime<Utc>,
    pub updated_at: DateTime<Utc>,
    pub decay: DecayPolicy,
    pub sensitivity: Sensitivity,
    pub provenance: Provenance,
    /// Set by the pruner when a Trait first dips below the floor; cleared on
    /// recovery. Second trip at a later instant prunes the feature.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub demoted_at: Option<DateTime<Utc>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextNode {
    pub id: String,
    pub kind: NodeKind,
    pub dimension: Dimension,
    #[serde(default)]
    pub attributes: BTreeMap<String, serde_json::Value>,
    pub metadata: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEdge {
    pub src: String,
    pub dst: String,
    pub relation: EdgeRelation,
    pub weight: f64,
    #[serde(default)]
    pub attributes: BTreeMap<String, serde_json::Value>,
    pub metadata: Provenance,
}

impl ContextEdge {
    /// Identity of an edge within a context: (src, relation, dst).
    pub fn identity(&self) -> String {
        format!("{}|{}|{}", self.src, self.relation.as_str(), self.dst)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MisconceptionTriple {
    pub underlying_belief: String,
    pub erroneous_example: String,
    pub triggering_feature: String,
}

/// The fixed profile-attribute vocabulary of the belief model.
pub const PROFILE_ATTRIBUTES: [&str; 3] = ["anxiety", "conscientiousness", "language_proficiency"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileLevel {
    Low,
    Medium,
    High,
}

impl ProfileLevel {
    pub fn as_str(self) -> &'static str {
        match self {
            ProfileLevel::Low => "low",
            ProfileLevel::Medium => "medium",
            ProfileLevel::High => "high",
        }
    }
}

/// Belief-based model: misconception triples plus graded profile attributes.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BeliefModel {
    #[serde(default)]
    pub misconceptions: Vec<MisconceptionTriple>,
    #[serde(default)]
    pub profile: BTreeMap<String, ProfileLevel>,
}

impl BeliefModel {
    pub fn is_empty(&self) -> bool {
        self.misconceptions.is_empty() && self.profile.is_empty()
    }
}
