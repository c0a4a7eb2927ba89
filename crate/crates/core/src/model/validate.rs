//! Structural validation: schema conformance, completeness, timestamp
//! integrity, and PII separation. Violations are data, not errors.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{check_beliefs, check_feature, LearnerContext, NodeKind};
use crate::model::{ConsentScope, Dimension, Sensitivity};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationCheck {
    SchemaConformance,
    Completeness,
    TimestampIntegrity,
    PiiSeparation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub check: ValidationCheck,
    /// Identifier of the offending component (node id, feature key, ...).
    pub subject: String,
    pub message: String,
}

/// Outcome of validating one context. A context is valid iff `violations`
/// is empty; an empty non-Who dimension is only a warning.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
    pub warnings: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn schema_violations(&self) -> impl Iterator<Item = &Violation> {
        self.violations
            .iter()
            .filter(|v| v.check == ValidationCheck::SchemaConformance)
    }
}

/// Dimensions whose emptiness the caller has explicitly waived.
#[derive(Debug, Clone, Default)]
pub struct ValidationOptions {
    pub waived_dimensions: Vec<Dimension>,
}

impl LearnerContext {
    pub fn validate(&self) -> ValidationReport {
        self.validate_at(Utc::now(), &ValidationOptions::default())
    }

    pub fn validate_at(&self, now: DateTime<Utc>, options: &ValidationOptions) -> ValidationReport {
        let mut report = ValidationReport::default();
        self.check_schema(&mut report);
        self.check_completeness(options, &mut report);
        self.check_timestamps(now, &mut report);
        self.check_pii(&mut report);
        report
    }

    /// Schema-conformance violations only; the precondition for
    /// serialization and merge, independent of wall clock.
    pub fn schema_report(&self) -> Vec<Violation> {
        let mut report = ValidationReport::default();
        self.check_schema(&mut report);
        report.violations
    }

    fn check_schema(&self, report: &mut ValidationReport) {
        let mut push = |subject: &str, message: String| {
            report.violations.push(Violation {
                check: ValidationCheck::SchemaConformance,
                subject: subject.to_string(),
                message,
            });
        };

        if self.learner_id.is_empty() {
            push("learner_id", "learner id is empty".to_string());
        }
        if self.version == 0 {
            push("version", "version must be at least 1".to_string());
        }

        let learner_nodes: Vec<_> = self
            .nodes
            .values()
            .filter(|n| n.kind == NodeKind::Learner)
            .collect();
        if learner_nodes.len() != 1 {
            push(
                &self.learner_id,
                format!("expected exactly one Learner node, found {}", learner_nodes.len()),
            );
        }

        for node in self.nodes.values() {
            if node.kind.dimension() != node.dimension {
                push(
                    &node.id,
                    format!(
                        "node kind {:?} requires dimension {}, got {}",
                        node.kind,
                        node.kind.dimension(),
                        node.dimension
                    ),
                );
            }
        }

        for edge in &self.edges {
            if !self.nodes.contains_key(&edge.src) || !self.nodes.contains_key(&edge.dst) {
                push(&edge.identity(), "edge endpoint missing".to_string());
            }
            if !(0.0..=1.0).contains(&edge.weight) {
                push(&edge.identity(), format!("weight {} outside [0,1]", edge.weight));
            }
        }
        if let Some((src, dst)) = super::prerequisite_cycle(&self.edges) {
            push(
                &format!("{src}|prerequisite_of|{dst}"),
                "prerequisite subgraph contains a cycle".to_string(),
            );
        }

        for (dim, bucket) in &self.features {
            for (key, feature) in bucket {
                if key != &feature.key || *dim != feature.dimension {
                    push(key, "feature stored under a foreign key or dimension".to_string());
                }
                if let Err(err) = check_feature(feature) {
                    push(key, err.to_string());
                }
            }
        }

        if let Err(err) = check_beliefs(&self.beliefs) {
            push("beliefs", err.to_string());
        }
    }

    fn check_completeness(&self, options: &ValidationOptions, report: &mut ValidationReport) {
        for dim in Dimension::ALL {
            if options.waived_dimensions.contains(&dim) {
                continue;
            }
            let empty = self
                .features
                .get(&dim)
                .map(|m| m.is_empty())
                .unwrap_or(true);
            if !empty {
                continue;
            }
            let violation = Violation {
                check: ValidationCheck::Completeness,
                subject: dim.to_string(),
                message: format!("dimension {dim} carries no features"),
            };
            // A context with no learner features is useless for warm-start;
            // the other dimensions may legitimately start empty.
            if dim == Dimension::Who {
                report.violations.push(violation);
            } else {
                report.warnings.push(violation);
            }
        }
    }

    fn check_timestamps(&self, now: DateTime<Utc>, report: &mut ValidationReport) {
        let mut push = |subject: &str, message: String| {
            report.violations.push(Violation {
                check: ValidationCheck::TimestampIntegrity,
                subject: subject.to_string(),
                message,
            });
        };
        for feature in self.features() {
            if feature.observed_at > now || feature.updated_at > now {
                push(&feature.key, "feature timestamp lies in the future".to_string());
            }
            if feature.updated_at < feature.observed_at {
                push(&feature.key, "updated_at precedes observed_at".to_string());
            }
        }
        for node in self.nodes.values() {
            if node.metadata.recorded_at > now {
                push(&node.id, "node recorded_at lies in the future".to_string());
            }
        }
        for edge in &self.edges {
            if edge.metadata.recorded_at > now {
                push(&edge.identity(), "edge recorded_at lies in the future".to_string());
            }
        }
    }

    fn check_pii(&self, report: &mut ValidationReport) {
        for feature in self.features() {
            if feature.sensitivity == Sensitivity::Pii
                && feature.provenance.consent_scope == ConsentScope::None
            {
                report.violations.push(Violation {
                    check: ValidationCheck::PiiSeparation,
                    subject: feature.key.clone(),
                    message: "PII feature lacks a consent scope".to_string(),
                });
            }
        }
    }
}
