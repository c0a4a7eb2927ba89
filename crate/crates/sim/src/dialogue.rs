//! Closed-loop dialogue simulation: generate a context-conditioned
//! transcript, recover the belief model from it, and score consistency
//! across the generation-recovery loop.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use lc_core::model::{BeliefModel, ConsentScope, LearnerContext};
use lc_core::prioritize::TaskKind;
use lc_core::privacy::DisclosurePolicy;
use lc_core::LcConfig;
use lc_protocol::{assemble_snapshot, SnapshotRequest};

use crate::agents::{LearnerAgent, RecoveryAgent, TutorAgent};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("dialogue length {0} is odd; turns must pair tutor/student")]
    OddTurnCount(usize),
    #[error("dialogue needs at least two turns, got {0}")]
    TooFewTurns(usize),
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("recovery evidence {0:?} is not a transcript substring")]
    EvidenceNotInTranscript(String),
    #[error("injection schedule length {got} does not match {expected} decision points")]
    ScheduleLengthMismatch { got: usize, expected: usize },
    #[error("trial needs at least two contexts, got {0}")]
    TooFewContexts(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Speaker {
    Tutor,
    Student,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    ContextAware,
    ContextBlind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Turn {
    pub speaker: Speaker,
    pub text: String,
    /// 1-based global turn index; tutors speak on odd turns.
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub turns: Vec<Turn>,
    pub seed: u64,
    pub condition: Condition,
}

impl Transcript {
    pub fn full_text(&self) -> String {
        self.turns
            .iter()
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }

    pub fn student_turns(&self) -> impl Iterator<Item = &Turn> {
        self.turns.iter().filter(|t| t.speaker == Speaker::Student)
    }
}

/// Simulation harness carrying the disclosure policy and config the
/// in-process snapshot pipeline needs.
#[derive(Debug, Clone)]
pub struct Simulator {
    pub policy: DisclosurePolicy,
    pub config: LcConfig,
}

impl Default for Simulator {
    fn default() -> Self {
        Self {
            policy: DisclosurePolicy::permissive(),
            config: LcConfig::default(),
        }
    }
}

impl Simulator {
    /// Generate one tutor-first dialogue. Context-aware dialogues pass a
    /// snapshot (built in-process through the serving pipeline) to the
    /// tutor; context-blind dialogues pass none. The learner agent never
    /// sees the condition.
    pub fn simulate_dialogue(
        &self,
        lc: &LearnerContext,
        learner_agent: &dyn LearnerAgent,
        tutor_agent: &dyn TutorAgent,
        turns: usize,
        condition: Condition,
        seed: u64,
    ) -> Result<Transcript, SimError> {
        if turns < 2 {
            return Err(SimError::TooFewTurns(turns));
        }
        if turns % 2 != 0 {
            return Err(SimError::OddTurnCount(turns));
        }
        let snapshot = match condition {
            Condition::ContextBlind => None,
            Condition::ContextAware => assemble_snapshot(
                lc,
                &self.policy,
                &self.config,
                &SnapshotRequest {
                    purpose: ConsentScope::Instruction,
                    task: TaskKind::FormativeFeedback,
                    budget: lc.feature_count().max(1),
                },
                lc.clock,
            )
            .ok()
            .map(|(snapshot, _)| snapshot),
        };

        let mut transcript = Transcript {
            turns: Vec::with_capacity(turns),
            seed,
            condition,
        };
        for index in 1..=turns {
            let text = if index % 2 == 1 {
                tutor_agent.utterance(
                    snapshot.as_ref(),
                    &transcript.turns,
                    index / 2 + 1,
                    seed,
                )
            } else {
                learner_agent.utterance(&lc.beliefs, &transcript.turns, index, seed)
            };
            transcript.turns.push(Turn {
                speaker: if index % 2 == 1 {
                    Speaker::Tutor
                } else {
                    Speaker::Student
                },
                text,
                index,
            });
        }
        Ok(transcript)
    }
}

/// Recover a belief model from a transcript. Every claim must carry a
/// quoted evidence span that appears verbatim in the transcript.
pub fn recover_context(
    transcript: &Transcript,
    recovery_agent: &dyn RecoveryAgent,
) -> Result<(BeliefModel, BTreeMap<String, String>), SimError> {
    if transcript.turns.is_empty() {
        return Err(SimError::EmptyTranscript);
    }
    let (beliefs, evidence) = recovery_agent.recover(transcript);
    let haystack = transcript.full_text();
    for span in evidence.values() {
        if !haystack.contains(span.as_str()) {
            return Err(SimError::EvidenceNotInTranscript(span.clone()));
        }
    }
    Ok((beliefs, evidence))
}

pub const CONSISTENCY_ATTRIBUTES: [&str; 4] = [
    "misconception",
    "anxiety",
    "conscientiousness",
    "language_proficiency",
];

/// Per-attribute agreement between an original and a recovered belief model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyResult {
    pub per_attribute: BTreeMap<String, bool>,
    pub overall: f64,
}

fn normalize(text: &str) -> String {
    text.to_lowercase()
        .chars()
        .filter(|c| c.is_alphanumeric() || c.is_whitespace())
        .collect::<String>()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// Compare original and recovered models. The misconception counts as
/// correct when the normalized underlying-belief sets match exactly; each
/// profile attribute when the levels are equal. Unknown (missing) recovered
/// attributes count as incorrect.
pub fn consistency_score(original: &BeliefModel, recovered: &BeliefModel) -> ConsistencyResult {
    let originals: std::collections::BTreeSet<String> = original
        .misconceptions
        .iter()
        .map(|t| normalize(&t.underlying_belief))
        .collect();
    let recovereds: std::collections::BTreeSet<String> = recovered
        .misconceptions
        .iter()
        .map(|t| normalize(&t.underlying_belief))
        .collect();
    let mut per_attribute = BTreeMap::new();
    per_attribute.insert("misconception".to_string(), originals == recovereds);
    for attribute in ["anxiety", "conscientiousness", "language_proficiency"] {
        let correct = match (original.profile.get(attribute), recovered.profile.get(attribute)) {
            (Some(a), Some(b)) => a == b,
            (None, None) => true,
            _ => false,
        };
        per_attribute.insert(attribute.to_string(), correct);
    }
    let overall = per_attribute.values().filter(|&&v| v).count() as f64
        / per_attribute.len() as f64;
    ConsistencyResult {
        per_attribute,
        overall,
    }
}

/// Per-attribute recovery rates as percentages rounded to one decimal.
pub fn recovery_rates_percent(results: &[ConsistencyResult]) -> BTreeMap<String, f64> {
    let mut rates = BTreeMap::new();
    if results.is_empty() {
        return rates;
    }
    let n = results.len() as f64;
    for attribute in CONSISTENCY_ATTRIBUTES {
        let correct = results
            .iter()
            .filter(|r| r.per_attribute.get(attribute).copied().unwrap_or(false))
            .count() as f64;
        rates.insert(attribute.to_string(), (correct / n * 1000.0).round() / 10.0);
    }
    rates
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{ReferenceLearner, ReferenceRecovery, ReferenceTutor};
    use lc_core::model::{MisconceptionTriple, ProfileLevel};

    fn beliefs() -> BeliefModel {
        BeliefModel {
            misconceptions: vec![MisconceptionTriple {
                underlying_belief: "squaring distributes over addition".into(),
                erroneous_example: "(a+b)^2 = a^2+b^2".into(),
                triggering_feature: "binomial square prompts".into(),
            }],
            profile: [
                ("anxiety".to_string(), ProfileLevel::High),
                ("conscientiousness".to_string(), ProfileLevel::Low),
                ("language_proficiency".to_string(), ProfileLevel::Low),
            ]
            .into(),
        }
    }

    fn ctx_with_beliefs() -> LearnerContext {
        LearnerContext::new_at("sim-learner", lc_core::fixtures::epoch())
            .unwrap()
            .attach_belief_at(beliefs(), lc_core::fixtures::epoch())
            .unwrap()
    }

    #[test]
    fn transcript_contains_erroneous_example_verbatim() {
        let sim = Simulator::default();
        let transcript = sim
            .simulate_dialogue(
                &ctx_with_beliefs(),
                &ReferenceLearner::default(),
                &ReferenceTutor::default(),
                6,
                Condition::ContextBlind,
                7,
            )
            .unwrap();
        assert!(transcript.full_text().contains("(a+b)^2 = a^2+b^2"));
    }

    #[test]
    fn conditions_differ_only_in_tutor_turns() {
        let sim = Simulator::default();
        let ctx = ctx_with_beliefs();
        let learner = ReferenceLearner::default();
        let tutor = ReferenceTutor::default();
        let aware = sim
            .simulate_dialogue(&ctx, &learner, &tutor, 8, Condition::ContextAware, 3)
            .unwrap();
        let blind = sim
            .simulate_dialogue(&ctx, &learner, &tutor, 8, Condition::ContextBlind, 3)
            .unwrap();
        for (a, b) in aware.turns.iter().zip(blind.turns.iter()) {
            if a.speaker == Speaker::Student {
                assert_eq!(a.text, b.text, "student turn {} diverged", a.index);
            }
        }
    }

    #[test]
    fn odd_turn_count_is_rejected() {
        let sim = Simulator::default();
        let err = sim
            .simulate_dialogue(
                &ctx_with_beliefs(),
                &ReferenceLearner::default(),
                &ReferenceTutor::default(),
                3,
                Condition::ContextBlind,
                1,
            )
            .unwrap_err();
        assert_eq!(err, SimError::OddTurnCount(3));
    }

    #[test]
    fn saturated_dialogue_recovers_the_original_model() {
        let sim = Simulator::default();
        let ctx = ctx_with_beliefs();
        let transcript = sim
            .simulate_dialogue(
                &ctx,
                &ReferenceLearner::default(),
                &ReferenceTutor::default(),
                10,
                Condition::ContextAware,
                11,
            )
            .unwrap();
        let (recovered, evidence) = recover_context(&transcript, &ReferenceRecovery).unwrap();
        let score = consistency_score(&ctx.beliefs, &recovered);
        assert_eq!(score.overall, 1.0, "recovered={recovered:?}");
        assert!(!evidence.is_empty());
    }

    #[test]
    fn truncation_before_onset_leaves_attribute_unknown() {
        let sim = Simulator::default();
        let ctx = ctx_with_beliefs();
        // Two turns: only the first student turn exists, before any
        // conscientiousness onset (configured range starts at 3).
        let transcript = sim
            .simulate_dialogue(
                &ctx,
                &ReferenceLearner::default(),
                &ReferenceTutor::default(),
                2,
                Condition::ContextBlind,
                5,
            )
            .unwrap();
        let (recovered, _) = recover_context(&transcript, &ReferenceRecovery).unwrap();
        assert!(!recovered.profile.contains_key("conscientiousness"));
        let score = consistency_score(&ctx.beliefs, &recovered);
        assert!(!score.per_attribute["conscientiousness"]);
        assert!(score.per_attribute["anxiety"]);
    }

    #[test]
    fn fabricated_evidence_is_rejected() {
        struct LyingRecovery;
        impl RecoveryAgent for LyingRecovery {
            fn recover(
                &self,
                _transcript: &Transcript,
            ) -> (BeliefModel, BTreeMap<String, String>) {
                (
                    BeliefModel::default(),
                    [("profile.anxiety".to_string(), "xyzzy".to_string())].into(),
                )
            }
        }
        let sim = Simulator::default();
        let transcript = sim
            .simulate_dialogue(
                &ctx_with_beliefs(),
                &ReferenceLearner::default(),
                &ReferenceTutor::default(),
                4,
                Condition::ContextBlind,
                2,
            )
            .unwrap();
        assert_eq!(
            recover_context(&transcript, &LyingRecovery).unwrap_err(),
            SimError::EvidenceNotInTranscript("xyzzy".to_string())
        );
    }

    #[test]
    fn consistency_identity_and_partial_credit() {
        let original = beliefs();
        let score = consistency_score(&original, &original);
        assert_eq!(score.overall, 1.0);

        let mut wrong = original.clone();
        wrong
            .profile
            .insert("language_proficiency".to_string(), ProfileLevel::High);
        let score = consistency_score(&original, &wrong);
        assert_eq!(score.overall, 0.75);
    }

    #[test]
    fn thirty_five_case_rates_match_reported_percentages() {
        // Outcome fixture: 32/35, 35/35, 24/35, 21/35 correct.
        let mut results = Vec::new();
        for i in 0..35 {
            let mut per_attribute = BTreeMap::new();
            per_attribute.insert("misconception".to_string(), i < 32);
            per_attribute.insert("anxiety".to_string(), true);
            per_attribute.insert("conscientiousness".to_string(), i < 24);
            per_attribute.insert("language_proficiency".to_string(), i < 21);
            let overall =
                per_attribute.values().filter(|&&v| v).count() as f64 / per_attribute.len() as f64;
            results.push(ConsistencyResult {
                per_attribute,
                overall,
            });
        }
        let rates = recovery_rates_percent(&results);
        assert_eq!(rates["misconception"], 91.4);
        assert_eq!(rates["anxiety"], 100.0);
        assert_eq!(rates["conscientiousness"], 68.6);
        assert_eq!(rates["language_proficiency"], 60.0);
    }
}
