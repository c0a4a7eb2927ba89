//! Agent interfaces and the deterministic rule-based reference agents.
//!
//! The reference learner surfaces each misconception triple verbatim and
//! marks profile attributes through fixed lexical signals whose onset turn
//! depends on the seed, so attribute observability varies with dialogue
//! length. The reference recovery agent inverts those signals exactly. LLM
//! agents plug in behind the same traits but are never invoked in tests.

use std::collections::BTreeMap;

use lc_core::config::SimConfig;
use lc_core::model::{BeliefModel, MisconceptionTriple, ProfileLevel};
use lc_protocol::ContextSnapshot;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dialogue::{Speaker, Transcript, Turn};

/// Produces the next learner utterance. Deterministic given the seed; the
/// reference implementation ignores tutor turns entirely so transcripts in
/// different conditions differ only in tutor turns.
pub trait LearnerAgent {
    fn utterance(
        &self,
        beliefs: &BeliefModel,
        history: &[Turn],
        global_turn: usize,
        seed: u64,
    ) -> String;
}

/// Produces the next tutor utterance, optionally warm-started with a
/// context snapshot.
pub trait TutorAgent {
    fn utterance(
        &self,
        snapshot: Option<&ContextSnapshot>,
        history: &[Turn],
        tutor_turn: usize,
        seed: u64,
    ) -> String;
}

/// Reconstructs a belief model from a transcript, with per-claim quoted
/// evidence spans that must be substrings of the transcript.
pub trait RecoveryAgent {
    fn recover(&self, transcript: &Transcript) -> (BeliefModel, BTreeMap<String, String>);
}

/// Learner needs the tutor can align to, in priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Need {
    AnxietySupport,
    StructureSupport,
    LanguageSupport,
    ContentMastery,
}

impl Need {
    pub fn name(self) -> &'static str {
        match self {
            Need::AnxietySupport => "anxiety_support",
            Need::StructureSupport => "structure_support",
            Need::LanguageSupport => "language_support",
            Need::ContentMastery => "content_mastery",
        }
    }

    /// Strategy tag under the config mapping.
    pub fn strategy(self, config: &SimConfig) -> String {
        config.strategy_for(self.name()).to_string()
    }
}

/// Highest-priority need expressed by a profile: high anxiety, then low
/// conscientiousness, then low language proficiency.
pub fn dominant_need(beliefs: &BeliefModel) -> Need {
    if beliefs.profile.get("anxiety") == Some(&ProfileLevel::High) {
        Need::AnxietySupport
    } else if beliefs.profile.get("conscientiousness") == Some(&ProfileLevel::Low) {
        Need::StructureSupport
    } else if beliefs.profile.get("language_proficiency") == Some(&ProfileLevel::Low) {
        Need::LanguageSupport
    } else {
        Need::ContentMastery
    }
}

const PROBE_STRATEGY: &str = "probe";

fn anxiety_marker(level: ProfileLevel) -> &'static str {
    match level {
        ProfileLevel::High => "I'm really worried I'll mess this up.",
        ProfileLevel::Medium => "I'm a bit unsure about this one.",
        ProfileLevel::Low => "I feel confident about this.",
    }
}

fn conscientiousness_marker(level: ProfileLevel) -> &'static str {
    match level {
        ProfileLevel::Low => "I'll just skip the checking step.",
        ProfileLevel::Medium => "I'll check my steps quickly.",
        ProfileLevel::High => "Let me double-check every step carefully.",
    }
}

fn language_marker(level: ProfileLevel) -> &'static str {
    match level {
        ProfileLevel::Low => "Words hard. Math ok.",
        ProfileLevel::Medium => "I can mostly follow the wording.",
        ProfileLevel::High => "The phrasing is perfectly clear to me.",
    }
}

// Delimiters are chosen so content containing periods (decimals, formulas)
// still parses; the closing phrase terminates the claim unambiguously.
const MISCONCEPTION_OPEN: &str = "I keep thinking ";
const MISCONCEPTION_EXAMPLE: &str = " -- for example ";
const MISCONCEPTION_TRIGGER: &str = " -- whenever ";
const MISCONCEPTION_CLOSE: &str = "; that trips me up.";

fn misconception_sentence(triple: &MisconceptionTriple) -> String {
    format!(
        "{MISCONCEPTION_OPEN}{}{MISCONCEPTION_EXAMPLE}{}{MISCONCEPTION_TRIGGER}{}{MISCONCEPTION_CLOSE}",
        triple.underlying_belief, triple.erroneous_example, triple.triggering_feature
    )
}

/// Seed-dependent signal onsets (global turn indices). Anxiety surfaces on
/// every student turn; the slower signals draw their onset uniformly from
/// the configured ranges, conscientiousness strictly earlier than language.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignalOnsets {
    pub conscientiousness: usize,
    pub language: usize,
}

pub fn signal_onsets(config: &SimConfig, seed: u64) -> SignalOnsets {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5157_4f4e);
    let (c_lo, c_hi) = config.conscientiousness_onset;
    let (l_lo, l_hi) = config.language_onset;
    SignalOnsets {
        conscientiousness: rng.random_range(c_lo..=c_hi),
        language: rng.random_range(l_lo..=l_hi),
    }
}

/// The deterministic reference learner.
#[derive(Debug, Clone, Default)]
pub struct ReferenceLearner {
    pub config: SimConfig,
}

impl LearnerAgent for ReferenceLearner {
    fn utterance(
        &self,
        beliefs: &BeliefModel,
        _history: &[Turn],
        global_turn: usize,
        seed: u64,
    ) -> String {
        let onsets = signal_onsets(&self.config, seed);
        let student_turn = global_turn / 2; // students speak on even global turns
        let mut parts: Vec<String> = Vec::new();
        parts.push(format!("Here is my step {student_turn} for the problem."));
        if let Some(triple) = beliefs.misconceptions.get(student_turn - 1) {
            parts.push(misconception_sentence(triple));
        }
        if let Some(&level) = beliefs.profile.get("anxiety") {
            parts.push(anxiety_marker(level).to_string());
        }
        if global_turn >= onsets.conscientiousness {
            if let Some(&level) = beliefs.profile.get("conscientiousness") {
                parts.push(conscientiousness_marker(level).to_string());
            }
        }
        if global_turn >= onsets.language {
            if let Some(&level) = beliefs.profile.get("language_proficiency") {
                parts.push(language_marker(level).to_string());
            }
        }
        parts.join(" ")
    }
}

/// The deterministic reference tutor: warm-started, it names the aligned
/// strategy from its first turn; context-blind, it probes for a fixed number
/// of turns and then adapts to whatever signals the dialogue has surfaced.
#[derive(Debug, Clone, Default)]
pub struct ReferenceTutor {
    pub config: SimConfig,
}

impl ReferenceTutor {
    fn observed_need(history: &[Turn]) -> Option<Need> {
        let student_text: String = history
            .iter()
            .filter(|t| t.speaker == Speaker::Student)
            .map(|t| t.text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        if student_text.contains(anxiety_marker(ProfileLevel::High)) {
            Some(Need::AnxietySupport)
        } else if student_text.contains(conscientiousness_marker(ProfileLevel::Low)) {
            Some(Need::StructureSupport)
        } else if student_text.contains(language_marker(ProfileLevel::Low)) {
            Some(Need::LanguageSupport)
        } else {
            None
        }
    }
}

impl TutorAgent for ReferenceTutor {
    fn utterance(
        &self,
        snapshot: Option<&ContextSnapshot>,
        history: &[Turn],
        tutor_turn: usize,
        _seed: u64,
    ) -> String {
        let strategy = match snapshot.and_then(|s| s.beliefs.as_ref()) {
            Some(beliefs) => dominant_need(beliefs).strategy(&self.config),
            None => {
                if tutor_turn <= self.config.probe_turns {
                    PROBE_STRATEGY.to_string()
                } else {
                    Self::observed_need(history)
                        .unwrap_or(Need::ContentMastery)
                        .strategy(&self.config)
                }
            }
        };
        format!("[strategy:{strategy}] Let's look at your reasoning together.")
    }
}

/// Strategy tag parser used by the trial metrics.
pub fn strategy_of(turn_text: &str) -> Option<&str> {
    let start = turn_text.find("[strategy:")? + "[strategy:".len();
    let end = turn_text[start..].find(']')? + start;
    Some(&turn_text[start..end])
}

/// The deterministic reference recovery agent: inverts the reference
/// learner's lexical signals from student turns alone.
#[derive(Debug, Clone, Default)]
pub struct ReferenceRecovery;

impl RecoveryAgent for ReferenceRecovery {
    fn recover(&self, transcript: &Transcript) -> (BeliefModel, BTreeMap<String, String>) {
        let mut beliefs = BeliefModel::default();
        let mut evidence: BTreeMap<String, String> = BTreeMap::new();
        let levels = [ProfileLevel::Low, ProfileLevel::Medium, ProfileLevel::High];

        for turn in transcript.turns.iter().filter(|t| t.speaker == Speaker::Student) {
            for (triple, span) in parse_misconceptions(&turn.text) {
                if !beliefs
                    .misconceptions
                    .iter()
                    .any(|t| t.underlying_belief == triple.underlying_belief)
                {
                    evidence.insert(
                        format!("misconception.{}", beliefs.misconceptions.len()),
                        span,
                    );
                    beliefs.misconceptions.push(triple);
                }
            }
            for &level in &levels {
                if turn.text.contains(anxiety_marker(level)) {
                    beliefs.profile.insert("anxiety".to_string(), level);
                    evidence.insert("profile.anxiety".to_string(), anxiety_marker(level).to_string());
                }
                if turn.text.contains(conscientiousness_marker(level)) {
                    beliefs.profile.insert("conscientiousness".to_string(), level);
                    evidence.insert(
                        "profile.conscientiousness".to_string(),
                        conscientiousness_marker(level).to_string(),
                    );
                }
                if turn.text.contains(language_marker(level)) {
                    beliefs
                        .profile
                        .insert("language_proficiency".to_string(), level);
                    evidence.insert(
                        "profile.language_proficiency".to_string(),
                        language_marker(level).to_string(),
                    );
                }
            }
        }
        (beliefs, evidence)
    }
}

/// Extract every misconception claim in a turn, with the exact span quoted
/// as evidence.
fn parse_misconceptions(text: &str) -> Vec<(MisconceptionTriple, String)> {
    let mut found = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find(MISCONCEPTION_OPEN) {
        let candidate = &rest[start..];
        let Some(close) = candidate.find(MISCONCEPTION_CLOSE) else {
            break;
        };
        let span = &candidate[..close + MISCONCEPTION_CLOSE.len()];
        let body = &span[MISCONCEPTION_OPEN.len()..close];
        if let Some((belief, after_belief)) = body.split_once(MISCONCEPTION_EXAMPLE) {
            if let Some((example, trigger)) = after_belief.split_once(MISCONCEPTION_TRIGGER) {
                found.push((
                    MisconceptionTriple {
                        underlying_belief: belief.to_string(),
                        erroneous_example: example.to_string(),
                        triggering_feature: trigger.to_string(),
                    },
                    span.to_string(),
                ));
            }
        }
        rest = &candidate[close + MISCONCEPTION_CLOSE.len()..];
    }
    found
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn misconception_sentence_parses_back() {
        let triple = MisconceptionTriple {
            underlying_belief: "multiplying always makes numbers bigger".into(),
            erroneous_example: "0.5 * 10 = 50".into(),
            triggering_feature: "decimal multiplication items".into(),
        };
        let sentence = format!("leading text. {} trailing.", misconception_sentence(&triple));
        let parsed = parse_misconceptions(&sentence);
        assert_eq!(parsed.len(), 1);
        assert_eq!(parsed[0].0, triple);
        assert!(sentence.contains(&parsed[0].1));
    }

    #[test]
    fn onsets_fall_in_configured_ranges() {
        let config = SimConfig::default();
        for seed in 0..100 {
            let onsets = signal_onsets(&config, seed);
            assert!((3..=7).contains(&onsets.conscientiousness));
            assert!((5..=9).contains(&onsets.language));
        }
    }

    #[test]
    fn strategy_tag_round_trips() {
        assert_eq!(
            strategy_of("[strategy:foster_growth_mindset] hello"),
            Some("foster_growth_mindset")
        );
        assert_eq!(strategy_of("no tag"), None);
    }

    #[test]
    fn dominant_need_prioritizes_anxiety() {
        let beliefs = BeliefModel {
            misconceptions: vec![],
            profile: [
                ("anxiety".to_string(), ProfileLevel::High),
                ("conscientiousness".to_string(), ProfileLevel::Low),
            ]
            .into(),
        };
        assert_eq!(dominant_need(&beliefs), Need::AnxietySupport);
    }
}
