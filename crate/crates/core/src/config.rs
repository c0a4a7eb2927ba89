//! Runtime defaults, overridable from a JSON config file. Every field has a
//! default so partial config files work.

use serde::{Deserialize, Serialize};

/// Default decay constant for volatile State features, per day.
pub const DEFAULT_STATE_LAMBDA: f64 = 0.1;
/// Default decay constant for stable Trait features, per day.
pub const DEFAULT_TRAIT_LAMBDA: f64 = 0.005;
/// Default prunable-weight floor.
pub const DEFAULT_FLOOR: f64 = 0.05;

/// One row of the task-weight table: when serving `task`, features matching
/// `key_prefix` (or, failing that, `dimension`) have their score multiplied
/// by `weight`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskWeight {
    pub task: crate::prioritize::TaskKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key_prefix: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dimension: Option<crate::model::Dimension>,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LcConfig {
    pub state_lambda: f64,
    pub trait_lambda: f64,
    pub floor: f64,
    /// TVD below which a declared-relevant feature counts as invisible.
    pub misalignment_threshold: f64,
    pub task_weights: Vec<TaskWeight>,
    /// Epsilon charged per DP aggregate included in a snapshot.
    pub count_epsilon: f64,
    /// Per-learner total privacy budget.
    pub epsilon_total: f64,
    /// Width of the coarse rounding step for probabilities and reals.
    pub coarse_step: f64,
    /// Lower bounds of the coarse integer buckets, ascending.
    pub integer_bucket_starts: Vec<i64>,
    /// Declared integer scale used for category banding.
    pub integer_scale_max: i64,
    pub sim: SimConfig,
}

impl Default for LcConfig {
    fn default() -> Self {
        Self {
            state_lambda: DEFAULT_STATE_LAMBDA,
            trait_lambda: DEFAULT_TRAIT_LAMBDA,
            floor: DEFAULT_FLOOR,
            misalignment_threshold: 0.1,
            task_weights: vec![
                TaskWeight {
                    task: crate::prioritize::TaskKind::FormativeFeedback,
                    key_prefix: Some("who.affect.".to_string()),
                    dimension: None,
                    weight: 2.0,
                },
                TaskWeight {
                    task: crate::prioritize::TaskKind::Collaboration,
                    key_prefix: None,
                    dimension: Some(crate::model::Dimension::WithWhom),
                    weight: 2.0,
                },
            ],
            count_epsilon: 0.1,
            epsilon_total: 1.0,
            coarse_step: 0.1,
            integer_bucket_starts: vec![0, 13, 19, 26],
            integer_scale_max: 40,
            sim: SimConfig::default(),
        }
    }
}

/// Reference-agent and trial knobs for the simulation harness.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    /// Inclusive turn-index range over which the conscientiousness signal
    /// onset is drawn, per seed.
    pub conscientiousness_onset: (usize, usize),
    /// Same for the language-proficiency signal; starts no earlier than the
    /// conscientiousness range so the observability ordering is fixed.
    pub language_onset: (usize, usize),
    /// Tutor turns a context-blind tutor spends probing before it adapts.
    pub probe_turns: usize,
    /// Next-item success probability without an aligned tutor turn.
    pub base_success: f64,
    /// Added success probability when the tutor turn is aligned.
    pub aligned_delta: f64,
    /// Need -> tutoring strategy mapping used for alignment scoring.
    pub need_strategies: std::collections::BTreeMap<String, String>,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            conscientiousness_onset: (3, 7),
            language_onset: (5, 9),
            probe_turns: 3,
            base_success: 0.5,
            aligned_delta: 0.2,
            need_strategies: [
                ("anxiety_support", "foster_growth_mindset"),
                ("structure_support", "goal_setting_and_monitoring"),
                ("language_support", "simplified_language_scaffolding"),
                ("content_mastery", "guided_practice"),
            ]
            .into_iter()
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect(),
        }
    }
}

impl SimConfig {
    /// Strategy tag for a named need; falls back to guided practice for
    /// unmapped needs.
    pub fn strategy_for(&self, need: &str) -> &str {
        self.need_strategies
            .get(need)
            .map(String::as_str)
            .unwrap_or("guided_practice")
    }
}

impl SimConfig {
    /// Smallest even dialogue length at which every reference signal has
    /// surfaced regardless of seed.
    pub fn saturation_turns(&self) -> usize {
        let latest = self
            .conscientiousness_onset
            .1
            .max(self.language_onset.1)
            .max(2);
        latest + latest % 2
    }
}
