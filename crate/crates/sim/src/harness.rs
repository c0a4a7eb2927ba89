//! Runners behind the CLI: generate populations, drive the closed loop, and
//! emit stable JSON reports.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use lc_core::fixtures::{epoch, random_belief_model};
use lc_core::model::{
    BeliefModel, ConsentScope, Dimension, Feature, FeatureKind, LearnerContext, ProfileLevel,
    Provenance, ScalarValue, Sensitivity,
};
use lc_core::temporal::DecayPolicy;

use crate::agents::{ReferenceLearner, ReferenceRecovery, ReferenceTutor};
use crate::dialogue::{
    consistency_score, recover_context, recovery_rates_percent, Condition, ConsistencyResult,
    SimError, Simulator,
};

fn probability_for(level: ProfileLevel) -> f64 {
    match level {
        ProfileLevel::Low => 0.2,
        ProfileLevel::Medium => 0.5,
        ProfileLevel::High => 0.8,
    }
}

/// Wrap a belief model in a minimal servable context: the belief model plus
/// affect/knowledge features derived from the profile so snapshots are
/// non-empty.
pub fn context_for_beliefs(
    learner_id: &str,
    beliefs: &BeliefModel,
    now: DateTime<Utc>,
) -> LearnerContext {
    let mut ctx = LearnerContext::new_at(learner_id, now).expect("non-empty learner id");
    let anxiety = beliefs
        .profile
        .get("anxiety")
        .copied()
        .unwrap_or(ProfileLevel::Medium);
    let feature = |key: &str, value: f64| Feature {
        key: key.to_string(),
        dimension: Dimension::from_key(key).expect("fixture keys carry prefixes"),
        kind: FeatureKind::State,
        value: ScalarValue::Probability(value),
        confidence: 1.0,
        observed_at: now,
        updated_at: now,
        decay: DecayPolicy::state_default(),
        sensitivity: Sensitivity::Low,
        provenance: Provenance::new("simulation", ConsentScope::Instruction, now),
        demoted_at: None,
    };
    ctx = ctx
        .set_feature_at(feature("who.affect.anxiety", probability_for(anxiety)), now)
        .expect("valid fixture feature");
    ctx = ctx
        .set_feature_at(feature("who.knowledge.focus_skill", 0.4), now)
        .expect("valid fixture feature");
    ctx.attach_belief_at(beliefs.clone(), now)
        .expect("fixture beliefs validate")
}

/// n randomized learners for closed-loop runs.
pub fn closed_loop_population(n: usize, seed: u64) -> Vec<LearnerContext> {
    (0..n)
        .map(|i| {
            let beliefs = random_belief_model(seed.wrapping_add(i as u64));
            context_for_beliefs(&format!("sim-{seed}-{i}"), &beliefs, epoch())
        })
        .collect()
}

/// n learners whose dominant need is anxiety support: the reference
/// warm-start configuration (the anxiety signal is observable from the
/// first student turn, so the blind tutor aligns right after its probes).
pub fn warmstart_population(n: usize, seed: u64) -> Vec<LearnerContext> {
    (0..n)
        .map(|i| {
            let mut beliefs = random_belief_model(seed.wrapping_add(i as u64));
            beliefs
                .profile
                .insert("anxiety".to_string(), ProfileLevel::High);
            context_for_beliefs(&format!("trial-{seed}-{i}"), &beliefs, epoch())
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub cases: usize,
    pub turns: usize,
    pub seed: u64,
    /// Per-attribute recovery accuracy, percent, one decimal.
    pub rates_percent: BTreeMap<String, f64>,
    pub mean_overall: f64,
    /// True when every case recovered with consistency 1.0.
    pub all_consistent: bool,
}

/// Simulate, recover, and score `n` randomized learners at a fixed dialogue
/// length. Deterministic given the seed.
pub fn run_closed_loop(n: usize, turns: usize, seed: u64) -> Result<ClosedLoopReport, SimError> {
    let sim = Simulator::default();
    let learner = ReferenceLearner::default();
    let tutor = ReferenceTutor::default();
    let recovery = ReferenceRecovery;
    let mut results: Vec<ConsistencyResult> = Vec::with_capacity(n);
    for (i, ctx) in closed_loop_population(n, seed).iter().enumerate() {
        let transcript = sim.simulate_dialogue(
            ctx,
            &learner,
            &tutor,
            turns,
            Condition::ContextAware,
            seed.wrapping_add(i as u64),
        )?;
        let (recovered, _evidence) = recover_context(&transcript, &recovery)?;
        results.push(consistency_score(&ctx.beliefs, &recovered));
    }
    let mean_overall = results.iter().map(|r| r.overall).sum::<f64>() / results.len().max(1) as f64;
    Ok(ClosedLoopReport {
        cases: n,
        turns,
        seed,
        rates_percent: recovery_rates_percent(&results),
        mean_overall,
        all_consistent: results.iter().all(|r| r.overall == 1.0),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub turns: usize,
    pub rates_percent: BTreeMap<String, f64>,
}

/// Recovery accuracy as a function of dialogue length, over even lengths
/// from 2 to `max_turns`.
pub fn truncation_sweep(n: usize, max_turns: usize, seed: u64) -> Result<Vec<SweepPoint>, SimError> {
    let mut sweep = Vec::new();
    let mut turns = 2;
    while turns <= max_turns {
        let report = run_closed_loop(n, turns, seed)?;
        sweep.push(SweepPoint {
            turns,
            rates_percent: report.rates_percent,
        });
        turns += 2;
    }
    Ok(sweep)
}
