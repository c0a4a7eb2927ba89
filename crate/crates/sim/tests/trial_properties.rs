//! Trial-harness behaviour: alignment timing, effect sizes, micro-randomized
//! estimates, and the privacy/utility sweep.

use lc_core::config::SimConfig;
use lc_core::privacy::GranularityLevel;
use lc_sim::{
    cohens_d, micro_randomized_run, privacy_tradeoff_sweep, warmstart_population,
    warmstart_trial, Condition, ReferenceLearner, ReferenceTutor, Simulator, TrialPlan,
};

fn seeds(n: usize) -> Vec<u64> {
    (0..n as u64).map(|i| 1000 + i).collect()
}

#[test]
fn warm_start_aligns_first_turn_blind_aligns_after_probes() {
    let sim = Simulator::default();
    let contexts = warmstart_population(20, 5);
    let report = warmstart_trial(
        &sim,
        &contexts,
        &ReferenceLearner::default(),
        &ReferenceTutor::default(),
        10,
        &seeds(10),
        Condition::ContextAware,
        Condition::ContextBlind,
    )
    .unwrap();
    assert_eq!(report.runs_per_arm, 200);
    assert_eq!(report.arm_a.mean_time_to_alignment, 1.0);
    assert_eq!(report.arm_b.mean_time_to_alignment, 4.0);
    assert!(report.arm_a.mean_alignment_rate > report.arm_b.mean_alignment_rate);
    assert!(report.cohens_d >= 0.0, "warm start must not hurt: {}", report.cohens_d);
    assert!(report.effect_threshold_met, "d = {}", report.cohens_d);
}

#[test]
fn identical_arms_have_exactly_zero_effect() {
    let sim = Simulator::default();
    let contexts = warmstart_population(20, 9);
    let report = warmstart_trial(
        &sim,
        &contexts,
        &ReferenceLearner::default(),
        &ReferenceTutor::default(),
        10,
        &seeds(10),
        Condition::ContextBlind,
        Condition::ContextBlind,
    )
    .unwrap();
    assert_eq!(report.cohens_d, 0.0);
    assert!(report.cohens_d.abs() < 0.05);
    assert!(!report.effect_threshold_met);
}

#[test]
fn trial_rejects_single_context() {
    let sim = Simulator::default();
    let contexts = warmstart_population(1, 2);
    assert!(warmstart_trial(
        &sim,
        &contexts,
        &ReferenceLearner::default(),
        &ReferenceTutor::default(),
        10,
        &seeds(2),
        Condition::ContextAware,
        Condition::ContextBlind,
    )
    .is_err());
}

#[test]
fn cohens_d_matches_hand_computation() {
    let a = [1.0, 2.0, 3.0];
    let b = [2.0, 3.0, 4.0];
    // pooled variance = 1, d = (2 - 3) / 1
    assert!((cohens_d(&a, &b) + 1.0).abs() < 1e-12);
    assert_eq!(cohens_d(&a, &a), 0.0);
}

fn plan(points: usize, seed: u64) -> TrialPlan {
    TrialPlan {
        arms: vec!["injected".to_string(), "control".to_string()],
        injection_schedule: (0..points).map(|i| i % 2 == 0).collect(),
        seed,
        decision_points: points,
    }
}

#[test]
fn micro_randomized_null_configuration_stays_within_binomial_ci() {
    let mut sim = Simulator::default();
    sim.config.sim.aligned_delta = 0.0;
    let contexts = warmstart_population(10, 31);
    let report = micro_randomized_run(
        &sim,
        &plan(5, 77),
        &contexts,
        &ReferenceTutor::default(),
        60,
    )
    .unwrap();
    assert_eq!(report.runs, 600);
    for point in &report.points {
        let n_i = point.n_injected as f64;
        let n_c = point.n_control as f64;
        assert!(n_i > 100.0 && n_c > 100.0, "unbalanced randomization: {point:?}");
        let pooled = (point.mean_injected * n_i + point.mean_control * n_c) / (n_i + n_c);
        let se = (pooled * (1.0 - pooled) * (1.0 / n_i + 1.0 / n_c)).sqrt();
        assert!(
            point.effect.abs() <= 1.96 * se,
            "null effect outside 95% CI at point {}: {point:?}",
            point.decision_point
        );
    }
}

#[test]
fn micro_randomized_recovers_the_configured_delta() {
    let sim = Simulator::default(); // aligned_delta = 0.2
    let contexts = warmstart_population(10, 13);
    let report = micro_randomized_run(
        &sim,
        &plan(4, 99),
        &contexts,
        &ReferenceTutor::default(),
        250,
    )
    .unwrap();
    for point in &report.points {
        let n_i = point.n_injected as f64;
        let n_c = point.n_control as f64;
        let pooled = (point.mean_injected * n_i + point.mean_control * n_c) / (n_i + n_c);
        let ci = 1.96 * (pooled * (1.0 - pooled) * (1.0 / n_i + 1.0 / n_c)).sqrt();
        assert!(
            (point.effect - 0.2).abs() <= ci,
            "effect {} not within CI {ci} of 0.2 at point {}",
            point.effect,
            point.decision_point
        );
    }
}

#[test]
fn micro_randomized_rejects_short_schedule() {
    let sim = Simulator::default();
    let contexts = warmstart_population(4, 1);
    let mut bad = plan(5, 1);
    bad.injection_schedule.pop();
    assert!(micro_randomized_run(
        &sim,
        &bad,
        &contexts,
        &ReferenceTutor::default(),
        5
    )
    .is_err());
}

#[test]
fn micro_randomized_reports_are_deterministic() {
    let sim = Simulator::default();
    let contexts = warmstart_population(6, 4);
    let a = micro_randomized_run(&sim, &plan(3, 5), &contexts, &ReferenceTutor::default(), 20)
        .unwrap();
    let b = micro_randomized_run(&sim, &plan(3, 5), &contexts, &ReferenceTutor::default(), 20)
        .unwrap();
    assert_eq!(
        serde_json::to_string(&a).unwrap(),
        serde_json::to_string(&b).unwrap()
    );
}

#[test]
fn coarser_disclosure_of_beliefs_costs_outcome() {
    let sim = Simulator::default();
    let contexts = warmstart_population(8, 21);
    let sweep = privacy_tradeoff_sweep(
        &sim,
        &contexts,
        &ReferenceLearner::default(),
        &ReferenceTutor::default(),
        10,
        &seeds(6),
        &[
            GranularityLevel::Exact,
            GranularityLevel::Category,
            GranularityLevel::Redact,
        ],
    )
    .unwrap();
    assert_eq!(sweep.len(), 3);
    assert_eq!(sweep[0].delta_vs_exact, 0.0);
    // Redacting belief-level content deprives the tutor of the need signal;
    // the warm-start outcome must drop.
    let redacted = sweep.iter().find(|o| o.level == GranularityLevel::Redact).unwrap();
    assert!(
        redacted.delta_vs_exact < 0.0,
        "redaction should cost outcome: {sweep:?}"
    );
}

#[test]
fn saturation_turns_covers_the_latest_onset() {
    let config = SimConfig::default();
    assert_eq!(config.saturation_turns(), 10);
}
