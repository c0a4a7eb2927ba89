//! Warm-start trial experiments: context-aware vs context-blind factorials
//! with alignment and outcome metrics, micro-randomized injection runs, and
//! the privacy/utility sweep hook.

use serde::{Deserialize, Serialize};

use lc_core::model::{ConsentScope, LearnerContext, Sensitivity};
use lc_core::prioritize::TaskKind;
use lc_core::privacy::{DisclosurePolicy, GranularityLevel};
use lc_protocol::{assemble_snapshot, SnapshotRequest};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::agents::{dominant_need, strategy_of, LearnerAgent, TutorAgent};
use crate::dialogue::{Condition, SimError, Simulator, Speaker, Transcript};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmStats {
    pub condition: Condition,
    pub mean_time_to_alignment: f64,
    pub mean_alignment_rate: f64,
    pub mean_outcome: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub arm_a: ArmStats,
    pub arm_b: ArmStats,
    /// Cohen's d on the outcome score, pooled-SD formulation, arm A minus
    /// arm B.
    pub cohens_d: f64,
    /// Whether d reached the 0.20 go/no-go threshold. Flagged, not asserted.
    pub effect_threshold_met: bool,
    pub runs_per_arm: usize,
    pub turns: usize,
}

pub const EFFECT_THRESHOLD: f64 = 0.20;

#[derive(Debug, Clone, Copy)]
struct RunMetrics {
    time_to_alignment: f64,
    alignment_rate: f64,
    outcome: f64,
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// Outcome noise stream for one run. Seeded by (seed, context, condition)
/// only, so identical conditions reproduce identical draws and an
/// identical-arm trial has exactly zero effect.
fn outcome_rng(seed: u64, context_index: usize, condition: Condition) -> ChaCha8Rng {
    let tag = match condition {
        Condition::ContextAware => 0xA,
        Condition::ContextBlind => 0xB,
    };
    ChaCha8Rng::seed_from_u64(splitmix(
        seed ^ splitmix(context_index as u64) ^ (tag as u64) << 56,
    ))
}

fn run_metrics(
    transcript: &Transcript,
    expected_strategy: &str,
    base_success: f64,
    aligned_delta: f64,
    rng: &mut ChaCha8Rng,
) -> RunMetrics {
    let tutor_turns: Vec<&crate::dialogue::Turn> = transcript
        .turns
        .iter()
        .filter(|t| t.speaker == Speaker::Tutor)
        .collect();
    let mut first_aligned: Option<usize> = None;
    let mut aligned_count = 0usize;
    let mut successes = 0usize;
    for (i, turn) in tutor_turns.iter().enumerate() {
        let aligned = strategy_of(&turn.text) == Some(expected_strategy);
        if aligned {
            aligned_count += 1;
            first_aligned.get_or_insert(i + 1);
        }
        let p = (base_success + if aligned { aligned_delta } else { 0.0 }).clamp(0.0, 1.0);
        if rng.random_bool(p) {
            successes += 1;
        }
    }
    let n = tutor_turns.len().max(1) as f64;
    RunMetrics {
        time_to_alignment: first_aligned.unwrap_or(tutor_turns.len() + 1) as f64,
        alignment_rate: aligned_count as f64 / n,
        outcome: successes as f64 / n,
    }
}

/// Pooled-standard-deviation Cohen's d. Defined as 0 when both samples have
/// zero variance and equal means.
pub fn cohens_d(a: &[f64], b: &[f64]) -> f64 {
    assert!(a.len() >= 2 && b.len() >= 2, "need at least two runs per arm");
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    let var = |xs: &[f64], m: f64| {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (xs.len() - 1) as f64
    };
    let (ma, mb) = (mean(a), mean(b));
    let pooled = ((a.len() - 1) as f64 * var(a, ma) + (b.len() - 1) as f64 * var(b, mb))
        / (a.len() + b.len() - 2) as f64;
    let sd = pooled.sqrt();
    if sd == 0.0 {
        if ma == mb {
            0.0
        } else {
            f64::INFINITY * (ma - mb).signum()
        }
    } else {
        (ma - mb) / sd
    }
}

/// Run both arms over every context x seed and compare outcomes.
#[allow(clippy::too_many_arguments)]
pub fn warmstart_trial(
    sim: &Simulator,
    contexts: &[LearnerContext],
    learner_agent: &dyn LearnerAgent,
    tutor_agent: &dyn TutorAgent,
    turns: usize,
    seeds: &[u64],
    arm_a: Condition,
    arm_b: Condition,
) -> Result<TrialReport, SimError> {
    if contexts.len() < 2 {
        return Err(SimError::TooFewContexts(contexts.len()));
    }
    let mut arm_runs: [Vec<RunMetrics>; 2] = [Vec::new(), Vec::new()];
    for (arm_index, condition) in [arm_a, arm_b].into_iter().enumerate() {
        for (ctx_index, ctx) in contexts.iter().enumerate() {
            let expected = dominant_need(&ctx.beliefs).strategy(&sim.config.sim);
            for &seed in seeds {
                let transcript = sim.simulate_dialogue(
                    ctx,
                    learner_agent,
                    tutor_agent,
                    turns,
                    condition,
                    seed,
                )?;
                let mut rng = outcome_rng(seed, ctx_index, condition);
                arm_runs[arm_index].push(run_metrics(
                    &transcript,
                    &expected,
                    sim.config.sim.base_success,
                    sim.config.sim.aligned_delta,
                    &mut rng,
                ));
            }
        }
    }

    let stats = |runs: &[RunMetrics], condition: Condition| ArmStats {
        condition,
        mean_time_to_alignment: runs.iter().map(|r| r.time_to_alignment).sum::<f64>()
            / runs.len() as f64,
        mean_alignment_rate: runs.iter().map(|r| r.alignment_rate).sum::<f64>()
            / runs.len() as f64,
        mean_outcome: runs.iter().map(|r| r.outcome).sum::<f64>() / runs.len() as f64,
    };
    let outcomes_a: Vec<f64> = arm_runs[0].iter().map(|r| r.outcome).collect();
    let outcomes_b: Vec<f64> = arm_runs[1].iter().map(|r| r.outcome).collect();
    let d = cohens_d(&outcomes_a, &outcomes_b);
    Ok(TrialReport {
        arm_a: stats(&arm_runs[0], arm_a),
        arm_b: stats(&arm_runs[1], arm_b),
        cohens_d: d,
        effect_threshold_met: d >= EFFECT_THRESHOLD,
        runs_per_arm: arm_runs[0].len(),
        turns,
    })
}

/// Micro-randomized plan: at each decision point, inject context or not.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialPlan {
    pub arms: Vec<String>,
    /// Realized randomization for the first run; later runs re-randomize
    /// from `seed`.
    pub injection_schedule: Vec<bool>,
    pub seed: u64,
    pub decision_points: usize,
}

impl TrialPlan {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.injection_schedule.len() != self.decision_points {
            return Err(SimError::ScheduleLengthMismatch {
                got: self.injection_schedule.len(),
                expected: self.decision_points,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointEffect {
    pub decision_point: usize,
    pub n_injected: usize,
    pub n_control: usize,
    pub mean_injected: f64,
    pub mean_control: f64,
    /// Difference in mean next-item success, injected minus control.
    pub effect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MicroReport {
    pub points: Vec<PointEffect>,
    pub runs: usize,
}

/// Estimate the per-decision-point causal footprint of context injection.
/// Next-item success follows Bernoulli(base + delta) when the point was
/// injected and the tutor's strategy matches the learner's dominant need,
/// and Bernoulli(base) otherwise. Decision points are isolated next-item
/// events: the control tutor sees no dialogue history to adapt from.
pub fn micro_randomized_run(
    sim: &Simulator,
    plan: &TrialPlan,
    contexts: &[LearnerContext],
    tutor_agent: &dyn TutorAgent,
    runs_per_context: usize,
) -> Result<MicroReport, SimError> {
    plan.validate()?;
    if contexts.len() < 2 {
        return Err(SimError::TooFewContexts(contexts.len()));
    }
    let points = plan.decision_points;
    let mut injected_success = vec![0usize; points];
    let mut injected_total = vec![0usize; points];
    let mut control_success = vec![0usize; points];
    let mut control_total = vec![0usize; points];

    let mut run_id = 0usize;
    for (ctx_index, ctx) in contexts.iter().enumerate() {
        let expected = dominant_need(&ctx.beliefs).strategy(&sim.config.sim);
        let snapshot = assemble_snapshot(
            ctx,
            &sim.policy,
            &sim.config,
            &SnapshotRequest {
                purpose: ConsentScope::Instruction,
                task: TaskKind::Generic,
                budget: ctx.feature_count().max(1),
            },
            ctx.clock,
        )
        .ok()
        .map(|(snapshot, _)| snapshot);
        for _ in 0..runs_per_context {
            let schedule: Vec<bool> = if run_id == 0 {
                plan.injection_schedule.clone()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(splitmix(plan.seed ^ run_id as u64));
                (0..points).map(|_| rng.random_bool(0.5)).collect()
            };
            let mut outcome_rng = ChaCha8Rng::seed_from_u64(splitmix(
                plan.seed ^ splitmix(run_id as u64) ^ splitmix(ctx_index as u64),
            ));
            for (d, &injected) in schedule.iter().enumerate() {
                let aligned = injected
                    && strategy_of(&tutor_agent.utterance(snapshot.as_ref(), &[], 1, plan.seed))
                        == Some(expected.as_str());
                let p = (sim.config.sim.base_success
                    + if aligned { sim.config.sim.aligned_delta } else { 0.0 })
                .clamp(0.0, 1.0);
                let success = outcome_rng.random_bool(p);
                if injected {
                    injected_total[d] += 1;
                    injected_success[d] += success as usize;
                } else {
                    control_total[d] += 1;
                    control_success[d] += success as usize;
                }
            }
            run_id += 1;
        }
    }

    let points = (0..points)
        .map(|d| {
            let mean_injected = if injected_total[d] > 0 {
                injected_success[d] as f64 / injected_total[d] as f64
            } else {
                0.0
            };
            let mean_control = if control_total[d] > 0 {
                control_success[d] as f64 / control_total[d] as f64
            } else {
                0.0
            };
            PointEffect {
                decision_point: d,
                n_injected: injected_total[d],
                n_control: control_total[d],
                mean_injected,
                mean_control,
                effect: mean_injected - mean_control,
            }
        })
        .collect();
    Ok(MicroReport {
        points,
        runs: run_id,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelOutcome {
    pub level: GranularityLevel,
    pub mean_outcome: f64,
    /// Outcome delta relative to the exact-disclosure run.
    pub delta_vs_exact: f64,
}

/// Privacy/utility sweep: rerun the warm-start arm under increasingly
/// coarse disclosure of High-sensitivity content and report raw outcome
/// deltas. No claim about the tradeoff's shape is hard-coded; the numbers
/// are for the operator.
#[allow(clippy::too_many_arguments)]
pub fn privacy_tradeoff_sweep(
    base: &Simulator,
    contexts: &[LearnerContext],
    learner_agent: &dyn LearnerAgent,
    tutor_agent: &dyn TutorAgent,
    turns: usize,
    seeds: &[u64],
    levels: &[GranularityLevel],
) -> Result<Vec<LevelOutcome>, SimError> {
    let mut outcomes = Vec::new();
    let mut exact_outcome = None;
    for &level in levels {
        let mut policy = DisclosurePolicy::permissive();
        policy.max_granularity.insert(Sensitivity::High, level);
        let sim = Simulator {
            policy,
            config: base.config.clone(),
        };
        let report = warmstart_trial(
            &sim,
            contexts,
            learner_agent,
            tutor_agent,
            turns,
            seeds,
            Condition::ContextAware,
            Condition::ContextBlind,
        )?;
        let mean = report.arm_a.mean_outcome;
        if level == GranularityLevel::Exact {
            exact_outcome = Some(mean);
        }
        outcomes.push((level, mean));
    }
    let baseline = exact_outcome.unwrap_or(outcomes.first().map(|(_, m)| *m).unwrap_or(0.0));
    Ok(outcomes
        .into_iter()
        .map(|(level, mean_outcome)| LevelOutcome {
            level,
            mean_outcome,
            delta_vs_exact: mean_outcome - baseline,
        })
        .collect())
}
