//! Closed-loop context validation and warm-start trial harness, built on
//! deterministic rule-based agents behind a pluggable agent interface.

pub mod agents;
pub mod dialogue;
pub mod harness;
pub mod trial;

pub use agents::{
    dominant_need, strategy_of, LearnerAgent, Need, RecoveryAgent, ReferenceLearner,
    ReferenceRecovery, ReferenceTutor, TutorAgent,
};
pub use dialogue::{
    consistency_score, recover_context, recovery_rates_percent, Condition, ConsistencyResult,
    SimError, Simulator, Speaker, Transcript, Turn,
};
pub use harness::{
    closed_loop_population, context_for_beliefs, run_closed_loop, truncation_sweep,
    warmstart_population, ClosedLoopReport, SweepPoint,
};
pub use trial::{
    cohens_d, micro_randomized_run, privacy_tradeoff_sweep, warmstart_trial, ArmStats,
    LevelOutcome, MicroReport, PointEffect, TrialPlan, TrialReport, EFFECT_THRESHOLD,
};
