//! Seeded random fixtures: schema-valid contexts, divergent replica pairs,
//! and belief models. Used by the property suites and by the simulation
//! harness to generate trial populations deterministically.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::prelude::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{
    BeliefModel, ConsentScope, ContextEdge, ContextNode, Dimension, EdgeRelation, Feature,
    FeatureKind, LearnerContext, MisconceptionTriple, NodeKind, ProfileLevel, Provenance,
    ScalarValue, Sensitivity, PROFILE_ATTRIBUTES,
};
use crate::temporal::DecayPolicy;

/// Fixed origin for fixture timestamps.
pub fn epoch() -> DateTime<Utc> {
    Utc.timestamp_opt(1_700_000_000, 0).unwrap()
}

const SOURCES: [&str; 4] = ["assignable", "kinetic", "lms", "survey"];

const FEATURE_STEMS: [(&str, Dimension); 10] = [
    ("who.affect.anxiety", Dimension::Who),
    ("who.motivation.self_efficacy", Dimension::Who),
    ("who.knowledge.algebra", Dimension::Who),
    ("who.trait.conscientiousness", Dimension::Who),
    ("with_whom.peer.collaboration_quality", Dimension::WithWhom),
    ("with_whom.instructor.feedback_rate", Dimension::WithWhom),
    ("what.task.difficulty", Dimension::What),
    ("when.session.spacing_days", Dimension::When),
    ("where.platform.name", Dimension::Where),
    ("where.task.modality", Dimension::Where),
];

fn random_scalar(rng: &mut ChaCha8Rng) -> ScalarValue {
    match rng.random_range(0..5) {
        0 => ScalarValue::Probability(rng.random::<f64>()),
        1 => ScalarValue::Real(rng.random::<f64>() * 10.0 - 5.0),
        2 => ScalarValue::Integer(rng.random_range(-3..40)),
        3 => ScalarValue::Text(format!("text-{}", rng.random_range(0..1000))),
        _ => ScalarValue::Categorical(
            ["low", "medium", "high"].choose(rng).unwrap().to_string(),
        ),
    }
}

fn random_provenance(rng: &mut ChaCha8Rng, at: DateTime<Utc>) -> Provenance {
    let consent = match rng.random_range(0..6) {
        0 => ConsentScope::Research,
        5 => ConsentScope::None,
        _ => ConsentScope::Instruction,
    };
    Provenance {
        source: SOURCES.choose(rng).unwrap().to_string(),
        consent_scope: consent,
        retention_until: if rng.random_bool(0.15) {
            Some(at + Duration::days(rng.random_range(1..400)))
        } else {
            None
        },
        recorded_at: at,
    }
}

/// Random feature over one of the fixture keys. PII features carry a
/// distinctive secret token so leakage tests can assert string absence.
pub fn random_feature(rng: &mut ChaCha8Rng, base: DateTime<Utc>) -> Feature {
    let (stem, dimension) = *FEATURE_STEMS.choose(rng).unwrap();
    let key = format!("{stem}_{}", rng.random_range(0..50));
    let kind = if rng.random_bool(0.3) {
        FeatureKind::Trait
    } else {
        FeatureKind::State
    };
    let decay = match kind {
        FeatureKind::State => DecayPolicy::new(rng.random::<f64>() * 0.5, 0.05),
        FeatureKind::Trait => DecayPolicy::new(rng.random::<f64>() * 0.09, 0.05),
    };
    let observed = base + Duration::seconds(rng.random_range(0..86_400));
    let updated = observed + Duration::seconds(rng.random_range(0..3_600));
    let pii = rng.random_bool(0.2);
    let (value, sensitivity) = if pii {
        (
            ScalarValue::Text(format!("PIISECRET{}", rng.random_range(100_000..999_999))),
            Sensitivity::Pii,
        )
    } else {
        (
            random_scalar(rng),
            *[Sensitivity::None, Sensitivity::Low, Sensitivity::High]
                .choose(rng)
                .unwrap(),
        )
    };
    let mut provenance = random_provenance(rng, updated);
    if pii {
        // Keep PII schema-valid: the PII-separation check requires consent.
        provenance.consent_scope = ConsentScope::Instruction;
    }
    Feature {
        key,
        dimension,
        kind,
        value,
        confidence: rng.random::<f64>(),
        observed_at: observed,
        updated_at: updated,
        decay,
        sensitivity,
        provenance,
        demoted_at: None,
    }
}

/// Random misconception triple drawn from a small vocabulary grid.
pub fn random_triple(rng: &mut ChaCha8Rng) -> MisconceptionTriple {
    let beliefs = [
        "squaring distributes over addition",
        "multiplying always makes numbers bigger",
        "negative exponents make values negative",
        "equations stay balanced only when adding",
        "correlation proves causation",
        "dividing by a fraction shrinks the value",
    ];
    let examples = [
        "(a+b)^2 = a^2+b^2",
        "0.5 * 10 = 50",
        "2^-3 = -8",
        "x - 4 = 10 so x = 6",
        "ice cream sales cause drownings",
        "6 / (1/2) = 3",
    ];
    let triggers = [
        "binomial square prompts",
        "decimal multiplication items",
        "negative exponent drills",
        "two-step equation tasks",
        "scatterplot readings",
        "fraction division word problems",
    ];
    let i = rng.random_range(0..beliefs.len());
    MisconceptionTriple {
        underlying_belief: beliefs[i].to_string(),
        erroneous_example: examples[i].to_string(),
        triggering_feature: triggers[i].to_string(),
    }
}

/// Random belief model with 1-2 distinct misconceptions and a full profile.
pub fn random_belief_model(seed: u64) -> BeliefModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut misconceptions = vec![random_triple(&mut rng)];
    if rng.random_bool(0.4) {
        let extra = random_triple(&mut rng);
        if extra.underlying_belief != misconceptions[0].underlying_belief {
            misconceptions.push(extra);
        }
    }
    let mut profile = BTreeMap::new();
    for attribute in PROFILE_ATTRIBUTES {
        let level = *[ProfileLevel::Low, ProfileLevel::Medium, ProfileLevel::High]
            .choose(&mut rng)
            .unwrap();
        profile.insert(attribute.to_string(), level);
    }
    BeliefModel {
        misconceptions,
        profile,
    }
}

/// Randomized schema-valid context built through the mutation operations.
pub fn random_context(seed: u64) -> LearnerContext {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base = epoch();
    let mut ctx = LearnerContext::new_at(&format!("learner-{seed}"), base).unwrap();

    let skill_count = rng.random_range(0..4usize);
    let skills: Vec<String> = (0..skill_count).map(|i| format!("skill-{i}")).collect();
    for skill in &skills {
        let node = ContextNode {
            id: skill.clone(),
            kind: NodeKind::Skill,
            dimension: Dimension::What,
            attributes: BTreeMap::new(),
            metadata: random_provenance(&mut rng, base),
        };
        ctx = ctx.upsert_node_at(node, base).unwrap();
    }
    // Forward-only prerequisite edges keep the subgraph acyclic.
    for i in 0..skills.len() {
        for j in (i + 1)..skills.len() {
            if rng.random_bool(0.4) {
                let edge = ContextEdge {
                    src: skills[i].clone(),
                    dst: skills[j].clone(),
                    relation: EdgeRelation::PrerequisiteOf,
                    weight: rng.random::<f64>(),
                    attributes: BTreeMap::new(),
                    metadata: random_provenance(&mut rng, base),
                };
                ctx = ctx.upsert_edge_at(edge, base).unwrap();
            }
        }
    }
    if rng.random_bool(0.5) {
        let peer = ContextNode {
            id: format!("peer-{}", rng.random_range(0..100)),
            kind: NodeKind::Peer,
            dimension: Dimension::WithWhom,
            attributes: BTreeMap::new(),
            metadata: random_provenance(&mut rng, base),
        };
        ctx = ctx.upsert_node_at(peer, base).unwrap();
    }

    for _ in 0..rng.random_range(1..8usize) {
        let feature = random_feature(&mut rng, base);
        ctx = ctx.set_feature_at(feature, base).unwrap();
    }
    if rng.random_bool(0.7) {
        ctx = ctx
            .attach_belief_at(random_belief_model(seed.wrapping_add(17)), base)
            .unwrap();
    }
    ctx
}

/// Apply a short random mutation burst; used to derive divergent replicas.
pub fn mutate_context(ctx: &LearnerContext, seed: u64) -> LearnerContext {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut ctx = ctx.clone();
    let later = ctx.clock + Duration::seconds(rng.random_range(1..86_400));
    for _ in 0..rng.random_range(1..4usize) {
        match rng.random_range(0..3) {
            0 => {
                let feature = random_feature(&mut rng, later);
                ctx = ctx.set_feature_at(feature, later).unwrap();
            }
            1 => {
                // Overwrite an existing feature with fresher evidence.
                let keys: Vec<String> = ctx.features().map(|f| f.key.clone()).collect();
                if let Some(key) = keys.choose(&mut rng) {
                    let mut feature = ctx.feature(key).unwrap().clone();
                    feature.value = random_scalar(&mut rng);
                    if matches!(feature.value, ScalarValue::Probability(p) if !(0.0..=1.0).contains(&p))
                    {
                        feature.value = ScalarValue::Probability(0.5);
                    }
                    feature.observed_at = later;
                    feature.updated_at = later;
                    feature.provenance = random_provenance(&mut rng, later);
                    ctx = ctx.set_feature_at(feature, later).unwrap();
                }
            }
            _ => {
                ctx = ctx
                    .attach_belief_at(random_belief_model(seed.wrapping_add(31)), later)
                    .unwrap();
            }
        }
    }
    ctx
}

/// A pair of replicas that diverged from a common ancestor.
pub fn divergent_pair(seed: u64) -> (LearnerContext, LearnerContext) {
    let base = random_context(seed);
    (
        mutate_context(&base, seed.wrapping_mul(2).wrapping_add(1)),
        mutate_context(&base, seed.wrapping_mul(2).wrapping_add(2)),
    )
}

/// Relevance-impact misalignment fixture. Each leave-one-out variant moves
/// exactly the target probability mass from one strategy onto a
/// variant-specific one, so the measured TVD equals the target exactly in
/// binary floating point: perceived_value 0.287, self_efficacy 0.207,
/// effort_regulation 0.080, hobby_distractor 0.273.
pub fn misalignment_fixture() -> (
    crate::prioritize::Distribution,
    BTreeMap<String, crate::prioritize::Distribution>,
) {
    use crate::prioritize::Distribution;
    let full = Distribution::new(&[
        ("foster_growth_mindset", 0.287),
        ("goal_setting_and_monitoring", 0.207),
        ("worked_examples", 0.080),
        ("guided_practice", 0.273),
        ("socratic_questioning", 0.153),
    ]);
    let mut variants = BTreeMap::new();
    let moves: [(&str, &str, f64, &str); 4] = [
        ("perceived_value", "foster_growth_mindset", 0.287, "content_review"),
        ("self_efficacy", "goal_setting_and_monitoring", 0.207, "drill_practice"),
        ("effort_regulation", "worked_examples", 0.080, "peer_discussion"),
        ("hobby_distractor", "guided_practice", 0.273, "gamified_quiz"),
    ];
    for (key, from, mass, to) in moves {
        let mut support = Vec::new();
        let mut probs = Vec::new();
        for (label, p) in full.support.iter().zip(full.probs.iter()) {
            support.push(label.clone());
            probs.push(if label == from { 0.0 } else { *p });
        }
        support.push(to.to_string());
        probs.push(mass);
        variants.insert(key.to_string(), Distribution { support, probs });
    }
    (full, variants)
}

/// Declared relevance accompanying [`misalignment_fixture`]: the three MSLQ
/// constructs are fully relevant, the hobby distractor is not.
pub fn misalignment_relevance() -> BTreeMap<String, f64> {
    [
        ("perceived_value".to_string(), 1.0),
        ("self_efficacy".to_string(), 1.0),
        ("effort_regulation".to_string(), 1.0),
        ("hobby_distractor".to_string(), 0.0),
    ]
    .into()
}
