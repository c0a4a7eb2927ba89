//! BKT against an independent brute-force 2-state HMM forward step.

use lc_core::temporal::{bkt_update, BktParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Brute-force forward step: enumerate the hidden state, weight by emission
/// likelihood, normalize, then push the posterior through the transition
/// matrix. Organized as explicit state/matrix enumeration rather than the
/// closed-form update it checks.
fn hmm_forward_oracle(p_mastery: f64, correct: bool, params: &BktParams) -> f64 {
    const MASTERED: usize = 0;
    const NOT_MASTERED: usize = 1;
    let prior = [p_mastery, 1.0 - p_mastery];
    let emission = |state: usize| -> f64 {
        match (state, correct) {
            (MASTERED, true) => 1.0 - params.p_slip,
            (MASTERED, false) => params.p_slip,
            (NOT_MASTERED, true) => params.p_guess,
            (NOT_MASTERED, false) => 1.0 - params.p_guess,
            _ => unreachable!(),
        }
    };
    let joint = [
        prior[MASTERED] * emission(MASTERED),
        prior[NOT_MASTERED] * emission(NOT_MASTERED),
    ];
    let evidence: f64 = joint.iter().sum();
    let posterior = if evidence > 0.0 {
        [joint[MASTERED] / evidence, joint[NOT_MASTERED] / evidence]
    } else if correct {
        [0.0, 1.0]
    } else {
        [1.0, 0.0]
    };
    // Row-stochastic transition: mastery is absorbing, learning moves
    // NOT_MASTERED -> MASTERED with probability p_transit.
    let transition = [[1.0, 0.0], [params.p_transit, 1.0 - params.p_transit]];
    posterior[MASTERED] * transition[MASTERED][MASTERED]
        + posterior[NOT_MASTERED] * transition[NOT_MASTERED][MASTERED]
}

fn random_params(rng: &mut ChaCha8Rng) -> BktParams {
    loop {
        let params = BktParams {
            p_init: rng.random(),
            p_transit: rng.random(),
            p_slip: rng.random_range(0.0..0.6),
            p_guess: rng.random_range(0.0..0.6),
        };
        if params.p_slip + params.p_guess < 1.0 {
            return params;
        }
    }
}

#[test]
fn bkt_matches_hmm_oracle_on_ten_thousand_draws() {
    let started = std::time::Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x6b74);
    for _ in 0..10_000 {
        let params = random_params(&mut rng);
        let p = rng.random::<f64>();
        let correct = rng.random_bool(0.5);
        let got = bkt_update(p, correct, &params).expect("valid params");
        let expected = hmm_forward_oracle(p, correct, &params);
        assert!(
            (got - expected).abs() < 1e-12,
            "p={p} correct={correct} params={params:?}: {got} vs {expected}"
        );
        assert!((0.0..=1.0).contains(&got));
    }
    assert!(started.elapsed().as_secs() < 5, "oracle sweep exceeded 5s");
}

#[test]
fn repeated_correct_answers_are_monotone_without_transit() {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6d6f6e6f);
    for _ in 0..200 {
        let mut params = random_params(&mut rng);
        params.p_transit = 0.0;
        let mut p = rng.random::<f64>();
        for _ in 0..30 {
            let next = bkt_update(p, true, &params).unwrap();
            assert!(
                next >= p - 1e-15,
                "mastery regressed from {p} to {next} under {params:?}"
            );
            p = next;
        }
    }
}

#[test]
fn transit_floor_bounds_the_update_from_below() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xf100f);
    for _ in 0..500 {
        let params = random_params(&mut rng);
        let p = rng.random::<f64>();
        let correct = rng.random_bool(0.5);
        let next = bkt_update(p, correct, &params).unwrap();
        assert!(next >= params.p_transit - 1e-15);
        assert!(next <= 1.0 + 1e-15);
    }
}
