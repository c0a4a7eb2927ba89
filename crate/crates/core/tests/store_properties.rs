//! Canonical-store property suites over randomized contexts: byte-identical
//! round-trips, merge algebra, and diff/patch consistency.

use lc_core::fixtures::{divergent_pair, random_context};
use lc_core::store::{
    apply_changeset, canonical_deserialize, canonical_serialize, content_hash, diff_contexts,
    sync_merge,
};

#[test]
fn thousand_contexts_round_trip_byte_identically() {
    let started = std::time::Instant::now();
    for seed in 0..1_000u64 {
        let ctx = random_context(seed);
        let first = canonical_serialize(&ctx).expect("fixture contexts are schema-valid");
        let back = canonical_deserialize(&first.bytes).expect("canonical bytes parse");
        assert_eq!(back, ctx, "seed {seed} lost information in round-trip");
        let second = canonical_serialize(&back).unwrap();
        assert_eq!(first.bytes, second.bytes, "seed {seed} bytes unstable");
    }
    assert!(started.elapsed().as_secs() < 30, "round-trip sweep exceeded 30s");
}

#[test]
fn hash_equality_implies_merge_no_op() {
    for seed in 0..300u64 {
        let ctx = random_context(seed);
        let replica = canonical_deserialize(&canonical_serialize(&ctx).unwrap().bytes).unwrap();
        assert_eq!(
            content_hash(&ctx).unwrap(),
            content_hash(&replica).unwrap()
        );
        let outcome = sync_merge(&ctx, &replica).unwrap();
        assert_eq!(outcome.context, ctx, "seed {seed} no-op rule violated");
        assert!(outcome.applied.is_empty());
    }
}

#[test]
fn merge_is_commutative_and_idempotent() {
    for seed in 0..300u64 {
        let (a, b) = divergent_pair(seed);
        let ab = sync_merge(&a, &b);
        let ba = sync_merge(&b, &a);
        match (ab, ba) {
            (Ok(ab), Ok(ba)) => {
                assert_eq!(
                    content_hash(&ab.context).unwrap().hex,
                    content_hash(&ba.context).unwrap().hex,
                    "seed {seed} merge not commutative"
                );
                // Idempotence on an already-synchronized pair.
                let again = sync_merge(&ab.context, &ab.context).unwrap();
                assert_eq!(again.context, ab.context);
                assert!(again.applied.is_empty());
            }
            // Divergent replicas never share a learner id mismatch; the only
            // admissible failure would be a post-merge validation error, and
            // the fixture mutations cannot create one.
            (other_a, other_b) => panic!("seed {seed}: {other_a:?} / {other_b:?}"),
        }
    }
}

#[test]
fn diff_then_patch_reproduces_target_hash() {
    for seed in 0..300u64 {
        let (a, b) = divergent_pair(seed);
        let set = diff_contexts(&a, &b).unwrap();
        let patched = apply_changeset(&a, &set).unwrap();
        assert_eq!(
            content_hash(&patched).unwrap().hex,
            content_hash(&b).unwrap().hex,
            "seed {seed} diff/patch mismatch"
        );
        assert!(diff_contexts(&a, &a).unwrap().is_empty());
    }
}

#[test]
fn changeset_partitions_are_disjoint() {
    for seed in 0..200u64 {
        let (a, b) = divergent_pair(seed);
        let set = diff_contexts(&a, &b).unwrap();
        let mut seen = std::collections::BTreeSet::new();
        for (id, _) in &set.added {
            assert!(seen.insert(format!("{id:?}")), "seed {seed} duplicate id");
        }
        for id in &set.removed {
            assert!(seen.insert(format!("{id:?}")), "seed {seed} overlap");
        }
        for (id, _, _) in &set.modified {
            assert!(seen.insert(format!("{id:?}")), "seed {seed} overlap");
        }
    }
}
