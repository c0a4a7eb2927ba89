//! Versioned context storage and cross-platform synchronization: an
//! append-only directory of canonical documents per learner, identifier-level
//! diffs, and deterministic last-writer-wins merge.

mod canonical;

pub use canonical::{
    canonical_deserialize, canonical_serialize, content_hash, digest_of, CanonicalDocument,
    ContextDigest, MEDIA_TYPE, PROFILE,
};

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{BeliefModel, ContextEdge, ContextNode, Feature, LearnerContext};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StoreError {
    #[error("version {version} not found for learner {learner_id}")]
    VersionNotFound { learner_id: String, version: u64 },
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("context fails schema validation: {violations:?}")]
    InvalidContext { violations: Vec<String> },
    #[error("contexts belong to different learners ({0} vs {1})")]
    LearnerMismatch(String, String),
    #[error("merge result fails validation: {violations:?}")]
    PostMergeInvalid { violations: Vec<String> },
}

/// Append-only snapshot store: `<root>/<learner_id>/<version>.jsonld`.
#[derive(Debug, Clone)]
pub struct SnapshotStore {
    root: PathBuf,
}

impl SnapshotStore {
    pub fn open(root: impl AsRef<Path>) -> Result<Self, StoreError> {
        let root = root.as_ref().to_path_buf();
        std::fs::create_dir_all(&root).map_err(|e| StoreError::Storage(e.to_string()))?;
        Ok(Self { root })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn learner_dir(&self, learner_id: &str) -> PathBuf {
        self.root.join(learner_id)
    }

    fn version_path(&self, learner_id: &str, version: u64) -> PathBuf {
        self.learner_dir(learner_id).join(format!("{version}.jsonld"))
    }

    /// Persist a context under its own version. Saving the same version
    /// twice is idempotent for identical bytes and a conflict otherwise.
    pub fn save_snapshot(&self, ctx: &LearnerContext) -> Result<u64, StoreError> {
        let doc = canonical_serialize(ctx)?;
        let dir = self.learner_dir(&ctx.learner_id);
        std::fs::create_dir_all(&dir).map_err(|e| StoreError::Storage(e.to_string()))?;
        let path = self.version_path(&ctx.learner_id, ctx.version);
        if path.exists() {
            let existing = std::fs::read(&path).map_err(|e| StoreError::Storage(e.to_string()))?;
            if existing == doc.bytes {
                return Ok(ctx.version);
            }
            return Err(StoreError::Storage(format!(
                "version {} already exists with different content",
                ctx.version
            )));
        }
        std::fs::write(&path, &doc.bytes).map_err(|e| StoreError::Storage(e.to_string()))?;
        Ok(ctx.version)
    }

    pub fn load_snapshot(&self, learner_id: &str, version: u64) -> Result<LearnerContext, StoreError> {
        let path = self.version_path(learner_id, version);
        let bytes = std::fs::read(&path).map_err(|_| StoreError::VersionNotFound {
            learner_id: learner_id.to_string(),
            version,
        })?;
        canonical_deserialize(&bytes)
    }

    pub fn versions(&self, learner_id: &str) -> Vec<u64> {
        let Ok(entries) = std::fs::read_dir(self.learner_dir(learner_id)) else {
            return Vec::new();
        };
        let mut versions: Vec<u64> = entries
            .flatten()
            .filter_map(|entry| {
                let name = entry.file_name();
                let name = name.to_str()?;
                name.strip_suffix(".jsonld")?.parse().ok()
            })
            .collect();
        versions.sort_unstable();
        versions
    }

    pub fn load_latest(&self, learner_id: &str) -> Result<LearnerContext, StoreError> {
        let version = self
            .versions(learner_id)
            .into_iter()
            .next_back()
            .ok_or_else(|| StoreError::VersionNotFound {
                learner_id: learner_id.to_string(),
                version: 0,
            })?;
        self.load_snapshot(learner_id, version)
    }

    pub fn learner_ids(&self) -> Vec<String> {
        let Ok(entries) = std::fs::read_dir(&self.root) else {
            return Vec::new();
        };
        let mut ids: Vec<String> = entries
            .flatten()
            .filter(|e| e.path().is_dir())
            .filter_map(|e| e.file_name().to_str().map(String::from))
            .collect();
        ids.sort_unstable();
        ids
    }
}

/// Identifier of one diffable component within a context.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "id", rename_all = "snake_case")]
pub enum ComponentId {
    Node(String),
    Edge(String),
    Feature(String),
    Beliefs,
    Meta,
}

/// Identifier-level change set between two contexts. Added entries carry
/// the new component value so the set can be applied as a patch.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ChangeSet {
    pub added: Vec<(ComponentId, Value)>,
    pub removed: Vec<ComponentId>,
    pub modified: Vec<(ComponentId, Value, Value)>,
}

impl ChangeSet {
    pub fn is_empty(&self) -> bool {
        self.added.is_empty() && self.removed.is_empty() && self.modified.is_empty()
    }

    fn sort(&mut self) {
        self.added.sort_by(|a, b| a.0.cmp(&b.0));
        self.removed.sort();
        self.modified.sort_by(|a, b| a.0.cmp(&b.0));
    }
}

fn to_json<T: Serialize>(value: &T) -> Value {
    serde_json::to_value(value).expect("context components serialize")
}

/// Minimal identifier-level change set turning `a` into `b`.
pub fn diff_contexts(a: &LearnerContext, b: &LearnerContext) -> Result<ChangeSet, StoreError> {
    if a.learner_id != b.learner_id {
        return Err(StoreError::LearnerMismatch(
            a.learner_id.clone(),
            b.learner_id.clone(),
        ));
    }
    let mut set = ChangeSet::default();

    diff_maps(
        &a.nodes.iter().map(|(k, v)| (k.clone(), to_json(v))).collect(),
        &b.nodes.iter().map(|(k, v)| (k.clone(), to_json(v))).collect(),
        ComponentId::Node,
        &mut set,
    );
    diff_maps(
        &a.edges.iter().map(|e| (e.identity(), to_json(e))).collect(),
        &b.edges.iter().map(|e| (e.identity(), to_json(e))).collect(),
        ComponentId::Edge,
        &mut set,
    );
    diff_maps(
        &a.features().map(|f| (f.key.clone(), to_json(f))).collect(),
        &b.features().map(|f| (f.key.clone(), to_json(f))).collect(),
        ComponentId::Feature,
        &mut set,
    );

    if a.beliefs != b.beliefs {
        set.modified.push((
            ComponentId::Beliefs,
            to_json(&a.beliefs),
            to_json(&b.beliefs),
        ));
    }
    if a.version != b.version || a.clock != b.clock {
        let meta = |ctx: &LearnerContext| {
            serde_json::json!({ "version": ctx.version, "clock": ctx.clock })
        };
        set.modified.push((ComponentId::Meta, meta(a), meta(b)));
    }
    set.sort();
    Ok(set)
}

fn diff_maps(
    a: &BTreeMap<String, Value>,
    b: &BTreeMap<String, Value>,
    wrap: fn(String) -> ComponentId,
    set: &mut ChangeSet,
) {
    for (key, value) in b {
        match a.get(key) {
            None => set.added.push((wrap(key.clone()), value.clone())),
            Some(old) if old != value => {
                set.modified.push((wrap(key.clone()), old.clone(), value.clone()))
            }
            Some(_) => {}
        }
    }
    for key in a.keys() {
        if !b.contains_key(key) {
            set.removed.push(wrap(key.clone()));
        }
    }
}

/// Apply a change set produced by [`diff_contexts`] to `a`.
pub fn apply_changeset(a: &LearnerContext, set: &ChangeSet) -> Result<LearnerContext, StoreError> {
    let mut ctx = a.clone();
    let parse_err = |e: serde_json::Error| StoreError::Storage(e.to_string());

    for id in &set.removed {
        match id {
            ComponentId::Node(node_id) => {
                ctx.nodes.remove(node_id);
            }
            ComponentId::Edge(identity) => ctx.edges.retain(|e| &e.identity() != identity),
            ComponentId::Feature(key) => {
                ctx.remove_feature(key);
            }
            ComponentId::Beliefs => ctx.beliefs = BeliefModel::default(),
            ComponentId::Meta => {}
        }
    }
    let upserts = set
        .added
        .iter()
        .map(|(id, value)| (id, value))
        .chain(set.modified.iter().map(|(id, _, value)| (id, value)));
    for (id, value) in upserts {
        match id {
            ComponentId::Node(_) => {
                let node: ContextNode = serde_json::from_value(value.clone()).map_err(parse_err)?;
                ctx.nodes.insert(node.id.clone(), node);
            }
            ComponentId::Edge(identity) => {
                let edge: ContextEdge = serde_json::from_value(value.clone()).map_err(parse_err)?;
                ctx.edges.retain(|e| &e.identity() != identity);
                ctx.edges.push(edge);
            }
            ComponentId::Feature(key) => {
                let feature: Feature = serde_json::from_value(value.clone()).map_err(parse_err)?;
                ctx.remove_feature(key);
                ctx.features
                    .entry(feature.dimension)
                    .or_default()
                    .insert(feature.key.clone(), feature);
            }
            ComponentId::Beliefs => {
                ctx.beliefs = serde_json::from_value(value.clone()).map_err(parse_err)?;
            }
            ComponentId::Meta => {
                #[derive(Deserialize)]
                struct Meta {
                    version: u64,
                    clock: chrono::DateTime<chrono::Utc>,
                }
                let meta: Meta = serde_json::from_value(value.clone()).map_err(parse_err)?;
                ctx.version = meta.version;
                ctx.clock = meta.clock;
            }
        }
    }
    ctx.edges.sort_by(|a, b| a.identity().cmp(&b.identity()));
    Ok(ctx)
}

/// Merge result: the merged context, the change set applied to `local`, and
/// feature keys whose State/Trait kind disagreed between the replicas
/// (resolved by LWW; surfaced for audit).
#[derive(Debug, Clone, PartialEq)]
pub struct MergeOutcome {
    pub context: LearnerContext,
    pub applied: ChangeSet,
    pub kind_conflicts: Vec<String>,
}

/// Deterministic, commutative synchronization merge. Equal content hashes
/// short-circuit to a no-op; otherwise conflicting components resolve by
/// last-writer-wins on their timestamps, with ties broken by the
/// lexicographically smaller provenance source and finally by canonical
/// bytes.
pub fn sync_merge(
    local: &LearnerContext,
    remote: &LearnerContext,
) -> Result<MergeOutcome, StoreError> {
    if local.learner_id != remote.learner_id {
        return Err(StoreError::LearnerMismatch(
            local.learner_id.clone(),
            remote.learner_id.clone(),
        ));
    }
    let local_hash = content_hash(local)?;
    let remote_hash = content_hash(remote)?;
    if local_hash == remote_hash {
        return Ok(MergeOutcome {
            context: local.clone(),
            applied: ChangeSet::default(),
            kind_conflicts: Vec::new(),
        });
    }

    let mut merged = local.clone();
    let mut kind_conflicts = Vec::new();

    // Features: union, LWW on updated_at.
    for feature in remote.features() {
        match local.feature(&feature.key) {
            None => {
                merged
                    .features
                    .entry(feature.dimension)
                    .or_default()
                    .insert(feature.key.clone(), feature.clone());
            }
            Some(ours) if ours != feature => {
                if ours.kind != feature.kind {
                    kind_conflicts.push(feature.key.clone());
                }
                let winner = pick(
                    ours,
                    feature,
                    |f| (f.updated_at, f.provenance.source.clone()),
                );
                if !std::ptr::eq(winner, ours) {
                    merged.remove_feature(&feature.key);
                    merged
                        .features
                        .entry(winner.dimension)
                        .or_default()
                        .insert(winner.key.clone(), winner.clone());
                }
            }
            Some(_) => {}
        }
    }

    // Nodes: union, LWW on recorded_at.
    for node in remote.nodes.values() {
        match local.nodes.get(&node.id) {
            None => {
                merged.nodes.insert(node.id.clone(), node.clone());
            }
            Some(ours) if ours != node => {
                let winner = pick(ours, node, |n| {
                    (n.metadata.recorded_at, n.metadata.source.clone())
                });
                merged.nodes.insert(node.id.clone(), winner.clone());
            }
            Some(_) => {}
        }
    }

    // Edges: union by identity, LWW on recorded_at.
    let local_edges: BTreeMap<String, &ContextEdge> =
        local.edges.iter().map(|e| (e.identity(), e)).collect();
    for edge in &remote.edges {
        match local_edges.get(&edge.identity()) {
            None => merged.edges.push(edge.clone()),
            Some(ours) if *ours != edge => {
                let winner = pick(*ours, edge, |e| {
                    (e.metadata.recorded_at, e.metadata.source.clone())
                });
                let identity = edge.identity();
                merged.edges.retain(|e| e.identity() != identity);
                merged.edges.push(winner.clone());
            }
            Some(_) => {}
        }
    }
    merged.edges.sort_by(|a, b| a.identity().cmp(&b.identity()));

    // Beliefs: newer context clock wins, canonical bytes break ties.
    if local.beliefs != remote.beliefs {
        let local_key = (local.clock, to_json(&local.beliefs).to_string());
        let remote_key = (remote.clock, to_json(&remote.beliefs).to_string());
        let take_remote = match remote.clock.cmp(&local.clock) {
            std::cmp::Ordering::Greater => true,
            std::cmp::Ordering::Less => false,
            std::cmp::Ordering::Equal => remote_key.1 < local_key.1,
        };
        if take_remote {
            merged.beliefs = remote.beliefs.clone();
        }
    }

    merged.version = local.version.max(remote.version) + 1;
    merged.clock = local.clock.max(remote.clock);

    let violations = merged.schema_report();
    if !violations.is_empty() {
        return Err(StoreError::PostMergeInvalid {
            violations: violations.into_iter().map(|v| v.message).collect(),
        });
    }
    kind_conflicts.sort_unstable();
    let applied = diff_contexts(local, &merged)?;
    Ok(MergeOutcome {
        context: merged,
        applied,
        kind_conflicts,
    })
}

/// LWW pick: newer timestamp wins; ties prefer the lexicographically smaller
/// source, then the smaller canonical bytes.
fn pick<'a, T: Serialize>(
    ours: &'a T,
    theirs: &'a T,
    key: impl Fn(&T) -> (chrono::DateTime<chrono::Utc>, String),
) -> &'a T {
    let (our_ts, our_source) = key(ours);
    let (their_ts, their_source) = key(theirs);
    match their_ts.cmp(&our_ts) {
        std::cmp::Ordering::Greater => theirs,
        std::cmp::Ordering::Less => ours,
        std::cmp::Ordering::Equal => match their_source.cmp(&our_source) {
            std::cmp::Ordering::Less => theirs,
            std::cmp::Ordering::Greater => ours,
            std::cmp::Ordering::Equal => {
                if to_json(theirs).to_string() < to_json(ours).to_string() {
                    theirs
                } else {
                    ours
                }
            }
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        ConsentScope, Dimension, Feature, FeatureKind, Provenance, ScalarValue, Sensitivity,
    };
    use crate::temporal::DecayPolicy;
    use chrono::{DateTime, TimeZone, Utc};

    fn ts(secs: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + secs, 0).unwrap()
    }

    fn feature(key: &str, p: f64, source: &str, at: DateTime<Utc>) -> Feature {
        Feature {
            key: key.to_string(),
            dimension: Dimension::from_key(key).unwrap(),
            kind: FeatureKind::State,
            value: ScalarValue::Probability(p),
            confidence: 1.0,
            observed_at: at,
            updated_at: at,
            decay: DecayPolicy::state_default(),
            sensitivity: Sensitivity::Low,
            provenance: Provenance::new(source, ConsentScope::Instruction, at),
            demoted_at: None,
        }
    }

    fn ctx() -> LearnerContext {
        LearnerContext::new_at("lea", ts(0))
            .unwrap()
            .set_feature_at(feature("who.affect.anxiety", 0.5, "survey", ts(10)), ts(10))
            .unwrap()
    }

    #[test]
    fn save_then_load_latest_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        let ctx = ctx();
        let version = store.save_snapshot(&ctx).unwrap();
        assert_eq!(version, ctx.version);
        assert_eq!(store.load_latest("lea").unwrap(), ctx);
    }

    #[test]
    fn missing_version_is_not_found() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        assert!(matches!(
            store.load_snapshot("lea", 999),
            Err(StoreError::VersionNotFound { version: 999, .. })
        ));
    }

    #[test]
    fn history_is_append_only_with_increasing_versions() {
        let dir = tempfile::tempdir().unwrap();
        let store = SnapshotStore::open(dir.path()).unwrap();
        let first = ctx();
        store.save_snapshot(&first).unwrap();
        let second = first
            .set_feature_at(feature("who.affect.anxiety", 0.7, "survey", ts(20)), ts(20))
            .unwrap();
        store.save_snapshot(&second).unwrap();
        let versions = store.versions("lea");
        assert_eq!(versions.len(), 2);
        assert!(versions[0] < versions[1]);
    }

    #[test]
    fn diff_of_identical_contexts_is_empty() {
        let a = ctx();
        assert!(diff_contexts(&a, &a).unwrap().is_empty());
    }

    #[test]
    fn diff_reports_one_added_feature() {
        let a = ctx();
        let b = a
            .set_feature_at(feature("who.motivation.value", 0.6, "survey", ts(20)), ts(20))
            .unwrap();
        let set = diff_contexts(&a, &b).unwrap();
        assert_eq!(set.added.len(), 1);
        assert_eq!(
            set.added[0].0,
            ComponentId::Feature("who.motivation.value".to_string())
        );
        assert!(set.removed.is_empty());
        // Meta (version/clock) accompanies the feature addition.
        assert_eq!(set.modified.len(), 1);
        assert_eq!(set.modified[0].0, ComponentId::Meta);
    }

    #[test]
    fn diff_rejects_learner_mismatch() {
        let a = ctx();
        let b = LearnerContext::new_at("other", ts(0)).unwrap();
        assert!(matches!(
            diff_contexts(&a, &b),
            Err(StoreError::LearnerMismatch(..))
        ));
    }

    #[test]
    fn applying_a_diff_reproduces_the_target_hash() {
        let a = ctx();
        let b = a
            .set_feature_at(feature("who.motivation.value", 0.6, "kinetic", ts(30)), ts(30))
            .unwrap()
            .attach_belief_at(
                crate::model::BeliefModel {
                    misconceptions: vec![],
                    profile: [("anxiety".to_string(), crate::model::ProfileLevel::High)].into(),
                },
                ts(40),
            )
            .unwrap();
        let set = diff_contexts(&a, &b).unwrap();
        let patched = apply_changeset(&a, &set).unwrap();
        assert_eq!(
            content_hash(&patched).unwrap().hex,
            content_hash(&b).unwrap().hex
        );
    }

    #[test]
    fn merge_of_equal_hashes_is_a_no_op() {
        let a = ctx();
        let outcome = sync_merge(&a, &a.clone()).unwrap();
        assert_eq!(outcome.context, a);
        assert!(outcome.applied.is_empty());
    }

    #[test]
    fn merge_takes_newer_feature_value() {
        let base = ctx();
        let local = base
            .set_feature_at(feature("who.affect.anxiety", 0.2, "assignable", ts(20)), ts(20))
            .unwrap();
        let remote = base
            .set_feature_at(feature("who.affect.anxiety", 0.9, "kinetic", ts(30)), ts(30))
            .unwrap();
        let outcome = sync_merge(&local, &remote).unwrap();
        let merged = outcome.context.feature("who.affect.anxiety").unwrap();
        assert_eq!(merged.value, ScalarValue::Probability(0.9));
        assert!(outcome.context.version > local.version.max(remote.version));
    }

    #[test]
    fn merge_breaks_timestamp_ties_by_smaller_source() {
        let base = ctx();
        let local = base
            .set_feature_at(feature("who.affect.anxiety", 0.2, "kinetic", ts(20)), ts(20))
            .unwrap();
        let remote = base
            .set_feature_at(feature("who.affect.anxiety", 0.9, "assignable", ts(20)), ts(20))
            .unwrap();
        let outcome = sync_merge(&local, &remote).unwrap();
        let merged = outcome.context.feature("who.affect.anxiety").unwrap();
        assert_eq!(merged.provenance.source, "assignable");
        assert_eq!(merged.value, ScalarValue::Probability(0.9));
    }

    #[test]
    fn merge_is_commutative_on_divergent_replicas() {
        let base = ctx();
        let local = base
            .set_feature_at(feature("who.motivation.value", 0.3, "assignable", ts(20)), ts(20))
            .unwrap();
        let remote = base
            .set_feature_at(feature("who.knowledge.algebra", 0.8, "kinetic", ts(25)), ts(25))
            .unwrap();
        let ab = sync_merge(&local, &remote).unwrap().context;
        let ba = sync_merge(&remote, &local).unwrap().context;
        assert_eq!(
            content_hash(&ab).unwrap().hex,
            content_hash(&ba).unwrap().hex
        );
    }

    #[test]
    fn merge_surfaces_state_trait_kind_conflicts() {
        let base = ctx();
        let mut trait_side = feature("who.affect.anxiety", 0.5, "kinetic", ts(20));
        trait_side.kind = FeatureKind::Trait;
        trait_side.decay = DecayPolicy::trait_default();
        let local = base
            .set_feature_at(feature("who.affect.anxiety", 0.5, "assignable", ts(20)), ts(20))
            .unwrap();
        let remote = base.set_feature_at(trait_side, ts(20)).unwrap();
        let outcome = sync_merge(&local, &remote).unwrap();
        assert_eq!(outcome.kind_conflicts, vec!["who.affect.anxiety".to_string()]);
    }

    #[test]
    fn merge_rejects_cycle_forming_union() {
        use crate::model::{ContextNode, EdgeRelation, NodeKind};
        let mut base = LearnerContext::new_at("lea", ts(0)).unwrap();
        for id in ["a", "b"] {
            base = base
                .upsert_node_at(
                    ContextNode {
                        id: id.to_string(),
                        kind: NodeKind::Skill,
                        dimension: Dimension::What,
                        attributes: Default::default(),
                        metadata: Provenance::new("curriculum", ConsentScope::Instruction, ts(0)),
                    },
                    ts(0),
                )
                .unwrap();
        }
        let edge = |src: &str, dst: &str| ContextEdge {
            src: src.to_string(),
            dst: dst.to_string(),
            relation: EdgeRelation::PrerequisiteOf,
            weight: 1.0,
            attributes: Default::default(),
            metadata: Provenance::new("curriculum", ConsentScope::Instruction, ts(1)),
        };
        let local = base.upsert_edge_at(edge("a", "b"), ts(1)).unwrap();
        let remote = base.upsert_edge_at(edge("b", "a"), ts(1)).unwrap();
        assert!(matches!(
            sync_merge(&local, &remote),
            Err(StoreError::PostMergeInvalid { .. })
        ));
    }
}
