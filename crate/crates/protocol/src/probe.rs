//! Context-fidelity probes: embedded test fixtures verifying the serving
//! pipeline includes, excludes, and blurs exactly what policy dictates, and
//! that missing data is never fabricated.

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use lc_core::model::LearnerContext;
use lc_core::privacy::{DisclosurePolicy, GranularityLevel};
use lc_core::LcConfig;

use crate::snapshot::{assemble_snapshot, SnapshotError, SnapshotRequest};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FidelityProbe {
    pub probe_id: String,
    /// Fabricated context fixture, as canonical context JSON.
    pub context: Value,
    #[serde(default)]
    pub request: Option<SnapshotRequest>,
    #[serde(default)]
    pub must_include: Vec<String>,
    #[serde(default)]
    pub must_exclude: Vec<String>,
    /// Required granularity per served key.
    #[serde(default)]
    pub granularity: BTreeMap<String, GranularityLevel>,
    /// Expected pipeline error, e.g. "empty_after_filtering" for the
    /// graceful-empty check.
    #[serde(default)]
    pub expect_error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub probe_id: String,
    pub passed: bool,
    pub failures: Vec<String>,
}

/// Install the fixture in isolation, run the snapshot pipeline, and evaluate
/// every assertion. Returns Err for structurally invalid probes.
pub fn run_probe(
    probe: &FidelityProbe,
    policy: &DisclosurePolicy,
    config: &LcConfig,
    now: DateTime<Utc>,
) -> Result<ProbeReport, String> {
    let mut fixture_value = probe.context.clone();
    if let Value::Object(map) = &mut fixture_value {
        map.remove("@context");
    }
    let fixture: LearnerContext = serde_json::from_value(fixture_value)
        .map_err(|e| format!("probe fixture is not a valid context: {e}"))?;

    // Assertions may reference fixture keys only.
    let fixture_keys: Vec<&str> = fixture.features().map(|f| f.key.as_str()).collect();
    for key in probe
        .must_include
        .iter()
        .chain(probe.must_exclude.iter())
        .chain(probe.granularity.keys())
    {
        if !fixture_keys.contains(&key.as_str()) {
            return Err(format!("assertion references non-fixture key {key}"));
        }
    }

    let request = probe.request.clone().unwrap_or(SnapshotRequest {
        purpose: lc_core::model::ConsentScope::Instruction,
        task: lc_core::prioritize::TaskKind::Generic,
        budget: fixture.feature_count().max(1),
    });

    let mut failures = Vec::new();
    match assemble_snapshot(&fixture, policy, config, &request, now) {
        Ok((snapshot, _denied)) => {
            if let Some(expected) = &probe.expect_error {
                failures.push(format!("expected error {expected}, got a snapshot"));
            }
            let served: BTreeMap<&str, &crate::snapshot::WorkingEntry> = snapshot
                .working
                .iter()
                .map(|e| (e.key.as_str(), e))
                .collect();
            for key in &probe.must_include {
                if !served.contains_key(key.as_str()) {
                    failures.push(format!("must-include key {key} missing from snapshot"));
                }
            }
            for key in &probe.must_exclude {
                if served.contains_key(key.as_str()) {
                    failures.push(format!("must-exclude key {key} present in snapshot"));
                }
            }
            for (key, required) in &probe.granularity {
                match served.get(key.as_str()) {
                    Some(entry) if entry.granularity == *required => {}
                    Some(entry) => failures.push(format!(
                        "key {key} served at {:?}, required {:?}",
                        entry.granularity, required
                    )),
                    None => failures.push(format!("key {key} absent; cannot check granularity")),
                }
            }
            // Missing-data rule: every served key must exist in the fixture;
            // absent features yield no fabricated values.
            for key in served.keys() {
                if !fixture_keys.contains(key) {
                    failures.push(format!("snapshot fabricated a value for {key}"));
                }
            }
        }
        Err(err) => {
            let label = error_label(&err);
            match &probe.expect_error {
                Some(expected) if *expected == label => {}
                Some(expected) => {
                    failures.push(format!("expected error {expected}, got {label}"))
                }
                None => failures.push(format!("pipeline failed: {err}")),
            }
        }
    }

    Ok(ProbeReport {
        probe_id: probe.probe_id.clone(),
        passed: failures.is_empty(),
        failures,
    })
}

fn error_label(err: &SnapshotError) -> String {
    match err {
        SnapshotError::EmptyAfterFiltering => "empty_after_filtering".to_string(),
        SnapshotError::ZeroBudget => "zero_budget".to_string(),
        other => format!("{other}"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;
    use lc_core::model::{
        ConsentScope, Dimension, Feature, FeatureKind, Provenance, ScalarValue, Sensitivity,
    };
    use lc_core::store::canonical_serialize;
    use lc_core::temporal::DecayPolicy;

    fn ts(secs: i64) -> DateTime<Utc> {
        Utc.timestamp_opt(1_700_000_000 + secs, 0).unwrap()
    }

    fn fixture_json() -> Value {
        let mut pii = Feature {
            key: "who.identity.first_name".to_string(),
            dimension: Dimension::Who,
            kind: FeatureKind::State,
            value: ScalarValue::Text("Sarah".to_string()),
            confidence: 1.0,
            observed_at: ts(0),
            updated_at: ts(0),
            decay: DecayPolicy::state_default(),
            sensitivity: Sensitivity::Pii,
            provenance: Provenance::new("sis", ConsentScope::Instruction, ts(0)),
            demoted_at: None,
        };
        pii.sensitivity = Sensitivity::Pii;
        let ctx = LearnerContext::new_at("probe-learner", ts(0))
            .unwrap()
            .set_feature_at(pii, ts(0))
            .unwrap()
            .set_feature_at(
                Feature {
                    key: "who.affect.anxiety".to_string(),
                    dimension: Dimension::Who,
                    kind: FeatureKind::State,
                    value: ScalarValue::Probability(0.7),
                    confidence: 1.0,
                    observed_at: ts(0),
                    updated_at: ts(0),
                    decay: DecayPolicy::state_default(),
                    sensitivity: Sensitivity::Low,
                    provenance: Provenance::new("survey", ConsentScope::Instruction, ts(0)),
                    demoted_at: None,
                },
                ts(0),
            )
            .unwrap();
        serde_json::from_slice(&canonical_serialize(&ctx).unwrap().bytes).unwrap()
    }

    #[test]
    fn probe_confirms_pii_redaction() {
        let probe = FidelityProbe {
            probe_id: "pii-redact".to_string(),
            context: fixture_json(),
            request: None,
            must_include: vec!["who.affect.anxiety".to_string()],
            must_exclude: vec![],
            granularity: [(
                "who.identity.first_name".to_string(),
                GranularityLevel::Redact,
            )]
            .into(),
            expect_error: None,
        };
        let report = run_probe(
            &probe,
            &DisclosurePolicy::permissive(),
            &LcConfig::default(),
            ts(60),
        )
        .unwrap();
        assert!(report.passed, "failures: {:?}", report.failures);
    }

    #[test]
    fn probe_fails_when_denied_key_is_asserted_present() {
        let mut policy = DisclosurePolicy::permissive();
        policy.deny_keys = vec!["who.affect.*".to_string()];
        let probe = FidelityProbe {
            probe_id: "deny-contradiction".to_string(),
            context: fixture_json(),
            request: None,
            must_include: vec!["who.affect.anxiety".to_string()],
            must_exclude: vec![],
            granularity: BTreeMap::new(),
            expect_error: None,
        };
        let report = run_probe(&probe, &policy, &LcConfig::default(), ts(60)).unwrap();
        assert!(!report.passed);
        assert!(report.failures[0].contains("who.affect.anxiety"));
    }

    #[test]
    fn probe_accepts_graceful_empty_error() {
        let empty = LearnerContext::new_at("probe-empty", ts(0)).unwrap();
        let probe = FidelityProbe {
            probe_id: "graceful-empty".to_string(),
            context: serde_json::to_value(&empty).unwrap(),
            request: None,
            must_include: vec![],
            must_exclude: vec![],
            granularity: BTreeMap::new(),
            expect_error: Some("empty_after_filtering".to_string()),
        };
        let report = run_probe(
            &probe,
            &DisclosurePolicy::permissive(),
            &LcConfig::default(),
            ts(60),
        )
        .unwrap();
        assert!(report.passed, "failures: {:?}", report.failures);
    }

    #[test]
    fn probe_rejects_assertions_on_non_fixture_keys() {
        let probe = FidelityProbe {
            probe_id: "bad-assertion".to_string(),
            context: fixture_json(),
            request: None,
            must_include: vec!["who.not.present".to_string()],
            must_exclude: vec![],
            granularity: BTreeMap::new(),
            expect_error: None,
        };
        assert!(run_probe(
            &probe,
            &DisclosurePolicy::permissive(),
            &LcConfig::default(),
            ts(60),
        )
        .is_err());
    }
}
