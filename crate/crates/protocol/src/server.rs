//! The warm-start server: three tools over JSON-RPC (snapshot retrieval,
//! evidence push, fidelity probes), per-learner budgets, and a persisted
//! audit chain. Requests touching the same learner serialize through that
//! learner's lock; distinct learners proceed in parallel.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use chrono::{DateTime, Utc};
use serde_json::{json, Value};

use lc_core::model::{ConsentScope, LearnerContext};
use lc_core::prioritize::TaskKind;
use lc_core::privacy::{
    charge_budget, dp_noisy_count, AuditAction, AuditChain, DisclosurePolicy, PrivacyBudget,
    PrivacyError,
};
use lc_core::store::{SnapshotStore, StoreError};
use lc_core::temporal::{ingest_evidence, BktParams, EvidenceEvent, EvidenceLog};
use lc_core::LcConfig;

use crate::probe::{run_probe, FidelityProbe};
use crate::rpc::{self, Call, RpcError};
use crate::snapshot::{assemble_snapshot, SnapshotError, SnapshotRequest};

pub struct ServerConfig {
    pub store_dir: PathBuf,
    pub policy: DisclosurePolicy,
    pub config: LcConfig,
    /// Injectable clock: when set, every request observes this instant.
    pub fixed_clock: Option<DateTime<Utc>>,
}

struct LearnerSlot {
    budget: PrivacyBudget,
    evidence_log: EvidenceLog,
}

struct AuditSink {
    chain: AuditChain,
    path: PathBuf,
}

impl AuditSink {
    fn append(
        &mut self,
        at: DateTime<Utc>,
        actor: &str,
        action: AuditAction,
        detail: BTreeMap<String, Value>,
    ) {
        let record = self.chain.append(at, actor, action, detail).clone();
        if let Ok(line) = serde_json::to_string(&record) {
            if let Ok(mut file) = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(&self.path)
            {
                let _ = writeln!(file, "{line}");
            }
        }
    }
}

pub struct LcServer {
    store: SnapshotStore,
    policy: DisclosurePolicy,
    config: LcConfig,
    fixed_clock: Option<DateTime<Utc>>,
    slots: Mutex<BTreeMap<String, Arc<Mutex<LearnerSlot>>>>,
    audit: Mutex<AuditSink>,
}

impl LcServer {
    pub fn new(config: ServerConfig) -> Result<Self, StoreError> {
        config
            .policy
            .validate()
            .map_err(|e| StoreError::Storage(e.to_string()))?;
        let store = SnapshotStore::open(&config.store_dir)?;
        let audit_path = config.store_dir.join("audit.jsonl");
        let chain = load_audit_chain(&audit_path)?;
        Ok(Self {
            store,
            policy: config.policy,
            config: config.config,
            fixed_clock: config.fixed_clock,
            slots: Mutex::new(BTreeMap::new()),
            audit: Mutex::new(AuditSink {
                chain,
                path: audit_path,
            }),
        })
    }

    pub fn store(&self) -> &SnapshotStore {
        &self.store
    }

    pub fn audit_len(&self) -> usize {
        self.audit.lock().expect("audit lock").chain.len()
    }

    fn now(&self) -> DateTime<Utc> {
        self.fixed_clock.unwrap_or_else(Utc::now)
    }

    fn slot(&self, learner_id: &str) -> Arc<Mutex<LearnerSlot>> {
        let mut slots = self.slots.lock().expect("slot registry lock");
        slots
            .entry(learner_id.to_string())
            .or_insert_with(|| {
                Arc::new(Mutex::new(LearnerSlot {
                    budget: PrivacyBudget::new(learner_id, self.config.epsilon_total),
                    evidence_log: EvidenceLog::default(),
                }))
            })
            .clone()
    }

    fn audit(&self, action: AuditAction, actor: &str, detail: BTreeMap<String, Value>) {
        self.audit
            .lock()
            .expect("audit lock")
            .append(self.now(), actor, action, detail);
    }

    /// Entry point shared by both transports.
    pub fn handle_line(&self, raw: &str) -> Option<Value> {
        rpc::dispatch(raw, |call| self.handle_call(call))
    }

    fn handle_call(&self, call: &Call) -> Result<Value, RpcError> {
        match call.method.as_str() {
            "tools/list" => Ok(tool_descriptors()),
            "tools/call" => {
                let name = call
                    .params
                    .get("name")
                    .and_then(Value::as_str)
                    .ok_or_else(|| RpcError::new(rpc::INVALID_PARAMS, "tool name missing"))?;
                let arguments = call.params.get("arguments").cloned().unwrap_or(json!({}));
                let payload = match name {
                    "get_context_snapshot" => self.tool_get_context_snapshot(&arguments)?,
                    "push_evidence" => self.tool_push_evidence(&arguments)?,
                    "probe_fidelity" => self.tool_probe_fidelity(&arguments)?,
                    other => {
                        return Err(RpcError::new(
                            rpc::METHOD_NOT_FOUND,
                            format!("unknown tool {other}"),
                        ))
                    }
                };
                Ok(tool_result(payload))
            }
            other => Err(RpcError::new(
                rpc::METHOD_NOT_FOUND,
                format!("unknown method {other}"),
            )),
        }
    }

    /// Serve a budgeted, privacy-filtered snapshot assembled from the latest
    /// stored version of the learner context.
    pub fn tool_get_context_snapshot(&self, args: &Value) -> Result<Value, RpcError> {
        let learner_id = required_str(args, "learner_id")?;
        let purpose = parse_purpose(args.get("purpose"))?;
        let task = match args.get("task").and_then(Value::as_str) {
            None => TaskKind::Generic,
            Some(raw) => TaskKind::parse(raw)
                .ok_or_else(|| RpcError::new(rpc::INVALID_PARAMS, format!("unknown task {raw}")))?,
        };
        let budget = args.get("budget").and_then(Value::as_u64).unwrap_or(10) as usize;
        if budget == 0 {
            return Err(RpcError::new(rpc::INVALID_PARAMS, "budget must be >= 1"));
        }
        let include_noisy_count = args
            .get("include_noisy_count")
            .and_then(Value::as_bool)
            .unwrap_or(false);
        let noise_seed = args.get("noise_seed").and_then(Value::as_u64).unwrap_or(0);

        let slot = self.slot(learner_id);
        let mut slot = slot.lock().expect("learner lock");
        let now = self.now();

        let ctx = self.load_learner(learner_id)?;
        let request = SnapshotRequest {
            purpose,
            task,
            budget,
        };
        let (mut snapshot, trace) =
            assemble_snapshot(&ctx, &self.policy, &self.config, &request, now)
                .map_err(snapshot_error)?;

        if !trace.pruned.is_empty() {
            self.audit(
                AuditAction::FeaturePruned,
                learner_id,
                [
                    ("keys".to_string(), json!(trace.pruned)),
                    ("read_time".to_string(), json!(true)),
                ]
                .into(),
            );
        }
        for (key, reason) in &trace.denied {
            self.audit(
                AuditAction::QueryDenied,
                learner_id,
                [
                    ("key".to_string(), json!(key)),
                    ("reason".to_string(), json!(reason)),
                ]
                .into(),
            );
        }

        if include_noisy_count {
            let epsilon = self.config.count_epsilon;
            slot.budget = charge_budget(&slot.budget, epsilon).map_err(privacy_error)?;
            self.audit(
                AuditAction::BudgetCharged,
                learner_id,
                [
                    ("epsilon".to_string(), json!(epsilon)),
                    ("spent".to_string(), json!(slot.budget.epsilon_spent)),
                ]
                .into(),
            );
            let noisy = dp_noisy_count(ctx.feature_count() as u64, epsilon, noise_seed)
                .map_err(privacy_error)?;
            snapshot.noisy_feature_count = Some(noisy);
        }

        self.audit(
            AuditAction::SnapshotServed,
            learner_id,
            [
                ("purpose".to_string(), json!(purpose)),
                ("budget".to_string(), json!(budget)),
                ("served".to_string(), json!(snapshot.budget_used)),
                ("digest".to_string(), json!(snapshot.context_digest.hex)),
            ]
            .into(),
        );
        serde_json::to_value(&snapshot)
            .map_err(|e| RpcError::new(rpc::INTERNAL_ERROR, e.to_string()))
    }

    /// Apply evidence events in order with partial acceptance; persists the
    /// resulting version once and reports per-event rejections.
    pub fn tool_push_evidence(&self, args: &Value) -> Result<Value, RpcError> {
        let learner_id = required_str(args, "learner_id")?;
        let raw_events = args
            .get("events")
            .and_then(Value::as_array)
            .ok_or_else(|| RpcError::new(rpc::INVALID_PARAMS, "events array missing"))?;

        let slot = self.slot(learner_id);
        let mut slot = slot.lock().expect("learner lock");
        let mut ctx = self.load_learner(learner_id)?;

        let params = BktParams::default();
        let mut accepted = 0usize;
        let mut rejected: Vec<Value> = Vec::new();
        for (index, raw) in raw_events.iter().enumerate() {
            let event: EvidenceEvent = match serde_json::from_value(raw.clone()) {
                Ok(event) => event,
                Err(err) => {
                    rejected.push(json!({ "index": index, "error": format!("malformed event: {err}") }));
                    continue;
                }
            };
            if event.learner_id != learner_id {
                rejected.push(json!({ "index": index, "error": "event learner_id mismatch" }));
                continue;
            }
            if event.at > self.now() {
                rejected.push(json!({ "index": index, "error": "event timestamp in the future" }));
                continue;
            }
            match ingest_evidence(&ctx, &event, &params, &mut slot.evidence_log) {
                Ok(next) => {
                    ctx = next;
                    accepted += 1;
                }
                Err(err) => rejected.push(json!({ "index": index, "error": err.to_string() })),
            }
        }
        if accepted > 0 {
            self.store
                .save_snapshot(&ctx)
                .map_err(|e| RpcError::new(rpc::INTERNAL_ERROR, e.to_string()))?;
        }
        self.audit(
            AuditAction::EvidencePushed,
            learner_id,
            [
                ("accepted".to_string(), json!(accepted)),
                ("rejected".to_string(), json!(rejected.len())),
                ("version".to_string(), json!(ctx.version)),
            ]
            .into(),
        );
        Ok(json!({ "accepted": accepted, "rejected": rejected }))
    }

    /// Run an embedded context-fidelity probe against an isolated fixture.
    pub fn tool_probe_fidelity(&self, args: &Value) -> Result<Value, RpcError> {
        let probe: FidelityProbe = serde_json::from_value(args.clone())
            .map_err(|e| RpcError::new(rpc::INVALID_PARAMS, format!("invalid probe: {e}")))?;
        let report = run_probe(&probe, &self.policy, &self.config, self.now())
            .map_err(|e| RpcError::new(rpc::INVALID_PARAMS, e))?;
        serde_json::to_value(&report)
            .map_err(|e| RpcError::new(rpc::INTERNAL_ERROR, e.to_string()))
    }

    fn load_learner(&self, learner_id: &str) -> Result<LearnerContext, RpcError> {
        self.store.load_latest(learner_id).map_err(|err| match err {
            StoreError::VersionNotFound { .. } => RpcError::new(
                rpc::LEARNER_NOT_FOUND,
                format!("learner {learner_id} not found"),
            ),
            other => RpcError::new(rpc::INTERNAL_ERROR, other.to_string()),
        })
    }
}

fn load_audit_chain(path: &PathBuf) -> Result<AuditChain, StoreError> {
    if !path.exists() {
        return Ok(AuditChain::new());
    }
    let raw = std::fs::read_to_string(path).map_err(|e| StoreError::Storage(e.to_string()))?;
    let mut chain = AuditChain::new();
    for line in raw.lines().filter(|l| !l.trim().is_empty()) {
        let record = serde_json::from_str(line).map_err(|e| StoreError::Storage(e.to_string()))?;
        chain.records.push(record);
    }
    chain
        .verify()
        .map_err(|e| StoreError::Storage(format!("persisted audit chain corrupt: {e}")))?;
    Ok(chain)
}

fn required_str<'a>(args: &'a Value, field: &str) -> Result<&'a str, RpcError> {
    args.get(field)
        .and_then(Value::as_str)
        .filter(|s| !s.is_empty())
        .ok_or_else(|| RpcError::new(rpc::INVALID_PARAMS, format!("{field} missing")))
}

fn parse_purpose(value: Option<&Value>) -> Result<ConsentScope, RpcError> {
    match value.and_then(Value::as_str) {
        None | Some("instruction") => Ok(ConsentScope::Instruction),
        Some("research") => Ok(ConsentScope::Research),
        Some(other) => Err(RpcError::new(
            rpc::INVALID_PARAMS,
            format!("unknown purpose {other}"),
        )),
    }
}

fn snapshot_error(err: SnapshotError) -> RpcError {
    match err {
        SnapshotError::EmptyAfterFiltering => {
            RpcError::new(rpc::EMPTY_AFTER_FILTERING, err.to_string())
        }
        SnapshotError::ZeroBudget => RpcError::new(rpc::INVALID_PARAMS, err.to_string()),
        other => RpcError::new(rpc::INTERNAL_ERROR, other.to_string()),
    }
}

fn privacy_error(err: PrivacyError) -> RpcError {
    match err {
        PrivacyError::BudgetExhausted { .. } => {
            RpcError::new(rpc::BUDGET_EXHAUSTED, err.to_string())
        }
        other => RpcError::new(rpc::INTERNAL_ERROR, other.to_string()),
    }
}

/// MCP-style tool result: human-readable text content plus the structured
/// payload.
fn tool_result(payload: Value) -> Value {
    let text = serde_json::to_string(&payload).unwrap_or_default();
    json!({
        "content": [ { "type": "text", "text": text } ],
        "structuredContent": payload,
    })
}

/// The fixed tool vocabulary, in stable order.
pub fn tool_descriptors() -> Value {
    json!({
        "tools": [
            {
                "name": "get_context_snapshot",
                "description": "Budgeted, privacy-filtered snapshot of a learner context: salience-ranked working features, belief model, and content digest.",
                "inputSchema": {
                    "type": "object",
                    "properties": {
                        "learner_id": { "type": "string" },
                        "purpose": { "type": "string", "enum": ["instruction", "research"] },
                        "task": { "type": "string", "enum": ["formative_feedback", "assessment", "collaboration", "generic"] },
                        "budget": { "type": "integer", "minimum": 1 },
                        "include_noisy_count": { "type": "boolean" },
                        "noise_seed": { "type": "integer" }
                    },
                    "required": ["learner_id"]
                }
            },
            {
                "name": "push_evidence",
                "description": "Apply evidence events (answers, survey items, dialogue turns, platform events) to a learner context; partial acceptance with per-event errors.",
                "inputSchema": {
                    "type": "object",
                    "properties": {
                        "learner_id": { "type": "string" },
                        "events": { "type": "array", "items": { "type": "object" } }
                    },
                    "required": ["learner_id", "events"]
                }
            },
            {
                "name": "probe_fidelity",
                "description": "Run an embedded context-fidelity probe: install a fixture context in isolation, request a snapshot, and check inclusion, exclusion, and granularity assertions.",
                "inputSchema": {
                    "type": "object",
                    "properties": {
                        "probe_id": { "type": "string" },
                        "context": { "type": "object" },
                        "request": { "type": "object" },
                        "must_include": { "type": "array", "items": { "type": "string" } },
                        "must_exclude": { "type": "array", "items": { "type": "string" } },
                        "granularity": { "type": "object" },
                        "expect_error": { "type": "string" }
                    },
                    "required": ["probe_id", "context"]
                }
            }
        ]
    })
}

