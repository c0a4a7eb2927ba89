//! JSON-RPC 2.0 envelope handling shared by both transports. Single
//! requests, batches, and notifications; responses carry exactly one of
//! result/error and echo the request id.

use serde_json::{json, Value};

pub const PARSE_ERROR: i64 = -32700;
pub const INVALID_REQUEST: i64 = -32600;
pub const METHOD_NOT_FOUND: i64 = -32601;
pub const INVALID_PARAMS: i64 = -32602;
pub const INTERNAL_ERROR: i64 = -32603;
pub const LEARNER_NOT_FOUND: i64 = -32001;
pub const BUDGET_EXHAUSTED: i64 = -32002;
pub const EMPTY_AFTER_FILTERING: i64 = -32003;

#[derive(Debug, Clone)]
pub struct RpcError {
    pub code: i64,
    pub message: String,
    pub data: Option<Value>,
}

impl RpcError {
    pub fn new(code: i64, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
            data: None,
        }
    }

    pub fn with_data(mut self, data: Value) -> Self {
        self.data = Some(data);
        self
    }
}

pub fn success(id: Value, result: Value) -> Value {
    json!({ "jsonrpc": "2.0", "id": id, "result": result })
}

pub fn failure(id: Value, error: RpcError) -> Value {
    let mut body = json!({ "code": error.code, "message": error.message });
    if let Some(data) = error.data {
        body["data"] = data;
    }
    json!({ "jsonrpc": "2.0", "id": id, "error": body })
}

/// One parsed call: method, params, and the id to respond with (None for a
/// notification, which gets no response).
pub struct Call {
    pub method: String,
    pub params: Value,
    pub id: Option<Value>,
}

fn parse_call(value: &Value) -> Result<Call, (Value, RpcError)> {
    let id = value.get("id").cloned();
    let respond_id = id.clone().unwrap_or(Value::Null);
    let object = value
        .as_object()
        .ok_or_else(|| (Value::Null, RpcError::new(INVALID_REQUEST, "request must be an object")))?;
    if object.get("jsonrpc").and_then(Value::as_str) != Some("2.0") {
        return Err((
            respond_id,
            RpcError::new(INVALID_REQUEST, "jsonrpc must be \"2.0\""),
        ));
    }
    match &id {
        None | Some(Value::Null) | Some(Value::String(_)) => {}
        Some(Value::Number(_)) => {}
        Some(_) => {
            return Err((
                Value::Null,
                RpcError::new(INVALID_REQUEST, "id must be a string, number, or null"),
            ))
        }
    }
    let method = object
        .get("method")
        .and_then(Value::as_str)
        .ok_or_else(|| (respond_id.clone(), RpcError::new(INVALID_REQUEST, "method missing")))?;
    Ok(Call {
        method: method.to_string(),
        params: object.get("params").cloned().unwrap_or(Value::Null),
        id,
    })
}

/// Dispatch one wire message (single or batch) through `handle`. Returns the
/// response payload, or None when the message was only notifications.
pub fn dispatch(raw: &str, mut handle: impl FnMut(&Call) -> Result<Value, RpcError>) -> Option<Value> {
    let parsed: Value = match serde_json::from_str(raw) {
        Ok(value) => value,
        Err(err) => {
            return Some(failure(
                Value::Null,
                RpcError::new(PARSE_ERROR, format!("parse error: {err}")),
            ))
        }
    };
    match parsed {
        Value::Array(items) => {
            if items.is_empty() {
                return Some(failure(
                    Value::Null,
                    RpcError::new(INVALID_REQUEST, "empty batch"),
                ));
            }
            let responses: Vec<Value> = items
                .iter()
                .filter_map(|item| dispatch_one(item, &mut handle))
                .collect();
            if responses.is_empty() {
                None
            } else {
                Some(Value::Array(responses))
            }
        }
        single => dispatch_one(&single, &mut handle),
    }
}

fn dispatch_one(
    value: &Value,
    handle: &mut impl FnMut(&Call) -> Result<Value, RpcError>,
) -> Option<Value> {
    let call = match parse_call(value) {
        Ok(call) => call,
        Err((id, error)) => return Some(failure(id, error)),
    };
    let outcome = handle(&call);
    let id = call.id?; // notifications get no response
    Some(match outcome {
        Ok(result) => success(id, result),
        Err(error) => failure(id, error),
    })
}
