//! Wire transports. Both carry identical newline-delimited JSON-RPC
//! payloads: one over stdin/stdout, one over HTTP POST /rpc.

use std::io::{BufRead, Write};
use std::sync::Arc;

use axum::extract::State;
use axum::http::StatusCode;
use axum::routing::post;
use axum::Router;

use crate::server::LcServer;

/// Serve newline-delimited JSON-RPC over stdin/stdout until EOF.
pub fn run_stdio(server: Arc<LcServer>) -> std::io::Result<()> {
    let stdin = std::io::stdin();
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    for line in stdin.lock().lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(response) = server.handle_line(&line) {
            writeln!(out, "{response}")?;
            out.flush()?;
        }
    }
    Ok(())
}

async fn rpc_endpoint(State(server): State<Arc<LcServer>>, body: String) -> (StatusCode, String) {
    match server.handle_line(&body) {
        Some(response) => (StatusCode::OK, response.to_string()),
        None => (StatusCode::NO_CONTENT, String::new()),
    }
}

/// Serve HTTP POST /rpc on `addr`. Prints the bound address to stderr (the
/// caller may bind port 0) and blocks until the process exits.
pub fn run_http(server: Arc<LcServer>, addr: &str) -> std::io::Result<()> {
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()?;
    runtime.block_on(async move {
        let app = Router::new()
            .route("/rpc", post(rpc_endpoint))
            .with_state(server);
        let listener = tokio::net::TcpListener::bind(addr).await?;
        eprintln!("listening on {}", listener.local_addr()?);
        axum::serve(listener, app).await
    })
}
