//! lc: learner-context toolkit. Ingest evidence, inspect salience, export
//! canonical documents, serve the warm-start protocol, and run simulations.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use lc_core::model::LearnerContext;
use lc_core::prioritize::{loo_impact, rank_misalignment, Distribution};
use lc_core::privacy::DisclosurePolicy;
use lc_core::store::{canonical_deserialize, canonical_serialize, content_hash, SnapshotStore};
use lc_core::temporal::{ingest_evidence, BktParams, EvidenceEvent, EvidenceLog};
use lc_core::LcConfig;
use lc_protocol::{LcServer, ServerConfig};
use lc_sim::{
    run_closed_loop, truncation_sweep, warmstart_trial, Condition, ReferenceLearner,
    ReferenceTutor, Simulator,
};

#[derive(Parser)]
#[command(name = "lc", version, about = "Learner-context server and toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Apply a JSON Lines evidence stream to a learner context.
    Ingest {
        #[arg(long)]
        file: PathBuf,
        #[arg(long)]
        learner: String,
        #[arg(long, default_value = "./lc-store")]
        store: PathBuf,
        /// Create the learner context when it does not exist yet.
        #[arg(long, default_value_t = true)]
        create: bool,
    },
    /// Leave-one-out salience analysis over strategy distributions.
    Salience {
        /// Full-context strategy distribution (JSON {"support": [...], "probs": [...]}).
        #[arg(long)]
        full: PathBuf,
        /// Directory of per-feature leave-one-out distributions, one
        /// <feature_key>.json per file.
        #[arg(long)]
        variants: PathBuf,
        /// Declared relevance per feature key (JSON object key -> number).
        #[arg(long)]
        relevance: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// TVD below which a relevant feature counts as invisible.
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Emit the canonical document of a stored context version to stdout.
    Export {
        #[arg(long)]
        learner: String,
        #[arg(long)]
        version: Option<u64>,
        #[arg(long, default_value = "./lc-store")]
        store: PathBuf,
    },
    /// Print the SHA-256 content digest of a stored context.
    Hash {
        #[arg(long)]
        learner: String,
        #[arg(long)]
        version: Option<u64>,
        #[arg(long, default_value = "./lc-store")]
        store: PathBuf,
    },
    /// Serve the JSON-RPC warm-start protocol.
    Serve {
        /// Newline-delimited JSON-RPC over stdin/stdout.
        #[arg(long, conflicts_with = "http")]
        stdio: bool,
        /// HTTP POST /rpc bind address, e.g. 127.0.0.1:0.
        #[arg(long)]
        http: Option<String>,
        #[arg(long, default_value = "./lc-store")]
        store: PathBuf,
        /// Disclosure policy JSON; defaults to exact disclosure with PII
        /// redaction.
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Fix the server clock to an RFC3339 instant (deterministic tests).
        #[arg(long)]
        clock: Option<String>,
    },
    /// Simulation harness.
    Sim {
        #[command(subcommand)]
        command: SimCommand,
    },
}

#[derive(Subcommand)]
enum SimCommand {
    /// Closed-loop generation/recovery consistency run.
    ClosedLoop {
        #[arg(long, default_value_t = 35)]
        n: usize,
        #[arg(long, default_value_t = 10)]
        turns: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also sweep dialogue lengths 2..turns and report per-length rates.
        #[arg(long, default_value_t = false)]
        sweep: bool,
    },
    /// Warm-start factorial trial over a directory of stored contexts.
    Trial {
        /// Two comma-separated arms from {aware, blind}.
        #[arg(long, default_value = "aware,blind")]
        arms: String,
        /// Directory of canonical .jsonld context documents.
        #[arg(long)]
        contexts: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        turns: usize,
        /// Number of seeds per context.
        #[arg(long, default_value_t = 5)]
        seeds: usize,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Ingest {
            file,
            learner,
            store,
            create,
        } => cmd_ingest(&file, &learner, &store, create),
        Command::Salience {
            full,
            variants,
            relevance,
            out,
            threshold,
            config,
        } => cmd_salience(&full, &variants, &relevance, out.as_deref(), threshold, config.as_deref()),
        Command::Export {
            learner,
            version,
            store,
        } => cmd_export(&learner, version, &store),
        Command::Hash {
            learner,
            version,
            store,
        } => cmd_hash(&learner, version, &store),
        Command::Serve {
            stdio,
            http,
            store,
            policy,
            config,
            clock,
        } => cmd_serve(stdio, http, &store, policy.as_deref(), config.as_deref(), clock),
        Command::Sim { command } => match command {
            SimCommand::ClosedLoop {
                n,
                turns,
                seed,
                out,
                sweep,
            } => cmd_closed_loop(n, turns, seed, out.as_deref(), sweep),
            SimCommand::Trial {
                arms,
                contexts,
                out,
                turns,
                seeds,
                seed,
            } => cmd_trial(&arms, &contexts, out.as_deref(), turns, seeds, seed),
        },
    }
}

fn load_config(path: Option<&Path>) -> Result<LcConfig> {
    match path {
        None => Ok(LcConfig::default()),
        Some(path) => {
            let raw = std::fs::read_to_string(path)
                .with_context(|| format!("reading config {}", path.display()))?;
            serde_json::from_str(&raw).with_context(|| format!("parsing config {}", path.display()))
        }
    }
}

fn write_output(out: Option<&Path>, value: &serde_json::Value) -> Result<()> {
    let rendered = serde_json::to_string_pretty(value)?;
    match out {
        Some(path) => {
            std::fs::write(path, rendered.as_bytes())
                .with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => println!("{rendered}"),
    }
    Ok(())
}

fn cmd_ingest(file: &Path, learner: &str, store_dir: &Path, create: bool) -> Result<()> {
    let store = SnapshotStore::open(store_dir)?;
    let mut ctx = match store.load_latest(learner) {
        Ok(ctx) => ctx,
        Err(_) if create => LearnerContext::new(learner)?,
        Err(err) => return Err(err.into()),
    };
    let raw = std::fs::read_to_string(file)
        .with_context(|| format!("reading events {}", file.display()))?;
    let params = BktParams::default();
    let mut log = EvidenceLog::default();
    let mut accepted = 0usize;
    let mut rejected = 0usize;
    for (line_no, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let event: EvidenceEvent = match serde_json::from_str(line) {
            Ok(event) => event,
            Err(err) => {
                eprintln!("line {}: malformed event: {err}", line_no + 1);
                rejected += 1;
                continue;
            }
        };
        if event.learner_id != learner {
            eprintln!("line {}: learner_id mismatch", line_no + 1);
            rejected += 1;
            continue;
        }
        match ingest_evidence(&ctx, &event, &params, &mut log) {
            Ok(next) => {
                ctx = next;
                accepted += 1;
            }
            Err(err) => {
                eprintln!("line {}: {err}", line_no + 1);
                rejected += 1;
            }
        }
    }
    if accepted > 0 {
        store.save_snapshot(&ctx)?;
    }
    println!(
        "accepted {accepted}, rejected {rejected}; learner {learner} at version {}",
        ctx.version
    );
    Ok(())
}

fn cmd_salience(
    full: &Path,
    variants_dir: &Path,
    relevance: &Path,
    out: Option<&Path>,
    threshold: Option<f64>,
    config: Option<&Path>,
) -> Result<()> {
    let config = load_config(config)?;
    let full: Distribution = serde_json::from_str(&std::fs::read_to_string(full)?)
        .context("parsing full-context distribution")?;
    let mut variants: BTreeMap<String, Distribution> = BTreeMap::new();
    for entry in std::fs::read_dir(variants_dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()) != Some("json") {
            continue;
        }
        let key = path
            .file_stem()
            .and_then(|s| s.to_str())
            .context("variant file name")?
            .to_string();
        let distribution = serde_json::from_str(&std::fs::read_to_string(&path)?)
            .with_context(|| format!("parsing variant {}", path.display()))?;
        variants.insert(key, distribution);
    }
    if variants.is_empty() {
        bail!("no variant distributions found in {}", variants_dir.display());
    }
    let relevance: BTreeMap<String, f64> =
        serde_json::from_str(&std::fs::read_to_string(relevance)?)
            .context("parsing relevance map")?;
    let impacts = loo_impact(&full, &variants)?;
    let report = rank_misalignment(
        &impacts,
        &relevance,
        threshold.unwrap_or(config.misalignment_threshold),
    )?;
    write_output(out, &serde_json::to_value(&report)?)
}

fn cmd_export(learner: &str, version: Option<u64>, store_dir: &Path) -> Result<()> {
    let store = SnapshotStore::open(store_dir)?;
    let ctx = match version {
        Some(version) => store.load_snapshot(learner, version)?,
        None => store.load_latest(learner)?,
    };
    let doc = canonical_serialize(&ctx)?;
    std::io::stdout().write_all(&doc.bytes)?;
    std::io::stdout().write_all(b"\n")?;
    Ok(())
}

fn cmd_hash(learner: &str, version: Option<u64>, store_dir: &Path) -> Result<()> {
    let store = SnapshotStore::open(store_dir)?;
    let ctx = match version {
        Some(version) => store.load_snapshot(learner, version)?,
        None => store.load_latest(learner)?,
    };
    println!("{}", content_hash(&ctx)?.hex);
    Ok(())
}

fn cmd_serve(
    stdio: bool,
    http: Option<String>,
    store_dir: &Path,
    policy: Option<&Path>,
    config: Option<&Path>,
    clock: Option<String>,
) -> Result<()> {
    let policy = match policy {
        None => DisclosurePolicy::permissive(),
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)
            .with_context(|| format!("parsing policy {}", path.display()))?,
    };
    let config = load_config(config)?;
    let fixed_clock = clock
        .map(|raw| {
            chrono::DateTime::parse_from_rfc3339(&raw)
                .map(|t| t.with_timezone(&chrono::Utc))
                .with_context(|| format!("parsing clock {raw}"))
        })
        .transpose()?;
    let server = Arc::new(LcServer::new(ServerConfig {
        store_dir: store_dir.to_path_buf(),
        policy,
        config,
        fixed_clock,
    })?);
    match (stdio, http) {
        (true, None) => lc_protocol::transport::run_stdio(server)?,
        (false, Some(addr)) => lc_protocol::transport::run_http(server, &addr)?,
        (false, None) => bail!("choose a transport: --stdio or --http <addr>"),
        (true, Some(_)) => unreachable!("clap conflicts_with"),
    }
    Ok(())
}

fn cmd_closed_loop(n: usize, turns: usize, seed: u64, out: Option<&Path>, sweep: bool) -> Result<()> {
    let report = run_closed_loop(n, turns, seed)?;
    let mut value = serde_json::to_value(&report)?;
    if sweep {
        let points = truncation_sweep(n, turns, seed)?;
        value["truncation_sweep"] = serde_json::to_value(&points)?;
    }
    write_output(out, &value)
}

fn parse_arm(raw: &str) -> Result<Condition> {
    match raw.trim() {
        "aware" | "context_aware" => Ok(Condition::ContextAware),
        "blind" | "context_blind" => Ok(Condition::ContextBlind),
        other => bail!("unknown arm {other}; expected aware or blind"),
    }
}

fn cmd_trial(
    arms: &str,
    contexts_dir: &Path,
    out: Option<&Path>,
    turns: usize,
    seed_count: usize,
    seed: u64,
) -> Result<()> {
    let mut parts = arms.split(',');
    let (Some(a), Some(b), None) = (parts.next(), parts.next(), parts.next()) else {
        bail!("--arms takes exactly two comma-separated labels");
    };
    let (arm_a, arm_b) = (parse_arm(a)?, parse_arm(b)?);

    let mut contexts = Vec::new();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(contexts_dir)?
        .flatten()
        .map(|e| e.path())
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("jsonld"))
        .collect();
    paths.sort();
    for path in paths {
        let bytes = std::fs::read(&path)?;
        contexts.push(
            canonical_deserialize(&bytes)
                .with_context(|| format!("parsing context {}", path.display()))?,
        );
    }
    if contexts.is_empty() {
        bail!("no .jsonld contexts found in {}", contexts_dir.display());
    }
    let seeds: Vec<u64> = (0..seed_count as u64).map(|i| seed.wrapping_add(i)).collect();
    let report = warmstart_trial(
        &Simulator::default(),
        &contexts,
        &ReferenceLearner::default(),
        &ReferenceTutor::default(),
        turns,
        &seeds,
        arm_a,
        arm_b,
    )?;
    write_output(out, &serde_json::to_value(&report)?)
}
