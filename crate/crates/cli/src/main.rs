use std::collections::BTreeMap;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use fanout_core::weighing::{self, WeighingStrategy};
use fanout_core::{Catalog, ConsistencyReport, GraphDocument, JoinGraph, Verdict};
use fanout_service::session::SessionId;
use fanout_service::{AppState, Config, Session, SessionRequest};
use serde_json::{json, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Output {
    Text,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "fanout-guard", version, about = "Check metric totals for consistency under join fanout")]
struct Cli {
    /// Directory holding the graph, semantic layer and CSV files.
    #[arg(long, global = true, env = "FANOUT_GUARD_DATA", default_value = ".")]
    data_dir: PathBuf,
    #[arg(long, global = true, default_value = "graph.json")]
    graph: PathBuf,
    #[arg(long, global = true, default_value = "semantic.json")]
    semantic: PathBuf,
    #[arg(long, global = true, value_enum, default_value_t = Output::Text)]
    output: Output,
    #[arg(long, global = true, default_value_t = 100, value_parser = clap::value_parser!(u64).range(1..))]
    sample_n: u64,
    #[arg(long, global = true, default_value_t = fanout_core::DEFAULT_TOLERANCE)]
    tolerance: f64,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, clap::Args)]
struct QueryArgs {
    #[arg(long)]
    metric: String,
    /// Group-by attribute, `Relation.attr`; repeatable.
    #[arg(long = "group-by")]
    group_by: Vec<String>,
    /// Selection predicate, e.g. `I.price > 25 and A.source = 'Google'`.
    #[arg(long = "where")]
    selection: Option<String>,
    /// Extra relation to join; repeatable.
    #[arg(long)]
    join: Vec<String>,
    /// `Relation=spec` where spec is equal, order:attr:first|last,
    /// position:attr:first_w:last_w, prop:attr or custom:file.
    #[arg(long = "weigh")]
    weigh: Vec<String>,
    /// Accept weight tables that fail validation.
    #[arg(long)]
    allow_invalid: bool,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a query and check it against its metric's base query.
    Run(QueryArgs),
    /// Check that the join graph is a connected tree over the data.
    ValidateGraph,
    /// Print declared and observed cardinality of every edge.
    InferCardinality,
    /// Serve the session API over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Graph id the data directory is registered under.
        #[arg(long, default_value = "default")]
        graph_id: String,
        /// Persist sessions here and restore them on start.
        #[arg(long)]
        snapshot_dir: Option<PathBuf>,
    },
    /// Write a session snapshot for a query with decided weights.
    Snapshot {
        #[command(flatten)]
        query: QueryArgs,
        #[arg(long, default_value = "default")]
        graph_id: String,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Debug)]
struct Failure {
    code: String,
    message: String,
    details: Value,
}

impl From<fanout_core::Error> for Failure {
    fn from(e: fanout_core::Error) -> Self {
        Failure { code: e.code().to_string(), message: e.to_string(), details: Value::Null }
    }
}

impl From<fanout_service::ServiceError> for Failure {
    fn from(e: fanout_service::ServiceError) -> Self {
        let b = e.body();
        Failure { code: b.code, message: b.message, details: b.details }
    }
}

fn io_failure(e: impl std::fmt::Display) -> Failure {
    Failure { code: "io".into(), message: e.to_string(), details: Value::Null }
}

type CliResult<T> = Result<T, Failure>;

/// Writes a line to stdout; a closed pipe is not an error.
fn emit(s: impl std::fmt::Display) {
    let _ = writeln!(std::io::stdout(), "{s}");
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(code) => code,
        Err(f) => {
            match cli.output {
                Output::Json => {
                    let body = json!({ "error": { "code": f.code, "message": f.message, "details": f.details } });
                    emit(format!("{body:#}"));
                }
                Output::Text => eprintln!("error[{}]: {}", f.code, f.message),
            }
            ExitCode::from(1)
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<ExitCode> {
    match &cli.command {
        Command::Run(q) => run(cli, q),
        Command::ValidateGraph => validate_graph(cli),
        Command::InferCardinality => infer_cardinality(cli),
        Command::Serve { port, graph_id, snapshot_dir } => serve(cli, *port, graph_id, snapshot_dir.clone()),
        Command::Snapshot { query, graph_id, out } => snapshot(cli, query, graph_id, out.as_deref()),
    }
}

fn resolve(cli: &Cli, p: &Path) -> PathBuf {
    if p.is_relative() {
        cli.data_dir.join(p)
    } else {
        p.to_path_buf()
    }
}

fn catalog(cli: &Cli) -> CliResult<Catalog> {
    Ok(Catalog::load(&cli.data_dir, &cli.graph, &cli.semantic)?)
}

fn parse_weigh(cli: &Cli, spec: &str) -> CliResult<(String, WeighingStrategy)> {
    let (rel, s) = spec.split_once('=').ok_or_else(|| Failure {
        code: "invalid_strategy".into(),
        message: format!("expected `Relation=strategy`, got `{spec}`"),
        details: Value::Null,
    })?;
    Ok((rel.trim().to_string(), WeighingStrategy::parse_spec(s.trim(), Some(&cli.data_dir))?))
}

fn request(q: &QueryArgs, graph_id: &str) -> SessionRequest {
    SessionRequest {
        graph_id: graph_id.to_string(),
        metric: q.metric.clone(),
        group_by: q.group_by.clone(),
        selection: q.selection.clone(),
        join: q.join.clone(),
    }
}

fn run(cli: &Cli, q: &QueryArgs) -> CliResult<ExitCode> {
    let c = catalog(cli)?;
    let plan = c.plan(&request(q, "").query(&c)?)?;
    let strategies = q.weigh.iter().map(|s| parse_weigh(cli, s)).collect::<CliResult<Vec<_>>>()?;
    let weights = c.weights(&plan, &strategies)?;
    let mut applied = Vec::new();
    for (rel, s) in &strategies {
        let validation = weighing::validate_with_tolerance(&weights[rel], c.db.get(rel)?, cli.tolerance)?;
        if !validation.ok && !q.allow_invalid {
            return Err(Failure {
                code: "validation_failed".into(),
                message: format!("weights for `{rel}` do not sum to 1 in every join-key group"),
                details: json!({ "target": rel, "validation": validation }),
            });
        }
        applied.push((rel.clone(), s.clone(), validation));
    }
    let report = c.check(&plan, &weights, cli.tolerance)?;
    match cli.output {
        Output::Json => {
            let weights: Vec<Value> = applied
                .iter()
                .map(|(r, s, v)| json!({ "relation": r, "strategy": s, "validation": v }))
                .collect();
            emit(format!("{:#}", json!({ "weights": weights, "report": report })));
        }
        Output::Text => print_text(&applied, &report),
    }
    Ok(exit_for(report.verdict))
}

fn print_text(applied: &[(String, WeighingStrategy, weighing::WeightValidation)], report: &ConsistencyReport) {
    for (r, s, v) in applied {
        let flag = if v.ok { "valid" } else { "INVALID" };
        println!("weigh {r} = {s}  ({flag})");
    }
    if !applied.is_empty() {
        println!();
    }
    let _ = write!(std::io::stdout(), "{report}");
}

fn exit_for(v: Verdict) -> ExitCode {
    match v {
        Verdict::Consistent => ExitCode::SUCCESS,
        Verdict::Inconsistent => ExitCode::from(2),
    }
}

fn load_graph(cli: &Cli) -> CliResult<(GraphDocument, JoinGraph, fanout_core::Database)> {
    let doc = GraphDocument::load(resolve(cli, &cli.graph))?;
    let db = doc.load_database(&cli.data_dir)?;
    let graph = doc.graph();
    Ok((doc, graph, db))
}

fn validate_graph(cli: &Cli) -> CliResult<ExitCode> {
    let (_, graph, db) = load_graph(cli)?;
    graph.validate(&db)?;
    graph.prepare(&db)?;
    match cli.output {
        Output::Json => println!("{:#}", json!({ "ok": true })),
        Output::Text => println!("ok"),
    }
    Ok(ExitCode::SUCCESS)
}

fn infer_cardinality(cli: &Cli) -> CliResult<ExitCode> {
    let (_, graph, db) = load_graph(cli)?;
    graph.validate(&db)?;
    let mut rows = Vec::new();
    let mut mismatch = false;
    for e in &graph.edges {
        let observed = JoinGraph::infer_cardinality(&fanout_core::JoinEdge { cardinality: None, ..e.clone() }, &db)?;
        // A declared "many" side may turn out unique; a declared "one" side may not repeat.
        let agrees = e
            .cardinality
            .is_none_or(|d| (d.left_many() || !observed.left_many()) && (d.right_many() || !observed.right_many()));
        mismatch |= !agrees;
        rows.push((e, observed, agrees));
    }
    match cli.output {
        Output::Json => {
            let edges: Vec<Value> = rows
                .iter()
                .map(|(e, o, ok)| {
                    json!({ "left": e.left, "right": e.right, "on": e.on, "declared": e.cardinality, "observed": o, "consistent": ok })
                })
                .collect();
            emit(format!("{:#}", json!({ "edges": edges })));
        }
        Output::Text => {
            for (e, o, ok) in &rows {
                let declared = e.cardinality.map_or("-".to_string(), |d| d.to_string());
                let mark = if *ok { "" } else { "  MISMATCH" };
                println!("{} - {}  declared {declared}  observed {o}{mark}", e.left, e.right);
            }
        }
    }
    Ok(if mismatch { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn runtime() -> CliResult<tokio::runtime::Runtime> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build().map_err(io_failure)
}

fn serve(cli: &Cli, port: u16, graph_id: &str, snapshot_dir: Option<PathBuf>) -> CliResult<ExitCode> {
    let c = catalog(cli)?;
    let config = Config { sample_n: cli.sample_n as usize, tolerance: cli.tolerance, snapshot_dir: snapshot_dir.clone() };
    runtime()?.block_on(async {
        let state = Arc::new(AppState::new(config));
        state.add_graph(graph_id, c).await;
        if let Some(dir) = snapshot_dir.filter(|d| d.is_dir()) {
            let n = state.load_snapshots(&dir).await?;
            eprintln!("restored {n} session(s) from {}", dir.display());
        }
        let addr = SocketAddr::from(([0, 0, 0, 0], port));
        eprintln!("listening on {addr}");
        fanout_service::serve(state, addr).await.map_err(io_failure)?;
        Ok(ExitCode::SUCCESS)
    })
}

fn snapshot(cli: &Cli, q: &QueryArgs, graph_id: &str, out: Option<&Path>) -> CliResult<ExitCode> {
    let c = catalog(cli)?;
    let mut session = Session::new(SessionId::new_v4(), request(q, graph_id), &c, cli.tolerance)?;
    let strategies: BTreeMap<String, WeighingStrategy> =
        q.weigh.iter().map(|s| parse_weigh(cli, s)).collect::<CliResult<_>>()?;
    for (rel, s) in &strategies {
        session.commit(&c, rel, s, q.allow_invalid, cli.tolerance)?;
    }
    let text = serde_json::to_string_pretty(&session.snapshot()).map_err(io_failure)?;
    match out {
        Some(p) => std::fs::write(p, text).map_err(io_failure)?,
        None => emit(text),
    }
    Ok(ExitCode::SUCCESS)
}
