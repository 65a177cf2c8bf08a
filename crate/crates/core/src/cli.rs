//! `civicbin` command line.
//!
//! Exit codes: 0 success, 1 runtime failure (one line on stderr), 2 usage.

use std::ffi::OsString;
use std::io::Write;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use serde_json::Value;

use crate::canonical;
use crate::central::http::{self, CLOCK_HEADER};
use crate::central::service::{ServiceConfig, ServiceHandle};
use crate::simulator::{self, metrics, parse_log, EventLogEntry, ScenarioConfig};

pub const STATE_ENV: &str = "CIVICBIN_STATE";

#[derive(Debug, Parser)]
#[command(name = "civicbin", version, about = "Smart-bin fleet simulator and city waste service")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulation runs.
    #[command(subcommand)]
    Sim(SimCommand),
    /// Replay a scenario's central calls against a running service.
    Seed {
        url: String,
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Recompute metrics from an event log.
    Report {
        log: PathBuf,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
    /// Run the central service over HTTP.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// State directory; the CIVICBIN_STATE environment variable wins.
        #[arg(long)]
        state: Option<PathBuf>,
        #[arg(long)]
        virtual_clock: bool,
    },
}

#[derive(Debug, Subcommand)]
enum SimCommand {
    /// Run a scenario file, writing events.log and metrics.json.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Table,
    Csv,
}

/// Parses `argv` (program name first) and runs the command.
pub fn execute<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { out.write_all(text.as_bytes()) } else { err.write_all(text.as_bytes()) };
            return code;
        }
    };
    match dispatch(cli.command, out, err) {
        Ok(()) => 0,
        Err(msg) => {
            let _ = writeln!(err, "error: {}", msg.replace('\n', " "));
            1
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write, err: &mut dyn Write) -> Result<(), String> {
    match command {
        Command::Sim(SimCommand::Run { scenario, seed, out: dir }) => sim_run(&scenario, seed, &dir, out),
        Command::Report { log, format } => report(&log, format, out),
        Command::Seed { url, scenario, seed } => seed_service(&url, &scenario, seed, out),
        Command::Serve {
            port,
            host,
            state,
            virtual_clock,
        } => {
            let state = std::env::var_os(STATE_ENV).map(PathBuf::from).or(state);
            serve(&host, port, state, virtual_clock, err)
        }
    }
}

fn load_scenario(path: &Path, seed: Option<u64>) -> Result<ScenarioConfig, String> {
    let mut config = ScenarioConfig::load(path).map_err(|e| match e {
        simulator::ScenarioError::Invalid { .. } => format!("{}: {e}", path.display()),
        other => other.to_string(),
    })?;
    if let Some(s) = seed {
        config.seed = s;
    }
    Ok(config)
}

fn write_file(path: &Path, text: &str) -> Result<(), String> {
    std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display()))
}

fn sim_run(scenario: &Path, seed: Option<u64>, dir: &Path, out: &mut dyn Write) -> Result<(), String> {
    let config = load_scenario(scenario, seed)?;
    let run = simulator::run_scenario(config).map_err(|e| e.to_string())?;
    std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
    let log_path = dir.join("events.log");
    write_file(&log_path, &run.log_text)?;
    let metrics_json = canonical::to_canonical_string(&run.metrics).expect("metrics serialize");
    write_file(&dir.join("metrics.json"), &format!("{metrics_json}\n"))?;
    write!(out, "{}", run.metrics.to_table()).map_err(|e| e.to_string())?;
    writeln!(out, "log: {}", log_path.display()).map_err(|e| e.to_string())
}

fn read_log(path: &Path) -> Result<Vec<EventLogEntry>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    parse_log(&text).map_err(|e| format!("{}: {e}", path.display()))
}

fn report(path: &Path, format: Format, out: &mut dyn Write) -> Result<(), String> {
    let entries = read_log(path)?;
    let m = metrics::compute(&entries);
    let text = match format {
        Format::Table => m.to_table(),
        Format::Csv => m.to_csv(),
    };
    out.write_all(text.as_bytes()).map_err(|e| e.to_string())
}

/// Maps a logged `central.<op>` call to an HTTP request.
fn request_for(op: &str, args: &Value) -> Option<(String, String)> {
    let text = |v: &Value| canonical::to_canonical_string(v).expect("json value serializes");
    Some(match op {
        "provision" => ("/api/v1/topology".into(), text(args.get("topology")?)),
        "register_citizen" => ("/api/v1/citizens".into(), text(args)),
        "ingest_batch" => ("/api/v1/reports".into(), text(args.get("batch")?)),
        "ingest_station_observation" => ("/api/v1/observations".into(), text(args.get("observation")?)),
        "submit_complaint" => ("/api/v1/complaints".into(), text(args.get("submission")?)),
        "dispatch_complaint" | "resolve_complaint" => {
            let id = args.get("complaint_id")?.as_str()?;
            let action = if op == "dispatch_complaint" { "dispatch" } else { "resolve" };
            let body = serde_json::json!({ "crew_id": args.get("crew_id")? });
            (format!("/api/v1/complaints/{id}/{action}"), text(&body))
        }
        "sla_sweep" => ("/api/v1/sla/sweep".into(), String::new()),
        _ => return None,
    })
}

fn seed_service(url: &str, scenario: &Path, seed: Option<u64>, out: &mut dyn Write) -> Result<(), String> {
    let config = load_scenario(scenario, seed)?;
    let run = simulator::run_scenario(config).map_err(|e| e.to_string())?;
    let entries = parse_log(&run.log_text).map_err(|e| e.to_string())?;
    let client = reqwest::blocking::Client::builder()
        .timeout(Duration::from_secs(30))
        .build()
        .map_err(|e| e.to_string())?;
    let base = url.trim_end_matches('/');
    let (mut sent, mut expected_rejects, mut surprises) = (0u64, 0u64, Vec::new());
    for (i, e) in entries.iter().enumerate() {
        let Some(op) = e.kind.strip_prefix("central.") else { continue };
        let Some((path, body)) = request_for(op, &e.payload) else { continue };
        let failed_locally = entries.get(i + 1).is_some_and(|n| n.kind == "central.error");
        let resp = client
            .post(format!("{base}{path}"))
            .header(CLOCK_HEADER, e.at.to_string())
            .header("content-type", "application/json")
            .body(body)
            .send()
            .map_err(|err| format!("{base}{path}: {err}"))?;
        sent += 1;
        let status = resp.status();
        match (status.is_success(), failed_locally) {
            (true, false) => {}
            (false, true) => expected_rejects += 1,
            _ => surprises.push(format!("{op} at {} -> {}", e.at, status.as_u16())),
        }
    }
    writeln!(out, "sent {sent} calls to {base} ({expected_rejects} rejected as in the local run)").map_err(|e| e.to_string())?;
    if let Some(first) = surprises.first() {
        return Err(format!("{} calls diverged from the local run, first: {first}", surprises.len()));
    }
    Ok(())
}

fn serve(host: &str, port: u16, state: Option<PathBuf>, virtual_clock: bool, err: &mut dyn Write) -> Result<(), String> {
    let _ = tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .try_init();
    let addr: SocketAddr = format!("{host}:{port}")
        .parse()
        .map_err(|e| format!("bad listen address {host}:{port}: {e}"))?;
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| e.to_string())?;
    runtime.block_on(async move {
        let config = ServiceConfig {
            state_dir: state,
            virtual_clock,
            ..ServiceConfig::default()
        };
        let (svc, _writer) = ServiceHandle::start(config).map_err(|e| e.to_string())?;
        if !svc.is_virtual() {
            http::spawn_sla_sweeper(svc.clone(), Duration::from_secs(60));
        }
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| format!("cannot listen on {addr}: {e}"))?;
        let bound = listener.local_addr().map_err(|e| e.to_string())?;
        let clock = if virtual_clock { "virtual" } else { "wall" };
        writeln!(err, "listening on http://{bound} ({clock} clock)").map_err(|e| e.to_string())?;
        err.flush().map_err(|e| e.to_string())?;
        axum::serve(listener, http::router(svc))
            .with_graceful_shutdown(async {
                let _ = tokio::signal::ctrl_c().await;
            })
            .await
            .map_err(|e| e.to_string())
    })
}
