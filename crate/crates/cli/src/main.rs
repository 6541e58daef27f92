mod analyze;

use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use serde_json::json;

use desktwin::bus::{serve_bridge, Bus};
use desktwin::orchestrator::{
    header_record, load_config, read_record, replay, run_autopilot, serve, AppConfig, ServeOptions, SessionRecorder,
};

#[derive(Parser)]
#[command(
    name = "desktwin",
    version,
    about = "Desk-scale digital twin for remote pick-and-place"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the simulation, camera stage and WebSocket bridge.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Pace the loop against the wall clock.
        #[arg(long)]
        realtime: bool,
        #[arg(long)]
        port: Option<u16>,
        /// Stop after this many simulated seconds.
        #[arg(long)]
        duration: Option<f64>,
    },
    /// Drive the loop with the scripted operator, as fast as possible.
    Autopilot {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        duration: f64,
        #[arg(long)]
        seed: Option<u64>,
        /// Session log to write; defaults to `log_path` from the config.
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Republish a recorded session on the bridge.
    Replay {
        #[arg(long)]
        log: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = 8765)]
        port: u16,
    },
    /// Session metrics, group comparisons and questionnaire summaries.
    Analyze(analyze::AnalyzeArgs),
}

fn config(path: Option<&PathBuf>) -> Result<AppConfig> {
    match path {
        Some(p) => load_config(p).with_context(|| format!("loading {}", p.display())),
        None => Ok(AppConfig::default()),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::Serve {
            config: path,
            realtime,
            port,
            duration,
        } => {
            let cfg = config(path.as_ref())?;
            let shutdown = Arc::new(AtomicBool::new(false));
            for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
                signal_hook::flag::register(sig, shutdown.clone())?;
            }
            let opts = ServeOptions {
                realtime,
                duration,
                port,
                shutdown,
            };
            let report = serve(cfg, opts, |addr, _| {
                println!("{}", json!({ "listening": format!("ws://{addr}") }));
            })?;
            println!(
                "{}",
                json!({
                    "reason": report.reason,
                    "simulated": report.simulated,
                    "clouds": report.clouds,
                    "towers": report.towers,
                })
            );
        }
        Cmd::Autopilot {
            config: path,
            duration,
            seed,
            log,
        } => {
            let mut cfg = config(path.as_ref())?;
            if let Some(s) = seed {
                cfg.autopilot.seed = s;
            }
            let log = log.or_else(|| cfg.log_path.clone());
            let recorder = match &log {
                Some(p) => Some(
                    SessionRecorder::create(p, &header_record(&cfg, chrono::Utc::now()))
                        .with_context(|| format!("creating {}", p.display()))?,
                ),
                None => None,
            };
            let r = run_autopilot(cfg, duration, recorder)?;
            println!(
                "{}",
                json!({
                    "towers": r.towers,
                    "towers_in_trial": r.towers_in_trial,
                    "first_tower_at": r.first_tower_at,
                    "simulated": r.simulated,
                    "events": r.events.len(),
                    "faulted": r.faulted,
                })
            );
        }
        Cmd::Replay { log, speed, port } => {
            let session = read_record(&log)?;
            let bus = Bus::new();
            let bridge = serve_bridge(&bus, port, None)?;
            eprintln!(
                "replaying {} events on ws://{}",
                session.events.len(),
                bridge.local_addr()
            );
            let wall = replay(&bus, &session, speed)?;
            println!(
                "{}",
                json!({ "events": session.events.len(), "wall": wall.as_secs_f64() })
            );
        }
        Cmd::Analyze(args) => analyze::run(args)?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
