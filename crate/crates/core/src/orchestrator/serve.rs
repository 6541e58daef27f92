use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use super::{header_record, AppConfig, SessionRecorder, SimError, Simulation, StepStatus};
use crate::bus::{serve_bridge, BridgeError, Bus};

#[derive(Debug, thiserror::Error)]
pub enum ServeError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bridge(#[from] BridgeError),
}

#[derive(Debug, Clone, Default)]
pub struct ServeOptions {
    /// Pace ticks against the wall clock instead of running flat out.
    pub realtime: bool,
    /// Stop after this many simulated seconds.
    pub duration: Option<f64>,
    /// Overrides `bridge_port`; 0 picks a free port.
    pub port: Option<u16>,
    /// Set from a signal handler to stop gracefully.
    pub shutdown: Arc<AtomicBool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServeReport {
    pub reason: String,
    pub simulated: f64,
    pub clouds: u64,
    pub towers: usize,
}

/// Runs the full system: simulation, camera stage, bridge and session log.
/// `on_ready` receives the bridge address before the first tick.
pub fn serve(
    cfg: AppConfig,
    opts: ServeOptions,
    on_ready: impl FnOnce(SocketAddr, &Bus),
) -> Result<ServeReport, ServeError> {
    let port = opts.port.unwrap_or(cfg.bridge_port);
    let ui_dir = cfg.ui_dir.clone();
    let log_path = cfg.log_path.clone();
    let mut sim = Simulation::new(cfg)?;
    sim.discard_events();
    let mut bridge = serve_bridge(sim.bus(), port, ui_dir)?;
    if let Some(path) = &log_path {
        let header = header_record(sim.config(), chrono::Utc::now());
        sim.set_recorder(SessionRecorder::create(path, &header).map_err(SimError::Log)?);
    }
    sim.enable_cameras()?;
    log::info!("bridge listening on ws://{}", bridge.local_addr());
    on_ready(bridge.local_addr(), sim.bus());

    let start = Instant::now();
    let reason = loop {
        if opts.shutdown.load(Ordering::Acquire) {
            break "signal";
        }
        if opts.duration.is_some_and(|d| sim.time() + sim.dt() / 2.0 > d) {
            break "duration";
        }
        if sim.step()? == StepStatus::Done {
            break "session_done";
        }
        if opts.realtime {
            let due = start + Duration::from_nanos(sim.time_ns());
            if let Some(wait) = due.checked_duration_since(Instant::now()) {
                std::thread::sleep(wait);
            }
        }
    };
    sim.shutdown(reason)?;
    bridge.shutdown();
    sim.bus().shutdown();
    Ok(ServeReport {
        reason: reason.into(),
        simulated: sim.time(),
        clouds: sim.clouds_published(),
        towers: sim.towers_total(),
    })
}
