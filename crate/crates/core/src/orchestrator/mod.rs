//! The runnable application: configuration, the simulation loop, session
//! logs, replay and the scripted autopilot.

mod autopilot;
mod config;
mod record;
mod replay;
mod serve;
mod sim;

pub use autopilot::{run_autopilot, Autopilot, AutopilotError, AutopilotReport};
pub use config::{
    load_config, AppConfig, AutopilotConfig, CameraDoc, ConfigError, ExecutorConfig, PlannerConfig, RgbdConfig,
    RigConfig,
};
pub use record::{header_record, SessionRecorder};
pub use replay::{parse_record, read_record, replay, LoggedEvent, LoggedSession, ReplayError};
pub use serve::{serve, ServeError, ServeOptions, ServeReport};
pub use sim::{scene_geometry, SimError, Simulation, StepStatus};
