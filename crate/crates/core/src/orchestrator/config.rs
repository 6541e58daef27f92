use std::path::{Path, PathBuf};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::kinematics::{ArmModel, IkParams, TransformDoc, DEFAULT_ACCEL_LIMIT, DEFAULT_PLANNER_DT};
use crate::rgbd::{ring_rig, Camera, CameraExtrinsics, CameraIntrinsics};
use crate::scene::SceneConfig;
use crate::twinloop::{FaultSpec, TwinConfig, WorkspaceBox};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("config: {0}")]
    Parse(String),
    #[error("config field `{field}`: {message}")]
    Invalid { field: &'static str, message: String },
}

fn invalid(field: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExecutorConfig {
    /// Seconds between a planned sample and the executor reaching it.
    pub latency: f64,
    pub fault_plan: Vec<FaultSpec>,
}

impl Default for ExecutorConfig {
    fn default() -> Self {
        Self {
            latency: 0.100,
            fault_plan: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    pub accel_limit: f64,
    pub dt: f64,
    pub goal_rate: f64,
    pub ik: IkParams,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            accel_limit: DEFAULT_ACCEL_LIMIT,
            dt: DEFAULT_PLANNER_DT,
            goal_rate: 50.0,
            ik: IkParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CameraDoc {
    pub id: String,
    #[serde(default)]
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: TransformDoc,
}

/// Either an explicit camera list or a ring of cameras around the tower target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RigConfig {
    pub count: usize,
    pub radius: f64,
    pub pitch_deg: f64,
    pub separation_deg: f64,
    pub azimuth_deg: f64,
    pub intrinsics: CameraIntrinsics,
    pub cameras: Option<Vec<CameraDoc>>,
}

impl Default for RigConfig {
    fn default() -> Self {
        Self {
            count: 2,
            radius: 1.5,
            pitch_deg: 35.0,
            separation_deg: 120.0,
            azimuth_deg: 0.0,
            intrinsics: CameraIntrinsics::default(),
            cameras: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RgbdConfig {
    pub stride: usize,
    /// Seconds between fused clouds.
    pub period: f64,
    /// Also publish the raw depth and color images.
    pub publish_frames: bool,
    pub link_radius: f64,
}

impl Default for RgbdConfig {
    fn default() -> Self {
        Self {
            stride: 4,
            period: 0.1,
            publish_frames: true,
            link_radius: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AutopilotConfig {
    pub seed: u64,
    /// Uniform horizontal waypoint noise, meters.
    pub jitter: f64,
    /// Seconds a single policy step may take before the run is declared stuck.
    pub watchdog: f64,
    /// Clearance above the grasp or place height for approach waypoints, meters.
    pub approach_height: f64,
}

impl Default for AutopilotConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            jitter: 0.002,
            watchdog: 15.0,
            approach_height: 0.08,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AppConfig {
    /// Bundled arm name, used when `arm_file` is absent.
    pub robot: String,
    pub arm_file: Option<PathBuf>,
    pub executor: ExecutorConfig,
    pub planner: PlannerConfig,
    pub workspace: WorkspaceBox,
    pub rig: RigConfig,
    pub rgbd: RgbdConfig,
    /// Simulation ticks per second.
    pub tick_rate: f64,
    pub scene: SceneConfig,
    pub bridge_port: u16,
    pub log_path: Option<PathBuf>,
    pub ui_dir: Option<PathBuf>,
    pub autopilot: AutopilotConfig,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            robot: "arm6".into(),
            arm_file: None,
            executor: ExecutorConfig::default(),
            planner: PlannerConfig::default(),
            workspace: WorkspaceBox::default(),
            rig: RigConfig::default(),
            rgbd: RgbdConfig::default(),
            tick_rate: 100.0,
            scene: SceneConfig::default(),
            bridge_port: 8765,
            log_path: None,
            ui_dir: None,
            autopilot: AutopilotConfig::default(),
        }
    }
}

impl AppConfig {
    pub fn from_json(text: &str) -> Result<Self, ConfigError> {
        let text = if text.trim().is_empty() { "{}" } else { text };
        let cfg: AppConfig = serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.tick_rate
    }

    pub fn arm(&self) -> Result<ArmModel, ConfigError> {
        match &self.arm_file {
            Some(p) => ArmModel::from_file(p).map_err(|e| invalid("arm_file", e.to_string())),
            None => ArmModel::bundled(&self.robot).map_err(|e| invalid("robot", e.to_string())),
        }
    }

    pub fn twin_config(&self) -> TwinConfig {
        TwinConfig {
            latency: self.executor.latency,
            fault_plan: self.executor.fault_plan.clone(),
            workspace: self.workspace,
            ik: self.planner.ik,
            accel_limit: self.planner.accel_limit,
            planner_dt: self.planner.dt,
            goal_rate: self.planner.goal_rate,
            max_opening: self.scene.max_opening,
        }
    }

    pub fn cameras(&self) -> Result<Vec<Camera>, ConfigError> {
        match &self.rig.cameras {
            Some(docs) => docs
                .iter()
                .map(|d| {
                    d.intrinsics
                        .validate()
                        .map_err(|e| invalid("rig.cameras", e.to_string()))?;
                    let extrinsics =
                        CameraExtrinsics::from_doc(&d.extrinsics).map_err(|e| invalid("rig.cameras", e.to_string()))?;
                    Ok(Camera {
                        id: d.id.clone(),
                        intrinsics: d.intrinsics,
                        extrinsics,
                    })
                })
                .collect(),
            None => {
                let (_, target) = self.scene.layout.positions();
                Ok(ring_rig(
                    Point3::new(target.x, target.y, self.scene.table.height),
                    self.rig.radius,
                    self.rig.pitch_deg.to_radians(),
                    self.rig.separation_deg.to_radians(),
                    self.rig.azimuth_deg.to_radians(),
                    self.rig.count,
                    self.rig.intrinsics,
                ))
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let arm = self.arm()?;
        if !(self.tick_rate.is_finite() && self.tick_rate > 0.0) {
            return Err(invalid("tick_rate", format!("{} must be positive", self.tick_rate)));
        }
        if !(self.executor.latency.is_finite() && self.executor.latency >= 0.0) {
            return Err(invalid(
                "executor.latency",
                format!("{} must be >= 0", self.executor.latency),
            ));
        }
        if !(self.rgbd.period.is_finite() && self.rgbd.period > 0.0) {
            return Err(invalid("rgbd.period", format!("{} must be positive", self.rgbd.period)));
        }
        if self.rgbd.stride == 0 {
            return Err(invalid("rgbd.stride", "must be at least 1"));
        }
        if !(self.rgbd.link_radius >= 0.0) {
            return Err(invalid("rgbd.link_radius", "must be >= 0"));
        }
        if self.rig.cameras.is_none() {
            self.rig
                .intrinsics
                .validate()
                .map_err(|e| invalid("rig.intrinsics", e.to_string()))?;
            if !(self.rig.radius > 0.0) {
                return Err(invalid("rig.radius", "must be positive"));
            }
        }
        self.cameras()?;
        self.twin_config()
            .validate(arm.dof())
            .map_err(|e| invalid("executor", e.to_string()))?;
        self.scene.validate().map_err(|e| invalid("scene", e.to_string()))?;
        if !(self.autopilot.watchdog > 0.0 && self.autopilot.jitter >= 0.0 && self.autopilot.approach_height > 0.0) {
            return Err(invalid(
                "autopilot",
                "watchdog and approach_height must be positive, jitter >= 0",
            ));
        }
        if let Some(d) = &self.ui_dir {
            if !d.is_dir() {
                return Err(invalid("ui_dir", format!("{} is not a directory", d.display())));
            }
        }
        if let Some(parent) = self.log_path.as_ref().and_then(|p| p.parent()) {
            if !parent.as_os_str().is_empty() && !parent.is_dir() {
                return Err(invalid(
                    "log_path",
                    format!("directory {} does not exist", parent.display()),
                ));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(json).iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn load_config(path: &Path) -> Result<AppConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    AppConfig::from_json(&text)
}
