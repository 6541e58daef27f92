//! Tabletop stacking task: cubes, grasp and placement rules, session phases.

mod events;
mod world;

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

pub use events::{annotate_phases, count_towers, EventKind, Phase, SessionEvent};
pub use world::{spawn_layout, Cube, GraspOutcome, Gripper, ReleaseOutcome, Support, World};

pub const CUBE_SIZE: f64 = 0.040;
pub const CUBE_HALF: f64 = CUBE_SIZE / 2.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SceneError {
    #[error("cubes {0} and {1} overlap")]
    Overlap(usize, usize),
    #[error("cube {0} does not fit on the table")]
    OffTable(usize),
    #[error("invalid scene parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TableConfig {
    pub center: [f64; 2],
    pub half_size: [f64; 2],
    pub height: f64,
}

impl Default for TableConfig {
    fn default() -> Self {
        Self {
            center: [0.2, 0.0],
            half_size: [0.45, 0.45],
            height: 0.0,
        }
    }
}

impl TableConfig {
    /// True when a square footprint of half-width `margin` centered at `p` lies on the table.
    pub fn contains(&self, p: &Vector2<f64>, margin: f64) -> bool {
        (p.x - self.center[0]).abs() + margin <= self.half_size[0] + 1e-12
            && (p.y - self.center[1]).abs() + margin <= self.half_size[1] + 1e-12
    }
}

/// Isosceles triangle of cubes. Two base cubes sit `base` apart, centered on `base_mid`,
/// and the apex cube lies `apex` away along `heading`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LayoutConfig {
    pub base_mid: [f64; 2],
    pub base: f64,
    pub apex: f64,
    /// Direction from base midpoint to apex, radians about world z.
    pub heading: f64,
    /// Overrides the computed cube centers when present.
    pub cubes: Option<[[f64; 2]; 3]>,
    /// Overrides the centroid tower target when present.
    pub target: Option<[f64; 2]>,
}

impl Default for LayoutConfig {
    fn default() -> Self {
        Self {
            base_mid: [0.15, 0.0],
            base: 0.30,
            apex: 0.25,
            heading: 0.0,
            cubes: None,
            target: None,
        }
    }
}

impl LayoutConfig {
    pub fn positions(&self) -> ([Vector2<f64>; 3], Vector2<f64>) {
        let cubes = match self.cubes {
            Some(c) => c.map(|p| Vector2::new(p[0], p[1])),
            None => {
                let m = Vector2::new(self.base_mid[0], self.base_mid[1]);
                let fwd = Vector2::new(self.heading.cos(), self.heading.sin());
                let side = Vector2::new(-fwd.y, fwd.x);
                [
                    m + side * self.base / 2.0,
                    m - side * self.base / 2.0,
                    m + fwd * self.apex,
                ]
            }
        };
        let target = self
            .target
            .map(|t| Vector2::new(t[0], t[1]))
            .unwrap_or_else(|| (cubes[0] + cubes[1] + cubes[2]) / 3.0);
        (cubes, target)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SceneConfig {
    pub table: TableConfig,
    pub layout: LayoutConfig,
    pub capture_radius: f64,
    pub stack_tol: f64,
    pub max_opening: f64,
    pub practice_len: f64,
    pub trial_len: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            table: TableConfig::default(),
            layout: LayoutConfig::default(),
            capture_radius: 0.020,
            stack_tol: 0.012,
            max_opening: 0.085,
            practice_len: 300.0,
            trial_len: 600.0,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let pos = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(SceneError::InvalidParameter(format!("{name} = {v}")))
            }
        };
        pos("capture_radius", self.capture_radius)?;
        pos("stack_tol", self.stack_tol)?;
        pos("max_opening", self.max_opening)?;
        pos("trial_len", self.trial_len)?;
        if !(self.practice_len.is_finite() && self.practice_len >= 0.0) {
            return Err(SceneError::InvalidParameter(format!(
                "practice_len = {}",
                self.practice_len
            )));
        }
        spawn_layout(self).map(|_| ())
    }
}

fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

/// Practice, trial, done. Time is kept in integer nanoseconds so that
/// many small ticks land exactly on the phase boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionClock {
    phase: Phase,
    elapsed_ns: u64,
    practice_ns: u64,
    trial_ns: u64,
    started: bool,
}

impl SessionClock {
    pub fn new(practice_len: f64, trial_len: f64) -> Self {
        Self {
            phase: Phase::Practice,
            elapsed_ns: 0,
            practice_ns: secs_to_ns(practice_len),
            trial_ns: secs_to_ns(trial_len),
            started: false,
        }
    }

    pub fn from_config(cfg: &SceneConfig) -> Self {
        Self::new(cfg.practice_len, cfg.trial_len)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed_ns as f64 / 1e9
    }

    pub fn elapsed_ns(&self) -> u64 {
        self.elapsed_ns
    }

    /// Seconds spent in the current phase.
    pub fn phase_elapsed(&self) -> f64 {
        let start = match self.phase {
            Phase::Practice => 0,
            Phase::Trial => self.practice_ns,
            Phase::Done => self.practice_ns + self.trial_ns,
        };
        self.elapsed_ns.saturating_sub(start) as f64 / 1e9
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    fn change(t_ns: u64, to: Phase) -> SessionEvent {
        SessionEvent::new(t_ns as f64 / 1e9, EventKind::PhaseChange).with("to", to.as_str())
    }

    /// Emits the opening phase change. Later calls do nothing.
    pub fn start(&mut self) -> Vec<SessionEvent> {
        if self.started {
            return Vec::new();
        }
        self.started = true;
        let mut out = vec![Self::change(0, Phase::Practice)];
        out.extend(self.advance(0));
        out
    }

    pub fn tick(&mut self, dt: f64) -> Vec<SessionEvent> {
        debug_assert!(dt > 0.0);
        self.tick_ns(secs_to_ns(dt))
    }

    pub fn tick_ns(&mut self, dt_ns: u64) -> Vec<SessionEvent> {
        let mut out = self.start();
        self.elapsed_ns += dt_ns;
        out.extend(self.advance(self.elapsed_ns));
        out
    }

    fn advance(&mut self, now: u64) -> Vec<SessionEvent> {
        let mut out = Vec::new();
        if self.phase == Phase::Practice && now >= self.practice_ns {
            self.phase = Phase::Trial;
            out.push(Self::change(self.practice_ns, Phase::Trial));
        }
        let end = self.practice_ns + self.trial_ns;
        if self.phase == Phase::Trial && now >= end {
            self.phase = Phase::Done;
            out.push(Self::change(end, Phase::Done));
        }
        out
    }
}
