//! Closed-loop twin: gripper goals in, planned and mirrored robot state out.
//!
//! The "real" robot is an executor that replays the plan through a delay line
//! and can be perturbed by scheduled faults. The twin pose is always the forward
//! kinematics of that executor state, never of the plan.

mod node;

use std::collections::VecDeque;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::bus::schema::{GripperAction, GripperCmd};
use crate::kinematics::{
    ik_dls, plan_joint_trajectory, ArmModel, IkParams, JointTrajectory, JointVector, KinematicsError, Pose,
    DEFAULT_ACCEL_LIMIT, DEFAULT_PLANNER_DT,
};
use crate::scene::{EventKind, SessionEvent};

pub use node::TwinNode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum TwinMode {
    Idle,
    Tracking,
    Holding,
    Fault,
}

impl TwinMode {
    pub fn wire(self) -> u8 {
        match self {
            TwinMode::Idle => 0,
            TwinMode::Tracking => 1,
            TwinMode::Holding => 2,
            TwinMode::Fault => 3,
        }
    }

    pub fn from_wire(b: u8) -> Option<Self> {
        [Self::Idle, Self::Tracking, Self::Holding, Self::Fault]
            .get(b as usize)
            .copied()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    Stall,
    Deviate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultSpec {
    /// Start time, seconds of twin time.
    pub at: f64,
    pub kind: FaultKind,
    pub duration: f64,
    /// Joint offset in radians, deviate only.
    #[serde(default)]
    pub magnitude: f64,
    /// Affected joint indices; all joints when absent.
    #[serde(default)]
    pub joints: Option<Vec<usize>>,
}

/// Axis-aligned box that goal positions must lie in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WorkspaceBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for WorkspaceBox {
    fn default() -> Self {
        Self {
            min: [-0.10, -0.45, 0.0],
            max: [0.60, 0.45, 0.60],
        }
    }
}

impl WorkspaceBox {
    pub fn contains(&self, p: &Vector3<f64>) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TwinConfig {
    /// Executor delay, seconds.
    pub latency: f64,
    pub fault_plan: Vec<FaultSpec>,
    pub workspace: WorkspaceBox,
    pub ik: IkParams,
    pub accel_limit: f64,
    pub planner_dt: f64,
    /// Maximum rate at which bus goals are taken in, Hz.
    pub goal_rate: f64,
    pub max_opening: f64,
}

impl Default for TwinConfig {
    fn default() -> Self {
        Self {
            latency: 0.100,
            fault_plan: Vec::new(),
            workspace: WorkspaceBox::default(),
            ik: IkParams::default(),
            accel_limit: DEFAULT_ACCEL_LIMIT,
            planner_dt: DEFAULT_PLANNER_DT,
            goal_rate: 50.0,
            max_opening: 0.085,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TwinError {
    #[error("invalid twin configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
}

impl TwinConfig {
    pub fn validate(&self, dof: usize) -> Result<(), TwinError> {
        let bad = |m: String| Err(TwinError::Config(m));
        if !(self.latency.is_finite() && self.latency >= 0.0) {
            return bad(format!("latency {} must be >= 0", self.latency));
        }
        if !(self.goal_rate > 0.0 && self.planner_dt > 0.0 && self.accel_limit > 0.0) {
            return bad("goal_rate, planner_dt and accel_limit must be positive".into());
        }
        if !(self.max_opening > 0.0) {
            return bad(format!("max_opening {}", self.max_opening));
        }
        if (0..3).any(|i| self.workspace.min[i] >= self.workspace.max[i]) {
            return bad("workspace min must be below max".into());
        }
        let mut windows: Vec<_> = self.fault_plan.iter().collect();
        windows.sort_by(|a, b| a.at.total_cmp(&b.at));
        for f in &windows {
            if !(f.at >= 0.0 && f.duration > 0.0 && f.magnitude.is_finite()) {
                return bad(format!("fault {f:?}"));
            }
            if let Some(j) = f.joints.as_ref().and_then(|js| js.iter().find(|j| **j >= dof)) {
                return bad(format!("fault joint {j} out of range"));
            }
        }
        for w in windows.windows(2) {
            if w[0].at + w[0].duration > w[1].at {
                return bad(format!("fault windows at {} and {} overlap", w[0].at, w[1].at));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectReason {
    OutsideWorkspace,
    Unreachable,
    NotTracking,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::OutsideWorkspace => "outside_workspace",
            RejectReason::Unreachable => "unreachable",
            RejectReason::NotTracking => "not_tracking",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GoalResult {
    Accepted,
    Rejected(RejectReason),
}

/// Immutable snapshot after a tick.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinState {
    pub mode: TwinMode,
    pub planned_q: JointVector,
    pub real_q: JointVector,
    pub twin_pose: Pose,
    /// Largest per-joint gap between plan and executor, radians.
    pub divergence: f64,
}

/// Side effects for other components, drained by the owner.
#[derive(Debug, Clone, PartialEq)]
pub enum TwinOutput {
    /// Open or close forwarded to the scene, opening clamped.
    Gripper(GripperCmd),
    /// Grab/release transitions and warnings for the session log.
    Event(SessionEvent),
}

fn secs_to_ns(s: f64) -> u64 {
    (s * 1e9).round() as u64
}

#[derive(Debug, Clone)]
struct ActiveFault {
    spec: FaultSpec,
    frozen: JointVector,
}

pub struct Twin {
    arm: ArmModel,
    cfg: TwinConfig,
    mode: TwinMode,
    now_ns: u64,
    plan: Option<(u64, JointTrajectory)>,
    planned_q: JointVector,
    real_q: JointVector,
    twin_pose: Pose,
    goal: Option<Pose>,
    delay_line: VecDeque<(u64, JointVector)>,
    faults: Vec<FaultSpec>,
    active: Option<ActiveFault>,
    outbox: Vec<TwinOutput>,
}

impl Twin {
    pub fn new(arm: ArmModel, cfg: TwinConfig) -> Result<Self, TwinError> {
        cfg.validate(arm.dof())?;
        let home = arm.home().clone();
        let twin_pose = arm.fk(&home)?;
        let mut faults = cfg.fault_plan.clone();
        faults.sort_by(|a, b| a.at.total_cmp(&b.at));
        Ok(Self {
            mode: TwinMode::Idle,
            now_ns: 0,
            plan: None,
            planned_q: home.clone(),
            real_q: home.clone(),
            twin_pose,
            goal: None,
            delay_line: VecDeque::from([(0, home)]),
            faults,
            active: None,
            outbox: Vec::new(),
            arm,
            cfg,
        })
    }

    pub fn arm(&self) -> &ArmModel {
        &self.arm
    }

    pub fn config(&self) -> &TwinConfig {
        &self.cfg
    }

    pub fn mode(&self) -> TwinMode {
        self.mode
    }

    pub fn time(&self) -> f64 {
        self.now_ns as f64 / 1e9
    }

    pub fn time_ns(&self) -> u64 {
        self.now_ns
    }

    /// Last accepted goal, kept while holding.
    pub fn goal(&self) -> Option<&Pose> {
        self.goal.as_ref()
    }

    pub fn plan(&self) -> Option<&JointTrajectory> {
        self.plan.as_ref().map(|(_, p)| p)
    }

    pub fn plan_finished(&self) -> bool {
        self.plan
            .as_ref()
            .is_none_or(|(t0, p)| p.is_finished((self.now_ns - t0) as f64 / 1e9))
    }

    pub fn state(&self) -> TwinState {
        TwinState {
            mode: self.mode,
            planned_q: self.planned_q.clone(),
            real_q: self.real_q.clone(),
            twin_pose: self.twin_pose,
            divergence: self.planned_q.max_abs_diff(&self.real_q),
        }
    }

    pub fn take_outputs(&mut self) -> Vec<TwinOutput> {
        std::mem::take(&mut self.outbox)
    }

    fn emit(&mut self, ev: SessionEvent) {
        self.outbox.push(TwinOutput::Event(ev));
    }

    pub fn set_goal(&mut self, pose: Pose) -> GoalResult {
        let r = self.try_goal(pose);
        if let GoalResult::Rejected(reason) = r {
            let p = pose.position;
            let ev = SessionEvent::new(self.time(), EventKind::GoalRejected)
                .with("reason", reason.as_str())
                .with("position", vec![p.x, p.y, p.z]);
            self.emit(ev);
        }
        r
    }

    fn try_goal(&mut self, pose: Pose) -> GoalResult {
        if self.mode != TwinMode::Tracking {
            return GoalResult::Rejected(RejectReason::NotTracking);
        }
        if !self.cfg.workspace.contains(&pose.position) {
            return GoalResult::Rejected(RejectReason::OutsideWorkspace);
        }
        let q = match ik_dls(&self.arm, &self.planned_q, &pose, &self.cfg.ik) {
            Ok(q) => q,
            Err(_) => return GoalResult::Rejected(RejectReason::Unreachable),
        };
        match plan_joint_trajectory(
            &self.arm,
            &self.planned_q,
            &q,
            self.cfg.planner_dt,
            self.cfg.accel_limit,
        ) {
            Ok(traj) => {
                self.plan = Some((self.now_ns, traj));
                self.goal = Some(pose);
                GoalResult::Accepted
            }
            Err(_) => GoalResult::Rejected(RejectReason::Unreachable),
        }
    }

    pub fn handle_gripper_cmd(&mut self, cmd: GripperCmd) {
        match cmd.action {
            GripperAction::Grab => match self.mode {
                TwinMode::Idle | TwinMode::Holding => {
                    self.mode = TwinMode::Tracking;
                    let ev = SessionEvent::new(self.time(), EventKind::Grab);
                    self.emit(ev);
                }
                TwinMode::Tracking => {}
                TwinMode::Fault => {
                    let ev = SessionEvent::new(self.time(), EventKind::Fault).with("warning", "grab_ignored");
                    self.emit(ev);
                }
            },
            GripperAction::Release => {
                if self.mode == TwinMode::Tracking {
                    self.mode = TwinMode::Holding;
                    let ev = SessionEvent::new(self.time(), EventKind::Release);
                    self.emit(ev);
                }
            }
            GripperAction::Open | GripperAction::Close => {
                let o = f64::from(cmd.opening);
                let o = if o.is_finite() {
                    o.clamp(0.0, self.cfg.max_opening)
                } else {
                    0.0
                };
                self.outbox
                    .push(TwinOutput::Gripper(GripperCmd::new(cmd.action, o as f32)));
            }
        }
    }

    /// Puts the twin into FAULT immediately with no executor perturbation.
    pub fn inject_fault(&mut self, reason: &str) {
        if self.mode != TwinMode::Fault {
            self.mode = TwinMode::Fault;
            let ev = SessionEvent::new(self.time(), EventKind::Fault).with("kind", reason);
            self.emit(ev);
        }
    }

    pub fn reset(&mut self) {
        let home = self.arm.home().clone();
        self.mode = TwinMode::Idle;
        self.plan = None;
        self.goal = None;
        self.planned_q = home.clone();
        self.real_q = home.clone();
        self.twin_pose = self.arm.fk(&home).expect("home has the arm's length");
        self.delay_line = VecDeque::from([(self.now_ns, home)]);
        self.faults.clear();
        self.active = None;
    }

    fn delayed_plan(&mut self) -> JointVector {
        let cutoff = self.now_ns.checked_sub(secs_to_ns(self.cfg.latency));
        if let Some(cutoff) = cutoff {
            while self.delay_line.len() > 1 && self.delay_line[1].0 <= cutoff {
                self.delay_line.pop_front();
            }
        }
        self.delay_line[0].1.clone()
    }

    pub fn tick(&mut self, dt: f64) -> TwinState {
        debug_assert!(dt > 0.0);
        self.tick_ns(secs_to_ns(dt))
    }

    pub fn tick_ns(&mut self, dt_ns: u64) -> TwinState {
        self.now_ns += dt_ns;
        let now = self.now_ns;
        if let Some((t0, traj)) = &self.plan {
            self.planned_q = traj.sample_at((now - t0) as f64 / 1e9).clone();
        }
        self.delay_line.push_back((now, self.planned_q.clone()));
        let nominal = self.delayed_plan();

        if let Some(a) = &self.active {
            if now >= secs_to_ns(a.spec.at + a.spec.duration) {
                self.active = None;
            }
        }
        if self.active.is_none() {
            let t = self.time();
            if let Some(i) = self.faults.iter().position(|f| f.at <= t + 1e-12) {
                let spec = self.faults.remove(i);
                if t < spec.at + spec.duration {
                    let mut ev = SessionEvent::new(t, EventKind::Fault)
                        .with(
                            "kind",
                            if spec.kind == FaultKind::Stall {
                                "stall"
                            } else {
                                "deviate"
                            },
                        )
                        .with("duration", spec.duration);
                    if spec.kind == FaultKind::Deviate {
                        ev = ev.with("magnitude", spec.magnitude);
                    }
                    self.emit(ev);
                    self.mode = TwinMode::Fault;
                    self.active = Some(ActiveFault {
                        spec,
                        frozen: self.real_q.clone(),
                    });
                }
            }
        }

        self.real_q = match &self.active {
            None => nominal,
            Some(a) => match a.spec.kind {
                FaultKind::Stall => a.frozen.clone(),
                FaultKind::Deviate => {
                    let mut q = nominal;
                    for (i, v) in q.0.iter_mut().enumerate() {
                        if a.spec.joints.as_ref().is_none_or(|js| js.contains(&i)) {
                            *v += a.spec.magnitude;
                        }
                    }
                    q
                }
            },
        };
        self.twin_pose = self.arm.fk(&self.real_q).expect("executor state has the arm's length");
        self.state()
    }
}
