use std::collections::VecDeque;

use nalgebra::{UnitQuaternion, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

use super::{AppConfig, AutopilotConfig, SessionRecorder, SimError, Simulation, StepStatus};
use crate::bus::schema::{decode_twin_state, encode_gripper_cmd, encode_pose, GripperAction, GripperCmd, TwinStateMsg};
use crate::bus::{topics, Bus, BusError, SchemaId, Subscription, SubscriptionMode};
use crate::kinematics::Pose;
use crate::scene::{SessionEvent, CUBE_HALF, CUBE_SIZE};
use crate::twinloop::TwinMode;

#[derive(Debug, thiserror::Error)]
pub enum AutopilotError {
    #[error("autopilot stuck at t={t:.2}s during {action}: {diagnostic}")]
    Stuck { t: f64, action: String, diagnostic: String },
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// Ticks to wait after a gripper command so the loop has consumed it.
const SETTLE_TICKS: u32 = 2;
/// Gap left between a placed cube and its support when descending, meters.
const PLACE_CLEARANCE: f64 = 0.003;

#[derive(Debug, Clone)]
enum Action {
    Cmd(GripperAction, f64),
    Move(Vector3<f64>, &'static str),
    /// Ends a pick-and-place cycle; the next one is planned from fresh geometry.
    Replan,
}

#[derive(Debug, Clone, Copy)]
struct CubeView {
    pos: Vector3<f64>,
    attached: bool,
    on_table: bool,
}

/// Scripted operator that sees and acts only through the bus.
pub struct Autopilot {
    bus: Bus,
    twin_sub: Subscription,
    geo_sub: Subscription,
    cfg: AutopilotConfig,
    max_opening: f64,
    tol: f64,
    rng: ChaCha8Rng,
    orientation: Option<UnitQuaternion<f64>>,
    twin: Option<TwinStateMsg>,
    geometry: Option<Value>,
    queue: VecDeque<Action>,
    current: Option<(Action, f64, u32)>,
    faulted: bool,
}

impl Autopilot {
    pub fn new(bus: Bus, app: &AppConfig) -> Result<Self, BusError> {
        Ok(Self {
            twin_sub: bus.subscribe(topics::TWIN_STATE, SubscriptionMode::LatestWins)?,
            geo_sub: bus.subscribe(topics::WORLD_GEOMETRY, SubscriptionMode::LatestWins)?,
            bus,
            cfg: app.autopilot.clone(),
            max_opening: app.scene.max_opening,
            tol: app.planner.ik.tol_pos + 5e-4,
            rng: ChaCha8Rng::seed_from_u64(app.autopilot.seed),
            orientation: None,
            twin: None,
            geometry: None,
            queue: VecDeque::new(),
            current: None,
            faulted: false,
        })
    }

    /// True once the twin has entered FAULT; the pilot then stops acting.
    pub fn faulted(&self) -> bool {
        self.faulted
    }

    fn cubes(&self) -> Vec<CubeView> {
        let Some(g) = &self.geometry else { return Vec::new() };
        g["cubes"]
            .as_array()
            .map(|cs| {
                cs.iter()
                    .filter_map(|c| {
                        let p = c["position"].as_array()?;
                        Some(CubeView {
                            pos: Vector3::new(p[0].as_f64()?, p[1].as_f64()?, p[2].as_f64()?),
                            attached: c["attached"].as_bool()?,
                            on_table: c["supported_by"] == "table",
                        })
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    fn target(&self) -> Option<(Vector2<f64>, f64)> {
        let g = self.geometry.as_ref()?;
        let t = g["target"].as_array()?;
        Some((
            Vector2::new(t[0].as_f64()?, t[1].as_f64()?),
            g["table_height"].as_f64()?,
        ))
    }

    fn jitter(&mut self) -> Vector3<f64> {
        let j = self.cfg.jitter;
        if j == 0.0 {
            return Vector3::zeros();
        }
        Vector3::new(self.rng.gen_range(-j..=j), self.rng.gen_range(-j..=j), 0.0)
    }

    /// Queues one pick-and-place cycle that grows the tower at the target by one cube.
    fn plan_cycle(&mut self) {
        let Some((target, table_h)) = self.target() else { return };
        let cubes = self.cubes();
        let near_target = |c: &CubeView| (c.pos.xy() - target).norm() < CUBE_SIZE;
        let stack: Vec<&CubeView> = cubes.iter().filter(|c| !c.attached && near_target(c)).collect();
        let level = stack.len();
        let held = cubes.iter().find(|c| c.attached).copied();
        let source = held.or_else(|| {
            cubes
                .iter()
                .find(|c| !c.attached && c.on_table && !near_target(c))
                .copied()
        });
        let Some(cube) = source else {
            // nothing left to move; clear the target zone by restacking from scratch
            self.queue.push_back(Action::Cmd(GripperAction::Open, self.max_opening));
            self.queue.push_back(Action::Replan);
            return;
        };
        let a = self.cfg.approach_height;
        self.queue.push_back(Action::Cmd(GripperAction::Grab, 0.0));
        if held.is_none() {
            self.queue.push_back(Action::Cmd(GripperAction::Open, self.max_opening));
            let above = cube.pos + Vector3::new(0.0, 0.0, a);
            let grasp = cube.pos + self.jitter();
            self.queue.push_back(Action::Move(above, "approach cube"));
            self.queue.push_back(Action::Move(grasp, "descend to cube"));
            self.queue.push_back(Action::Cmd(GripperAction::Close, 0.0));
            self.queue.push_back(Action::Move(above, "lift cube"));
        }
        let place_z = table_h + CUBE_HALF + CUBE_SIZE * level as f64 + PLACE_CLEARANCE;
        let place = Vector3::new(target.x, target.y, place_z) + self.jitter();
        let over = Vector3::new(target.x, target.y, place_z + a);
        self.queue.push_back(Action::Move(over, "approach target"));
        self.queue.push_back(Action::Move(place, "descend to target"));
        self.queue.push_back(Action::Cmd(GripperAction::Open, self.max_opening));
        self.queue.push_back(Action::Move(over, "retreat"));
        self.queue.push_back(Action::Replan);
    }

    fn reached(&self, goal: &Vector3<f64>) -> bool {
        self.twin.as_ref().is_some_and(|t| {
            (t.pose.position - goal).norm() < self.tol && t.joints.velocity.iter().all(|v| v.abs() < 1e-9)
        })
    }

    fn publish_cmd(&self, action: GripperAction, opening: f64) -> Result<(), BusError> {
        let cmd = GripperCmd::new(action, opening as f32);
        self.bus
            .publish(topics::GRIPPER_CMD, SchemaId::GripperCmd, encode_gripper_cmd(&cmd))?;
        Ok(())
    }

    /// Reads the latest state and issues at most one new command. Call once per tick.
    pub fn update(&mut self, t: f64) -> Result<(), AutopilotError> {
        if let Some(env) = self.twin_sub.poll() {
            if let Ok(m) = decode_twin_state(&env.payload) {
                self.orientation.get_or_insert(m.pose.orientation);
                self.twin = Some(m);
            }
        }
        if let Some(env) = self.geo_sub.poll() {
            if let Ok(v) = serde_json::from_slice(&env.payload) {
                self.geometry = Some(v);
            }
        }
        if self.faulted {
            return Ok(());
        }
        if self.twin.as_ref().and_then(|m| TwinMode::from_wire(m.mode)) == Some(TwinMode::Fault) {
            log::warn!("twin entered FAULT at t={t:.2}s; autopilot idles");
            self.faulted = true;
            self.queue.clear();
            self.current = None;
            return Ok(());
        }
        let (Some(q), Some(_)) = (self.orientation, &self.geometry) else {
            return Ok(());
        };

        loop {
            let Some((action, started, ticks)) = self.current.take() else {
                if self.queue.is_empty() {
                    self.plan_cycle();
                }
                let Some(next) = self.queue.pop_front() else {
                    return Ok(());
                };
                match &next {
                    Action::Cmd(a, o) => self.publish_cmd(*a, *o)?,
                    Action::Move(p, _) => {
                        self.bus
                            .publish(topics::GRIPPER_GOAL, SchemaId::Pose, encode_pose(&Pose::new(*p, q)))?;
                    }
                    Action::Replan => {
                        self.queue.clear();
                        continue;
                    }
                }
                self.current = Some((next, t, 0));
                return Ok(());
            };
            let ticks = ticks + 1;
            let done = match &action {
                Action::Cmd(..) => ticks >= SETTLE_TICKS,
                Action::Move(p, _) => self.reached(p),
                Action::Replan => true,
            };
            if done {
                continue;
            }
            if t - started > self.cfg.watchdog {
                return Err(self.stuck(t, &action));
            }
            self.current = Some((action, started, ticks));
            return Ok(());
        }
    }

    fn stuck(&self, t: f64, action: &Action) -> AutopilotError {
        let action = match action {
            Action::Move(p, name) => format!("{name} to ({:.3}, {:.3}, {:.3})", p.x, p.y, p.z),
            other => format!("{other:?}"),
        };
        let diagnostic = match &self.twin {
            Some(m) => format!(
                "twin mode {:?} at ({:.3}, {:.3}, {:.3})",
                TwinMode::from_wire(m.mode),
                m.pose.position.x,
                m.pose.position.y,
                m.pose.position.z
            ),
            None => "no twin state received".into(),
        };
        AutopilotError::Stuck { t, action, diagnostic }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AutopilotReport {
    pub events: Vec<SessionEvent>,
    /// Towers completed in any phase.
    pub towers: usize,
    pub towers_in_trial: usize,
    pub first_tower_at: Option<f64>,
    pub simulated: f64,
    pub faulted: bool,
}

/// Runs the simulation as fast as possible with the scripted operator for `duration` seconds.
pub fn run_autopilot(
    cfg: AppConfig,
    duration: f64,
    recorder: Option<SessionRecorder>,
) -> Result<AutopilotReport, AutopilotError> {
    let mut sim = Simulation::new(cfg)?;
    if let Some(r) = recorder {
        sim.set_recorder(r);
    }
    let mut pilot = Autopilot::new(sim.bus().clone(), sim.config())?;
    let ticks = (duration / sim.dt()).round() as u64;
    let mut reason = "completed";
    for _ in 0..ticks {
        if let Err(e) = pilot.update(sim.time()) {
            sim.shutdown("autopilot_stuck")?;
            return Err(e);
        }
        if sim.step()? == StepStatus::Done {
            reason = "session_done";
            break;
        }
    }
    sim.shutdown(reason)?;
    let first_tower_at = sim
        .events()
        .iter()
        .find(|e| e.kind == crate::scene::EventKind::TowerComplete)
        .map(|e| e.t);
    Ok(AutopilotReport {
        events: sim.events().to_vec(),
        towers: sim.towers_total(),
        towers_in_trial: sim.towers_in_trial(),
        first_tower_at,
        simulated: sim.time(),
        faulted: pilot.faulted(),
    })
}
