use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{sync_channel, SyncSender};
use std::sync::Arc;
use std::thread::JoinHandle;

use serde_json::json;

use super::{AppConfig, ConfigError, SessionRecorder};
use crate::bus::schema::{encode_event_json, GripperAction};
use crate::bus::{topics, Bus, BusError, Envelope, SchemaId};
use crate::kinematics::{ArmModel, JointVector};
use crate::rgbd::{
    capture, encode_cloud, encode_color, encode_depth, fuse, Camera, CapsulePrim, CubePrim, SceneGeometry, TableTop,
    Throttle,
};
use crate::scene::{spawn_layout, EventKind, Phase, SessionClock, SessionEvent, World, CUBE_HALF};
use crate::twinloop::{Twin, TwinNode, TwinOutput, TwinState};

const CUBE_COLORS: [[u8; 3]; 3] = [[200, 40, 40], [40, 170, 60], [40, 80, 200]];
const TABLE_COLOR: [u8; 3] = [150, 120, 90];
const ARM_COLOR: [u8; 3] = [110, 110, 120];

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Bus(#[from] BusError),
    #[error("session log: {0}")]
    Log(#[from] std::io::Error),
    #[error("{0}")]
    Setup(String),
}

/// Everything the cameras see at one instant.
pub fn scene_geometry(world: &World, arm: &ArmModel, q: &JointVector, link_radius: f64) -> SceneGeometry {
    let t = &world.config().table;
    let mut capsules = Vec::new();
    if link_radius > 0.0 {
        for s in arm.link_segments(q).expect("executor state has the arm's length") {
            capsules.push(CapsulePrim {
                a: s.a,
                b: s.b,
                radius: link_radius,
                color: ARM_COLOR,
            });
        }
    }
    SceneGeometry {
        table: Some(TableTop {
            center: t.center,
            half_size: t.half_size,
            height: t.height,
            color: TABLE_COLOR,
        }),
        cubes: world
            .cubes
            .iter()
            .map(|c| CubePrim {
                pose: c.pose.to_isometry(),
                half_extent: CUBE_HALF,
                color: CUBE_COLORS[c.id % CUBE_COLORS.len()],
            })
            .collect(),
        capsules,
    }
}

struct Snapshot {
    t_ns: u64,
    geometry: SceneGeometry,
}

/// Renders and publishes camera data on its own thread. The channel holds one
/// snapshot, so a slow stage holds the simulation back instead of dropping clouds.
struct RgbdStage {
    tx: Option<SyncSender<Snapshot>>,
    worker: Option<JoinHandle<()>>,
    throttle: Throttle,
}

fn forward(bus: &Bus, topic: &str, schema: SchemaId, t_ns: u64, payload: Vec<u8>) -> Result<(), BusError> {
    bus.forward(Envelope::new(topic, schema, t_ns, payload)?)
}

impl RgbdStage {
    fn start(bus: Bus, cameras: Vec<Camera>, stride: usize, period: f64, frames: bool, clouds: Arc<AtomicU64>) -> Self {
        let (tx, rx) = sync_channel::<Snapshot>(1);
        let worker = std::thread::Builder::new()
            .name("rgbd".into())
            .spawn(move || {
                for snap in rx {
                    let mut parts = Vec::with_capacity(cameras.len());
                    for cam in &cameras {
                        let (d, c, cloud) = capture(&snap.geometry, cam, stride).expect("cameras validated at startup");
                        if frames {
                            let _ = forward(
                                &bus,
                                &topics::cam_depth(&cam.id),
                                SchemaId::DepthFrame,
                                snap.t_ns,
                                encode_depth(&d),
                            );
                            let _ = forward(
                                &bus,
                                &topics::cam_color(&cam.id),
                                SchemaId::ColorFrame,
                                snap.t_ns,
                                encode_color(&c),
                            );
                        }
                        parts.push(cloud);
                    }
                    let mut fused = fuse(&parts).expect("captures are world-frame");
                    fused.timestamp_ns = snap.t_ns;
                    if forward(
                        &bus,
                        topics::CLOUD_FUSED,
                        SchemaId::PointCloud,
                        snap.t_ns,
                        encode_cloud(&fused),
                    )
                    .is_ok()
                    {
                        clouds.fetch_add(1, Ordering::Relaxed);
                    }
                }
            })
            .expect("spawn rgbd worker");
        Self {
            tx: Some(tx),
            worker: Some(worker),
            throttle: Throttle::new(period).expect("period validated"),
        }
    }

    fn stop(&mut self) {
        self.tx.take();
        if let Some(w) = self.worker.take() {
            let _ = w.join();
        }
    }
}

impl Drop for RgbdStage {
    fn drop(&mut self) {
        self.stop();
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepStatus {
    Running,
    Done,
}

/// Single-threaded owner of twin, scene and session clock, stepped in fixed ticks.
pub struct Simulation {
    cfg: AppConfig,
    bus: Bus,
    clock: Arc<AtomicU64>,
    node: TwinNode,
    world: World,
    session: SessionClock,
    dt_ns: u64,
    now_ns: u64,
    last_state: TwinState,
    rgbd: Option<RgbdStage>,
    clouds: Arc<AtomicU64>,
    recorder: Option<SessionRecorder>,
    events: Vec<SessionEvent>,
    keep_events: bool,
    towers_trial: usize,
    towers_total: usize,
}

impl Simulation {
    /// A simulation on a fresh bus driven by simulation time.
    pub fn new(cfg: AppConfig) -> Result<Self, SimError> {
        let (bus, clock) = Bus::with_manual_clock();
        Self::with_bus(cfg, bus, clock)
    }

    pub fn with_bus(cfg: AppConfig, bus: Bus, clock: Arc<AtomicU64>) -> Result<Self, SimError> {
        cfg.validate()?;
        let arm = cfg.arm()?;
        let twin = Twin::new(arm, cfg.twin_config()).map_err(|e| SimError::Setup(e.to_string()))?;
        let last_state = twin.state();
        let node = TwinNode::new(bus.clone(), twin)?;
        let world = spawn_layout(&cfg.scene).map_err(|e| SimError::Setup(e.to_string()))?;
        Ok(Self {
            session: SessionClock::from_config(&cfg.scene),
            dt_ns: (1e9 / cfg.tick_rate).round() as u64,
            now_ns: 0,
            last_state,
            rgbd: None,
            clouds: Arc::new(AtomicU64::new(0)),
            recorder: None,
            events: Vec::new(),
            keep_events: true,
            towers_trial: 0,
            towers_total: 0,
            world,
            node,
            bus,
            clock,
            cfg,
        })
    }

    /// Starts the camera stage; clouds are published on the bus from then on.
    pub fn enable_cameras(&mut self) -> Result<(), SimError> {
        if self.rgbd.is_none() {
            let cams = self.cfg.cameras()?;
            self.rgbd = Some(RgbdStage::start(
                self.bus.clone(),
                cams,
                self.cfg.rgbd.stride,
                self.cfg.rgbd.period,
                self.cfg.rgbd.publish_frames,
                self.clouds.clone(),
            ));
        }
        Ok(())
    }

    pub fn set_recorder(&mut self, r: SessionRecorder) {
        self.recorder = Some(r);
    }

    /// Stops retaining events in memory (the recorder still sees them).
    pub fn discard_events(&mut self) {
        self.keep_events = false;
        self.events.clear();
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    pub fn config(&self) -> &AppConfig {
        &self.cfg
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn twin(&self) -> &Twin {
        self.node.twin()
    }

    pub fn twin_state(&self) -> &TwinState {
        &self.last_state
    }

    pub fn session(&self) -> &SessionClock {
        &self.session
    }

    pub fn time(&self) -> f64 {
        self.now_ns as f64 / 1e9
    }

    pub fn time_ns(&self) -> u64 {
        self.now_ns
    }

    pub fn dt(&self) -> f64 {
        self.dt_ns as f64 / 1e9
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn towers_in_trial(&self) -> usize {
        self.towers_trial
    }

    pub fn towers_total(&self) -> usize {
        self.towers_total
    }

    pub fn clouds_published(&self) -> u64 {
        self.clouds.load(Ordering::Relaxed)
    }

    fn publish_event(&self, ev: &SessionEvent) -> Result<(), BusError> {
        let payload = encode_event_json(&ev.to_json()).expect("events are objects");
        self.bus.publish(topics::WORLD_EVENTS, SchemaId::Event, payload)?;
        Ok(())
    }

    fn apply_gripper(&mut self, action: GripperAction, opening: f64, out: &mut Vec<SessionEvent>) {
        let pose = self.last_state.twin_pose;
        match action {
            GripperAction::Close => {
                let before = self.world.gripper.opening;
                self.world.gripper.opening = opening;
                self.world.try_grasp(pose, before, out);
            }
            GripperAction::Open => {
                self.world.gripper.opening = opening;
                self.world.release_cube(pose, out);
            }
            GripperAction::Grab | GripperAction::Release => {}
        }
    }

    /// Advances one tick.
    pub fn step(&mut self) -> Result<StepStatus, SimError> {
        if self.session.is_done() {
            return Ok(StepStatus::Done);
        }
        self.now_ns += self.dt_ns;
        self.clock.fetch_max(self.now_ns, Ordering::SeqCst);
        let dt = self.dt();

        let mut log = Vec::new();
        let mut announce = Vec::new();
        for ev in self.session.tick_ns(self.dt_ns) {
            if ev.phase_target() == Some(Phase::Trial) {
                self.world.reset_cubes();
            }
            announce.push(ev.clone());
            log.push(ev);
        }
        if self.session.is_done() {
            return self.finish_tick(log, announce).map(|_| StepStatus::Done);
        }

        let (state, outputs) = self.node.tick(dt)?;
        self.last_state = state;
        self.world.time = self.time();
        let mut scene_events = Vec::new();
        for o in outputs {
            match o {
                TwinOutput::Event(ev) => log.push(ev),
                TwinOutput::Gripper(cmd) => {
                    self.world.set_gripper_pose(self.last_state.twin_pose);
                    self.apply_gripper(cmd.action, f64::from(cmd.opening), &mut scene_events)
                }
            }
        }
        self.world.set_gripper_pose(self.last_state.twin_pose);
        self.world.step(dt, &mut scene_events);
        for ev in &scene_events {
            if ev.kind == EventKind::TowerComplete {
                self.towers_total += 1;
                if self.session.phase() == Phase::Trial {
                    self.towers_trial += 1;
                }
            }
        }
        announce.extend(scene_events.iter().cloned());
        log.extend(scene_events);

        if let Some(stage) = &mut self.rgbd {
            if stage.throttle.offer(self.now_ns) {
                let geometry = scene_geometry(
                    &self.world,
                    self.node.twin().arm(),
                    &self.last_state.real_q,
                    self.cfg.rgbd.link_radius,
                );
                if let Some(tx) = &stage.tx {
                    tx.send(Snapshot {
                        t_ns: self.now_ns,
                        geometry,
                    })
                    .map_err(|_| SimError::Setup("camera stage stopped".into()))?;
                }
            }
        }
        self.finish_tick(log, announce)?;
        Ok(StepStatus::Running)
    }

    fn finish_tick(&mut self, log: Vec<SessionEvent>, announce: Vec<SessionEvent>) -> Result<(), SimError> {
        for ev in &announce {
            self.publish_event(ev)?;
        }
        let geo = serde_json::to_vec(&self.world.geometry_json()).expect("geometry serializes");
        self.bus.publish(topics::WORLD_GEOMETRY, SchemaId::Event, geo)?;
        let clock = json!({
            "phase": self.session.phase().as_str(),
            "elapsed": self.session.elapsed(),
            "phase_elapsed": self.session.phase_elapsed(),
        });
        self.bus.publish(
            topics::SESSION_CLOCK,
            SchemaId::Event,
            serde_json::to_vec(&clock).expect("json"),
        )?;
        if let Some(r) = &mut self.recorder {
            for ev in &log {
                r.record(ev)?;
            }
        }
        if self.keep_events {
            self.events.extend(log);
        }
        Ok(())
    }

    /// Stops the camera stage and writes the shutdown record.
    pub fn shutdown(&mut self, reason: &str) -> Result<(), SimError> {
        if let Some(mut s) = self.rgbd.take() {
            s.stop();
        }
        let (t, towers) = (self.time(), self.towers_total);
        if let Some(r) = &mut self.recorder {
            r.finish(t, reason, towers)?;
        }
        Ok(())
    }
}

impl Drop for Simulation {
    fn drop(&mut self) {
        let _ = self.shutdown("dropped");
    }
}
