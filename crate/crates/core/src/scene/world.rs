use nalgebra::{Isometry3, UnitQuaternion, Vector2, Vector3};
use serde_json::{json, Value};

use super::events::{EventKind, SessionEvent};
use super::{SceneConfig, SceneError, CUBE_HALF, CUBE_SIZE};
use crate::kinematics::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Support {
    Table,
    Cube(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cube {
    pub id: usize,
    pub pose: Pose,
    pub attached: bool,
    /// `None` while attached to the gripper.
    pub supported_by: Option<Support>,
}

impl Cube {
    fn xy(&self) -> Vector2<f64> {
        self.pose.position.xy()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gripper {
    /// Pose of the point midway between the fingertips.
    pub pose: Pose,
    pub opening: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GraspOutcome {
    Attached { cube: usize },
    NoGrasp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReleaseOutcome {
    Placed { support: Support },
    Collapsed { support: usize },
    Dropped,
}

/// Quasi-static task world: the table, three cubes and the gripper.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub cubes: Vec<Cube>,
    pub gripper: Gripper,
    pub table_height: f64,
    pub target: Vector2<f64>,
    /// Session time used to stamp events, seconds.
    pub time: f64,
    config: SceneConfig,
    grasp_offset: Option<Isometry3<f64>>,
}

fn upright(x: f64, y: f64, z: f64) -> Pose {
    Pose::new(Vector3::new(x, y, z), UnitQuaternion::identity())
}

/// Cube positions and tower target from the configured isosceles layout.
pub fn spawn_layout(cfg: &SceneConfig) -> Result<World, SceneError> {
    let (cubes_xy, target) = cfg.layout.positions();
    for (i, a) in cubes_xy.iter().enumerate() {
        if !cfg.table.contains(a, CUBE_HALF) {
            return Err(SceneError::OffTable(i));
        }
        for (j, b) in cubes_xy.iter().enumerate().skip(i + 1) {
            if (a - b).norm() < CUBE_SIZE {
                return Err(SceneError::Overlap(i, j));
            }
        }
    }
    if !cfg.table.contains(&target, CUBE_HALF) {
        return Err(SceneError::OffTable(usize::MAX));
    }
    let z = cfg.table.height + CUBE_HALF;
    Ok(World {
        cubes: cubes_xy
            .iter()
            .enumerate()
            .map(|(id, p)| Cube {
                id,
                pose: upright(p.x, p.y, z),
                attached: false,
                supported_by: Some(Support::Table),
            })
            .collect(),
        gripper: Gripper {
            pose: upright(target.x, target.y, z + 0.2),
            opening: cfg.max_opening,
        },
        table_height: cfg.table.height,
        target,
        time: 0.0,
        config: cfg.clone(),
        grasp_offset: None,
    })
}

impl World {
    pub fn config(&self) -> &SceneConfig {
        &self.config
    }

    pub fn attached(&self) -> Option<usize> {
        self.cubes.iter().find(|c| c.attached).map(|c| c.id)
    }

    fn has_cube_on_top(&self, id: usize) -> bool {
        self.cubes.iter().any(|c| c.supported_by == Some(Support::Cube(id)))
    }

    /// Number of cubes from the table up to and including `id`.
    pub fn stack_height(&self, id: usize) -> usize {
        let mut h = 1;
        let mut cur = id;
        while let Some(Support::Cube(below)) = self.cubes[cur].supported_by {
            h += 1;
            cur = below;
        }
        h
    }

    fn base_of(&self, id: usize) -> usize {
        let mut cur = id;
        while let Some(Support::Cube(below)) = self.cubes[cur].supported_by {
            cur = below;
        }
        cur
    }

    fn event(&self, kind: EventKind) -> SessionEvent {
        SessionEvent::new(self.time, kind)
    }

    pub fn set_gripper_pose(&mut self, pose: Pose) {
        self.gripper.pose = pose;
        if let (Some(id), Some(off)) = (self.attached(), self.grasp_offset) {
            self.cubes[id].pose = Pose::from_isometry(&(pose.to_isometry() * off));
        }
    }

    /// Attaches the single free cube whose center lies within the capture radius of the
    /// gripper midpoint, provided the fingers were open wider than the cube.
    pub fn try_grasp(
        &mut self,
        gripper_pose: Pose,
        opening_before: f64,
        events: &mut Vec<SessionEvent>,
    ) -> GraspOutcome {
        self.set_gripper_pose(gripper_pose);
        if self.attached().is_some() || opening_before <= CUBE_SIZE {
            return GraspOutcome::NoGrasp;
        }
        let tip = gripper_pose.position;
        let mut hits = self
            .cubes
            .iter()
            .filter(|c| (c.pose.position - tip).norm() <= self.config.capture_radius && !self.has_cube_on_top(c.id))
            .map(|c| c.id);
        let (Some(id), None) = (hits.next(), hits.next()) else {
            return GraspOutcome::NoGrasp;
        };
        let cube = &mut self.cubes[id];
        cube.attached = true;
        cube.supported_by = None;
        self.grasp_offset = Some(gripper_pose.to_isometry().inverse() * cube.pose.to_isometry());
        events.push(self.event(EventKind::Pick).with("cube", id));
        GraspOutcome::Attached { cube: id }
    }

    fn level_conflict(&self, xy: &Vector2<f64>, z: f64, skip: usize) -> bool {
        self.cubes.iter().any(|c| {
            c.id != skip && !c.attached && (c.pose.position.z - z).abs() < 1e-6 && (c.xy() - xy).norm() < CUBE_SIZE
        })
    }

    /// Nearest table spot to `from` where cube `id` overlaps no other table-level cube.
    fn free_table_spot(&self, id: usize, from: Vector2<f64>) -> Vector2<f64> {
        let z = self.table_height + CUBE_HALF;
        let clearance = CUBE_SIZE + 1e-4;
        let free = |p: &Vector2<f64>| {
            self.config.table.contains(p, CUBE_HALF)
                && self.cubes.iter().all(|c| {
                    c.id == id
                        || c.attached
                        || !((c.pose.position.z - z).abs() <= 1e-6)
                        || (c.xy() - p).norm() >= clearance
                })
        };
        let start = Vector2::new(
            from.x.clamp(
                self.config.table.center[0] - self.config.table.half_size[0] + CUBE_HALF,
                self.config.table.center[0] + self.config.table.half_size[0] - CUBE_HALF,
            ),
            from.y.clamp(
                self.config.table.center[1] - self.config.table.half_size[1] + CUBE_HALF,
                self.config.table.center[1] + self.config.table.half_size[1] - CUBE_HALF,
            ),
        );
        if free(&start) {
            return start;
        }
        for ring in 1..400 {
            let r = ring as f64 * 0.005;
            let n = 8 + ring * 4;
            for k in 0..n {
                let a = k as f64 / n as f64 * std::f64::consts::TAU;
                let p = start + Vector2::new(r * a.cos(), r * a.sin());
                if free(&p) {
                    return p;
                }
            }
        }
        start
    }

    fn rest_on_table(&mut self, id: usize, near: Vector2<f64>) {
        let p = self.free_table_spot(id, near);
        let c = &mut self.cubes[id];
        c.pose = upright(p.x, p.y, self.table_height + CUBE_HALF);
        c.attached = false;
        c.supported_by = Some(Support::Table);
    }

    /// Detaches the held cube and settles it by the placement rules.
    /// Returns `None` when nothing is attached.
    pub fn release_cube(&mut self, gripper_pose: Pose, events: &mut Vec<SessionEvent>) -> Option<ReleaseOutcome> {
        self.set_gripper_pose(gripper_pose);
        let id = self.attached()?;
        self.grasp_offset = None;
        let p = self.cubes[id].xy();
        let tol = self.config.stack_tol;

        let support = self
            .cubes
            .iter()
            .filter(|c| c.id != id && !c.attached && !self.has_cube_on_top(c.id))
            .map(|c| (c.id, (c.xy() - p).norm()))
            .filter(|(_, d)| *d < CUBE_SIZE)
            .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

        let outcome = match support {
            Some((sid, offset)) if offset <= tol => {
                let z = self.cubes[sid].pose.position.z + CUBE_SIZE;
                if self.level_conflict(&p, z, id) {
                    self.rest_on_table(id, p);
                    ReleaseOutcome::Dropped
                } else {
                    let c = &mut self.cubes[id];
                    c.pose = upright(p.x, p.y, z);
                    c.attached = false;
                    c.supported_by = Some(Support::Cube(sid));
                    ReleaseOutcome::Placed {
                        support: Support::Cube(sid),
                    }
                }
            }
            Some((sid, _)) if self.stack_height(sid) >= 2 => {
                let base = self.base_of(sid);
                // everything above the base cube falls, top first, then the released cube
                let mut falling = Vec::new();
                let mut cur = sid;
                while cur != base {
                    falling.push(cur);
                    match self.cubes[cur].supported_by {
                        Some(Support::Cube(below)) => cur = below,
                        _ => break,
                    }
                }
                self.cubes[id].attached = false;
                self.cubes[id].supported_by = Some(Support::Table);
                self.cubes[id].pose.position.z = f64::NAN;
                for &f in &falling {
                    self.cubes[f].pose.position.z = f64::NAN;
                }
                for &f in falling.iter().chain(std::iter::once(&id)) {
                    let near = self.cubes[f].xy();
                    self.rest_on_table(f, near);
                }
                events.push(
                    self.event(EventKind::Collapse)
                        .with("cube", id)
                        .with("support", sid)
                        .with("scattered", falling.clone()),
                );
                return Some(ReleaseOutcome::Collapsed { support: sid });
            }
            Some(_) => {
                self.rest_on_table(id, p);
                ReleaseOutcome::Dropped
            }
            None if (p - self.target).norm() <= tol => {
                let c = &mut self.cubes[id];
                c.pose = upright(p.x, p.y, self.table_height + CUBE_HALF);
                c.attached = false;
                c.supported_by = Some(Support::Table);
                ReleaseOutcome::Placed {
                    support: Support::Table,
                }
            }
            None => {
                self.rest_on_table(id, p);
                ReleaseOutcome::Dropped
            }
        };
        let ev = self.event(EventKind::Place).with("cube", id);
        let ev = match outcome {
            ReleaseOutcome::Placed {
                support: Support::Cube(s),
            } => ev.with("on", "cube").with("support", s).with("on_table", false),
            ReleaseOutcome::Placed { .. } => ev.with("on", "target").with("on_table", true),
            _ => ev.with("on", "table").with("on_table", true),
        };
        events.push(ev.with("height", self.stack_height(id)));
        Some(outcome)
    }

    /// Cube ids of a three-high stack whose base sits in the target zone, base first.
    pub fn tower_at_target(&self) -> Option<Vec<usize>> {
        self.cubes
            .iter()
            .filter(|c| {
                c.supported_by == Some(Support::Table) && (c.xy() - self.target).norm() <= self.config.stack_tol
            })
            .find_map(|base| {
                let mut chain = vec![base.id];
                while chain.len() < 3 {
                    let top = *chain.last().unwrap();
                    let next = self.cubes.iter().find(|c| c.supported_by == Some(Support::Cube(top)))?;
                    chain.push(next.id);
                }
                Some(chain)
            })
    }

    /// Advances time by `dt`: carries the attached cube, settles free cubes,
    /// and on a completed tower emits `tower_complete` and re-arms the layout.
    pub fn step(&mut self, dt: f64, events: &mut Vec<SessionEvent>) {
        debug_assert!(dt > 0.0);
        self.time += dt;
        let gp = self.gripper.pose;
        self.set_gripper_pose(gp);
        for i in 0..self.cubes.len() {
            let z = match self.cubes[i].supported_by {
                None => continue,
                Some(Support::Table) => self.table_height + CUBE_HALF,
                Some(Support::Cube(below)) => self.cubes[below].pose.position.z + CUBE_SIZE,
            };
            let c = &mut self.cubes[i];
            c.pose = upright(c.pose.position.x, c.pose.position.y, z);
        }
        if let Some(chain) = self.tower_at_target() {
            events.push(self.event(EventKind::TowerComplete).with("cubes", chain));
            self.reset_cubes();
        }
    }

    /// Puts the cubes back to the spawn layout, keeping gripper and clock.
    pub fn reset_cubes(&mut self) {
        let fresh = spawn_layout(&self.config).expect("layout validated at spawn");
        self.cubes = fresh.cubes;
        self.grasp_offset = None;
    }

    /// Geometry snapshot for renderers and remote clients.
    pub fn geometry_json(&self) -> Value {
        json!({
            "t": self.time,
            "table_height": self.table_height,
            "target": [self.target.x, self.target.y],
            "gripper": {
                "position": [self.gripper.pose.position.x, self.gripper.pose.position.y, self.gripper.pose.position.z],
                "quat": self.gripper.pose.wxyz(),
                "opening": self.gripper.opening,
            },
            "cubes": self.cubes.iter().map(|c| json!({
                "id": c.id,
                "position": [c.pose.position.x, c.pose.position.y, c.pose.position.z],
                "quat": c.pose.wxyz(),
                "attached": c.attached,
                "supported_by": match c.supported_by {
                    None => Value::Null,
                    Some(Support::Table) => json!("table"),
                    Some(Support::Cube(s)) => json!(s),
                },
            })).collect::<Vec<_>>(),
        })
    }
}
