use crate::bus::schema::{
    decode_gripper_cmd, decode_pose, encode_event_json, encode_joint_state, encode_twin_state, JointState, TwinStateMsg,
};
use crate::bus::{topics, Bus, BusError, SchemaId, Subscription, SubscriptionMode};
use crate::kinematics::{JointVector, Pose};

use super::{GoalResult, Twin, TwinOutput, TwinState};

/// Connects a [`Twin`] to the bus. Commands are drained at the start of each tick.
pub struct TwinNode {
    twin: Twin,
    bus: Bus,
    goals: Subscription,
    cmds: Subscription,
    pending_goal: Option<Pose>,
    last_intake_ns: Option<u64>,
    prev: Option<(JointVector, JointVector)>,
    malformed: u64,
}

fn velocity(q: &JointVector, prev: Option<&JointVector>, dt: f64) -> Vec<f64> {
    match prev {
        Some(p) if dt > 0.0 => q.iter().zip(p.iter()).map(|(a, b)| (a - b) / dt).collect(),
        _ => vec![0.0; q.len()],
    }
}

impl TwinNode {
    pub fn new(bus: Bus, twin: Twin) -> Result<Self, BusError> {
        let goals = bus.subscribe(topics::GRIPPER_GOAL, SubscriptionMode::LatestWins)?;
        let cmds = bus.subscribe(topics::GRIPPER_CMD, SubscriptionMode::Queued { capacity: 256 })?;
        Ok(Self {
            twin,
            bus,
            goals,
            cmds,
            pending_goal: None,
            last_intake_ns: None,
            prev: None,
            malformed: 0,
        })
    }

    pub fn twin(&self) -> &Twin {
        &self.twin
    }

    pub fn twin_mut(&mut self) -> &mut Twin {
        &mut self.twin
    }

    /// Payloads on the input topics that failed to decode.
    pub fn malformed(&self) -> u64 {
        self.malformed
    }

    fn intake(&mut self) -> Option<GoalResult> {
        for env in self.cmds.drain() {
            match decode_gripper_cmd(&env.payload) {
                Ok(c) => self.twin.handle_gripper_cmd(c),
                Err(e) => {
                    self.malformed += 1;
                    log::warn!("dropping gripper command: {e}");
                }
            }
        }
        if let Some(env) = self.goals.poll() {
            match decode_pose(&env.payload) {
                Ok(p) => self.pending_goal = Some(p),
                Err(e) => {
                    self.malformed += 1;
                    log::warn!("dropping gripper goal: {e}");
                }
            }
        }
        let min_gap = (1e9 / self.twin.config().goal_rate).round() as u64;
        let now = self.twin.time_ns();
        let due = self.last_intake_ns.is_none_or(|t| now >= t + min_gap);
        if due {
            if let Some(goal) = self.pending_goal.take() {
                self.last_intake_ns = Some(now);
                return Some(self.twin.set_goal(goal));
            }
        }
        None
    }

    /// Drains inputs, advances the twin and publishes its state.
    pub fn tick(&mut self, dt: f64) -> Result<(TwinState, Vec<TwinOutput>), BusError> {
        self.intake();
        let st = self.twin.tick(dt);
        let outputs = self.twin.take_outputs();
        let (pp, rp) = match &self.prev {
            Some((p, r)) => (Some(p), Some(r)),
            None => (None, None),
        };
        let plan = JointState {
            position: st.planned_q.0.clone(),
            velocity: velocity(&st.planned_q, pp, dt),
        };
        let real = JointState {
            position: st.real_q.0.clone(),
            velocity: velocity(&st.real_q, rp, dt),
        };
        let enc = |r: Result<Vec<u8>, _>| r.expect("arm dof fits the joint-state schema");
        self.bus.publish(
            topics::PLAN_JOINT_STATES,
            SchemaId::JointState,
            enc(encode_joint_state(&plan)),
        )?;
        self.bus.publish(
            topics::ROBOT_JOINT_STATES,
            SchemaId::JointState,
            enc(encode_joint_state(&real)),
        )?;
        let msg = TwinStateMsg {
            mode: st.mode.wire(),
            joints: real,
            pose: st.twin_pose,
        };
        self.bus
            .publish(topics::TWIN_STATE, SchemaId::TwinState, enc(encode_twin_state(&msg)))?;
        for o in &outputs {
            if let TwinOutput::Event(ev) = o {
                let payload = encode_event_json(&ev.to_json()).expect("events are objects");
                self.bus.publish(topics::WORLD_EVENTS, SchemaId::Event, payload)?;
            }
        }
        self.prev = Some((st.planned_q.clone(), st.real_q.clone()));
        Ok((st, outputs))
    }
}
