//! Payload codecs for the small fixed schemas (1, 2, 4, 7, 8).
//! Point clouds and camera frames live in [`crate::rgbd`].

use nalgebra::Vector3;
use thiserror::Error;

use crate::kinematics::{JointVector, Pose};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SchemaError {
    #[error("payload truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("payload has {0} unexpected trailing bytes")]
    Trailing(usize),
    #[error("count mismatch: {0}")]
    CountMismatch(String),
    #[error("invalid value: {0}")]
    Invalid(String),
}

/// Little-endian cursor over a payload.
pub(crate) struct Reader<'a> {
    buf: &'a [u8],
    at: usize,
}

impl<'a> Reader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        Self { buf, at: 0 }
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8], SchemaError> {
        let end = self
            .at
            .checked_add(n)
            .filter(|e| *e <= self.buf.len())
            .ok_or(SchemaError::Truncated {
                needed: self.at.saturating_add(n),
                available: self.buf.len(),
            })?;
        let s = &self.buf[self.at..end];
        self.at = end;
        Ok(s)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.at
    }

    pub fn u8(&mut self) -> Result<u8, SchemaError> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16, SchemaError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32, SchemaError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f32(&mut self) -> Result<f32, SchemaError> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64, SchemaError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn finish(self) -> Result<(), SchemaError> {
        match self.remaining() {
            0 => Ok(()),
            n => Err(SchemaError::Trailing(n)),
        }
    }
}

pub const POSE_LEN: usize = 56;

pub fn encode_pose_into(p: &Pose, out: &mut Vec<u8>) {
    for v in p.position.iter().chain(p.wxyz().iter()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_pose(p: &Pose) -> Vec<u8> {
    let mut out = Vec::with_capacity(POSE_LEN);
    encode_pose_into(p, &mut out);
    out
}

fn read_pose(r: &mut Reader<'_>) -> Result<Pose, SchemaError> {
    let mut v = [0.0; 7];
    for x in v.iter_mut() {
        *x = r.f64()?;
    }
    Pose::from_parts([v[0], v[1], v[2]], [v[3], v[4], v[5], v[6]])
        .ok_or_else(|| SchemaError::Invalid("degenerate pose".into()))
}

pub fn decode_pose(b: &[u8]) -> Result<Pose, SchemaError> {
    let mut r = Reader::new(b);
    let p = read_pose(&mut r)?;
    r.finish()?;
    Ok(p)
}

/// Joint positions (rad) and velocities (rad/s).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointState {
    pub position: Vec<f64>,
    pub velocity: Vec<f64>,
}

impl JointState {
    pub fn at_rest(q: &JointVector) -> Self {
        Self {
            position: q.0.clone(),
            velocity: vec![0.0; q.len()],
        }
    }
}

pub fn encode_joint_state_into(js: &JointState, out: &mut Vec<u8>) -> Result<(), SchemaError> {
    let n = js.position.len();
    if n > u8::MAX as usize || js.velocity.len() != n {
        return Err(SchemaError::CountMismatch(format!(
            "{} positions, {} velocities",
            n,
            js.velocity.len()
        )));
    }
    out.push(n as u8);
    for v in js.position.iter().chain(&js.velocity) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(())
}

pub fn encode_joint_state(js: &JointState) -> Result<Vec<u8>, SchemaError> {
    let mut out = Vec::with_capacity(1 + 16 * js.position.len());
    encode_joint_state_into(js, &mut out)?;
    Ok(out)
}

fn read_joint_state(r: &mut Reader<'_>) -> Result<JointState, SchemaError> {
    let n = r.u8()? as usize;
    let position = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    let velocity = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
    Ok(JointState { position, velocity })
}

pub fn decode_joint_state(b: &[u8]) -> Result<JointState, SchemaError> {
    let mut r = Reader::new(b);
    let js = read_joint_state(&mut r)?;
    r.finish()?;
    Ok(js)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum GripperAction {
    Release = 0,
    Grab = 1,
    Open = 2,
    Close = 3,
}

impl GripperAction {
    pub const ALL: [GripperAction; 4] = [Self::Release, Self::Grab, Self::Open, Self::Close];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GripperCmd {
    pub action: GripperAction,
    /// Finger opening in meters (used by open/close).
    pub opening: f32,
}

impl GripperCmd {
    pub fn new(action: GripperAction, opening: f32) -> Self {
        Self { action, opening }
    }
}

pub fn encode_gripper_cmd(c: &GripperCmd) -> Vec<u8> {
    let mut out = Vec::with_capacity(5);
    out.push(c.action as u8);
    out.extend_from_slice(&c.opening.to_le_bytes());
    out
}

pub fn decode_gripper_cmd(b: &[u8]) -> Result<GripperCmd, SchemaError> {
    let mut r = Reader::new(b);
    let a = r.u8()?;
    let action = *GripperAction::ALL
        .get(a as usize)
        .ok_or_else(|| SchemaError::Invalid(format!("gripper action {a}")))?;
    let opening = r.f32()?;
    r.finish()?;
    Ok(GripperCmd { action, opening })
}

/// Wire form of the twin state: mode byte, mirrored joint state, twin tool pose.
#[derive(Debug, Clone, PartialEq)]
pub struct TwinStateMsg {
    pub mode: u8,
    pub joints: JointState,
    pub pose: Pose,
}

pub fn encode_twin_state(m: &TwinStateMsg) -> Result<Vec<u8>, SchemaError> {
    let mut out = Vec::with_capacity(2 + 16 * m.joints.position.len() + POSE_LEN);
    out.push(m.mode);
    encode_joint_state_into(&m.joints, &mut out)?;
    encode_pose_into(&m.pose, &mut out);
    Ok(out)
}

pub fn decode_twin_state(b: &[u8]) -> Result<TwinStateMsg, SchemaError> {
    let mut r = Reader::new(b);
    let mode = r.u8()?;
    let joints = read_joint_state(&mut r)?;
    let pose = read_pose(&mut r)?;
    r.finish()?;
    Ok(TwinStateMsg { mode, joints, pose })
}

/// Schema 4 payloads are UTF-8 JSON objects.
pub fn encode_event_json(v: &serde_json::Value) -> Result<Vec<u8>, SchemaError> {
    if !v.is_object() {
        return Err(SchemaError::Invalid("event payload must be a JSON object".into()));
    }
    Ok(serde_json::to_vec(v).expect("serializing a Value cannot fail"))
}

pub fn decode_event_json(b: &[u8]) -> Result<serde_json::Value, SchemaError> {
    let v: serde_json::Value = serde_json::from_slice(b).map_err(|e| SchemaError::Invalid(e.to_string()))?;
    if !v.is_object() {
        return Err(SchemaError::Invalid("event payload must be a JSON object".into()));
    }
    Ok(v)
}

pub fn vec3_f32(v: &Vector3<f64>) -> [f32; 3] {
    [v.x as f32, v.y as f32, v.z as f32]
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::UnitQuaternion;

    #[test]
    fn pose_is_56_bytes() {
        let p = Pose::new(
            Vector3::new(0.1, 0.2, 0.3),
            UnitQuaternion::from_euler_angles(0.1, 0.2, 0.3),
        );
        let b = encode_pose(&p);
        assert_eq!(b.len(), POSE_LEN);
        let d = decode_pose(&b).unwrap();
        assert_eq!(d.position, p.position);
        assert_eq!(d.wxyz(), p.wxyz());
    }

    #[test]
    fn joint_state_round_trip() {
        let js = JointState {
            position: vec![0.1, -0.2, 0.3],
            velocity: vec![0.0, 1.0, -1.0],
        };
        let b = encode_joint_state(&js).unwrap();
        assert_eq!(b.len(), 1 + 48);
        assert_eq!(decode_joint_state(&b).unwrap(), js);
        assert!(matches!(
            decode_joint_state(&b[..20]),
            Err(SchemaError::Truncated { .. })
        ));
    }

    #[test]
    fn gripper_cmd() {
        let c = GripperCmd::new(GripperAction::Close, 0.02);
        let b = encode_gripper_cmd(&c);
        assert_eq!(b.len(), 5);
        assert_eq!(decode_gripper_cmd(&b).unwrap(), c);
        assert!(decode_gripper_cmd(&[4, 0, 0, 0, 0]).is_err());
    }

    #[test]
    fn twin_state_round_trip() {
        let m = TwinStateMsg {
            mode: 2,
            joints: JointState::at_rest(&vec![0.5; 6].into()),
            pose: Pose::from_translation(0.3, 0.0, 0.2),
        };
        assert_eq!(decode_twin_state(&encode_twin_state(&m).unwrap()).unwrap(), m);
    }

    #[test]
    fn event_payload_must_be_object() {
        assert!(encode_event_json(&serde_json::json!([1, 2])).is_err());
        assert!(decode_event_json(b"{\"t\":1}").is_ok());
        assert!(decode_event_json(b"3").is_err());
    }
}
