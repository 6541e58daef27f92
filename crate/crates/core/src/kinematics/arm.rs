use std::ops::{Deref, DerefMut};
use std::path::Path;

use nalgebra::{Isometry3, Matrix6xX, Translation3, Unit, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::pose::{Pose, TransformDoc};
use super::KinematicsError;

/// Joint angles in radians, one per arm joint.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct JointVector(pub Vec<f64>);

impl JointVector {
    pub fn zeros(n: usize) -> Self {
        Self(vec![0.0; n])
    }

    /// Largest absolute componentwise difference.
    pub fn max_abs_diff(&self, other: &JointVector) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Deref for JointVector {
    type Target = Vec<f64>;
    fn deref(&self) -> &Vec<f64> {
        &self.0
    }
}

impl DerefMut for JointVector {
    fn deref_mut(&mut self) -> &mut Vec<f64> {
        &mut self.0
    }
}

impl From<Vec<f64>> for JointVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JointDoc {
    pub axis: [f64; 3],
    pub origin: TransformDoc,
    pub limits: [f64; 2],
    pub vel_limit: f64,
}

/// On-disk arm description.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmDescription {
    pub name: String,
    pub joints: Vec<JointDoc>,
    pub tool_offset: TransformDoc,
    /// Rest configuration used on reset; zeros when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub home: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Joint {
    pub axis: Unit<Vector3<f64>>,
    pub origin: Isometry3<f64>,
    pub min: f64,
    pub max: f64,
    pub vel_limit: f64,
}

/// Validated serial arm. Immutable after load.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmModel {
    name: String,
    joints: Vec<Joint>,
    tool_offset: Isometry3<f64>,
    home: JointVector,
    reach: f64,
}

const ARM6: &str = include_str!("../../arms/arm6.json");
const ARM7: &str = include_str!("../../arms/arm7.json");

pub const BUNDLED_ARMS: [&str; 2] = ["arm6", "arm7"];

/// Per-link geometry for rendering: a segment between consecutive frame origins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkSegment {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
}

impl ArmModel {
    pub fn from_description(doc: &ArmDescription) -> Result<Self, KinematicsError> {
        let schema = |m: String| KinematicsError::Schema(m);
        if doc.joints.len() < 2 {
            return Err(schema(format!("{} joints, need at least 2", doc.joints.len())));
        }
        let mut joints = Vec::with_capacity(doc.joints.len());
        let mut reach = 0.0;
        for (i, j) in doc.joints.iter().enumerate() {
            let axis = Vector3::from(j.axis);
            if !axis.iter().all(|v| v.is_finite()) || (axis.norm() - 1.0).abs() > 1e-9 {
                return Err(KinematicsError::NonUnitAxis {
                    joint: i,
                    norm: axis.norm(),
                });
            }
            let [min, max] = j.limits;
            if !(min < max) {
                return Err(KinematicsError::InvertedLimits { joint: i, min, max });
            }
            if !(j.vel_limit > 0.0 && j.vel_limit.is_finite()) {
                return Err(schema(format!("joint {i}: vel_limit must be positive")));
            }
            let origin = j.origin.to_isometry().map_err(|m| schema(format!("joint {i}: {m}")))?;
            reach += origin.translation.vector.norm();
            joints.push(Joint {
                axis: Unit::new_unchecked(axis),
                origin,
                min,
                max,
                vel_limit: j.vel_limit,
            });
        }
        let tool_offset = doc
            .tool_offset
            .to_isometry()
            .map_err(|m| schema(format!("tool_offset: {m}")))?;
        reach += tool_offset.translation.vector.norm();
        if !(reach.is_finite() && reach > 0.0) {
            return Err(schema("total reach must be finite and positive".into()));
        }
        let home = match &doc.home {
            Some(h) if h.len() != joints.len() => {
                return Err(schema(format!(
                    "home has {} entries, arm has {}",
                    h.len(),
                    joints.len()
                )))
            }
            Some(h) => JointVector(h.clone()),
            None => JointVector::zeros(joints.len()),
        };
        let arm = Self {
            name: doc.name.clone(),
            joints,
            tool_offset,
            home,
            reach,
        };
        if arm.clamp_to_limits(&arm.home) != arm.home {
            return Err(schema("home configuration outside joint limits".into()));
        }
        Ok(arm)
    }

    pub fn from_json(text: &str) -> Result<Self, KinematicsError> {
        let doc: ArmDescription = serde_json::from_str(text).map_err(|e| KinematicsError::Schema(e.to_string()))?;
        Self::from_description(&doc)
    }

    pub fn from_file(path: &Path) -> Result<Self, KinematicsError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| KinematicsError::Schema(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// One of the arms shipped with the crate (`arm6`, `arm7`).
    pub fn bundled(name: &str) -> Result<Self, KinematicsError> {
        match name {
            "arm6" => Self::from_json(ARM6),
            "arm7" => Self::from_json(ARM7),
            other => Err(KinematicsError::UnknownArm(other.to_owned())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn joints(&self) -> &[Joint] {
        &self.joints
    }

    pub fn home(&self) -> &JointVector {
        &self.home
    }

    /// Sum of link offsets plus tool offset; an upper bound on tool distance from the base.
    pub fn total_reach(&self) -> f64 {
        self.reach
    }

    pub fn check_len(&self, q: &JointVector) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::LengthMismatch {
                expected: self.dof(),
                got: q.len(),
            });
        }
        Ok(())
    }

    pub fn within_limits(&self, q: &JointVector) -> bool {
        q.len() == self.dof() && q.iter().zip(&self.joints).all(|(v, j)| *v >= j.min && *v <= j.max)
    }

    pub fn clamp_to_limits(&self, q: &JointVector) -> JointVector {
        JointVector(q.iter().zip(&self.joints).map(|(v, j)| v.clamp(j.min, j.max)).collect())
    }

    /// World frame of every joint (after its own rotation), plus the tool frame.
    pub fn frames(&self, q: &JointVector) -> Result<(Vec<Isometry3<f64>>, Isometry3<f64>), KinematicsError> {
        self.check_len(q)?;
        let mut t = Isometry3::identity();
        let mut frames = Vec::with_capacity(self.dof());
        for (joint, angle) in self.joints.iter().zip(q.iter()) {
            t *= joint.origin;
            t *= Isometry3::from_parts(
                Translation3::identity(),
                UnitQuaternion::from_axis_angle(&joint.axis, *angle),
            );
            frames.push(t);
        }
        let tool = t * self.tool_offset;
        Ok((frames, tool))
    }

    pub fn fk(&self, q: &JointVector) -> Result<Pose, KinematicsError> {
        Ok(Pose::from_isometry(&self.frames(q)?.1))
    }

    /// Geometric Jacobian: rows are linear xyz then angular xyz, one column per joint.
    pub fn jacobian(&self, q: &JointVector) -> Result<Matrix6xX<f64>, KinematicsError> {
        let (frames, tool) = self.frames(q)?;
        let p_tool = tool.translation.vector;
        let mut jac = Matrix6xX::zeros(self.dof());
        for (i, (frame, joint)) in frames.iter().zip(&self.joints).enumerate() {
            let z = frame.rotation * joint.axis.into_inner();
            let lin = z.cross(&(p_tool - frame.translation.vector));
            jac.fixed_view_mut::<3, 1>(0, i).copy_from(&lin);
            jac.fixed_view_mut::<3, 1>(3, i).copy_from(&z);
        }
        Ok(jac)
    }

    /// Segments from the base through every joint origin to the tool point.
    pub fn link_segments(&self, q: &JointVector) -> Result<Vec<LinkSegment>, KinematicsError> {
        let (frames, tool) = self.frames(q)?;
        let mut pts = vec![Vector3::zeros()];
        pts.extend(frames.iter().map(|f| f.translation.vector));
        pts.push(tool.translation.vector);
        pts.dedup_by(|a, b| (*a - *b).norm() < 1e-9);
        Ok(pts.windows(2).map(|w| LinkSegment { a: w[0], b: w[1] }).collect())
    }
}
