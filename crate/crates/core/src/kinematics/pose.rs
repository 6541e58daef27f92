use nalgebra::{Isometry3, Quaternion, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

/// Position in meters plus unit-quaternion orientation, canonicalized to `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vector3<f64>,
    pub orientation: UnitQuaternion<f64>,
}

fn canonical(q: UnitQuaternion<f64>) -> UnitQuaternion<f64> {
    if q.w < 0.0 {
        UnitQuaternion::new_unchecked(-q.into_inner())
    } else {
        q
    }
}

impl Pose {
    pub fn new(position: Vector3<f64>, orientation: UnitQuaternion<f64>) -> Self {
        Self {
            position,
            orientation: canonical(orientation),
        }
    }

    pub fn from_translation(x: f64, y: f64, z: f64) -> Self {
        Self::new(Vector3::new(x, y, z), UnitQuaternion::identity())
    }

    /// Builds from raw `[w, x, y, z]`, normalizing the quaternion.
    pub fn from_parts(position: [f64; 3], wxyz: [f64; 4]) -> Option<Self> {
        let q = Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let n = q.norm();
        if !n.is_finite() || n < 1e-12 || position.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some(Self::new(position.into(), UnitQuaternion::new_normalize(q)))
    }

    pub fn wxyz(&self) -> [f64; 4] {
        let q = self.orientation.quaternion();
        [q.w, q.i, q.j, q.k]
    }

    pub fn to_isometry(&self) -> Isometry3<f64> {
        Isometry3::from_parts(Translation3::from(self.position), self.orientation)
    }

    pub fn from_isometry(iso: &Isometry3<f64>) -> Self {
        Self::new(iso.translation.vector, iso.rotation)
    }

    /// Angle in radians of the relative rotation between the two orientations.
    pub fn rotation_error(&self, other: &Pose) -> f64 {
        self.orientation.angle_to(&other.orientation)
    }

    pub fn position_error(&self, other: &Pose) -> f64 {
        (self.position - other.position).norm()
    }

    /// Tool pointing straight down (tool z along world -z), rotated `yaw` about world z.
    pub fn downward(position: Vector3<f64>, yaw: f64) -> Self {
        let flip = UnitQuaternion::from_axis_angle(&Vector3::x_axis(), std::f64::consts::PI);
        let spin = UnitQuaternion::from_axis_angle(&Vector3::z_axis(), yaw);
        Self::new(position, spin * flip)
    }
}

/// JSON form of a rigid transform: `{ "xyz": [..], "quat": [w, x, y, z] }`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TransformDoc {
    pub xyz: [f64; 3],
    #[serde(default = "identity_wxyz")]
    pub quat: [f64; 4],
}

fn identity_wxyz() -> [f64; 4] {
    [1.0, 0.0, 0.0, 0.0]
}

impl TransformDoc {
    pub fn identity() -> Self {
        Self {
            xyz: [0.0; 3],
            quat: identity_wxyz(),
        }
    }

    /// Requires a unit quaternion within 1e-9.
    pub fn to_isometry(&self) -> Result<Isometry3<f64>, String> {
        let [w, x, y, z] = self.quat;
        let q = Quaternion::new(w, x, y, z);
        if (q.norm() - 1.0).abs() > 1e-9 {
            return Err(format!("quaternion {:?} is not unit norm", self.quat));
        }
        if self.xyz.iter().chain(self.quat.iter()).any(|v| !v.is_finite()) {
            return Err("non-finite transform".into());
        }
        Ok(Isometry3::from_parts(
            Translation3::new(self.xyz[0], self.xyz[1], self.xyz[2]),
            UnitQuaternion::new_unchecked(q),
        ))
    }
}
