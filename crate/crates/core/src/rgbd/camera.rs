use nalgebra::{Isometry3, Matrix3, Point3, Rotation3, Translation3, UnitQuaternion, Vector3};
use serde::{Deserialize, Serialize};

use super::RgbdError;
use crate::kinematics::TransformDoc;

/// Pinhole intrinsics in pixels. Pixel `(u, v)` views along `((u-cx)/fx, (v-cy)/fy, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraIntrinsics {
    pub width: u16,
    pub height: u16,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl Default for CameraIntrinsics {
    /// 720p with a roughly 85 degree horizontal field of view.
    fn default() -> Self {
        Self {
            width: 1280,
            height: 720,
            fx: 700.0,
            fy: 700.0,
            cx: 639.5,
            cy: 359.5,
        }
    }
}

impl CameraIntrinsics {
    pub fn validate(&self) -> Result<(), RgbdError> {
        let ok = self.width > 0
            && self.height > 0
            && self.fx > 0.0
            && self.fy > 0.0
            && self.fx.is_finite()
            && self.fy.is_finite()
            && (0.0..self.width as f64).contains(&self.cx)
            && (0.0..self.height as f64).contains(&self.cy);
        if ok {
            Ok(())
        } else {
            Err(RgbdError::InvalidCamera(format!("{self:?}")))
        }
    }

    pub fn pixel_count(&self) -> usize {
        self.width as usize * self.height as usize
    }

    /// Camera-frame ray through pixel `(u, v)`, scaled so that its z component is 1.
    pub fn ray(&self, u: f64, v: f64) -> Vector3<f64> {
        Vector3::new((u - self.cx) / self.fx, (v - self.cy) / self.fy, 1.0)
    }

    pub fn project(&self, p: &Vector3<f64>) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Camera-to-world transform. The camera frame is x right, y down, z forward.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraExtrinsics {
    pub camera_to_world: Isometry3<f64>,
}

impl CameraExtrinsics {
    pub fn identity() -> Self {
        Self {
            camera_to_world: Isometry3::identity(),
        }
    }

    pub fn from_doc(doc: &TransformDoc) -> Result<Self, RgbdError> {
        doc.to_isometry()
            .map(|camera_to_world| Self { camera_to_world })
            .map_err(RgbdError::InvalidCamera)
    }

    pub fn to_doc(&self) -> TransformDoc {
        let q = self.camera_to_world.rotation.quaternion();
        let t = self.camera_to_world.translation.vector;
        TransformDoc {
            xyz: [t.x, t.y, t.z],
            quat: [q.w, q.i, q.j, q.k],
        }
    }

    /// Camera at `eye` looking at `target` with world z up.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>) -> Self {
        let forward = (target - eye).normalize();
        let right = forward.cross(&Vector3::z()).normalize();
        let down = forward.cross(&right);
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[right, down, forward]));
        Self {
            camera_to_world: Isometry3::from_parts(
                Translation3::from(eye.coords),
                UnitQuaternion::from_rotation_matrix(&rot),
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Camera {
    pub id: String,
    pub intrinsics: CameraIntrinsics,
    pub extrinsics: CameraExtrinsics,
}

/// Cameras spaced `separation` radians apart on a circle of `radius` around `target`,
/// pitched down by `pitch` and looking at the target. The pair is centered on `azimuth`.
pub fn ring_rig(
    target: Point3<f64>,
    radius: f64,
    pitch: f64,
    separation: f64,
    azimuth: f64,
    count: usize,
    intrinsics: CameraIntrinsics,
) -> Vec<Camera> {
    let height = radius * pitch.tan();
    (0..count)
        .map(|i| {
            let offset = (i as f64 - (count as f64 - 1.0) / 2.0) * separation;
            let a = azimuth + offset;
            let eye = Point3::new(
                target.x + radius * a.cos(),
                target.y + radius * a.sin(),
                target.z + height,
            );
            Camera {
                id: i.to_string(),
                intrinsics,
                extrinsics: CameraExtrinsics::look_at(eye, target),
            }
        })
        .collect()
}
