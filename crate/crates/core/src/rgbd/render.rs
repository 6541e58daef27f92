//! CPU raycaster producing depth/color frames from analytic scene primitives.

use nalgebra::{Isometry3, Point3, Vector3};
use serde::{Deserialize, Serialize};

use super::camera::{CameraExtrinsics, CameraIntrinsics};
use super::{ColorFrame, DepthFrame};

pub type Rgb = [u8; 3];

/// Finite horizontal rectangle (the table top).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableTop {
    pub center: [f64; 2],
    pub half_size: [f64; 2],
    pub height: f64,
    pub color: Rgb,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubePrim {
    pub pose: Isometry3<f64>,
    pub half_extent: f64,
    pub color: Rgb,
}

/// Segment swept by a sphere; used for arm links.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CapsulePrim {
    pub a: Vector3<f64>,
    pub b: Vector3<f64>,
    pub radius: f64,
    pub color: Rgb,
}

/// Immutable snapshot of everything the cameras can see.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneGeometry {
    pub table: Option<TableTop>,
    pub cubes: Vec<CubePrim>,
    pub capsules: Vec<CapsulePrim>,
}

impl SceneGeometry {
    pub fn is_empty(&self) -> bool {
        self.table.is_none() && self.cubes.is_empty() && self.capsules.is_empty()
    }
}

/// Ray parameter (in units of `d`) of the first hit in front of the origin.
fn hit_table(t: &TableTop, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    if d.z == 0.0 {
        return None;
    }
    let s = (t.height - o.z) / d.z;
    if s <= 0.0 {
        return None;
    }
    let x = o.x + s * d.x - t.center[0];
    let y = o.y + s * d.y - t.center[1];
    (x.abs() <= t.half_size[0] && y.abs() <= t.half_size[1]).then_some(s)
}

#[cfg(test)]
fn hit_cube(c: &CubePrim, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    hit_box(&c.pose.inverse(), c.half_extent, o, d)
}

fn hit_box(inv: &Isometry3<f64>, h: f64, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let lo = inv.transform_point(&Point3::from(*o)).coords;
    let ld = inv.transform_vector(d);
    let (mut tmin, mut tmax) = (f64::NEG_INFINITY, f64::INFINITY);
    for i in 0..3 {
        if ld[i] == 0.0 {
            if lo[i].abs() > h {
                return None;
            }
            continue;
        }
        let t1 = (-h - lo[i]) / ld[i];
        let t2 = (h - lo[i]) / ld[i];
        tmin = tmin.max(t1.min(t2));
        tmax = tmax.min(t1.max(t2));
    }
    (tmax >= tmin && tmin > 0.0).then_some(tmin)
}

fn hit_capsule(c: &CapsulePrim, o: &Vector3<f64>, d: &Vector3<f64>) -> Option<f64> {
    let len = d.norm();
    let rd = d / len;
    let ba = c.b - c.a;
    let oa = o - c.a;
    let baba = ba.dot(&ba);
    let bard = ba.dot(&rd);
    let baoa = ba.dot(&oa);
    let rdoa = rd.dot(&oa);
    let oaoa = oa.dot(&oa);
    let r2 = c.radius * c.radius;
    let a = baba - bard * bard;
    let mut best = None;
    if a > 1e-12 {
        let b = baba * rdoa - baoa * bard;
        let cc = baba * oaoa - baoa * baoa - r2 * baba;
        let h = b * b - a * cc;
        if h >= 0.0 {
            let t = (-b - h.sqrt()) / a;
            let y = baoa + t * bard;
            if y > 0.0 && y < baba && t > 0.0 {
                return Some(t / len);
            }
        }
    }
    for center in [c.a, c.b] {
        let oc = o - center;
        let b = rd.dot(&oc);
        let h = b * b - (oc.dot(&oc) - r2);
        if h >= 0.0 {
            let t = -b - h.sqrt();
            if t > 0.0 && best.is_none_or(|bt| t < bt) {
                best = Some(t);
            }
        }
    }
    best.map(|t| t / len)
}

/// Conservative pixel rectangle covering a world-space sphere, or the whole image.
fn pixel_bounds(
    k: &CameraIntrinsics,
    world_to_cam: &Isometry3<f64>,
    center: &Vector3<f64>,
    radius: f64,
) -> Option<(usize, usize, usize, usize)> {
    let (w, h) = (k.width as usize, k.height as usize);
    let c = world_to_cam.transform_point(&Point3::from(*center)).coords;
    if c.z + radius <= 0.0 {
        return None;
    }
    if c.z - radius <= 1e-3 {
        return Some((0, w, 0, h));
    }
    let zs = [c.z - radius, c.z + radius];
    let span = |v: f64, f: f64, cc: f64| {
        let vals = [v - radius, v + radius];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for x in vals {
            for z in zs {
                let p = f * x / z + cc;
                lo = lo.min(p);
                hi = hi.max(p);
            }
        }
        (lo, hi)
    };
    let (u0, u1) = span(c.x, k.fx, k.cx);
    let (v0, v1) = span(c.y, k.fy, k.cy);
    let clamp = |x: f64, n: usize| x.max(0.0).min(n as f64) as usize;
    let (u0, u1) = (clamp(u0.floor(), w), clamp(u1.ceil() + 1.0, w));
    let (v0, v1) = (clamp(v0.floor(), h), clamp(v1.ceil() + 1.0, h));
    (u0 < u1 && v0 < v1).then_some((u0, u1, v0, v1))
}

/// Raycasts every pixel. Depth is the camera-frame z of the nearest hit in
/// millimeters (rounded); misses and out-of-range hits are 0.
pub fn render(scene: &SceneGeometry, k: &CameraIntrinsics, x: &CameraExtrinsics) -> (DepthFrame, ColorFrame) {
    let (w, h) = (k.width as usize, k.height as usize);
    let mut zbuf = vec![f64::INFINITY; w * h];
    let mut color = vec![0u8; w * h * 3];
    let origin = x.camera_to_world.translation.vector;
    let rot = x.camera_to_world.rotation;
    let world_to_cam = x.camera_to_world.inverse();

    let mut shade =
        |u0: usize, u1: usize, v0: usize, v1: usize, rgb: Rgb, hit: &dyn Fn(&Vector3<f64>) -> Option<f64>| {
            for v in v0..v1 {
                for u in u0..u1 {
                    let d = rot * k.ray(u as f64, v as f64);
                    if let Some(z) = hit(&d) {
                        let i = v * w + u;
                        if z < zbuf[i] {
                            zbuf[i] = z;
                            color[3 * i..3 * i + 3].copy_from_slice(&rgb);
                        }
                    }
                }
            }
        };

    if let Some(t) = &scene.table {
        let c = Vector3::new(t.center[0], t.center[1], t.height);
        let r = (t.half_size[0].powi(2) + t.half_size[1].powi(2)).sqrt();
        if let Some((u0, u1, v0, v1)) = pixel_bounds(k, &world_to_cam, &c, r) {
            shade(u0, u1, v0, v1, t.color, &|d| hit_table(t, &origin, d));
        }
    }
    for c in &scene.cubes {
        let r = c.half_extent * 3f64.sqrt();
        if let Some((u0, u1, v0, v1)) = pixel_bounds(k, &world_to_cam, &c.pose.translation.vector, r) {
            let inv = c.pose.inverse();
            shade(u0, u1, v0, v1, c.color, &|d| hit_box(&inv, c.half_extent, &origin, d));
        }
    }
    for c in &scene.capsules {
        let center = (c.a + c.b) / 2.0;
        let r = (c.b - c.a).norm() / 2.0 + c.radius;
        if let Some((u0, u1, v0, v1)) = pixel_bounds(k, &world_to_cam, &center, r) {
            shade(u0, u1, v0, v1, c.color, &|d| hit_capsule(c, &origin, d));
        }
    }

    let depth = zbuf
        .iter()
        .map(|z| {
            let mm = (z * 1000.0).round();
            if mm.is_finite() && (1.0..65536.0).contains(&mm) {
                mm as u16
            } else {
                0
            }
        })
        .collect::<Vec<_>>();
    for (i, d) in depth.iter().enumerate() {
        if *d == 0 {
            color[3 * i..3 * i + 3].fill(0);
        }
    }
    (
        DepthFrame {
            width: k.width,
            height: k.height,
            data: depth,
        },
        ColorFrame {
            width: k.width,
            height: k.height,
            data: color,
        },
    )
}
