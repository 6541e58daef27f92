//! RGB-D sensing: synthetic capture, pinhole deprojection, world-frame fusion,
//! rate throttling and the compact point-cloud wire codec.

pub mod camera;
pub mod render;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::bus::schema::{Reader, SchemaError};

pub use camera::{ring_rig, Camera, CameraExtrinsics, CameraIntrinsics};
pub use render::{render, CapsulePrim, CubePrim, Rgb, SceneGeometry, TableTop};

#[derive(Debug, Error, PartialEq)]
pub enum RgbdError {
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("frame is {got_w}x{got_h}, intrinsics expect {want_w}x{want_h}")]
    DimensionMismatch {
        got_w: u16,
        got_h: u16,
        want_w: u16,
        want_h: u16,
    },
    #[error("stride must be at least 1")]
    BadStride,
    #[error("cloud is already in the world frame")]
    AlreadyWorld,
    #[error("cannot fuse clouds in different frames")]
    MixedFrames,
    #[error(transparent)]
    Codec(#[from] SchemaError),
}

/// Depth in millimeters, row-major; 0 marks an invalid pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthFrame {
    pub width: u16,
    pub height: u16,
    pub data: Vec<u16>,
}

/// Row-major RGB, three bytes per pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ColorFrame {
    pub width: u16,
    pub height: u16,
    pub data: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CloudPoint {
    pub xyz: [f32; 3],
    pub rgb: [u8; 3],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CloudFrame {
    Camera,
    World,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
    pub frame: CloudFrame,
    pub timestamp_ns: u64,
}

impl PointCloud {
    pub fn empty(frame: CloudFrame) -> Self {
        Self {
            points: Vec::new(),
            frame,
            timestamp_ns: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Back-projects every `stride`-th pixel with valid depth into the camera frame.
pub fn deproject(
    depth: &DepthFrame,
    color: &ColorFrame,
    k: &CameraIntrinsics,
    stride: usize,
) -> Result<PointCloud, RgbdError> {
    for (w, h) in [(depth.width, depth.height), (color.width, color.height)] {
        if (w, h) != (k.width, k.height) {
            return Err(RgbdError::DimensionMismatch {
                got_w: w,
                got_h: h,
                want_w: k.width,
                want_h: k.height,
            });
        }
    }
    if stride == 0 {
        return Err(RgbdError::BadStride);
    }
    let w = k.width as usize;
    let mut points = Vec::with_capacity(depth.data.len() / (stride * stride) + 1);
    for v in (0..k.height as usize).step_by(stride) {
        for u in (0..w).step_by(stride) {
            let i = v * w + u;
            let mm = depth.data[i];
            if mm == 0 {
                continue;
            }
            let z = mm as f64 / 1000.0;
            let x = (u as f64 - k.cx) * z / k.fx;
            let y = (v as f64 - k.cy) * z / k.fy;
            points.push(CloudPoint {
                xyz: [x as f32, y as f32, z as f32],
                rgb: [color.data[3 * i], color.data[3 * i + 1], color.data[3 * i + 2]],
            });
        }
    }
    Ok(PointCloud {
        points,
        frame: CloudFrame::Camera,
        timestamp_ns: 0,
    })
}

pub fn to_world(cloud: &PointCloud, x: &CameraExtrinsics) -> Result<PointCloud, RgbdError> {
    if cloud.frame == CloudFrame::World {
        return Err(RgbdError::AlreadyWorld);
    }
    let t = &x.camera_to_world;
    let points = cloud
        .points
        .iter()
        .map(|p| {
            let local = Point3::new(p.xyz[0] as f64, p.xyz[1] as f64, p.xyz[2] as f64);
            let w = t.transform_point(&local);
            CloudPoint {
                xyz: [w.x as f32, w.y as f32, w.z as f32],
                rgb: p.rgb,
            }
        })
        .collect();
    Ok(PointCloud {
        points,
        frame: CloudFrame::World,
        timestamp_ns: cloud.timestamp_ns,
    })
}

/// Concatenation of world-frame clouds; timestamp is the latest input's.
pub fn fuse(clouds: &[PointCloud]) -> Result<PointCloud, RgbdError> {
    if clouds.iter().any(|c| c.frame != CloudFrame::World) {
        return Err(RgbdError::MixedFrames);
    }
    let mut out = PointCloud::empty(CloudFrame::World);
    out.points.reserve(clouds.iter().map(PointCloud::len).sum());
    for c in clouds {
        out.points.extend_from_slice(&c.points);
        out.timestamp_ns = out.timestamp_ns.max(c.timestamp_ns);
    }
    Ok(out)
}

/// Full capture for one camera: render, deproject, move to world frame.
pub fn capture(
    scene: &SceneGeometry,
    cam: &Camera,
    stride: usize,
) -> Result<(DepthFrame, ColorFrame, PointCloud), RgbdError> {
    let (d, c) = render(scene, &cam.intrinsics, &cam.extrinsics);
    let cloud = to_world(&deproject(&d, &c, &cam.intrinsics, stride)?, &cam.extrinsics)?;
    Ok((d, c, cloud))
}

/// Passes at most one capture per period, with slots aligned to multiples of the period.
#[derive(Debug, Clone)]
pub struct Throttle {
    period_ns: u64,
    next_ns: Option<u64>,
}

impl Throttle {
    pub fn new(period_s: f64) -> Result<Self, RgbdError> {
        if !(period_s > 0.0 && period_s.is_finite()) {
            return Err(RgbdError::InvalidCamera(format!("throttle period {period_s}")));
        }
        Ok(Self {
            period_ns: (period_s * 1e9).round().max(1.0) as u64,
            next_ns: None,
        })
    }

    pub fn period_ns(&self) -> u64 {
        self.period_ns
    }

    /// Returns whether a capture offered at `t_ns` should be emitted.
    pub fn offer(&mut self, t_ns: u64) -> bool {
        if self.next_ns.is_none_or(|n| t_ns >= n) {
            self.next_ns = Some((t_ns / self.period_ns + 1) * self.period_ns);
            true
        } else {
            false
        }
    }
}

pub const CLOUD_POINT_LEN: usize = 16;

/// Schema 3 payload: `u32 count | count x {3 x f32 xyz, u8 r, g, b, u8 pad}`.
pub fn encode_cloud(c: &PointCloud) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + CLOUD_POINT_LEN * c.len());
    out.extend_from_slice(&(c.len() as u32).to_le_bytes());
    for p in &c.points {
        for v in p.xyz {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&p.rgb);
        out.push(0);
    }
    out
}

pub fn decode_cloud(b: &[u8]) -> Result<Vec<CloudPoint>, RgbdError> {
    let mut r = Reader::new(b);
    let count = r.u32()? as usize;
    let rest = r.remaining();
    if !rest.is_multiple_of(CLOUD_POINT_LEN) {
        return Err(SchemaError::Truncated {
            needed: 4 + count * CLOUD_POINT_LEN,
            available: b.len(),
        }
        .into());
    }
    if rest / CLOUD_POINT_LEN != count {
        return Err(SchemaError::CountMismatch(format!(
            "declared {count} points, payload holds {}",
            rest / CLOUD_POINT_LEN
        ))
        .into());
    }
    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let xyz = [r.f32()?, r.f32()?, r.f32()?];
        let c = r.take(4)?;
        if c[3] != 0 {
            return Err(SchemaError::Invalid("nonzero pad byte".into()).into());
        }
        points.push(CloudPoint {
            xyz,
            rgb: [c[0], c[1], c[2]],
        });
    }
    Ok(points)
}

/// Schema 5 payload: `u16 w | u16 h | w*h x u16 mm`.
pub fn encode_depth(d: &DepthFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + 2 * d.data.len());
    out.extend_from_slice(&d.width.to_le_bytes());
    out.extend_from_slice(&d.height.to_le_bytes());
    for v in &d.data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_depth(b: &[u8]) -> Result<DepthFrame, RgbdError> {
    let mut r = Reader::new(b);
    let (width, height) = (r.u16()?, r.u16()?);
    let n = width as usize * height as usize;
    let raw = r.take(2 * n)?;
    r.finish()?;
    Ok(DepthFrame {
        width,
        height,
        data: raw.chunks_exact(2).map(|c| u16::from_le_bytes([c[0], c[1]])).collect(),
    })
}

/// Schema 6 payload: `u16 w | u16 h | w*h x 3 u8`.
pub fn encode_color(c: &ColorFrame) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + c.data.len());
    out.extend_from_slice(&c.width.to_le_bytes());
    out.extend_from_slice(&c.height.to_le_bytes());
    out.extend_from_slice(&c.data);
    out
}

pub fn decode_color(b: &[u8]) -> Result<ColorFrame, RgbdError> {
    let mut r = Reader::new(b);
    let (width, height) = (r.u16()?, r.u16()?);
    let data = r.take(3 * width as usize * height as usize)?.to_vec();
    r.finish()?;
    Ok(ColorFrame { width, height, data })
}

pub fn point_vec(p: &CloudPoint) -> Vector3<f64> {
    Vector3::new(p.xyz[0] as f64, p.xyz[1] as f64, p.xyz[2] as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn frames(k: &CameraIntrinsics, mm: u16) -> (DepthFrame, ColorFrame) {
        let n = k.pixel_count();
        (
            DepthFrame {
                width: k.width,
                height: k.height,
                data: vec![mm; n],
            },
            ColorFrame {
                width: k.width,
                height: k.height,
                data: vec![7; 3 * n],
            },
        )
    }

    fn sparse(k: &CameraIntrinsics, pixels: &[(usize, usize)], mm: u16) -> (DepthFrame, ColorFrame) {
        let (mut d, c) = frames(k, 0);
        for (u, v) in pixels {
            d.data[v * k.width as usize + u] = mm;
        }
        (d, c)
    }

    #[test]
    fn principal_point_and_unit_tangent() {
        let k = CameraIntrinsics {
            width: 9,
            height: 5,
            fx: 4.0,
            fy: 4.0,
            cx: 2.0,
            cy: 2.0,
        };
        let (d, c) = sparse(&k, &[(2, 2), (6, 2)], 1000);
        let cloud = deproject(&d, &c, &k, 1).unwrap();
        assert_eq!(cloud.points[0].xyz, [0.0, 0.0, 1.0]);
        assert_eq!(cloud.points[1].xyz, [1.0, 0.0, 1.0]);
    }

    #[test]
    fn count_matches_valid_pixels() {
        let k = CameraIntrinsics::default();
        let (d, c) = frames(&k, 800);
        assert_eq!(deproject(&d, &c, &k, 1).unwrap().len(), k.pixel_count());
        assert_eq!(deproject(&d, &c, &k, 4).unwrap().len(), 320 * 180);
        let (d, c) = sparse(&k, &[(1, 1), (5, 9), (100, 100)], 500);
        assert_eq!(deproject(&d, &c, &k, 1).unwrap().len(), 3);
    }

    #[test]
    fn dimension_mismatch_and_stride() {
        let k = CameraIntrinsics::default();
        let (d, c) = frames(&k, 1);
        let small = CameraIntrinsics {
            width: 640,
            height: 480,
            cx: 320.0,
            cy: 240.0,
            ..k
        };
        assert!(matches!(
            deproject(&d, &c, &small, 1),
            Err(RgbdError::DimensionMismatch { .. })
        ));
        assert_eq!(deproject(&d, &c, &k, 0), Err(RgbdError::BadStride));
    }

    fn cloud_of(n: usize) -> PointCloud {
        PointCloud {
            points: (0..n)
                .map(|i| CloudPoint {
                    xyz: [i as f32, 0.5, -1.0],
                    rgb: [i as u8, 2, 3],
                })
                .collect(),
            frame: CloudFrame::World,
            timestamp_ns: n as u64,
        }
    }

    #[test]
    fn world_transform() {
        let mut c = cloud_of(3);
        c.frame = CloudFrame::Camera;
        let same = to_world(&c, &CameraExtrinsics::identity()).unwrap();
        assert_eq!(same.points, c.points);
        let shifted = to_world(
            &c,
            &CameraExtrinsics {
                camera_to_world: nalgebra::Isometry3::translation(1.0, 0.0, 0.0),
            },
        )
        .unwrap();
        for (a, b) in shifted.points.iter().zip(&c.points) {
            assert_eq!(a.xyz[0], b.xyz[0] + 1.0);
            assert_eq!(a.xyz[1..], b.xyz[1..]);
        }
        assert_eq!(
            to_world(&shifted, &CameraExtrinsics::identity()),
            Err(RgbdError::AlreadyWorld)
        );
    }

    #[test]
    fn fusion() {
        let a = cloud_of(100);
        assert_eq!(fuse(std::slice::from_ref(&a)).unwrap(), a);
        let f = fuse(&[cloud_of(100), cloud_of(100)]).unwrap();
        assert_eq!(f.len(), 200);
        assert_eq!(f.timestamp_ns, 100);
        assert!(fuse(&[]).unwrap().is_empty());
        let mut cam = cloud_of(1);
        cam.frame = CloudFrame::Camera;
        assert_eq!(fuse(&[a, cam]), Err(RgbdError::MixedFrames));
    }

    #[test]
    fn throttle_thirty_hz_source() {
        let mut t = Throttle::new(0.1).unwrap();
        let emitted = (0..90u64).filter(|k| t.offer(k * 1_000_000_000 / 30)).count();
        assert_eq!(emitted, 30);
    }

    #[test]
    fn throttle_slow_source_passes_everything() {
        let mut t = Throttle::new(0.1).unwrap();
        assert!((0..50u64).all(|k| t.offer(k * 150_000_000)));
    }

    #[test]
    fn throttle_ten_seconds_of_ticks() {
        let mut t = Throttle::new(0.1).unwrap();
        let emitted = (0..1000u64).filter(|k| t.offer(k * 10_000_000)).count();
        assert!((98..=102).contains(&emitted), "{emitted}");
    }

    #[test]
    fn cloud_layout() {
        let b = encode_cloud(&cloud_of(1));
        assert_eq!(b.len(), 20);
        assert_eq!(b[19], 0);
        let mut bad = encode_cloud(&cloud_of(4));
        bad[..4].copy_from_slice(&5u32.to_le_bytes());
        assert!(matches!(
            decode_cloud(&bad),
            Err(RgbdError::Codec(SchemaError::CountMismatch(_)))
        ));
        let b = encode_cloud(&cloud_of(2));
        assert!(matches!(
            decode_cloud(&b[..30]),
            Err(RgbdError::Codec(SchemaError::Truncated { .. }))
        ));
    }

    #[test]
    fn depth_and_color_codecs() {
        let k = CameraIntrinsics {
            width: 4,
            height: 3,
            fx: 1.0,
            fy: 1.0,
            cx: 1.0,
            cy: 1.0,
        };
        let (d, c) = frames(&k, 1234);
        assert_eq!(decode_depth(&encode_depth(&d)).unwrap(), d);
        assert_eq!(decode_color(&encode_color(&c)).unwrap(), c);
        assert!(decode_depth(&encode_depth(&d)[..10]).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn cloud_round_trip(pts in proptest::collection::vec((any::<[f32; 3]>(), any::<[u8; 3]>()), 0..10_000)) {
            let c = PointCloud {
                points: pts.into_iter().map(|(xyz, rgb)| CloudPoint { xyz, rgb }).collect(),
                frame: CloudFrame::World,
                timestamp_ns: 0,
            };
            let b = encode_cloud(&c);
            prop_assert_eq!(b.len(), 4 + 16 * c.len());
            let back = decode_cloud(&b).unwrap();
            // compare bit patterns so NaN payloads count as equal
            let bits = |p: &[CloudPoint]| p.iter().map(|p| (p.xyz.map(f32::to_bits), p.rgb)).collect::<Vec<_>>();
            prop_assert_eq!(bits(&back), bits(&c.points));
        }
    }
}
