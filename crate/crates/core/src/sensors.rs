//! Simulated depth camera, tracking camera and object detector.
//!
//! Every function here is a pure function of its inputs plus an explicit
//! seed, so identical calls are bit-identical.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Pose, Vec3};
use crate::scene::SceneModel;

/// Depth value stored for pixels whose ray hits nothing within range.
pub const NO_RETURN: f64 = f64::INFINITY;

/// Depth value for pixels a masked render skipped.
pub const NOT_RENDERED: f64 = f64::NAN;

const NEAR_PLANE: f64 = 0.05;

/// Pinhole model. Pixel `(u, v)` has its center at `(u + 0.5, v + 0.5)`;
/// `u` grows to the right of the optical axis and `v` downward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraIntrinsics {
    pub width: usize,
    pub height: usize,
    /// Horizontal field of view (rad).
    pub hfov: f64,
    /// Vertical field of view (rad).
    pub vfov: f64,
    /// Farthest depth return (m).
    pub max_range: f64,
    /// Farthest distance at which the detector reports objects (m).
    pub detection_range: f64,
}

impl Default for CameraIntrinsics {
    fn default() -> Self {
        Self {
            width: 640,
            height: 480,
            hfov: 69.4f64.to_radians(),
            vfov: 42.5f64.to_radians(),
            max_range: 6.0,
            detection_range: 3.5,
        }
    }
}

impl CameraIntrinsics {
    pub fn is_valid(&self) -> bool {
        let fov_ok = |f: f64| f > 0.0 && f < std::f64::consts::PI;
        self.width > 0
            && self.height > 0
            && fov_ok(self.hfov)
            && fov_ok(self.vfov)
            && self.max_range > 0.0
            && self.detection_range > 0.0
    }

    pub fn fx(&self) -> f64 {
        self.width as f64 * 0.5 / (self.hfov * 0.5).tan()
    }

    pub fn fy(&self) -> f64 {
        self.height as f64 * 0.5 / (self.vfov * 0.5).tan()
    }

    /// Unit ray through the center of pixel `(u, v)` in the camera frame
    /// (forward, left, up).
    pub fn pixel_ray(&self, u: usize, v: usize) -> Vec3 {
        let x = (u as f64 + 0.5 - self.width as f64 * 0.5) / self.fx();
        let y = (v as f64 + 0.5 - self.height as f64 * 0.5) / self.fy();
        Vec3::new(1.0, -x, -y).normalize()
    }

    /// Continuous image coordinates of a camera-frame point in front of the camera.
    pub fn project(&self, cam: &Vec3) -> Option<(f64, f64)> {
        if cam.x <= NEAR_PLANE {
            return None;
        }
        let u = self.width as f64 * 0.5 - self.fx() * cam.y / cam.x;
        let v = self.height as f64 * 0.5 - self.fy() * cam.z / cam.x;
        Some((u, v))
    }

    pub fn in_image(&self, u: f64, v: f64) -> bool {
        u >= 0.0 && v >= 0.0 && u < self.width as f64 && v < self.height as f64
    }
}

/// Per-pixel range image with the pose it is believed to have been taken from.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthImage {
    pub intrinsics: CameraIntrinsics,
    pub pose: Pose,
    /// Row-major ranges along each pixel ray (m); [`NO_RETURN`] for misses.
    pub depth: Vec<f64>,
}

impl DepthImage {
    pub fn empty(intrinsics: CameraIntrinsics, pose: Pose) -> Self {
        Self {
            intrinsics,
            pose,
            depth: vec![NO_RETURN; intrinsics.width * intrinsics.height],
        }
    }

    pub fn get(&self, u: usize, v: usize) -> f64 {
        self.depth[v * self.intrinsics.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, d: f64) {
        let w = self.intrinsics.width;
        self.depth[v * w + u] = d;
    }

    /// World-frame point for pixel `(u, v)`, if it has a return.
    pub fn point(&self, u: usize, v: usize) -> Option<Vec3> {
        let d = self.get(u, v);
        d.is_finite().then(|| {
            let ray = self.intrinsics.pixel_ray(u, v);
            self.pose.transform_point(&(ray * d))
        })
    }
}

/// A set of world-frame points.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<Vec3>,
}

impl PointCloud {
    pub fn new(points: Vec<Vec3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Option<Vec3> {
        if self.points.is_empty() {
            return None;
        }
        let sum: Vec3 = self.points.iter().sum();
        Some(sum / self.points.len() as f64)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SensorNoise {
    /// Range noise std (m), independent of range.
    pub depth_std: f64,
    /// Tracking-camera position noise std per axis (m).
    pub pose_std: f64,
    /// Tracking-camera heading noise std (rad).
    pub yaw_std: f64,
    /// Chance that any single object is missed in a frame.
    pub false_negative_prob: f64,
    /// Std of the pixel jitter applied to each bounding-box edge.
    pub bbox_jitter_px: f64,
    /// Stationary std per horizontal axis of the slowly varying tracking drift (m).
    pub pose_drift_std: f64,
    /// Correlation time of the tracking drift (s).
    pub pose_drift_tau: f64,
}

impl Default for SensorNoise {
    fn default() -> Self {
        Self {
            depth_std: 0.01,
            pose_std: 0.01,
            yaw_std: 0.005,
            false_negative_prob: 0.2,
            bbox_jitter_px: 2.0,
            pose_drift_std: 0.03,
            pose_drift_tau: 10.0,
        }
    }
}

impl SensorNoise {
    pub fn zero() -> Self {
        Self {
            depth_std: 0.0,
            pose_std: 0.0,
            yaw_std: 0.0,
            false_negative_prob: 0.0,
            bbox_jitter_px: 0.0,
            pose_drift_std: 0.0,
            pose_drift_tau: 10.0,
        }
    }

    pub fn is_valid(&self) -> bool {
        [
            self.depth_std,
            self.pose_std,
            self.yaw_std,
            self.bbox_jitter_px,
            self.pose_drift_std,
        ]
        .iter()
        .all(|v| *v >= 0.0 && v.is_finite())
            && (0.0..=1.0).contains(&self.false_negative_prob)
            && self.pose_drift_tau > 0.0
            && self.pose_drift_tau.is_finite()
    }
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    let z: f64 = rng.sample(StandardNormal);
    z * std
}

/// Renders every pixel of the depth image.
pub fn render_depth(
    scene: &SceneModel,
    camera: &Pose,
    intr: &CameraIntrinsics,
    noise: &SensorNoise,
    seed: u64,
) -> DepthImage {
    render_depth_masked(scene, camera, intr, noise, seed, |_, _| true)
}

/// Renders only the pixels selected by `mask`; the rest hold [`NOT_RENDERED`].
///
/// Noise draws follow row-major order over the selected pixels.
pub fn render_depth_masked(
    scene: &SceneModel,
    camera: &Pose,
    intr: &CameraIntrinsics,
    noise: &SensorNoise,
    seed: u64,
    mask: impl Fn(usize, usize) -> bool,
) -> DepthImage {
    let mut img = DepthImage::empty(*intr, *camera);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (fwd, left) = (camera.forward(), camera.left());
    for v in 0..intr.height {
        for u in 0..intr.width {
            if !mask(u, v) {
                img.set(u, v, NOT_RENDERED);
                continue;
            }
            let r = intr.pixel_ray(u, v);
            let dir = fwd * r.x + left * r.y + Vec3::z() * r.z;
            if let Some(t) = scene.raycast(&camera.position, &dir, intr.max_range) {
                let noisy = t + gaussian(&mut rng, noise.depth_std);
                img.set(u, v, noisy.clamp(1e-6, intr.max_range));
            }
        }
    }
    img
}

/// Back-projects every `stride`-th pixel (in both axes) with a return.
pub fn depth_to_pointcloud(img: &DepthImage, stride: usize) -> PointCloud {
    let stride = stride.max(1);
    let intr = &img.intrinsics;
    let mut points = Vec::new();
    for v in (0..intr.height).step_by(stride) {
        for u in (0..intr.width).step_by(stride) {
            if let Some(p) = img.point(u, v) {
                points.push(p);
            }
        }
    }
    PointCloud::new(points)
}

/// Half-open pixel rectangle `[u_min, u_max) × [v_min, v_max)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub u_min: usize,
    pub v_min: usize,
    pub u_max: usize,
    pub v_max: usize,
}

impl BoundingBox {
    pub fn contains(&self, u: usize, v: usize) -> bool {
        u >= self.u_min && u < self.u_max && v >= self.v_min && v < self.v_max
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.u_min + self.u_max) as f64 * 0.5,
            (self.v_min + self.v_max) as f64 * 0.5,
        )
    }

    pub fn contains_point(&self, u: f64, v: f64) -> bool {
        u >= self.u_min as f64
            && u <= self.u_max as f64
            && v >= self.v_min as f64
            && v <= self.v_max as f64
    }

    pub fn contains_box(&self, other: &BoundingBox) -> bool {
        other.u_min >= self.u_min
            && other.u_max <= self.u_max
            && other.v_min >= self.v_min
            && other.v_max <= self.v_max
    }

    pub fn area(&self) -> usize {
        (self.u_max - self.u_min) * (self.v_max - self.v_min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DetectionClass {
    Door,
    Handle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: DetectionClass,
    pub bbox: BoundingBox,
    /// Index into the scene's doors or handles. Simulation bookkeeping only;
    /// the autonomy stack never reads it.
    pub truth_id: usize,
}

/// Projects a set of world-space edges and returns the clipped image bbox.
fn project_edges(
    camera: &Pose,
    intr: &CameraIntrinsics,
    corners: &[Vec3],
    edges: &[(usize, usize)],
) -> Option<(f64, f64, f64, f64)> {
    let cam: Vec<Vec3> = corners
        .iter()
        .map(|c| camera.inverse_transform_point(c))
        .collect();
    let mut pts = Vec::with_capacity(edges.len() * 2);
    for &(a, b) in edges {
        let (pa, pb) = (cam[a], cam[b]);
        let (ina, inb) = (pa.x > NEAR_PLANE, pb.x > NEAR_PLANE);
        if ina {
            pts.push(pa);
        }
        if inb {
            pts.push(pb);
        }
        if ina != inb {
            let s = (NEAR_PLANE + 1e-9 - pa.x) / (pb.x - pa.x);
            pts.push(pa + (pb - pa) * s);
        }
    }
    let mut out: Option<(f64, f64, f64, f64)> = None;
    for p in pts {
        if let Some((u, v)) = intr.project(&p) {
            out = Some(match out {
                None => (u, v, u, v),
                Some((a, b, c, d)) => (a.min(u), b.min(v), c.max(u), d.max(v)),
            });
        }
    }
    out
}

fn jittered_box(
    raw: (f64, f64, f64, f64),
    intr: &CameraIntrinsics,
    noise: &SensorNoise,
    rng: &mut ChaCha8Rng,
) -> Option<BoundingBox> {
    let (w, h) = (intr.width as f64, intr.height as f64);
    let u0 = (raw.0 + gaussian(rng, noise.bbox_jitter_px))
        .floor()
        .clamp(0.0, w);
    let v0 = (raw.1 + gaussian(rng, noise.bbox_jitter_px))
        .floor()
        .clamp(0.0, h);
    let u1 = (raw.2 + gaussian(rng, noise.bbox_jitter_px))
        .ceil()
        .clamp(0.0, w);
    let v1 = (raw.3 + gaussian(rng, noise.bbox_jitter_px))
        .ceil()
        .clamp(0.0, h);
    (u1 > u0 && v1 > v0).then(|| BoundingBox {
        u_min: u0 as usize,
        v_min: v0 as usize,
        u_max: u1 as usize,
        v_max: v1 as usize,
    })
}

const BOX_EDGES: [(usize, usize); 12] = [
    (0, 1),
    (2, 3),
    (4, 5),
    (6, 7),
    (0, 2),
    (1, 3),
    (4, 6),
    (5, 7),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];
const RECT_EDGES: [(usize, usize); 4] = [(0, 1), (1, 2), (2, 3), (3, 0)];

/// Geometric stand-in for the learned detector.
///
/// An object is reported when its center is within range, inside the image
/// and visible along the single ray from the camera center. Handles are
/// reported only together with their door.
pub fn detect(
    scene: &SceneModel,
    camera: &Pose,
    intr: &CameraIntrinsics,
    noise: &SensorNoise,
    seed: u64,
) -> Vec<Detection> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let handle_boxes: Vec<_> = scene.handles.iter().map(|h| h.aabb()).collect();

    // first hit along the center ray, ignoring the box `skip`
    let visible = |target: &Vec3, skip: Option<usize>| -> bool {
        let d = target - camera.position;
        let dist = d.norm();
        if dist > intr.detection_range || dist < 1e-9 {
            return false;
        }
        let Some((u, v)) = intr.project(&camera.inverse_transform_point(target)) else {
            return false;
        };
        if !intr.in_image(u, v) {
            return false;
        }
        let dir = d / dist;
        let inv = dir.map(|c| 1.0 / c);
        let blocked = scene
            .obstacles
            .iter()
            .copied()
            .chain(
                handle_boxes
                    .iter()
                    .enumerate()
                    .filter(|(i, _)| Some(*i) != skip)
                    .map(|(_, b)| *b),
            )
            .filter_map(|b| b.ray_intersect(&camera.position, &inv, 0.0))
            .any(|t| t < dist - 0.02);
        !blocked
    };

    let mut out = Vec::new();
    let mut door_seen = vec![false; scene.doors.len()];
    for (i, door) in scene.doors.iter().enumerate() {
        if !visible(&door.center, None) {
            continue;
        }
        let Some(raw) = project_edges(camera, intr, &door.corners(), &RECT_EDGES) else {
            continue;
        };
        let bbox = jittered_box(raw, intr, noise, &mut rng);
        let dropped = rng.random::<f64>() < noise.false_negative_prob;
        if let (Some(bbox), false) = (bbox, dropped) {
            door_seen[i] = true;
            out.push(Detection {
                class: DetectionClass::Door,
                bbox,
                truth_id: i,
            });
        }
    }
    for (i, handle) in scene.handles.iter().enumerate() {
        let Some(door_idx) = scene.doors.iter().position(|d| d.id == handle.door) else {
            continue;
        };
        if !door_seen[door_idx] || !visible(&handle.center, Some(i)) {
            continue;
        }
        let Some(raw) = project_edges(camera, intr, &handle_boxes[i].corners(), &BOX_EDGES) else {
            continue;
        };
        let bbox = jittered_box(raw, intr, noise, &mut rng);
        let dropped = rng.random::<f64>() < noise.false_negative_prob;
        if let (Some(bbox), false) = (bbox, dropped) {
            out.push(Detection {
                class: DetectionClass::Handle,
                bbox,
                truth_id: i,
            });
        }
    }
    out
}

/// Tracking-camera reading: the true pose plus Gaussian noise.
pub fn pose_estimate(truth: &Pose, noise: &SensorNoise, seed: u64) -> Pose {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dp = Vec3::new(
        gaussian(&mut rng, noise.pose_std),
        gaussian(&mut rng, noise.pose_std),
        gaussian(&mut rng, noise.pose_std),
    );
    let dyaw = gaussian(&mut rng, noise.yaw_std);
    Pose::new(truth.position + dp, wrap_angle(truth.yaw + dyaw))
}
