//! Handle localization from detector boxes and a depth image.
//!
//! The door region is fit with RANSAC; the raw centroid of the handle region
//! is projected onto that plane and pushed out by a constant offset along the
//! normal. The spray pose then sits a fixed standoff in front of the result.

use std::collections::VecDeque;

use nalgebra::{Matrix3, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{yaw_of, Pose, Vec3};
use crate::sensors::{BoundingBox, DepthImage, Detection, DetectionClass, PointCloud};

#[derive(Debug, Error, PartialEq)]
pub enum PerceptionError {
    #[error("no door detection")]
    NoDoor,
    #[error("no handle detection")]
    NoHandle,
    #[error("no handle box is centered inside a door box")]
    HandleOutsideDoor,
    #[error("plane fit needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("every RANSAC sample was degenerate")]
    Degenerate,
    #[error("best plane explains only {fraction:.3} of the points")]
    TooFewInliers { fraction: f64 },
    #[error("handle region has no depth returns")]
    EmptyHandleCloud,
    #[error("standoff must be positive, got {0}")]
    InvalidStandoff(f64),
    #[error("door normal is too close to vertical")]
    VerticalNormal,
}

/// Plane `{x : normal · x = d}` with the normal facing the sensor.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plane {
    pub normal: Vec3,
    pub d: f64,
    pub inliers: usize,
}

impl Plane {
    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(p) - self.d
    }

    pub fn project(&self, p: &Vec3) -> Vec3 {
        p - self.normal * self.signed_distance(p)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RansacParams {
    pub threshold: f64,
    pub iterations: usize,
    pub min_inlier_fraction: f64,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            threshold: 0.02,
            iterations: 200,
            min_inlier_fraction: 0.5,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HandleEstimate {
    pub position: Vec3,
    pub plane: Plane,
    pub source_points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SprayPose {
    pub nozzle_position: Vec3,
    /// Horizontal unit vector the nozzle points along.
    pub heading: Vec3,
    /// Where the vehicle body must be for the nozzle to reach its target.
    pub vehicle: Pose,
}

/// Rigid nozzle offset in the vehicle body frame (forward, left, up).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NozzleExtrinsics {
    #[serde(with = "crate::geometry::vec3_array")]
    pub offset: Vec3,
}

impl NozzleExtrinsics {
    pub fn forward(distance: f64) -> Self {
        Self {
            offset: Vec3::new(distance, 0.0, 0.0),
        }
    }

    pub fn nozzle_pose(&self, vehicle: &Pose) -> Pose {
        Pose::new(vehicle.transform_point(&self.offset), vehicle.yaw)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segmentation {
    pub handle: PointCloud,
    pub door: PointCloud,
}

/// Pairs each handle box with the first door box containing its center.
pub fn pair_detections(detections: &[Detection]) -> Vec<(BoundingBox, BoundingBox)> {
    let doors: Vec<_> = detections
        .iter()
        .filter(|d| d.class == DetectionClass::Door)
        .collect();
    detections
        .iter()
        .filter(|d| d.class == DetectionClass::Handle)
        .filter_map(|h| {
            let (u, v) = h.bbox.center();
            doors
                .iter()
                .find(|d| d.bbox.contains_point(u, v))
                .map(|d| (d.bbox, h.bbox))
        })
        .collect()
}

/// World points inside the handle box, and inside the door box but outside
/// the handle box.
pub fn segment_pair(
    img: &DepthImage,
    door: &BoundingBox,
    handle: &BoundingBox,
    handle_stride: usize,
    door_stride: usize,
) -> Segmentation {
    let collect = |b: &BoundingBox, stride: usize, skip: Option<&BoundingBox>| {
        let mut pts = Vec::new();
        for v in (b.v_min..b.v_max).step_by(stride.max(1)) {
            for u in (b.u_min..b.u_max).step_by(stride.max(1)) {
                if skip.is_some_and(|s| s.contains(u, v)) {
                    continue;
                }
                if let Some(p) = img.point(u, v) {
                    pts.push(p);
                }
            }
        }
        PointCloud::new(pts)
    };
    Segmentation {
        handle: collect(handle, handle_stride, None),
        door: collect(door, door_stride, Some(handle)),
    }
}

/// Splits the depth image into handle and door clouds for the first
/// handle/door pair. An all-sentinel region yields an empty cloud; callers
/// check [`PointCloud::is_empty`].
pub fn segment_regions(
    img: &DepthImage,
    detections: &[Detection],
    stride: usize,
) -> Result<Segmentation, PerceptionError> {
    if !detections.iter().any(|d| d.class == DetectionClass::Door) {
        return Err(PerceptionError::NoDoor);
    }
    if !detections.iter().any(|d| d.class == DetectionClass::Handle) {
        return Err(PerceptionError::NoHandle);
    }
    let (door, handle) = *pair_detections(detections)
        .first()
        .ok_or(PerceptionError::HandleOutsideDoor)?;
    Ok(segment_pair(img, &door, &handle, stride, stride))
}

fn least_squares_plane(points: &[Vec3]) -> (Vec3, Vec3) {
    let n = points.len() as f64;
    let centroid: Vec3 = points.iter().sum::<Vec3>() / n;
    let mut cov = Matrix3::zeros();
    for p in points {
        let d = p - centroid;
        cov += d * d.transpose();
    }
    let eig = SymmetricEigen::new(cov);
    let (i, _) = eig
        .eigenvalues
        .iter()
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(b.1))
        .expect("3x3 matrix has eigenvalues");
    (centroid, eig.eigenvectors.column(i).normalize())
}

const REFIT_ROUNDS: usize = 10;

/// RANSAC over 3-point hypotheses followed by a least-squares refit on the
/// winning inlier set.
pub fn fit_door_plane(
    cloud: &PointCloud,
    sensor: &Vec3,
    params: &RansacParams,
) -> Result<Plane, PerceptionError> {
    let pts = &cloud.points;
    if pts.len() < 3 {
        return Err(PerceptionError::TooFewPoints(pts.len()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let count = |n: &Vec3, d: f64| {
        pts.iter()
            .filter(|p| (n.dot(p) - d).abs() <= params.threshold)
            .count()
    };

    let mut best: Option<(usize, Vec3, f64)> = None;
    for _ in 0..params.iterations {
        let i = rng.random_range(0..pts.len());
        let j = rng.random_range(0..pts.len());
        let k = rng.random_range(0..pts.len());
        if i == j || j == k || i == k {
            continue;
        }
        let (a, b, c) = (pts[i], pts[j], pts[k]);
        let cross = (b - a).cross(&(c - a));
        let scale = (b - a).norm() * (c - a).norm();
        if cross.norm() <= 1e-9 * scale.max(1e-12) {
            continue;
        }
        let n = cross.normalize();
        let d = n.dot(&a);
        let inliers = count(&n, d);
        if best.is_none_or(|(b, _, _)| inliers > b) {
            best = Some((inliers, n, d));
        }
    }
    let (inliers, n, d) = best.ok_or(PerceptionError::Degenerate)?;
    let fraction = inliers as f64 / pts.len() as f64;
    if fraction < params.min_inlier_fraction {
        return Err(PerceptionError::TooFewInliers { fraction });
    }
    // Refit on the inliers, then reselect inliers against the refit plane
    // until the set stops changing.
    let (mut n, mut d) = (n, d);
    let mut centroid = pts[0];
    let mut last = usize::MAX;
    for _ in 0..REFIT_ROUNDS {
        let support: Vec<Vec3> = pts
            .iter()
            .filter(|p| (n.dot(p) - d).abs() <= params.threshold)
            .copied()
            .collect();
        if support.len() < 3 || support.len() == last {
            break;
        }
        last = support.len();
        let (c, m) = least_squares_plane(&support);
        centroid = c;
        n = m;
        d = n.dot(&c);
    }
    let mut normal = n;
    if normal.dot(&(sensor - centroid)) < 0.0 {
        normal = -normal;
    }
    let d = normal.dot(&centroid);
    Ok(Plane {
        normal,
        d,
        inliers: count(&normal, d),
    })
}

/// Projects the handle cloud's centroid onto the door plane and offsets it
/// by `handle_offset` along the plane normal.
pub fn localize_handle(
    cloud: &PointCloud,
    plane: &Plane,
    handle_offset: f64,
) -> Result<HandleEstimate, PerceptionError> {
    let centroid = cloud.centroid().ok_or(PerceptionError::EmptyHandleCloud)?;
    let position = plane.project(&centroid) + plane.normal * handle_offset;
    Ok(HandleEstimate {
        position,
        plane: *plane,
        source_points: cloud.len(),
    })
}

pub fn compute_spray_pose(
    est: &HandleEstimate,
    standoff: f64,
    nozzle: &NozzleExtrinsics,
) -> Result<SprayPose, PerceptionError> {
    if !(standoff > 0.0) {
        return Err(PerceptionError::InvalidStandoff(standoff));
    }
    let n = est.plane.normal;
    let horizontal = Vec3::new(n.x, n.y, 0.0);
    if horizontal.norm() < 0.1 {
        return Err(PerceptionError::VerticalNormal);
    }
    let nh = horizontal.normalize();
    let nozzle_position = est.position + nh * standoff;
    let heading = -nh;
    let yaw = yaw_of(&heading);
    let body = Pose::new(Vec3::zeros(), yaw);
    let vehicle = Pose::new(
        nozzle_position - (body.transform_point(&nozzle.offset)),
        yaw,
    );
    Ok(SprayPose {
        nozzle_position,
        heading,
        vehicle,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FuseOutcome {
    Accepted,
    Rejected,
    /// Too many consecutive rejections; the window restarted at this estimate.
    Restarted,
}

/// Robust running average of the last `k` handle estimates. Estimates
/// farther than `gate` from the running mean are rejected.
#[derive(Debug, Clone)]
pub struct HandleFuser {
    k: usize,
    gate: f64,
    window: VecDeque<HandleEstimate>,
    rejects: usize,
}

impl HandleFuser {
    pub fn new(k: usize, gate: f64) -> Self {
        Self {
            k: k.max(1),
            gate,
            window: VecDeque::new(),
            rejects: 0,
        }
    }

    pub fn clear(&mut self) {
        self.window.clear();
        self.rejects = 0;
    }

    pub fn len(&self) -> usize {
        self.window.len()
    }

    pub fn is_empty(&self) -> bool {
        self.window.is_empty()
    }

    pub fn is_stable(&self) -> bool {
        self.window.len() >= self.k
    }

    pub fn mean_position(&self) -> Option<Vec3> {
        (!self.window.is_empty()).then(|| {
            self.window.iter().map(|e| e.position).sum::<Vec3>() / self.window.len() as f64
        })
    }

    pub fn push(&mut self, est: HandleEstimate) -> FuseOutcome {
        if let Some(mean) = self.mean_position() {
            if (est.position - mean).norm() > self.gate {
                self.rejects += 1;
                if self.rejects < self.k {
                    return FuseOutcome::Rejected;
                }
                self.window.clear();
                self.window.push_back(est);
                self.rejects = 0;
                return FuseOutcome::Restarted;
            }
        }
        self.rejects = 0;
        self.window.push_back(est);
        while self.window.len() > self.k {
            self.window.pop_front();
        }
        FuseOutcome::Accepted
    }

    /// Window average: mean position and renormalized mean normal.
    pub fn fused(&self) -> Option<HandleEstimate> {
        let position = self.mean_position()?;
        let normal = self
            .window
            .iter()
            .map(|e| e.plane.normal)
            .sum::<Vec3>()
            .normalize();
        let offset = self
            .window
            .iter()
            .map(|e| e.plane.signed_distance(&e.position))
            .sum::<f64>()
            / self.window.len() as f64;
        Some(HandleEstimate {
            position,
            plane: Plane {
                normal,
                d: normal.dot(&position) - offset,
                inliers: self
                    .window
                    .iter()
                    .map(|e| e.plane.inliers)
                    .min()
                    .unwrap_or(0),
            },
            source_points: self.window.iter().map(|e| e.source_points).sum(),
        })
    }
}
