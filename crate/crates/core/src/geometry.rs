//! Small geometric primitives shared by every module: poses, boxes and rays.

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

pub type Vec3 = Vector3<f64>;

/// Rigid-body position plus heading (yaw about +z, radians).
///
/// The vehicle never pitches or rolls, so a heading angle is the whole attitude.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec3,
    pub yaw: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Self { position, yaw }
    }

    /// Unit forward vector in the world frame.
    pub fn forward(&self) -> Vec3 {
        Vec3::new(self.yaw.cos(), self.yaw.sin(), 0.0)
    }

    /// Unit left vector in the world frame.
    pub fn left(&self) -> Vec3 {
        Vec3::new(-self.yaw.sin(), self.yaw.cos(), 0.0)
    }

    /// Maps a point given in the body frame (forward, left, up) to the world frame.
    pub fn transform_point(&self, body: &Vec3) -> Vec3 {
        self.position + self.forward() * body.x + self.left() * body.y + Vec3::z() * body.z
    }

    /// Inverse of [`Pose::transform_point`].
    pub fn inverse_transform_point(&self, world: &Vec3) -> Vec3 {
        let d = world - self.position;
        Vec3::new(d.dot(&self.forward()), d.dot(&self.left()), d.z)
    }
}

/// Heading angle of a direction's horizontal projection.
pub fn yaw_of(direction: &Vec3) -> f64 {
    direction.y.atan2(direction.x)
}

/// Wraps an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut a = a % std::f64::consts::TAU;
    if a > std::f64::consts::PI {
        a -= std::f64::consts::TAU;
    } else if a <= -std::f64::consts::PI {
        a += std::f64::consts::TAU;
    }
    a
}

/// Axis-aligned box, `min <= max` componentwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aabb {
    #[serde(with = "vec3_array")]
    pub min: Vec3,
    #[serde(with = "vec3_array")]
    pub max: Vec3,
}

impl Aabb {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn from_center_half_extents(center: Vec3, half: Vec3) -> Self {
        Self::new(center - half, center + half)
    }

    pub fn center(&self) -> Vec3 {
        (self.min + self.max) * 0.5
    }

    pub fn is_valid(&self) -> bool {
        (0..3).all(|i| {
            self.min[i] <= self.max[i] && self.min[i].is_finite() && self.max[i].is_finite()
        })
    }

    pub fn contains_point(&self, p: &Vec3) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        self.contains_point(&other.min) && self.contains_point(&other.max)
    }

    /// Overlap of open interiors; boxes that merely touch do not intersect.
    pub fn intersects_interior(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] < other.max[i] && other.min[i] < self.max[i])
    }

    /// Closed-set overlap.
    pub fn intersects(&self, other: &Aabb) -> bool {
        (0..3).all(|i| self.min[i] <= other.max[i] && other.min[i] <= self.max[i])
    }

    pub fn corners(&self) -> [Vec3; 8] {
        let (a, b) = (self.min, self.max);
        [
            Vec3::new(a.x, a.y, a.z),
            Vec3::new(b.x, a.y, a.z),
            Vec3::new(a.x, b.y, a.z),
            Vec3::new(b.x, b.y, a.z),
            Vec3::new(a.x, a.y, b.z),
            Vec3::new(b.x, a.y, b.z),
            Vec3::new(a.x, b.y, b.z),
            Vec3::new(b.x, b.y, b.z),
        ]
    }

    /// Slab-method ray intersection. Returns the entry distance along `dir`
    /// (which need not be normalized) for hits with `t > t_min`.
    pub fn ray_intersect(&self, origin: &Vec3, inv_dir: &Vec3, t_min: f64) -> Option<f64> {
        let mut t0 = f64::NEG_INFINITY;
        let mut t1 = f64::INFINITY;
        for i in 0..3 {
            let (mut near, mut far) = if inv_dir[i].is_infinite() {
                if origin[i] < self.min[i] || origin[i] > self.max[i] {
                    return None;
                }
                (f64::NEG_INFINITY, f64::INFINITY)
            } else {
                (
                    (self.min[i] - origin[i]) * inv_dir[i],
                    (self.max[i] - origin[i]) * inv_dir[i],
                )
            };
            if near > far {
                std::mem::swap(&mut near, &mut far);
            }
            t0 = t0.max(near);
            t1 = t1.min(far);
            if t0 > t1 {
                return None;
            }
        }
        // an origin inside the box yields t0 <= t_min and counts as a miss
        (t0 > t_min).then_some(t0)
    }
}

/// Serde adapter storing a `Vec3` as a plain `[x, y, z]` array.
pub mod vec3_array {
    use super::Vec3;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &Vec3, s: S) -> Result<S::Ok, S::Error> {
        [v.x, v.y, v.z].serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec3, D::Error> {
        let a = <[f64; 3]>::deserialize(d)?;
        Ok(Vec3::new(a[0], a[1], a[2]))
    }
}
