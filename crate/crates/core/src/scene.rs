//! Ground-truth world: axis-aligned obstacle boxes, planar doors flush with
//! walls, and small protruding handle boxes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{vec3_array, yaw_of, Aabb, Pose, Vec3};

/// Nozzle-to-handle distance used for the reference spray pose.
pub const SPRAY_STANDOFF: f64 = 0.30;

/// Default handle box size (along normal, lateral, vertical).
pub const DEFAULT_HANDLE_EXTENTS: [f64; 3] = [0.12, 0.04, 0.04];
pub const DEFAULT_HANDLE_PROTRUSION: f64 = 0.06;

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SceneError {
    #[error("failed to read scene file: {0}")]
    Io(#[from] std::io::Error),
    #[error("scene parse error: {0}")]
    Parse(String),
    #[error("invalid {entity}: {message}")]
    Validation { entity: String, message: String },
    #[error("unknown handle id {0}")]
    UnknownHandle(usize),
    #[error("failed to serialize scene: {0}")]
    Serialize(String),
}

fn invalid(entity: impl Into<String>, message: impl Into<String>) -> SceneError {
    SceneError::Validation {
        entity: entity.into(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DoorSpec {
    pub id: String,
    #[serde(with = "vec3_array")]
    pub center: Vec3,
    pub width: f64,
    pub height: f64,
    /// Outward unit normal, pointing into the free space in front of the door.
    #[serde(with = "vec3_array")]
    pub normal: Vec3,
}

impl DoorSpec {
    /// Horizontal in-plane axis of the door rectangle.
    pub fn lateral_axis(&self) -> Vec3 {
        Vec3::z().cross(&self.normal).normalize()
    }

    pub fn vertical_axis(&self) -> Vec3 {
        self.normal.cross(&self.lateral_axis())
    }

    pub fn signed_distance(&self, p: &Vec3) -> f64 {
        self.normal.dot(&(p - self.center))
    }

    /// Whether the orthogonal projection of `p` falls inside the rectangle.
    pub fn projects_inside(&self, p: &Vec3) -> bool {
        let d = p - self.center;
        d.dot(&self.lateral_axis()).abs() <= self.width * 0.5 + 1e-9
            && d.dot(&self.vertical_axis()).abs() <= self.height * 0.5 + 1e-9
    }

    /// Rectangle corners in order around the boundary.
    pub fn corners(&self) -> [Vec3; 4] {
        let l = self.lateral_axis() * (self.width * 0.5);
        let v = self.vertical_axis() * (self.height * 0.5);
        [
            self.center - l - v,
            self.center + l - v,
            self.center + l + v,
            self.center - l + v,
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HandleSpec {
    pub door: String,
    #[serde(with = "vec3_array")]
    pub center: Vec3,
    /// Full box size along the world axes.
    #[serde(with = "vec3_array")]
    pub extents: Vec3,
    /// Distance of the handle center in front of the door plane.
    pub protrusion: f64,
}

impl HandleSpec {
    pub fn aabb(&self) -> Aabb {
        Aabb::from_center_half_extents(self.center, self.extents * 0.5)
    }
}

/// Validated world model. Immutable once loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneModel {
    pub bounds: Aabb,
    #[serde(default)]
    pub obstacles: Vec<Aabb>,
    #[serde(default)]
    pub doors: Vec<DoorSpec>,
    #[serde(default)]
    pub handles: Vec<HandleSpec>,
}

impl SceneModel {
    pub fn from_toml_str(text: &str) -> Result<Self, SceneError> {
        let scene: SceneModel =
            toml::from_str(text).map_err(|e| SceneError::Parse(e.to_string()))?;
        scene.validate()?;
        Ok(scene)
    }

    pub fn to_toml_string(&self) -> Result<String, SceneError> {
        toml::to_string(self).map_err(|e| SceneError::Serialize(e.to_string()))
    }

    /// Checks every structural invariant, naming the first offending entity.
    pub fn validate(&self) -> Result<(), SceneError> {
        if !self.bounds.is_valid() || (0..3).any(|i| self.bounds.min[i] >= self.bounds.max[i]) {
            return Err(invalid("bounds", "min must be strictly below max"));
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !o.is_valid() {
                return Err(invalid(format!("obstacle {i}"), "min must not exceed max"));
            }
            if !self.bounds.contains_box(o) {
                return Err(invalid(
                    format!("obstacle {i}"),
                    "lies outside world bounds",
                ));
            }
        }
        for (i, d) in self.doors.iter().enumerate() {
            let name = format!("door '{}'", d.id);
            if self.doors[..i].iter().any(|o| o.id == d.id) {
                return Err(invalid(name, "duplicate door id"));
            }
            if !(d.width > 0.0 && d.height > 0.0) {
                return Err(invalid(name, "width and height must be positive"));
            }
            if (d.normal.norm() - 1.0).abs() > UNIT_TOL {
                return Err(invalid(name, "normal must have unit length"));
            }
            if d.normal.xy().norm() < 0.1 {
                return Err(invalid(name, "normal must not be vertical"));
            }
            if d.corners().iter().any(|c| !self.bounds.contains_point(c)) {
                return Err(invalid(name, "rectangle lies outside world bounds"));
            }
        }
        for (i, h) in self.handles.iter().enumerate() {
            let name = format!("handle {i}");
            let door = self
                .door(&h.door)
                .ok_or_else(|| invalid(&name, format!("references missing door '{}'", h.door)))?;
            if h.protrusion < 0.0 {
                return Err(invalid(name, "protrusion must be non-negative"));
            }
            if (0..3).any(|k| !(h.extents[k] > 0.0)) {
                return Err(invalid(name, "extents must be positive"));
            }
            if (door.signed_distance(&h.center) - h.protrusion).abs() > UNIT_TOL {
                return Err(invalid(
                    name,
                    "center does not sit `protrusion` in front of its door",
                ));
            }
            let dists = h.aabb().corners().map(|c| door.signed_distance(&c));
            let lo = dists.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = dists.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            if lo > 1e-9 || hi < -1e-9 || !door.projects_inside(&h.center) {
                return Err(invalid(
                    name,
                    "box does not meet its door plane inside the door rectangle",
                ));
            }
            if !self.bounds.contains_box(&h.aabb()) {
                return Err(invalid(name, "lies outside world bounds"));
            }
        }
        Ok(())
    }

    pub fn door(&self, id: &str) -> Option<&DoorSpec> {
        self.doors.iter().find(|d| d.id == id)
    }

    pub fn handle_door(&self, handle: usize) -> Option<&DoorSpec> {
        self.handles.get(handle).and_then(|h| self.door(&h.door))
    }

    /// Every box a ray or the vehicle can hit.
    pub fn solids(&self) -> impl Iterator<Item = Aabb> + '_ {
        self.obstacles
            .iter()
            .copied()
            .chain(self.handles.iter().map(HandleSpec::aabb))
    }

    /// Nearest surface hit along a ray, `dir` normalized, within `max_t`.
    pub fn raycast(&self, origin: &Vec3, dir: &Vec3, max_t: f64) -> Option<f64> {
        let inv = dir.map(|c| 1.0 / c);
        self.solids()
            .filter_map(|b| b.ray_intersect(origin, &inv, 0.0))
            .filter(|t| *t <= max_t)
            .min_by(f64::total_cmp)
    }

    /// True if the box overlaps the interior of any solid.
    pub fn collides(&self, b: &Aabb) -> bool {
        self.solids().any(|s| s.intersects_interior(b))
    }
}

pub fn load_scene(path: impl AsRef<Path>) -> Result<SceneModel, SceneError> {
    let text = std::fs::read_to_string(path)?;
    SceneModel::from_toml_str(&text)
}

pub fn save_scene(scene: &SceneModel, path: impl AsRef<Path>) -> Result<(), SceneError> {
    std::fs::write(path, scene.to_toml_string()?)?;
    Ok(())
}

/// Reference nozzle pose: `SPRAY_STANDOFF` along the door normal from the
/// handle center, facing back along the normal.
pub fn ground_truth_spray_pose(scene: &SceneModel, handle: usize) -> Result<Pose, SceneError> {
    let h = scene
        .handles
        .get(handle)
        .ok_or(SceneError::UnknownHandle(handle))?;
    let door = scene
        .door(&h.door)
        .ok_or(SceneError::UnknownHandle(handle))?;
    let n = door.normal;
    Ok(Pose::new(h.center + n * SPRAY_STANDOFF, yaw_of(&(-n))))
}

/// Which wall of a hallway running along +x a door sits on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WallSide {
    /// The wall at +y, door normal -y.
    Left,
    /// The wall at -y, door normal +y.
    Right,
}

/// Straight hallway along +x with floor, ceiling, side walls and end caps.
#[derive(Debug, Clone)]
pub struct HallwayBuilder {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub wall_thickness: f64,
    doors: Vec<DoorSpec>,
    handles: Vec<HandleSpec>,
    extra: Vec<Aabb>,
}

impl HallwayBuilder {
    pub fn new(length: f64, width: f64, height: f64) -> Self {
        Self {
            length,
            width,
            height,
            wall_thickness: 0.2,
            doors: Vec::new(),
            handles: Vec::new(),
            extra: Vec::new(),
        }
    }

    /// Adds a 0.9 × 2.0 m door centered at `x` with a default handle offset
    /// `handle_lateral` along the hallway and mounted at `handle_height`.
    pub fn door_with_handle(
        mut self,
        x: f64,
        side: WallSide,
        handle_lateral: f64,
        handle_height: f64,
    ) -> Self {
        let (y, normal) = match side {
            WallSide::Left => (self.width * 0.5, Vec3::new(0.0, -1.0, 0.0)),
            WallSide::Right => (-self.width * 0.5, Vec3::new(0.0, 1.0, 0.0)),
        };
        let id = format!("door{}", self.doors.len());
        let door = DoorSpec {
            id: id.clone(),
            center: Vec3::new(x, y, 1.0),
            width: 0.9,
            height: 2.0,
            normal,
        };
        let [depth, lateral, vertical] = DEFAULT_HANDLE_EXTENTS;
        self.handles.push(HandleSpec {
            door: id,
            center: Vec3::new(x + handle_lateral, y, handle_height)
                + normal * DEFAULT_HANDLE_PROTRUSION,
            extents: Vec3::new(lateral, depth, vertical),
            protrusion: DEFAULT_HANDLE_PROTRUSION,
        });
        self.doors.push(door);
        self
    }

    pub fn obstacle(mut self, b: Aabb) -> Self {
        self.extra.push(b);
        self
    }

    pub fn build(self) -> Result<SceneModel, SceneError> {
        let (l, hw, h, t) = (
            self.length,
            self.width * 0.5,
            self.height,
            self.wall_thickness,
        );
        let bounds = Aabb::new(Vec3::new(-t, -hw - t, -t), Vec3::new(l + t, hw + t, h + t));
        let mut obstacles = vec![
            Aabb::new(Vec3::new(-t, hw, -t), Vec3::new(l + t, hw + t, h + t)),
            Aabb::new(Vec3::new(-t, -hw - t, -t), Vec3::new(l + t, -hw, h + t)),
            Aabb::new(Vec3::new(-t, -hw, -t), Vec3::new(l + t, hw, 0.0)),
            Aabb::new(Vec3::new(-t, -hw, h), Vec3::new(l + t, hw, h + t)),
            Aabb::new(Vec3::new(-t, -hw, 0.0), Vec3::new(0.0, hw, h)),
            Aabb::new(Vec3::new(l, -hw, 0.0), Vec3::new(l + t, hw, h)),
        ];
        obstacles.extend(self.extra);
        let scene = SceneModel {
            bounds,
            obstacles,
            doors: self.doors,
            handles: self.handles,
        };
        scene.validate()?;
        Ok(scene)
    }
}

/// The reference hallway: 10 m long, 2 m wide, one door with a handle.
pub fn default_scene() -> SceneModel {
    SceneModel::from_toml_str(DEFAULT_SCENE_TOML).expect("bundled scene is valid")
}

pub const DEFAULT_SCENE_TOML: &str = include_str!("../assets/default_scene.toml");
