//! Simulation and autonomy stack for a door-handle spray-disinfection drone.
//!
//! A quadrotor flies down a hallway, builds a voxel map from depth images,
//! detects doors and handles, estimates each handle's position and sprays it
//! from a fixed standoff.

pub mod eval;
pub mod geometry;
pub mod mapping;
pub mod mission;
pub mod perception;
pub mod planning;
pub mod scene;
pub mod sensors;
pub mod spray;

pub use geometry::{Aabb, Pose, Vec3};
pub use scene::SceneModel;
