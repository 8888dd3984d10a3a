//! Mission state machine and vehicle kinematics.
//!
//! The vehicle is a first-order point mass with yaw. The autonomy stack only
//! ever sees the noisy pose estimate; commands computed against that
//! estimate are applied to the true state, so localization error shows up
//! as positioning error exactly as it would on hardware.

use std::collections::VecDeque;
use std::fmt;
use std::path::Path as FsPath;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{vec3_array, wrap_angle, yaw_of, Aabb, Pose, Vec3};
use crate::mapping::{CollisionIndex, VoxelGrid};
use crate::perception::{
    compute_spray_pose, fit_door_plane, localize_handle, pair_detections, segment_pair,
    FuseOutcome, HandleEstimate, HandleFuser, NozzleExtrinsics, RansacParams, SprayPose,
};
use crate::planning::{
    plan_with_index, planning_index, simplify_with_index, PlanError, PlannerParams,
};
use crate::scene::{ground_truth_spray_pose, SceneModel};
use crate::sensors::{detect, pose_estimate, render_depth_masked, CameraIntrinsics, SensorNoise};
use crate::spray::{CoverageModel, DepositionModel, TankState, DEPOSITION_DATUM};

#[derive(Debug, Error)]
pub enum MissionError {
    #[error("cannot read mission config: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse mission config: {0}")]
    Parse(String),
    #[error("invalid mission config: {0}")]
    Invalid(String),
    #[error("start pose collides with the scene")]
    StartInCollision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorridorConfig {
    #[serde(with = "vec3_array")]
    pub start: Vec3,
    #[serde(with = "vec3_array")]
    pub end: Vec3,
}

impl Default for CorridorConfig {
    fn default() -> Self {
        Self {
            start: Vec3::new(0.5, 0.0, 1.0),
            end: Vec3::new(9.5, 0.0, 1.0),
        }
    }
}

/// Box from which trial start positions are drawn uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StartRegion {
    #[serde(with = "vec3_array")]
    pub min: Vec3,
    #[serde(with = "vec3_array")]
    pub max: Vec3,
    /// Initial heading (rad).
    pub yaw: f64,
}

impl Default for StartRegion {
    fn default() -> Self {
        Self {
            min: Vec3::new(0.5, -0.5, 0.2),
            max: Vec3::new(1.5, 0.5, 0.2),
            yaw: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SprayConfig {
    /// Sprayer-on time per handle (s).
    pub duration: f64,
    /// Nozzle-to-handle distance (m).
    pub standoff: f64,
    /// Position error below which spraying may start (m).
    pub threshold: f64,
    /// Heading error below which spraying may start (deg).
    pub heading_threshold_deg: f64,
    /// Distance from the spray position at which the vehicle turns to aim (m).
    pub approach_gate: f64,
    /// Constant handle offset from the door plane used by localization (m).
    pub handle_offset: f64,
    /// Estimates within this distance of a sprayed handle are ignored (m).
    pub memory_radius: f64,
    /// Handle positions to treat as already sprayed.
    pub memory: Vec<[f64; 3]>,
}

impl Default for SprayConfig {
    fn default() -> Self {
        Self {
            duration: 2.0,
            standoff: 0.30,
            threshold: 0.05,
            heading_threshold_deg: 5.0,
            approach_gate: 1.0,
            handle_offset: 0.06,
            memory_radius: 0.5,
            memory: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScanConfig {
    pub amplitude_deg: f64,
    /// Rate of the triangle-wave yaw offset (rad/s).
    pub rate: f64,
    /// Hover while the last handle estimate is at most this old (s).
    pub dwell_timeout: f64,
    /// Longest hover for one handle track (s).
    pub max_dwell: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            amplitude_deg: 45.0,
            rate: 0.5,
            dwell_timeout: 1.5,
            max_dwell: 8.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleConfig {
    pub max_speed: f64,
    pub max_yaw_rate: f64,
    #[serde(with = "vec3_array")]
    pub half_extents: Vec3,
    /// Nozzle position in the body frame (forward, left, up).
    #[serde(with = "vec3_array")]
    pub nozzle_offset: Vec3,
    /// Depth camera position in the body frame.
    #[serde(with = "vec3_array")]
    pub camera_offset: Vec3,
    pub arrival_tolerance: f64,
    /// Std of the position wander while holding to spray (m, per axis).
    pub hold_jitter: f64,
    /// Extra clearance added to the half-extents for planning (m).
    pub safety_margin: f64,
}

impl Default for VehicleConfig {
    fn default() -> Self {
        Self {
            max_speed: 0.5,
            max_yaw_rate: 0.8,
            half_extents: Vec3::new(0.35, 0.35, 0.15),
            nozzle_offset: Vec3::new(0.35, 0.0, 0.0),
            camera_offset: Vec3::new(0.2, 0.0, 0.0),
            arrival_tolerance: 0.02,
            hold_jitter: 0.01,
            safety_margin: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MappingConfig {
    pub resolution: f64,
    /// Pixel stride of the depth image used for mapping.
    pub stride: usize,
    /// Map update every this many ticks.
    pub interval_ticks: u64,
    /// Let no-return pixels carve free space out to the camera range.
    pub carve_misses: bool,
}

impl Default for MappingConfig {
    fn default() -> Self {
        Self {
            resolution: 0.1,
            stride: 8,
            interval_ticks: 2,
            carve_misses: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionConfig {
    pub ransac: RansacParams,
    /// Estimates averaged before committing to a handle.
    pub fuse_window: usize,
    /// Estimates farther than this from the running mean are rejected (m).
    pub fuse_gate: f64,
    /// Door pixels are subsampled to about this many points.
    pub door_points: usize,
}

impl Default for PerceptionConfig {
    fn default() -> Self {
        Self {
            ransac: RansacParams::default(),
            fuse_window: 5,
            fuse_gate: 0.3,
            door_points: 1500,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MissionConfig {
    #[serde(with = "vec3_array")]
    pub final_goal: Vec3,
    pub goal_tolerance: f64,
    pub cruise_altitude: f64,
    /// Flight time available (s).
    pub battery_budget: f64,
    /// Simulated time after which the mission gives up (s).
    pub max_sim_time: f64,
    pub dt: f64,
    pub seed: u64,
    pub replan_interval: f64,
    /// Wait after a failed plan before trying again (s).
    pub retry_interval: f64,
    pub max_planner_failures: usize,
    /// How far ahead exploration subgoals are placed (m).
    pub explore_lookahead: f64,
    /// Speed cap while exploring, so the yaw scan sweeps each door (m/s).
    pub explore_speed: f64,
    pub corridor: CorridorConfig,
    pub start_region: StartRegion,
    pub spray: SprayConfig,
    pub scan: ScanConfig,
    pub vehicle: VehicleConfig,
    pub noise: SensorNoise,
    pub camera: CameraIntrinsics,
    pub planner: PlannerParams,
    pub mapping: MappingConfig,
    pub perception: PerceptionConfig,
    pub deposition: DepositionModel,
    pub coverage: CoverageModel,
}

/// Planner settings the mission uses unless the config overrides them.
pub fn mission_planner_params() -> PlannerParams {
    PlannerParams {
        max_iterations: 1500,
        start_clearance: 0.25,
        local_margin: Some(1.5),
        ..PlannerParams::default()
    }
}

impl Default for MissionConfig {
    fn default() -> Self {
        Self {
            final_goal: Vec3::new(9.0, 0.0, 1.0),
            goal_tolerance: 0.25,
            cruise_altitude: 1.0,
            battery_budget: 300.0,
            max_sim_time: 240.0,
            dt: 0.05,
            seed: 0,
            replan_interval: 2.0,
            retry_interval: 0.5,
            max_planner_failures: 3,
            explore_lookahead: 4.0,
            explore_speed: 0.25,
            corridor: CorridorConfig::default(),
            start_region: StartRegion::default(),
            spray: SprayConfig::default(),
            scan: ScanConfig::default(),
            vehicle: VehicleConfig::default(),
            noise: SensorNoise::default(),
            camera: CameraIntrinsics::default(),
            planner: mission_planner_params(),
            mapping: MappingConfig::default(),
            perception: PerceptionConfig::default(),
            deposition: DepositionModel::default(),
            coverage: CoverageModel::default(),
        }
    }
}

pub const DEFAULT_MISSION_TOML: &str = include_str!("../assets/default_mission.toml");

impl MissionConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, MissionError> {
        let cfg: Self = toml::from_str(text).map_err(|e| MissionError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> Result<String, MissionError> {
        toml::to_string(self).map_err(|e| MissionError::Parse(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), MissionError> {
        let bad = |m: String| Err(MissionError::Invalid(m));
        let positive = [
            ("goal_tolerance", self.goal_tolerance),
            ("cruise_altitude", self.cruise_altitude),
            ("dt", self.dt),
            ("max_sim_time", self.max_sim_time),
            ("replan_interval", self.replan_interval),
            ("retry_interval", self.retry_interval),
            ("explore_lookahead", self.explore_lookahead),
            ("explore_speed", self.explore_speed),
            ("spray.duration", self.spray.duration),
            ("spray.standoff", self.spray.standoff),
            ("spray.threshold", self.spray.threshold),
            (
                "spray.heading_threshold_deg",
                self.spray.heading_threshold_deg,
            ),
            ("spray.approach_gate", self.spray.approach_gate),
            ("scan.rate", self.scan.rate),
            ("scan.dwell_timeout", self.scan.dwell_timeout),
            ("scan.max_dwell", self.scan.max_dwell),
            ("vehicle.max_speed", self.vehicle.max_speed),
            ("vehicle.max_yaw_rate", self.vehicle.max_yaw_rate),
            ("vehicle.arrival_tolerance", self.vehicle.arrival_tolerance),
            ("mapping.resolution", self.mapping.resolution),
            ("perception.fuse_gate", self.perception.fuse_gate),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let non_negative = [
            ("battery_budget", self.battery_budget),
            ("spray.handle_offset", self.spray.handle_offset),
            ("spray.memory_radius", self.spray.memory_radius),
            ("scan.amplitude_deg", self.scan.amplitude_deg),
            ("vehicle.hold_jitter", self.vehicle.hold_jitter),
            ("vehicle.safety_margin", self.vehicle.safety_margin),
        ];
        for (name, v) in non_negative {
            if !(v >= 0.0) || !v.is_finite() {
                return bad(format!("{name} must be non-negative, got {v}"));
            }
        }
        if self.vehicle.half_extents.iter().any(|h| !(*h > 0.0)) {
            return bad("vehicle.half_extents must be positive".into());
        }
        if self.mapping.stride == 0 || self.mapping.interval_ticks == 0 {
            return bad("mapping.stride and mapping.interval_ticks must be positive".into());
        }
        if self.perception.fuse_window == 0 || self.perception.door_points < 3 {
            return bad(
                "perception.fuse_window must be positive and door_points at least 3".into(),
            );
        }
        let r = &self.perception.ransac;
        if !(r.threshold > 0.0)
            || r.iterations == 0
            || !(r.min_inlier_fraction > 0.0 && r.min_inlier_fraction <= 1.0)
        {
            return bad(
                "perception.ransac needs threshold > 0, iterations > 0, fraction in (0, 1]".into(),
            );
        }
        if (self.corridor.end - self.corridor.start).xy().norm() < 1e-9 {
            return bad("corridor start and end must differ horizontally".into());
        }
        if (0..3).any(|i| self.start_region.min[i] > self.start_region.max[i]) {
            return bad("start_region.min must not exceed start_region.max".into());
        }
        if !self.noise.is_valid() {
            return bad("noise parameters must be non-negative and probabilities in [0, 1]".into());
        }
        if !self.camera.is_valid() {
            return bad("camera intrinsics are invalid".into());
        }
        self.planner
            .validate()
            .map_err(|e| MissionError::Invalid(e.to_string()))?;
        self.deposition
            .validate()
            .map_err(|e| MissionError::Invalid(e.to_string()))?;
        self.coverage
            .validate()
            .map_err(|e| MissionError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn spray_ticks(&self) -> usize {
        (self.spray.duration / self.dt).round().max(1.0) as usize
    }

    pub fn nozzle(&self) -> NozzleExtrinsics {
        NozzleExtrinsics {
            offset: self.vehicle.nozzle_offset,
        }
    }

    pub fn planning_half_extents(&self) -> Vec3 {
        self.vehicle.half_extents + Vec3::repeat(self.vehicle.safety_margin)
    }

    /// Same config with every noise source off.
    pub fn noiseless(&self) -> Self {
        let mut c = self.clone();
        c.noise = SensorNoise::zero();
        c.vehicle.hold_jitter = 0.0;
        c
    }
}

pub fn load_config(path: impl AsRef<FsPath>) -> Result<MissionConfig, MissionError> {
    MissionConfig::from_toml_str(&std::fs::read_to_string(path)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SprayPhase {
    Approach,
    Aim,
    Spraying,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AbortReason {
    LowBattery,
    PlannerFailure,
    Timeout,
    /// Landed without reaching the final goal.
    GoalMissed,
}

impl fmt::Display for AbortReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AbortReason::LowBattery => "low battery",
            AbortReason::PlannerFailure => "planner failure",
            AbortReason::Timeout => "timeout",
            AbortReason::GoalMissed => "goal missed",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum MissionState {
    Takeoff,
    Explore,
    Spray(SprayPhase),
    ReturnToCorridor,
    Land,
    Done,
    Aborted(AbortReason),
}

impl MissionState {
    pub fn is_terminal(&self) -> bool {
        matches!(self, MissionState::Done | MissionState::Aborted(_))
    }

    pub fn label(&self) -> &'static str {
        match self {
            MissionState::Takeoff => "takeoff",
            MissionState::Explore => "explore",
            MissionState::Spray(SprayPhase::Approach) => "approach",
            MissionState::Spray(SprayPhase::Aim) => "aim",
            MissionState::Spray(SprayPhase::Spraying) => "spraying",
            MissionState::ReturnToCorridor => "return",
            MissionState::Land => "land",
            MissionState::Done => "done",
            MissionState::Aborted(_) => "aborted",
        }
    }

    /// Whether the state machine may move from `self` to `to` in one tick.
    pub fn can_transition_to(&self, to: MissionState) -> bool {
        use MissionState::*;
        use SprayPhase::*;
        if self.is_terminal() {
            return false;
        }
        if to == Land {
            return *self != Land;
        }
        matches!(
            (*self, to),
            (Takeoff, Explore)
                | (Explore, Spray(Approach))
                | (Spray(Approach), Spray(Aim))
                | (Spray(Aim), Spray(Spraying))
                | (Spray(Spraying), ReturnToCorridor)
                | (ReturnToCorridor, Explore)
                | (Land, Done)
                | (Land, Aborted(_))
        )
    }
}

impl fmt::Display for MissionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MissionState::Aborted(r) => write!(f, "aborted ({r})"),
            s => f.write_str(s.label()),
        }
    }
}

/// Kinematic vehicle: pose, waypoint queue and rate limits.
#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub pose: Pose,
    pub waypoints: VecDeque<Vec3>,
    pub commanded_yaw: Option<f64>,
    pub max_speed: f64,
    pub max_yaw_rate: f64,
    pub arrival_tolerance: f64,
    /// Remaining flight time (s).
    pub battery: f64,
}

impl VehicleState {
    pub fn new(pose: Pose, cfg: &VehicleConfig, battery: f64) -> Self {
        Self {
            pose,
            waypoints: VecDeque::new(),
            commanded_yaw: None,
            max_speed: cfg.max_speed,
            max_yaw_rate: cfg.max_yaw_rate,
            arrival_tolerance: cfg.arrival_tolerance,
            battery,
        }
    }
}

/// One tick of the first-order tracker.
pub fn follow_waypoints(v: &VehicleState, dt: f64) -> VehicleState {
    assert!(dt > 0.0, "dt must be positive");
    let mut out = v.clone();
    while out
        .waypoints
        .front()
        .is_some_and(|w| (w - out.pose.position).norm() <= out.arrival_tolerance)
    {
        out.waypoints.pop_front();
    }
    if let Some(w) = out.waypoints.front().copied() {
        let d = w - out.pose.position;
        let dist = d.norm();
        let step = (out.max_speed * dt).min(dist);
        out.pose.position += d * (step / dist);
        if (w - out.pose.position).norm() <= out.arrival_tolerance {
            out.waypoints.pop_front();
        }
    }
    if let Some(cmd) = out.commanded_yaw {
        let err = wrap_angle(cmd - out.pose.yaw);
        let max = out.max_yaw_rate * dt;
        out.pose.yaw = wrap_angle(out.pose.yaw + err.clamp(-max, max));
    }
    out.battery = (out.battery - dt).max(0.0);
    out
}

/// Nearest point on the corridor centerline segment, at cruise altitude.
pub fn corridor_centerline(corridor: &CorridorConfig, cruise_altitude: f64, pose: &Pose) -> Vec3 {
    let a = corridor.start.xy();
    let b = corridor.end.xy();
    let ab = b - a;
    let s = ((pose.position.xy() - a).dot(&ab) / ab.norm_squared()).clamp(0.0, 1.0);
    let p = a + ab * s;
    Vec3::new(p.x, p.y, cruise_altitude)
}

/// Triangle wave in `[-amplitude, amplitude]` with slope `rate`, zero at `t = 0`.
pub fn scan_offset(t: f64, amplitude: f64, rate: f64) -> f64 {
    if amplitude <= 0.0 {
        return 0.0;
    }
    let period = 4.0 * amplitude / rate;
    let phase = (t / period).rem_euclid(1.0) * 4.0;
    let tri = if phase < 1.0 {
        phase
    } else if phase < 3.0 {
        2.0 - phase
    } else {
        phase - 4.0
    };
    amplitude * tri
}

/// Derives an independent stream seed for one tick and purpose.
pub fn sub_seed(base: u64, tick: u64, stream: u64) -> u64 {
    let mut z = base
        ^ tick.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ stream.wrapping_mul(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

const STREAM_POSE: u64 = 1;
const STREAM_DETECT: u64 = 2;
const STREAM_DEPTH: u64 = 3;
const STREAM_RANSAC: u64 = 4;
const STREAM_PLAN: u64 = 5;
const STREAM_HOLD: u64 = 6;
const STREAM_DRIFT: u64 = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectorySample {
    pub t: f64,
    pub pose: Pose,
    pub state: MissionState,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SprayTraceSample {
    pub t: f64,
    /// True nozzle position minus the ideal nozzle position.
    pub error: Vec3,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SprayRecord {
    pub start_time: f64,
    /// Fused handle position the spray pose was computed from.
    pub handle_estimate: Vec3,
    /// Nozzle position the vehicle aimed for.
    pub target_nozzle: Vec3,
    /// Ground-truth handle nearest the estimate, and its distance from it.
    pub nearest_handle: Option<(usize, f64)>,
    pub trace: Vec<SprayTraceSample>,
    /// Sprayer-on time (s).
    pub duration: f64,
    /// Mean over ticks of the nozzle position error norm (m).
    pub mean_error: f64,
    /// Mean true nozzle position while spraying.
    pub mean_nozzle: Vec3,
    /// Mean nozzle-to-handle distance while spraying (m).
    pub nozzle_distance: f64,
    /// Spray time scaled by deposition at the realized distance (s).
    pub effective_duration: f64,
    pub disinfected: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventKind {
    Transition {
        from: MissionState,
        to: MissionState,
    },
    Planned {
        waypoints: usize,
        length: f64,
    },
    PlanFailed {
        consecutive: usize,
        error: String,
    },
    HandleCommitted {
        position: Vec3,
    },
    SprayPoseRefined {
        position: Vec3,
    },
    SprayFinished {
        index: usize,
    },
    TankEmpty,
    Collision,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MissionEvent {
    pub t: f64,
    pub kind: EventKind,
}

impl fmt::Display for MissionEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:8.2} ", self.t)?;
        match &self.kind {
            EventKind::Transition { from, to } => write!(f, "transition {from} -> {to}"),
            EventKind::Planned { waypoints, length } => {
                write!(f, "planned {waypoints} waypoints, {length:.3} m")
            }
            EventKind::PlanFailed { consecutive, error } => {
                write!(f, "plan failed ({consecutive} in a row): {error}")
            }
            EventKind::HandleCommitted { position: p } => {
                write!(
                    f,
                    "handle committed at ({:.3}, {:.3}, {:.3})",
                    p.x, p.y, p.z
                )
            }
            EventKind::SprayPoseRefined { position: p } => {
                write!(
                    f,
                    "spray pose refined, nozzle target ({:.3}, {:.3}, {:.3})",
                    p.x, p.y, p.z
                )
            }
            EventKind::SprayFinished { index } => write!(f, "spray {index} finished"),
            EventKind::TankEmpty => f.write_str("tank empty, spray skipped"),
            EventKind::Collision => f.write_str("vehicle intersects the scene"),
        }
    }
}

#[derive(Debug, Clone)]
struct SprayTarget {
    handle: Vec3,
    pose: SprayPose,
}

#[derive(Debug, Clone)]
struct ActiveSpray {
    start_time: f64,
    hold: Vec3,
    reference: Vec3,
    nearest: Option<(usize, f64)>,
    trace: Vec<SprayTraceSample>,
    nozzle_sum: Vec3,
    distance_sum: f64,
    truth_handle: Option<Vec3>,
}

/// Final state of a mission run.
#[derive(Debug, Clone)]
pub struct MissionOutcome {
    pub state: MissionState,
    pub sim_time: f64,
    pub ticks: u64,
    pub sprays: Vec<SprayRecord>,
    pub events: Vec<MissionEvent>,
    pub trajectory: Vec<TrajectorySample>,
    /// Ticks on which the true vehicle cuboid intersected the scene.
    pub collision_ticks: usize,
    pub tank: TankState,
    pub battery_remaining: f64,
}

/// A running mission. Construct with [`Mission::new`], then call
/// [`Mission::step`] until [`Mission::is_finished`], or use [`Mission::run`].
#[derive(Debug, Clone)]
pub struct Mission<'s> {
    scene: &'s SceneModel,
    cfg: MissionConfig,
    state: MissionState,
    vehicle: VehicleState,
    estimate: Pose,
    grid: VoxelGrid,
    tick: u64,
    tank: TankState,
    fuser: HandleFuser,
    target: Option<SprayTarget>,
    staging: Option<Vec3>,
    memory: Vec<Vec3>,
    events: Vec<MissionEvent>,
    trajectory: Vec<TrajectorySample>,
    sprays: Vec<SprayRecord>,
    active: Option<ActiveSpray>,
    next_plan_time: f64,
    planner_failures: usize,
    pending_abort: Option<AbortReason>,
    goal_reached: bool,
    land_altitude: f64,
    scan_start: f64,
    base_yaw: f64,
    map_dirty: bool,
    track_start: f64,
    last_track: f64,
    drift: Vec3,
    collision_ticks: usize,
}

impl<'s> Mission<'s> {
    pub fn new(
        scene: &'s SceneModel,
        cfg: MissionConfig,
        start: Pose,
    ) -> Result<Self, MissionError> {
        cfg.validate()?;
        if scene.collides(&Aabb::from_center_half_extents(
            start.position,
            cfg.vehicle.half_extents,
        )) {
            return Err(MissionError::StartInCollision);
        }
        let mut vehicle = VehicleState::new(start, &cfg.vehicle, cfg.battery_budget);
        vehicle.waypoints.push_back(Vec3::new(
            start.position.x,
            start.position.y,
            cfg.cruise_altitude,
        ));
        vehicle.commanded_yaw = Some(start.yaw);
        let memory = cfg
            .spray
            .memory
            .iter()
            .map(|m| Vec3::new(m[0], m[1], m[2]))
            .collect();
        Ok(Self {
            scene,
            grid: VoxelGrid::covering(&scene.bounds, cfg.mapping.resolution),
            fuser: HandleFuser::new(cfg.perception.fuse_window, cfg.perception.fuse_gate),
            state: MissionState::Takeoff,
            estimate: start,
            vehicle,
            tick: 0,
            tank: TankState::full(),
            target: None,
            staging: None,
            memory,
            events: Vec::new(),
            trajectory: Vec::new(),
            sprays: Vec::new(),
            active: None,
            next_plan_time: 0.0,
            planner_failures: 0,
            pending_abort: None,
            goal_reached: false,
            land_altitude: start.position.z,
            scan_start: 0.0,
            base_yaw: start.yaw,
            map_dirty: true,
            track_start: 0.0,
            last_track: 0.0,
            drift: Vec3::zeros(),
            collision_ticks: 0,
            cfg,
        })
    }

    pub fn state(&self) -> MissionState {
        self.state
    }

    pub fn vehicle(&self) -> &VehicleState {
        &self.vehicle
    }

    pub fn grid(&self) -> &VoxelGrid {
        &self.grid
    }

    pub fn events(&self) -> &[MissionEvent] {
        &self.events
    }

    pub fn sprays(&self) -> &[SprayRecord] {
        &self.sprays
    }

    pub fn trajectory(&self) -> &[TrajectorySample] {
        &self.trajectory
    }

    pub fn time(&self) -> f64 {
        self.tick as f64 * self.cfg.dt
    }

    pub fn is_finished(&self) -> bool {
        self.state.is_terminal()
    }

    pub fn run(mut self) -> MissionOutcome {
        while !self.is_finished() {
            self.step();
        }
        self.into_outcome()
    }

    pub fn into_outcome(self) -> MissionOutcome {
        MissionOutcome {
            state: self.state,
            sim_time: self.time(),
            ticks: self.tick,
            sprays: self.sprays,
            events: self.events,
            trajectory: self.trajectory,
            collision_ticks: self.collision_ticks,
            tank: self.tank,
            battery_remaining: self.vehicle.battery,
        }
    }

    fn log(&mut self, kind: EventKind) {
        self.events.push(MissionEvent {
            t: self.time(),
            kind,
        });
    }

    fn transition(&mut self, to: MissionState) {
        debug_assert!(self.state.can_transition_to(to), "{} -> {}", self.state, to);
        let from = self.state;
        self.state = to;
        self.log(EventKind::Transition { from, to });
    }

    fn begin_land(&mut self, abort: Option<AbortReason>) {
        self.pending_abort = abort;
        self.goal_reached = abort.is_none();
        self.active = None;
        self.vehicle.waypoints.clear();
        let p = if self.goal_reached {
            self.cfg.final_goal
        } else {
            self.estimate.position
        };
        self.vehicle
            .waypoints
            .push_back(Vec3::new(p.x, p.y, self.land_altitude));
        self.vehicle.commanded_yaw = None;
        self.transition(MissionState::Land);
    }

    fn camera_pose(&self, body: &Pose) -> Pose {
        Pose::new(
            body.transform_point(&self.cfg.vehicle.camera_offset),
            body.yaw,
        )
    }

    /// First-order Gauss-Markov update of the tracking drift, starting
    /// from zero at takeoff.
    fn advance_drift(&mut self) {
        let sigma = self.cfg.noise.pose_drift_std;
        if sigma == 0.0 {
            return;
        }
        let a = (-self.cfg.dt / self.cfg.noise.pose_drift_tau).exp();
        let n = Normal::new(0.0, sigma * (1.0 - a * a).sqrt()).expect("finite sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.cfg.seed, self.tick, STREAM_DRIFT));
        // altitude comes from a range sensor, so only the horizontal estimate wanders
        let w = Vec3::new(n.sample(&mut rng), n.sample(&mut rng), 0.0);
        self.drift = self.drift * a + w;
    }

    /// One control tick.
    pub fn step(&mut self) {
        if self.is_finished() {
            return;
        }
        let cfg_dt = self.cfg.dt;
        if self.state != MissionState::Land {
            if self.vehicle.battery <= 0.0 {
                self.begin_land(Some(AbortReason::LowBattery));
            } else if self.time() >= self.cfg.max_sim_time {
                self.begin_land(Some(AbortReason::Timeout));
            }
        }

        self.advance_drift();
        let mut truth = self.vehicle.pose;
        truth.position += self.drift;
        self.estimate = pose_estimate(
            &truth,
            &self.cfg.noise,
            sub_seed(self.cfg.seed, self.tick, STREAM_POSE),
        );
        let map_now = self.tick % self.cfg.mapping.interval_ticks == 0;
        let perceive = matches!(
            self.state,
            MissionState::Explore | MissionState::Spray(SprayPhase::Approach)
        );
        let estimates = if map_now || perceive {
            self.sense(map_now, perceive)
        } else {
            Vec::new()
        };
        let footprint =
            Aabb::from_center_half_extents(self.estimate.position, self.cfg.vehicle.half_extents);
        self.grid.clear_inside(&footprint);

        match self.state {
            MissionState::Takeoff => self.do_takeoff(),
            MissionState::Explore => self.do_explore(&estimates),
            MissionState::Spray(SprayPhase::Approach) => self.do_approach(&estimates),
            MissionState::Spray(SprayPhase::Aim) => self.do_aim(),
            MissionState::Spray(SprayPhase::Spraying) => self.do_spraying(),
            MissionState::ReturnToCorridor => self.do_return(),
            MissionState::Land => self.do_land(),
            MissionState::Done | MissionState::Aborted(_) => {}
        }

        self.apply_control(cfg_dt);
        self.tick += 1;

        let body = Aabb::from_center_half_extents(
            self.vehicle.pose.position,
            self.cfg.vehicle.half_extents,
        );
        if self.scene.collides(&body) {
            self.collision_ticks += 1;
            self.log(EventKind::Collision);
        }
        self.trajectory.push(TrajectorySample {
            t: self.time(),
            pose: self.vehicle.pose,
            state: self.state,
        });
    }

    /// Renders what the tick needs, updates the map and returns handle
    /// estimates for every detected door/handle pair.
    fn sense(&mut self, map_now: bool, perceive: bool) -> Vec<HandleEstimate> {
        let cam_true = self.camera_pose(&self.vehicle.pose);
        let cam_est = self.camera_pose(&self.estimate);
        let intr = self.cfg.camera;
        let noise = self.cfg.noise;
        let seed = self.cfg.seed;
        let pairs = if perceive {
            pair_detections(&detect(
                self.scene,
                &cam_true,
                &intr,
                &noise,
                sub_seed(seed, self.tick, STREAM_DETECT),
            ))
        } else {
            Vec::new()
        };
        let door_points = self.cfg.perception.door_points as f64;
        let strides: Vec<usize> = pairs
            .iter()
            .map(|(door, _)| ((door.area() as f64 / door_points).sqrt().ceil() as usize).max(1))
            .collect();
        let ms = self.cfg.mapping.stride;
        let mask = |u: usize, v: usize| {
            (map_now && u % ms == 0 && v % ms == 0)
                || pairs.iter().zip(&strides).any(|((door, handle), &ds)| {
                    handle.contains(u, v)
                        || (door.contains(u, v)
                            && (u - door.u_min) % ds == 0
                            && (v - door.v_min) % ds == 0)
                })
        };
        let mut img = render_depth_masked(
            self.scene,
            &cam_true,
            &intr,
            &noise,
            sub_seed(seed, self.tick, STREAM_DEPTH),
            mask,
        );
        img.pose = cam_est;
        if map_now {
            self.grid
                .integrate_depth_image(&img, ms, self.cfg.mapping.carve_misses);
            self.map_dirty = true;
        }
        let mut out = Vec::new();
        for (k, ((door, handle), &ds)) in pairs.iter().zip(&strides).enumerate() {
            let seg = segment_pair(&img, door, handle, 1, ds);
            if seg.handle.is_empty() {
                continue;
            }
            let params = RansacParams {
                seed: sub_seed(seed, self.tick, STREAM_RANSAC + 16 * k as u64),
                ..self.cfg.perception.ransac
            };
            let Ok(plane) = fit_door_plane(&seg.door, &cam_est.position, &params) else {
                continue;
            };
            if let Ok(e) = localize_handle(&seg.handle, &plane, self.cfg.spray.handle_offset) {
                out.push(e);
            }
        }
        out
    }

    fn in_memory(&self, p: &Vec3) -> bool {
        self.memory
            .iter()
            .any(|m| (m - p).norm() < self.cfg.spray.memory_radius)
    }

    fn collision_index(&self) -> CollisionIndex {
        planning_index(
            &self.grid,
            &self.estimate.position,
            &self.cfg.planning_half_extents(),
            &self.cfg.planner,
        )
    }

    fn path_blocked(&self, index: &CollisionIndex) -> bool {
        let half = self.cfg.planning_half_extents();
        let mut prev = self.estimate.position;
        for w in &self.vehicle.waypoints {
            if !index.is_segment_free(&prev, w, &half) {
                return true;
            }
            prev = *w;
        }
        false
    }

    fn plan_failed(&mut self, err: String) {
        self.planner_failures += 1;
        self.vehicle.waypoints.clear();
        self.next_plan_time = self.time() + self.cfg.retry_interval;
        let consecutive = self.planner_failures;
        self.log(EventKind::PlanFailed {
            consecutive,
            error: err,
        });
        if consecutive >= self.cfg.max_planner_failures {
            self.begin_land(Some(AbortReason::PlannerFailure));
        }
    }

    fn set_path(&mut self, waypoints: Vec<Vec3>) {
        let mut prev = self.estimate.position;
        let mut length = 0.0;
        for w in &waypoints {
            length += (w - prev).norm();
            prev = *w;
        }
        self.vehicle.waypoints = waypoints.into();
        self.planner_failures = 0;
        self.next_plan_time = self.time() + self.cfg.replan_interval;
        let n = self.vehicle.waypoints.len();
        self.log(EventKind::Planned {
            waypoints: n,
            length,
        });
    }

    /// Straight line if it is free, RRT* otherwise.
    fn try_plan(&self, index: &CollisionIndex, goal: Vec3) -> Result<Vec<Vec3>, PlanError> {
        let start = self.estimate.position;
        let half = self.cfg.planning_half_extents();
        if index.is_free(&start, &half) && index.is_segment_free(&start, &goal, &half) {
            return Ok(vec![goal]);
        }
        let params = PlannerParams {
            seed: sub_seed(self.cfg.seed, self.tick, STREAM_PLAN),
            ..self.cfg.planner
        };
        let path = plan_with_index(index, self.grid.bounds(), start, goal, half, &params)?;
        let path = simplify_with_index(index, &path, &half, params.seed, 50);
        Ok(path.waypoints.into_iter().skip(1).collect())
    }

    fn plan_to(&mut self, goal: Vec3) {
        let index = self.collision_index();
        match self.try_plan(&index, goal) {
            Ok(w) => self.set_path(w),
            Err(e) => self.plan_failed(e.to_string()),
        }
    }

    /// Replans when the queue ran out, the path got blocked or the cadence
    /// timer expired. Returns the index used, if one was built.
    fn needs_replan(&mut self) -> bool {
        if self.time() + 1e-9 < self.next_plan_time && self.planner_failures > 0 {
            return false;
        }
        if self.vehicle.waypoints.is_empty() || self.time() + 1e-9 >= self.next_plan_time {
            return true;
        }
        if self.map_dirty {
            self.map_dirty = false;
            let index = self.collision_index();
            return self.path_blocked(&index);
        }
        false
    }

    fn do_takeoff(&mut self) {
        let z = self.estimate.position.z;
        if self.vehicle.waypoints.is_empty() && (z - self.cfg.cruise_altitude).abs() < 0.05 {
            self.enter_explore();
        } else if self.vehicle.waypoints.is_empty() {
            let p = self.estimate.position;
            self.vehicle
                .waypoints
                .push_back(Vec3::new(p.x, p.y, self.cfg.cruise_altitude));
        }
    }

    fn enter_explore(&mut self) {
        self.transition(MissionState::Explore);
        self.fuser.clear();
        self.target = None;
        self.vehicle.waypoints.clear();
        self.next_plan_time = self.time();
        self.planner_failures = 0;
        self.scan_start = self.time();
        self.base_yaw = self.estimate.yaw;
    }

    fn at_goal(&self) -> bool {
        let d = self.estimate.position - self.cfg.final_goal;
        d.xy().norm() <= self.cfg.goal_tolerance && d.z.abs() <= self.cfg.goal_tolerance
    }

    /// Point on the corridor centerline `explore_lookahead` ahead of the
    /// vehicle, or the final goal once it is that close.
    fn corridor_lookahead(&self) -> Vec3 {
        let goal = self.cfg.final_goal;
        if (goal - self.estimate.position).norm() <= self.cfg.explore_lookahead {
            return goal;
        }
        let c = &self.cfg.corridor;
        let axis = Vec3::new(c.end.x - c.start.x, c.end.y - c.start.y, 0.0).normalize();
        let here = corridor_centerline(c, self.cfg.cruise_altitude, &self.estimate);
        let ahead = Pose::new(here + axis * self.cfg.explore_lookahead, 0.0);
        corridor_centerline(c, self.cfg.cruise_altitude, &ahead)
    }

    /// The corridor lookahead point if it is free, otherwise the farthest
    /// free point along a fan of headings around it, scored by progress.
    fn explore_target(&self, index: &CollisionIndex) -> Option<Vec3> {
        let half = self.cfg.planning_half_extents();
        let target = self.corridor_lookahead();
        if index.is_free(&target, &half) {
            return Some(target);
        }
        let here = self.estimate.position;
        let from = Vec3::new(here.x, here.y, self.cfg.cruise_altitude);
        let to_target = target - from;
        let base = yaw_of(&to_target);
        let spacing = 0.5 * self.cfg.mapping.resolution;
        let reach = self.cfg.explore_lookahead.min(to_target.xy().norm());
        let mut best: Option<(f64, Vec3)> = None;
        for deg in [
            0.0f64, 15.0, -15.0, 30.0, -30.0, 45.0, -45.0, 60.0, -60.0, 90.0, -90.0,
        ] {
            let yaw = base + deg.to_radians();
            let dir = Vec3::new(yaw.cos(), yaw.sin(), 0.0);
            let mut last = None;
            let steps = (reach / spacing).floor() as usize;
            for k in 1..=steps {
                let p = from + dir * (k as f64 * spacing);
                if !index.is_free(&p, &half) {
                    break;
                }
                last = Some(p);
            }
            if let Some(p) = last {
                if (p - from).norm() < 0.2 {
                    continue;
                }
                let progress = to_target.norm() - (target - p).norm();
                if progress > 0.05 && best.is_none_or(|(b, _)| progress > b + 1e-9) {
                    best = Some((progress, p));
                }
            }
        }
        best.map(|(_, p)| p)
    }

    /// Hover while a handle track is being built so the scan keeps the
    /// handle in view.
    fn dwelling(&mut self) -> bool {
        if self.fuser.is_empty() {
            return false;
        }
        let now = self.time();
        if now - self.last_track > self.cfg.scan.max_dwell {
            self.fuser.clear();
            return false;
        }
        now - self.last_track <= self.cfg.scan.dwell_timeout
            && now - self.track_start <= self.cfg.scan.max_dwell
    }

    fn do_explore(&mut self, estimates: &[HandleEstimate]) {
        if self.at_goal() {
            self.begin_land(None);
            return;
        }
        if let Some(e) = estimates.iter().find(|e| !self.in_memory(&e.position)) {
            let was_empty = self.fuser.is_empty();
            match self.fuser.push(*e) {
                FuseOutcome::Rejected => {}
                FuseOutcome::Accepted | FuseOutcome::Restarted => {
                    if was_empty {
                        self.track_start = self.time();
                    }
                    self.last_track = self.time();
                }
            }
        }
        if self.fuser.is_stable() {
            if let Some(fused) = self.fuser.fused().filter(|f| !self.in_memory(&f.position)) {
                if let Ok(pose) =
                    compute_spray_pose(&fused, self.cfg.spray.standoff, &self.cfg.nozzle())
                {
                    self.target = Some(SprayTarget {
                        handle: fused.position,
                        pose,
                    });
                    self.log(EventKind::HandleCommitted {
                        position: fused.position,
                    });
                    self.transition(MissionState::Spray(SprayPhase::Approach));
                    self.vehicle.waypoints.clear();
                    self.next_plan_time = self.time();
                    self.planner_failures = 0;
                    self.do_approach(&[]);
                    return;
                }
            }
        }
        if self.dwelling() {
            self.vehicle.waypoints.clear();
            self.next_plan_time = self.time();
            if let Some(f) = self.fuser.fused() {
                // hold the track in view instead of sweeping past it
                self.vehicle.commanded_yaw = Some(yaw_of(&(f.position - self.estimate.position)));
                return;
            }
        } else if self.needs_replan() {
            let index = self.collision_index();
            let before = self.planner_failures;
            match self.explore_target(&index) {
                Some(goal) => match self.try_plan(&index, goal) {
                    Ok(w) => self.set_path(w),
                    Err(e) => self.plan_failed(e.to_string()),
                },
                None => {
                    // nothing reachable yet: hover and keep scanning
                    self.vehicle.waypoints.clear();
                    self.next_plan_time = self.time() + self.cfg.retry_interval;
                    self.planner_failures = before;
                }
            }
            if self.state != MissionState::Explore {
                return;
            }
        }
        if let Some(w) = self.vehicle.waypoints.front() {
            let d = w - self.estimate.position;
            if d.xy().norm() > 0.05 {
                self.base_yaw = yaw_of(&d);
            }
        } else {
            self.base_yaw = yaw_of(&(self.cfg.final_goal - self.estimate.position));
        }
        let offset = scan_offset(
            self.time() - self.scan_start,
            self.cfg.scan.amplitude_deg.to_radians(),
            self.cfg.scan.rate,
        );
        self.vehicle.commanded_yaw = Some(wrap_angle(self.base_yaw + offset));
    }

    fn do_approach(&mut self, estimates: &[HandleEstimate]) {
        let Some(target) = self.target.clone() else {
            return;
        };
        if let Some(e) = estimates
            .iter()
            .filter(|e| (e.position - target.handle).norm() <= self.cfg.perception.fuse_gate)
            .min_by(|a, b| {
                (a.position - target.handle)
                    .norm()
                    .total_cmp(&(b.position - target.handle).norm())
            })
        {
            self.fuser.push(*e);
        }
        let goal = target.pose.vehicle.position;
        if (self.estimate.position - goal).norm() <= self.cfg.spray.approach_gate {
            if let Some(fused) = self.fuser.fused() {
                if let Ok(pose) =
                    compute_spray_pose(&fused, self.cfg.spray.standoff, &self.cfg.nozzle())
                {
                    self.target = Some(SprayTarget {
                        handle: fused.position,
                        pose,
                    });
                    self.log(EventKind::SprayPoseRefined {
                        position: pose.nozzle_position,
                    });
                }
            }
            self.transition(MissionState::Spray(SprayPhase::Aim));
            self.vehicle.waypoints.clear();
            self.planner_failures = 0;
            self.next_plan_time = self.time();
            self.do_aim();
            return;
        }
        if self.needs_replan() {
            let index = self.collision_index();
            let staging = self.staging_point(&index, &target);
            match self.try_plan(&index, staging) {
                Ok(w) => self.set_path(w),
                Err(e) => self.plan_failed(e.to_string()),
            }
            if self.state != MissionState::Spray(SprayPhase::Approach) {
                return;
            }
        }
        self.vehicle.commanded_yaw = Some(yaw_of(&(target.handle - self.estimate.position)));
    }

    /// First pose backed off from the spray pose along the door normal whose
    /// cuboid is free in the map. Noisy returns near the handle often block
    /// the spray pose itself.
    fn staging_point(&self, index: &CollisionIndex, target: &SprayTarget) -> Vec3 {
        let goal = target.pose.vehicle.position;
        let mut away = goal - target.handle;
        away.z = 0.0;
        let Some(dir) = away.try_normalize(1e-9) else {
            return goal;
        };
        let half = self.cfg.planning_half_extents();
        let step = self.grid.resolution();
        let steps = (self.cfg.spray.approach_gate / step).floor() as usize;
        (0..steps)
            .map(|k| goal + dir * (k as f64 * step))
            .find(|p| index.is_free(p, &half))
            .unwrap_or(goal)
    }

    /// Final leg: planned to the staging point, then straight in.
    fn do_aim(&mut self) {
        let Some(target) = self.target.clone() else {
            return;
        };
        let goal = target.pose.vehicle;
        self.vehicle.commanded_yaw = Some(goal.yaw);
        let pos_err = (self.estimate.position - goal.position).norm();
        let yaw_err = wrap_angle(self.estimate.yaw - goal.yaw).abs();
        if self.vehicle.waypoints.is_empty()
            && pos_err < self.cfg.spray.threshold
            && yaw_err < self.cfg.spray.heading_threshold_deg.to_radians()
        {
            self.start_spray(&target);
            return;
        }
        let heading_to_goal = self
            .vehicle
            .waypoints
            .back()
            .is_some_and(|w| (w - goal.position).norm() < 1e-9);
        if !heading_to_goal && self.time() + 1e-9 >= self.next_plan_time {
            let index = self.collision_index();
            let staging = self.staging_point(&index, &target);
            let mut w = if (self.estimate.position - staging).norm() < 1e-6 {
                Vec::new()
            } else {
                match self.try_plan(&index, staging) {
                    Ok(w) => w,
                    Err(e) => return self.plan_failed(e.to_string()),
                }
            };
            w.push(goal.position);
            self.staging = Some(staging);
            self.set_path(w);
        } else if self.vehicle.waypoints.is_empty() && pos_err >= self.cfg.vehicle.arrival_tolerance
        {
            self.vehicle.waypoints.push_back(goal.position);
        }
    }

    fn start_spray(&mut self, target: &SprayTarget) {
        let nearest = self
            .scene
            .handles
            .iter()
            .enumerate()
            .map(|(i, h)| (i, (h.center - target.handle).norm()))
            .min_by(|a, b| a.1.total_cmp(&b.1));
        let (reference, truth_handle) = match nearest
            .and_then(|(i, _)| ground_truth_spray_pose(self.scene, i).ok().map(|p| (i, p)))
        {
            Some((i, p)) => (p.position, Some(self.scene.handles[i].center)),
            None => (target.pose.nozzle_position, None),
        };
        self.vehicle.waypoints.clear();
        self.active = Some(ActiveSpray {
            start_time: self.time(),
            hold: self.vehicle.pose.position,
            reference,
            nearest,
            trace: Vec::new(),
            nozzle_sum: Vec3::zeros(),
            distance_sum: 0.0,
            truth_handle,
        });
        self.transition(MissionState::Spray(SprayPhase::Spraying));
    }

    fn do_spraying(&mut self) {
        self.vehicle.waypoints.clear();
        let done = self
            .active
            .as_ref()
            .is_some_and(|a| a.trace.len() >= self.cfg.spray_ticks());
        if !done {
            return;
        }
        let active = self.active.take().expect("spraying has an active spray");
        let target = self.target.take().expect("spraying has a target");
        let n = active.trace.len() as f64;
        let duration = n * self.cfg.dt;
        match self.tank.consume(duration) {
            Ok(t) => {
                self.tank = t;
                let mean_error = active.trace.iter().map(|s| s.error.norm()).sum::<f64>() / n;
                let nozzle_distance = active.distance_sum / n;
                let datum = self.cfg.deposition.fraction(DEPOSITION_DATUM.0);
                let scale = if datum > 0.0 {
                    (self.cfg.deposition.fraction(nozzle_distance) / datum).min(1.0)
                } else {
                    0.0
                };
                let effective_duration = duration * scale;
                let disinfected = effective_duration > 0.0
                    && self.cfg.coverage.is_disinfected(effective_duration);
                self.sprays.push(SprayRecord {
                    start_time: active.start_time,
                    handle_estimate: target.handle,
                    target_nozzle: target.pose.nozzle_position,
                    nearest_handle: active.nearest,
                    trace: active.trace,
                    duration,
                    mean_error,
                    mean_nozzle: active.nozzle_sum / n,
                    nozzle_distance,
                    effective_duration,
                    disinfected,
                });
                let index = self.sprays.len() - 1;
                self.log(EventKind::SprayFinished { index });
            }
            Err(_) => self.log(EventKind::TankEmpty),
        }
        self.memory.push(target.handle);
        self.transition(MissionState::ReturnToCorridor);
        self.next_plan_time = self.time();
        self.planner_failures = 0;
        self.do_return();
    }

    fn do_return(&mut self) {
        let c = corridor_centerline(&self.cfg.corridor, self.cfg.cruise_altitude, &self.estimate);
        self.vehicle.commanded_yaw = Some(yaw_of(&(self.cfg.final_goal - self.estimate.position)));
        let err = (self.estimate.position - c).norm();
        if self.vehicle.waypoints.is_empty() && err < 0.1 {
            self.enter_explore();
            return;
        }
        if self.vehicle.waypoints.is_empty() && self.time() + 1e-9 >= self.next_plan_time {
            let index = self.collision_index();
            if !index.is_free(&self.estimate.position, &self.cfg.planning_half_extents()) {
                if let Some(s) = self.staging.take() {
                    // back out the way the final leg came in
                    self.vehicle.waypoints.push_back(s);
                    return;
                }
            }
            self.staging = None;
            self.plan_to(c);
        }
    }

    fn do_land(&mut self) {
        if !self.vehicle.waypoints.is_empty() {
            return;
        }
        if (self.estimate.position.z - self.land_altitude).abs() > 0.05 {
            let p = self.estimate.position;
            self.vehicle
                .waypoints
                .push_back(Vec3::new(p.x, p.y, self.land_altitude));
            return;
        }
        let horizontal = (self.vehicle.pose.position - self.cfg.final_goal)
            .xy()
            .norm();
        let next = match self.pending_abort {
            Some(r) => MissionState::Aborted(r),
            None if self.goal_reached && horizontal <= self.cfg.goal_tolerance => {
                MissionState::Done
            }
            None => MissionState::Aborted(AbortReason::GoalMissed),
        };
        self.transition(next);
    }

    /// Commands computed against the estimate move the true state by the
    /// same displacement; holding to spray adds Gaussian wander instead.
    fn apply_control(&mut self, dt: f64) {
        if self.state == MissionState::Spray(SprayPhase::Spraying) {
            self.vehicle.battery = (self.vehicle.battery - dt).max(0.0);
            let Some(active) = self.active.as_mut() else {
                return;
            };
            if active.trace.len() >= self.cfg.spray_ticks() {
                return;
            }
            let mut rng =
                ChaCha8Rng::seed_from_u64(sub_seed(self.cfg.seed, self.tick, STREAM_HOLD));
            let sigma = self.cfg.vehicle.hold_jitter;
            let jitter = if sigma > 0.0 {
                let n = Normal::new(0.0, sigma).expect("finite sigma");
                Vec3::new(n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng))
            } else {
                Vec3::zeros()
            };
            self.vehicle.pose.position = active.hold + jitter;
            let nozzle = self.cfg.nozzle().nozzle_pose(&self.vehicle.pose).position;
            active.trace.push(SprayTraceSample {
                t: (self.tick + 1) as f64 * dt,
                error: nozzle - active.reference,
            });
            active.nozzle_sum += nozzle;
            active.distance_sum += active
                .truth_handle
                .map_or(self.cfg.spray.standoff, |h| (nozzle - h).norm());
            return;
        }
        let mut ctrl = self.vehicle.clone();
        ctrl.pose = self.estimate;
        if self.state == MissionState::Explore {
            ctrl.max_speed = ctrl.max_speed.min(self.cfg.explore_speed);
        }
        let moved = follow_waypoints(&ctrl, dt);
        let dp = moved.pose.position - self.estimate.position;
        let dyaw = wrap_angle(moved.pose.yaw - self.estimate.yaw);
        self.vehicle.pose.position += dp;
        self.vehicle.pose.yaw = wrap_angle(self.vehicle.pose.yaw + dyaw);
        self.vehicle.waypoints = moved.waypoints;
        self.vehicle.battery = moved.battery;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::default_scene;

    fn vehicle_at(p: Vec3) -> VehicleState {
        VehicleState::new(Pose::new(p, 0.0), &VehicleConfig::default(), 100.0)
    }

    #[test]
    fn tracker_moves_at_max_speed() {
        let mut v = vehicle_at(Vec3::zeros());
        v.waypoints.push_back(Vec3::new(1.0, 0.0, 0.0));
        let n = follow_waypoints(&v, 0.1);
        assert!((n.pose.position - Vec3::new(0.05, 0.0, 0.0)).norm() < 1e-12);
        assert_eq!(n.waypoints.len(), 1);
        assert!((n.battery - 99.9).abs() < 1e-12);
    }

    #[test]
    fn tracker_pops_reached_waypoint() {
        let mut v = vehicle_at(Vec3::zeros());
        v.waypoints.push_back(Vec3::new(0.01, 0.0, 0.0));
        v.waypoints.push_back(Vec3::new(0.0, 1.0, 0.0));
        let n = follow_waypoints(&v, 0.1);
        assert_eq!(n.waypoints.len(), 1);
        assert_eq!(n.waypoints[0], Vec3::new(0.0, 1.0, 0.0));
        assert!((n.pose.position - Vec3::new(0.0, 0.05, 0.0)).norm() < 1e-12);
    }

    #[test]
    fn tracker_hovers_on_empty_queue() {
        let v = vehicle_at(Vec3::new(1.0, 2.0, 3.0));
        let n = follow_waypoints(&v, 0.1);
        assert_eq!(n.pose, v.pose);
    }

    #[test]
    fn tracker_rate_limits_yaw() {
        let mut v = vehicle_at(Vec3::zeros());
        v.commanded_yaw = Some(1.0);
        let n = follow_waypoints(&v, 0.1);
        assert!((n.pose.yaw - 0.08).abs() < 1e-12);
        v.commanded_yaw = Some(0.05);
        assert!((follow_waypoints(&v, 0.1).pose.yaw - 0.05).abs() < 1e-12);
    }

    #[test]
    fn centerline_examples() {
        let c = CorridorConfig {
            start: Vec3::new(0.0, 0.0, 1.0),
            end: Vec3::new(10.0, 0.0, 1.0),
        };
        let p = |x, y, z| Pose::new(Vec3::new(x, y, z), 0.0);
        assert_eq!(
            corridor_centerline(&c, 1.0, &p(2.0, 0.8, 1.0)),
            Vec3::new(2.0, 0.0, 1.0)
        );
        assert_eq!(
            corridor_centerline(&c, 1.0, &p(3.0, 0.0, 1.0)),
            Vec3::new(3.0, 0.0, 1.0)
        );
        assert_eq!(
            corridor_centerline(&c, 1.2, &p(12.0, -0.4, 0.3)),
            Vec3::new(10.0, 0.0, 1.2)
        );
    }

    #[test]
    fn scan_is_a_bounded_triangle() {
        let a = 45f64.to_radians();
        assert_eq!(scan_offset(0.0, a, 0.5), 0.0);
        assert!((scan_offset(a / 0.5, a, 0.5) - a).abs() < 1e-12);
        assert!((scan_offset(3.0 * a / 0.5, a, 0.5) + a).abs() < 1e-12);
        for i in 0..1000 {
            let t = i as f64 * 0.05;
            assert!(scan_offset(t, a, 0.5).abs() <= a + 1e-12);
            let slope = (scan_offset(t + 1e-4, a, 0.5) - scan_offset(t, a, 0.5)) / 1e-4;
            assert!(slope.abs() <= 0.5 + 1e-6);
        }
    }

    #[test]
    fn transition_table() {
        use MissionState::*;
        use SprayPhase::*;
        assert!(Takeoff.can_transition_to(Explore));
        assert!(Explore.can_transition_to(Land));
        assert!(Spray(Aim).can_transition_to(Land));
        assert!(!Explore.can_transition_to(Spray(Spraying)));
        assert!(!Takeoff.can_transition_to(Done));
        assert!(!Done.can_transition_to(Land));
        assert!(Land.can_transition_to(Aborted(AbortReason::LowBattery)));
        assert!(!Land.can_transition_to(Land));
    }

    #[test]
    fn bundled_config_matches_defaults() {
        let cfg = MissionConfig::from_toml_str(DEFAULT_MISSION_TOML).unwrap();
        assert_eq!(cfg, MissionConfig::default());
        let round = MissionConfig::from_toml_str(&cfg.to_toml_string().unwrap()).unwrap();
        assert_eq!(round, cfg);
    }

    #[test]
    fn config_rejects_bad_values() {
        let mut cfg = MissionConfig::default();
        cfg.dt = 0.0;
        assert!(matches!(cfg.validate(), Err(MissionError::Invalid(m)) if m.contains("dt")));
        let err = MissionConfig::from_toml_str("cruise_altitude = \"high\"").unwrap_err();
        assert!(matches!(err, MissionError::Parse(_)));
        let err = MissionConfig::from_toml_str("no_such_field = 1").unwrap_err();
        assert!(matches!(err, MissionError::Parse(_)));
    }

    fn start_pose() -> Pose {
        Pose::new(Vec3::new(1.0, 0.0, 0.2), 0.0)
    }

    fn check_transitions(out: &MissionOutcome) {
        let mut state = MissionState::Takeoff;
        for e in &out.events {
            if let EventKind::Transition { from, to } = e.kind {
                assert_eq!(from, state);
                assert!(from.can_transition_to(to), "{from} -> {to}");
                state = to;
            }
        }
        assert_eq!(state, out.state);
    }

    #[test]
    fn low_battery_lands_and_aborts() {
        let scene = default_scene();
        let cfg = MissionConfig {
            battery_budget: 1.0,
            ..Default::default()
        };
        let out = Mission::new(&scene, cfg, start_pose()).unwrap().run();
        assert_eq!(out.state, MissionState::Aborted(AbortReason::LowBattery));
        check_transitions(&out);
        let t_land = out
            .events
            .iter()
            .find(|e| {
                matches!(
                    e.kind,
                    EventKind::Transition {
                        to: MissionState::Land,
                        ..
                    }
                )
            })
            .unwrap()
            .t;
        assert!(t_land <= 1.0 + 1e-9);
        assert!(out.sprays.is_empty());
    }

    #[test]
    fn blind_detector_means_no_sprays_but_done() {
        let scene = default_scene();
        let mut cfg = MissionConfig::default();
        cfg.noise.false_negative_prob = 1.0;
        let out = Mission::new(&scene, cfg, start_pose()).unwrap().run();
        assert_eq!(out.state, MissionState::Done, "{:#?}", out.events);
        assert!(out.sprays.is_empty());
        assert_eq!(out.collision_ticks, 0);
        check_transitions(&out);
    }

    #[test]
    fn single_handle_sprayed_once() {
        let scene = default_scene();
        let cfg = MissionConfig::default();
        let spray_ticks = cfg.spray_ticks();
        let out = Mission::new(&scene, cfg, start_pose()).unwrap().run();
        let summary: Vec<String> = out.events.iter().map(|e| e.to_string()).collect();
        assert_eq!(out.state, MissionState::Done, "{}", summary.join("\n"));
        let finished = out
            .events
            .iter()
            .filter(|e| matches!(e.kind, EventKind::SprayFinished { .. }))
            .count();
        assert_eq!(finished, 1);
        assert_eq!(out.sprays.len(), 1);
        let s = &out.sprays[0];
        assert_eq!(s.trace.len(), spray_ticks);
        assert!((s.duration - 2.0).abs() < 1e-9);
        assert!(s.nearest_handle.unwrap().1 < 0.25);
        assert!(s.mean_error < 0.12, "{}", s.mean_error);
        assert_eq!(out.collision_ticks, 0);
        assert!((out.tank.remaining_ml - 247.44).abs() < 0.01);
        check_transitions(&out);
        let horizontal = (out.trajectory.last().unwrap().pose.position - Vec3::new(9.0, 0.0, 1.0))
            .xy()
            .norm();
        assert!(horizontal <= 0.25);
    }

    #[test]
    fn spraying_holds_with_empty_queue() {
        let scene = default_scene();
        let mut m = Mission::new(&scene, MissionConfig::default(), start_pose()).unwrap();
        let mut spraying_ticks = 0;
        while !m.is_finished() {
            m.step();
            if m.state() == MissionState::Spray(SprayPhase::Spraying) {
                assert!(m.vehicle().waypoints.is_empty());
                spraying_ticks += 1;
            }
        }
        assert_eq!(spraying_ticks, MissionConfig::default().spray_ticks());
    }
}
