//! Multi-trial evaluation: randomized starts, aggregate metrics, artifacts
//! and parameter sweeps.

use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::Path as FsPath;
use std::time::Duration;
#[cfg(not(target_arch = "wasm32"))]
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::geometry::{Aabb, Pose, Vec3};
use crate::mission::{
    Mission, MissionConfig, MissionError, MissionOutcome, MissionState, SprayRecord,
};
use crate::scene::{HallwayBuilder, SceneError, SceneModel, WallSide};
use crate::spray::{SprayError, TankState};

/// Handle count per tank claimed for the real system, which the flow-rate
/// arithmetic does not reproduce.
pub const PUBLISHED_HANDLES_PER_TANK: u32 = 20;

/// A spray only counts for a handle when the estimate it was aimed at lies
/// within this distance of the true handle center (m).
pub const ASSOCIATION_RADIUS: f64 = 0.25;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Mission(#[from] MissionError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Spray(#[from] SprayError),
    #[error("cannot write artifacts: {0}")]
    Io(#[from] io::Error),
    #[error("need at least one trial")]
    NoTrials,
    #[error("no start position in the start region is collision free")]
    NoFreeStart,
    #[error("unknown sweep parameter {0:?}")]
    UnknownParam(String),
    #[error("invalid value {value} for {param}: {reason}")]
    BadValue {
        param: String,
        value: f64,
        reason: String,
    },
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub index: usize,
    pub seed: u64,
    pub start: Pose,
    /// Ground-truth handles in the scene.
    pub handle_count: usize,
    pub outcome: MissionOutcome,
    /// Host time spent simulating; never written to artifacts.
    pub wall_clock: Duration,
}

impl TrialResult {
    pub fn aborted(&self) -> bool {
        matches!(self.outcome.state, MissionState::Aborted(_))
    }

    /// Ground-truth handle each spray was aimed at, if any was close enough.
    pub fn associated_handle(spray: &SprayRecord) -> Option<usize> {
        spray
            .nearest_handle
            .filter(|(_, d)| *d <= ASSOCIATION_RADIUS)
            .map(|(i, _)| i)
    }

    /// Distinct ground-truth handles that received a spray.
    pub fn handles_sprayed(&self) -> usize {
        let mut ids: Vec<usize> = self
            .outcome
            .sprays
            .iter()
            .filter_map(Self::associated_handle)
            .collect();
        ids.sort_unstable();
        ids.dedup();
        ids.len()
    }

    /// Sprays whose verdict under the spray models is disinfected.
    pub fn disinfected(&self) -> usize {
        self.outcome.sprays.iter().filter(|s| s.disinfected).count()
    }

    /// Mission finished at the goal and every handle was sprayed.
    pub fn success(&self) -> bool {
        self.outcome.state == MissionState::Done && self.handles_sprayed() == self.handle_count
    }

    pub fn mean_error(&self) -> Option<f64> {
        let s = &self.outcome.sprays;
        (!s.is_empty()).then(|| s.iter().map(|r| r.mean_error).sum::<f64>() / s.len() as f64)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialSummary {
    pub index: usize,
    pub seed: u64,
    pub start: [f64; 3],
    pub outcome: String,
    pub success: bool,
    pub sprays: usize,
    pub handles_sprayed: usize,
    pub handle_count: usize,
    pub mean_error: Option<f64>,
    pub sim_time: f64,
    pub tank_remaining_ml: f64,
    pub collision_ticks: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SuiteReport {
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub aborted: usize,
    pub spray_events: usize,
    /// Spray events whose effective dose met the coverage threshold.
    pub disinfected_events: usize,
    /// Mean over trials of each trial's mean nozzle error (m).
    pub mean_error: Option<f64>,
    /// Largest per-trial mean nozzle error (m).
    pub max_error: Option<f64>,
    /// Average over spray events of the spread of the nozzle position
    /// within the event (m).
    pub within_trial_std: Option<f64>,
    /// Spread of the per-event mean nozzle offsets across events (m).
    pub between_trial_std: Option<f64>,
    pub collision_ticks: usize,
    pub spray_duration: f64,
    pub sprays_per_full_tank: u32,
    pub published_handles_per_tank: u32,
    pub per_trial: Vec<TrialSummary>,
}

/// Square root of the trace of the sample covariance.
fn spread(points: &[Vec3]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mean = points.iter().sum::<Vec3>() / n;
    let ss: f64 = points.iter().map(|p| (p - mean).norm_squared()).sum();
    Some((ss / (n - 1.0)).sqrt())
}

pub fn report(results: &[TrialResult], spray_duration: f64) -> Result<SuiteReport, EvalError> {
    if results.is_empty() {
        return Err(EvalError::NoTrials);
    }
    let mut sorted: Vec<&TrialResult> = results.iter().collect();
    sorted.sort_by_key(|r| r.index);
    let trials = sorted.len();
    let successes = sorted.iter().filter(|r| r.success()).count();
    let per_trial_means: Vec<f64> = sorted.iter().filter_map(|r| r.mean_error()).collect();
    let mean_error = (!per_trial_means.is_empty())
        .then(|| per_trial_means.iter().sum::<f64>() / per_trial_means.len() as f64);
    let max_error = per_trial_means.iter().copied().reduce(f64::max);

    let events: Vec<&SprayRecord> = sorted
        .iter()
        .flat_map(|r| r.outcome.sprays.iter())
        .collect();
    let within: Vec<f64> = events
        .iter()
        .filter_map(|s| spread(&s.trace.iter().map(|t| t.error).collect::<Vec<_>>()))
        .collect();
    let within_trial_std =
        (!within.is_empty()).then(|| within.iter().sum::<f64>() / within.len() as f64);
    let offsets: Vec<Vec3> = events
        .iter()
        .filter(|s| !s.trace.is_empty())
        .map(|s| s.trace.iter().map(|t| t.error).sum::<Vec3>() / s.trace.len() as f64)
        .collect();
    let between_trial_std = spread(&offsets).or((offsets.len() == 1).then_some(0.0));

    let per_trial = sorted
        .iter()
        .map(|r| TrialSummary {
            index: r.index,
            seed: r.seed,
            start: r.start.position.into(),
            outcome: r.outcome.state.to_string(),
            success: r.success(),
            sprays: r.outcome.sprays.len(),
            handles_sprayed: r.handles_sprayed(),
            handle_count: r.handle_count,
            mean_error: r.mean_error(),
            sim_time: r.outcome.sim_time,
            tank_remaining_ml: r.outcome.tank.remaining_ml,
            collision_ticks: r.outcome.collision_ticks,
        })
        .collect();
    Ok(SuiteReport {
        trials,
        successes,
        success_rate: successes as f64 / trials as f64,
        aborted: sorted.iter().filter(|r| r.aborted()).count(),
        spray_events: events.len(),
        disinfected_events: events.iter().filter(|s| s.disinfected).count(),
        mean_error,
        max_error,
        within_trial_std,
        between_trial_std,
        collision_ticks: sorted.iter().map(|r| r.outcome.collision_ticks).sum(),
        spray_duration,
        sprays_per_full_tank: TankState::full().sprays_remaining(spray_duration),
        published_handles_per_tank: PUBLISHED_HANDLES_PER_TANK,
        per_trial,
    })
}

/// Uniform start inside the configured region, redrawn until the vehicle
/// cuboid is clear of the scene.
pub fn sample_start(scene: &SceneModel, cfg: &MissionConfig, seed: u64) -> Result<Pose, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5747_4152_5453_0001);
    let r = &cfg.start_region;
    for _ in 0..100 {
        let p = Vec3::from_fn(|i, _| {
            if r.max[i] > r.min[i] {
                rng.random_range(r.min[i]..=r.max[i])
            } else {
                r.min[i]
            }
        });
        if !scene.collides(&Aabb::from_center_half_extents(p, cfg.vehicle.half_extents)) {
            return Ok(Pose::new(p, r.yaw));
        }
    }
    Err(EvalError::NoFreeStart)
}

/// Wall-clock timer. Browsers have no `Instant`, so wasm builds report zero.
struct Stopwatch(#[cfg(not(target_arch = "wasm32"))] Instant);

impl Stopwatch {
    fn start() -> Self {
        Self(
            #[cfg(not(target_arch = "wasm32"))]
            Instant::now(),
        )
    }

    fn elapsed(&self) -> Duration {
        #[cfg(not(target_arch = "wasm32"))]
        return self.0.elapsed();
        #[cfg(target_arch = "wasm32")]
        Duration::ZERO
    }
}

pub fn run_trial(
    scene: &SceneModel,
    cfg: &MissionConfig,
    index: usize,
    seed: u64,
) -> Result<TrialResult, EvalError> {
    let start = sample_start(scene, cfg, seed)?;
    let mut trial_cfg = cfg.clone();
    trial_cfg.seed = seed;
    let clock = Stopwatch::start();
    let outcome = Mission::new(scene, trial_cfg, start)?.run();
    Ok(TrialResult {
        index,
        seed,
        start,
        handle_count: scene.handles.len(),
        outcome,
        wall_clock: clock.elapsed(),
    })
}

/// Runs `trials` missions with seeds `base_seed + i`, sorted by index.
pub fn run_suite(
    scene: &SceneModel,
    cfg: &MissionConfig,
    trials: usize,
    base_seed: u64,
) -> Result<Vec<TrialResult>, EvalError> {
    if trials == 0 {
        return Err(EvalError::NoTrials);
    }
    scene.validate()?;
    cfg.validate()?;
    let one = |i: usize| run_trial(scene, cfg, i, base_seed.wrapping_add(i as u64));
    #[cfg(feature = "parallel")]
    let results: Result<Vec<_>, _> = {
        use rayon::prelude::*;
        (0..trials).into_par_iter().map(one).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let results: Result<Vec<_>, _> = (0..trials).map(one).collect();
    let mut results = results?;
    results.sort_by_key(|r| r.index);
    Ok(results)
}

pub fn trajectory_csv(outcome: &MissionOutcome) -> String {
    let mut s = String::from("t,x,y,z,yaw,state\n");
    for t in &outcome.trajectory {
        let p = t.pose.position;
        let _ = writeln!(
            s,
            "{:.2},{:.6},{:.6},{:.6},{:.6},{}",
            t.t,
            p.x,
            p.y,
            p.z,
            t.pose.yaw,
            t.state.label()
        );
    }
    s
}

pub fn spray_trace_csv(spray: &SprayRecord) -> String {
    let mut s = String::from("t,err_x,err_y,err_z\n");
    for t in &spray.trace {
        let _ = writeln!(
            s,
            "{:.2},{:.6},{:.6},{:.6}",
            t.t, t.error.x, t.error.y, t.error.z
        );
    }
    s
}

fn opt_m(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_owned(), |x| format!("{x:.4} m"))
}

pub fn summary_text(rep: &SuiteReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "trials: {}", rep.trials);
    let _ = writeln!(
        s,
        "handle-spray success: {}/{} ({:.2})",
        rep.successes, rep.trials, rep.success_rate
    );
    let _ = writeln!(s, "aborted trials: {}", rep.aborted);
    let _ = writeln!(s, "spray events: {}", rep.spray_events);
    let _ = writeln!(
        s,
        "events meeting the coverage dose: {}/{}",
        rep.disinfected_events, rep.spray_events
    );
    let _ = writeln!(s, "mean nozzle error: {}", opt_m(rep.mean_error));
    let _ = writeln!(s, "max per-trial nozzle error: {}", opt_m(rep.max_error));
    let _ = writeln!(s, "within-trial std: {}", opt_m(rep.within_trial_std));
    let _ = writeln!(s, "between-trial std: {}", opt_m(rep.between_trial_std));
    let _ = writeln!(s, "collision ticks: {}", rep.collision_ticks);
    let _ = writeln!(
        s,
        "sprays per full tank at {:.1} s each: {} (published estimate: about {} door handles; unresolved discrepancy)",
        rep.spray_duration, rep.sprays_per_full_tank, rep.published_handles_per_tank
    );
    let _ = writeln!(s);
    let _ = writeln!(
        s,
        "trial  seed  outcome            sprays  handles  mean_err  sim_time  tank_ml"
    );
    for t in &rep.per_trial {
        let _ = writeln!(
            s,
            "{:>5}  {:>4}  {:<18} {:>6}  {:>3}/{:<3}  {:>8}  {:>8.2}  {:>7.2}",
            t.index,
            t.seed,
            t.outcome,
            t.sprays,
            t.handles_sprayed,
            t.handle_count,
            t.mean_error
                .map_or_else(|| "n/a".to_owned(), |e| format!("{e:.4}")),
            t.sim_time,
            t.tank_remaining_ml
        );
    }
    s
}

/// Writes per-trial trajectories, spray traces and event logs plus the suite
/// summary under `dir`. Contents depend only on the inputs and seeds.
pub fn write_artifacts(
    dir: &FsPath,
    results: &[TrialResult],
    rep: &SuiteReport,
) -> Result<(), EvalError> {
    fs::create_dir_all(dir)?;
    for r in results {
        let tdir = dir.join(format!("trial_{:03}", r.index));
        fs::create_dir_all(&tdir)?;
        fs::write(tdir.join("trajectory.csv"), trajectory_csv(&r.outcome))?;
        for (k, spray) in r.outcome.sprays.iter().enumerate() {
            fs::write(tdir.join(format!("spray_{k}.csv")), spray_trace_csv(spray))?;
        }
        let mut log = String::new();
        for e in &r.outcome.events {
            let _ = writeln!(log, "{e}");
        }
        fs::write(tdir.join("events.log"), log)?;
    }
    fs::write(dir.join("summary.txt"), summary_text(rep))?;
    let json = serde_json::to_string_pretty(rep).map_err(io::Error::other)?;
    fs::write(dir.join("summary.json"), json + "\n")?;
    Ok(())
}

/// Trajectory samples whose vehicle cuboid intersects the scene.
pub fn replay_collisions(
    scene: &SceneModel,
    outcome: &MissionOutcome,
    half_extents: &Vec3,
) -> usize {
    outcome
        .trajectory
        .iter()
        .filter(|t| {
            scene.collides(&Aabb::from_center_half_extents(
                t.pose.position,
                *half_extents,
            ))
        })
        .count()
}

/// Random hallway with up to three doors and a few wall-mounted boxes,
/// plus a mission config whose corridor and goal match it.
pub fn random_scene(seed: u64, base: &MissionConfig) -> (SceneModel, MissionConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5343_454e_4500_0000);
    loop {
        let length: f64 = rng.random_range(8.0..14.0);
        let width: f64 = rng.random_range(1.8..2.6);
        let height: f64 = rng.random_range(2.3..3.0);
        let mut b = HallwayBuilder::new(length, width, height);
        let doors = rng.random_range(0..=3usize);
        let mut used: Vec<f64> = Vec::new();
        for _ in 0..doors {
            let x: f64 = rng.random_range(3.0..length - 2.0);
            if used.iter().any(|u| (u - x).abs() < 1.6) {
                continue;
            }
            used.push(x);
            let side = if rng.random_bool(0.5) {
                WallSide::Left
            } else {
                WallSide::Right
            };
            let lateral = if rng.random_bool(0.5) { 0.33 } else { -0.33 };
            b = b.door_with_handle(x, side, lateral, rng.random_range(0.9..1.1));
        }
        for _ in 0..rng.random_range(0..=2usize) {
            let x: f64 = rng.random_range(2.5..length - 1.5);
            if used.iter().any(|u| (u - x).abs() < 1.0) {
                continue;
            }
            let depth: f64 = rng.random_range(0.2..0.4);
            let len: f64 = rng.random_range(0.4..1.0);
            let top: f64 = rng.random_range(0.8..1.8);
            let hw = width * 0.5;
            let (y0, y1) = if rng.random_bool(0.5) {
                (hw - depth, hw)
            } else {
                (-hw, -hw + depth)
            };
            b = b.obstacle(Aabb::new(
                Vec3::new(x, y0, 0.0),
                Vec3::new(x + len, y1, top),
            ));
        }
        let Ok(scene) = b.build() else {
            continue;
        };
        let mut cfg = base.clone();
        cfg.final_goal = Vec3::new(length - 1.0, 0.0, cfg.cruise_altitude);
        cfg.corridor.start = Vec3::new(0.5, 0.0, cfg.cruise_altitude);
        cfg.corridor.end = Vec3::new(length - 0.5, 0.0, cfg.cruise_altitude);
        return (scene, cfg);
    }
}

/// Parameters `sweep` understands. The first two go through the spray
/// models only; the rest rerun the mission suite.
pub const SWEEP_PARAMS: [&str; 8] = [
    "duration",
    "distance",
    "standoff",
    "spray_duration",
    "depth_std",
    "pose_std",
    "hold_jitter",
    "false_negative_prob",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    /// Named metrics in a fixed order.
    pub metrics: Vec<(String, f64)>,
}

fn bad(param: &str, value: f64, reason: impl Into<String>) -> EvalError {
    EvalError::BadValue {
        param: param.to_owned(),
        value,
        reason: reason.into(),
    }
}

/// Sets one mission parameter by name.
pub fn apply_param(cfg: &mut MissionConfig, param: &str, value: f64) -> Result<(), EvalError> {
    match param {
        "standoff" => cfg.spray.standoff = value,
        "spray_duration" => cfg.spray.duration = value,
        "depth_std" => cfg.noise.depth_std = value,
        "pose_std" => cfg.noise.pose_std = value,
        "hold_jitter" => cfg.vehicle.hold_jitter = value,
        "false_negative_prob" => cfg.noise.false_negative_prob = value,
        _ => return Err(EvalError::UnknownParam(param.to_owned())),
    }
    cfg.validate().map_err(|e| bad(param, value, e.to_string()))
}

/// Evaluates each value of `param`. Mission parameters run `trials`
/// missions on `scene` per value.
pub fn sweep(
    param: &str,
    values: &[f64],
    scene: &SceneModel,
    cfg: &MissionConfig,
    trials: usize,
    base_seed: u64,
) -> Result<Vec<SweepRow>, EvalError> {
    let m = |k: &str, v: f64| (k.to_owned(), v);
    let mut rows = Vec::with_capacity(values.len());
    for &value in values {
        let metrics = match param {
            "duration" => {
                if !(value >= 0.0) {
                    return Err(bad(param, value, "spray duration must be non-negative"));
                }
                let tank = TankState::full();
                vec![
                    m("coverage_0s", cfg.coverage.coverage_after(value, 0.0)),
                    m("coverage_60s", cfg.coverage.coverage_after(value, 60.0)),
                    m(
                        "disinfected",
                        f64::from(u8::from(cfg.coverage.is_disinfected(value))),
                    ),
                    m("volume_ml", tank.volume_for(value)),
                    m(
                        "sprays_per_tank",
                        if value > 0.0 {
                            f64::from(tank.sprays_remaining(value))
                        } else {
                            f64::INFINITY
                        },
                    ),
                ]
            }
            "distance" => {
                if !(value >= 0.0) {
                    return Err(bad(param, value, "distance must be non-negative"));
                }
                let datum = cfg.deposition.fraction(crate::spray::DEPOSITION_DATUM.0);
                let frac = cfg.deposition.fraction(value);
                let effective = cfg.spray.duration * (frac / datum).min(1.0);
                vec![
                    m("deposition", frac),
                    m("effective_duration", effective),
                    m(
                        "disinfected",
                        f64::from(u8::from(cfg.coverage.is_disinfected(effective))),
                    ),
                ]
            }
            _ => {
                let mut c = cfg.clone();
                apply_param(&mut c, param, value)?;
                let results = run_suite(scene, &c, trials, base_seed)?;
                let rep = report(&results, c.spray.duration)?;
                vec![
                    m("success_rate", rep.success_rate),
                    m("mean_error", rep.mean_error.unwrap_or(f64::NAN)),
                    m("within_std", rep.within_trial_std.unwrap_or(f64::NAN)),
                    m("between_std", rep.between_trial_std.unwrap_or(f64::NAN)),
                ]
            }
        };
        rows.push(SweepRow { value, metrics });
    }
    Ok(rows)
}

pub fn sweep_csv(param: &str, rows: &[SweepRow]) -> String {
    let mut s = String::from(param);
    if let Some(r) = rows.first() {
        for (k, _) in &r.metrics {
            s.push(',');
            s.push_str(k);
        }
    }
    s.push('\n');
    for r in rows {
        let _ = write!(s, "{}", r.value);
        for (_, v) in &r.metrics {
            let _ = write!(s, ",{v:.6}");
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mission::{SprayTraceSample, TrajectorySample};

    fn spray(offset: Vec3, wander: f64, seed: u64) -> SprayRecord {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let trace: Vec<SprayTraceSample> = (0..40)
            .map(|k| SprayTraceSample {
                t: k as f64 * 0.05,
                error: offset + Vec3::from_fn(|_, _| rng.random_range(-wander..=wander)),
            })
            .collect();
        let mean_error = trace.iter().map(|t| t.error.norm()).sum::<f64>() / 40.0;
        SprayRecord {
            start_time: 0.0,
            handle_estimate: Vec3::zeros(),
            target_nozzle: Vec3::zeros(),
            nearest_handle: Some((0, 0.01)),
            trace,
            duration: 2.0,
            mean_error,
            mean_nozzle: offset,
            nozzle_distance: 0.3,
            effective_duration: 2.0,
            disinfected: true,
        }
    }

    fn trial(index: usize, state: MissionState, sprays: Vec<SprayRecord>) -> TrialResult {
        TrialResult {
            index,
            seed: index as u64,
            start: Pose::new(Vec3::zeros(), 0.0),
            handle_count: 1,
            outcome: MissionOutcome {
                state,
                sim_time: 10.0,
                ticks: 200,
                sprays,
                events: Vec::new(),
                trajectory: vec![TrajectorySample {
                    t: 0.05,
                    pose: Pose::new(Vec3::zeros(), 0.0),
                    state,
                }],
                collision_ticks: 0,
                tank: TankState::full(),
                battery_remaining: 100.0,
            },
            wall_clock: Duration::ZERO,
        }
    }

    #[test]
    fn identical_errors() {
        let results: Vec<_> = (0..5)
            .map(|i| {
                trial(
                    i,
                    MissionState::Done,
                    vec![spray(Vec3::new(0.05, 0.0, 0.0), 0.0, 1)],
                )
            })
            .collect();
        let rep = report(&results, 2.0).unwrap();
        assert!((rep.mean_error.unwrap() - 0.05).abs() < 1e-12);
        assert!(rep.between_trial_std.unwrap().abs() < 1e-12);
        assert_eq!(rep.success_rate, 1.0);
    }

    #[test]
    fn one_abort_in_ten() {
        let results: Vec<_> = (0..10)
            .map(|i| {
                let state = if i == 3 {
                    MissionState::Aborted(crate::mission::AbortReason::Timeout)
                } else {
                    MissionState::Done
                };
                trial(i, state, vec![spray(Vec3::zeros(), 0.01, i as u64)])
            })
            .collect();
        let rep = report(&results, 2.0).unwrap();
        assert!((rep.success_rate - 0.9).abs() < 1e-12);
        assert_eq!(rep.aborted, 1);
    }

    #[test]
    fn holding_beats_localizing_fixture() {
        let results: Vec<_> = (0..10)
            .map(|i| {
                let a = i as f64 * 0.7;
                let offset = Vec3::new(
                    0.06 * a.cos(),
                    0.06 * a.sin(),
                    0.02 * (i as f64 - 4.5) / 4.5,
                );
                trial(
                    i,
                    MissionState::Done,
                    vec![spray(offset, 0.003, 100 + i as u64)],
                )
            })
            .collect();
        let rep = report(&results, 2.0).unwrap();
        assert!(rep.within_trial_std.unwrap() < rep.between_trial_std.unwrap());
    }

    #[test]
    fn empty_results_rejected() {
        assert!(matches!(report(&[], 2.0), Err(EvalError::NoTrials)));
    }

    #[test]
    fn unassociated_spray_does_not_count() {
        let mut s = spray(Vec3::zeros(), 0.0, 1);
        s.nearest_handle = Some((0, 0.4));
        let t = trial(0, MissionState::Done, vec![s]);
        assert!(!t.success());
    }

    #[test]
    fn random_scenes_are_valid_and_deterministic() {
        let base = MissionConfig::default();
        for seed in 0..20 {
            let (a, ca) = random_scene(seed, &base);
            let (b, _) = random_scene(seed, &base);
            assert_eq!(a, b);
            a.validate().unwrap();
            ca.validate().unwrap();
            sample_start(&a, &ca, seed).unwrap();
        }
    }

    #[test]
    fn duration_sweep_matches_coverage_table() {
        let cfg = MissionConfig::default();
        let scene = crate::scene::default_scene();
        let rows = sweep("duration", &[1.0, 2.0], &scene, &cfg, 1, 0).unwrap();
        assert_eq!(rows[0].metrics[0].1, 0.68);
        assert_eq!(rows[1].metrics[1].1, 0.94);
        assert_eq!(rows[0].metrics[2].1, 0.0);
        assert_eq!(rows[1].metrics[2].1, 1.0);
        assert!(matches!(
            sweep("nozzle_color", &[1.0], &scene, &cfg, 1, 0),
            Err(EvalError::UnknownParam(_))
        ));
    }
}
