//! Browser bindings: the deposition curve, the coverage verdict for a spray
//! duration, and a full mission in the bundled hallway, flattened for a
//! top-down canvas.

use doorspray::eval::{random_scene, run_trial};
use doorspray::mission::MissionConfig;
use doorspray::scene::default_scene;
use doorspray::spray::{DepositionModel, TankState};
use doorspray::{Aabb, SceneModel};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

/// Deposition fraction at `samples` evenly spaced distances in
/// `[0, max_distance]`.
#[wasm_bindgen]
pub fn deposition_curve(max_distance: f64, samples: usize) -> Vec<f64> {
    let m = DepositionModel::default();
    let n = samples.max(2);
    (0..n)
        .map(|i| m.fraction(max_distance * i as f64 / (n - 1) as f64))
        .collect()
}

/// JSON with coverage right after spraying and a minute later, the
/// disinfection verdict and tank use for one spray of `duration` seconds.
#[wasm_bindgen]
pub fn coverage(duration: f64) -> String {
    let cfg = MissionConfig::default();
    let d = duration.max(0.0);
    let tank = TankState::full();
    json!({
        "duration": d,
        "coverage_0s": cfg.coverage.coverage_after(d, 0.0),
        "coverage_60s": cfg.coverage.coverage_after(d, 60.0),
        "disinfected": d > 0.0 && cfg.coverage.is_disinfected(d),
        "volume_ml": tank.volume_for(d),
        "sprays_per_tank": if d > 0.0 { Some(tank.sprays_remaining(d)) } else { None },
    })
    .to_string()
}

fn rect(b: &Aabb) -> Value {
    json!([b.min.x, b.min.y, b.max.x, b.max.y])
}

fn scene_json(scene: &SceneModel) -> Value {
    let doors: Vec<Value> = scene
        .doors
        .iter()
        .map(|d| {
            let a = d.center - d.lateral_axis() * (0.5 * d.width);
            let b = d.center + d.lateral_axis() * (0.5 * d.width);
            json!([a.x, a.y, b.x, b.y])
        })
        .collect();
    json!({
        "bounds": rect(&scene.bounds),
        "obstacles": scene.obstacles.iter().map(rect).collect::<Vec<_>>(),
        "doors": doors,
        "handles": scene.handles.iter().map(|h| json!([h.center.x, h.center.y])).collect::<Vec<_>>(),
    })
}

/// Runs one mission and returns the scene outline, the flown path (every
/// fifth tick), spray positions and the outcome as JSON. `hallway` 0 is the
/// bundled scene; any other value picks a random hallway.
#[wasm_bindgen]
pub fn simulate(seed: u32, hallway: u32) -> Result<String, JsError> {
    let (scene, cfg) = if hallway == 0 {
        (default_scene(), MissionConfig::default())
    } else {
        random_scene(u64::from(hallway), &MissionConfig::default())
    };
    let trial = run_trial(&scene, &cfg, 0, u64::from(seed))?;
    let o = &trial.outcome;
    let path: Vec<Value> = o
        .trajectory
        .iter()
        .step_by(5)
        .map(|s| json!([s.pose.position.x, s.pose.position.y, s.state.label()]))
        .collect();
    let sprays: Vec<Value> = o
        .sprays
        .iter()
        .map(|s| {
            json!({
                "nozzle": [s.mean_nozzle.x, s.mean_nozzle.y],
                "error": s.mean_error,
                "disinfected": s.disinfected,
            })
        })
        .collect();
    Ok(json!({
        "scene": scene_json(&scene),
        "goal": [cfg.final_goal.x, cfg.final_goal.y],
        "path": path,
        "sprays": sprays,
        "outcome": o.state.to_string(),
        "success": trial.success(),
        "sim_time": o.sim_time,
        "tank_ml": o.tank.remaining_ml,
    })
    .to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_hits_the_datum() {
        let c = deposition_curve(0.6, 61);
        assert_eq!(c.len(), 61);
        assert!((c[30] - 0.73).abs() < 1e-12);
    }

    #[test]
    fn two_second_spray_disinfects() {
        let v: Value = serde_json::from_str(&coverage(2.0)).unwrap();
        assert_eq!(v["disinfected"], true);
        assert_eq!(v["sprays_per_tank"], 97);
    }
}
