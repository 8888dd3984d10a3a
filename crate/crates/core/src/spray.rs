//! Spray surrogate: deposition against distance, film coverage against
//! spray duration and time, the 90%-for-a-minute criterion, and the tank.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One US fluid ounce in milliliters.
pub const ML_PER_US_FL_OZ: f64 = 29.573_529_562_5;
/// Measured nozzle flow rate (US fl oz per minute).
pub const FLOW_RATE_OZ_PER_MIN: f64 = 2.6;
pub const TANK_CAPACITY_ML: f64 = 250.0;

/// Calibration datum: mass fraction landing on the target at 0.30 m.
pub const DEPOSITION_DATUM: (f64, f64) = (0.30, 0.73);

#[derive(Debug, Error, PartialEq)]
pub enum SprayError {
    #[error("invalid spray model: {0}")]
    InvalidModel(String),
    #[error("tank holds {remaining:.3} mL but the spray needs {requested:.3} mL")]
    EmptyTank { requested: f64, remaining: f64 },
    #[error("spray duration must be non-negative, got {0}")]
    NegativeDuration(f64),
}

/// Piecewise-linear deposition fraction over distance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DepositionModel {
    /// `(distance m, mass fraction)`, sorted by distance.
    pub anchors: Vec<(f64, f64)>,
    /// Distance at which the fraction reaches zero.
    pub cutoff: f64,
}

impl Default for DepositionModel {
    fn default() -> Self {
        Self {
            anchors: vec![(0.0, 0.90), DEPOSITION_DATUM],
            cutoff: 0.60,
        }
    }
}

impl DepositionModel {
    pub fn validate(&self) -> Result<(), SprayError> {
        let bad = |m: &str| Err(SprayError::InvalidModel(m.to_string()));
        if self.anchors.is_empty() {
            return bad("deposition needs at least one anchor");
        }
        for w in self.anchors.windows(2) {
            if w[1].0 <= w[0].0 {
                return bad("deposition anchors must have increasing distance");
            }
            if w[1].1 > w[0].1 {
                return bad("deposition fraction must not increase with distance");
            }
        }
        if self
            .anchors
            .iter()
            .any(|(d, f)| *d < 0.0 || !(0.0..=1.0).contains(f))
        {
            return bad("deposition anchors need distance >= 0 and fraction in [0, 1]");
        }
        if !self.anchors.contains(&DEPOSITION_DATUM) {
            return bad("deposition anchors must include (0.30, 0.73)");
        }
        if self.cutoff <= self.anchors.last().map(|a| a.0).unwrap_or(0.0) {
            return bad("deposition cutoff must lie beyond the last anchor");
        }
        Ok(())
    }

    pub fn fraction(&self, distance: f64) -> f64 {
        let first = self.anchors[0];
        let last = *self.anchors.last().expect("validated model has anchors");
        if distance <= first.0 {
            return first.1;
        }
        if distance >= self.cutoff {
            return 0.0;
        }
        if distance >= last.0 {
            return last.1 * (self.cutoff - distance) / (self.cutoff - last.0);
        }
        let i = self.anchors.partition_point(|a| a.0 <= distance);
        let (a, b) = (self.anchors[i - 1], self.anchors[i]);
        if distance == a.0 {
            return a.1;
        }
        a.1 + (b.1 - a.1) * (distance - a.0) / (b.0 - a.0)
    }
}

pub fn deposition_fraction(model: &DepositionModel, distance: f64) -> f64 {
    model.fraction(distance)
}

/// Measured coverage table: `(spray duration s, coverage at 0 s, coverage at 60 s)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoverageModel {
    pub table: Vec<(f64, f64, f64)>,
    /// Coverage the film must keep...
    pub required_fraction: f64,
    /// ...for this long after spraying (s).
    pub required_duration: f64,
}

impl Default for CoverageModel {
    fn default() -> Self {
        Self {
            table: vec![(1.0, 0.68, 0.64), (2.0, 0.97, 0.94), (3.0, 0.98, 0.97)],
            required_fraction: 0.90,
            required_duration: 60.0,
        }
    }
}

/// Time at which the table's second coverage column is measured.
const MEASURE_TIME: f64 = 60.0;

impl CoverageModel {
    pub fn validate(&self) -> Result<(), SprayError> {
        let bad = |m: &str| Err(SprayError::InvalidModel(m.to_string()));
        if self.table.is_empty() {
            return bad("coverage table is empty");
        }
        if self.table.windows(2).any(|w| w[1].0 <= w[0].0) {
            return bad("coverage rows must have increasing duration");
        }
        for &(d, a0, a60) in &self.table {
            if d <= 0.0 || !(0.0..=1.0).contains(&a0) || !(0.0..=1.0).contains(&a60) {
                return bad("coverage rows need duration > 0 and fractions in [0, 1]");
            }
            if a60 > a0 {
                return bad("coverage must not grow after spraying");
            }
        }
        if !(0.0..=1.0).contains(&self.required_fraction) || self.required_duration < 0.0 {
            return bad("persistence requirement out of range");
        }
        Ok(())
    }

    /// Initial and 60 s coverage for a spray duration, interpolated between
    /// rows, scaled from zero below the first row and clamped above the
    /// last.
    pub fn endpoints(&self, duration: f64) -> (f64, f64) {
        let first = self.table[0];
        let last = *self.table.last().expect("validated table is nonempty");
        if duration == first.0 {
            return (first.1, first.2);
        }
        if duration < first.0 {
            let s = duration.max(0.0) / first.0;
            return (first.1 * s, first.2 * s);
        }
        if duration >= last.0 {
            return (last.1, last.2);
        }
        let i = self.table.partition_point(|r| r.0 <= duration);
        let (a, b) = (self.table[i - 1], self.table[i]);
        if duration == a.0 {
            return (a.1, a.2);
        }
        let s = (duration - a.0) / (b.0 - a.0);
        (a.1 + (b.1 - a.1) * s, a.2 + (b.2 - a.2) * s)
    }

    pub fn coverage_after(&self, duration: f64, elapsed: f64) -> f64 {
        let (initial, later) = self.endpoints(duration);
        if elapsed == 0.0 {
            return initial;
        }
        if elapsed == MEASURE_TIME {
            return later;
        }
        (initial + (later - initial) * elapsed / MEASURE_TIME).max(0.0)
    }

    /// Coverage stays at or above the requirement over the whole window.
    /// Coverage is linear and non-increasing in time, so checking the end
    /// of the window is sufficient.
    pub fn is_disinfected(&self, duration: f64) -> bool {
        let at_start = self.coverage_after(duration, 0.0);
        let at_end = self.coverage_after(duration, self.required_duration);
        at_start.min(at_end) >= self.required_fraction
    }

    /// Shortest spray within the table range meeting the criterion.
    pub fn minimum_adequate_duration(&self) -> Option<f64> {
        let ok = |d: f64| self.is_disinfected(d);
        let first = self.table[0].0;
        if ok(first) {
            return Some(first);
        }
        let last = self.table.last()?.0;
        if !ok(last) {
            return None;
        }
        let (mut lo, mut hi) = (first, last);
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if ok(mid) {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        Some(hi)
    }
}

pub fn coverage_after(model: &CoverageModel, duration: f64, elapsed: f64) -> f64 {
    model.coverage_after(duration, elapsed)
}

pub fn is_disinfected(model: &CoverageModel, duration: f64) -> bool {
    model.is_disinfected(duration)
}

/// Disinfectant tank with value semantics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TankState {
    pub capacity_ml: f64,
    pub remaining_ml: f64,
    pub flow_ml_per_min: f64,
}

impl Default for TankState {
    fn default() -> Self {
        Self::full()
    }
}

impl TankState {
    pub fn full() -> Self {
        Self {
            capacity_ml: TANK_CAPACITY_ML,
            remaining_ml: TANK_CAPACITY_ML,
            flow_ml_per_min: FLOW_RATE_OZ_PER_MIN * ML_PER_US_FL_OZ,
        }
    }

    pub fn volume_for(&self, duration: f64) -> f64 {
        self.flow_ml_per_min * duration / 60.0
    }

    /// Whole sprays of `duration` the remaining volume still supports.
    pub fn sprays_remaining(&self, duration: f64) -> u32 {
        (self.remaining_ml / self.volume_for(duration)).floor() as u32
    }

    pub fn consume(&self, duration: f64) -> Result<TankState, SprayError> {
        if duration < 0.0 {
            return Err(SprayError::NegativeDuration(duration));
        }
        let requested = self.volume_for(duration);
        if requested > self.remaining_ml {
            return Err(SprayError::EmptyTank {
                requested,
                remaining: self.remaining_ml,
            });
        }
        Ok(TankState {
            remaining_ml: self.remaining_ml - requested,
            ..*self
        })
    }
}

pub fn consume(tank: &TankState, duration: f64) -> Result<TankState, SprayError> {
    tank.consume(duration)
}
