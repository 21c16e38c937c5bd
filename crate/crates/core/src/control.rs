//! Control forces, their per-position feasible bounds, and the intersection
//! volume-cost model that throttles signal-priority flexibility.

use serde::{Deserialize, Serialize};

use crate::corridor::PositionKind;
use crate::error::{Error, Result};

/// Bounded control triple, seconds. At most one component is nonzero,
/// determined by the position kind: holding at stations, signal adjustment
/// at intersections, speed adjustment on road segments.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlAction {
    pub holding: f64,
    pub signal: f64,
    pub speed: f64,
}

impl ControlAction {
    pub fn zero() -> Self {
        ControlAction::default()
    }

    pub fn component(&self, dim: usize) -> f64 {
        match dim {
            0 => self.holding,
            1 => self.signal,
            2 => self.speed,
            _ => panic!("control action has 3 components"),
        }
    }

    pub fn with_component(dim: usize, value: f64) -> Self {
        let mut a = ControlAction::zero();
        match dim {
            0 => a.holding = value,
            1 => a.signal = value,
            2 => a.speed = value,
            _ => panic!("control action has 3 components"),
        }
        a
    }
}

/// Inclusive feasible interval for the active component at one position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActionBounds {
    pub lo: f64,
    pub hi: f64,
}

impl ActionBounds {
    pub fn clamp(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn center(&self) -> f64 {
        0.5 * (self.lo + self.hi)
    }
}

/// Station and intersection caps; both default to 20 s. Early departure is
/// disabled, so the holding lower bound is exactly zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionCaps {
    pub holding_max: f64,
    pub signal_max: f64,
}

impl Default for ActionCaps {
    fn default() -> Self {
        ActionCaps {
            holding_max: 20.0,
            signal_max: 20.0,
        }
    }
}

impl ActionCaps {
    pub fn validate(&self) -> Result<()> {
        if self.holding_max < 0.0 || self.signal_max < 0.0 {
            return Err(Error::Config("action caps must be nonnegative".into()));
        }
        Ok(())
    }
}

/// Feasible cruise-speed window for one road segment.
///
/// The nominal speed is `distance / travel_time`. Driving at `v_max` saves
/// `travel_time - distance / v_max` seconds; dropping to `v_min` adds
/// `distance / v_min - travel_time` seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedEnvelope {
    pub v_min: f64,
    pub v_max: f64,
    pub travel_time: f64,
    pub distance: f64,
}

impl SpeedEnvelope {
    pub fn validate(&self) -> Result<()> {
        if !(self.travel_time > 0.0) || !(self.distance > 0.0) {
            return Err(Error::Config(
                "speed envelope needs positive travel_time and distance".into(),
            ));
        }
        let nominal = self.distance / self.travel_time;
        if !(self.v_min > 0.0 && self.v_min <= nominal && nominal <= self.v_max) {
            return Err(Error::Config(format!(
                "speed envelope needs 0 < v_min <= nominal <= v_max, got v_min {} nominal {:.4} v_max {}",
                self.v_min, nominal, self.v_max
            )));
        }
        Ok(())
    }

    /// Maximal time saving available by driving at `v_max` (nonnegative).
    pub fn max_time_saving(&self) -> f64 {
        self.travel_time - self.distance / self.v_max
    }

    /// Maximal extra time available by driving at `v_min` (nonnegative).
    pub fn max_time_relax(&self) -> f64 {
        self.distance / self.v_min - self.travel_time
    }
}

/// Feasible bounds for the position's active control component.
pub fn bounds_for_position(
    kind: PositionKind,
    envelope: Option<&SpeedEnvelope>,
    caps: &ActionCaps,
) -> Result<ActionBounds> {
    caps.validate()?;
    match kind {
        PositionKind::Station => Ok(ActionBounds {
            lo: 0.0,
            hi: caps.holding_max,
        }),
        PositionKind::SignalizedIntersection => Ok(ActionBounds {
            lo: -caps.signal_max,
            hi: caps.signal_max,
        }),
        PositionKind::RoadSegment => {
            let env = envelope.ok_or_else(|| {
                Error::Config("road segment bounds need a speed envelope".into())
            })?;
            env.validate()?;
            Ok(ActionBounds {
                lo: -env.max_time_saving(),
                hi: env.max_time_relax(),
            })
        }
    }
}

/// Clips the in-kind component into its bounds and zeroes the others.
pub fn clamp_action(raw: &ControlAction, kind: PositionKind, bounds: &ActionBounds) -> ControlAction {
    match kind {
        PositionKind::Station => ControlAction {
            holding: bounds.clamp(raw.holding),
            signal: 0.0,
            speed: 0.0,
        },
        PositionKind::SignalizedIntersection => ControlAction {
            holding: 0.0,
            signal: bounds.clamp(raw.signal),
            speed: 0.0,
        },
        PositionKind::RoadSegment => ControlAction {
            holding: 0.0,
            signal: 0.0,
            speed: bounds.clamp(raw.speed),
        },
    }
}

/// Combined control force applied to the block recursion.
pub fn total_control_force(action: &ControlAction) -> f64 {
    action.holding + action.signal + action.speed
}

/// Per-phase volume-to-capacity ratios of one signalized intersection.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionVolumeProfile {
    /// V/C ratio per signal phase.
    pub phase_ratios: Vec<f64>,
    /// Index of the major street movement's phase.
    pub major_phase: usize,
}

/// Volume cost of a block: for each intersection, the sum of all phase V/C
/// ratios divided by the major movement's ratio, summed over intersections.
/// A block without intersections costs zero.
pub fn volume_cost(profiles: &[IntersectionVolumeProfile]) -> Result<f64> {
    let mut q = 0.0;
    for (i, p) in profiles.iter().enumerate() {
        if p.phase_ratios.is_empty() {
            return Err(Error::Config(format!("intersection {i}: no signal phases")));
        }
        if p.major_phase >= p.phase_ratios.len() {
            return Err(Error::Config(format!(
                "intersection {i}: major phase {} out of range",
                p.major_phase
            )));
        }
        if p.phase_ratios.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::Config(format!(
                "intersection {i}: phase ratios must be positive"
            )));
        }
        let major = p.phase_ratios[p.major_phase];
        let sum: f64 = p.phase_ratios.iter().sum();
        q += sum / major;
    }
    Ok(q)
}
