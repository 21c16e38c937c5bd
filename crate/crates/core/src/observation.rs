//! Fused agent state over downstream buses and the exponential-quadratic
//! reward with a volume-weighted signal penalty.

use crate::control::ControlAction;
use crate::error::{Error, Result};

/// Agent state at one position: own schedule deviation, the weighted
/// headway deviation against downstream buses, and the realized dwell load.
/// All values in seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusedObservation {
    pub schedule_dev: f64,
    pub weighted_headway_dev: f64,
    pub dwell_load: f64,
}

/// Quadratic cost coefficients; all strictly positive so the cost form is
/// positive definite. `signal` is additionally scaled by the block's volume
/// cost at application time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostCoefficients {
    pub schedule: f64,
    pub headway: f64,
    pub holding: f64,
    pub signal: f64,
    pub speed: f64,
}

impl CostCoefficients {
    pub fn validate(&self) -> Result<()> {
        let all = [
            ("schedule", self.schedule),
            ("headway", self.headway),
            ("holding", self.holding),
            ("signal", self.signal),
            ("speed", self.speed),
        ];
        for (name, v) in all {
            if !(v > 0.0) {
                return Err(Error::Config(format!(
                    "cost coefficient {name} must be strictly positive, got {v}"
                )));
            }
        }
        Ok(())
    }
}

/// Downstream fusion weights: 1/2, 1/4, ..., with the last bus taking the
/// same weight as the second-to-last so the weights sum to exactly one.
pub fn downstream_weights(k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::Domain("downstream weight count must be >= 1".into()));
    }
    let mut weights = Vec::with_capacity(k);
    for m in 1..=k {
        let exponent = if m == k { k - 1 } else { m };
        weights.push(0.5f64.powi(exponent.max(0) as i32));
    }
    Ok(weights)
}

/// Fuses the subject's deviation with dummy-substituted downstream headway
/// deviations (nearest first) and the realized dwell load.
pub fn fuse_state(
    schedule_dev: f64,
    downstream_headway_devs: &[f64],
    effective_demand_rate: f64,
    headway: f64,
) -> Result<FusedObservation> {
    let weights = downstream_weights(downstream_headway_devs.len())?;
    let weighted: f64 = weights
        .iter()
        .zip(downstream_headway_devs)
        .map(|(w, d)| w * d)
        .sum();
    Ok(FusedObservation {
        schedule_dev,
        weighted_headway_dev: weighted,
        dwell_load: effective_demand_rate * headway,
    })
}

/// Quadratic running cost of deviations and control effort. The signal term
/// is scaled linearly by the block volume cost `q`.
pub fn running_cost(
    obs: &FusedObservation,
    action: &ControlAction,
    volume_cost: f64,
    coeffs: &CostCoefficients,
) -> Result<f64> {
    coeffs.validate()?;
    if volume_cost < 0.0 {
        return Err(Error::Config(format!(
            "volume cost must be nonnegative, got {volume_cost}"
        )));
    }
    Ok(coeffs.schedule * obs.schedule_dev * obs.schedule_dev
        + coeffs.headway * obs.weighted_headway_dev * obs.weighted_headway_dev
        + coeffs.holding * action.holding * action.holding
        + coeffs.signal * volume_cost * action.signal * action.signal
        + coeffs.speed * action.speed * action.speed)
}

/// Reward in (0, 1]: exp of the negated running cost.
pub fn reward(cost: f64) -> f64 {
    (-cost).exp()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coeffs() -> CostCoefficients {
        CostCoefficients {
            schedule: 0.01,
            headway: 0.01,
            holding: 0.01,
            signal: 0.01,
            speed: 0.01,
        }
    }

    #[test]
    fn weights_match_hand_values() {
        assert_eq!(downstream_weights(1).unwrap(), vec![1.0]);
        assert_eq!(downstream_weights(2).unwrap(), vec![0.5, 0.5]);
        assert_eq!(
            downstream_weights(5).unwrap(),
            vec![0.5, 0.25, 0.125, 0.0625, 0.0625]
        );
        assert!(downstream_weights(0).is_err());
    }

    #[test]
    fn weights_sum_to_one_and_never_increase() {
        for k in 1..=10 {
            let w = downstream_weights(k).unwrap();
            // dyadic rationals sum exactly
            assert_eq!(w.iter().sum::<f64>(), 1.0, "k = {k}");
            for pair in w.windows(2) {
                assert!(pair[0] >= pair[1]);
            }
        }
    }

    #[test]
    fn fuse_state_equilibrium() {
        let obs = fuse_state(0.0, &[0.0; 5], 0.08, 300.0).unwrap();
        assert_eq!(obs.schedule_dev, 0.0);
        assert_eq!(obs.weighted_headway_dev, 0.0);
        assert_eq!(obs.dwell_load, 24.0);
    }

    #[test]
    fn fuse_state_two_downstream() {
        let obs = fuse_state(3.0, &[10.0, -4.0], 0.0, 300.0).unwrap();
        assert_eq!(obs.weighted_headway_dev, 3.0);
    }

    #[test]
    fn fuse_state_against_dummies_only() {
        // a subject on schedule measured against dummy buses has zero fusion
        let obs = fuse_state(0.0, &[0.0, 0.0, 0.0], 0.05, 300.0).unwrap();
        assert_eq!(obs.weighted_headway_dev, 0.0);
    }

    #[test]
    fn running_cost_hand_values() {
        let zero = fuse_state(0.0, &[0.0], 0.0, 300.0).unwrap();
        assert_eq!(
            running_cost(&zero, &ControlAction::zero(), 1.0, &coeffs()).unwrap(),
            0.0
        );

        let obs = FusedObservation {
            schedule_dev: 10.0,
            weighted_headway_dev: 5.0,
            dwell_load: 0.0,
        };
        let action = ControlAction {
            holding: 2.0,
            signal: 3.0,
            speed: 0.0,
        };
        let c = running_cost(&obs, &action, 1.0, &coeffs()).unwrap();
        assert!((c - 1.38).abs() < 1e-12);

        let c80 = running_cost(&obs, &action, 80.0, &coeffs()).unwrap();
        assert!((c80 - 8.49).abs() < 1e-12);
    }

    #[test]
    fn running_cost_rejects_bad_inputs() {
        let obs = FusedObservation {
            schedule_dev: 0.0,
            weighted_headway_dev: 0.0,
            dwell_load: 0.0,
        };
        let mut bad = coeffs();
        bad.headway = -0.01;
        assert!(running_cost(&obs, &ControlAction::zero(), 1.0, &bad).is_err());
        assert!(running_cost(&obs, &ControlAction::zero(), -1.0, &coeffs()).is_err());
    }

    #[test]
    fn reward_range_and_hand_values() {
        assert_eq!(reward(0.0), 1.0);
        assert!((reward(std::f64::consts::LN_2) - 0.5).abs() < 1e-12);
        assert!((reward(1.38) - 0.2516).abs() < 1e-4);
        let mut prev = reward(0.0);
        for i in 1..200 {
            let r = reward(i as f64 * 0.05);
            assert!(r > 0.0 && r <= 1.0);
            assert!(r < prev, "reward must strictly decrease in cost");
            prev = r;
        }
    }

    #[test]
    fn signal_penalty_is_monotone_in_volume_cost() {
        let obs = FusedObservation {
            schedule_dev: 4.0,
            weighted_headway_dev: -2.0,
            dwell_load: 12.0,
        };
        let action = ControlAction {
            holding: 0.0,
            signal: 3.0,
            speed: 0.0,
        };
        let mut prev = f64::INFINITY;
        for q in [0.0, 1.0, 2.0, 5.0, 10.0, 20.0, 50.0, 80.0, 100.0] {
            let r = reward(running_cost(&obs, &action, q, &coeffs()).unwrap());
            assert!(r < prev, "reward must strictly decrease as q grows");
            prev = r;
        }
    }

    #[test]
    fn cost_is_positive_definite() {
        let cases = [
            (1e-6, 0.0, 0.0, 0.0, 0.0),
            (0.0, -1e-6, 0.0, 0.0, 0.0),
            (0.0, 0.0, 1e-6, 0.0, 0.0),
            (0.0, 0.0, 0.0, 1e-6, 0.0),
            (0.0, 0.0, 0.0, 0.0, -1e-6),
        ];
        for (e, d, ub, uk, uc) in cases {
            let obs = FusedObservation {
                schedule_dev: e,
                weighted_headway_dev: d,
                dwell_load: 7.0,
            };
            let action = ControlAction {
                holding: ub,
                signal: uk,
                speed: uc,
            };
            let c = running_cost(&obs, &action, 1.0, &coeffs()).unwrap();
            assert!(c > 0.0);
        }
        // equilibrium: zero state, zero action, reward exactly one
        let eq = FusedObservation {
            schedule_dev: 0.0,
            weighted_headway_dev: 0.0,
            dwell_load: 0.08 * 300.0,
        };
        let c = running_cost(&eq, &ControlAction::zero(), 1.0, &coeffs()).unwrap();
        assert_eq!(reward(c), 1.0);
    }
}
