//! Fleet simulation: advances the actual bus motion position-by-position,
//! applies a controller at every arrival, handles loop wraparound with
//! terminal re-anchoring, and hosts the classical baseline controllers.
//!
//! Buses are simulated in index order. A bus only ever depends on
//! lower-indexed buses (its downstream neighbours), so each trajectory can
//! be completed before the next bus starts; there is no event queue and a
//! run is fully deterministic for a given seed.

use serde::{Deserialize, Serialize};

use crate::control::{
    bounds_for_position, clamp_action, total_control_force, ActionBounds, ActionCaps,
    ControlAction, SpeedEnvelope,
};
use crate::corridor::{build_schedule, CorridorConfig, PositionKind};
use crate::disturbance::{
    effective_demand_rate, sample_demand_perturbation, sample_travel_delay, NoiseStream,
    TruncatedNormalSpec, UniformSpec,
};
use crate::error::{Error, Result};
use crate::observation::{fuse_state, running_cost, reward, CostCoefficients, FusedObservation};

/// Minimum separation imposed when a follower would otherwise overtake its
/// leader, seconds.
pub const MIN_SEPARATION: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControllerKind {
    #[serde(rename = "none")]
    NoControl,
    #[serde(rename = "schedule")]
    ScheduleBased,
    #[serde(rename = "headway")]
    HeadwayBased,
    #[serde(rename = "learned")]
    LearnedPolicy,
}

impl ControllerKind {
    pub fn label(&self) -> &'static str {
        match self {
            ControllerKind::NoControl => "none",
            ControllerKind::ScheduleBased => "schedule",
            ControllerKind::HeadwayBased => "headway",
            ControllerKind::LearnedPolicy => "learned",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "none" => Some(ControllerKind::NoControl),
            "schedule" => Some(ControllerKind::ScheduleBased),
            "headway" => Some(ControllerKind::HeadwayBased),
            "learned" => Some(ControllerKind::LearnedPolicy),
            _ => None,
        }
    }
}

/// Which control strategies may emit a nonzero force. Disabled strategies
/// are hard-zeroed at action emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StrategyMask {
    pub holding: bool,
    pub signal: bool,
    pub speed: bool,
}

impl StrategyMask {
    pub fn all() -> Self {
        StrategyMask {
            holding: true,
            signal: true,
            speed: true,
        }
    }

    pub fn only(dim: usize) -> Self {
        StrategyMask {
            holding: dim == 0,
            signal: dim == 1,
            speed: dim == 2,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.holding || self.signal || self.speed) {
            return Err(Error::Domain("strategy mask enables no control force".into()));
        }
        Ok(())
    }

    pub fn allows(&self, dim: usize) -> bool {
        match dim {
            0 => self.holding,
            1 => self.signal,
            2 => self.speed,
            _ => false,
        }
    }

    pub fn apply(&self, action: &ControlAction) -> ControlAction {
        ControlAction {
            holding: if self.holding { action.holding } else { 0.0 },
            signal: if self.signal { action.signal } else { 0.0 },
            speed: if self.speed { action.speed } else { 0.0 },
        }
    }

    pub fn parse(text: &str) -> Result<Self> {
        match text {
            "all" => Ok(StrategyMask::all()),
            "holding" => Ok(StrategyMask::only(0)),
            "signal" => Ok(StrategyMask::only(1)),
            "speed" => Ok(StrategyMask::only(2)),
            other => Err(Error::Domain(format!(
                "unknown strategy mask '{other}' (expected all|holding|signal|speed)"
            ))),
        }
    }

    pub fn label(&self) -> String {
        if self.holding && self.signal && self.speed {
            return "all".into();
        }
        let mut parts = Vec::new();
        if self.holding {
            parts.push("holding");
        }
        if self.signal {
            parts.push("signal");
        }
        if self.speed {
            parts.push("speed");
        }
        parts.join("+")
    }
}

/// Everything a simulation run needs besides the fleet geometry: the
/// corridor, disturbance distributions, reward coefficients, control caps,
/// the cruise-speed window, and per-block volume costs.
#[derive(Debug, Clone)]
pub struct EnvConfig {
    pub corridor: CorridorConfig,
    pub delay: TruncatedNormalSpec,
    pub demand_noise: UniformSpec,
    pub coeffs: CostCoefficients,
    pub caps: ActionCaps,
    pub speed_min: f64,
    pub speed_max: f64,
    /// Volume cost per station block.
    pub block_volume_cost: Vec<f64>,
    /// Downstream buses fused into the observation.
    pub downstream_count: usize,
    pub mask: StrategyMask,
    /// Gain of the headway-based baseline controller.
    pub headway_gain: f64,
    bounds: Vec<ActionBounds>,
}

impl EnvConfig {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        corridor: CorridorConfig,
        delay: TruncatedNormalSpec,
        demand_noise: UniformSpec,
        coeffs: CostCoefficients,
        caps: ActionCaps,
        speed_min: f64,
        speed_max: f64,
        block_volume_cost: Vec<f64>,
        downstream_count: usize,
        mask: StrategyMask,
        headway_gain: f64,
    ) -> Result<Self> {
        corridor.validate()?;
        delay.validate()?;
        demand_noise.validate()?;
        coeffs.validate()?;
        caps.validate()?;
        mask.validate()?;
        if downstream_count == 0 {
            return Err(Error::Config("downstream_count must be at least 1".into()));
        }
        if block_volume_cost.len() != corridor.n_stations {
            return Err(Error::Config(format!(
                "volume cost table has {} entries for {} stations",
                block_volume_cost.len(),
                corridor.n_stations
            )));
        }
        if let Some(q) = block_volume_cost.iter().find(|q| !(**q >= 0.0)) {
            return Err(Error::Config(format!("negative volume cost {q}")));
        }
        if !(headway_gain >= 0.0) {
            return Err(Error::Config("headway_gain must be nonnegative".into()));
        }
        let mut bounds = Vec::with_capacity(corridor.loop_len());
        for p in 0..corridor.loop_len() {
            let position = corridor.position(p);
            let envelope = match position.kind {
                PositionKind::RoadSegment => Some(SpeedEnvelope {
                    v_min: speed_min,
                    v_max: speed_max,
                    travel_time: position.profile.travel_time,
                    distance: position.profile.distance_to_next,
                }),
                _ => None,
            };
            bounds.push(bounds_for_position(position.kind, envelope.as_ref(), &caps)?);
        }
        Ok(EnvConfig {
            corridor,
            delay,
            demand_noise,
            coeffs,
            caps,
            speed_min,
            speed_max,
            block_volume_cost,
            downstream_count,
            mask,
            headway_gain,
            bounds,
        })
    }

    pub fn bounds(&self, pos_in_loop: usize) -> ActionBounds {
        self.bounds[pos_in_loop]
    }

    /// Volume cost of the block containing the position.
    pub fn volume_cost_at(&self, pos_in_loop: usize) -> f64 {
        self.block_volume_cost[self.corridor.block_of(pos_in_loop)]
    }
}

/// Per-bus dynamic record while a trajectory advances.
#[derive(Debug, Clone, Copy)]
pub struct BusState {
    pub index: usize,
    /// Global position index (loops unrolled).
    pub position: usize,
    pub arrival: f64,
    pub loops_done: usize,
    pub active: bool,
    /// Accumulated schedule shift from terminal re-anchoring.
    pub schedule_offset: f64,
}

/// One logged transition: the arrival observation, the applied action, the
/// realized disturbances, and the reward.
#[derive(Debug, Clone, Copy)]
pub struct StepOutcome {
    pub bus: usize,
    pub loop_idx: usize,
    pub pos_in_loop: usize,
    pub kind: PositionKind,
    pub scheduled: f64,
    pub actual: f64,
    pub schedule_dev: f64,
    pub headway_dev: f64,
    pub obs: FusedObservation,
    pub action: ControlAction,
    pub delay: f64,
    pub demand_shift: f64,
    pub reward: f64,
}

/// Everything a controller may look at when choosing an action.
#[derive(Debug, Clone, Copy)]
pub struct StepContext {
    pub bus: usize,
    pub loop_idx: usize,
    pub pos_in_loop: usize,
    pub kind: PositionKind,
    pub bounds: ActionBounds,
    pub obs: FusedObservation,
    pub volume_cost: f64,
    pub headway: f64,
    pub planned_headway: f64,
}

/// A controller: maps arrival contexts to raw actions. The engine masks and
/// clamps whatever comes back, so emitted logs always satisfy the bounds.
pub trait ActionSource {
    fn action(&mut self, ctx: &StepContext) -> Result<ControlAction>;
}

/// Classical baseline rules. Holding-only controllers: hold a bus that is
/// early (schedule-based) or too close to its leader (headway-based).
pub fn baseline_action(
    controller: ControllerKind,
    obs: &FusedObservation,
    kind: PositionKind,
    bounds: &ActionBounds,
    headway: f64,
    planned_headway: f64,
    headway_gain: f64,
) -> ControlAction {
    if kind != PositionKind::Station {
        return ControlAction::zero();
    }
    match controller {
        ControllerKind::NoControl => ControlAction::zero(),
        ControllerKind::ScheduleBased => ControlAction {
            holding: bounds.clamp((-obs.schedule_dev).max(0.0)),
            signal: 0.0,
            speed: 0.0,
        },
        ControllerKind::HeadwayBased => ControlAction {
            holding: bounds.clamp((headway_gain * (planned_headway - headway)).max(0.0)),
            signal: 0.0,
            speed: 0.0,
        },
        ControllerKind::LearnedPolicy => {
            unreachable!("baseline_action is only defined for baseline controllers")
        }
    }
}

/// `ActionSource` wrapper around the baseline rules.
pub struct BaselineSource {
    kind: ControllerKind,
    headway_gain: f64,
}

impl BaselineSource {
    pub fn new(kind: ControllerKind, headway_gain: f64) -> Result<Self> {
        if kind == ControllerKind::LearnedPolicy {
            return Err(Error::Domain(
                "baseline controller cannot be the learned policy".into(),
            ));
        }
        Ok(BaselineSource { kind, headway_gain })
    }
}

impl ActionSource for BaselineSource {
    fn action(&mut self, ctx: &StepContext) -> Result<ControlAction> {
        Ok(baseline_action(
            self.kind,
            &ctx.obs,
            ctx.kind,
            &ctx.bounds,
            ctx.headway,
            ctx.planned_headway,
            self.headway_gain,
        ))
    }
}

/// Fleet geometry and noise coordinates of one simulated episode.
#[derive(Debug, Clone, Copy)]
pub struct EpisodeParams {
    pub fleet_size: usize,
    pub loops: usize,
    pub seed: u64,
    pub worker: u64,
    pub episode: u64,
}

#[derive(Debug, Clone)]
pub struct EpisodeLog {
    /// One outcome row per bus per visited position, bus-major.
    pub outcomes: Vec<Vec<StepOutcome>>,
    pub loop_len: usize,
    pub loops: usize,
}

impl EpisodeLog {
    pub fn steps_per_bus(&self) -> usize {
        self.loops * self.loop_len
    }

    pub fn iter_rows(&self) -> impl Iterator<Item = &StepOutcome> {
        self.outcomes.iter().flatten()
    }
}

/// Runs one episode: every bus advances through `loops` loops under the
/// given controller. The log is complete and replayable from the seeds.
pub fn run_episode(
    env: &EnvConfig,
    source: &mut dyn ActionSource,
    params: &EpisodeParams,
) -> Result<EpisodeLog> {
    if params.fleet_size == 0 || params.loops == 0 {
        return Err(Error::Config("episode needs at least one bus and one loop".into()));
    }
    let corridor = &env.corridor;
    let loop_len = corridor.loop_len();
    let n_steps = params.loops * loop_len;
    let schedule = build_schedule(&corridor.with_fleet(params.fleet_size), params.loops)?;
    let terminal = corridor.terminal_pos_in_loop();
    let planned_headway = corridor.planned_headway;
    let k = env.downstream_count;

    let mut arrivals = vec![vec![0.0f64; n_steps + 1]; params.fleet_size];
    let mut outcomes = Vec::with_capacity(params.fleet_size);

    for bus in 0..params.fleet_size {
        let mut offset = 0.0;
        let mut arrival = schedule.time(bus, 0);
        arrivals[bus][0] = arrival;
        let mut rows = Vec::with_capacity(n_steps);

        for p in 0..n_steps {
            let pos_in_loop = p % loop_len;
            let loop_idx = p / loop_len;
            let position = *corridor.position(pos_in_loop);
            let kind = position.kind;
            let q = env.volume_cost_at(pos_in_loop);
            let stream = NoiseStream {
                seed: params.seed,
                worker: params.worker,
                episode: params.episode,
                bus: bus as u64,
                position: p as u64,
            };

            // Deviation against the re-anchored schedule; arriving at the
            // terminal station resets it for the next loop.
            let mut schedule_dev = arrival - (schedule.time(bus, p) + offset);
            if kind == PositionKind::Station && pos_in_loop == terminal {
                offset += schedule_dev;
                schedule_dev = 0.0;
            }
            let scheduled = schedule.time(bus, p) + offset;

            let (demand_shift, beta_eff) = if kind == PositionKind::Station {
                let shift = sample_demand_perturbation(&env.demand_noise, &stream);
                (shift, effective_demand_rate(position.profile.demand_rate, shift))
            } else {
                (0.0, 0.0)
            };

            // Downstream headway deviations, nearest first; buses that do
            // not exist are replaced by dummies riding the schedule grid.
            let headway = if bus >= 1 {
                arrival - arrivals[bus - 1][p]
            } else {
                schedule_dev + planned_headway
            };
            let mut downstream_devs = Vec::with_capacity(k);
            for m in 1..=k {
                if bus >= m {
                    downstream_devs.push(
                        crate::corridor::headway_deviation(arrival, arrivals[bus - m][p], m, planned_headway)?,
                    );
                } else {
                    downstream_devs.push(schedule_dev);
                }
            }
            let obs = fuse_state(schedule_dev, &downstream_devs, beta_eff, headway)?;

            let bounds = env.bounds(pos_in_loop);
            let ctx = StepContext {
                bus,
                loop_idx,
                pos_in_loop,
                kind,
                bounds,
                obs,
                volume_cost: q,
                headway,
                planned_headway,
            };
            let raw = source.action(&ctx)?;
            let action = clamp_action(&env.mask.apply(&raw), kind, &bounds);

            let step_reward = reward(running_cost(&obs, &action, q, &env.coeffs)?);

            let delay = if kind == PositionKind::RoadSegment {
                sample_travel_delay(&env.delay, &stream)
            } else {
                0.0
            };
            let dwell = if kind == PositionKind::Station {
                beta_eff * headway
            } else {
                0.0
            };
            let mut next_arrival = arrival
                + dwell
                + position.profile.travel_time
                + total_control_force(&action)
                + delay;
            if bus >= 1 {
                let leader_next = arrivals[bus - 1][p + 1];
                if next_arrival <= leader_next {
                    next_arrival = leader_next + MIN_SEPARATION;
                }
                if next_arrival - leader_next <= 0.0 {
                    return Err(Error::Internal(format!(
                        "nonpositive headway for bus {bus} at position {}",
                        p + 1
                    )));
                }
            }

            rows.push(StepOutcome {
                bus,
                loop_idx,
                pos_in_loop,
                kind,
                scheduled,
                actual: arrival,
                schedule_dev,
                headway_dev: headway - planned_headway,
                obs,
                action,
                delay,
                demand_shift,
                reward: step_reward,
            });

            arrivals[bus][p + 1] = next_arrival;
            arrival = next_arrival;
        }
        outcomes.push(rows);
    }

    Ok(EpisodeLog {
        outcomes,
        loop_len,
        loops: params.loops,
    })
}
