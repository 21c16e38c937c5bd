//! Actor-critic function approximators with stochastic bounded actions.
//!
//! The actor maps the encoded observation to a tanh-squashed mean per action
//! dimension plus a state-independent learnable log-stddev; samples are drawn
//! in raw (-1, 1)-space, mapped affinely into the position's bounds, and
//! clamped. Log-probabilities are Gaussian densities of the pre-clamp sample
//! in raw space, so likelihood ratios stay consistent across updates.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::control::{ActionBounds, ControlAction};
use crate::corridor::PositionKind;
use crate::engine::{ActionSource, StepContext, StrategyMask};
use crate::error::{Error, Result};
use crate::nn::{Mlp, MlpSpec};
use crate::observation::FusedObservation;

pub const ACTION_DIM: usize = 3;
/// Encoded observation: normalized fused state, position-kind one-hot, and
/// the block volume cost. The kind one-hot and volume cost let one shared
/// network specialize per location type and traffic condition.
pub const OBS_DIM: usize = 7;
/// Normalizer for the volume-cost input feature.
pub const VOLUME_COST_SCALE: f64 = 100.0;
/// Fixed output gain of the critic head; returns reach tens while hidden
/// activations stay within (-1, 1).
pub const VALUE_SCALE: f64 = 25.0;
pub const LOG_STD_MIN: f64 = -1.5;
pub const LOG_STD_MAX: f64 = 1.0;
pub const LOG_STD_INIT: f64 = -1.203_972_804_325_936; // ln(0.3)

const ACTOR_OUTPUT_SCALE: f64 = 0.1;

/// Action dimension exercised at a position: holding at stations, signal
/// priority at intersections, cruise speed on road segments.
pub fn active_dimension(kind: PositionKind) -> usize {
    match kind {
        PositionKind::Station => 0,
        PositionKind::SignalizedIntersection => 1,
        PositionKind::RoadSegment => 2,
    }
}

/// Network input: deviations normalized by the planned headway so entries
/// are O(1), one-hot position kind, scaled volume cost.
pub fn encode_observation(
    obs: &FusedObservation,
    kind: PositionKind,
    volume_cost: f64,
    planned_headway: f64,
) -> [f64; OBS_DIM] {
    let h = planned_headway;
    let mut x = [0.0; OBS_DIM];
    x[0] = obs.schedule_dev / h;
    x[1] = obs.weighted_headway_dev / h;
    x[2] = obs.dwell_load / h;
    x[3 + active_dimension(kind)] = 1.0;
    x[6] = volume_cost / VOLUME_COST_SCALE;
    x
}

/// Shared actor-critic parameter set. One actor drives every bus at every
/// position kind; parameters are plain vectors, so snapshots are cheap and
/// workers can hold read-only references.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    /// State-independent log-stddev per action dimension (raw space).
    pub log_std: Vec<f64>,
    pub critic: Mlp,
}

pub fn actor_spec(hidden: [usize; 2]) -> MlpSpec {
    MlpSpec {
        input: OBS_DIM,
        hidden,
        output: ACTION_DIM,
    }
}

pub fn critic_spec(hidden: [usize; 2]) -> MlpSpec {
    MlpSpec {
        input: OBS_DIM,
        hidden,
        output: 1,
    }
}

impl ActorCritic {
    pub fn init(hidden: [usize; 2], rng: &mut ChaCha8Rng) -> Self {
        ActorCritic {
            actor: Mlp::glorot_init(actor_spec(hidden), rng, ACTOR_OUTPUT_SCALE),
            log_std: vec![LOG_STD_INIT; ACTION_DIM],
            critic: Mlp::glorot_init(critic_spec(hidden), rng, 1.0),
        }
    }

    pub fn zeros(hidden: [usize; 2]) -> Self {
        ActorCritic {
            actor: Mlp::zeros(actor_spec(hidden)),
            log_std: vec![LOG_STD_INIT; ACTION_DIM],
            critic: Mlp::zeros(critic_spec(hidden)),
        }
    }

    pub fn hidden(&self) -> [usize; 2] {
        self.actor.spec.hidden
    }

    /// Tanh-squashed action means and the current log-stddev vector.
    pub fn forward_actor(&self, x: &[f64; OBS_DIM]) -> Result<([f64; ACTION_DIM], [f64; ACTION_DIM])> {
        let out = self.actor.forward(x);
        let mut mean = [0.0; ACTION_DIM];
        let mut log_std = [0.0; ACTION_DIM];
        for d in 0..ACTION_DIM {
            mean[d] = out[d].tanh();
            log_std[d] = self.log_std[d];
            if !mean[d].is_finite() || !log_std[d].is_finite() {
                return Err(Error::Numerical(format!(
                    "actor produced non-finite output at dim {d}: mean {} log_std {}",
                    mean[d], log_std[d]
                )));
            }
        }
        Ok((mean, log_std))
    }

    pub fn forward_critic(&self, x: &[f64; OBS_DIM]) -> Result<f64> {
        let v = VALUE_SCALE * self.critic.forward(x)[0];
        if !v.is_finite() {
            return Err(Error::Numerical(format!("critic produced non-finite value {v}")));
        }
        Ok(v)
    }

    /// Keeps the learnable log-stddev inside its numerical guard band.
    pub fn project_log_std(&mut self) {
        for v in &mut self.log_std {
            *v = v.clamp(LOG_STD_MIN, LOG_STD_MAX);
        }
    }
}

/// Gaussian log-density of `x` under N(mean, exp(log_std)^2).
pub fn gaussian_log_density(x: f64, mean: f64, log_std: f64) -> f64 {
    let std = log_std.exp();
    let z = (x - mean) / std;
    -0.5 * z * z - log_std - 0.5 * (std::f64::consts::TAU).ln()
}

/// Zero-anchored map from raw (-1, 1)-space into the bounds interval:
/// linear on each side of zero, so a zero raw sample is always the
/// do-nothing action even for one-sided or asymmetric bounds.
pub fn map_to_bounds(raw: f64, bounds: &ActionBounds) -> f64 {
    let v = if raw >= 0.0 {
        raw * bounds.hi.max(0.0)
    } else {
        -raw * bounds.lo.min(0.0)
    };
    bounds.clamp(v)
}

#[derive(Debug, Clone, Copy)]
pub struct SampledAction {
    pub action: ControlAction,
    /// Pre-clamp raw-space sample on the active dimension.
    pub raw: f64,
    pub log_prob: f64,
    pub active_dim: Option<usize>,
}

/// Draws the active component (deterministically when no generator is
/// given), maps it into bounds, and reports the raw-space log-probability.
/// Off-kind and masked dimensions contribute a zero action and zero
/// log-probability.
pub fn sample_action(
    mean: &[f64; ACTION_DIM],
    log_std: &[f64; ACTION_DIM],
    kind: PositionKind,
    mask: &StrategyMask,
    bounds: &ActionBounds,
    rng: Option<&mut ChaCha8Rng>,
) -> SampledAction {
    let dim = active_dimension(kind);
    if !mask.allows(dim) {
        return SampledAction {
            action: ControlAction::zero(),
            raw: 0.0,
            log_prob: 0.0,
            active_dim: None,
        };
    }
    let raw = match rng {
        Some(rng) => mean[dim] + log_std[dim].exp() * crate::disturbance::standard_normal(rng),
        None => mean[dim],
    };
    SampledAction {
        action: ControlAction::with_component(dim, map_to_bounds(raw, bounds)),
        raw,
        log_prob: gaussian_log_density(raw, mean[dim], log_std[dim]),
        active_dim: Some(dim),
    }
}

/// Per-step record a rollout keeps for the trainer.
#[derive(Debug, Clone, Copy)]
pub struct TransitionDraft {
    pub obs: [f64; OBS_DIM],
    pub raw: f64,
    pub active_dim: Option<usize>,
    pub log_prob: f64,
    pub value: f64,
}

/// Learned controller: feeds encoded observations through a parameter
/// snapshot. With a generator it samples (rollouts); without one it acts on
/// the mean (evaluation). Optionally records transition drafts for training.
pub struct PolicySource<'a> {
    model: &'a ActorCritic,
    mask: StrategyMask,
    rng: Option<ChaCha8Rng>,
    pub drafts: Option<Vec<TransitionDraft>>,
}

impl<'a> PolicySource<'a> {
    pub fn deterministic(model: &'a ActorCritic, mask: StrategyMask) -> Self {
        PolicySource {
            model,
            mask,
            rng: None,
            drafts: None,
        }
    }

    pub fn stochastic(model: &'a ActorCritic, mask: StrategyMask, rng: ChaCha8Rng) -> Self {
        PolicySource {
            model,
            mask,
            rng: Some(rng),
            drafts: None,
        }
    }

    pub fn recording(model: &'a ActorCritic, mask: StrategyMask, rng: ChaCha8Rng) -> Self {
        PolicySource {
            model,
            mask,
            rng: Some(rng),
            drafts: Some(Vec::new()),
        }
    }
}

impl ActionSource for PolicySource<'_> {
    fn action(&mut self, ctx: &StepContext) -> Result<ControlAction> {
        let x = encode_observation(&ctx.obs, ctx.kind, ctx.volume_cost, ctx.planned_headway);
        let (mean, log_std) = self.model.forward_actor(&x)?;
        let sampled = sample_action(&mean, &log_std, ctx.kind, &self.mask, &ctx.bounds, self.rng.as_mut());
        if let Some(drafts) = &mut self.drafts {
            drafts.push(TransitionDraft {
                obs: x,
                raw: sampled.raw,
                active_dim: sampled.active_dim,
                log_prob: sampled.log_prob,
                value: self.model.forward_critic(&x)?,
            });
        }
        Ok(sampled.action)
    }
}

const CHECKPOINT_SCHEMA: u32 = 1;

/// Versioned parameter dump. Floats are stored as their bit patterns, so a
/// save/load cycle reproduces forward passes bit-exactly.
#[derive(Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub schema: u32,
    pub obs_dim: usize,
    pub hidden: [usize; 2],
    pub action_dim: usize,
    pub downstream_count: usize,
    pub mask: StrategyMask,
    actor_bits: Vec<u64>,
    critic_bits: Vec<u64>,
}

impl Checkpoint {
    pub fn from_model(model: &ActorCritic, mask: StrategyMask, downstream_count: usize) -> Self {
        let mut actor_bits: Vec<u64> = model.actor.params.iter().map(|v| v.to_bits()).collect();
        actor_bits.extend(model.log_std.iter().map(|v| v.to_bits()));
        Checkpoint {
            schema: CHECKPOINT_SCHEMA,
            obs_dim: OBS_DIM,
            hidden: model.hidden(),
            action_dim: ACTION_DIM,
            downstream_count,
            mask,
            actor_bits,
            critic_bits: model.critic.params.iter().map(|v| v.to_bits()).collect(),
        }
    }

    pub fn into_model(&self) -> Result<ActorCritic> {
        if self.schema != CHECKPOINT_SCHEMA {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint schema {}",
                self.schema
            )));
        }
        if self.obs_dim != OBS_DIM || self.action_dim != ACTION_DIM {
            return Err(Error::Checkpoint(format!(
                "architecture mismatch: checkpoint is {}->{} but this build expects {}->{}",
                self.obs_dim, self.action_dim, OBS_DIM, ACTION_DIM
            )));
        }
        let a_spec = actor_spec(self.hidden);
        let c_spec = critic_spec(self.hidden);
        if self.actor_bits.len() != a_spec.param_len() + ACTION_DIM
            || self.critic_bits.len() != c_spec.param_len()
        {
            return Err(Error::Checkpoint("parameter vector length mismatch".into()));
        }
        let actor_params: Vec<f64> = self.actor_bits[..a_spec.param_len()]
            .iter()
            .map(|b| f64::from_bits(*b))
            .collect();
        let log_std: Vec<f64> = self.actor_bits[a_spec.param_len()..]
            .iter()
            .map(|b| f64::from_bits(*b))
            .collect();
        if actor_params.iter().chain(&log_std).any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("checkpoint holds non-finite parameters".into()));
        }
        Ok(ActorCritic {
            actor: Mlp {
                spec: a_spec,
                params: actor_params,
            },
            log_std,
            critic: Mlp {
                spec: c_spec,
                params: self.critic_bits.iter().map(|b| f64::from_bits(*b)).collect(),
            },
        })
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string(self)
            .map_err(|e| Error::Checkpoint(format!("serialize failed: {e}")))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::seeded_rng;

    fn model() -> ActorCritic {
        let mut rng = seeded_rng(&[0xAC, 1]);
        ActorCritic::init([16, 16], &mut rng)
    }

    fn obs(e: f64, d: f64, load: f64) -> FusedObservation {
        FusedObservation {
            schedule_dev: e,
            weighted_headway_dev: d,
            dwell_load: load,
        }
    }

    #[test]
    fn zero_network_outputs_zero_mean() {
        let m = ActorCritic::zeros([16, 16]);
        let x = encode_observation(&obs(30.0, -12.0, 24.0), PositionKind::Station, 1.0, 300.0);
        let (mean, _) = m.forward_actor(&x).unwrap();
        assert_eq!(mean, [0.0; ACTION_DIM]);
        assert_eq!(m.forward_critic(&x).unwrap(), 0.0);
    }

    #[test]
    fn encoding_normalizes_and_tags_kind() {
        let x = encode_observation(&obs(30.0, -15.0, 24.0), PositionKind::RoadSegment, 80.0, 300.0);
        assert_eq!(x[0], 0.1);
        assert_eq!(x[1], -0.05);
        assert_eq!(x[2], 0.08);
        assert_eq!(&x[3..6], &[0.0, 0.0, 1.0]);
        assert_eq!(x[6], 0.8);
    }

    #[test]
    fn degenerate_stddev_becomes_deterministic() {
        let mut m = model();
        m.log_std = vec![-30.0; ACTION_DIM];
        let x = encode_observation(&obs(10.0, 5.0, 20.0), PositionKind::Station, 1.0, 300.0);
        let (mean, log_std) = m.forward_actor(&x).unwrap();
        let bounds = ActionBounds { lo: 0.0, hi: 20.0 };
        let mut rng = seeded_rng(&[5]);
        let s = sample_action(
            &mean,
            &log_std,
            PositionKind::Station,
            &StrategyMask::all(),
            &bounds,
            Some(&mut rng),
        );
        let expect = map_to_bounds(mean[0], &bounds);
        assert!((s.action.holding - expect).abs() < 1e-9);
    }

    #[test]
    fn samples_are_symmetric_around_a_centered_mean() {
        let mean = [0.0; ACTION_DIM];
        let log_std = [-0.5; ACTION_DIM];
        let bounds = ActionBounds { lo: -20.0, hi: 20.0 };
        let mut rng = seeded_rng(&[17]);
        let mut acc = 0.0;
        let mut above = 0usize;
        let n = 40_000;
        for _ in 0..n {
            let s = sample_action(
                &mean,
                &log_std,
                PositionKind::SignalizedIntersection,
                &StrategyMask::all(),
                &bounds,
                Some(&mut rng),
            );
            acc += s.action.signal;
            if s.action.signal > 0.0 {
                above += 1;
            }
        }
        let sample_mean = acc / n as f64;
        assert!(sample_mean.abs() < 0.25, "sample mean {sample_mean}");
        let frac = above as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "positive fraction {frac}");
    }

    #[test]
    fn log_prob_matches_closed_form_density() {
        let m = model();
        let x = encode_observation(&obs(-22.0, 8.0, 15.0), PositionKind::RoadSegment, 10.0, 300.0);
        let (mean, log_std) = m.forward_actor(&x).unwrap();
        let bounds = ActionBounds { lo: -62.5, hi: 50.0 };
        let mut rng = seeded_rng(&[23]);
        for _ in 0..200 {
            let s = sample_action(
                &mean,
                &log_std,
                PositionKind::RoadSegment,
                &StrategyMask::all(),
                &bounds,
                Some(&mut rng),
            );
            let d = 2;
            let sigma = log_std[d].exp();
            let expect = -((s.raw - mean[d]) * (s.raw - mean[d])) / (2.0 * sigma * sigma)
                - sigma.ln()
                - 0.5 * (2.0 * std::f64::consts::PI).ln();
            assert!((s.log_prob - expect).abs() < 1e-10);
        }
    }

    #[test]
    fn emitted_actions_respect_bounds_and_exclusivity() {
        let m = model();
        let kinds = [
            (PositionKind::Station, ActionBounds { lo: 0.0, hi: 20.0 }),
            (PositionKind::SignalizedIntersection, ActionBounds { lo: -20.0, hi: 20.0 }),
            (PositionKind::RoadSegment, ActionBounds { lo: -62.5, hi: 50.0 }),
        ];
        let mut rng = seeded_rng(&[31]);
        for i in 0..3000 {
            let (kind, bounds) = kinds[i % 3];
            let x = encode_observation(
                &obs((i % 100) as f64 - 50.0, (i % 37) as f64 - 18.0, 12.0),
                kind,
                (i % 80) as f64,
                300.0,
            );
            let (mean, log_std) = m.forward_actor(&x).unwrap();
            let s = sample_action(&mean, &log_std, kind, &StrategyMask::all(), &bounds, Some(&mut rng));
            let dim = active_dimension(kind);
            for d in 0..ACTION_DIM {
                let v = s.action.component(d);
                if d == dim {
                    assert!(v >= bounds.lo - 1e-12 && v <= bounds.hi + 1e-12);
                } else {
                    assert_eq!(v, 0.0);
                }
            }
        }
    }

    #[test]
    fn masked_dimension_contributes_nothing() {
        let m = model();
        let x = encode_observation(&obs(-15.0, 3.0, 10.0), PositionKind::Station, 1.0, 300.0);
        let (mean, log_std) = m.forward_actor(&x).unwrap();
        let bounds = ActionBounds { lo: 0.0, hi: 20.0 };
        let mut rng = seeded_rng(&[37]);
        let s = sample_action(
            &mean,
            &log_std,
            PositionKind::Station,
            &StrategyMask::only(1),
            &bounds,
            Some(&mut rng),
        );
        assert_eq!(s.action, ControlAction::zero());
        assert_eq!(s.log_prob, 0.0);
        assert_eq!(s.active_dim, None);
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let m = model();
        let ckpt = Checkpoint::from_model(&m, StrategyMask::all(), 5);
        let dir = std::env::temp_dir().join("corridorsim-ckpt-test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("roundtrip.json");
        ckpt.save(&path).unwrap();
        let restored = Checkpoint::load(&path).unwrap().into_model().unwrap();
        let x = encode_observation(&obs(12.0, -4.0, 18.0), PositionKind::Station, 4.0, 300.0);
        let (a, _) = m.forward_actor(&x).unwrap();
        let (b, _) = restored.forward_actor(&x).unwrap();
        for d in 0..ACTION_DIM {
            assert_eq!(a[d].to_bits(), b[d].to_bits());
        }
        assert_eq!(
            m.forward_critic(&x).unwrap().to_bits(),
            restored.forward_critic(&x).unwrap().to_bits()
        );
    }

    #[test]
    fn checkpoint_rejects_architecture_mismatch() {
        let m = model();
        let mut ckpt = Checkpoint::from_model(&m, StrategyMask::all(), 5);
        ckpt.obs_dim = 11;
        assert!(ckpt.into_model().is_err());
        let mut ckpt = Checkpoint::from_model(&m, StrategyMask::all(), 5);
        ckpt.schema = 99;
        assert!(ckpt.into_model().is_err());
    }
}
