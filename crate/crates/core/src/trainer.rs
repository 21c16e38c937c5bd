//! Synchronous distributed PPO: parallel workers collect on-policy rollouts
//! against a read-only parameter snapshot, a single coordinator computes
//! returns and advantages and applies clipped-surrogate actor updates and
//! squared-error critic updates.
//!
//! Rounds are synchronous by design: all workers submit, one global update
//! runs, the snapshot is republished. Together with counter-based noise
//! streams this makes a whole training run reproducible bit-for-bit for a
//! fixed seed and worker count.

use std::path::Path;
use std::time::Instant;

use crate::engine::{run_episode, EnvConfig, EpisodeParams};
use crate::error::{Error, Result};
use crate::nn::{AdamParams, AdamState, seeded_rng};
use crate::policy::{
    actor_spec, critic_spec, ActorCritic, Checkpoint, PolicySource, OBS_DIM, VALUE_SCALE,
};

/// One rollout step as the trainer sees it.
#[derive(Debug, Clone, Copy)]
pub struct Transition {
    pub obs: [f64; OBS_DIM],
    /// Raw-space sample on the active dimension.
    pub raw: f64,
    /// Action dimension exercised at this position; `None` when the mask
    /// disabled it (the step still carries reward and value).
    pub active_dim: Option<usize>,
    pub log_prob: f64,
    pub reward: f64,
    pub value: f64,
    pub done: bool,
}

/// Transitions collected by one worker in one round, stamped with the
/// policy version they were collected under.
#[derive(Debug, Clone)]
pub struct RolloutBatch {
    pub transitions: Vec<Transition>,
    pub mean_reward: f64,
    pub worker: usize,
    pub policy_version: u64,
}

/// Rollout batch with returns and advantages attached.
#[derive(Debug, Clone)]
pub struct PreparedBatch {
    pub transitions: Vec<Transition>,
    pub returns: Vec<f64>,
    pub advantages: Vec<f64>,
    pub policy_version: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainerConfig {
    pub episodes: usize,
    pub workers: usize,
    /// Optimization passes over each round's batch.
    pub epochs: usize,
    pub minibatch: usize,
    pub learning_rate: f64,
    pub clip: f64,
    pub discount: f64,
    pub normalize_advantage: bool,
    pub hidden: [usize; 2],
    /// Episodes between periodic checkpoints (0 disables them).
    pub checkpoint_every: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            episodes: 2000,
            workers: 4,
            epochs: 4,
            minibatch: 256,
            learning_rate: 1e-5,
            clip: 0.2,
            discount: 0.99,
            normalize_advantage: true,
            hidden: [64, 64],
            checkpoint_every: 500,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return Err(Error::Config(format!("clip must lie in (0, 1), got {}", self.clip)));
        }
        if !(self.discount > 0.0 && self.discount < 1.0) {
            return Err(Error::Config(format!(
                "discount must lie in (0, 1), got {}",
                self.discount
            )));
        }
        if self.episodes == 0 || self.workers == 0 || self.epochs == 0 || self.minibatch == 0 {
            return Err(Error::Config(
                "episodes, workers, epochs and minibatch must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Discounted returns over a trajectory slice with a bootstrap value for
/// the state past the horizon (zero at terminals).
pub fn compute_returns(rewards: &[f64], bootstrap: f64, discount: f64) -> Vec<f64> {
    let mut returns = vec![0.0; rewards.len()];
    let mut acc = bootstrap;
    for t in (0..rewards.len()).rev() {
        acc = rewards[t] + discount * acc;
        returns[t] = acc;
    }
    returns
}

/// Elementwise advantage: return minus value estimate.
pub fn compute_advantages(returns: &[f64], values: &[f64]) -> Vec<f64> {
    debug_assert_eq!(returns.len(), values.len());
    returns.iter().zip(values).map(|(r, v)| r - v).collect()
}

/// In-place batch normalization to zero mean, unit standard deviation.
pub fn normalize_advantages(advantages: &mut [f64]) {
    let n = advantages.len();
    if n < 2 {
        return;
    }
    let mean = advantages.iter().sum::<f64>() / n as f64;
    let var = advantages.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n as f64;
    let std = var.sqrt().max(1e-8);
    for a in advantages.iter_mut() {
        *a = (*a - mean) / std;
    }
}

/// Per-sample clipped surrogate: the pessimistic minimum of the plain
/// ratio-weighted advantage and its clipped counterpart.
pub fn clipped_objective(ratio: f64, advantage: f64, clip: f64) -> f64 {
    let plain = ratio * advantage;
    let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * advantage;
    plain.min(clipped)
}

/// Guard band on the log likelihood ratio so a pathological update cannot
/// overflow the exponential.
const LOG_RATIO_GUARD: f64 = 60.0;

/// Mean clipped surrogate over the samples and its gradient with respect to
/// the actor parameters (ascent direction) and the log-stddev vector.
pub fn actor_surrogate_and_gradient(
    model: &ActorCritic,
    transitions: &[Transition],
    advantages: &[f64],
    clip: f64,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    debug_assert_eq!(transitions.len(), advantages.len());
    let mut grad = vec![0.0; model.actor.spec.param_len()];
    let mut log_std_grad = vec![0.0; model.log_std.len()];
    let mut objective = 0.0;
    let scale = 1.0 / transitions.len().max(1) as f64;

    for (t, adv) in transitions.iter().zip(advantages) {
        let Some(dim) = t.active_dim else {
            // masked step: ratio is identically one, no gradient
            objective += adv * scale;
            continue;
        };
        let acts = model.actor.forward_cached(&t.obs);
        let mean = acts.output[dim].tanh();
        let log_std = model.log_std[dim];
        let sigma = log_std.exp();
        let z = (t.raw - mean) / sigma;
        let log_prob = -0.5 * z * z - log_std - 0.5 * std::f64::consts::TAU.ln();
        let log_ratio = (log_prob - t.log_prob).clamp(-LOG_RATIO_GUARD, LOG_RATIO_GUARD);
        let ratio = log_ratio.exp();

        let plain = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
        objective += plain.min(clipped) * scale;

        // gradient flows only through the unclipped branch
        let coef = if plain <= clipped { ratio * adv } else { 0.0 };
        if coef != 0.0 {
            let d_log_prob_d_mean = z / sigma;
            let d_mean_d_out = 1.0 - mean * mean;
            let mut d_out = vec![0.0; model.actor.spec.output];
            d_out[dim] = coef * d_log_prob_d_mean * d_mean_d_out * scale;
            model.actor.backward(&t.obs, &acts, &d_out, &mut grad);
            log_std_grad[dim] += coef * (z * z - 1.0) * scale;
        }
    }
    if !objective.is_finite() {
        return Err(Error::Numerical(format!("actor surrogate is {objective}")));
    }
    Ok((objective, grad, log_std_grad))
}

/// Mean squared critic error over the samples and its gradient (descent
/// direction, i.e. the gradient of the loss itself).
pub fn critic_loss_and_gradient(
    model: &ActorCritic,
    transitions: &[Transition],
    returns: &[f64],
) -> Result<(f64, Vec<f64>)> {
    debug_assert_eq!(transitions.len(), returns.len());
    let mut grad = vec![0.0; model.critic.spec.param_len()];
    let mut loss = 0.0;
    let scale = 1.0 / transitions.len().max(1) as f64;
    for (t, ret) in transitions.iter().zip(returns) {
        let acts = model.critic.forward_cached(&t.obs);
        let value = VALUE_SCALE * acts.output[0];
        let err = ret - value;
        loss += err * err * scale;
        let d_out = [-2.0 * err * VALUE_SCALE * scale];
        model.critic.backward(&t.obs, &acts, &d_out, &mut grad);
    }
    if !loss.is_finite() {
        return Err(Error::Numerical(format!("critic loss is {loss}")));
    }
    Ok((loss, grad))
}

/// Coordinator state: the master parameters, optimizer moments, and the
/// current policy version.
pub struct PpoTrainer {
    pub model: ActorCritic,
    cfg: TrainerConfig,
    actor_opt: AdamState,
    log_std_opt: AdamState,
    critic_opt: AdamState,
    adam: AdamParams,
    version: u64,
    seed: u64,
    round: u64,
}

impl PpoTrainer {
    pub fn new(model: ActorCritic, cfg: TrainerConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        if model.actor.spec != actor_spec(cfg.hidden) || model.critic.spec != critic_spec(cfg.hidden) {
            return Err(Error::Checkpoint(
                "model architecture does not match the trainer configuration".into(),
            ));
        }
        let actor_len = model.actor.spec.param_len();
        let critic_len = model.critic.spec.param_len();
        let log_std_len = model.log_std.len();
        Ok(PpoTrainer {
            model,
            cfg,
            actor_opt: AdamState::new(actor_len),
            log_std_opt: AdamState::new(log_std_len),
            critic_opt: AdamState::new(critic_len),
            adam: AdamParams::with_learning_rate(cfg.learning_rate),
            version: 0,
            seed,
            round: 0,
        })
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    fn check_version(&self, batch: &PreparedBatch) -> Result<()> {
        if batch.policy_version != self.version {
            return Err(Error::Internal(format!(
                "stale rollout batch: collected at version {}, trainer is at {}",
                batch.policy_version, self.version
            )));
        }
        Ok(())
    }

    fn minibatch_order(&self, len: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        let mut rng = seeded_rng(&[self.seed, 0x5f1e, self.round, epoch as u64]);
        // Fisher-Yates
        for i in (1..len).rev() {
            let j = (crate::disturbance::unit_uniform(&mut rng) * (i + 1) as f64) as usize;
            order.swap(i, j.min(i));
        }
        order
    }

    /// Ascends the clipped surrogate over the whole batch for the configured
    /// number of epochs. Returns the post-update full-batch surrogate.
    pub fn actor_update(&mut self, batch: &PreparedBatch) -> Result<f64> {
        self.check_version(batch)?;
        for epoch in 0..self.cfg.epochs {
            let order = self.minibatch_order(batch.transitions.len(), epoch);
            for chunk in order.chunks(self.cfg.minibatch) {
                let samples: Vec<Transition> = chunk.iter().map(|&i| batch.transitions[i]).collect();
                let advs: Vec<f64> = chunk.iter().map(|&i| batch.advantages[i]).collect();
                let (_, grad, log_std_grad) =
                    actor_surrogate_and_gradient(&self.model, &samples, &advs, self.cfg.clip)?;
                // ascend: minimize the negated surrogate
                let neg: Vec<f64> = grad.iter().map(|g| -g).collect();
                let neg_ls: Vec<f64> = log_std_grad.iter().map(|g| -g).collect();
                self.actor_opt.apply(&self.adam, &mut self.model.actor.params, &neg)?;
                self.log_std_opt.apply(&self.adam, &mut self.model.log_std, &neg_ls)?;
                self.model.project_log_std();
            }
        }
        let (objective, _, _) = actor_surrogate_and_gradient(
            &self.model,
            &batch.transitions,
            &batch.advantages,
            self.cfg.clip,
        )?;
        Ok(objective)
    }

    /// Descends the squared critic error; returns the post-update loss.
    pub fn critic_update(&mut self, batch: &PreparedBatch) -> Result<f64> {
        self.check_version(batch)?;
        for epoch in 0..self.cfg.epochs {
            let order = self.minibatch_order(batch.transitions.len(), epoch + 0x1000);
            for chunk in order.chunks(self.cfg.minibatch) {
                let samples: Vec<Transition> = chunk.iter().map(|&i| batch.transitions[i]).collect();
                let rets: Vec<f64> = chunk.iter().map(|&i| batch.returns[i]).collect();
                let (_, grad) = critic_loss_and_gradient(&self.model, &samples, &rets)?;
                self.critic_opt.apply(&self.adam, &mut self.model.critic.params, &grad)?;
            }
        }
        let (loss, _) =
            critic_loss_and_gradient(&self.model, &batch.transitions, &batch.returns)?;
        Ok(loss)
    }

    /// Publishes the updated parameters as the next policy version.
    pub fn advance_round(&mut self) {
        self.version += 1;
        self.round += 1;
    }
}

/// Fleet geometry of a training episode.
#[derive(Debug, Clone, Copy)]
pub struct TrainGeometry {
    pub fleet_size: usize,
    pub loops: usize,
}

/// Per-episode training log record.
#[derive(Debug, Clone, Copy)]
pub struct TrainProgress {
    pub episode: usize,
    pub mean_reward: f64,
    pub actor_objective: f64,
    pub critic_loss: f64,
    pub wall_ms: u64,
}

pub struct TrainOutcome {
    pub model: ActorCritic,
    pub progress: Vec<TrainProgress>,
}

const ACTION_RNG_CHANNEL: u64 = 0xAC7;
const INIT_RNG_CHANNEL: u64 = 0x171;

/// Collects one on-policy episode and zips the drafts with the realized
/// rewards, bus by bus.
fn collect_rollout(
    env: &EnvConfig,
    model: &ActorCritic,
    geometry: TrainGeometry,
    seed: u64,
    worker: usize,
    episode: usize,
    policy_version: u64,
) -> Result<RolloutBatch> {
    let rng = seeded_rng(&[seed, ACTION_RNG_CHANNEL, worker as u64, episode as u64]);
    let mut source = PolicySource::recording(model, env.mask, rng);
    let params = EpisodeParams {
        fleet_size: geometry.fleet_size,
        loops: geometry.loops,
        seed,
        worker: worker as u64,
        episode: episode as u64,
    };
    let log = run_episode(env, &mut source, &params)?;
    let drafts = source.drafts.take().expect("recording source keeps drafts");
    let steps = log.steps_per_bus();
    let mut transitions = Vec::with_capacity(drafts.len());
    let mut reward_acc = 0.0;
    let mut i = 0usize;
    for bus_rows in &log.outcomes {
        for (j, row) in bus_rows.iter().enumerate() {
            let d = &drafts[i];
            transitions.push(Transition {
                obs: d.obs,
                raw: d.raw,
                active_dim: d.active_dim,
                log_prob: d.log_prob,
                reward: row.reward,
                value: d.value,
                done: j == steps - 1,
            });
            reward_acc += row.reward;
            i += 1;
        }
    }
    let mean_reward = reward_acc / transitions.len().max(1) as f64;
    Ok(RolloutBatch {
        transitions,
        mean_reward,
        worker,
        policy_version,
    })
}

/// Computes returns and advantages segment-by-segment (done flags delimit
/// per-bus trajectories) and concatenates worker batches in worker order.
pub fn prepare_batch(
    batches: &[RolloutBatch],
    discount: f64,
    normalize: bool,
) -> Result<PreparedBatch> {
    let version = batches
        .first()
        .map(|b| b.policy_version)
        .ok_or_else(|| Error::Internal("no rollout batches to prepare".into()))?;
    if batches.iter().any(|b| b.policy_version != version) {
        return Err(Error::Internal("mixed policy versions in one round".into()));
    }
    let mut transitions = Vec::new();
    for b in batches {
        transitions.extend_from_slice(&b.transitions);
    }
    let mut returns = Vec::with_capacity(transitions.len());
    let mut start = 0usize;
    for t in 0..transitions.len() {
        if transitions[t].done {
            let rewards: Vec<f64> = transitions[start..=t].iter().map(|x| x.reward).collect();
            returns.extend(compute_returns(&rewards, 0.0, discount));
            start = t + 1;
        }
    }
    if start != transitions.len() {
        return Err(Error::Internal("rollout does not end on a terminal step".into()));
    }
    let values: Vec<f64> = transitions.iter().map(|t| t.value).collect();
    let mut advantages = compute_advantages(&returns, &values);
    if normalize {
        normalize_advantages(&mut advantages);
    }
    Ok(PreparedBatch {
        transitions,
        returns,
        advantages,
        policy_version: version,
    })
}

/// Full synchronous training loop. Workers run one episode per round with
/// disjoint seeds against the current snapshot; the coordinator updates and
/// republishes. Deterministic for fixed (seed, worker count).
pub fn train(
    env: &EnvConfig,
    geometry: TrainGeometry,
    cfg: &TrainerConfig,
    seed: u64,
    resume: Option<ActorCritic>,
    checkpoint_dir: Option<&Path>,
    mut progress_sink: impl FnMut(&TrainProgress),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let steps_per_episode = geometry.fleet_size * geometry.loops * env.corridor.loop_len();
    if steps_per_episode < cfg.minibatch {
        return Err(Error::Config(format!(
            "an episode yields {steps_per_episode} transitions, fewer than one minibatch of {}",
            cfg.minibatch
        )));
    }

    let model = match resume {
        Some(m) => m,
        None => {
            let mut rng = seeded_rng(&[seed, INIT_RNG_CHANNEL]);
            ActorCritic::init(cfg.hidden, &mut rng)
        }
    };
    let mut trainer = PpoTrainer::new(model, *cfg, seed)?;
    let mut progress = Vec::with_capacity(cfg.episodes);
    let started = Instant::now();
    let mut episodes_done = 0usize;
    let mut last_checkpoint = 0usize;

    while episodes_done < cfg.episodes {
        let round_eps = cfg.workers.min(cfg.episodes - episodes_done);
        let version = trainer.version();
        let model_ref = &trainer.model;

        let mut results: Vec<Result<RolloutBatch>> = Vec::with_capacity(round_eps);
        std::thread::scope(|scope| {
            let handles: Vec<_> = (0..round_eps)
                .map(|w| {
                    let episode = episodes_done + w;
                    scope.spawn(move || {
                        collect_rollout(env, model_ref, geometry, seed, w, episode, version)
                    })
                })
                .collect();
            for h in handles {
                results.push(h.join().unwrap_or_else(|_| {
                    Err(Error::Internal("rollout worker panicked".into()))
                }));
            }
        });
        let mut batches = Vec::with_capacity(round_eps);
        for r in results {
            batches.push(r?);
        }

        let prepared = prepare_batch(&batches, cfg.discount, cfg.normalize_advantage)?;
        let actor_objective = trainer.actor_update(&prepared)?;
        let critic_loss = trainer.critic_update(&prepared)?;
        trainer.advance_round();

        let wall_ms = started.elapsed().as_millis() as u64;
        for b in &batches {
            let record = TrainProgress {
                episode: episodes_done + b.worker,
                mean_reward: b.mean_reward,
                actor_objective,
                critic_loss,
                wall_ms,
            };
            progress_sink(&record);
            progress.push(record);
        }
        episodes_done += round_eps;

        if cfg.checkpoint_every > 0 && episodes_done - last_checkpoint >= cfg.checkpoint_every {
            if let Some(dir) = checkpoint_dir {
                let ckpt =
                    Checkpoint::from_model(&trainer.model, env.mask, env.downstream_count);
                ckpt.save(&dir.join(format!("checkpoint-ep{episodes_done}.json")))?;
            }
            last_checkpoint = episodes_done;
        }
    }

    Ok(TrainOutcome {
        model: trainer.model,
        progress,
    })
}

/// Slope test for convergence: the earliest episode after which the gain of
/// the trailing-window mean over one window never again exceeds
/// `slope_fraction` of the curve's total rise. `None` when the curve is
/// still climbing at the end of the data.
pub fn plateau_episode(mean_rewards: &[f64], window: usize, slope_fraction: f64) -> Option<usize> {
    let n = mean_rewards.len();
    if n < 2 * window || n < 50 {
        return None;
    }
    let first: f64 = mean_rewards[..50].iter().sum::<f64>() / 50.0;
    let last: f64 = mean_rewards[n - window..].iter().sum::<f64>() / window as f64;
    let rise = last - first;
    if rise <= 1e-9 {
        // the curve never improved on its opening level
        return Some(window);
    }
    let threshold = slope_fraction * rise;
    let mut prefix = vec![0.0; n + 1];
    for (i, r) in mean_rewards.iter().enumerate() {
        prefix[i + 1] = prefix[i] + r;
    }
    let trailing = |end: usize| (prefix[end] - prefix[end - window]) / window as f64;
    let mut plateau = 2 * window;
    for end in 2 * window..=n {
        if trailing(end) - trailing(end - window) > threshold {
            plateau = end + 1;
        }
    }
    if plateau > n {
        None
    } else {
        Some(plateau)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{finite_difference_gradient, max_relative_error};
    use crate::policy::encode_observation;
    use crate::{corridor::PositionKind, observation::FusedObservation};

    fn random_transitions(seed: u64, n: usize) -> (Vec<Transition>, Vec<f64>, Vec<f64>) {
        let mut rng = seeded_rng(&[seed, 0x7e57]);
        let mut u = move || 2.0 * crate::disturbance::unit_uniform(&mut rng) - 1.0;
        let kinds = [
            PositionKind::Station,
            PositionKind::RoadSegment,
            PositionKind::SignalizedIntersection,
        ];
        let mut transitions = Vec::with_capacity(n);
        let mut advantages = Vec::with_capacity(n);
        let mut returns = Vec::with_capacity(n);
        for i in 0..n {
            let obs = FusedObservation {
                schedule_dev: 80.0 * u(),
                weighted_headway_dev: 60.0 * u(),
                dwell_load: 20.0 * u().abs(),
            };
            let x = encode_observation(&obs, kinds[i % 3], 40.0 * u().abs(), 300.0);
            transitions.push(Transition {
                obs: x,
                raw: 1.2 * u(),
                active_dim: Some(i % 3),
                log_prob: -1.1 + 0.3 * u(),
                reward: 0.5 + 0.4 * u(),
                value: 2.0 * u(),
                done: false,
            });
            advantages.push(2.0 * u());
            returns.push(3.0 * u() + 3.0);
        }
        (transitions, advantages, returns)
    }

    fn small_model(seed: u64) -> ActorCritic {
        let mut rng = seeded_rng(&[seed, 0x171]);
        ActorCritic::init([8, 8], &mut rng)
    }

    #[test]
    fn returns_hand_values() {
        let r = compute_returns(&[1.0, 1.0], 0.0, 0.99);
        assert!((r[0] - 1.99).abs() < 1e-15);
        assert!((r[1] - 1.0).abs() < 1e-15);

        let myopic = compute_returns(&[0.3, 0.7, 0.1], 0.0, 1e-12);
        for (a, b) in myopic.iter().zip([0.3, 0.7, 0.1]) {
            assert!((a - b).abs() < 1e-9);
        }

        let ones = vec![1.0; 200];
        let r = compute_returns(&ones, 0.0, 0.99);
        assert!(r[0] < 100.0);
        assert!((r[0] - (1.0 - 0.99f64.powi(200)) / 0.01).abs() < 1e-9);
    }

    #[test]
    fn return_recursion_matches_direct_summation() {
        let mut rng = seeded_rng(&[0xabc]);
        for _ in 0..20 {
            let n = 40;
            let rewards: Vec<f64> = (0..n)
                .map(|_| crate::disturbance::unit_uniform(&mut rng))
                .collect();
            let bootstrap = crate::disturbance::unit_uniform(&mut rng);
            let gamma = 0.99;
            let returns = compute_returns(&rewards, bootstrap, gamma);
            // recursion
            for t in 0..n - 1 {
                assert!((returns[t] - (rewards[t] + gamma * returns[t + 1])).abs() < 1e-12);
            }
            // direct discounted summation with bootstrap tail
            for t in 0..n {
                let mut direct = 0.0;
                for m in 0..n - t {
                    direct += gamma.powi(m as i32) * rewards[t + m];
                }
                direct += gamma.powi((n - t) as i32) * bootstrap;
                assert!((returns[t] - direct).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn advantages_and_normalization() {
        let adv = compute_advantages(&[1.99], &[0.5]);
        assert!((adv[0] - 1.49).abs() < 1e-15);

        let perfect = compute_advantages(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]);
        assert!(perfect.iter().all(|a| *a == 0.0));

        let mut adv: Vec<f64> = (0..512).map(|i| (i as f64) * 0.37 - 11.0).collect();
        normalize_advantages(&mut adv);
        let mean = adv.iter().sum::<f64>() / adv.len() as f64;
        let var = adv.iter().map(|a| a * a).sum::<f64>() / adv.len() as f64 - mean * mean;
        assert!(mean.abs() < 1e-10);
        assert!((var - 1.0).abs() < 1e-6);
    }

    #[test]
    fn clipped_objective_hand_values() {
        assert!((clipped_objective(1.5, 2.0, 0.2) - 2.4).abs() < 1e-15);
        assert!((clipped_objective(0.5, -1.0, 0.2) - (-0.8)).abs() < 1e-15);
        // ratio one is an interior point: objective equals the advantage
        assert_eq!(clipped_objective(1.0, 0.7, 0.2), 0.7);
    }

    #[test]
    fn clip_bound_holds_for_random_samples() {
        let mut rng = seeded_rng(&[0x11]);
        for _ in 0..10_000 {
            let ratio = 3.0 * crate::disturbance::unit_uniform(&mut rng);
            let adv = 4.0 * crate::disturbance::unit_uniform(&mut rng) - 2.0;
            let obj = clipped_objective(ratio, adv, 0.2);
            assert!(obj <= adv.abs() * 1.2 + 1e-12);
        }
    }

    #[test]
    fn actor_gradient_matches_finite_differences() {
        for seed in 0..25 {
            let model = small_model(seed);
            let (transitions, advantages, _) = random_transitions(seed, 12);
            let (_, grad, log_std_grad) =
                actor_surrogate_and_gradient(&model, &transitions, &advantages, 0.2).unwrap();

            let spec = model.actor.spec;
            let numeric = finite_difference_gradient(
                &model.actor.params,
                |p| {
                    let probe = ActorCritic {
                        actor: crate::nn::Mlp {
                            spec,
                            params: p.to_vec(),
                        },
                        log_std: model.log_std.clone(),
                        critic: model.critic.clone(),
                    };
                    actor_surrogate_and_gradient(&probe, &transitions, &advantages, 0.2)
                        .unwrap()
                        .0
                },
                1e-6,
            );
            let err = max_relative_error(&grad, &numeric);
            assert!(err < 1e-4, "seed {seed}: actor gradient error {err}");

            let numeric_ls = finite_difference_gradient(
                &model.log_std,
                |p| {
                    let probe = ActorCritic {
                        actor: model.actor.clone(),
                        log_std: p.to_vec(),
                        critic: model.critic.clone(),
                    };
                    actor_surrogate_and_gradient(&probe, &transitions, &advantages, 0.2)
                        .unwrap()
                        .0
                },
                1e-6,
            );
            let err = max_relative_error(&log_std_grad, &numeric_ls);
            assert!(err < 1e-4, "seed {seed}: log-std gradient error {err}");
        }
    }

    #[test]
    fn critic_gradient_matches_finite_differences() {
        for seed in 0..25 {
            let model = small_model(seed + 100);
            let (transitions, _, returns) = random_transitions(seed + 100, 12);
            let (_, grad) = critic_loss_and_gradient(&model, &transitions, &returns).unwrap();
            let spec = model.critic.spec;
            let numeric = finite_difference_gradient(
                &model.critic.params,
                |p| {
                    let probe = ActorCritic {
                        actor: model.actor.clone(),
                        log_std: model.log_std.clone(),
                        critic: crate::nn::Mlp {
                            spec,
                            params: p.to_vec(),
                        },
                    };
                    critic_loss_and_gradient(&probe, &transitions, &returns).unwrap().0
                },
                1e-6,
            );
            let err = max_relative_error(&grad, &numeric);
            assert!(err < 1e-4, "seed {seed}: critic gradient error {err}");
        }
    }

    #[test]
    fn gradient_at_old_policy_equals_unclipped_policy_gradient() {
        // with ratios identically one no clipping is active, so the clipped
        // and unclipped surrogates share their gradient
        let model = small_model(7);
        let (mut transitions, advantages, _) = random_transitions(7, 16);
        for t in &mut transitions {
            if let Some(dim) = t.active_dim {
                let acts = model.actor.forward_cached(&t.obs);
                let mean = acts.output[dim].tanh();
                t.log_prob = crate::policy::gaussian_log_density(t.raw, mean, model.log_std[dim]);
            }
        }
        let (_, clipped_grad, clipped_ls) =
            actor_surrogate_and_gradient(&model, &transitions, &advantages, 0.2).unwrap();
        let (_, plain_grad, plain_ls) =
            actor_surrogate_and_gradient(&model, &transitions, &advantages, 0.999_999).unwrap();
        assert!(max_relative_error(&clipped_grad, &plain_grad) < 1e-10);
        assert!(max_relative_error(&clipped_ls, &plain_ls) < 1e-10);
    }

    #[test]
    fn critic_fixed_point_and_variance_bound() {
        let model = ActorCritic::zeros([8, 8]);
        let (transitions, _, _) = random_transitions(3, 32);
        // zero critic outputs zero everywhere; returns equal to the values
        let zeros = vec![0.0; transitions.len()];
        let (loss, grad) = critic_loss_and_gradient(&model, &transitions, &zeros).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grad.iter().all(|g| *g == 0.0));

        // constant-output critic cannot beat the return variance
        let (_, _, returns) = random_transitions(3, 32);
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        let var = returns.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / returns.len() as f64;
        let (loss, _) = critic_loss_and_gradient(&model, &transitions, &returns).unwrap();
        assert!(loss >= var - 1e-9);
    }

    #[test]
    fn one_critic_step_reduces_loss_on_frozen_batch() {
        let model = small_model(40);
        let (transitions, _, returns) = random_transitions(40, 24);
        let (before, grad) = critic_loss_and_gradient(&model, &transitions, &returns).unwrap();
        let mut probe = model.clone();
        let lr = 1e-4;
        for (p, g) in probe.critic.params.iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        let (after, _) = critic_loss_and_gradient(&probe, &transitions, &returns).unwrap();
        assert!(after < before, "loss {before} -> {after}");
    }

    #[test]
    fn stale_batches_are_rejected() {
        let cfg = TrainerConfig {
            minibatch: 8,
            ..TrainerConfig::default()
        };
        let model = ActorCritic::init([64, 64], &mut seeded_rng(&[1]));
        let mut trainer = PpoTrainer::new(model, cfg, 0).unwrap();
        let (transitions, advantages, returns) = random_transitions(9, 8);
        let batch = PreparedBatch {
            transitions,
            returns,
            advantages,
            policy_version: 3,
        };
        assert!(trainer.actor_update(&batch).is_err());
        assert!(trainer.critic_update(&batch).is_err());
    }

    #[test]
    fn plateau_detection_on_synthetic_curves() {
        // saturating curve: the slope dies well before the end
        let curve: Vec<f64> = (0..2000)
            .map(|i| 0.8 * (1.0 - (-(i as f64) / 120.0).exp()) + 0.05)
            .collect();
        let at = plateau_episode(&curve, 200, 0.05).unwrap();
        assert!(at < 900, "plateau detected at {at}");
        // linearly rising curve: no plateau inside the data
        let rising: Vec<f64> = (0..2000).map(|i| i as f64 * 1e-3).collect();
        assert_eq!(plateau_episode(&rising, 200, 0.05), None);
        // flat curve: plateau from the start
        let flat = vec![0.4; 2000];
        assert_eq!(plateau_episode(&flat, 200, 0.05), Some(200));
    }
}
