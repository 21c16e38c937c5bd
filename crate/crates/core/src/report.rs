//! Trajectory logs, deviation statistics, and the replication harness.
//!
//! Every statistic is computed from `TrajectoryRow` records, the same data
//! the CSV export carries, so a report recomputed from an exported file
//! equals the in-memory report exactly.

use serde::{Deserialize, Serialize};

use crate::engine::{
    run_episode, BaselineSource, ControllerKind, EnvConfig, EpisodeLog, EpisodeParams,
};
use crate::error::{Error, Result};
use crate::corridor::PositionKind;
use crate::nn::seeded_rng;
use crate::policy::{ActorCritic, PolicySource};

/// One line of the trajectory export.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    /// 1-based bus index.
    pub bus: usize,
    /// 1-based loop count.
    pub loop_idx: usize,
    /// 1-based position within the loop.
    pub position: usize,
    pub kind: PositionKind,
    pub scheduled: f64,
    pub actual: f64,
    pub schedule_dev: f64,
    pub headway_dev: f64,
    pub holding: f64,
    pub signal: f64,
    pub speed: f64,
    pub delay: f64,
    pub reward: f64,
}

pub fn rows_from_log(log: &EpisodeLog) -> Vec<TrajectoryRow> {
    let mut rows = Vec::with_capacity(log.outcomes.iter().map(Vec::len).sum());
    for bus_rows in &log.outcomes {
        for o in bus_rows {
            rows.push(TrajectoryRow {
                bus: o.bus + 1,
                loop_idx: o.loop_idx + 1,
                position: o.pos_in_loop + 1,
                kind: o.kind,
                scheduled: o.scheduled,
                actual: o.actual,
                schedule_dev: o.schedule_dev,
                headway_dev: o.headway_dev,
                holding: o.action.holding,
                signal: o.action.signal,
                speed: o.action.speed,
                delay: o.delay,
                reward: o.reward,
            });
        }
    }
    rows
}

pub const TRAJECTORY_HEADER: &str =
    "bus,loop,position,kind,scheduled_t,actual_t,e,d,u_b,u_k,u_c,w,reward";

/// CSV export. Floats are written in shortest round-trip form, so parsing
/// the file back reproduces every value bit-exactly.
pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 64);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
            r.bus,
            r.loop_idx,
            r.position,
            r.kind.label(),
            r.scheduled,
            r.actual,
            r.schedule_dev,
            r.headway_dev,
            r.holding,
            r.signal,
            r.speed,
            r.delay,
            r.reward
        ));
    }
    out
}

pub fn parse_trajectory_csv(text: &str, origin: &str) -> Result<Vec<TrajectoryRow>> {
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::Parse {
        path: origin.into(),
        message: "empty trajectory file".into(),
    })?;
    if header != TRAJECTORY_HEADER {
        return Err(Error::Parse {
            path: origin.into(),
            message: format!("unexpected header: {header}"),
        });
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 13 {
            return Err(Error::Parse {
                path: origin.into(),
                message: format!("line {}: expected 13 fields, got {}", lineno + 2, fields.len()),
            });
        }
        let bad = |what: &str| Error::Parse {
            path: origin.into(),
            message: format!("line {}: bad {what}", lineno + 2),
        };
        rows.push(TrajectoryRow {
            bus: fields[0].parse().map_err(|_| bad("bus"))?,
            loop_idx: fields[1].parse().map_err(|_| bad("loop"))?,
            position: fields[2].parse().map_err(|_| bad("position"))?,
            kind: PositionKind::from_label(fields[3]).ok_or_else(|| bad("kind"))?,
            scheduled: fields[4].parse().map_err(|_| bad("scheduled_t"))?,
            actual: fields[5].parse().map_err(|_| bad("actual_t"))?,
            schedule_dev: fields[6].parse().map_err(|_| bad("e"))?,
            headway_dev: fields[7].parse().map_err(|_| bad("d"))?,
            holding: fields[8].parse().map_err(|_| bad("u_b"))?,
            signal: fields[9].parse().map_err(|_| bad("u_k"))?,
            speed: fields[10].parse().map_err(|_| bad("u_c"))?,
            delay: fields[11].parse().map_err(|_| bad("w"))?,
            reward: fields[12].parse().map_err(|_| bad("reward"))?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesStats {
    pub max_abs: f64,
    pub mean_abs: f64,
    pub p95_abs: f64,
}

fn series_stats(values: &[f64]) -> Result<SeriesStats> {
    if values.is_empty() {
        return Err(Error::Domain("no samples after warm-up exclusion".into()));
    }
    let mut abs: Vec<f64> = values.iter().map(|v| v.abs()).collect();
    abs.sort_by(|a, b| a.partial_cmp(b).expect("finite deviations"));
    let n = abs.len();
    let p95_index = ((0.95 * n as f64).ceil() as usize).clamp(1, n) - 1;
    Ok(SeriesStats {
        max_abs: abs[n - 1],
        mean_abs: abs.iter().sum::<f64>() / n as f64,
        p95_abs: abs[p95_index],
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationStats {
    pub replication: usize,
    pub schedule_dev: SeriesStats,
    pub headway_dev: SeriesStats,
    pub mean_reward: f64,
}

/// Mean control effort per station block, pooled over replications (the
/// volume-cost sensitivity view).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StationForces {
    pub station: usize,
    pub volume_cost: f64,
    pub mean_holding: f64,
    pub mean_abs_signal: f64,
    pub mean_abs_speed: f64,
    pub mean_abs_schedule_dev: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PooledStats {
    pub schedule_dev: SeriesStats,
    pub headway_dev: SeriesStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    pub scenario: String,
    pub controller: String,
    pub seed: u64,
    pub replications: usize,
    /// Positions of each bus's first loop excluded from statistics.
    pub warmup_positions: usize,
    pub per_replication: Vec<ReplicationStats>,
    pub pooled: PooledStats,
    pub per_station: Vec<StationForces>,
}

/// Infers block structure from the rows: each position belongs to the block
/// of the latest station at or before it.
fn block_table(rows: &[TrajectoryRow]) -> (usize, Vec<usize>) {
    let loop_len = rows.iter().map(|r| r.position).max().unwrap_or(0);
    let mut kind_by_pos = vec![None; loop_len];
    for r in rows {
        kind_by_pos[r.position - 1] = Some(r.kind);
    }
    let mut blocks = vec![0usize; loop_len];
    let mut current = 0usize;
    let mut seen_station = false;
    for (i, k) in kind_by_pos.iter().enumerate() {
        if *k == Some(PositionKind::Station) {
            current = if seen_station { current + 1 } else { 0 };
            seen_station = true;
        }
        blocks[i] = current;
    }
    (loop_len, blocks)
}

/// Deterministic statistics over one or more replication logs. Rows inside
/// each bus's warm-up window (its first `warmup_fraction` of a loop) are
/// excluded from every statistic.
pub fn report_metrics(
    replications: &[Vec<TrajectoryRow>],
    volume_costs: &[f64],
    warmup_fraction: f64,
    scenario: &str,
    controller: &str,
    seed: u64,
) -> Result<DeviationReport> {
    if replications.is_empty() || replications.iter().any(|r| r.is_empty()) {
        return Err(Error::Domain("cannot build a report from an empty log".into()));
    }
    let (loop_len, blocks) = block_table(&replications[0]);
    let warmup_positions = (loop_len as f64 * warmup_fraction).floor() as usize;
    let included = |r: &TrajectoryRow| (r.loop_idx - 1) * loop_len + (r.position - 1) >= warmup_positions;

    let mut per_replication = Vec::with_capacity(replications.len());
    let mut pooled_e = Vec::new();
    let mut pooled_d = Vec::new();
    let n_stations = blocks.iter().max().map(|b| b + 1).unwrap_or(0);
    let mut station_acc = vec![(0.0f64, 0.0f64, 0.0f64, 0.0f64, 0usize); n_stations];
    let mut holding_counts = vec![0usize; n_stations];

    for (rep, rows) in replications.iter().enumerate() {
        let mut e = Vec::new();
        let mut d = Vec::new();
        let mut reward_acc = 0.0;
        let mut n_rows = 0usize;
        for r in rows.iter().filter(|r| included(r)) {
            e.push(r.schedule_dev);
            d.push(r.headway_dev);
            reward_acc += r.reward;
            n_rows += 1;
            let b = blocks[r.position - 1];
            match r.kind {
                PositionKind::Station => {
                    station_acc[b].0 += r.holding;
                    station_acc[b].3 += r.schedule_dev.abs();
                    holding_counts[b] += 1;
                }
                PositionKind::SignalizedIntersection => {
                    station_acc[b].1 += r.signal.abs();
                    station_acc[b].4 += 1;
                }
                PositionKind::RoadSegment => {
                    station_acc[b].2 += r.speed.abs();
                }
            }
        }
        per_replication.push(ReplicationStats {
            replication: rep,
            schedule_dev: series_stats(&e)?,
            headway_dev: series_stats(&d)?,
            mean_reward: reward_acc / n_rows.max(1) as f64,
        });
        pooled_e.extend_from_slice(&e);
        pooled_d.extend_from_slice(&d);
    }

    let per_station = (0..n_stations)
        .map(|b| {
            let (hold, signal, speed, abs_e, signal_n) = station_acc[b];
            let stations_n = holding_counts[b].max(1) as f64;
            StationForces {
                station: b + 1,
                volume_cost: volume_costs.get(b).copied().unwrap_or(0.0),
                mean_holding: hold / stations_n,
                mean_abs_signal: signal / (signal_n as f64).max(1.0),
                mean_abs_speed: speed / stations_n,
                mean_abs_schedule_dev: abs_e / stations_n,
            }
        })
        .collect();

    Ok(DeviationReport {
        scenario: scenario.to_string(),
        controller: controller.to_string(),
        seed,
        replications: replications.len(),
        warmup_positions,
        per_replication,
        pooled: PooledStats {
            schedule_dev: series_stats(&pooled_e)?,
            headway_dev: series_stats(&pooled_d)?,
        },
        per_station,
    })
}

/// Evaluation settings: seeded replications with a warm-up exclusion.
#[derive(Debug, Clone, Copy)]
pub struct EvalSettings {
    pub replications: usize,
    pub seed: u64,
    pub warmup_fraction: f64,
    /// Sample the policy instead of acting on its mean.
    pub stochastic: bool,
}

pub struct EvalRun {
    pub rows_per_replication: Vec<Vec<TrajectoryRow>>,
    pub report: DeviationReport,
}

const EVAL_RNG_CHANNEL: u64 = 0xE7A1;

/// Runs seeded replications of a scenario under one controller and builds
/// the deviation report. A model is required exactly for the learned
/// controller.
pub fn evaluate(
    env: &EnvConfig,
    controller: ControllerKind,
    model: Option<&ActorCritic>,
    fleet_size: usize,
    loops: usize,
    settings: &EvalSettings,
    scenario_name: &str,
) -> Result<EvalRun> {
    if (controller == ControllerKind::LearnedPolicy) != model.is_some() {
        return Err(Error::Config(
            "a checkpoint is required exactly when the controller is the learned policy".into(),
        ));
    }
    if settings.replications == 0 {
        return Err(Error::Config("replications must be at least 1".into()));
    }
    let mut rows_per_replication = Vec::with_capacity(settings.replications);
    for rep in 0..settings.replications {
        let params = EpisodeParams {
            fleet_size,
            loops,
            seed: settings.seed,
            worker: 0,
            episode: rep as u64,
        };
        let log = match controller {
            ControllerKind::LearnedPolicy => {
                let model = model.expect("validated above");
                let mut source = if settings.stochastic {
                    PolicySource::stochastic(
                        model,
                        env.mask,
                        seeded_rng(&[settings.seed, EVAL_RNG_CHANNEL, rep as u64]),
                    )
                } else {
                    PolicySource::deterministic(model, env.mask)
                };
                run_episode(env, &mut source, &params)?
            }
            baseline => {
                let mut source = BaselineSource::new(baseline, env.headway_gain)?;
                run_episode(env, &mut source, &params)?
            }
        };
        rows_per_replication.push(rows_from_log(&log));
    }
    let report = report_metrics(
        &rows_per_replication,
        &env.block_volume_cost,
        settings.warmup_fraction,
        scenario_name,
        controller.label(),
        settings.seed,
    )?;
    Ok(EvalRun {
        rows_per_replication,
        report,
    })
}

/// Long-format plot series (deviation curves, control-force traces, the
/// trajectory diagram, and the volume-cost bars) for the first replication.
pub fn plot_series_csv(rows: &[TrajectoryRow], volume_costs: &[f64]) -> String {
    let (loop_len, blocks) = block_table(rows);
    let mut out = String::from("series,bus,x,y\n");
    let n_stations = blocks.iter().max().map(|b| b + 1).unwrap_or(0);
    let station_x = |r: &TrajectoryRow| (r.loop_idx - 1) * n_stations + blocks[r.position - 1] + 1;
    let _ = loop_len;
    for r in rows {
        let x = station_x(r);
        match r.kind {
            PositionKind::Station => {
                out.push_str(&format!("trajectory_scheduled,{},{},{}\n", r.bus, x, r.scheduled));
                out.push_str(&format!("trajectory_actual,{},{},{}\n", r.bus, x, r.actual));
                out.push_str(&format!("schedule_deviation,{},{},{}\n", r.bus, x, r.schedule_dev));
                out.push_str(&format!("headway_deviation,{},{},{}\n", r.bus, x, r.headway_dev));
                out.push_str(&format!("holding_force,{},{},{}\n", r.bus, x, r.holding));
            }
            PositionKind::SignalizedIntersection => {
                out.push_str(&format!("signal_force,{},{},{}\n", r.bus, x, r.signal));
            }
            PositionKind::RoadSegment => {
                out.push_str(&format!("speed_force,{},{},{}\n", r.bus, x, r.speed));
            }
        }
    }
    for (b, q) in volume_costs.iter().enumerate() {
        out.push_str(&format!("volume_cost,0,{},{}\n", b + 1, q));
    }
    out
}
