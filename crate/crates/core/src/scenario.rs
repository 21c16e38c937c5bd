//! Scenario files: a self-contained, versioned description of one
//! experiment (corridor, disturbances, reward coefficients, control caps,
//! volume costs, fleet geometry, training and evaluation settings).
//!
//! The format is TOML with a mandatory `schema_version`; unknown fields are
//! rejected so a typo cannot silently fall back to a default.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::control::{volume_cost, ActionCaps, IntersectionVolumeProfile};
use crate::corridor::{BlockSpec, CorridorConfig};
use crate::disturbance::{TruncatedNormalSpec, UniformSpec};
use crate::engine::{ControllerKind, EnvConfig, StrategyMask};
use crate::error::{Error, Result};
use crate::observation::CostCoefficients;
use crate::trainer::{TrainGeometry, TrainerConfig};

pub const SCENARIO_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationEntry {
    pub travel_time_s: f64,
    pub demand_rate: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorridorSection {
    pub planned_headway_s: f64,
    pub slack_s: f64,
    pub signals_per_block: usize,
    /// Block length is `travel_time * nominal_speed`.
    pub nominal_speed_mps: f64,
    pub speed_min_mps: f64,
    pub speed_max_mps: f64,
    pub stations: Vec<StationEntry>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceSection {
    pub delay_mean_s: f64,
    pub delay_stddev_s: f64,
    pub delay_lower_s: f64,
    pub delay_upper_s: f64,
    pub demand_lower: f64,
    pub demand_upper: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    pub alpha_schedule: f64,
    pub alpha_headway: f64,
    pub alpha_holding: f64,
    pub alpha_signal: f64,
    pub alpha_speed: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControlSection {
    #[serde(default = "default_cap")]
    pub holding_max_s: f64,
    #[serde(default = "default_cap")]
    pub signal_max_s: f64,
    #[serde(default = "default_downstream")]
    pub downstream_buses: usize,
    #[serde(default = "default_headway_gain")]
    pub headway_rule_gain: f64,
}

fn default_cap() -> f64 {
    20.0
}
fn default_downstream() -> usize {
    5
}
fn default_headway_gain() -> f64 {
    0.5
}

impl Default for ControlSection {
    fn default() -> Self {
        ControlSection {
            holding_max_s: default_cap(),
            signal_max_s: default_cap(),
            downstream_buses: default_downstream(),
            headway_rule_gain: default_headway_gain(),
        }
    }
}

/// Either a direct per-station volume-cost table or per-intersection phase
/// profiles the cost is computed from. Both paths produce identical
/// downstream behavior for equal cost values.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VolumeSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_override: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intersections: Option<Vec<Vec<IntersectionVolumeProfile>>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FleetSection {
    pub buses: usize,
    pub loops: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    #[serde(default = "default_train_buses")]
    pub buses: usize,
    #[serde(default = "default_train_loops")]
    pub loops: usize,
    #[serde(default = "default_episodes")]
    pub episodes: usize,
    #[serde(default = "default_workers")]
    pub workers: usize,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_minibatch")]
    pub minibatch: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_clip")]
    pub clip: f64,
    #[serde(default = "default_discount")]
    pub discount: f64,
    #[serde(default = "default_normalize")]
    pub normalize_advantage: bool,
    #[serde(default = "default_hidden")]
    pub hidden: [usize; 2],
    #[serde(default = "default_checkpoint_every")]
    pub checkpoint_every: usize,
}

fn default_train_buses() -> usize {
    6
}
fn default_train_loops() -> usize {
    1
}
fn default_episodes() -> usize {
    2000
}
fn default_workers() -> usize {
    4
}
fn default_epochs() -> usize {
    4
}
fn default_minibatch() -> usize {
    256
}
fn default_learning_rate() -> f64 {
    1e-5
}
fn default_clip() -> f64 {
    0.2
}
fn default_discount() -> f64 {
    0.99
}
fn default_normalize() -> bool {
    true
}
fn default_hidden() -> [usize; 2] {
    [64, 64]
}
fn default_checkpoint_every() -> usize {
    500
}

impl Default for TrainingSection {
    fn default() -> Self {
        TrainingSection {
            buses: default_train_buses(),
            loops: default_train_loops(),
            episodes: default_episodes(),
            workers: default_workers(),
            epochs: default_epochs(),
            minibatch: default_minibatch(),
            learning_rate: default_learning_rate(),
            clip: default_clip(),
            discount: default_discount(),
            normalize_advantage: default_normalize(),
            hidden: default_hidden(),
            checkpoint_every: default_checkpoint_every(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationSection {
    #[serde(default = "default_replications")]
    pub replications: usize,
    #[serde(default = "default_warmup")]
    pub warmup_fraction: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_controller")]
    pub controller: ControllerKind,
}

fn default_replications() -> usize {
    20
}
fn default_warmup() -> f64 {
    0.5
}
fn default_seed() -> u64 {
    42
}
fn default_controller() -> ControllerKind {
    ControllerKind::NoControl
}

impl Default for EvaluationSection {
    fn default() -> Self {
        EvaluationSection {
            replications: default_replications(),
            warmup_fraction: default_warmup(),
            seed: default_seed(),
            controller: default_controller(),
        }
    }
}

/// On-disk scenario document.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub name: String,
    pub corridor: CorridorSection,
    pub disturbance: DisturbanceSection,
    pub cost: CostSection,
    #[serde(default)]
    pub control: ControlSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub volume: Option<VolumeSection>,
    pub fleet: FleetSection,
    #[serde(default)]
    pub training: TrainingSection,
    #[serde(default)]
    pub evaluation: EvaluationSection,
}

/// Fully validated scenario: simulator configuration plus run settings.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub env: EnvConfig,
    pub fleet_size: usize,
    pub loops: usize,
    pub train_geometry: TrainGeometry,
    pub trainer: TrainerConfig,
    pub replications: usize,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub controller: ControllerKind,
    /// Normalized document with every default filled in.
    pub effective: ScenarioFile,
}

impl Scenario {
    pub fn effective_toml(&self) -> Result<String> {
        toml::to_string_pretty(&self.effective)
            .map_err(|e| Error::Internal(format!("scenario echo failed: {e}")))
    }
}

pub fn scenario_from_str(text: &str, origin: &str) -> Result<Scenario> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse {
        path: origin.to_string(),
        message: e.to_string(),
    })?;
    build_scenario(file)
}

pub fn load_scenario(path: &Path) -> Result<Scenario> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
    scenario_from_str(&text, &path.display().to_string())
}

fn build_scenario(file: ScenarioFile) -> Result<Scenario> {
    if file.schema_version != SCENARIO_SCHEMA {
        return Err(Error::Config(format!(
            "unsupported schema_version {} (this build reads {SCENARIO_SCHEMA})",
            file.schema_version
        )));
    }
    let c = &file.corridor;
    if c.stations.is_empty() {
        return Err(Error::Config("corridor.stations is empty".into()));
    }
    if !(c.nominal_speed_mps > 0.0) {
        return Err(Error::Config("corridor.nominal_speed_mps must be positive".into()));
    }
    let blocks: Vec<BlockSpec> = c
        .stations
        .iter()
        .map(|s| BlockSpec {
            demand_rate: s.demand_rate,
            slack: c.slack_s,
            travel_time: s.travel_time_s,
            distance: s.travel_time_s * c.nominal_speed_mps,
            signals: c.signals_per_block,
        })
        .collect();
    let corridor = CorridorConfig::from_blocks(&blocks, c.planned_headway_s, file.fleet.buses)?;

    let n_stations = c.stations.len();
    let q_table = resolve_volume_costs(file.volume.as_ref(), n_stations, c.signals_per_block)?;

    let env = EnvConfig::new(
        corridor,
        TruncatedNormalSpec {
            mean: file.disturbance.delay_mean_s,
            stddev: file.disturbance.delay_stddev_s,
            lower: file.disturbance.delay_lower_s,
            upper: file.disturbance.delay_upper_s,
        },
        UniformSpec {
            lower: file.disturbance.demand_lower,
            upper: file.disturbance.demand_upper,
        },
        CostCoefficients {
            schedule: file.cost.alpha_schedule,
            headway: file.cost.alpha_headway,
            holding: file.cost.alpha_holding,
            signal: file.cost.alpha_signal,
            speed: file.cost.alpha_speed,
        },
        ActionCaps {
            holding_max: file.control.holding_max_s,
            signal_max: file.control.signal_max_s,
        },
        c.speed_min_mps,
        c.speed_max_mps,
        q_table,
        file.control.downstream_buses,
        StrategyMask::all(),
        file.control.headway_rule_gain,
    )?;

    if file.fleet.loops == 0 {
        return Err(Error::Config("fleet.loops must be at least 1".into()));
    }
    let trainer = TrainerConfig {
        episodes: file.training.episodes,
        workers: file.training.workers,
        epochs: file.training.epochs,
        minibatch: file.training.minibatch,
        learning_rate: file.training.learning_rate,
        clip: file.training.clip,
        discount: file.training.discount,
        normalize_advantage: file.training.normalize_advantage,
        hidden: file.training.hidden,
        checkpoint_every: file.training.checkpoint_every,
    };
    trainer.validate()?;
    if !(0.0..1.0).contains(&file.evaluation.warmup_fraction) {
        return Err(Error::Config(format!(
            "evaluation.warmup_fraction must lie in [0, 1), got {}",
            file.evaluation.warmup_fraction
        )));
    }
    if file.evaluation.replications == 0 {
        return Err(Error::Config("evaluation.replications must be at least 1".into()));
    }

    Ok(Scenario {
        name: file.name.clone(),
        env,
        fleet_size: file.fleet.buses,
        loops: file.fleet.loops,
        train_geometry: TrainGeometry {
            fleet_size: file.training.buses,
            loops: file.training.loops,
        },
        trainer,
        replications: file.evaluation.replications,
        warmup_fraction: file.evaluation.warmup_fraction,
        seed: file.evaluation.seed,
        controller: file.evaluation.controller,
        effective: file,
    })
}

/// Per-station volume costs from the override table or phase profiles; a
/// scenario may give at most one of the two.
fn resolve_volume_costs(
    volume: Option<&VolumeSection>,
    n_stations: usize,
    signals_per_block: usize,
) -> Result<Vec<f64>> {
    let default_q = if signals_per_block > 0 { 1.0 } else { 0.0 };
    let Some(v) = volume else {
        return Ok(vec![default_q; n_stations]);
    };
    match (&v.q_override, &v.intersections) {
        (Some(_), Some(_)) => Err(Error::Config(
            "volume.q_override and volume.intersections are mutually exclusive".into(),
        )),
        (Some(q), None) => {
            if q.len() != n_stations {
                return Err(Error::Config(format!(
                    "volume.q_override has {} entries for {} stations",
                    q.len(),
                    n_stations
                )));
            }
            Ok(q.clone())
        }
        (None, Some(profiles)) => {
            if profiles.len() != n_stations {
                return Err(Error::Config(format!(
                    "volume.intersections has {} entries for {} stations",
                    profiles.len(),
                    n_stations
                )));
            }
            profiles.iter().map(|p| volume_cost(p)).collect()
        }
        (None, None) => Ok(vec![default_q; n_stations]),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scenario_dir() -> std::path::PathBuf {
        std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios")
    }

    #[test]
    fn general_scenario_matches_published_setup() {
        let s = load_scenario(&scenario_dir().join("general.scenario")).unwrap();
        assert_eq!(s.env.corridor.planned_headway, 300.0);
        assert_eq!(s.env.corridor.n_stations, 20);
        assert_eq!(s.fleet_size, 19);
        assert_eq!(s.loops, 2);
        assert_eq!(s.env.delay.lower, -5.0);
        assert_eq!(s.env.delay.upper, 30.0);
        assert_eq!(s.env.demand_noise.lower, -0.02);
        assert_eq!(s.env.demand_noise.upper, 0.02);
        assert_eq!(s.env.coeffs.schedule, 0.01);
        assert_eq!(s.env.coeffs.signal, 0.01);
        assert_eq!(s.env.downstream_count, 5);
        assert_eq!(s.train_geometry.fleet_size, 6);
        assert_eq!(s.trainer.clip, 0.2);
        assert_eq!(s.trainer.discount, 0.99);
        assert_eq!(s.trainer.minibatch, 256);
        // station 1 profile from the bundled travel-time table
        let station = s.env.corridor.position(0);
        assert_eq!(station.profile.demand_rate, 0.08);
        let road = s.env.corridor.position(1);
        assert_eq!(road.profile.travel_time, 257.0);
        assert_eq!(s.env.block_volume_cost, vec![1.0; 20]);
    }

    #[test]
    fn high_volume_scenario_has_table_costs() {
        let s = load_scenario(&scenario_dir().join("high-volume.scenario")).unwrap();
        let expect = [
            80.0, 60.0, 90.0, 70.0, 80.0, 90.0, 80.0, 90.0, 60.0, 80.0, 50.0, 90.0, 100.0, 30.0,
            90.0, 80.0, 70.0, 90.0, 80.0, 70.0,
        ];
        assert_eq!(s.env.block_volume_cost, expect);
    }

    #[test]
    fn varying_volume_scenario_has_table_costs() {
        let s = load_scenario(&scenario_dir().join("varying-volume.scenario")).unwrap();
        let expect = [
            1.0, 4.0, 10.0, 3.0, 80.0, 20.0, 7.0, 20.0, 10.0, 3.0, 1.0, 4.0, 20.0, 3.0, 30.0,
            20.0, 80.0, 6.0, 10.0, 3.0,
        ];
        assert_eq!(s.env.block_volume_cost, expect);
        assert_eq!(s.env.block_volume_cost[4], 80.0);
    }

    #[test]
    fn missing_required_field_names_it() {
        let text = r#"
schema_version = 1
name = "broken"
[corridor]
slack_s = 10.0
signals_per_block = 1
nominal_speed_mps = 6.0
speed_min_mps = 5.0
speed_max_mps = 8.0
stations = [ { travel_time_s = 250.0, demand_rate = 0.05 } ]
[disturbance]
delay_mean_s = 10.0
delay_stddev_s = 10.0
delay_lower_s = -5.0
delay_upper_s = 30.0
demand_lower = -0.02
demand_upper = 0.02
[cost]
alpha_schedule = 0.01
alpha_headway = 0.01
alpha_holding = 0.01
alpha_signal = 0.01
alpha_speed = 0.01
[fleet]
buses = 3
loops = 1
"#;
        let err = scenario_from_str(text, "inline").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("planned_headway_s"), "error was: {msg}");
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let base = std::fs::read_to_string(scenario_dir().join("general.scenario")).unwrap();
        let text = format!("{base}\n[mystery]\nvalue = 1\n");
        assert!(scenario_from_str(&text, "inline").is_err());
        let text = base.replace("slack_s", "slack_seconds");
        assert!(scenario_from_str(&text, "inline").is_err());
    }

    #[test]
    fn schema_version_is_mandatory_and_checked() {
        let base = std::fs::read_to_string(scenario_dir().join("general.scenario")).unwrap();
        let text = base.replace("schema_version = 1", "schema_version = 99");
        assert!(scenario_from_str(&text, "inline").is_err());
        let text = base.replace("schema_version = 1\n", "");
        assert!(scenario_from_str(&text, "inline").is_err());
    }

    #[test]
    fn profile_path_and_override_path_agree() {
        let base = std::fs::read_to_string(scenario_dir().join("general.scenario")).unwrap();
        let q = (0.9 + 0.5 + 0.4) / 0.9;

        let mut profiles = String::from("[volume]\nintersections = [\n");
        for _ in 0..20 {
            profiles.push_str("  [ { phase_ratios = [0.9, 0.5, 0.4], major_phase = 0 } ],\n");
        }
        profiles.push_str("]\n\n[fleet]");
        let s = scenario_from_str(&base.replace("[fleet]", &profiles), "inline").unwrap();
        for v in &s.env.block_volume_cost {
            assert!((v - q).abs() < 1e-12);
        }

        let override_text = format!("[volume]\nq_override = [{}]\n\n[fleet]", vec![q.to_string(); 20].join(", "));
        let s2 = scenario_from_str(&base.replace("[fleet]", &override_text), "inline").unwrap();
        assert_eq!(s.env.block_volume_cost, s2.env.block_volume_cost);
    }

    #[test]
    fn effective_echo_round_trips() {
        let s = load_scenario(&scenario_dir().join("general.scenario")).unwrap();
        let echoed = s.effective_toml().unwrap();
        let s2 = scenario_from_str(&echoed, "echo").unwrap();
        assert_eq!(s2.env.block_volume_cost, s.env.block_volume_cost);
        assert_eq!(s2.trainer, s.trainer);
        assert_eq!(s2.seed, s.seed);
    }
}
