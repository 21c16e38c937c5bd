//! Static corridor description, schedule construction, and deviation arithmetic.
//!
//! A corridor is a loop of positions. Every service block between two
//! consecutive stations is laid out canonically as
//!
//! ```text
//! Station -> RoadSegment -> SignalizedIntersection * n -> next Station
//! ```
//!
//! The block's travel time and length are attributed to the road segment;
//! stations carry demand and slack; intersections carry no nominal travel
//! time. This gives each control force exactly one home position.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PositionKind {
    Station,
    RoadSegment,
    SignalizedIntersection,
}

impl PositionKind {
    pub fn label(&self) -> &'static str {
        match self {
            PositionKind::Station => "station",
            PositionKind::RoadSegment => "road",
            PositionKind::SignalizedIntersection => "signal",
        }
    }

    pub fn from_label(label: &str) -> Option<Self> {
        match label {
            "station" => Some(PositionKind::Station),
            "road" => Some(PositionKind::RoadSegment),
            "signal" => Some(PositionKind::SignalizedIntersection),
            _ => None,
        }
    }
}

/// Per-position static profile. Demand and slack are nonzero only at
/// stations; travel time and distance only at road-bearing positions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationProfile {
    /// Passenger demand rate: dwell seconds per headway second.
    pub demand_rate: f64,
    /// Slack time embedded in the schedule, seconds.
    pub slack: f64,
    /// Average travel time to the next position, seconds.
    pub travel_time: f64,
    /// Distance to the next position, meters.
    pub distance_to_next: f64,
}

impl StationProfile {
    pub fn empty() -> Self {
        StationProfile {
            demand_rate: 0.0,
            slack: 0.0,
            travel_time: 0.0,
            distance_to_next: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Position {
    pub kind: PositionKind,
    pub profile: StationProfile,
}

/// One station-to-station service block, used to assemble a corridor.
#[derive(Debug, Clone, Copy)]
pub struct BlockSpec {
    pub demand_rate: f64,
    pub slack: f64,
    pub travel_time: f64,
    pub distance: f64,
    pub signals: usize,
}

/// Immutable loop description shared read-only by every worker.
#[derive(Debug, Clone)]
pub struct CorridorConfig {
    positions: Vec<Position>,
    /// Block index (station ordinal, 0-based) each position belongs to.
    block_index: Vec<usize>,
    pub planned_headway: f64,
    pub fleet_size: usize,
    pub n_stations: usize,
}

impl CorridorConfig {
    /// Expands station-to-station blocks into the canonical position loop.
    pub fn from_blocks(blocks: &[BlockSpec], planned_headway: f64, fleet_size: usize) -> Result<Self> {
        if blocks.is_empty() {
            return Err(Error::Config("corridor has no stations".into()));
        }
        let mut positions = Vec::new();
        let mut block_index = Vec::new();
        for (b, spec) in blocks.iter().enumerate() {
            positions.push(Position {
                kind: PositionKind::Station,
                profile: StationProfile {
                    demand_rate: spec.demand_rate,
                    slack: spec.slack,
                    travel_time: 0.0,
                    distance_to_next: 0.0,
                },
            });
            block_index.push(b);
            positions.push(Position {
                kind: PositionKind::RoadSegment,
                profile: StationProfile {
                    demand_rate: 0.0,
                    slack: 0.0,
                    travel_time: spec.travel_time,
                    distance_to_next: spec.distance,
                },
            });
            block_index.push(b);
            for _ in 0..spec.signals {
                positions.push(Position {
                    kind: PositionKind::SignalizedIntersection,
                    profile: StationProfile::empty(),
                });
                block_index.push(b);
            }
        }
        let config = CorridorConfig {
            positions,
            block_index,
            planned_headway,
            fleet_size,
            n_stations: blocks.len(),
        };
        config.validate()?;
        Ok(config)
    }

    /// Builds a corridor from an explicit position list (tests and degenerate
    /// layouts). Block indices follow the most recent station.
    pub fn from_positions(
        positions: Vec<Position>,
        planned_headway: f64,
        fleet_size: usize,
    ) -> Result<Self> {
        let mut block_index = Vec::with_capacity(positions.len());
        let mut n_stations = 0usize;
        for p in &positions {
            if p.kind == PositionKind::Station {
                n_stations += 1;
            }
            block_index.push(n_stations.saturating_sub(1));
        }
        let config = CorridorConfig {
            positions,
            block_index,
            planned_headway,
            fleet_size,
            n_stations,
        };
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.positions.is_empty() {
            return Err(Error::Config("corridor has no positions".into()));
        }
        if !(self.planned_headway > 0.0) {
            return Err(Error::Config(format!(
                "planned_headway must be positive, got {}",
                self.planned_headway
            )));
        }
        if self.fleet_size == 0 {
            return Err(Error::Config("fleet_size must be at least 1".into()));
        }
        if self.n_stations == 0 {
            return Err(Error::Config("corridor has no stations".into()));
        }
        for (i, p) in self.positions.iter().enumerate() {
            let pr = &p.profile;
            if !(0.0..1.0).contains(&pr.demand_rate) {
                return Err(Error::Config(format!(
                    "position {i}: demand_rate must lie in [0, 1), got {}",
                    pr.demand_rate
                )));
            }
            if pr.slack < 0.0 {
                return Err(Error::Config(format!("position {i}: negative slack", )));
            }
            if pr.travel_time < 0.0 {
                return Err(Error::Config(format!("position {i}: negative travel_time")));
            }
            match p.kind {
                PositionKind::Station => {}
                PositionKind::RoadSegment => {
                    if pr.demand_rate != 0.0 || pr.slack != 0.0 {
                        return Err(Error::Config(format!(
                            "position {i}: road segment carries demand or slack"
                        )));
                    }
                    if !(pr.travel_time > 0.0) {
                        return Err(Error::Config(format!(
                            "position {i}: road segment needs positive travel_time"
                        )));
                    }
                    if !(pr.distance_to_next > 0.0) {
                        return Err(Error::Config(format!(
                            "position {i}: road segment needs positive distance"
                        )));
                    }
                }
                PositionKind::SignalizedIntersection => {
                    if pr.demand_rate != 0.0 || pr.slack != 0.0 || pr.travel_time != 0.0 {
                        return Err(Error::Config(format!(
                            "position {i}: intersection carries nominal time or demand"
                        )));
                    }
                }
            }
        }
        Ok(())
    }

    pub fn loop_len(&self) -> usize {
        self.positions.len()
    }

    /// Position by index within the loop.
    pub fn position(&self, pos_in_loop: usize) -> &Position {
        &self.positions[pos_in_loop]
    }

    /// Position by global index (wraps around the loop).
    pub fn position_global(&self, global: usize) -> &Position {
        &self.positions[global % self.positions.len()]
    }

    /// Station ordinal (0-based) of the block containing `pos_in_loop`.
    pub fn block_of(&self, pos_in_loop: usize) -> usize {
        self.block_index[pos_in_loop]
    }

    /// Index of the last station in the loop: the terminal, where the
    /// per-bus schedule is re-anchored.
    pub fn terminal_pos_in_loop(&self) -> usize {
        self.positions
            .iter()
            .rposition(|p| p.kind == PositionKind::Station)
            .expect("validated corridor has at least one station")
    }

    /// Scheduled increment from `pos_in_loop` to the next position.
    pub fn schedule_increment(&self, pos_in_loop: usize) -> f64 {
        let p = &self.positions[pos_in_loop].profile;
        p.demand_rate * self.planned_headway + p.travel_time + p.slack
    }

    /// Station ordinal (0-based) if the position is a station.
    pub fn station_ordinal(&self, pos_in_loop: usize) -> Option<usize> {
        if self.positions[pos_in_loop].kind == PositionKind::Station {
            Some(self.block_index[pos_in_loop])
        } else {
            None
        }
    }

    /// Same corridor with a different fleet size (training and evaluation
    /// scenarios share one loop but run different fleets).
    pub fn with_fleet(&self, fleet_size: usize) -> CorridorConfig {
        let mut c = self.clone();
        c.fleet_size = fleet_size;
        c
    }
}

/// Dense scheduled-arrival table over a fixed horizon of loops.
///
/// Bus `i` (0-based) starts at `i * H`; consecutive positions differ by the
/// per-position increment `demand_rate * H + travel_time + slack`.
#[derive(Debug, Clone)]
pub struct ScheduleTable {
    times: Vec<Vec<f64>>,
    pub loop_len: usize,
    pub horizon_loops: usize,
    pub planned_headway: f64,
}

pub fn build_schedule(config: &CorridorConfig, horizon_loops: usize) -> Result<ScheduleTable> {
    config.validate()?;
    if horizon_loops == 0 {
        return Err(Error::Config("horizon_loops must be at least 1".into()));
    }
    let loop_len = config.loop_len();
    let n_positions = horizon_loops * loop_len + 1;
    let mut times = Vec::with_capacity(config.fleet_size);
    for bus in 0..config.fleet_size {
        let mut row = Vec::with_capacity(n_positions);
        let mut t = bus as f64 * config.planned_headway;
        row.push(t);
        for p in 0..horizon_loops * loop_len {
            t += config.schedule_increment(p % loop_len);
            row.push(t);
        }
        times.push(row);
    }
    Ok(ScheduleTable {
        times,
        loop_len,
        horizon_loops,
        planned_headway: config.planned_headway,
    })
}

impl ScheduleTable {
    pub fn n_buses(&self) -> usize {
        self.times.len()
    }

    /// Number of materialized arrivals per bus (the final loop's closing
    /// arrival back at the first station is included).
    pub fn n_positions(&self) -> usize {
        self.horizon_loops * self.loop_len + 1
    }

    pub fn time(&self, bus: usize, global_pos: usize) -> f64 {
        self.times[bus][global_pos]
    }

    /// CSV export with columns (bus, position, scheduled_time).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("bus,position,scheduled_time\n");
        for (bus, row) in self.times.iter().enumerate() {
            for (pos, t) in row.iter().enumerate() {
                out.push_str(&format!("{},{},{}\n", bus + 1, pos, t));
            }
        }
        out
    }
}

/// Signed schedule deviation: actual minus scheduled, positive means late.
pub fn schedule_deviation(actual: f64, scheduled: f64) -> f64 {
    actual - scheduled
}

/// Headway deviation against the k-th downstream bus: the realized spacing
/// minus `k` planned headways. `k = 1` is the plain headway deviation.
pub fn headway_deviation(actual: f64, downstream_actual: f64, k: usize, planned_headway: f64) -> Result<f64> {
    if k == 0 {
        return Err(Error::Domain("headway deviation needs k >= 1".into()));
    }
    Ok((actual - downstream_actual) - k as f64 * planned_headway)
}
