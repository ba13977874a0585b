//! Simulation output and its line-delimited JSON encoding.
//!
//! One JSON object per line, discriminated by `"type"`: a single `header`
//! line first, then `detector` lines in time order, then `vehicle` lines in
//! id order.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::scenario::{Approach, Direction};
use crate::error::{Error, Result};

pub const LOG_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema_version: u32,
    pub seed: u64,
    pub intersections: usize,
    pub cycle: f64,
    pub timestep: f64,
    /// Arrivals stop at this time.
    pub duration: f64,
    /// Time at which the run stopped, including the drain period.
    pub end_time: f64,
}

/// A vehicle passing an upstream detector, counted toward the phase that
/// serves its movement at that intersection.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorEvent {
    pub intersection: usize,
    pub phase: u8,
    pub time: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Origin {
    /// Entered at the corridor end upstream of the first intersection.
    Boundary,
    /// Turned onto the arterial from a cross street.
    Side {
        intersection: usize,
        approach: Approach,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleRecord {
    pub id: usize,
    pub direction: Direction,
    pub origin: Origin,
    /// Arrival time at its source, before any entry queueing.
    pub spawn: f64,
    /// Crossing of the first stop line; boundary vehicles only.
    pub entry: Option<f64>,
    /// Crossing of the last stop line by a vehicle with an entry time.
    pub exit: Option<f64>,
    /// Time the vehicle left the network, if it did.
    pub left: Option<f64>,
    pub speed_factor: f64,
}

impl VehicleRecord {
    pub fn travel_time(&self) -> Option<f64> {
        Some(self.exit? - self.entry?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationLog {
    pub header: LogHeader,
    pub detector_events: Vec<DetectorEvent>,
    pub vehicles: Vec<VehicleRecord>,
}

impl SimulationLog {
    pub fn spawned(&self) -> usize {
        self.vehicles.len()
    }

    pub fn exited(&self) -> usize {
        self.vehicles.iter().filter(|v| v.left.is_some()).count()
    }

    pub fn on_network(&self) -> usize {
        self.vehicles.iter().filter(|v| v.left.is_none()).count()
    }

    /// Corridor travel times of completed journeys, in vehicle id order.
    pub fn travel_times(&self, direction: Direction) -> Vec<f64> {
        extract_travel_times(self, direction)
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let mut line = |entry: LogLine<'_>| -> std::io::Result<()> {
            serde_json::to_writer(&mut *out, &entry)?;
            out.write_all(b"\n")
        };
        line(LogLine::Header(std::borrow::Cow::Borrowed(&self.header)))?;
        for e in &self.detector_events {
            line(LogLine::Detector(*e))?;
        }
        for v in &self.vehicles {
            line(LogLine::Vehicle(std::borrow::Cow::Borrowed(v)))?;
        }
        Ok(())
    }

    pub fn read_jsonl(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = BufReader::new(file);
        let mut header = None;
        let mut detector_events = Vec::new();
        let mut vehicles = Vec::new();
        let mut offset = 0u64;
        let mut buf = String::new();
        for record in 0.. {
            buf.clear();
            let n = reader.read_line(&mut buf).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            let parse_err = |message: String| Error::Parse {
                path: path.to_path_buf(),
                record,
                offset,
                message,
            };
            let parsed: LogLine<'static> =
                serde_json::from_str(buf.trim_end()).map_err(|e| parse_err(e.to_string()))?;
            match parsed {
                LogLine::Header(h) if record == 0 => {
                    if h.schema_version != LOG_SCHEMA_VERSION {
                        return Err(parse_err(format!(
                            "log schema version {} (expected {LOG_SCHEMA_VERSION})",
                            h.schema_version
                        )));
                    }
                    header = Some(h.into_owned());
                }
                LogLine::Header(_) => return Err(parse_err("duplicate header".into())),
                _ if header.is_none() => return Err(parse_err("missing header".into())),
                LogLine::Detector(e) => detector_events.push(e),
                LogLine::Vehicle(v) => vehicles.push(v.into_owned()),
            }
            offset += n as u64;
        }
        let header = header.ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            record: 0,
            offset: 0,
            message: "empty log".into(),
        })?;
        Ok(Self {
            header,
            detector_events,
            vehicles,
        })
    }
}

#[derive(Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
enum LogLine<'a> {
    Header(std::borrow::Cow<'a, LogHeader>),
    Detector(DetectorEvent),
    Vehicle(std::borrow::Cow<'a, VehicleRecord>),
}

/// `exit - entry` for every vehicle that completed the corridor in
/// `direction`. Vehicles without an exit are excluded.
pub fn extract_travel_times(log: &SimulationLog, direction: Direction) -> Vec<f64> {
    log.vehicles
        .iter()
        .filter(|v| v.direction == direction)
        .filter_map(VehicleRecord::travel_time)
        .collect()
}

/// Detector events for `(intersection, phase)` with time in `[t0, t1)`.
pub fn aggregate_detector_counts(
    log: &SimulationLog,
    intersection: usize,
    phase: u8,
    t0: f64,
    t1: f64,
) -> usize {
    log.detector_events
        .iter()
        .filter(|e| e.intersection == intersection && e.phase == phase)
        .filter(|e| e.time >= t0 && e.time < t1)
        .count()
}

/// All detector counts in `[t0, t1)` as a `K x 8` table indexed by
/// intersection and phase minus one.
pub fn count_matrix(log: &SimulationLog, t0: f64, t1: f64) -> Vec<[f64; 8]> {
    let mut counts = vec![[0.0; 8]; log.header.intersections];
    for e in &log.detector_events {
        if e.time >= t0 && e.time < t1 {
            counts[e.intersection][usize::from(e.phase) - 1] += 1.0;
        }
    }
    counts
}
