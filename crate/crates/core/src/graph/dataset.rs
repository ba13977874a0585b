//! Dataset records and their line-delimited container.
//!
//! The first line is a [`DatasetHeader`]; every following line is one
//! [`DatasetRecord`].

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::build::{
    build_dynamic_graph, build_static_graph, DrvSelection, DynamicGraph, GraphConfig, InfSource,
    StaticGraph,
};
use super::matrix::Matrix;
use super::target::TravelTimeTarget;
use crate::error::{Error, Result};
use crate::sim::{Direction, Scenario, SimulationLog, TmcMode};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// Scenario descriptors used for bucketing; index 0 is eastbound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Covariates {
    /// s
    pub cycle: f64,
    /// Completed corridor journeys per direction.
    pub volume: [f64; 2],
    /// Mean through-phase green over intersections, percent of the cycle.
    pub max_green_pct: [f64; 2],
}

impl Covariates {
    pub fn new(scenario: &Scenario, log: &SimulationLog) -> Self {
        let cycle = scenario.cycle();
        let k = scenario.plans.len() as f64;
        let pct = |d: Direction| {
            scenario
                .plans
                .iter()
                .map(|p| p.phase(d.through_phase()).max_green / p.cycle * 100.0)
                .sum::<f64>()
                / k
        };
        Self {
            cycle,
            volume: [
                log.travel_times(Direction::East).len() as f64,
                log.travel_times(Direction::West).len() as f64,
            ],
            max_green_pct: [pct(Direction::East), pct(Direction::West)],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRecord {
    pub id: String,
    pub covariates: Covariates,
    /// Unmasked static graph.
    pub static_graph: StaticGraph,
    /// Static graph as the imputation model sees it.
    pub masked_graph: StaticGraph,
    /// Ground-truth counts at the masked cells, `K x 4`.
    pub supervision: Matrix,
    /// Dynamic graph with ground-truth counts.
    pub dynamic_graph: DynamicGraph,
    pub target: TravelTimeTarget,
    /// Timing and behavior needed to rebuild the dynamic graph from
    /// imputed counts.
    pub scenario: Scenario,
}

impl DatasetRecord {
    /// Dynamic graph with `imputed` counts in place of the masked cells.
    pub fn dynamic_with(&self, imputed: &Matrix, drv: DrvSelection) -> Result<DynamicGraph> {
        build_dynamic_graph(&self.scenario, &self.static_graph, drv, InfSource::Imputed(imputed))
    }
}

pub fn build_record(
    id: impl Into<String>,
    scenario: &Scenario,
    log: &SimulationLog,
    config: &GraphConfig,
) -> Result<DatasetRecord> {
    let target = TravelTimeTarget::from_samples(
        &log.travel_times(Direction::East),
        &log.travel_times(Direction::West),
    )?;
    let static_graph = build_static_graph(log, scenario, config)?;
    let masked_graph = static_graph.masked(scenario, config.drv);
    let dynamic_graph = build_dynamic_graph(scenario, &static_graph, config.drv, InfSource::GroundTruth)?;
    Ok(DatasetRecord {
        id: id.into(),
        covariates: Covariates::new(scenario, log),
        supervision: static_graph.supervision(),
        masked_graph,
        static_graph,
        dynamic_graph,
        target,
        scenario: scenario.clone(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetHeader {
    pub schema_version: u32,
    pub intersections: usize,
    pub edge_dim: usize,
    pub window: f64,
    pub tmc_mode: TmcMode,
    pub drv: DrvSelection,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<DatasetRecord>,
}

impl Dataset {
    pub fn new(intersections: usize, config: &GraphConfig, tmc_mode: TmcMode) -> Self {
        Self {
            header: DatasetHeader {
                schema_version: DATASET_SCHEMA_VERSION,
                intersections,
                edge_dim: config.drv.edge_dim(),
                window: config.window,
                tmc_mode,
                drv: config.drv,
            },
            records: Vec::new(),
        }
    }

    pub fn graph_config(&self) -> GraphConfig {
        GraphConfig {
            window: self.header.window,
            drv: self.header.drv,
        }
    }

    pub fn push(&mut self, record: DatasetRecord) -> Result<()> {
        let h = &self.header;
        if record.static_graph.intersections() != h.intersections || record.static_graph.e.cols != h.edge_dim {
            return Err(Error::Data(format!(
                "record {} does not match the dataset shape ({} nodes, edge width {})",
                record.id, h.intersections, h.edge_dim
            )));
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn write_to<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        serde_json::to_writer(&mut *out, &self.header)?;
        out.write_all(b"\n")?;
        for r in &self.records {
            serde_json::to_writer(&mut *out, r)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        self.write_to(&mut out).map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(file), path)
    }

    /// `path` is only used in error messages.
    pub fn read_from<R: BufRead>(mut reader: R, path: &Path) -> Result<Self> {
        let mut buf = String::new();
        let mut offset = 0u64;
        let parse_err = |record: usize, offset: u64, message: String| Error::Parse {
            path: path.to_path_buf(),
            record,
            offset,
            message,
        };
        let n = reader.read_line(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(parse_err(0, 0, "missing dataset header".into()));
        }
        let header: DatasetHeader =
            serde_json::from_str(buf.trim_end()).map_err(|e| parse_err(0, 0, e.to_string()))?;
        if header.schema_version != DATASET_SCHEMA_VERSION {
            return Err(parse_err(
                0,
                0,
                format!(
                    "dataset schema version {} (expected {DATASET_SCHEMA_VERSION})",
                    header.schema_version
                ),
            ));
        }
        offset += n as u64;
        let mut dataset = Dataset {
            header,
            records: Vec::new(),
        };
        loop {
            buf.clear();
            let n = reader.read_line(&mut buf).map_err(|e| Error::io(path, e))?;
            if n == 0 {
                break;
            }
            let index = dataset.records.len();
            let record: DatasetRecord = serde_json::from_str(buf.trim_end())
                .map_err(|e| parse_err(index, offset, e.to_string()))?;
            dataset
                .push(record)
                .map_err(|e| parse_err(index, offset, e.to_string()))?;
            offset += n as u64;
        }
        Ok(dataset)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::fixtures::simple_scenario;
    use crate::sim::run_scenario;

    fn dataset(n: usize) -> Dataset {
        let config = GraphConfig::default();
        let mut d = Dataset::new(4, &config, TmcMode::Real);
        for i in 0..n {
            let mut s = simple_scenario(4, 500.0);
            s.seed = i as u64;
            let log = run_scenario(&s).unwrap();
            d.push(build_record(format!("s{i}"), &s, &log, &config).unwrap())
                .unwrap();
        }
        d
    }

    #[test]
    fn round_trip_is_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let d = dataset(2);
        d.save(&path).unwrap();
        assert_eq!(Dataset::load(&path).unwrap(), d);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let d = dataset(0);
        d.save(&path).unwrap();
        let back = Dataset::load(&path).unwrap();
        assert!(back.is_empty());
        assert_eq!(back, d);
    }

    #[test]
    fn truncated_record_names_its_index() {
        let d = dataset(2);
        let mut bytes = Vec::new();
        d.write_to(&mut bytes).unwrap();
        let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        let first_len = bytes[header_len..].iter().position(|&b| b == b'\n').unwrap() + 1;
        bytes.truncate(bytes.len() - 40);
        let err = Dataset::read_from(&bytes[..], Path::new("d.jsonl")).unwrap_err();
        match err {
            Error::Parse { record, offset, .. } => {
                assert_eq!(record, 1);
                assert_eq!(offset as usize, header_len + first_len);
            }
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut d = dataset(0);
        d.header.schema_version = 99;
        let mut bytes = Vec::new();
        d.write_to(&mut bytes).unwrap();
        assert!(Dataset::read_from(&bytes[..], Path::new("d")).is_err());
    }

    #[test]
    fn supervision_matches_unmasked_counts() {
        let d = dataset(1);
        let r = &d.records[0];
        for k in 0..4 {
            for (j, p) in super::super::MASKED_PHASES.iter().enumerate() {
                assert_eq!(r.supervision.get(k, j), r.static_graph.x.get(k, usize::from(*p) - 1));
                assert_eq!(r.masked_graph.x.get(k, usize::from(*p) - 1), 0.0);
            }
        }
    }
}
