//! Static graph G(A, X, E), mask T and dynamic graph G'(A, X', E').

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};
use crate::sim::{count_matrix, Direction, Scenario, SimulationLog};

/// NEMA phases hidden from the imputation model.
pub const MASKED_PHASES: [u8; 4] = [1, 2, 5, 6];
/// Node features of the static graph: one count per phase.
pub const STATIC_NODE_DIM: usize = 8;
/// Node features of the dynamic graph: cycle, offset ratio, four green
/// ratios and eight counts.
pub const DYNAMIC_NODE_DIM: usize = 14;
/// Column of the first count in a dynamic node row.
pub const DYNAMIC_COUNT_OFFSET: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrvSelection {
    /// accel, decel, min_gap, sigma, tau
    #[default]
    Longitudinal,
    /// All eleven behavior parameters.
    Full,
}

impl DrvSelection {
    pub fn dim(self) -> usize {
        match self {
            DrvSelection::Longitudinal => 5,
            DrvSelection::Full => 11,
        }
    }

    /// Width of an edge feature row: distance, 12 ratios, behavior, density.
    pub fn edge_dim(self) -> usize {
        1 + 12 + self.dim() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphConfig {
    /// Detector aggregation window ending at the end of arrivals, s.
    pub window: f64,
    pub drv: DrvSelection,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            window: 900.0,
            drv: DrvSelection::Longitudinal,
        }
    }
}

/// One directed edge. Entry edges are self-loops on the node where traffic
/// enters the corridor; they carry the entry approach features and take no
/// part in the adjacency matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub direction: Direction,
    pub entry: bool,
    /// m
    pub distance: f64,
}

/// Edges in feature-row order: eastbound entry then eastbound segments,
/// followed by the westbound entry and westbound segments.
pub fn corridor_edges(scenario: &Scenario) -> Vec<Edge> {
    let c = &scenario.corridor;
    let k = c.intersections;
    let mut edges = Vec::with_capacity(2 * k);
    edges.push(Edge {
        src: 0,
        dst: 0,
        direction: Direction::East,
        entry: true,
        distance: c.detector_setback,
    });
    for (i, &len) in c.eastbound_lengths.iter().enumerate() {
        edges.push(Edge {
            src: i,
            dst: i + 1,
            direction: Direction::East,
            entry: false,
            distance: len,
        });
    }
    edges.push(Edge {
        src: k - 1,
        dst: k - 1,
        direction: Direction::West,
        entry: true,
        distance: c.detector_setback,
    });
    for (i, &len) in c.westbound_lengths.iter().enumerate() {
        edges.push(Edge {
            src: i + 1,
            dst: i,
            direction: Direction::West,
            entry: false,
            distance: len,
        });
    }
    edges
}

/// `A[i][j] = 1` for every segment edge `i -> j`.
pub fn adjacency(k: usize, edges: &[Edge]) -> Matrix {
    let mut a = Matrix::zeros(k, k);
    for e in edges.iter().filter(|e| !e.entry) {
        a.set(e.src, e.dst, 1.0);
    }
    a
}

/// Binary `K x 8` mask with zeros at the masked phase columns.
pub fn mask_matrix(k: usize) -> Matrix {
    let mut t = Matrix::filled(k, STATIC_NODE_DIM, 1.0);
    for r in 0..k {
        for p in MASKED_PHASES {
            t.set(r, usize::from(p) - 1, 0.0);
        }
    }
    t
}

/// Element-wise `X * T`.
pub fn apply_mask(x: &Matrix, t: &Matrix) -> Result<Matrix> {
    if x.shape() != t.shape() {
        return Err(Error::Data(format!(
            "mask shape {:?} does not match features {:?}",
            t.shape(),
            x.shape()
        )));
    }
    Ok(Matrix {
        rows: x.rows,
        cols: x.cols,
        data: x.data.iter().zip(&t.data).map(|(a, b)| a * b).collect(),
    })
}

/// Counts at the masked phases, `K x 4` in `MASKED_PHASES` order.
pub fn masked_columns(x: &Matrix) -> Matrix {
    let mut s = Matrix::zeros(x.rows, MASKED_PHASES.len());
    for r in 0..x.rows {
        for (j, p) in MASKED_PHASES.iter().enumerate() {
            s.set(r, j, x.get(r, usize::from(*p) - 1));
        }
    }
    s
}

fn behavior_values(scenario: &Scenario, drv: DrvSelection) -> Vec<f64> {
    match drv {
        DrvSelection::Longitudinal => scenario.behavior.longitudinal_values().to_vec(),
        DrvSelection::Full => scenario.behavior.all_values().to_vec(),
    }
}

/// Edge features `(dis, tmc, drv, density)`. Ratios are those of the
/// downstream intersection; density is the downstream through-phase count
/// per metre, read from column `phase - 1` of `counts`.
pub fn edge_features(
    scenario: &Scenario,
    edges: &[Edge],
    drv: DrvSelection,
    through_count: impl Fn(usize, Direction) -> f64,
) -> Matrix {
    let behavior = behavior_values(scenario, drv);
    let mut e = Matrix::zeros(edges.len(), drv.edge_dim());
    for (i, edge) in edges.iter().enumerate() {
        let row = e.row_mut(i);
        row[0] = edge.distance;
        row[1..13].copy_from_slice(&scenario.tmc[edge.dst]);
        row[13..13 + behavior.len()].copy_from_slice(&behavior);
        row[13 + behavior.len()] = through_count(edge.dst, edge.direction) / edge.distance;
    }
    e
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StaticGraph {
    pub adjacency: Matrix,
    pub edges: Vec<Edge>,
    /// `K x 8` detector counts per phase, unmasked.
    pub x: Matrix,
    pub e: Matrix,
    pub mask: Matrix,
}

impl StaticGraph {
    pub fn intersections(&self) -> usize {
        self.x.rows
    }

    pub fn masked_x(&self) -> Matrix {
        apply_mask(&self.x, &self.mask).expect("mask built for these features")
    }

    /// Ground-truth counts at the masked cells, `K x 4`.
    pub fn supervision(&self) -> Matrix {
        masked_columns(&self.x)
    }

    /// The graph the imputation model sees: masked counts, and segment
    /// densities recomputed from them so the hidden through counts do not
    /// leak. Entry edges keep the boundary detector density.
    pub fn masked(&self, scenario: &Scenario, drv: DrvSelection) -> StaticGraph {
        let x = self.masked_x();
        let mut e = edge_features(scenario, &self.edges, drv, |k, d| {
            x.get(k, usize::from(d.through_phase()) - 1)
        });
        let density = e.cols - 1;
        for (i, edge) in self.edges.iter().enumerate() {
            if edge.entry {
                e.set(i, density, self.e.get(i, density));
            }
        }
        StaticGraph {
            adjacency: self.adjacency.clone(),
            edges: self.edges.clone(),
            x,
            e,
            mask: self.mask.clone(),
        }
    }
}

fn window_bounds(scenario: &Scenario, window: f64) -> Result<(f64, f64)> {
    if !(window > 0.0 && window <= scenario.duration) {
        return Err(Error::Config(format!(
            "window {window} s must lie in (0, {}]",
            scenario.duration
        )));
    }
    if window < scenario.cycle() {
        log::warn!(
            "window {window} s is shorter than the {} s cycle",
            scenario.cycle()
        );
    }
    Ok((scenario.duration - window, scenario.duration))
}

pub fn build_static_graph(
    log: &SimulationLog,
    scenario: &Scenario,
    config: &GraphConfig,
) -> Result<StaticGraph> {
    let k = scenario.corridor.intersections;
    if log.header.intersections != k {
        return Err(Error::Data(format!(
            "log has {} intersections, scenario {k}",
            log.header.intersections
        )));
    }
    let (t0, t1) = window_bounds(scenario, config.window)?;
    let counts = count_matrix(log, t0, t1);
    let x = Matrix::from_rows(&counts)?;
    let edges = corridor_edges(scenario);
    let e = edge_features(scenario, &edges, config.drv, |k, d| {
        x.get(k, usize::from(d.through_phase()) - 1)
    });
    Ok(StaticGraph {
        adjacency: adjacency(k, &edges),
        edges,
        x,
        e,
        mask: mask_matrix(k),
    })
}

/// Where the masked counts of the dynamic graph come from.
#[derive(Debug, Clone, Copy)]
pub enum InfSource<'a> {
    GroundTruth,
    /// `K x 4` values for `MASKED_PHASES`; non-finite cells count as missing.
    Imputed(&'a Matrix),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DynamicGraph {
    /// `K x 14` corridor state.
    pub x: Matrix,
    pub e: Matrix,
}

impl DynamicGraph {
    /// Count for `phase` at intersection `k`.
    pub fn count(&self, k: usize, phase: u8) -> f64 {
        self.x.get(k, DYNAMIC_COUNT_OFFSET + usize::from(phase) - 1)
    }
}

pub fn build_dynamic_graph(
    scenario: &Scenario,
    graph: &StaticGraph,
    drv: DrvSelection,
    source: InfSource<'_>,
) -> Result<DynamicGraph> {
    let k = graph.intersections();
    let mut counts = graph.x.clone();
    if let InfSource::Imputed(values) = source {
        if values.shape() != (k, MASKED_PHASES.len()) {
            return Err(Error::Data(format!(
                "imputations have shape {:?}, expected ({k}, {})",
                values.shape(),
                MASKED_PHASES.len()
            )));
        }
        let mut missing = Vec::new();
        for r in 0..k {
            for (j, p) in MASKED_PHASES.iter().enumerate() {
                let v = values.get(r, j);
                if v.is_finite() {
                    counts.set(r, usize::from(*p) - 1, v);
                } else {
                    missing.push(format!("({r}, phase {p})"));
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Data(format!(
                "no imputed value for masked cells {}",
                missing.join(", ")
            )));
        }
    }
    let mut x = Matrix::zeros(k, DYNAMIC_NODE_DIM);
    for (r, plan) in scenario.plans.iter().enumerate() {
        let row = x.row_mut(r);
        row[0] = plan.cycle;
        row[1] = plan.offset / plan.cycle;
        for (j, p) in MASKED_PHASES.iter().enumerate() {
            row[2 + j] = plan.phase(*p).max_green / plan.cycle;
        }
        row[DYNAMIC_COUNT_OFFSET..].copy_from_slice(counts.row(r));
    }
    let e = edge_features(scenario, &graph.edges, drv, |k, d| {
        counts.get(k, usize::from(d.through_phase()) - 1)
    });
    Ok(DynamicGraph { x, e })
}
