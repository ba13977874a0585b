//! The three networks: imputation (`inf`), mean and standard deviation.

use std::fmt;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use corridor_tensor::{ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::batch::GraphBatch;
use super::gat::GatLayer;
use super::layers::{EdgeMlp, Linear};
use super::normalize::Normalizer;
use crate::error::{Error, Result};
use crate::graph::{
    discretize_pdf, DrvSelection, DynamicGraph, DatasetRecord, Matrix, StaticGraph, DYNAMIC_NODE_DIM,
    MASKED_PHASES, SIGMA_FLOOR, STATIC_NODE_DIM,
};
use crate::sim::Direction;

pub const CHECKPOINT_SCHEMA_VERSION: u32 = 1;
/// Parameter count stated for the reference model.
pub const REFERENCE_PARAMETERS: usize = 59_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Module {
    Inf,
    Mean,
    Stdv,
}

impl Module {
    pub const ALL: [Module; 3] = [Module::Inf, Module::Mean, Module::Stdv];
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Module::Inf => "inf",
            Module::Mean => "mean",
            Module::Stdv => "stdv",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub static_dim: usize,
    pub dynamic_dim: usize,
    pub edge_dim: usize,
    pub inf_hidden: usize,
    pub hidden: usize,
    pub heads: usize,
    pub edge_hidden: usize,
    pub fc_hidden: usize,
    /// Initial bias of the imputation head, in `inf_scale` units.
    pub inf_head_bias: f64,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(drv: DrvSelection, seed: u64) -> Self {
        Self {
            static_dim: STATIC_NODE_DIM,
            dynamic_dim: DYNAMIC_NODE_DIM,
            edge_dim: drv.edge_dim(),
            inf_hidden: 32,
            hidden: 64,
            heads: 4,
            edge_hidden: 64,
            fc_hidden: 64,
            inf_head_bias: 0.5,
            seed,
        }
    }
}

/// Imputation network: two attention layers and a per-node head for the
/// four masked phases. Boundary volumes arrive through the entry edges.
#[derive(Debug, Clone, PartialEq)]
pub struct ImputationNet {
    pub gat1: GatLayer,
    pub gat2: GatLayer,
    pub head: Linear,
}

impl ImputationNet {
    pub fn new(c: &ModelConfig) -> Self {
        Self {
            gat1: GatLayer::new("gat1", c.static_dim, c.inf_hidden, c.heads).with_edges(c.edge_dim),
            gat2: GatLayer::new("gat2", c.inf_hidden, c.inf_hidden, 1).with_edges(c.edge_dim),
            head: Linear::new("head", c.inf_hidden, MASKED_PHASES.len()),
        }
    }

    fn init(&self, c: &ModelConfig, store: &mut ParamStore, rng: &mut ChaCha8Rng) -> Result<()> {
        self.gat1.init(store, rng);
        self.gat2.init(store, rng);
        self.head.init(store, rng);
        self.head.set_bias(store, c.inf_head_bias)?;
        Ok(())
    }

    /// `N x 4` imputations in `inf_scale` units.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamStore,
        batch: &GraphBatch,
        x: Var<'t>,
        e: Var<'t>,
    ) -> corridor_tensor::Result<Var<'t>> {
        let h = self.gat1.forward(tape, params, x, &batch.edges, Some(e))?.out;
        let h = self.gat2.forward(tape, params, h, &batch.edges, Some(e))?.out;
        self.head.forward(tape, params, h)?.relu()
    }
}

/// Regression network shared by the mean and standard-deviation models.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionNet {
    pub gat1: GatLayer,
    pub edge_mlp: EdgeMlp,
    pub gat2: GatLayer,
    pub fc1: Linear,
    pub fc2: Linear,
}

impl RegressionNet {
    pub fn new(c: &ModelConfig) -> Self {
        Self {
            gat1: GatLayer::new("gat1", c.dynamic_dim, c.hidden, c.heads).with_edges(c.edge_dim),
            edge_mlp: EdgeMlp::new("edge_mlp", c.edge_dim, c.edge_hidden),
            gat2: GatLayer::new("gat2", c.hidden, c.hidden, 1).with_edges(c.edge_dim),
            fc1: Linear::new("fc1", 3 * c.hidden, c.fc_hidden),
            fc2: Linear::new("fc2", c.fc_hidden, 2),
        }
    }

    fn init(&self, store: &mut ParamStore, rng: &mut ChaCha8Rng) {
        self.gat1.init(store, rng);
        self.edge_mlp.init(store, rng);
        self.gat2.init(store, rng);
        self.fc1.init(store, rng);
        self.fc2.init(store, rng);
    }

    /// `B x 2` raw outputs (east, west) in target units.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        params: &ParamStore,
        batch: &GraphBatch,
        x: Var<'t>,
        e: Var<'t>,
    ) -> corridor_tensor::Result<Var<'t>> {
        let h = self.gat1.forward(tape, params, x, &batch.edges, Some(e))?.out;
        let e2 = self.edge_mlp.forward(tape, params, e)?;
        let h = self.gat2.forward(tape, params, h, &batch.edges, Some(e2))?.out;
        let edge_emb = self.gat2.edge_embedding(tape, params, e2)?;
        let fused = fuse(tape, batch, edge_emb, h)?;
        let z = self.fc1.forward(tape, params, fused)?.relu()?;
        self.fc2.forward(tape, params, z)
    }
}

fn group_mean<'t>(
    tape: &'t Tape,
    rows: Var<'t>,
    select: &[usize],
    group: impl Fn(usize) -> usize,
    groups: usize,
) -> corridor_tensor::Result<Var<'t>> {
    let index: Vec<usize> = select.iter().map(|&i| group(i)).collect();
    let mut counts = vec![0.0; groups];
    index.iter().for_each(|&g| counts[g] += 1.0);
    let inv = Tensor::new(
        vec![groups, 1],
        counts.iter().map(|&c| if c > 0.0 { 1.0 / c } else { 0.0 }).collect(),
    )?;
    rows.gather_rows(select)?
        .scatter_add_rows(&index, groups)?
        .scale_rows(tape.constant(&inv))
}

/// Per graph: mean forward (eastbound) edge embedding, mean reverse edge
/// embedding and mean node embedding, concatenated.
pub fn fuse<'t>(
    tape: &'t Tape,
    batch: &GraphBatch,
    edge_emb: Var<'t>,
    node_emb: Var<'t>,
) -> corridor_tensor::Result<Var<'t>> {
    let b = batch.graphs;
    let fwd = group_mean(tape, edge_emb, &batch.edges_in(Direction::East), |i| batch.edge_graph[i], b)?;
    let rev = group_mean(tape, edge_emb, &batch.edges_in(Direction::West), |i| batch.edge_graph[i], b)?;
    let nodes: Vec<usize> = (0..batch.nodes).collect();
    let pooled = group_mean(tape, node_emb, &nodes, |i| batch.node_graph[i], b)?;
    tape.concat_cols(&[fwd, rev, pooled])
}

/// Point prediction for one record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    /// (east, west), s.
    pub mu: [f64; 2],
    pub sigma: [f64; 2],
    /// `K x 4` imputed counts, when the predictor imputes.
    pub imputed: Option<Matrix>,
}

impl Prediction {
    /// Discretized density for direction index `d`.
    pub fn pdf(&self, d: usize) -> Vec<f64> {
        discretize_pdf(self.mu[d], self.sigma[d])
    }
}

/// The full model: networks, their parameters and the fitted scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fdgnn {
    pub schema_version: u32,
    pub config: ModelConfig,
    pub drv: DrvSelection,
    pub normalizer: Normalizer,
    pub inf: ParamStore,
    pub mean: ParamStore,
    pub stdv: ParamStore,
}

fn stack_tensor(parts: &[Matrix]) -> Result<Tensor> {
    let refs: Vec<&Matrix> = parts.iter().collect();
    Ok(Matrix::stack(&refs)?.to_tensor())
}

impl Fdgnn {
    pub fn new(config: ModelConfig, drv: DrvSelection, normalizer: Normalizer) -> Result<Self> {
        if config.edge_dim != drv.edge_dim() {
            return Err(Error::Config(format!(
                "edge width {} does not match the {} behaviour features",
                config.edge_dim,
                drv.dim()
            )));
        }
        let mut model = Self {
            schema_version: CHECKPOINT_SCHEMA_VERSION,
            config,
            drv,
            normalizer,
            inf: ParamStore::new(),
            mean: ParamStore::new(),
            stdv: ParamStore::new(),
        };
        let seed = model.config.seed;
        let stream = |s: u64| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(s);
            rng
        };
        ImputationNet::new(&model.config).init(&model.config, &mut model.inf, &mut stream(0))?;
        let reg = RegressionNet::new(&model.config);
        reg.init(&mut model.mean, &mut stream(1));
        reg.init(&mut model.stdv, &mut stream(2));
        Ok(model)
    }

    pub fn imputation_net(&self) -> ImputationNet {
        ImputationNet::new(&self.config)
    }

    pub fn regression_net(&self) -> RegressionNet {
        RegressionNet::new(&self.config)
    }

    pub fn params(&self, m: Module) -> &ParamStore {
        match m {
            Module::Inf => &self.inf,
            Module::Mean => &self.mean,
            Module::Stdv => &self.stdv,
        }
    }

    pub fn params_mut(&mut self, m: Module) -> &mut ParamStore {
        match m {
            Module::Inf => &mut self.inf,
            Module::Mean => &mut self.mean,
            Module::Stdv => &mut self.stdv,
        }
    }

    pub fn num_parameters(&self) -> usize {
        Module::ALL.iter().map(|&m| self.params(m).num_scalars()).sum()
    }

    pub fn batch(graphs: &[&StaticGraph]) -> GraphBatch {
        let parts: Vec<_> = graphs
            .iter()
            .map(|g| (g.intersections(), g.edges.as_slice()))
            .collect();
        GraphBatch::new(&parts)
    }

    /// Forward pass of the imputation model on masked static graphs.
    /// Returns `N x 4` in `inf_scale` units.
    pub fn impute_on<'t>(&self, tape: &'t Tape, batch: &GraphBatch, masked: &[&StaticGraph]) -> Result<Var<'t>> {
        let n = &self.normalizer;
        let x: Vec<Matrix> = masked.iter().map(|g| n.static_x.apply(&g.x)).collect();
        let e: Vec<Matrix> = masked.iter().map(|g| n.static_e.apply(&g.e)).collect();
        let x = tape.constant(&stack_tensor(&x)?);
        let e = tape.constant(&stack_tensor(&e)?);
        Ok(self.imputation_net().forward(tape, &self.inf, batch, x, e)?)
    }

    /// Supervision in `inf_scale` units, stacked like [`Fdgnn::impute_on`].
    pub fn scaled_supervision(&self, supervision: &[&Matrix]) -> Result<Tensor> {
        let scaled: Vec<Matrix> = supervision
            .iter()
            .map(|m| {
                let mut s = (*m).clone();
                for r in 0..s.rows {
                    for (c, v) in s.row_mut(r).iter_mut().enumerate() {
                        *v /= self.normalizer.inf_scale[c];
                    }
                }
                s
            })
            .collect();
        stack_tensor(&scaled)
    }

    /// Splits stacked scaled imputations back into per-graph count matrices.
    pub fn unscale_imputations(&self, stacked: &Tensor, sizes: &[usize]) -> Result<Vec<Matrix>> {
        let all = Matrix::from_tensor(stacked)?;
        let mut out = Vec::with_capacity(sizes.len());
        let mut start = 0;
        for &k in sizes {
            let mut m = Matrix::zeros(k, all.cols);
            for r in 0..k {
                for c in 0..all.cols {
                    m.set(r, c, all.get(start + r, c) * self.normalizer.inf_scale[c]);
                }
            }
            out.push(m);
            start += k;
        }
        Ok(out)
    }

    /// Forward pass of the mean or deviation model; `B x 2` in standardized
    /// target units.
    pub fn regress_on<'t>(
        &self,
        tape: &'t Tape,
        module: Module,
        batch: &GraphBatch,
        graphs: &[&DynamicGraph],
    ) -> Result<Var<'t>> {
        let n = &self.normalizer;
        let x: Vec<Matrix> = graphs.iter().map(|g| n.dynamic_x.apply(&g.x)).collect();
        let e: Vec<Matrix> = graphs.iter().map(|g| n.dynamic_e.apply(&g.e)).collect();
        let x = tape.constant(&stack_tensor(&x)?);
        let e = tape.constant(&stack_tensor(&e)?);
        let params = match module {
            Module::Inf => return Err(Error::Config("the imputation model does not regress".into())),
            m => self.params(m),
        };
        Ok(self.regression_net().forward(tape, params, batch, x, e)?)
    }

    /// Standardized targets for the mean or deviation model, `B x 2`.
    pub fn scaled_targets(&self, module: Module, records: &[&DatasetRecord]) -> Result<Tensor> {
        let s = match module {
            Module::Mean => &self.normalizer.mu,
            Module::Stdv => &self.normalizer.sigma,
            Module::Inf => return Err(Error::Config("the imputation model has no travel-time target".into())),
        };
        let mut values = Vec::with_capacity(2 * records.len());
        for r in records {
            for d in 0..2 {
                let t = r.target.direction(d);
                let v = if module == Module::Mean { t.mu } else { t.sigma };
                values.push(s.forward(d, v));
            }
        }
        Ok(Tensor::new(vec![records.len(), 2], values)?)
    }

    /// `mu = relu(raw)`.
    pub fn output_mu(&self, d: usize, z: f64) -> f64 {
        self.normalizer.mu.invert(d, z).max(0.0)
    }

    /// `sigma = floor + softplus(raw - floor)`.
    pub fn output_sigma(&self, d: usize, z: f64) -> f64 {
        let raw = self.normalizer.sigma.invert(d, z) - SIGMA_FLOOR;
        let softplus = if raw > 30.0 { raw } else { raw.exp().ln_1p() };
        SIGMA_FLOOR + softplus
    }

    /// Imputed masked counts for each record, in vehicles.
    pub fn impute(&self, records: &[&DatasetRecord]) -> Result<Vec<Matrix>> {
        let masked: Vec<&StaticGraph> = records.iter().map(|r| &r.masked_graph).collect();
        let batch = Self::batch(&masked);
        let tape = Tape::new();
        let out = self.impute_on(&tape, &batch, &masked)?;
        let sizes: Vec<usize> = masked.iter().map(|g| g.intersections()).collect();
        self.unscale_imputations(&out.value(), &sizes)
    }

    /// Inference: impute, rebuild the dynamic graphs, regress both moments.
    pub fn predict(&self, records: &[&DatasetRecord]) -> Result<Vec<Prediction>> {
        if records.is_empty() {
            return Ok(Vec::new());
        }
        let imputed = self.impute(records)?;
        let dynamic = records
            .iter()
            .zip(&imputed)
            .map(|(r, m)| r.dynamic_with(m, self.drv))
            .collect::<Result<Vec<_>>>()?;
        let graphs: Vec<&DynamicGraph> = dynamic.iter().collect();
        let statics: Vec<&StaticGraph> = records.iter().map(|r| &r.static_graph).collect();
        let batch = Self::batch(&statics);
        let mu = {
            let tape = Tape::new();
            self.regress_on(&tape, Module::Mean, &batch, &graphs)?.value()
        };
        let sigma = {
            let tape = Tape::new();
            self.regress_on(&tape, Module::Stdv, &batch, &graphs)?.value()
        };
        let out: Vec<Prediction> = imputed
            .into_iter()
            .enumerate()
            .map(|(i, m)| Prediction {
                mu: [self.output_mu(0, mu.get(i, 0)), self.output_mu(1, mu.get(i, 1))],
                sigma: [self.output_sigma(0, sigma.get(i, 0)), self.output_sigma(1, sigma.get(i, 1))],
                imputed: Some(m),
            })
            .collect();
        if let Some(bad) = out
            .iter()
            .position(|p| !(p.mu.iter().chain(&p.sigma).all(|v| v.is_finite())))
        {
            return Err(Error::Numeric(format!("non-finite prediction for record {}", records[bad].id)));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self).map_err(|e| Error::Data(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| Error::io(path, e))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let model: Fdgnn = serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            record: 0,
            offset: 0,
            message: e.to_string(),
        })?;
        if model.schema_version != CHECKPOINT_SCHEMA_VERSION {
            return Err(Error::Data(format!(
                "checkpoint schema version {} (expected {CHECKPOINT_SCHEMA_VERSION})",
                model.schema_version
            )));
        }
        Ok(model)
    }
}
