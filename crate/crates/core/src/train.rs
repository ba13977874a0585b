//! Sequential optimization of the three networks.
//!
//! Each batch runs four steps: fit the imputation model, rebuild the
//! dynamic graphs from its (detached) output, then fit the mean model and
//! the deviation model. Every network has its own Adam optimizer.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::time::Instant;

use corridor_tensor::{Adam, AdamConfig, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DatasetRecord, DrvSelection, DynamicGraph, Matrix, StaticGraph};
use crate::model::{Fdgnn, GraphBatch, ModelConfig, Module, Normalizer};

pub const MIN_DATASET: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitFractions {
    pub train: f64,
    pub validation: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self {
            train: 0.70,
            validation: 0.15,
            test: 0.15,
        }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.validation, self.test];
        if parts.iter().any(|f| !(0.0..=1.0).contains(f)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {parts:?} must lie in [0, 1] and sum to 1"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr_inf: f64,
    pub lr_mean: f64,
    pub lr_stdv: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub split: SplitFractions,
    /// Epochs without validation improvement tolerated before stopping;
    /// `None` never stops early.
    pub patience: Option<usize>,
    /// Z-score travel-time targets with training-split statistics.
    pub standardize: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_inf: 1e-3,
            lr_mean: 1e-3,
            lr_stdv: 1e-3,
            epochs: 50,
            batch_size: 16,
            seed: 0,
            split: SplitFractions::default(),
            patience: None,
            standardize: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, lr) in [("lr_inf", self.lr_inf), ("lr_mean", self.lr_mean), ("lr_stdv", self.lr_stdv)] {
            if !(lr.is_finite() && lr >= 0.0) {
                return Err(Error::Config(format!("{name} must be finite and non-negative, got {lr}")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        self.split.validate()
    }

    pub fn optimizers(&self) -> Optimizers {
        Optimizers {
            inf: Adam::new(AdamConfig::with_learning_rate(self.lr_inf)),
            mean: Adam::new(AdamConfig::with_learning_rate(self.lr_mean)),
            stdv: Adam::new(AdamConfig::with_learning_rate(self.lr_stdv)),
        }
    }
}

/// Record indices of each split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

/// Seeded shuffle of `0..n`, cut by `fractions` (rounded; test takes the
/// remainder).
pub fn split_dataset(n: usize, fractions: &SplitFractions, seed: u64) -> Result<Split> {
    fractions.validate()?;
    if n < MIN_DATASET {
        return Err(Error::InsufficientData(format!(
            "{n} records, need at least {MIN_DATASET} to split"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let train = ((n as f64 * fractions.train).round() as usize).min(n);
    let val = ((n as f64 * fractions.validation).round() as usize).min(n - train);
    Ok(Split {
        train: idx[..train].to_vec(),
        validation: idx[train..train + val].to_vec(),
        test: idx[train + val..].to_vec(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Optimizers {
    pub inf: Adam,
    pub mean: Adam,
    pub stdv: Adam,
}

impl Optimizers {
    pub fn get_mut(&mut self, m: Module) -> &mut Adam {
        match m {
            Module::Inf => &mut self.inf,
            Module::Mean => &mut self.mean,
            Module::Stdv => &mut self.stdv,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Losses {
    pub inf: f64,
    pub mean: f64,
    pub stdv: f64,
}

impl Losses {
    pub fn total(&self) -> f64 {
        self.inf + self.mean + self.stdv
    }

    fn is_finite(&self) -> bool {
        self.total().is_finite()
    }

    fn add_weighted(&mut self, other: &Losses, w: f64) {
        self.inf += w * other.inf;
        self.mean += w * other.mean;
        self.stdv += w * other.stdv;
    }
}

/// Per-direction squared error, summed over the two columns.
fn two_column_mse<'t>(
    out: corridor_tensor::Var<'t>,
    target: corridor_tensor::Var<'t>,
) -> corridor_tensor::Result<corridor_tensor::Var<'t>> {
    let east = out.select_cols(&[0])?.mse(target.select_cols(&[0])?)?;
    let west = out.select_cols(&[1])?.mse(target.select_cols(&[1])?)?;
    east.add(west)
}

fn batch_of(records: &[&DatasetRecord]) -> GraphBatch {
    let statics: Vec<&StaticGraph> = records.iter().map(|r| &r.static_graph).collect();
    Fdgnn::batch(&statics)
}

fn check_loss(loss: f64, module: Module, records: &[&DatasetRecord]) -> Result<()> {
    if loss.is_finite() {
        return Ok(());
    }
    let ids: Vec<&str> = records.iter().map(|r| r.id.as_str()).collect();
    Err(Error::Numeric(format!(
        "loss_{module} is {loss} on batch [{}]",
        ids.join(", ")
    )))
}

/// Step 1: forward and backward through the imputation model and one
/// optimizer step on its parameters only. Returns the loss and the
/// imputations (vehicles) from the forward pass.
pub fn step_inf(model: &mut Fdgnn, opt: &mut Adam, records: &[&DatasetRecord]) -> Result<(f64, Vec<Matrix>)> {
    let masked: Vec<&StaticGraph> = records.iter().map(|r| &r.masked_graph).collect();
    let batch = batch_of(records);
    let supervision: Vec<&Matrix> = records.iter().map(|r| &r.supervision).collect();
    let tape = Tape::new();
    let target = tape.constant(&model.scaled_supervision(&supervision)?);
    let out = model.impute_on(&tape, &batch, &masked)?;
    let loss = out.mse(target)?;
    let value = loss.item();
    check_loss(value, Module::Inf, records)?;
    tape.backward(loss)?;
    let sizes: Vec<usize> = masked.iter().map(|g| g.intersections()).collect();
    let imputed = model.unscale_imputations(&out.value(), &sizes)?;
    let params = model.params_mut(Module::Inf);
    params.load_grads(&tape)?;
    opt.step(params)?;
    params.clear_grads();
    Ok((value, imputed))
}

/// Step 2: dynamic graphs with the imputed counts in place of the masked
/// cells. The counts are plain values, so no gradient reaches the
/// imputation model from the later steps.
pub fn rebuild_dynamic(records: &[&DatasetRecord], imputed: &[Matrix], drv: DrvSelection) -> Result<Vec<DynamicGraph>> {
    records
        .iter()
        .zip(imputed)
        .map(|(r, m)| r.dynamic_with(m, drv))
        .collect()
}

/// Steps 3 and 4: one update of the mean or deviation model.
pub fn step_regression(
    model: &mut Fdgnn,
    module: Module,
    opt: &mut Adam,
    records: &[&DatasetRecord],
    dynamic: &[DynamicGraph],
) -> Result<f64> {
    let batch = batch_of(records);
    let graphs: Vec<&DynamicGraph> = dynamic.iter().collect();
    let tape = Tape::new();
    let target = tape.constant(&model.scaled_targets(module, records)?);
    let out = model.regress_on(&tape, module, &batch, &graphs)?;
    let loss = two_column_mse(out, target)?;
    let value = loss.item();
    check_loss(value, module, records)?;
    tape.backward(loss)?;
    let params = model.params_mut(module);
    params.load_grads(&tape)?;
    opt.step(params)?;
    params.clear_grads();
    Ok(value)
}

/// The four steps on one batch.
pub fn train_batch(model: &mut Fdgnn, opts: &mut Optimizers, records: &[&DatasetRecord]) -> Result<Losses> {
    if records.is_empty() {
        return Err(Error::Data("empty training batch".into()));
    }
    let (inf, imputed) = step_inf(model, &mut opts.inf, records)?;
    let dynamic = rebuild_dynamic(records, &imputed, model.drv)?;
    let mean = step_regression(model, Module::Mean, opts.get_mut(Module::Mean), records, &dynamic)?;
    let stdv = step_regression(model, Module::Stdv, opts.get_mut(Module::Stdv), records, &dynamic)?;
    Ok(Losses { inf, mean, stdv })
}

/// Losses without any update, on the inference path (regression on
/// imputed graphs). Batch losses are averaged weighted by batch size.
pub fn evaluate_losses(model: &Fdgnn, records: &[&DatasetRecord], batch_size: usize) -> Result<Losses> {
    let mut total = Losses::default();
    if records.is_empty() {
        return Ok(total);
    }
    for chunk in records.chunks(batch_size.max(1)) {
        let batch = batch_of(chunk);
        let masked: Vec<&StaticGraph> = chunk.iter().map(|r| &r.masked_graph).collect();
        let supervision: Vec<&Matrix> = chunk.iter().map(|r| &r.supervision).collect();
        let (inf, imputed) = {
            let tape = Tape::new();
            let target = tape.constant(&model.scaled_supervision(&supervision)?);
            let out = model.impute_on(&tape, &batch, &masked)?;
            let sizes: Vec<usize> = masked.iter().map(|g| g.intersections()).collect();
            (out.mse(target)?.item(), model.unscale_imputations(&out.value(), &sizes)?)
        };
        let dynamic = rebuild_dynamic(chunk, &imputed, model.drv)?;
        let graphs: Vec<&DynamicGraph> = dynamic.iter().collect();
        let regress = |module: Module| -> Result<f64> {
            let tape = Tape::new();
            let target = tape.constant(&model.scaled_targets(module, chunk)?);
            let out = model.regress_on(&tape, module, &batch, &graphs)?;
            Ok(two_column_mse(out, target)?.item())
        };
        let losses = Losses {
            inf,
            mean: regress(Module::Mean)?,
            stdv: regress(Module::Stdv)?,
        };
        total.add_weighted(&losses, chunk.len() as f64 / records.len() as f64);
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRow {
    pub epoch: usize,
    pub train: Losses,
    pub validation: Losses,
}

/// Everything needed to continue training exactly where it stopped.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub config: TrainConfig,
    pub split: Split,
    pub model: Fdgnn,
    pub optimizers: Optimizers,
    pub history: Vec<EpochRow>,
    pub best_model: Fdgnn,
    pub best_epoch: Option<usize>,
    pub best_score: f64,
    /// Consecutive epochs without validation improvement.
    pub stale: usize,
    pub stopped_early: bool,
}

impl TrainState {
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut out = BufWriter::new(file);
        serde_json::to_writer(&mut out, self).map_err(|e| Error::Data(e.to_string()))?;
        out.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_reader(BufReader::new(file)).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            record: 0,
            offset: 0,
            message: e.to_string(),
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.history.len()
    }

    pub fn finished(&self) -> bool {
        self.stopped_early || self.epochs_done() >= self.config.epochs
    }

    pub fn report(&self, wall_clock_secs: f64) -> TrainReport {
        TrainReport {
            rows: self.history.clone(),
            best_epoch: self.best_epoch,
            stopped_early: self.stopped_early,
            parameters: self.model.num_parameters(),
            wall_clock_secs,
        }
    }
}

pub struct Trainer<'a> {
    records: &'a [DatasetRecord],
    state: TrainState,
}

impl<'a> Trainer<'a> {
    /// Splits the records, fits the scaling on the training split and
    /// initializes the networks from `config.seed`.
    pub fn new(records: &'a [DatasetRecord], drv: DrvSelection, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let split = split_dataset(records.len(), &config.split, config.seed)?;
        if split.train.is_empty() {
            return Err(Error::InsufficientData("training split is empty".into()));
        }
        let train: Vec<&DatasetRecord> = split.train.iter().map(|&i| &records[i]).collect();
        let normalizer = Normalizer::fit(&train, config.standardize)?;
        let model = Fdgnn::new(ModelConfig::new(drv, config.seed), drv, normalizer)?;
        Ok(Self {
            records,
            state: TrainState {
                optimizers: config.optimizers(),
                best_model: model.clone(),
                model,
                split,
                config,
                history: Vec::new(),
                best_epoch: None,
                best_score: f64::INFINITY,
                stale: 0,
                stopped_early: false,
            },
        })
    }

    pub fn resume(records: &'a [DatasetRecord], state: TrainState) -> Result<Self> {
        state.config.validate()?;
        let max = state
            .split
            .train
            .iter()
            .chain(&state.split.validation)
            .chain(&state.split.test)
            .max()
            .copied();
        if max.is_some_and(|m| m >= records.len()) {
            return Err(Error::Data(format!(
                "training state refers to record {} but the dataset has {}",
                max.unwrap_or(0),
                records.len()
            )));
        }
        Ok(Self { records, state })
    }

    pub fn state(&self) -> &TrainState {
        &self.state
    }

    pub fn into_state(self) -> TrainState {
        self.state
    }

    fn select(&self, idx: &[usize]) -> Vec<&'a DatasetRecord> {
        idx.iter().map(|&i| &self.records[i]).collect()
    }

    pub fn train_records(&self) -> Vec<&'a DatasetRecord> {
        self.select(&self.state.split.train)
    }

    pub fn validation_records(&self) -> Vec<&'a DatasetRecord> {
        self.select(&self.state.split.validation)
    }

    pub fn test_records(&self) -> Vec<&'a DatasetRecord> {
        self.select(&self.state.split.test)
    }

    /// One pass over the training split in an order drawn from
    /// `(seed, epoch)`, then validation and checkpoint bookkeeping.
    pub fn run_epoch(&mut self) -> Result<EpochRow> {
        let epoch = self.state.epochs_done() + 1;
        let mut order = self.state.split.train.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(self.state.config.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);
        let mut train = Losses::default();
        let n = order.len() as f64;
        for chunk in order.chunks(self.state.config.batch_size) {
            let batch = self.select(chunk);
            let s = &mut self.state;
            let losses = train_batch(&mut s.model, &mut s.optimizers, &batch)?;
            train.add_weighted(&losses, chunk.len() as f64 / n);
        }
        let validation = evaluate_losses(
            &self.state.model,
            &self.validation_records(),
            self.state.config.batch_size,
        )?;
        if !validation.is_finite() {
            return Err(Error::Numeric(format!("validation losses are not finite at epoch {epoch}")));
        }
        let row = EpochRow {
            epoch,
            train,
            validation,
        };
        let s = &mut self.state;
        s.history.push(row);
        // An empty validation split keeps the latest model.
        let score = if s.split.validation.is_empty() {
            -(epoch as f64)
        } else {
            validation.total()
        };
        if score < s.best_score {
            s.best_score = score;
            s.best_epoch = Some(epoch);
            s.best_model = s.model.clone();
            s.stale = 0;
        } else {
            s.stale += 1;
            if s.config.patience.is_some_and(|p| s.stale > p) {
                s.stopped_early = true;
            }
        }
        log::info!(
            "epoch {epoch}: train inf {:.4} mean {:.4} stdv {:.4} | val inf {:.4} mean {:.4} stdv {:.4}",
            train.inf,
            train.mean,
            train.stdv,
            validation.inf,
            validation.mean,
            validation.stdv
        );
        Ok(row)
    }

    /// Runs the remaining epochs. After each epoch `on_epoch` sees the
    /// state, e.g. to persist it.
    pub fn run(&mut self, mut on_epoch: impl FnMut(&TrainState) -> Result<()>) -> Result<TrainReport> {
        let start = Instant::now();
        while !self.state.finished() {
            self.run_epoch()?;
            on_epoch(&self.state)?;
        }
        Ok(self.state.report(start.elapsed().as_secs_f64()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub rows: Vec<EpochRow>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
    pub parameters: usize,
    /// Not part of the table, so reports compare byte for byte.
    pub wall_clock_secs: f64,
}

impl TrainReport {
    /// Tab-separated table, one row per epoch.
    pub fn to_tsv(&self) -> String {
        let mut s = String::from("epoch\ttrain_inf\ttrain_mean\ttrain_stdv\tval_inf\tval_mean\tval_stdv\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.epoch, r.train.inf, r.train.mean, r.train.stdv, r.validation.inf, r.validation.mean, r.validation.stdv
            );
        }
        let best = self.best_epoch.map_or_else(|| "-".to_string(), |e| e.to_string());
        let _ = writeln!(s, "# best_epoch\t{best}");
        let _ = writeln!(s, "# stopped_early\t{}", self.stopped_early);
        let _ = writeln!(s, "# parameters\t{}", self.parameters);
        s
    }

    /// Relative drop of each validation loss from the first to the last
    /// epoch.
    pub fn validation_drop(&self) -> Option<Losses> {
        let first = self.rows.first()?.validation;
        let last = self.rows.last()?.validation;
        let drop = |a: f64, b: f64| if a > 0.0 { 1.0 - b / a } else { 0.0 };
        Some(Losses {
            inf: drop(first.inf, last.inf),
            mean: drop(first.mean, last.mean),
            stdv: drop(first.stdv, last.stdv),
        })
    }
}

/// Used by tests to compare parameters bit for bit.
pub fn param_bits(model: &Fdgnn, module: Module) -> Vec<u64> {
    model
        .params(module)
        .iter()
        .flat_map(|(_, t): (&String, &Tensor)| t.values().iter().map(|v| v.to_bits()).collect::<Vec<_>>())
        .collect()
}
