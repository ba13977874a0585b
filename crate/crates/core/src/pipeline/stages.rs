//! The pipeline commands over one run directory.
//!
//! ```text
//! <output>/config.toml            resolved configuration
//! <output>/manifest.json          sha256 of every artifact below
//! <output>/scenarios/<id>.json
//! <output>/logs/<id>.jsonl
//! <output>/dataset.jsonl
//! <output>/model.json             best-validation checkpoint
//! <output>/train_state.json       resumable trainer state
//! <output>/train_report.tsv
//! <output>/eval/<predictor>/...   metric tables and plot data
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::PipelineConfig;
use super::manifest::Manifest;
use crate::error::{Error, Result};
use crate::eval::{evaluate, Evaluation, PlotSeries};
use crate::graph::{bin_center, build_record, Dataset, DatasetRecord, PDF_BINS};
use crate::model::{ConstantPredictor, Fdgnn, OraclePredictor, Prediction, Predictor, REFERENCE_PARAMETERS};
use crate::sim::{run_scenario, Scenario, SimulationLog};
use crate::train::{split_dataset, TrainReport, TrainState, Trainer};

pub const CONFIG_FILE: &str = "config.toml";
pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MODEL_FILE: &str = "model.json";
pub const STATE_FILE: &str = "train_state.json";
pub const REPORT_FILE: &str = "train_report.tsv";

pub fn scenario_id(i: usize) -> String {
    format!("s{i:05}")
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SimulateSummary {
    pub simulated: usize,
    /// Already on disk from an earlier, interrupted run.
    pub skipped: usize,
    pub failed: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct BuildSummary {
    pub records: usize,
    /// Scenarios whose log had too few completed journeys.
    pub excluded: Vec<(String, String)>,
    pub mean_mu: [f64; 2],
    pub mean_sigma: [f64; 2],
}

/// Which predictor `evaluate` scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PredictorChoice {
    Model,
    Constant,
    Oracle,
}

impl PredictorChoice {
    pub fn name(self) -> &'static str {
        match self {
            PredictorChoice::Model => "fdgnn",
            PredictorChoice::Constant => "constant",
            PredictorChoice::Oracle => "oracle",
        }
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

pub struct Run {
    pub config: PipelineConfig,
}

impl Run {
    /// Validates the configuration and logs its warnings; nothing is
    /// written yet.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        for w in config.warnings() {
            log::warn!("{w}");
        }
        Ok(Self { config })
    }

    pub fn dir(&self) -> &Path {
        &self.config.output
    }

    pub fn path(&self, rel: &str) -> PathBuf {
        self.dir().join(rel)
    }

    fn pool(&self) -> Result<rayon::ThreadPool> {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = self.config.jobs {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| Error::Config(format!("thread pool: {e}")))
    }

    /// Scenario `i` depends only on the seed and `i`.
    pub fn scenario(&self, i: usize) -> Result<Scenario> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(i as u64);
        self.config.sampler()?.sample(&mut rng)
    }

    fn scenario_path(&self, id: &str) -> PathBuf {
        self.path(&format!("scenarios/{id}.json"))
    }

    fn log_path(&self, id: &str) -> PathBuf {
        self.path(&format!("logs/{id}.jsonl"))
    }

    fn save_config(&self) -> Result<()> {
        create_dir(self.dir())?;
        write_atomic(&self.path(CONFIG_FILE), self.config.to_toml().as_bytes())
    }

    /// Samples and runs every scenario, skipping ids whose files exist.
    pub fn simulate(&self) -> Result<SimulateSummary> {
        self.save_config()?;
        create_dir(&self.path("scenarios"))?;
        create_dir(&self.path("logs"))?;
        let ids: Vec<usize> = (0..self.config.scenarios).collect();
        let outcomes: Vec<Result<Option<std::result::Result<(), String>>>> = self.pool()?.install(|| {
            ids.par_iter()
                .map(|&i| {
                    let id = scenario_id(i);
                    let (sp, lp) = (self.scenario_path(&id), self.log_path(&id));
                    if sp.exists() && lp.exists() {
                        return Ok(None);
                    }
                    let scenario = self.scenario(i)?;
                    let log = match run_scenario(&scenario) {
                        Ok(log) => log,
                        Err(e @ Error::Gridlock { .. }) => return Ok(Some(Err(e.to_string()))),
                        Err(e) => return Err(e),
                    };
                    let mut bytes = Vec::new();
                    log.write_to(&mut bytes).map_err(|e| Error::io(&lp, e))?;
                    write_atomic(&lp, &bytes)?;
                    let json = serde_json::to_vec_pretty(&scenario).map_err(|e| Error::Data(e.to_string()))?;
                    write_atomic(&sp, &json)?;
                    Ok(Some(Ok(())))
                })
                .collect()
        });
        let mut summary = SimulateSummary::default();
        let mut manifest = Manifest::open(self.dir())?;
        manifest.forget_prefix("scenarios/");
        manifest.forget_prefix("logs/");
        manifest.failed.clear();
        for (i, outcome) in outcomes.into_iter().enumerate() {
            let id = scenario_id(i);
            match outcome? {
                None => summary.skipped += 1,
                Some(Ok(())) => summary.simulated += 1,
                Some(Err(reason)) => {
                    log::warn!("{id}: {reason}");
                    manifest.failed.insert(id.clone(), reason.clone());
                    summary.failed.push((id, reason));
                    continue;
                }
            }
            manifest.record(self.dir(), &format!("scenarios/{id}.json"))?;
            manifest.record(self.dir(), &format!("logs/{id}.jsonl"))?;
        }
        manifest.save(self.dir())?;
        log::info!(
            "simulated {} scenario(s), skipped {} existing, {} failed",
            summary.simulated,
            summary.skipped,
            summary.failed.len()
        );
        Ok(summary)
    }

    fn load_scenario(&self, id: &str) -> Result<Scenario> {
        let path = self.scenario_path(id);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            path,
            record: 0,
            offset: 0,
            message: e.to_string(),
        })
    }

    /// Builds records from every simulated scenario.
    pub fn build(&self) -> Result<(Dataset, BuildSummary)> {
        let ids: Vec<String> = (0..self.config.scenarios)
            .map(scenario_id)
            .filter(|id| self.log_path(id).exists() && self.scenario_path(id).exists())
            .collect();
        if ids.is_empty() && self.config.scenarios > 0 {
            return Err(Error::Data(format!(
                "no simulation logs under {}; run simulate first",
                self.path("logs").display()
            )));
        }
        let graph = self.config.graph();
        let built: Vec<Result<std::result::Result<DatasetRecord, String>>> = self.pool()?.install(|| {
            ids.par_iter()
                .map(|id| {
                    let scenario = self.load_scenario(id)?;
                    let log = SimulationLog::read_jsonl(&self.log_path(id))?;
                    match build_record(id.clone(), &scenario, &log, &graph) {
                        Ok(r) => Ok(Ok(r)),
                        Err(e @ Error::InsufficientData(_)) => Ok(Err(e.to_string())),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        });
        let mut dataset = Dataset::new(self.config.corridor.intersections, &graph, self.config.tmc);
        let mut summary = BuildSummary::default();
        for (id, r) in ids.iter().zip(built) {
            match r? {
                Ok(record) => dataset.push(record)?,
                Err(reason) => {
                    log::warn!("{id} excluded: {reason}");
                    summary.excluded.push((id.clone(), reason));
                }
            }
        }
        summary.records = dataset.len();
        if !dataset.is_empty() {
            let n = dataset.len() as f64;
            for d in 0..2 {
                summary.mean_mu[d] = dataset.records.iter().map(|r| r.target.direction(d).mu).sum::<f64>() / n;
                summary.mean_sigma[d] = dataset.records.iter().map(|r| r.target.direction(d).sigma).sum::<f64>() / n;
            }
        }
        Ok((dataset, summary))
    }

    pub fn build_dataset(&self) -> Result<BuildSummary> {
        let (dataset, summary) = self.build()?;
        create_dir(self.dir())?;
        let mut bytes = Vec::new();
        dataset.write_to(&mut bytes).map_err(|e| Error::io(self.path(DATASET_FILE), e))?;
        write_atomic(&self.path(DATASET_FILE), &bytes)?;
        let mut manifest = Manifest::open(self.dir())?;
        manifest.record(self.dir(), DATASET_FILE)?;
        manifest.save(self.dir())?;
        log::info!(
            "{} record(s), {} excluded; mean mu {:.1}/{:.1} s, mean sigma {:.1}/{:.1} s (east/west)",
            summary.records,
            summary.excluded.len(),
            summary.mean_mu[0],
            summary.mean_mu[1],
            summary.mean_sigma[0],
            summary.mean_sigma[1]
        );
        Ok(summary)
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let path = self.path(DATASET_FILE);
        if !path.exists() {
            return Err(Error::Data(format!("{} not found; run build-dataset first", path.display())));
        }
        Dataset::load(&path)
    }

    /// Trains from scratch, or continues from the saved state when `resume`
    /// is set and a state exists.
    pub fn train(&self, resume: bool) -> Result<TrainReport> {
        let dataset = self.load_dataset()?;
        let state_path = self.path(STATE_FILE);
        let mut trainer = if resume && state_path.exists() {
            let mut state = TrainState::load(&state_path)?;
            // The epoch budget may be raised when resuming; nothing else changes.
            state.config.epochs = self.config.train.epochs;
            log::info!("resuming after epoch {}", state.epochs_done());
            Trainer::resume(&dataset.records, state)?
        } else {
            Trainer::new(&dataset.records, dataset.header.drv, self.config.training())?
        };
        let params = trainer.state().model.num_parameters();
        log::info!("{params} trainable parameters (reference model: about {REFERENCE_PARAMETERS})");
        let report = trainer.run(|state| {
            let bytes = serde_json::to_vec(state).map_err(|e| Error::Data(e.to_string()))?;
            write_atomic(&state_path, &bytes)
        })?;
        let state = trainer.into_state();
        state.best_model.save(&self.path(MODEL_FILE))?;
        write_atomic(&self.path(REPORT_FILE), report.to_tsv().as_bytes())?;
        let mut manifest = Manifest::open(self.dir())?;
        for f in [MODEL_FILE, STATE_FILE, REPORT_FILE] {
            manifest.record(self.dir(), f)?;
        }
        manifest.save(self.dir())?;
        Ok(report)
    }

    /// Scores a predictor on the test split and writes `eval/<name>/`.
    pub fn evaluate(&self, choice: PredictorChoice, checkpoint: Option<&Path>) -> Result<Evaluation> {
        let dataset = self.load_dataset()?;
        let split = split_dataset(dataset.len(), &self.config.train.split, self.config.seed)?;
        let pick = |idx: &[usize]| -> Vec<&DatasetRecord> { idx.iter().map(|&i| &dataset.records[i]).collect() };
        let test = pick(&split.test);
        let model;
        let constant;
        let predictor: &dyn Predictor = match choice {
            PredictorChoice::Model => {
                let path = checkpoint.map_or_else(|| self.path(MODEL_FILE), Path::to_path_buf);
                model = Fdgnn::load(&path)?;
                &model
            }
            PredictorChoice::Constant => {
                constant = ConstantPredictor::fit(&pick(&split.train))?;
                &constant
            }
            PredictorChoice::Oracle => &OraclePredictor,
        };
        let ev = evaluate(predictor, &test)?;
        let rel = format!("eval/{}", choice.name());
        let out = self.path(&rel);
        ev.write(&out)?;
        let mut manifest = Manifest::open(self.dir())?;
        manifest.forget_prefix(&format!("{rel}/"));
        for f in ["metrics.tsv", "records.tsv", "imputation.tsv"] {
            manifest.record(self.dir(), &format!("{rel}/{f}"))?;
        }
        manifest.save(self.dir())?;
        Ok(ev)
    }
}

/// Predicts one record of `dataset` with the model in `checkpoint`.
pub fn predict_record(checkpoint: &Path, dataset: &Path, id: &str) -> Result<Prediction> {
    let model = Fdgnn::load(checkpoint)?;
    let data = Dataset::load(dataset)?;
    let record = data
        .records
        .iter()
        .find(|r| r.id == id)
        .ok_or_else(|| Error::Data(format!("record {id:?} not in {}", dataset.display())))?;
    Ok(model.predict(&[record])?.remove(0))
}

/// Two 250-bin densities as a table, preceded by the moments.
pub fn prediction_tsv(id: &str, p: &Prediction) -> String {
    let mut out = format!(
        "# id {id}\n# mu_east {}\n# sigma_east {}\n# mu_west {}\n# sigma_west {}\nt\teast\twest\n",
        p.mu[0], p.sigma[0], p.mu[1], p.sigma[1]
    );
    let (e, w) = (p.pdf(0), p.pdf(1));
    for i in 0..PDF_BINS {
        out.push_str(&format!("{}\t{:e}\t{:e}\n", bin_center(i), e[i], w[i]));
    }
    out
}

/// Renders `<name>.svg` next to each plot-data file; `path` is a file or a
/// directory searched recursively. Returns the written paths.
pub fn render_plots(path: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    if path.is_dir() {
        let mut entries: Vec<PathBuf> = fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(path, err)))
            .collect::<Result<_>>()?;
        entries.sort();
        for p in entries {
            if p.is_dir() || p.extension().is_some_and(|x| x == "tsv") && is_plot_file(&p) {
                out.extend(render_plots(&p)?);
            }
        }
        return Ok(out);
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let series = PlotSeries::from_tsv(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let svg = path.with_extension("svg");
    fs::write(&svg, series.to_svg()).map_err(|e| Error::io(&svg, e))?;
    out.push(svg);
    Ok(out)
}

fn is_plot_file(path: &Path) -> bool {
    fs::read_to_string(path).is_ok_and(|t| t.starts_with("# id "))
}
