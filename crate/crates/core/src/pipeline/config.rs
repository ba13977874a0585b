//! Pipeline configuration file.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{DrvSelection, GraphConfig};
use crate::sim::{CorridorSpec, Direction, SamplerRanges, ScenarioSampler, TmcMode};
use crate::train::TrainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Seeds scenario sampling, vehicle arrivals, the split and training.
    pub seed: u64,
    pub scenarios: usize,
    pub tmc: TmcMode,
    /// Detector window, s.
    pub window: f64,
    /// Arrival period of each run, s.
    pub duration: f64,
    pub drv: DrvSelection,
    pub output: PathBuf,
    /// Worker threads for simulate and build-dataset; `None` uses all cores.
    pub jobs: Option<usize>,
    pub corridor: CorridorSpec,
    pub ranges: SamplerRanges,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            scenarios: 200,
            tmc: TmcMode::Real,
            window: 900.0,
            duration: 1800.0,
            drv: DrvSelection::Longitudinal,
            output: PathBuf::from("run"),
            jobs: None,
            corridor: CorridorSpec::default(),
            ranges: SamplerRanges::default(),
            train: TrainConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config always serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.sampler()?;
        self.training().validate()?;
        if !(self.window > 0.0 && self.window <= self.duration) {
            return Err(Error::Config(format!(
                "window {} s must lie in (0, {}]",
                self.window, self.duration
            )));
        }
        if self.jobs == Some(0) {
            return Err(Error::Config("jobs must be at least 1".into()));
        }
        if self.output.as_os_str().is_empty() {
            return Err(Error::Config("output directory is empty".into()));
        }
        Ok(())
    }

    /// Valid but questionable settings, e.g. clamped detectors.
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.window < self.ranges.cycle.max {
            out.push(format!(
                "window {} s can be shorter than one cycle (up to {} s)",
                self.window, self.ranges.cycle.max
            ));
        }
        let c = &self.corridor;
        let clamped = (0..c.intersections)
            .flat_map(|k| Direction::BOTH.map(|d| (k, d)))
            .filter(|&(k, d)| c.effective_setback(k, d) < c.detector_setback)
            .count();
        if clamped > 0 {
            out.push(format!(
                "{clamped} detector(s) clamped: segment shorter than the {} m setback",
                c.detector_setback
            ));
        }
        out
    }

    pub fn sampler(&self) -> Result<ScenarioSampler> {
        ScenarioSampler::new(self.corridor.clone(), self.ranges.clone(), self.tmc, self.duration)
    }

    pub fn graph(&self) -> GraphConfig {
        GraphConfig {
            window: self.window,
            drv: self.drv,
        }
    }

    /// Training settings; the pipeline seed replaces `train.seed`.
    pub fn training(&self) -> TrainConfig {
        TrainConfig {
            seed: self.seed,
            ..self.train.clone()
        }
    }
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub jobs: Option<usize>,
    pub window: Option<f64>,
    pub tmc: Option<TmcMode>,
    pub scenarios: Option<usize>,
    pub output: Option<PathBuf>,
    pub epochs: Option<usize>,
}

impl Overrides {
    pub fn apply(&self, mut c: PipelineConfig) -> PipelineConfig {
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.jobs {
            c.jobs = Some(v);
        }
        if let Some(v) = self.window {
            c.window = v;
        }
        if let Some(v) = self.tmc {
            c.tmc = v;
        }
        if let Some(v) = self.scenarios {
            c.scenarios = v;
        }
        if let Some(v) = &self.output {
            c.output = v.clone();
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        c
    }
}

/// Defaults, then the file if given, then the overrides; validated.
pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<PipelineConfig> {
    let base = match file {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    let config = overrides.apply(base);
    config.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        assert_eq!(PipelineConfig::from_toml("").unwrap(), PipelineConfig::default());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let e = PipelineConfig::from_toml("scenarios = 3\nbogus = 1\n").unwrap_err();
        assert!(e.to_string().contains("bogus"), "{e}");
        assert!(PipelineConfig::from_toml("[train]\nlearning_rate = 1.0\n").is_err());
    }

    #[test]
    fn flags_beat_file_beat_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 5\nwindow = 300\nscenarios = 12\n").unwrap();
        let c = resolve(Some(&path), &Overrides::default()).unwrap();
        assert_eq!((c.seed, c.window, c.scenarios, c.tmc), (5, 300.0, 12, TmcMode::Real));
        let o = Overrides {
            seed: Some(9),
            tmc: Some(TmcMode::Mixed),
            ..Default::default()
        };
        let c = resolve(Some(&path), &o).unwrap();
        assert_eq!((c.seed, c.window, c.tmc), (9, 300.0, TmcMode::Mixed));
        assert_eq!(c.training().seed, 9);
    }

    #[test]
    fn round_trips_through_toml() {
        let c = PipelineConfig {
            scenarios: 7,
            jobs: Some(2),
            ..Default::default()
        };
        assert_eq!(PipelineConfig::from_toml(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn clamped_detectors_are_reported() {
        let c = PipelineConfig::default();
        assert!(c.warnings().iter().any(|w| w.contains("clamped")));
        let mut wide = c.clone();
        wide.corridor = CorridorSpec::uniform(8, 600.0);
        assert!(wide.warnings().is_empty());
    }

    #[test]
    fn invalid_values_are_config_errors() {
        for text in ["window = 0", "window = 5000", "jobs = 0", "[train]\nbatch_size = 0"] {
            let c = PipelineConfig::from_toml(text).unwrap();
            assert_eq!(c.validate().unwrap_err().kind(), crate::ErrorKind::Config, "{text}");
        }
    }
}
