use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::arbiter::ArbitrationConfig;
use crate::bayes::BayesConfig;
use crate::chart::ChartConfig;
use crate::dsp::FeatureConfig;
use crate::error::{Error, Result};
use crate::synth::{default_severity_grid, DatasetSpec, SynthConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSettings {
    pub per_class: usize,
    /// Train : validation : test weights.
    pub split_ratio: [u32; 3],
    pub severity_grid: Vec<f64>,
}

impl Default for DatasetSettings {
    fn default() -> Self {
        DatasetSettings {
            per_class: 300,
            split_ratio: [7, 2, 1],
            severity_grid: default_severity_grid(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CalibrationSettings {
    pub n_bins: usize,
}

impl Default for CalibrationSettings {
    fn default() -> Self {
        CalibrationSettings { n_bins: crate::calibration::DEFAULT_BINS }
    }
}

/// Everything one run needs. Loaded from TOML; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Independent dataset re-syntheses in `run_experiment`.
    pub repeats: usize,
    pub synth: SynthConfig,
    pub dataset: DatasetSettings,
    pub features: FeatureConfig,
    pub bayes: BayesConfig,
    pub arbitration: ArbitrationConfig,
    pub calibration: CalibrationSettings,
    pub chart: ChartConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            repeats: 10,
            synth: SynthConfig::default(),
            dataset: DatasetSettings::default(),
            features: FeatureConfig::default(),
            bayes: BayesConfig::default(),
            arbitration: ArbitrationConfig::default(),
            calibration: CalibrationSettings::default(),
            chart: ChartConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::config(format!("invalid config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        if self.repeats == 0 {
            return Err(Error::config("repeats must be at least 1"));
        }
        if self.calibration.n_bins == 0 || self.calibration.n_bins > 1000 {
            return Err(Error::config("calibration.n_bins must lie in [1, 1000]"));
        }
        self.synth.validate()?;
        self.dataset_spec(self.seed).validate()?;
        let (train, val, test) = self.dataset_spec(self.seed).split_counts(self.dataset.per_class);
        if train < 2 || val == 0 || test == 0 {
            return Err(Error::config(format!(
                "dataset.per_class = {} leaves a split too small (train {train}, val {val}, test {test})",
                self.dataset.per_class
            )));
        }
        self.features.validate()?;
        self.bayes.validate()?;
        self.arbitration.validate()?;
        self.chart.validate()?;
        Ok(())
    }

    pub fn dataset_spec(&self, seed: u64) -> DatasetSpec {
        DatasetSpec {
            severity_grid: self.dataset.severity_grid.clone(),
            split_ratio: self.dataset.split_ratio,
            ..DatasetSpec::uniform(self.dataset.per_class, seed)
        }
    }
}
