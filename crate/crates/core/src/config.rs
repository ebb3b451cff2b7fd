//! TOML run configuration for the command-line tool. Every key is optional.
//!
//! ```toml
//! [cohort]
//! size = 10
//! seed = 1
//! scales = [0.1, 0.15, 0.2, 0.4, 0.7, 1.0]
//! delays = [0.0, 0.25, 0.5, 0.75]
//!
//! [analysis]
//! weight = 0.5
//! fine_grid = true
//! quantile = 0.1      # pessimistic criterion; omit for the predictive mean
//!
//! [server]
//! bind = "127.0.0.1:7878"
//! root = "sessions"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::metrics::{MetricKind, MetricNormalization};
use crate::model::PriorSearchOptions;
use crate::optimizer::{Criterion, ScaleGrid};
use crate::session::HeadlessConfig;
use crate::synth::CohortConfig;
use crate::task::TrialConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CohortSection {
    pub size: usize,
    pub seed: u64,
    pub scales: Vec<f64>,
    pub delays: Vec<f64>,
    pub trials_per_cell: usize,
    pub target_count: usize,
    pub distance: f64,
    pub width: f64,
    pub tick_rate: f64,
}

impl Default for CohortSection {
    fn default() -> Self {
        let c = CohortConfig::default();
        Self {
            size: c.size,
            seed: c.seed,
            scales: c.scales,
            delays: c.delays,
            trials_per_cell: c.trials_per_cell,
            target_count: c.task.target_count,
            distance: c.task.distance,
            width: c.task.width,
            tick_rate: c.task.tick_rate,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    pub weight: f64,
    pub reference_scale: f64,
    pub model_metrics: Vec<String>,
    pub fine_grid: bool,
    pub quantile: Option<f64>,
    pub max_delay_s: f64,
    pub delay_step_s: f64,
    pub prior_restarts: usize,
    pub prior_max_evals: usize,
    pub prior_seed: u64,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        let h = HeadlessConfig::default();
        Self {
            weight: h.weight,
            reference_scale: h.reference_scale,
            model_metrics: h.model_metrics.iter().map(|m| m.name().to_string()).collect(),
            fine_grid: true,
            quantile: None,
            max_delay_s: h.max_delay_s,
            delay_step_s: h.delay_step_s,
            prior_restarts: h.prior_search.restarts,
            prior_max_evals: h.prior_search.max_evals_per_restart,
            prior_seed: h.prior_search.seed,
        }
    }
}

impl AnalysisSection {
    pub fn grid(&self) -> ScaleGrid {
        if self.fine_grid {
            ScaleGrid::fine()
        } else {
            ScaleGrid::experiment()
        }
    }

    pub fn criterion(&self) -> Criterion {
        self.quantile.map_or(Criterion::Mean, Criterion::Quantile)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServerSection {
    pub bind: String,
    pub root: PathBuf,
    pub weight: f64,
    /// Throughput (bits/s) and total error (workspace units) that map to 1
    /// in live weighted performance.
    pub throughput_max: f64,
    pub error_max: f64,
}

impl Default for ServerSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:7878".into(),
            root: PathBuf::from("sessions"),
            weight: 0.5,
            throughput_max: 6.0,
            error_max: 0.5,
        }
    }
}

impl ServerSection {
    pub fn normalization(&self) -> MetricNormalization {
        MetricNormalization::fixed(self.throughput_max, self.error_max)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub cohort: CohortSection,
    pub analysis: AnalysisSection,
    pub server: ServerSection,
}

impl Config {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml(&text)
    }

    pub fn model_metrics(&self) -> Result<Vec<MetricKind>, ConfigError> {
        self.analysis
            .model_metrics
            .iter()
            .map(|m| m.parse().map_err(|e| ConfigError::Invalid(format!("{e}"))))
            .collect()
    }

    pub fn headless(&self) -> Result<HeadlessConfig, ConfigError> {
        let c = &self.cohort;
        let a = &self.analysis;
        let task = TrialConfig {
            target_count: c.target_count,
            distance: c.distance,
            width: c.width,
            tick_rate: c.tick_rate,
            ..TrialConfig::default()
        };
        let cohort = CohortConfig {
            size: c.size,
            seed: c.seed,
            scales: c.scales.clone(),
            delays: c.delays.clone(),
            trials_per_cell: c.trials_per_cell,
            task,
            ..CohortConfig::default()
        };
        cohort.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if !(0.0..=1.0).contains(&a.weight) {
            return Err(ConfigError::Invalid(format!("weight {} outside [0, 1]", a.weight)));
        }
        Ok(HeadlessConfig {
            cohort,
            weight: a.weight,
            model_metrics: self.model_metrics()?,
            reference_scale: a.reference_scale,
            prior_search: PriorSearchOptions {
                restarts: a.prior_restarts,
                max_evals_per_restart: a.prior_max_evals,
                seed: a.prior_seed,
            },
            grid: a.grid(),
            criterion: a.criterion(),
            max_delay_s: a.max_delay_s,
            delay_step_s: a.delay_step_s,
            ..HeadlessConfig::default()
        })
    }
}
