//! End-to-end run with simulated operators: sessions, logs, summary tables,
//! per-operator models, optimal-scale curves and the statistics report, all
//! written under one output directory.
//!
//! ```text
//! <out>/sessions/<op>/session.json, logs/trial_NNN.log
//! <out>/summary.csv
//! <out>/heatmaps/<metric>.csv
//! <out>/models/<metric>/<op>.json              leave-one-out informative prior
//! <out>/models_noninformative/<metric>/<op>.json
//! <out>/curves/<metric>/<op>.csv
//! <out>/stats_report.csv
//! <out>/notices.txt
//! ```
//!
//! The output is a function of the configuration alone; reruns are
//! byte-identical.

use std::path::Path;

use rayon::prelude::*;
use thiserror::Error;

use crate::experiment::{self, leave_one_out_prior, AnalysisError};
use crate::metrics::{self, Cell, MetricKind, MetricNormalization, MetricsError};
use crate::model::{FeatureTransform, ModelDocument, ModelError, NigParams, PriorKind, PriorSearchOptions};
use crate::optimizer::{curve_csv, delay_sweep, model_curve, Criterion, OptimizerError, ScaleGrid};
use crate::stats;
use crate::synth::{generate_cohort, CohortConfig, SyntheticOperator};
use crate::task::TaskError;
use crate::trial_log::LogHeader;

use super::store::{self, write_atomic};
use super::{SessionRecord, TrialEntry};

#[derive(Debug, Error)]
pub enum HeadlessError {
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Optimizer(#[from] OptimizerError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl From<AnalysisError> for HeadlessError {
    fn from(e: AnalysisError) -> Self {
        match e {
            AnalysisError::Metrics(e) => e.into(),
            AnalysisError::Model(e) => e.into(),
            AnalysisError::Optimizer(e) => e.into(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadlessConfig {
    pub cohort: CohortConfig,
    /// Error weight of weighted performance.
    pub weight: f64,
    /// Metrics that get per-operator models and curves.
    pub model_metrics: Vec<MetricKind>,
    /// Metrics covered by the statistics report.
    pub stats_metrics: Vec<MetricKind>,
    /// Scale every other scale is compared against in the paired tests.
    pub reference_scale: f64,
    pub transform: FeatureTransform,
    pub prior_search: PriorSearchOptions,
    pub grid: ScaleGrid,
    pub criterion: Criterion,
    pub max_delay_s: f64,
    pub delay_step_s: f64,
}

impl Default for HeadlessConfig {
    fn default() -> Self {
        Self {
            cohort: CohortConfig::default(),
            weight: 0.5,
            model_metrics: vec![
                MetricKind::WeightedPerformance,
                MetricKind::Throughput,
                MetricKind::TotalError,
            ],
            stats_metrics: MetricKind::ALL.to_vec(),
            reference_scale: 1.0,
            transform: FeatureTransform::default(),
            prior_search: PriorSearchOptions::default(),
            grid: ScaleGrid::fine(),
            criterion: Criterion::Mean,
            max_delay_s: 0.75,
            delay_step_s: 0.05,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HeadlessReport {
    pub records: Vec<SessionRecord>,
    /// Fallbacks taken during the run, also written to `notices.txt`.
    pub notices: Vec<String>,
}

impl HeadlessReport {
    pub fn trial_count(&self) -> usize {
        self.records.iter().map(|r| r.trials.len()).sum()
    }
}

fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    write_atomic(path, text.as_bytes())
}

/// Stores one simulated operator as a finalized session.
fn persist_operator(root: &Path, op: &SyntheticOperator, weight: f64) -> Result<SessionRecord, HeadlessError> {
    let raw = op.raw_metrics()?;
    let norms = MetricNormalization::from_reference(&raw)?;
    let dir = store::session_dir(root, &op.id);
    let mut record = SessionRecord::new(op.id.clone(), op.plan.clone(), weight, norms);
    for (trial, r) in op.trials.iter().zip(raw) {
        let header = LogHeader {
            operator: Some(op.id.clone()),
            trial_index: Some(trial.index),
            ..LogHeader::new(trial.log.config)
        };
        let log_file = store::persist_log(&dir, trial.index, &header, &trial.log)?;
        record.trials.push(TrialEntry {
            index: trial.index,
            cell: Cell::of(&trial.log.config),
            log_file,
            metrics: metrics::MetricSet::new(r, weight, &norms)?,
            practice: false,
        });
    }
    record.finalized = true;
    store::save_record(&dir, &record)?;
    Ok(record)
}

struct FittedModel {
    doc: ModelDocument,
    /// Fit from the noninformative prior, when the data determine it.
    flat: Option<ModelDocument>,
    notices: Vec<String>,
}

fn fit_models(
    cohort: &[SyntheticOperator],
    metric: MetricKind,
    cfg: &HeadlessConfig,
) -> Result<Vec<FittedModel>, HeadlessError> {
    let data = experiment::datasets(cohort, metric, cfg.weight, cfg.transform)?;
    (0..data.len())
        .into_par_iter()
        .map(|i| {
            let (prior, kind, notice) = if data.len() >= 2 {
                let fit = leave_one_out_prior(&data, i, &cfg.prior_search)?;
                let notice = (!fit.converged).then(|| {
                    format!("{} {}: prior search did not converge; using its best point", metric, data[i].operator)
                });
                (fit.prior, PriorKind::Informative, notice)
            } else {
                let notice = format!(
                    "{} {}: cohort too small for an empirical prior; using the noninformative prior",
                    metric, data[i].operator
                );
                (NigParams::noninformative(), PriorKind::Noninformative, Some(notice))
            };
            let mut notices: Vec<String> = notice.into_iter().collect();
            let normalization = if metric == MetricKind::WeightedPerformance {
                Some(MetricNormalization::from_reference(&cohort[i].raw_metrics()?)?)
            } else {
                None
            };
            let mut doc = ModelDocument::fit(&data[i], prior, kind)?;
            doc.normalization = normalization;
            let flat = if kind == PriorKind::Noninformative {
                Some(doc.clone())
            } else {
                match ModelDocument::fit(&data[i], NigParams::noninformative(), PriorKind::Noninformative) {
                    Ok(mut d) => {
                        d.normalization = normalization;
                        Some(d)
                    }
                    Err(e) => {
                        notices.push(format!("{} {}: no noninformative fit ({e})", metric, data[i].operator));
                        None
                    }
                }
            };
            Ok(FittedModel { doc, flat, notices })
        })
        .collect()
}

/// Simulates the configured cohort and writes every artifact under `out`.
pub fn run_headless_experiment(cfg: &HeadlessConfig, out: &Path) -> Result<HeadlessReport, HeadlessError> {
    let cohort = generate_cohort(&cfg.cohort)?;
    let mut notices = Vec::new();

    let sessions = out.join("sessions");
    let records = cohort
        .iter()
        .map(|op| persist_operator(&sessions, op, cfg.weight))
        .collect::<Result<Vec<_>, _>>()?;

    let rows = experiment::summary_rows(&cohort, cfg.weight)?;
    write_text(&out.join("summary.csv"), &metrics::summary_csv(&rows))?;

    let all: Vec<_> = cohort
        .iter()
        .map(|op| op.metric_sets(cfg.weight))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter()
        .flatten()
        .collect();
    let table = metrics::summarize(all.iter().map(|(c, m)| (c, m)))?;
    for kind in MetricKind::ALL {
        write_text(&out.join("heatmaps").join(format!("{}.csv", kind.name())), &table.heatmap_csv(kind))?;
    }

    let delays = delay_sweep(cfg.max_delay_s, cfg.delay_step_s);
    for &metric in &cfg.model_metrics {
        for fitted in fit_models(&cohort, metric, cfg)? {
            let op = fitted.doc.operator.clone().unwrap_or_default();
            notices.extend(fitted.notices);
            write_text(
                &out.join("models").join(metric.name()).join(format!("{op}.json")),
                &fitted.doc.to_json(),
            )?;
            if let Some(flat) = &fitted.flat {
                write_text(
                    &out.join("models_noninformative").join(metric.name()).join(format!("{op}.json")),
                    &flat.to_json(),
                )?;
            }
            let curve = model_curve(&fitted.doc, &delays, &cfg.grid, cfg.criterion)?;
            write_text(
                &out.join("curves").join(metric.name()).join(format!("{op}.csv")),
                &curve_csv(&curve),
            )?;
        }
    }

    let report = stats::battery(&rows, &cfg.stats_metrics, cfg.reference_scale);
    write_text(&out.join("stats_report.csv"), &stats::report_csv(&report))?;

    for n in &notices {
        log::warn!("{n}");
    }
    let mut text = notices.join("\n");
    if !text.is_empty() {
        text.push('\n');
    }
    write_text(&out.join("notices.txt"), &text)?;
    Ok(HeadlessReport { records, notices })
}
