//! Choosing the motion scale that optimizes a fitted operator model at a
//! given delay.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{CellTable, MetricKind};
use crate::model::{predictive, predictive_location, FeatureTransform, ModelDocument, ModelError, NigParams};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizerError {
    #[error("invalid scale grid: {0}")]
    InvalidGrid(String),
    #[error("quantile level {0} outside (0, 1)")]
    InvalidQuantile(f64),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("curve csv line {line}: {msg}")]
    Csv { line: usize, msg: String },
}

/// Whether larger or smaller predictions are better.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Maximize,
    Minimize,
}

impl Polarity {
    pub fn for_metric(kind: MetricKind) -> Self {
        match kind {
            MetricKind::Throughput | MetricKind::WeightedPerformance => Polarity::Maximize,
            MetricKind::TargetDeviation | MetricKind::Overshoot | MetricKind::TotalError => Polarity::Minimize,
        }
    }

    fn better(self, candidate: f64, incumbent: f64) -> bool {
        match self {
            Polarity::Maximize => candidate > incumbent,
            Polarity::Minimize => candidate < incumbent,
        }
    }
}

/// Candidate scales, strictly increasing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScaleGrid(Vec<f64>);

impl ScaleGrid {
    /// The six scales of the experiment design.
    pub const EXPERIMENT: [f64; 6] = [0.1, 0.15, 0.2, 0.4, 0.7, 1.0];

    pub fn new(mut scales: Vec<f64>) -> Result<Self, OptimizerError> {
        if scales.is_empty() {
            return Err(OptimizerError::InvalidGrid("empty".into()));
        }
        if let Some(bad) = scales.iter().find(|s| !(s.is_finite() && **s > 0.0)) {
            return Err(OptimizerError::InvalidGrid(format!("scale {bad} is not positive")));
        }
        scales.sort_by(f64::total_cmp);
        scales.dedup();
        Ok(Self(scales))
    }

    pub fn experiment() -> Self {
        Self(Self::EXPERIMENT.to_vec())
    }

    /// `lo, lo + step, ...` up to and including `hi`.
    pub fn uniform(lo: f64, hi: f64, step: f64) -> Result<Self, OptimizerError> {
        if !(step > 0.0 && lo <= hi) {
            return Err(OptimizerError::InvalidGrid(format!("[{lo}, {hi}] step {step}")));
        }
        let n = ((hi - lo) / step + 1e-9).floor() as usize;
        Self::new((0..=n).map(|i| lo + i as f64 * step).collect())
    }

    /// 0.10 to 1.00 in steps of 0.01.
    pub fn fine() -> Self {
        Self::new((10..=100).map(|i| i as f64 / 100.0).collect()).expect("valid grid")
    }

    pub fn scales(&self) -> &[f64] {
        &self.0
    }
}

/// What is optimized at each candidate scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    /// Posterior predictive mean.
    Mean,
    /// Pessimistic: the predictive quantile on the unfavourable side at this
    /// level (lower quantile when maximizing, upper when minimizing).
    Quantile(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub delay_s: f64,
    pub optimal_scale: f64,
    pub predicted_value: f64,
}

/// Evaluates the criterion at every grid scale and returns the best, ties
/// going to the smallest scale.
pub fn optimal_scale(
    posterior: &NigParams,
    transform: &FeatureTransform,
    delay_s: f64,
    grid: &ScaleGrid,
    polarity: Polarity,
    criterion: Criterion,
) -> Result<CurvePoint, OptimizerError> {
    if let Criterion::Quantile(q) = criterion {
        if !(q > 0.0 && q < 1.0) {
            return Err(OptimizerError::InvalidQuantile(q));
        }
    }
    let mut best: Option<(f64, f64)> = None;
    for &s in grid.scales() {
        let value = match criterion {
            Criterion::Mean => predictive_location(posterior, s, delay_s, transform),
            Criterion::Quantile(q) => {
                let level = match polarity {
                    Polarity::Maximize => q,
                    Polarity::Minimize => 1.0 - q,
                };
                predictive(posterior, s, delay_s, transform)?.quantile(level)
            }
        };
        if best.is_none_or(|(_, v)| polarity.better(value, v)) {
            best = Some((s, value));
        }
    }
    let (optimal_scale, predicted_value) = best.expect("grid is non-empty");
    Ok(CurvePoint {
        delay_s,
        optimal_scale,
        predicted_value,
    })
}

pub fn optimal_scale_curve(
    posterior: &NigParams,
    transform: &FeatureTransform,
    delays: &[f64],
    grid: &ScaleGrid,
    polarity: Polarity,
    criterion: Criterion,
) -> Result<Vec<CurvePoint>, OptimizerError> {
    delays
        .iter()
        .map(|&d| optimal_scale(posterior, transform, d, grid, polarity, criterion))
        .collect()
}

/// Curve of a saved model, with the polarity implied by its metric.
pub fn model_curve(
    model: &ModelDocument,
    delays: &[f64],
    grid: &ScaleGrid,
    criterion: Criterion,
) -> Result<Vec<CurvePoint>, OptimizerError> {
    optimal_scale_curve(
        &model.posterior,
        &model.transform,
        delays,
        grid,
        Polarity::for_metric(model.metric),
        criterion,
    )
}

/// Best measured scale at each delay of a cell-mean table, with the same
/// polarity and tie rule as the model search.
pub fn table_curve(table: &CellTable, kind: MetricKind) -> Vec<CurvePoint> {
    let polarity = Polarity::for_metric(kind);
    table
        .delays()
        .into_iter()
        .map(|delay_s| {
            let mut best: Option<(f64, f64)> = None;
            for c in table.cells.iter().filter(|c| c.cell.delay_s == delay_s) {
                let value = c.mean.get(kind);
                if best.is_none_or(|(_, v)| polarity.better(value, v)) {
                    best = Some((c.cell.scale, value));
                }
            }
            let (optimal_scale, predicted_value) = best.expect("every listed delay has a cell");
            CurvePoint {
                delay_s,
                optimal_scale,
                predicted_value,
            }
        })
        .collect()
}

/// Delays from 0 to `max` in steps of `step`.
pub fn delay_sweep(max: f64, step: f64) -> Vec<f64> {
    let n = (max / step + 1e-9).floor() as usize;
    // rounded so that e.g. 3 × 0.05 prints as 0.15
    (0..=n).map(|i| (i as f64 * step * 1e9).round() / 1e9).collect()
}

pub const CURVE_HEADER: &str = "delay_s,optimal_scale,predicted_value";

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for p in points {
        let _ = writeln!(out, "{},{},{}", p.delay_s, p.optimal_scale, p.predicted_value);
    }
    out
}

pub fn parse_curve_csv(text: &str) -> Result<Vec<CurvePoint>, OptimizerError> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == CURVE_HEADER => {}
        _ => {
            return Err(OptimizerError::Csv {
                line: 1,
                msg: "missing header".into(),
            })
        }
    }
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let err = |msg: String| OptimizerError::Csv { line: i + 1, msg };
            let f: Vec<f64> = l
                .split(',')
                .map(|x| x.parse::<f64>().map_err(|e| err(e.to_string())))
                .collect::<Result<_, _>>()?;
            if f.len() != 3 {
                return Err(err(format!("expected 3 fields, found {}", f.len())));
            }
            Ok(CurvePoint {
                delay_s: f[0],
                optimal_scale: f[1],
                predicted_value: f[2],
            })
        })
        .collect()
}
