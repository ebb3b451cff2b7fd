//! Cohort-level analysis shared by the headless runner, the CLI, and the
//! acceptance suite.

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Cell, MetricKind, MetricsError, SummaryRow};
use crate::model::{fit_informative_prior, fit_posterior, FeatureTransform, ModelError, NigParams, OperatorDataset, PriorFit, PriorSearchOptions};
use crate::optimizer::{optimal_scale, Criterion, OptimizerError, Polarity, ScaleGrid};
use crate::synth::SyntheticOperator;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("metrics: {0}")]
    Metrics(#[from] MetricsError),
    #[error("model: {0}")]
    Model(#[from] ModelError),
    #[error("optimizer: {0}")]
    Optimizer(#[from] OptimizerError),
}

/// Summary-table rows of a cohort, WP normalized per operator.
pub fn summary_rows(cohort: &[SyntheticOperator], weight: f64) -> Result<Vec<SummaryRow>, MetricsError> {
    let mut rows = Vec::new();
    for op in cohort {
        for (cfg, m) in op.metric_sets(weight)? {
            rows.push(SummaryRow {
                user: op.id.clone(),
                cell: Cell::of(&cfg),
                metrics: m,
            });
        }
    }
    Ok(rows)
}

pub fn datasets(
    cohort: &[SyntheticOperator],
    metric: MetricKind,
    weight: f64,
    transform: FeatureTransform,
) -> Result<Vec<OperatorDataset>, MetricsError> {
    cohort.iter().map(|op| op.dataset(metric, weight, transform)).collect()
}

/// Groups summary rows into one dataset per user, in first-seen order.
pub fn datasets_from_rows(rows: &[SummaryRow], metric: MetricKind, transform: FeatureTransform) -> Vec<OperatorDataset> {
    let mut out: Vec<OperatorDataset> = Vec::new();
    for r in rows {
        let idx = match out.iter().position(|d| d.operator == r.user) {
            Some(i) => i,
            None => {
                out.push(OperatorDataset::new(r.user.clone(), metric, transform));
                out.len() - 1
            }
        };
        out[idx].push(r.cell.scale, r.cell.delay_s, r.metrics.get(metric));
    }
    out
}

/// Model-based optimal scale of each operator at each delay (flat prior).
pub fn operator_optima(
    data: &[OperatorDataset],
    delays: &[f64],
    grid: &ScaleGrid,
) -> Result<Vec<Vec<f64>>, AnalysisError> {
    data.iter()
        .map(|d| {
            let post = fit_posterior(&NigParams::noninformative(), d)?;
            let polarity = Polarity::for_metric(d.metric);
            delays
                .iter()
                .map(|&delay| {
                    Ok(optimal_scale(&post, &d.transform, delay, grid, polarity, Criterion::Mean)?.optimal_scale)
                })
                .collect()
        })
        .collect()
}

/// Cohort mean of the per-operator optimal scales at each delay.
pub fn mean_optimal_curve(data: &[OperatorDataset], delays: &[f64], grid: &ScaleGrid) -> Result<Vec<f64>, AnalysisError> {
    let optima = operator_optima(data, delays, grid)?;
    let n = optima.len() as f64;
    Ok((0..delays.len())
        .map(|j| optima.iter().map(|o| o[j]).sum::<f64>() / n)
        .collect())
}

/// Least-squares slope of `y` on `x`.
pub fn ols_slope(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    sxy / sxx
}

/// Informative prior for operator `held_out`, fitted on everyone else.
pub fn leave_one_out_prior(
    data: &[OperatorDataset],
    held_out: usize,
    options: &PriorSearchOptions,
) -> Result<PriorFit, ModelError> {
    let others: Vec<OperatorDataset> = data
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != held_out)
        .map(|(_, d)| d.clone())
        .collect();
    match fit_informative_prior(&others, options) {
        Ok(fit) => Ok(fit),
        Err(ModelError::PriorSearchNotConverged { best, evals }) => {
            log::warn!("prior search for held-out {held_out} stopped after {evals} evaluations; using best point");
            Ok(*best)
        }
        Err(e) => Err(e),
    }
}

/// Mean squared error of posterior-mean predictions on `test`.
pub fn prediction_mse(posterior: &NigParams, test: &OperatorDataset) -> f64 {
    let n = test.rows.len() as f64;
    test.rows
        .iter()
        .map(|r| {
            let p = crate::model::predictive_location(posterior, r.scale, r.delay_s, &test.transform);
            (p - r.value).powi(2)
        })
        .sum::<f64>()
        / n
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PriorComparison {
    pub train_size: usize,
    pub informed_mse: f64,
    pub flat_mse: f64,
}

/// Random `n`-row training subset whose flat-prior fit is determined, and
/// the remaining rows as test set. `None` if no such subset turned up.
pub fn random_split<R: Rng>(data: &OperatorDataset, n: usize, rng: &mut R) -> Option<(OperatorDataset, OperatorDataset)> {
    if n >= data.len() {
        return None;
    }
    for _ in 0..1000 {
        let mut idx = sample(rng, data.len(), n).into_vec();
        idx.sort_unstable();
        let train = data.subset(&idx);
        if fit_posterior(&NigParams::noninformative(), &train).is_ok() {
            let rest: Vec<usize> = (0..data.len()).filter(|j| idx.binary_search(j).is_err()).collect();
            return Some((train, data.subset(&rest)));
        }
    }
    None
}

/// Cohort-mean held-out MSE of each operator's model trained on `train_size`
/// random rows, under its own informative prior and under the flat prior.
pub fn compare_priors<R: Rng>(
    data: &[OperatorDataset],
    priors: &[NigParams],
    train_size: usize,
    rng: &mut R,
) -> Result<PriorComparison, ModelError> {
    let (mut informed, mut flat) = (0.0, 0.0);
    for (d, prior) in data.iter().zip(priors) {
        let (train, test) = random_split(d, train_size, rng).ok_or(ModelError::RankDeficient)?;
        informed += prediction_mse(&fit_posterior(prior, &train)?, &test);
        flat += prediction_mse(&fit_posterior(&NigParams::noninformative(), &train)?, &test);
    }
    let n = data.len() as f64;
    Ok(PriorComparison {
        train_size,
        informed_mse: informed / n,
        flat_mse: flat / n,
    })
}
