//! Per-trial speed and safety metrics: throughput, click deviation,
//! overshoot distance, and their weighted combination.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::task::{TrialConfig, TrialLog};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("trial is incomplete ({clicks} of {expected} clicks)")]
    IncompleteTrial { clicks: usize, expected: usize },
    #[error("trial has no clicks")]
    NoClicks,
    #[error("weight {0} outside [0, 1]")]
    WeightOutOfRange(f64),
    #[error("empty dataset")]
    Empty,
    #[error("unknown metric {0:?}")]
    UnknownMetric(String),
}

/// Metrics the operator models can be fitted to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    Throughput,
    TargetDeviation,
    Overshoot,
    /// Overshoot plus click deviation.
    TotalError,
    WeightedPerformance,
}

impl MetricKind {
    pub const ALL: [MetricKind; 5] = [
        MetricKind::Throughput,
        MetricKind::TargetDeviation,
        MetricKind::Overshoot,
        MetricKind::TotalError,
        MetricKind::WeightedPerformance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Throughput => "throughput",
            MetricKind::TargetDeviation => "target_deviation",
            MetricKind::Overshoot => "overshoot",
            MetricKind::TotalError => "total_error",
            MetricKind::WeightedPerformance => "weighted_performance",
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MetricKind {
    type Err = MetricsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "throughput" | "tp" | "TP" => Ok(MetricKind::Throughput),
            "target_deviation" | "delta_d" | "delta_D" => Ok(MetricKind::TargetDeviation),
            "overshoot" | "osd" | "OSD" => Ok(MetricKind::Overshoot),
            "total_error" | "error" => Ok(MetricKind::TotalError),
            "weighted_performance" | "wp" | "WP" => Ok(MetricKind::WeightedPerformance),
            other => Err(MetricsError::UnknownMetric(other.to_string())),
        }
    }
}

/// Unweighted per-trial metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawMetrics {
    /// bits/s
    pub throughput: f64,
    pub target_deviation: f64,
    pub overshoot: f64,
}

impl RawMetrics {
    pub fn total_error(&self) -> f64 {
        self.overshoot + self.target_deviation
    }

    pub fn from_log(log: &TrialLog) -> Result<Self, MetricsError> {
        Ok(Self {
            throughput: throughput(log)?,
            target_deviation: target_deviation(log)?,
            overshoot: overshoot_distance(log),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSet {
    pub throughput: f64,
    pub target_deviation: f64,
    pub overshoot: f64,
    pub weighted_performance: f64,
    pub weight: f64,
}

impl MetricSet {
    pub fn new(raw: RawMetrics, weight: f64, norms: &MetricNormalization) -> Result<Self, MetricsError> {
        let weighted_performance = weighted_performance(&raw, weight, norms)?;
        Ok(Self {
            throughput: raw.throughput,
            target_deviation: raw.target_deviation,
            overshoot: raw.overshoot,
            weighted_performance,
            weight,
        })
    }

    pub fn raw(&self) -> RawMetrics {
        RawMetrics {
            throughput: self.throughput,
            target_deviation: self.target_deviation,
            overshoot: self.overshoot,
        }
    }

    pub fn total_error(&self) -> f64 {
        self.overshoot + self.target_deviation
    }

    pub fn get(&self, kind: MetricKind) -> f64 {
        match kind {
            MetricKind::Throughput => self.throughput,
            MetricKind::TargetDeviation => self.target_deviation,
            MetricKind::Overshoot => self.overshoot,
            MetricKind::TotalError => self.total_error(),
            MetricKind::WeightedPerformance => self.weighted_performance,
        }
    }
}

/// Affine map `(x - offset) * gain`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Affine {
    pub offset: f64,
    pub gain: f64,
}

impl Affine {
    pub const IDENTITY: Affine = Affine { offset: 0.0, gain: 1.0 };

    /// Maps `[min, max]` onto `[0, 1]`; a degenerate range keeps unit gain.
    pub fn min_max(values: impl IntoIterator<Item = f64>) -> Option<Affine> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        if !lo.is_finite() || !hi.is_finite() {
            return None;
        }
        let gain = if hi > lo { 1.0 / (hi - lo) } else { 1.0 };
        Some(Affine { offset: lo, gain })
    }

    pub fn apply(&self, x: f64) -> f64 {
        (x - self.offset) * self.gain
    }
}

/// Brings throughput and total error onto comparable unitless scales before
/// they are mixed by the weight.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricNormalization {
    pub throughput: Affine,
    pub error: Affine,
}

impl MetricNormalization {
    /// Raw-unit mode: bits/s and workspace units are mixed directly.
    pub const RAW: MetricNormalization = MetricNormalization {
        throughput: Affine::IDENTITY,
        error: Affine::IDENTITY,
    };

    /// Min/max over a reference dataset (usually one operator's trials).
    pub fn from_reference<'a>(reference: impl IntoIterator<Item = &'a RawMetrics>) -> Result<Self, MetricsError> {
        let items: Vec<&RawMetrics> = reference.into_iter().collect();
        let throughput = Affine::min_max(items.iter().map(|m| m.throughput)).ok_or(MetricsError::Empty)?;
        let error = Affine::min_max(items.iter().map(|m| m.total_error())).ok_or(MetricsError::Empty)?;
        Ok(Self { throughput, error })
    }

    /// Fixed ranges for live sessions, where no reference dataset exists yet.
    pub fn fixed(throughput_max: f64, error_max: f64) -> Self {
        Self {
            throughput: Affine {
                offset: 0.0,
                gain: 1.0 / throughput_max,
            },
            error: Affine {
                offset: 0.0,
                gain: 1.0 / error_max,
            },
        }
    }
}

/// `log2(D/W + 1) / T` with `T` the mean interval between consecutive clicks.
pub fn throughput(log: &TrialLog) -> Result<f64, MetricsError> {
    let clicks = log.clicks.len();
    if !log.completed || clicks < 2 {
        return Err(MetricsError::IncompleteTrial {
            clicks,
            expected: log.config.target_count,
        });
    }
    let span = log.timed_span_s().expect("at least two clicks");
    let mean_interval = span / (clicks - 1) as f64;
    Ok(log.config.index_of_difficulty() / mean_interval)
}

/// Mean distance from each click to the center of the target it was aimed at.
pub fn target_deviation(log: &TrialLog) -> Result<f64, MetricsError> {
    if log.clicks.is_empty() {
        return Err(MetricsError::NoClicks);
    }
    let total: f64 = log
        .clicks
        .iter()
        .map(|c| c.follower_pos.distance(log.targets[c.target_id].center))
        .sum();
    Ok(total / log.clicks.len() as f64)
}

/// Sum of positive increments of a distance sequence.
pub fn receding_distance(r: &[f64]) -> f64 {
    r.windows(2).map(|w| (w[1] - w[0]).max(0.0)).sum()
}

/// Cumulative distance the follower moves away from the active target over the
/// timed part of the trial (from the first click on).
///
/// Each tick-to-tick step is measured against the target active during that
/// step, so the jump in distance when the active target switches is never
/// counted.
pub fn overshoot_distance(log: &TrialLog) -> f64 {
    let Some(start) = log.samples.iter().position(|s| s.click) else {
        return 0.0;
    };
    log.samples[start..]
        .windows(2)
        .map(|w| {
            let Some(target) = log.targets.get(w[1].target_id) else {
                return 0.0;
            };
            let before = w[0].follower_pos.distance(target.center);
            let after = w[1].follower_pos.distance(target.center);
            (after - before).max(0.0)
        })
        .sum()
}

/// `(1 - w) * norm(TP) - w * norm(OSD + ΔD)`.
pub fn weighted_performance(m: &RawMetrics, weight: f64, norms: &MetricNormalization) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(MetricsError::WeightOutOfRange(weight));
    }
    Ok((1.0 - weight) * norms.throughput.apply(m.throughput) - weight * norms.error.apply(m.total_error()))
}

/// Exact-float key for one (scale, delay) cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub scale: f64,
    pub delay_s: f64,
}

impl Cell {
    pub fn new(scale: f64, delay_s: f64) -> Self {
        Self { scale, delay_s }
    }

    pub fn of(config: &TrialConfig) -> Self {
        Self::new(config.scale, config.delay_s)
    }
}

impl Eq for Cell {}

impl Ord for Cell {
    fn cmp(&self, other: &Self) -> std::cmp::Ordering {
        self.scale
            .total_cmp(&other.scale)
            .then(self.delay_s.total_cmp(&other.delay_s))
    }
}

impl PartialOrd for Cell {
    fn partial_cmp(&self, other: &Self) -> Option<std::cmp::Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub cell: Cell,
    pub count: usize,
    pub mean: MetricSet,
}

/// Per-cell means, ordered by scale then delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellTable {
    pub cells: Vec<CellSummary>,
}

impl CellTable {
    pub fn get(&self, cell: Cell) -> Option<&CellSummary> {
        self.cells.iter().find(|c| c.cell == cell)
    }

    pub fn scales(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.cells.iter().map(|c| c.cell.scale).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    pub fn delays(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.cells.iter().map(|c| c.cell.delay_s).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }

    /// Scale × delay matrix of one metric; rows are scales, columns delays.
    pub fn heatmap_csv(&self, kind: MetricKind) -> String {
        let scales = self.scales();
        let delays = self.delays();
        let mut out = String::from("scale");
        for d in &delays {
            let _ = write!(out, ",{d}");
        }
        out.push('\n');
        for s in &scales {
            let _ = write!(out, "{s}");
            for d in &delays {
                match self.get(Cell::new(*s, *d)) {
                    Some(c) => {
                        let _ = write!(out, ",{}", c.mean.get(kind));
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }
}

pub fn summarize<'a>(dataset: impl IntoIterator<Item = (&'a TrialConfig, &'a MetricSet)>) -> Result<CellTable, MetricsError> {
    let mut acc: BTreeMap<Cell, (usize, [f64; 5])> = BTreeMap::new();
    for (cfg, m) in dataset {
        let entry = acc.entry(Cell::of(cfg)).or_insert((0, [0.0; 5]));
        entry.0 += 1;
        for (slot, v) in entry.1.iter_mut().zip([
            m.throughput,
            m.target_deviation,
            m.overshoot,
            m.weighted_performance,
            m.weight,
        ]) {
            *slot += v;
        }
    }
    if acc.is_empty() {
        return Err(MetricsError::Empty);
    }
    let cells = acc
        .into_iter()
        .map(|(cell, (count, sums))| {
            let n = count as f64;
            CellSummary {
                cell,
                count,
                mean: MetricSet {
                    throughput: sums[0] / n,
                    target_deviation: sums[1] / n,
                    overshoot: sums[2] / n,
                    weighted_performance: sums[3] / n,
                    weight: sums[4] / n,
                },
            }
        })
        .collect();
    Ok(CellTable { cells })
}

pub const SUMMARY_HEADER: &str = "user,scale,delay_s,TP,delta_D,OSD,WP,w";

/// One summary-table row: `user,scale,delay_s,TP,delta_D,OSD,WP,w`.
pub fn summary_row(user: &str, cell: Cell, m: &MetricSet) -> String {
    format!(
        "{user},{},{},{},{},{},{},{}",
        cell.scale, cell.delay_s, m.throughput, m.target_deviation, m.overshoot, m.weighted_performance, m.weight
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub user: String,
    pub cell: Cell,
    pub metrics: MetricSet,
}

/// The whole summary table, header included.
pub fn summary_csv(rows: &[SummaryRow]) -> String {
    let mut out = format!("{SUMMARY_HEADER}\n");
    for r in rows {
        out.push_str(&summary_row(&r.user, r.cell, &r.metrics));
        out.push('\n');
    }
    out
}

pub fn parse_summary(text: &str) -> Result<Vec<SummaryRow>, String> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 && line.starts_with("user,") || line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 8 {
            return Err(format!("line {}: expected 8 fields", i + 1));
        }
        let num = |k: usize| {
            f[k].parse::<f64>()
                .map_err(|e| format!("line {}, field {k}: {e}", i + 1))
        };
        rows.push(SummaryRow {
            user: f[0].to_string(),
            cell: Cell::new(num(1)?, num(2)?),
            metrics: MetricSet {
                throughput: num(3)?,
                target_deviation: num(4)?,
                overshoot: num(5)?,
                weighted_performance: num(6)?,
                weight: num(7)?,
            },
        });
    }
    Ok(rows)
}
