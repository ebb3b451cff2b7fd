//! Paired-sample t-tests and two-way ANOVA with Type II sums of squares.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Cell, MetricKind, SummaryRow};
use crate::special::{f_sf, student_t_cdf, student_t_sf};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} observations, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("differences have zero variance")]
    ZeroVariance,
    #[error("factor {0} needs at least two levels")]
    SingleLevel(&'static str),
    #[error("insufficient replication: {0} df is {1}")]
    InsufficientDf(&'static str, i64),
    #[error("non-finite observation")]
    NonFinite,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Alternative {
    /// Mean of `x - y` below zero.
    Less,
    Greater,
    TwoSided,
}

impl Alternative {
    pub fn flipped(self) -> Self {
        match self {
            Alternative::Less => Alternative::Greater,
            Alternative::Greater => Alternative::Less,
            Alternative::TwoSided => Alternative::TwoSided,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Alternative::Less => "less",
            Alternative::Greater => "greater",
            Alternative::TwoSided => "two-sided",
        }
    }
}

/// `x[i]` and `y[i]` come from the same operator (or trial).
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSamples {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub alternative: Alternative,
}

impl PairedSamples {
    pub fn new(x: Vec<f64>, y: Vec<f64>, alternative: Alternative) -> Self {
        Self { x, y, alternative }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

pub fn paired_t_test(samples: &PairedSamples) -> Result<TTest, StatsError> {
    let (x, y) = (&samples.x, &samples.y);
    if x.len() != y.len() {
        return Err(StatsError::LengthMismatch(x.len(), y.len()));
    }
    let n = x.len();
    if n < 2 {
        return Err(StatsError::TooFew { needed: 2, got: n });
    }
    let diffs: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(StatsError::NonFinite);
    }
    let nf = n as f64;
    let mean = diffs.iter().sum::<f64>() / nf;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    if var <= 0.0 {
        return Err(StatsError::ZeroVariance);
    }
    let t = mean / (var / nf).sqrt();
    let df = nf - 1.0;
    let p = match samples.alternative {
        Alternative::Less => student_t_cdf(t, df),
        Alternative::Greater => student_t_sf(t, df),
        Alternative::TwoSided => (2.0 * student_t_sf(t.abs(), df)).min(1.0),
    };
    Ok(TTest { t, df, p })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub sum_sq: f64,
    pub df: f64,
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnovaTable {
    pub factor_a: AnovaRow,
    pub factor_b: AnovaRow,
    pub interaction: AnovaRow,
    pub residual_sum_sq: f64,
    pub residual_df: f64,
}

impl AnovaTable {
    pub fn rows(&self) -> [(&'static str, AnovaRow); 3] {
        [("A", self.factor_a), ("B", self.factor_b), ("A:B", self.interaction)]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnovaObservation {
    pub a: f64,
    pub b: f64,
    pub value: f64,
}

fn levels(values: impl Iterator<Item = f64>) -> Vec<f64> {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

fn level_index(levels: &[f64], x: f64) -> usize {
    levels.binary_search_by(|l| l.total_cmp(&x)).expect("level present")
}

/// Least-squares residual sum of squares and column rank of `x`.
fn fit_rss(x: &DMatrix<f64>, y: &DVector<f64>) -> (f64, usize) {
    let svd = x.clone().svd(true, true);
    let max_sv = svd.singular_values.max();
    let tol = max_sv * (x.nrows().max(x.ncols()) as f64) * f64::EPSILON;
    let rank = svd.singular_values.iter().filter(|&&s| s > tol).count();
    let beta = svd.solve(y, tol).expect("svd computed with u and v");
    let resid = y - x * beta;
    (resid.norm_squared(), rank)
}

/// Two-way ANOVA with interaction. Factor levels are the distinct values of
/// `a` and `b`; main effects use Type II sums of squares, so unbalanced
/// designs are handled.
pub fn two_way_anova(observations: &[AnovaObservation]) -> Result<AnovaTable, StatsError> {
    if observations.iter().any(|o| !(o.a.is_finite() && o.b.is_finite() && o.value.is_finite())) {
        return Err(StatsError::NonFinite);
    }
    let la = levels(observations.iter().map(|o| o.a));
    let lb = levels(observations.iter().map(|o| o.b));
    if la.len() < 2 {
        return Err(StatsError::SingleLevel("A"));
    }
    if lb.len() < 2 {
        return Err(StatsError::SingleLevel("B"));
    }
    let n = observations.len();
    let (ka, kb) = (la.len() - 1, lb.len() - 1);

    // treatment coding: intercept | A dummies | B dummies | A×B dummies
    let build = |with_a: bool, with_b: bool, with_ab: bool| {
        let cols = 1 + if with_a { ka } else { 0 } + if with_b { kb } else { 0 } + if with_ab { ka * kb } else { 0 };
        let mut x = DMatrix::<f64>::zeros(n, cols);
        for (r, o) in observations.iter().enumerate() {
            let ia = level_index(&la, o.a);
            let ib = level_index(&lb, o.b);
            x[(r, 0)] = 1.0;
            let mut c = 1;
            if with_a {
                if ia > 0 {
                    x[(r, c + ia - 1)] = 1.0;
                }
                c += ka;
            }
            if with_b {
                if ib > 0 {
                    x[(r, c + ib - 1)] = 1.0;
                }
                c += kb;
            }
            if with_ab && ia > 0 && ib > 0 {
                x[(r, c + (ia - 1) * kb + ib - 1)] = 1.0;
            }
        }
        x
    };
    let y = DVector::from_iterator(n, observations.iter().map(|o| o.value));

    let (rss_full, rank_full) = fit_rss(&build(true, true, true), &y);
    let (rss_ab, rank_ab) = fit_rss(&build(true, true, false), &y);
    let (rss_a, rank_a) = fit_rss(&build(true, false, false), &y);
    let (rss_b, rank_b) = fit_rss(&build(false, true, false), &y);

    let df_resid = n as i64 - rank_full as i64;
    if df_resid <= 0 {
        return Err(StatsError::InsufficientDf("residual", df_resid));
    }
    let df_inter = rank_full as i64 - rank_ab as i64;
    if df_inter <= 0 {
        return Err(StatsError::InsufficientDf("interaction", df_inter));
    }
    // sums of squares at rounding level of the data are exact zeros
    let noise = 1e-13 * y.norm_squared();
    let snap = |ss: f64| if ss <= noise { 0.0 } else { ss };
    let rss_full = snap(rss_full);
    let df_resid = df_resid as f64;
    let mse = rss_full / df_resid;
    let row = |ss: f64, df: f64| {
        let ss = snap(ss);
        let f = if mse > 0.0 {
            ss / df / mse
        } else if ss > 0.0 {
            f64::INFINITY
        } else {
            0.0
        };
        AnovaRow {
            sum_sq: ss,
            df,
            f,
            p: if f.is_infinite() { 0.0 } else { f_sf(f, df, df_resid) },
        }
    };
    Ok(AnovaTable {
        factor_a: row(rss_b - rss_ab, (rank_ab - rank_b) as f64),
        factor_b: row(rss_a - rss_ab, (rank_ab - rank_a) as f64),
        interaction: row(rss_ab - rss_full, df_inter as f64),
        residual_sum_sq: rss_full,
        residual_df: df_resid,
    })
}

/// One row of the exported statistics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// `anova` or `paired_t`.
    pub test: String,
    pub metric: MetricKind,
    /// ANOVA effect (`scale`, `delay`, `scale:delay`, `residual`) or the
    /// paired alternative.
    pub effect: String,
    pub delay_s: Option<f64>,
    pub scale: Option<f64>,
    pub sum_sq: Option<f64>,
    pub df: f64,
    pub df_resid: Option<f64>,
    pub statistic: Option<f64>,
    pub p_value: Option<f64>,
}

pub const REPORT_HEADER: &str = "test,metric,effect,delay_s,scale,sum_sq,df,df_resid,statistic,p_value";

pub fn report_csv(rows: &[ReportRow]) -> String {
    fn opt(v: Option<f64>) -> String {
        v.map(|x| {
            // exponent form keeps tiny p-values readable; both forms round-trip
            if x != 0.0 && x.abs() < 1e-4 {
                format!("{x:e}")
            } else {
                x.to_string()
            }
        })
        .unwrap_or_default()
    }
    let mut out = format!("{REPORT_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.test,
            r.metric,
            r.effect,
            opt(r.delay_s),
            opt(r.scale),
            opt(r.sum_sq),
            r.df,
            opt(r.df_resid),
            opt(r.statistic),
            opt(r.p_value)
        );
    }
    out
}

/// Cell values keyed by user, for pairing.
fn by_cell(rows: &[SummaryRow], metric: MetricKind) -> BTreeMap<Cell, BTreeMap<&str, f64>> {
    let mut out: BTreeMap<Cell, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in rows {
        out.entry(r.cell).or_default().insert(r.user.as_str(), r.metrics.get(metric));
    }
    out
}

/// Paired t-tests of every scale against `reference_scale` at each delay,
/// pairing by user. Users missing either cell are left out of that test.
pub fn paired_against_reference(
    rows: &[SummaryRow],
    metric: MetricKind,
    reference_scale: f64,
    alternative: Alternative,
) -> Vec<(Cell, Result<TTest, StatsError>)> {
    let cells = by_cell(rows, metric);
    let mut out = Vec::new();
    for (cell, values) in &cells {
        if cell.scale == reference_scale {
            continue;
        }
        let Some(reference) = cells.get(&Cell::new(reference_scale, cell.delay_s)) else {
            continue;
        };
        let (x, y): (Vec<f64>, Vec<f64>) = values
            .iter()
            .filter_map(|(user, v)| reference.get(user).map(|r| (*v, *r)))
            .unzip();
        out.push((*cell, paired_t_test(&PairedSamples::new(x, y, alternative))));
    }
    out
}

/// Scale × delay ANOVA of one metric over summary rows.
pub fn anova_by_cell(rows: &[SummaryRow], metric: MetricKind) -> Result<AnovaTable, StatsError> {
    let obs: Vec<AnovaObservation> = rows
        .iter()
        .map(|r| AnovaObservation {
            a: r.cell.scale,
            b: r.cell.delay_s,
            value: r.metrics.get(metric),
        })
        .collect();
    two_way_anova(&obs)
}

/// ANOVA of each metric plus paired tests against the nominal scale, as
/// report rows. Tests that cannot be computed are logged and skipped.
pub fn battery(rows: &[SummaryRow], metrics: &[MetricKind], reference_scale: f64) -> Vec<ReportRow> {
    let mut out = Vec::new();
    for &metric in metrics {
        match anova_by_cell(rows, metric) {
            Ok(t) => {
                for (effect, r) in [
                    ("scale", t.factor_a),
                    ("delay", t.factor_b),
                    ("scale:delay", t.interaction),
                ] {
                    out.push(ReportRow {
                        test: "anova".into(),
                        metric,
                        effect: effect.into(),
                        delay_s: None,
                        scale: None,
                        sum_sq: Some(r.sum_sq),
                        df: r.df,
                        df_resid: Some(t.residual_df),
                        statistic: Some(r.f),
                        p_value: Some(r.p),
                    });
                }
                out.push(ReportRow {
                    test: "anova".into(),
                    metric,
                    effect: "residual".into(),
                    delay_s: None,
                    scale: None,
                    sum_sq: Some(t.residual_sum_sq),
                    df: t.residual_df,
                    df_resid: None,
                    statistic: None,
                    p_value: None,
                });
            }
            Err(e) => log::warn!("anova of {metric} skipped: {e}"),
        }
    }
    for &metric in metrics {
        let alternative = match metric {
            MetricKind::Throughput | MetricKind::WeightedPerformance => Alternative::Greater,
            _ => Alternative::Less,
        };
        for (cell, res) in paired_against_reference(rows, metric, reference_scale, alternative) {
            match res {
                Ok(t) => out.push(ReportRow {
                    test: "paired_t".into(),
                    metric,
                    effect: alternative.name().into(),
                    delay_s: Some(cell.delay_s),
                    scale: Some(cell.scale),
                    sum_sq: None,
                    df: t.df,
                    df_resid: None,
                    statistic: Some(t.t),
                    p_value: Some(t.p),
                }),
                Err(e) => log::warn!("paired test of {metric} at {cell:?} skipped: {e}"),
            }
        }
    }
    out
}
