//! Helpers shared by the integration test targets.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use teleoscale::metrics::MetricKind;
use teleoscale::model::{Features, Matrix, NigParams, FEATURE_DIM};
use teleoscale::stats::{
    paired_t_test, two_way_anova, Alternative, AnovaObservation, AnovaRow, PairedSamples,
};
use teleoscale::{FeatureTransform, OperatorDataset};

#[derive(Debug, Deserialize)]
pub struct PairedCase {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub alternative: String,
    pub t: f64,
    pub df: f64,
    pub p: f64,
}

#[derive(Debug, Deserialize)]
pub struct RowCase {
    pub sum_sq: f64,
    pub df: f64,
    pub f: f64,
    pub p: f64,
}

#[derive(Debug, Deserialize)]
pub struct AnovaCase {
    pub name: String,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub value: Vec<f64>,
    pub factor_a: RowCase,
    pub factor_b: RowCase,
    pub interaction: RowCase,
    pub residual_sum_sq: f64,
    pub residual_df: f64,
}

#[derive(Debug, Deserialize)]
pub struct StatsFixture {
    pub paired: Vec<PairedCase>,
    pub anova: Vec<AnovaCase>,
}

pub fn stats_fixture() -> StatsFixture {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/fixtures/stats_oracle.json");
    serde_json::from_str(&std::fs::read_to_string(path).expect("fixture present")).expect("fixture parses")
}

pub fn alternative(name: &str) -> Alternative {
    match name {
        "less" => Alternative::Less,
        "greater" => Alternative::Greater,
        "two-sided" => Alternative::TwoSided,
        other => panic!("unknown alternative {other}"),
    }
}

/// `|got - want|` relative to `max(|want|, 1)` for large values and to
/// `|want|` for small nonzero ones, so tiny p-values are compared to
/// significant digits.
pub fn rel_err(got: f64, want: f64) -> f64 {
    if want == 0.0 {
        got.abs()
    } else {
        (got - want).abs() / want.abs()
    }
}

fn row_err(got: &AnovaRow, want: &RowCase) -> f64 {
    [
        rel_err(got.sum_sq, want.sum_sq),
        rel_err(got.df, want.df),
        rel_err(got.f, want.f),
        rel_err(got.p, want.p),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Largest relative deviation from the reference fixture, per case.
pub fn stats_fixture_errors() -> Vec<(String, f64)> {
    let fx = stats_fixture();
    let mut out = Vec::new();
    for c in &fx.paired {
        let r = paired_t_test(&PairedSamples::new(c.x.clone(), c.y.clone(), alternative(&c.alternative)))
            .unwrap_or_else(|e| panic!("{}: {e}", c.name));
        let err = [rel_err(r.t, c.t), rel_err(r.df, c.df), rel_err(r.p, c.p)]
            .into_iter()
            .fold(0.0, f64::max);
        out.push((format!("paired/{}", c.name), err));
    }
    for c in &fx.anova {
        let obs: Vec<AnovaObservation> = (0..c.value.len())
            .map(|i| AnovaObservation {
                a: c.a[i],
                b: c.b[i],
                value: c.value[i],
            })
            .collect();
        let t = two_way_anova(&obs).unwrap_or_else(|e| panic!("{}: {e}", c.name));
        let err = [
            row_err(&t.factor_a, &c.factor_a),
            row_err(&t.factor_b, &c.factor_b),
            row_err(&t.interaction, &c.interaction),
            rel_err(t.residual_sum_sq, c.residual_sum_sq),
            rel_err(t.residual_df, c.residual_df),
        ]
        .into_iter()
        .fold(0.0, f64::max);
        out.push((format!("anova/{}", c.name), err));
    }
    out
}

pub fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Random proper NIG prior.
pub fn random_proper_prior<R: Rng>(rng: &mut R) -> NigParams {
    let l = Matrix::from_fn(|_, _| normal(rng));
    let precision = l * l.transpose() + Matrix::identity() * rng.random_range(0.1..2.0);
    NigParams {
        mean: Features::from_fn(|_, _| normal(rng)),
        precision,
        sum_sq: rng.random_range(0.1..3.0),
        dof: rng.random_range(1.0..10.0),
    }
}

/// `n` rows at uniformly random cells with standard normal responses.
pub fn random_dataset<R: Rng>(rng: &mut R, n: usize) -> OperatorDataset {
    let mut d = OperatorDataset::new("r", MetricKind::WeightedPerformance, FeatureTransform::default());
    for _ in 0..n {
        d.push(rng.random_range(0.1..1.0), rng.random_range(0.0..0.75), normal(rng));
    }
    d
}

pub fn design(data: &OperatorDataset) -> (DMatrix<f64>, DVector<f64>) {
    let rows = data.features();
    let x = DMatrix::from_fn(rows.len(), FEATURE_DIM, |i, j| rows[i][j]);
    let y = DVector::from_iterator(data.rows.len(), data.rows.iter().map(|r| r.value));
    (x, y)
}

/// Conjugate posterior by the textbook covariance-form formulas, with dense
/// LU inverses; independent of the crate's precision-form solver.
pub fn textbook_posterior(prior: &NigParams, data: &OperatorDataset) -> NigParams {
    let (x, y) = design(data);
    let p0 = DMatrix::from_fn(FEATURE_DIM, FEATURE_DIM, |i, j| prior.precision[(i, j)]);
    let m0 = DVector::from_fn(FEATURE_DIM, |i, _| prior.mean[i]);
    let pn = &p0 + x.transpose() * &x;
    let vn = pn.clone().try_inverse().expect("nonsingular");
    let mn = &vn * (&p0 * &m0 + x.transpose() * &y);
    let an = prior.sum_sq + (m0.transpose() * &p0 * &m0)[0] + y.dot(&y) - (mn.transpose() * &pn * &mn)[0];
    NigParams {
        mean: Features::from_fn(|i, _| mn[i]),
        precision: Matrix::from_fn(|i, j| pn[(i, j)]),
        sum_sq: an,
        dof: prior.dof + data.len() as f64,
    }
}

/// Least-squares coefficients by SVD.
pub fn ols(data: &OperatorDataset) -> DVector<f64> {
    let (x, y) = design(data);
    x.svd(true, true).solve(&y, 1e-12).expect("svd with u and v")
}

/// Largest relative difference across all hyperparameters.
pub fn nig_rel_diff(a: &NigParams, b: &NigParams) -> f64 {
    let mut worst: f64 = 0.0;
    let mut cmp = |x: f64, y: f64| worst = worst.max((x - y).abs() / y.abs().max(1.0));
    for i in 0..FEATURE_DIM {
        cmp(a.mean[i], b.mean[i]);
        for j in 0..FEATURE_DIM {
            cmp(a.precision[(i, j)], b.precision[(i, j)]);
        }
    }
    cmp(a.sum_sq, b.sum_sq);
    cmp(a.dof, b.dof);
    worst
}

/// All files below `root` with their contents, sorted by relative path.
pub fn tree(root: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).expect("readable dir") {
            let p = e.expect("dir entry").path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(root).expect("below root").to_string_lossy().into_owned();
                out.push((rel, std::fs::read(&p).expect("readable file")));
            }
        }
    }
    out.sort();
    out
}
