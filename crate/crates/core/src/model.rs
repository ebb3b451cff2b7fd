//! Personalized Bayesian polynomial regression of a performance metric over
//! (scale, delay).
//!
//! The regression is `P = φ(s, d)ᵀβ + ε` with `φ` the full quadratic basis in
//! the affinely mapped inputs and `ε ~ N(0, σ²)`. Parameters carry a
//! Normal-Inverse-Gamma prior
//!
//! ```text
//! β | σ² ~ N(m, σ² V)        1/σ² ~ Gamma(shape = b/2, rate = a/2)
//! ```
//!
//! stored in precision form (`V⁻¹`) so that the flat prior `V⁻¹ = 0` is exact.
//! Conditioning on `N` rows gives
//!
//! ```text
//! V*⁻¹ = V⁻¹ + XᵀX
//! m*   = V* (V⁻¹ m + Xᵀy)
//! a*   = a + mᵀV⁻¹m + yᵀy − m*ᵀ V*⁻¹ m*
//! b*   = b + N
//! ```
//!
//! and the posterior predictive at a new input is Student-t with `b*` degrees
//! of freedom, location `φᵀm*` and squared scale `(a*/b*)(1 + φᵀV*φ)`.

use nalgebra::{Matrix6, Vector6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{MetricKind, MetricNormalization};
use crate::optim::{nelder_mead, NelderMeadOptions};
use crate::special::{ln_gamma, student_t_cdf, student_t_ln_pdf, student_t_quantile};

/// Dimension of the quadratic feature map.
pub const FEATURE_DIM: usize = 6;

pub type Features = Vector6<f64>;
pub type Matrix = Matrix6<f64>;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid transform range: {0}")]
    InvalidTransform(String),
    #[error("invalid hyperparameters: {0}")]
    InvalidParams(String),
    #[error("V⁻¹ + XᵀX is singular; the data do not identify all six coefficients")]
    RankDeficient,
    #[error("predictive undefined: posterior has dof {dof} and sum of squares {sum_sq}")]
    UndefinedPredictive { dof: f64, sum_sq: f64 },
    #[error("marginal likelihood needs a proper prior ({0})")]
    ImproperPrior(String),
    #[error("need at least {needed} operators, got {got}")]
    CohortTooSmall { needed: usize, got: usize },
    #[error("prior search did not converge within {evals} evaluations (best log-likelihood {})", .best.log_likelihood)]
    PriorSearchNotConverged { evals: usize, best: Box<PriorFit> },
    #[error("datasets disagree on the feature transform")]
    TransformMismatch,
    #[error("model document: {0}")]
    Document(String),
}

/// Affine map of the experiment's scale and delay ranges onto `[-1, 1]²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureTransform {
    pub scale_range: (f64, f64),
    pub delay_range: (f64, f64),
}

impl Default for FeatureTransform {
    fn default() -> Self {
        Self {
            scale_range: (0.1, 1.0),
            delay_range: (0.0, 0.75),
        }
    }
}

impl FeatureTransform {
    pub fn new(scale_range: (f64, f64), delay_range: (f64, f64)) -> Result<Self, ModelError> {
        for (name, (lo, hi)) in [("scale", scale_range), ("delay", delay_range)] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(ModelError::InvalidTransform(format!("{name} range [{lo}, {hi}]")));
            }
        }
        Ok(Self { scale_range, delay_range })
    }

    fn to_unit(x: f64, (lo, hi): (f64, f64)) -> f64 {
        2.0 * (x - lo) / (hi - lo) - 1.0
    }

    fn from_unit(u: f64, (lo, hi): (f64, f64)) -> f64 {
        lo + (u + 1.0) * (hi - lo) / 2.0
    }

    pub fn map(&self, scale: f64, delay_s: f64) -> (f64, f64) {
        (Self::to_unit(scale, self.scale_range), Self::to_unit(delay_s, self.delay_range))
    }

    pub fn unmap(&self, u: f64, v: f64) -> (f64, f64) {
        (Self::from_unit(u, self.scale_range), Self::from_unit(v, self.delay_range))
    }

    pub fn contains(&self, scale: f64, delay_s: f64) -> bool {
        let (u, v) = self.map(scale, delay_s);
        const EPS: f64 = 1e-12;
        u.abs() <= 1.0 + EPS && v.abs() <= 1.0 + EPS
    }
}

/// `[1, u, v, u², uv, v²]` for already-mapped inputs.
pub fn mapped_features(u: f64, v: f64) -> Features {
    Features::new(1.0, u, v, u * u, u * v, v * v)
}

/// Quadratic features of raw `(scale, delay)`. Points outside the transform's
/// domain are allowed (extrapolation) but logged.
pub fn poly_features(scale: f64, delay_s: f64, transform: &FeatureTransform) -> Features {
    if !transform.contains(scale, delay_s) {
        log::warn!("extrapolating: (s={scale}, d={delay_s}) lies outside the model's domain");
    }
    let (u, v) = transform.map(scale, delay_s);
    mapped_features(u, v)
}

/// Normal-Inverse-Gamma hyperparameters in precision form.
#[derive(Debug, Clone, PartialEq)]
pub struct NigParams {
    /// `m`, mean of β.
    pub mean: Features,
    /// `V⁻¹`.
    pub precision: Matrix,
    /// `a`, accumulated sum of squares.
    pub sum_sq: f64,
    /// `b`, degrees of freedom.
    pub dof: f64,
}

impl NigParams {
    /// Flat prior: `m = 0`, `V⁻¹ = 0`, `a = 0`, `b = -6`, so that the
    /// posterior after `N` rows has `N - 6` degrees of freedom.
    pub fn noninformative() -> Self {
        Self {
            mean: Features::zeros(),
            precision: Matrix::zeros(),
            sum_sq: 0.0,
            dof: -(FEATURE_DIM as f64),
        }
    }

    /// Proper prior from a covariance `V` (relative to σ²).
    pub fn from_covariance(mean: Features, covariance: Matrix, sum_sq: f64, dof: f64) -> Result<Self, ModelError> {
        let precision = covariance
            .cholesky()
            .ok_or_else(|| ModelError::InvalidParams("covariance is not positive definite".into()))?
            .inverse();
        let p = Self {
            mean,
            precision: symmetrize(&precision),
            sum_sq,
            dof,
        };
        p.check_proper()?;
        Ok(p)
    }

    pub fn covariance(&self) -> Option<Matrix> {
        self.precision.cholesky().map(|c| c.inverse())
    }

    pub fn is_proper(&self) -> bool {
        self.check_proper().is_ok()
    }

    fn check_proper(&self) -> Result<(), ModelError> {
        if !(self.sum_sq > 0.0 && self.sum_sq.is_finite()) {
            return Err(ModelError::ImproperPrior(format!("a = {}", self.sum_sq)));
        }
        if !(self.dof > 0.0 && self.dof.is_finite()) {
            return Err(ModelError::ImproperPrior(format!("b = {}", self.dof)));
        }
        if self.precision.cholesky().is_none() {
            return Err(ModelError::ImproperPrior("V⁻¹ is not positive definite".into()));
        }
        Ok(())
    }

    /// Posterior mean of σ² (finite when `dof > 2`).
    pub fn noise_variance_mean(&self) -> f64 {
        self.sum_sq / (self.dof - 2.0)
    }
}

fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub scale: f64,
    pub delay_s: f64,
    pub value: f64,
}

/// Rows `(s, d, P)` of one metric for one operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OperatorDataset {
    pub operator: String,
    pub metric: MetricKind,
    pub transform: FeatureTransform,
    pub rows: Vec<Observation>,
}

impl OperatorDataset {
    pub fn new(operator: impl Into<String>, metric: MetricKind, transform: FeatureTransform) -> Self {
        Self {
            operator: operator.into(),
            metric,
            transform,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, scale: f64, delay_s: f64, value: f64) {
        self.rows.push(Observation { scale, delay_s, value });
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            rows: indices.iter().map(|&i| self.rows[i]).collect(),
            ..self.clone()
        }
    }

    pub fn features(&self) -> Vec<Features> {
        self.rows
            .iter()
            .map(|r| poly_features(r.scale, r.delay_s, &self.transform))
            .collect()
    }

    pub fn stats(&self) -> SufficientStats {
        let mut s = SufficientStats::default();
        for (phi, r) in self.features().iter().zip(&self.rows) {
            s.add(phi, r.value);
        }
        s
    }
}

/// `XᵀX`, `Xᵀy`, `yᵀy`, `N` of a dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    pub xtx: Matrix,
    pub xty: Features,
    pub yty: f64,
    pub n: usize,
}

impl Default for SufficientStats {
    fn default() -> Self {
        Self {
            xtx: Matrix::zeros(),
            xty: Features::zeros(),
            yty: 0.0,
            n: 0,
        }
    }
}

impl SufficientStats {
    pub fn add(&mut self, phi: &Features, y: f64) {
        self.xtx += phi * phi.transpose();
        self.xty += phi * y;
        self.yty += y * y;
        self.n += 1;
    }
}

/// Conditions `prior` on sufficient statistics.
pub fn update(prior: &NigParams, stats: &SufficientStats) -> Result<NigParams, ModelError> {
    let precision = symmetrize(&(prior.precision + stats.xtx));
    let chol = precision.cholesky().ok_or(ModelError::RankDeficient)?;
    let rhs = prior.precision * prior.mean + stats.xty;
    let mean = chol.solve(&rhs);
    let sum_sq = prior.sum_sq + prior.mean.dot(&(prior.precision * prior.mean)) + stats.yty - mean.dot(&rhs);
    Ok(NigParams {
        mean,
        precision,
        // cancellation can leave a tiny negative residue on exact fits
        sum_sq: sum_sq.max(0.0),
        dof: prior.dof + stats.n as f64,
    })
}

/// Posterior after observing `data`.
///
/// The sum-of-squares term is evaluated as `a + |y − Xm*|² + (m* − m)ᵀV⁻¹(m* − m)`,
/// which equals `a + mᵀV⁻¹m + yᵀy − m*ᵀV*⁻¹m*` but does not cancel.
pub fn fit_posterior(prior: &NigParams, data: &OperatorDataset) -> Result<NigParams, ModelError> {
    let features = data.features();
    let mut stats = SufficientStats::default();
    for (phi, r) in features.iter().zip(&data.rows) {
        stats.add(phi, r.value);
    }
    let mut post = update(prior, &stats)?;
    let residual: f64 = features
        .iter()
        .zip(&data.rows)
        .map(|(phi, r)| (r.value - phi.dot(&post.mean)).powi(2))
        .sum();
    let shift = post.mean - prior.mean;
    post.sum_sq = prior.sum_sq + residual + shift.dot(&(prior.precision * shift));
    Ok(post)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictiveDist {
    pub df: f64,
    pub location: f64,
    pub scale: f64,
}

impl PredictiveDist {
    pub fn mean(&self) -> f64 {
        self.location
    }

    pub fn quantile(&self, p: f64) -> f64 {
        self.location + self.scale * student_t_quantile(p, self.df)
    }

    /// Central interval holding `level` of the predictive mass.
    pub fn interval(&self, level: f64) -> (f64, f64) {
        let tail = (1.0 - level) / 2.0;
        (self.quantile(tail), self.quantile(1.0 - tail))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        student_t_cdf((x - self.location) / self.scale, self.df)
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        student_t_ln_pdf((x - self.location) / self.scale, self.df) - self.scale.ln()
    }
}

/// Posterior-mean prediction `φᵀm*`; defined for any fitted posterior.
pub fn predictive_location(posterior: &NigParams, scale: f64, delay_s: f64, transform: &FeatureTransform) -> f64 {
    poly_features(scale, delay_s, transform).dot(&posterior.mean)
}

/// Student-t posterior predictive of a new observation at `(scale, delay_s)`.
pub fn predictive(
    posterior: &NigParams,
    scale: f64,
    delay_s: f64,
    transform: &FeatureTransform,
) -> Result<PredictiveDist, ModelError> {
    let undefined = || ModelError::UndefinedPredictive {
        dof: posterior.dof,
        sum_sq: posterior.sum_sq,
    };
    if !(posterior.dof > 0.0 && posterior.sum_sq > 0.0) {
        return Err(undefined());
    }
    let phi = poly_features(scale, delay_s, transform);
    let chol = posterior.precision.cholesky().ok_or(ModelError::RankDeficient)?;
    let leverage = phi.dot(&chol.solve(&phi));
    let scale2 = posterior.sum_sq / posterior.dof * (1.0 + leverage);
    if !(scale2 > 0.0 && scale2.is_finite()) {
        return Err(undefined());
    }
    Ok(PredictiveDist {
        df: posterior.dof,
        location: phi.dot(&posterior.mean),
        scale: scale2.sqrt(),
    })
}

fn ln_det_spd(m: &Matrix) -> Option<f64> {
    let chol = m.cholesky()?;
    Some(2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>())
}

/// Log evidence `ln p(y | X)` of a dataset under a proper prior, from its
/// sufficient statistics and the prior's `ln |V⁻¹|`.
fn ln_evidence(prior: &NigParams, ln_det_prior_precision: f64, stats: &SufficientStats) -> Result<f64, ModelError> {
    let post = update(prior, stats)?;
    let ln_det_post = ln_det_spd(&post.precision).ok_or(ModelError::RankDeficient)?;
    let n = stats.n as f64;
    Ok(-0.5 * n * std::f64::consts::PI.ln() + 0.5 * (ln_det_prior_precision - ln_det_post)
        + 0.5 * prior.dof * prior.sum_sq.ln()
        - 0.5 * post.dof * post.sum_sq.ln()
        + ln_gamma(post.dof / 2.0)
        - ln_gamma(prior.dof / 2.0))
}

/// Log marginal likelihood of `data` under a proper NIG prior (a multivariate
/// Student-t density in `y`).
pub fn log_marginal_likelihood(prior: &NigParams, data: &OperatorDataset) -> Result<f64, ModelError> {
    prior.check_proper()?;
    let ln_det = ln_det_spd(&prior.precision).expect("checked proper");
    ln_evidence(prior, ln_det, &data.stats())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorSearchOptions {
    /// Independent simplex searches (the first starts from moment estimates).
    pub restarts: usize,
    pub max_evals_per_restart: usize,
    pub seed: u64,
}

impl Default for PriorSearchOptions {
    fn default() -> Self {
        Self {
            restarts: 4,
            max_evals_per_restart: 6_000,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PriorFit {
    pub prior: NigParams,
    /// Summed log marginal likelihood of the cohort under `prior`.
    pub log_likelihood: f64,
    pub evals: usize,
    pub converged: bool,
}

// 6 mean offsets (standardized), 6 log prior variances, ln a, ln b
const SEARCH_DIM: usize = 2 * FEATURE_DIM + 2;

struct PriorParameterization {
    center: Features,
    spread: Features,
}

impl PriorParameterization {
    fn decode(&self, theta: &[f64]) -> (NigParams, f64) {
        let mut mean = Features::zeros();
        let mut precision = Matrix::zeros();
        let mut ln_det = 0.0;
        for j in 0..FEATURE_DIM {
            mean[j] = self.center[j] + self.spread[j] * theta[j];
            let log_var = theta[FEATURE_DIM + j];
            precision[(j, j)] = (-log_var).exp();
            ln_det -= log_var;
        }
        let prior = NigParams {
            mean,
            precision,
            sum_sq: theta[2 * FEATURE_DIM].exp(),
            dof: theta[2 * FEATURE_DIM + 1].exp(),
        };
        (prior, ln_det)
    }
}

/// Empirical-Bayes prior: the NIG hyperparameters maximizing the summed log
/// marginal likelihood of the other operators' datasets.
///
/// `V` is diagonal with log-parameterized entries, `a` and `b` are
/// log-parameterized, so every candidate is proper. The search is a seeded
/// multi-start Nelder-Mead.
pub fn fit_informative_prior(cohort: &[OperatorDataset], options: &PriorSearchOptions) -> Result<PriorFit, ModelError> {
    if cohort.len() < 2 {
        return Err(ModelError::CohortTooSmall {
            needed: 2,
            got: cohort.len(),
        });
    }
    let transform = cohort[0].transform;
    if cohort.iter().any(|d| d.transform != transform) {
        return Err(ModelError::TransformMismatch);
    }
    let stats: Vec<SufficientStats> = cohort.iter().map(OperatorDataset::stats).collect();
    let (init, param) = moment_start(&stats)?;

    let objective = |theta: &[f64]| -> f64 {
        let (prior, ln_det) = param.decode(theta);
        let mut total = 0.0;
        for s in &stats {
            match ln_evidence(&prior, ln_det, s) {
                Ok(v) if v.is_finite() => total += v,
                _ => return f64::NAN,
            }
        }
        -total
    };

    let nm = NelderMeadOptions {
        max_evals: options.max_evals_per_restart,
        f_tol: 1e-7,
        x_tol: 1e-5,
        initial_step: 1.0,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(options.seed);
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut evals = 0;
    let mut converged = false;
    for restart in 0..options.restarts.max(1) {
        let start: Vec<f64> = if restart == 0 {
            init.clone()
        } else {
            init.iter()
                .map(|x| x + rng.sample::<f64, _>(StandardNormal))
                .collect()
        };
        // polish from the found point once; simplex searches stall in 14-D
        let first = nelder_mead(objective, &start, &nm);
        let polish = nelder_mead(
            objective,
            &first.x,
            &NelderMeadOptions {
                initial_step: 0.25,
                ..nm
            },
        );
        evals += first.evals + polish.evals;
        converged |= polish.converged;
        let (x, v) = if polish.value <= first.value {
            (polish.x, polish.value)
        } else {
            (first.x, first.value)
        };
        if best.as_ref().is_none_or(|(_, bv)| v < *bv) {
            best = Some((x, v));
        }
    }
    let (x, value) = best.expect("at least one restart");
    if !value.is_finite() {
        return Err(ModelError::InvalidParams("no finite likelihood found".into()));
    }
    let fit = PriorFit {
        prior: param.decode(&x).0,
        log_likelihood: -value,
        evals,
        converged,
    };
    if converged {
        Ok(fit)
    } else {
        Err(ModelError::PriorSearchNotConverged {
            evals,
            best: Box::new(fit),
        })
    }
}

/// Search start from per-operator least-squares fits (pooled when an
/// operator's data cannot identify the coefficients alone).
fn moment_start(stats: &[SufficientStats]) -> Result<(Vec<f64>, PriorParameterization), ModelError> {
    let flat = NigParams::noninformative();
    let mut pooled = SufficientStats::default();
    for s in stats {
        pooled.xtx += s.xtx;
        pooled.xty += s.xty;
        pooled.yty += s.yty;
        pooled.n += s.n;
    }
    let pooled_fit = update(&flat, &pooled)?;
    let pooled_var = (pooled_fit.sum_sq / (pooled.n as f64 - FEATURE_DIM as f64).max(1.0)).max(1e-12);

    let coefs: Vec<(Features, f64)> = stats
        .iter()
        .filter(|s| s.n > FEATURE_DIM)
        .filter_map(|s| update(&flat, s).ok().map(|p| (p.mean, p.sum_sq / p.dof)))
        .collect();
    let (center, spread, noise_var) = if coefs.len() >= 2 {
        let k = coefs.len() as f64;
        let center = coefs.iter().map(|c| c.0).sum::<Features>() / k;
        let var = coefs.iter().map(|c| (c.0 - center).map(|x| x * x)).sum::<Features>() / (k - 1.0);
        let noise = coefs.iter().map(|c| c.1).sum::<f64>() / k;
        (center, var.map(f64::sqrt), noise.max(1e-12))
    } else {
        let spread = pooled_fit.mean.map(|x| x.abs().max(pooled_var.sqrt()));
        (pooled_fit.mean, spread, pooled_var)
    };
    let floor = 1e-6 * (1.0 + center.amax());
    let spread = spread.map(|x| x.max(floor));

    let mut init = vec![0.0; SEARCH_DIM];
    for j in 0..FEATURE_DIM {
        init[FEATURE_DIM + j] = (spread[j] * spread[j] / noise_var).ln();
    }
    let dof0: f64 = 4.0;
    init[2 * FEATURE_DIM] = (dof0 * noise_var).ln();
    init[2 * FEATURE_DIM + 1] = dof0.ln();
    Ok((init, PriorParameterization { center, spread }))
}

/// Which prior a fitted model started from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorKind {
    Noninformative,
    Informative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct NigDoc {
    mean: Vec<f64>,
    /// Row-major `V⁻¹`.
    precision: Vec<Vec<f64>>,
    sum_sq: f64,
    dof: f64,
}

impl From<&NigParams> for NigDoc {
    fn from(p: &NigParams) -> Self {
        Self {
            mean: p.mean.iter().copied().collect(),
            precision: (0..FEATURE_DIM)
                .map(|i| (0..FEATURE_DIM).map(|j| p.precision[(i, j)]).collect())
                .collect(),
            sum_sq: p.sum_sq,
            dof: p.dof,
        }
    }
}

impl TryFrom<NigDoc> for NigParams {
    type Error = ModelError;
    fn try_from(d: NigDoc) -> Result<Self, ModelError> {
        let bad = |m: &str| ModelError::Document(m.to_string());
        if d.mean.len() != FEATURE_DIM || d.precision.len() != FEATURE_DIM {
            return Err(bad("hyperparameters must be 6-dimensional"));
        }
        if d.precision.iter().any(|r| r.len() != FEATURE_DIM) {
            return Err(bad("precision must be 6×6"));
        }
        Ok(NigParams {
            mean: Features::from_column_slice(&d.mean),
            precision: Matrix::from_fn(|i, j| d.precision[i][j]),
            sum_sq: d.sum_sq,
            dof: d.dof,
        })
    }
}

impl Serialize for NigParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        NigDoc::from(self).serialize(s)
    }
}

impl<'de> Deserialize<'de> for NigParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        NigDoc::deserialize(d)?.try_into().map_err(serde::de::Error::custom)
    }
}

/// Saved model: transform, metric identity, prior and posterior.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub schema_version: u32,
    #[serde(default)]
    pub operator: Option<String>,
    pub metric: MetricKind,
    pub transform: FeatureTransform,
    pub prior_kind: PriorKind,
    pub prior: NigParams,
    pub posterior: NigParams,
    pub rows: usize,
    /// Normalization the metric series was computed under, if any.
    #[serde(default)]
    pub normalization: Option<MetricNormalization>,
}

impl ModelDocument {
    pub fn fit(data: &OperatorDataset, prior: NigParams, prior_kind: PriorKind) -> Result<Self, ModelError> {
        let posterior = fit_posterior(&prior, data)?;
        Ok(Self {
            schema_version: MODEL_SCHEMA_VERSION,
            operator: Some(data.operator.clone()),
            metric: data.metric,
            transform: data.transform,
            prior_kind,
            prior,
            posterior,
            rows: data.len(),
            normalization: None,
        })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("model serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let doc: ModelDocument = serde_json::from_str(text).map_err(|e| ModelError::Document(e.to_string()))?;
        if doc.schema_version != MODEL_SCHEMA_VERSION {
            return Err(ModelError::Document(format!(
                "unsupported schema version {}",
                doc.schema_version
            )));
        }
        Ok(doc)
    }

    pub fn location(&self, scale: f64, delay_s: f64) -> f64 {
        predictive_location(&self.posterior, scale, delay_s, &self.transform)
    }

    pub fn predictive(&self, scale: f64, delay_s: f64) -> Result<PredictiveDist, ModelError> {
        predictive(&self.posterior, scale, delay_s, &self.transform)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn dataset(points: &[(f64, f64, f64)]) -> OperatorDataset {
        let mut d = OperatorDataset::new("op", MetricKind::WeightedPerformance, FeatureTransform::default());
        for &(s, dl, y) in points {
            d.push(s, dl, y);
        }
        d
    }

    fn grid_rows(f: impl Fn(f64, f64) -> f64) -> OperatorDataset {
        let mut rows = Vec::new();
        for s in [0.1, 0.15, 0.2, 0.4, 0.7, 1.0] {
            for d in [0.0, 0.25, 0.5, 0.75] {
                rows.push((s, d, f(s, d)));
            }
        }
        dataset(&rows)
    }

    #[test]
    fn feature_map_examples() {
        let t = FeatureTransform::default();
        let (s_mid, d_mid) = t.unmap(0.0, 0.0);
        assert!((poly_features(s_mid, d_mid, &t) - Features::new(1.0, 0.0, 0.0, 0.0, 0.0, 0.0)).amax() < 1e-15);
        assert_eq!(poly_features(1.0, 0.75, &t), Features::new(1.0, 1.0, 1.0, 1.0, 1.0, 1.0));
        assert_eq!(mapped_features(-1.0, 0.5), Features::new(1.0, -1.0, 0.5, 1.0, -0.5, 0.25));
        let (s, d) = t.unmap(-1.0, 0.5);
        let phi = poly_features(s, d, &t);
        assert!((phi - Features::new(1.0, -1.0, 0.5, 1.0, -0.5, 0.25)).amax() < 1e-12);
        assert!(t.contains(0.1, 0.0) && !t.contains(1.2, 0.0));
        assert!(FeatureTransform::new((1.0, 1.0), (0.0, 1.0)).is_err());
    }

    #[test]
    fn flat_prior_dof_and_minimum_rows() {
        let data = grid_rows(|s, d| s - d + 0.1 * (s * 37.0).sin());
        let ten = data.subset(&[0, 3, 5, 6, 9, 10, 12, 15, 18, 23]);
        let post = fit_posterior(&NigParams::noninformative(), &ten).unwrap();
        assert_eq!(post.dof, 4.0);
        let six = data.subset(&[0, 20, 13, 3, 23, 18]);
        let post = fit_posterior(&NigParams::noninformative(), &six).unwrap();
        assert_eq!(post.dof, 0.0);
        assert!(matches!(
            predictive(&post, 0.5, 0.3, &data.transform),
            Err(ModelError::UndefinedPredictive { .. })
        ));
        let five = data.subset(&[0, 1, 2, 3, 4]);
        assert_eq!(
            fit_posterior(&NigParams::noninformative(), &five),
            Err(ModelError::RankDeficient)
        );
    }

    #[test]
    fn empty_update_keeps_proper_prior() {
        let prior = NigParams::from_covariance(
            Features::new(1.0, 2.0, 3.0, 4.0, 5.0, 6.0),
            Matrix::identity() * 2.0,
            1.5,
            3.0,
        )
        .unwrap();
        let post = fit_posterior(&prior, &dataset(&[])).unwrap();
        assert!((post.mean - prior.mean).amax() < 1e-12);
        assert!((post.precision - prior.precision).amax() < 1e-12);
        assert_eq!(post.sum_sq, prior.sum_sq);
        assert_eq!(post.dof, prior.dof);
    }

    #[test]
    fn residual_form_matches_textbook_form() {
        let prior = NigParams::from_covariance(
            Features::new(0.2, -0.1, 0.3, 0.0, 0.1, -0.2),
            Matrix::identity() * 0.7,
            0.4,
            2.5,
        )
        .unwrap();
        let data = grid_rows(|s, d| 0.5 * s - d * d + 0.05 * ((s + d) * 91.0).sin());
        let a = fit_posterior(&prior, &data).unwrap();
        let b = update(&prior, &data.stats()).unwrap();
        assert!((a.sum_sq - b.sum_sq).abs() < 1e-10 * a.sum_sq.max(1.0));
        assert_eq!(a.mean, b.mean);
    }

    #[test]
    fn noiseless_data_is_interpolated() {
        let beta = Features::new(0.3, -1.2, 0.4, 0.8, -0.5, 0.25);
        let t = FeatureTransform::default();
        let data = grid_rows(|s, d| poly_features(s, d, &t).dot(&beta));
        let post = fit_posterior(&NigParams::noninformative(), &data).unwrap();
        assert!((post.mean - beta).amax() < 1e-10);
        for r in &data.rows {
            assert!((predictive_location(&post, r.scale, r.delay_s, &t) - r.value).abs() < 1e-10);
        }
    }

    #[test]
    fn predictive_widens_away_from_the_data() {
        let data = grid_rows(|s, d| s * (1.0 - d) + 0.03 * ((s * 13.0 + d * 7.0).sin()));
        let post = fit_posterior(&NigParams::noninformative(), &data).unwrap();
        let t = data.transform;
        let mut last = 0.0;
        for k in 0..8 {
            let u = 1.0 + 0.5 * k as f64;
            let (s, d) = t.unmap(u, u);
            let p = predictive(&post, s, d, &t).unwrap();
            assert!(p.scale > last);
            last = p.scale;
        }
    }

    #[test]
    fn even_labels_give_even_predictions() {
        let t = FeatureTransform::default();
        let mut rows = Vec::new();
        for u in [-1.0, -0.6, -0.2, 0.2, 0.6, 1.0] {
            for v in [-1.0, -0.3, 0.3, 1.0] {
                let (s, d) = t.unmap(u, v);
                rows.push((s, d, u * u + 0.3 * v + ((v * 5.0).cos())));
            }
        }
        let data = dataset(&rows);
        let post = fit_posterior(&NigParams::noninformative(), &data).unwrap();
        for u in [0.1, 0.45, 0.9] {
            let (s1, d) = t.unmap(u, 0.2);
            let (s2, _) = t.unmap(-u, 0.2);
            let p1 = predictive(&post, s1, d, &t).unwrap();
            let p2 = predictive(&post, s2, d, &t).unwrap();
            assert!((p1.location - p2.location).abs() < 1e-10);
            assert!((p1.scale - p2.scale).abs() < 1e-10);
        }
    }

    #[test]
    fn marginal_likelihood_of_one_point_is_student_t() {
        let t = FeatureTransform::default();
        let mean = Features::new(0.5, -0.2, 0.1, 0.3, 0.0, -0.4);
        let cov = Matrix::from_fn(|i, j| if i == j { 0.5 + 0.1 * i as f64 } else { 0.05 });
        let prior = NigParams::from_covariance(mean, cov, 0.8, 3.0).unwrap();
        let (s, d, y) = (0.3, 0.6, 0.9);
        let lml = log_marginal_likelihood(&prior, &dataset(&[(s, d, y)])).unwrap();

        // independent route: y ~ t_b(φᵀm, (a/b)(1 + φᵀVφ))
        let phi = poly_features(s, d, &t);
        let scale2 = prior.sum_sq / prior.dof * (1.0 + phi.dot(&(cov * phi)));
        let z = (y - phi.dot(&mean)) / scale2.sqrt();
        let nu = prior.dof;
        let expected = ln_gamma((nu + 1.0) / 2.0)
            - ln_gamma(nu / 2.0)
            - 0.5 * (nu * std::f64::consts::PI * scale2).ln()
            - (nu + 1.0) / 2.0 * (1.0 + z * z / nu).ln();
        assert!((lml - expected).abs() < 1e-10, "{lml} vs {expected}");
    }

    #[test]
    fn marginal_likelihood_needs_proper_prior_and_ignores_order() {
        let data = grid_rows(|s, d| s + d);
        assert!(matches!(
            log_marginal_likelihood(&NigParams::noninformative(), &data),
            Err(ModelError::ImproperPrior(_))
        ));
        let prior = NigParams::from_covariance(Features::zeros(), Matrix::identity(), 1.0, 2.0).unwrap();
        let mut reversed = data.clone();
        reversed.rows.reverse();
        let a = log_marginal_likelihood(&prior, &data).unwrap();
        let b = log_marginal_likelihood(&prior, &reversed).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn model_document_round_trip() {
        let data = grid_rows(|s, d| s - d);
        let doc = ModelDocument::fit(&data, NigParams::noninformative(), PriorKind::Noninformative).unwrap();
        let back = ModelDocument::from_json(&doc.to_json()).unwrap();
        assert_eq!(back, doc);
        let bumped = doc.to_json().replace("\"schema_version\": 1", "\"schema_version\": 9");
        assert!(ModelDocument::from_json(&bumped).is_err());
    }

    #[test]
    fn prior_search_rejects_tiny_cohort() {
        let d = grid_rows(|s, _| s);
        assert!(matches!(
            fit_informative_prior(&[d], &PriorSearchOptions::default()),
            Err(ModelError::CohortTooSmall { .. })
        ));
    }
}
