//! Motion-scaling toolkit for delayed teleoperation.
//!
//! A leader device drives a follower cursor through a fixed-tick pipeline
//! that applies a motion scale and a communication delay. Operators perform a
//! ring-of-targets pointing task; each trial yields throughput and error
//! metrics. Per-operator Bayesian polynomial models of those metrics over
//! (scale, delay) pick the scale to use at a given delay.
//!
//! Module map:
//!
//! - [`teleop`]: leader-to-follower pipeline
//! - [`task`]: target layouts and trial state
//! - [`trial_log`]: trial log file format
//! - [`metrics`]: throughput, deviation, overshoot, weighted performance
//! - [`model`]: Normal-Inverse-Gamma regression and empirical-Bayes priors
//! - [`optimizer`]: optimal-scale search
//! - [`synth`]: simulated operators
//! - [`stats`]: paired t-tests and two-way ANOVA
//! - [`session`]: experiment sessions, wire protocol, TCP server, headless runs

pub mod config;
pub mod experiment;
pub mod geometry;
pub mod metrics;
pub mod model;
pub mod optim;
pub mod optimizer;
pub mod session;
pub mod special;
pub mod stats;
pub mod synth;
pub mod task;
pub mod teleop;
pub mod trial_log;

pub use geometry::{Bounds, Vec2};
pub use metrics::{MetricKind, MetricSet, RawMetrics};
pub use model::{FeatureTransform, NigParams, OperatorDataset, PredictiveDist};
pub use task::{TrialConfig, TrialLog, TrialRunner};
pub use teleop::{CommandSample, FollowerState, Pipeline, PipelineConfig};
