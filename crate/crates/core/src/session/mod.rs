//! Experiment sessions: trial schedules, session records, the live session
//! manager, its wire protocol and TCP server, and the headless runner.

mod manager;
pub mod headless;
pub mod server;
pub mod store;
pub mod wire;

pub use headless::{run_headless_experiment, HeadlessConfig, HeadlessReport};
pub use manager::{SessionManager, TickReport, TrialEvent, TrialStart};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Cell, MetricNormalization, MetricSet, MetricsError};
use crate::task::{TaskError, TrialConfig};
use crate::trial_log::LogFormatError;

pub const RECORD_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error("invalid plan: {0}")]
    InvalidPlan(String),
    #[error("session {0} not found")]
    NotFound(String),
    #[error("session {0} already has an active trial")]
    TrialActive(String),
    #[error("session {0} has no active trial")]
    NoActiveTrial(String),
    #[error("session {0} has no pending trials")]
    NoPendingTrials(String),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Log(#[from] LogFormatError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("record: {0}")]
    Record(String),
}

/// A session's trial schedule for one operator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionPlan {
    pub operator: String,
    pub cells: Vec<Cell>,
    pub order_seed: u64,
    pub trials_per_cell: usize,
    pub task: TrialConfig,
    #[serde(default)]
    pub practice: bool,
}

/// One slot of a session schedule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduledTrial {
    pub index: usize,
    pub config: TrialConfig,
}

/// Fisher-Yates shuffle driven by a seeded stream.
pub fn seeded_shuffle<T>(items: &mut [T], seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..items.len()).rev() {
        items.swap(i, rng.random_range(0..=i));
    }
}

impl SessionPlan {
    /// Full factorial plan over `scales × delays`.
    pub fn grid(operator: impl Into<String>, scales: &[f64], delays: &[f64], order_seed: u64, task: TrialConfig) -> Self {
        Self {
            operator: operator.into(),
            cells: scales
                .iter()
                .flat_map(|&s| delays.iter().map(move |&d| Cell::new(s, d)))
                .collect(),
            order_seed,
            trials_per_cell: 1,
            task,
            practice: false,
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        let bad = |m: String| Err(SessionError::InvalidPlan(m));
        if self.operator.is_empty() || !self.operator.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
            return bad(format!("operator id {:?} must be non-empty [A-Za-z0-9_-]", self.operator));
        }
        if self.cells.is_empty() {
            return bad("no cells".into());
        }
        if self.trials_per_cell == 0 {
            return bad("trials_per_cell must be positive".into());
        }
        for c in &self.cells {
            self.task
                .with_cell(c.scale, c.delay_s)
                .validate()
                .map_err(|e| SessionError::InvalidPlan(format!("cell ({}, {}): {e}", c.scale, c.delay_s)))?;
        }
        Ok(())
    }

    pub fn total_trials(&self) -> usize {
        self.cells.len() * self.trials_per_cell
    }

    /// Trial order and per-trial layouts; a pure function of the plan.
    pub fn schedule(&self) -> Vec<ScheduledTrial> {
        let mut cells: Vec<Cell> = (0..self.trials_per_cell)
            .flat_map(|_| self.cells.iter().copied())
            .collect();
        seeded_shuffle(&mut cells, self.order_seed);
        let mut layouts = ChaCha8Rng::seed_from_u64(self.order_seed ^ self.task.layout_seed);
        cells
            .into_iter()
            .enumerate()
            .map(|(index, c)| {
                let mut config = self.task.with_cell(c.scale, c.delay_s);
                config.layout_seed = layouts.random();
                ScheduledTrial { index, config }
            })
            .collect()
    }
}

/// A finished trial as stored in the session record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialEntry {
    pub index: usize,
    pub cell: Cell,
    /// Log path relative to the session directory.
    pub log_file: String,
    pub metrics: MetricSet,
    #[serde(default)]
    pub practice: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoidedTrial {
    pub index: usize,
    pub cell: Cell,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub schema_version: u32,
    pub session_id: String,
    pub plan: SessionPlan,
    /// Weight and normalization the stored weighted performance uses.
    pub weight: f64,
    pub normalization: MetricNormalization,
    pub trials: Vec<TrialEntry>,
    #[serde(default)]
    pub voided: Vec<VoidedTrial>,
    /// Unix seconds; absent in headless runs so their output is reproducible.
    #[serde(default)]
    pub created_at: Option<u64>,
    #[serde(default)]
    pub finalized_at: Option<u64>,
    pub finalized: bool,
}

impl SessionRecord {
    pub fn new(session_id: String, plan: SessionPlan, weight: f64, normalization: MetricNormalization) -> Self {
        Self {
            schema_version: RECORD_SCHEMA_VERSION,
            session_id,
            plan,
            weight,
            normalization,
            trials: Vec::new(),
            voided: Vec::new(),
            created_at: None,
            finalized_at: None,
            finalized: false,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("record serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, SessionError> {
        let r: SessionRecord = serde_json::from_str(text).map_err(|e| SessionError::Record(e.to_string()))?;
        if r.schema_version != RECORD_SCHEMA_VERSION {
            return Err(SessionError::Record(format!("unsupported schema version {}", r.schema_version)));
        }
        Ok(r)
    }
}

pub fn unix_now() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SCALES: [f64; 6] = [0.1, 0.15, 0.2, 0.4, 0.7, 1.0];
    const DELAYS: [f64; 4] = [0.0, 0.25, 0.5, 0.75];

    #[test]
    fn grid_plan_schedules_every_cell() {
        let plan = SessionPlan::grid("op01", &SCALES, &DELAYS, 7, TrialConfig::default());
        plan.validate().unwrap();
        let s = plan.schedule();
        assert_eq!(s.len(), 24);
        for c in &plan.cells {
            assert_eq!(s.iter().filter(|t| Cell::of(&t.config) == *c).count(), 1);
        }
        assert_eq!(s, plan.schedule());
        let other = SessionPlan { order_seed: 8, ..plan.clone() };
        assert_ne!(s, other.schedule());
    }

    #[test]
    fn invalid_plans() {
        let mut plan = SessionPlan::grid("op01", &SCALES, &DELAYS, 7, TrialConfig::default());
        plan.cells.clear();
        assert!(matches!(plan.validate(), Err(SessionError::InvalidPlan(_))));
        let plan = SessionPlan::grid("../x", &SCALES, &DELAYS, 7, TrialConfig::default());
        assert!(plan.validate().is_err());
        let plan = SessionPlan::grid("op", &[0.0], &DELAYS, 7, TrialConfig::default());
        assert!(plan.validate().is_err());
    }
}
