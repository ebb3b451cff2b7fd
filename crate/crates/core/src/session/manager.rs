use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, MutexGuard};

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::metrics::{Cell, MetricNormalization, MetricSet, RawMetrics};
use crate::task::{ClickOutcome, TargetSpec, TrialConfig, TrialRunner};
use crate::teleop::CommandSample;
use crate::trial_log::LogHeader;

use super::store;
use super::{unix_now, ScheduledTrial, SessionError, SessionPlan, SessionRecord, TrialEntry, VoidedTrial};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialStart {
    pub trial_index: usize,
    pub config: TrialConfig,
    pub targets: Vec<TargetSpec>,
    pub practice: bool,
    /// Trials left after this one.
    pub remaining: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TrialEvent {
    /// First click; timing starts.
    Started,
    TargetAdvanced { next_target: usize },
    Completed,
    ClickIgnored,
}

impl From<ClickOutcome> for TrialEvent {
    fn from(c: ClickOutcome) -> Self {
        match c {
            ClickOutcome::Started => TrialEvent::Started,
            ClickOutcome::Advanced { next_target } => TrialEvent::TargetAdvanced { next_target },
            ClickOutcome::Completed => TrialEvent::Completed,
            ClickOutcome::Ignored => TrialEvent::ClickIgnored,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TickReport {
    pub tick: u64,
    pub follower: Vec2,
    pub active_target: usize,
    pub events: Vec<TrialEvent>,
    /// Set on the tick that completes the trial, after it is persisted.
    pub completed: Option<TrialEntry>,
}

#[derive(Debug)]
struct ActiveTrial {
    slot: ScheduledTrial,
    runner: TrialRunner,
}

#[derive(Debug)]
struct Session {
    dir: PathBuf,
    record: SessionRecord,
    pending: VecDeque<ScheduledTrial>,
    active: Option<ActiveTrial>,
}

/// Live sessions, each persisted under its own directory. Sessions are
/// independent; calls on one session are serialized by its lock.
#[derive(Debug)]
pub struct SessionManager {
    root: PathBuf,
    weight: f64,
    normalization: MetricNormalization,
    timestamps: bool,
    sessions: Mutex<BTreeMap<String, Arc<Mutex<Session>>>>,
    counter: AtomicU64,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

impl SessionManager {
    /// `normalization` fixes the weighted-performance scale for live trials,
    /// where no per-operator reference data exists yet.
    pub fn new(root: impl Into<PathBuf>, weight: f64, normalization: MetricNormalization) -> Self {
        Self {
            root: root.into(),
            weight,
            normalization,
            timestamps: true,
            sessions: Mutex::new(BTreeMap::new()),
            counter: AtomicU64::new(0),
        }
    }

    /// Disables wall-clock timestamps in records (for reproducible output).
    pub fn without_timestamps(mut self) -> Self {
        self.timestamps = false;
        self
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, SessionError> {
        lock(&self.sessions)
            .get(id)
            .cloned()
            .ok_or_else(|| SessionError::NotFound(id.to_string()))
    }

    pub fn create_session(&self, plan: SessionPlan) -> Result<String, SessionError> {
        plan.validate()?;
        let mut sessions = lock(&self.sessions);
        let id = loop {
            let n = self.counter.fetch_add(1, Ordering::Relaxed);
            let candidate = format!("{}-{n:03}", plan.operator);
            if !sessions.contains_key(&candidate) && !store::session_dir(&self.root, &candidate).exists() {
                break candidate;
            }
        };
        let dir = store::session_dir(&self.root, &id);
        let mut record = SessionRecord::new(id.clone(), plan.clone(), self.weight, self.normalization);
        if self.timestamps {
            record.created_at = Some(unix_now());
        }
        store::save_record(&dir, &record)?;
        let session = Session {
            dir,
            record,
            pending: plan.schedule().into(),
            active: None,
        };
        sessions.insert(id.clone(), Arc::new(Mutex::new(session)));
        log::info!("session {id} created for {}", plan.operator);
        Ok(id)
    }

    pub fn record(&self, id: &str) -> Result<SessionRecord, SessionError> {
        Ok(lock(&*self.get(id)?).record.clone())
    }

    pub fn session_dir(&self, id: &str) -> Result<PathBuf, SessionError> {
        Ok(lock(&*self.get(id)?).dir.clone())
    }

    pub fn pending(&self, id: &str) -> Result<usize, SessionError> {
        Ok(lock(&*self.get(id)?).pending.len())
    }

    pub fn has_active_trial(&self, id: &str) -> Result<bool, SessionError> {
        Ok(lock(&*self.get(id)?).active.is_some())
    }

    pub fn begin_trial(&self, id: &str) -> Result<TrialStart, SessionError> {
        let handle = self.get(id)?;
        let mut s = lock(&handle);
        if s.active.is_some() {
            return Err(SessionError::TrialActive(id.to_string()));
        }
        let slot = s.pending.pop_front().ok_or_else(|| SessionError::NoPendingTrials(id.to_string()))?;
        let runner = match TrialRunner::new(slot.config) {
            Ok(r) => r,
            Err(e) => {
                s.pending.push_front(slot);
                return Err(e.into());
            }
        };
        let start = TrialStart {
            trial_index: slot.index,
            config: slot.config,
            targets: runner.state().targets().to_vec(),
            practice: s.record.plan.practice,
            remaining: s.pending.len(),
        };
        s.active = Some(ActiveTrial { slot, runner });
        Ok(start)
    }

    /// Advances the active trial by one command. The trial is persisted on
    /// the tick that completes it.
    pub fn tick(&self, id: &str, cmd: &CommandSample) -> Result<TickReport, SessionError> {
        let handle = self.get(id)?;
        let mut guard = lock(&handle);
        let s = &mut *guard;
        let active = s.active.as_mut().ok_or_else(|| SessionError::NoActiveTrial(id.to_string()))?;
        let out = active.runner.step(cmd)?;
        let mut report = TickReport {
            tick: cmd.tick,
            follower: out.follower_pos,
            active_target: out.active_target,
            events: out.click.map(TrialEvent::from).into_iter().collect(),
            completed: None,
        };
        if active.runner.state().is_completed() {
            let ActiveTrial { slot, runner } = s.active.take().expect("active trial");
            let log = runner.finish();
            let raw = RawMetrics::from_log(&log)?;
            let metrics = MetricSet::new(raw, s.record.weight, &s.record.normalization)?;
            let header = LogHeader {
                operator: Some(s.record.plan.operator.clone()),
                trial_index: Some(slot.index),
                practice: s.record.plan.practice,
                ..LogHeader::new(slot.config)
            };
            let log_file = store::persist_log(&s.dir, slot.index, &header, &log)?;
            let entry = TrialEntry {
                index: slot.index,
                cell: Cell::of(&slot.config),
                log_file,
                metrics,
                practice: s.record.plan.practice,
            };
            s.record.trials.push(entry.clone());
            if s.pending.is_empty() {
                s.record.finalized = true;
                if self.timestamps {
                    s.record.finalized_at = Some(unix_now());
                }
            }
            store::save_record(&s.dir, &s.record)?;
            report.completed = Some(entry);
        }
        Ok(report)
    }

    /// Feeds commands to the session's trial (starting one if none is
    /// active) until the stream ends or the trial completes.
    pub fn stream_trial<I>(&self, id: &str, commands: I) -> Result<Vec<TickReport>, SessionError>
    where
        I: IntoIterator<Item = CommandSample>,
    {
        if !self.has_active_trial(id)? {
            self.begin_trial(id)?;
        }
        let mut out = Vec::new();
        for cmd in commands {
            let report = self.tick(id, &cmd)?;
            let done = report.completed.is_some();
            out.push(report);
            if done {
                break;
            }
        }
        Ok(out)
    }

    /// Voids the active trial (e.g. on disconnect) and puts its cell back at
    /// the end of the queue.
    pub fn void_active(&self, id: &str, reason: &str) -> Result<Option<VoidedTrial>, SessionError> {
        let handle = self.get(id)?;
        let mut s = lock(&handle);
        let Some(active) = s.active.take() else {
            return Ok(None);
        };
        let voided = VoidedTrial {
            index: active.slot.index,
            cell: Cell::of(&active.slot.config),
            reason: reason.to_string(),
        };
        log::warn!("session {id}: trial {} voided ({reason})", voided.index);
        s.record.voided.push(voided.clone());
        s.pending.push_back(active.slot);
        let dir = s.dir.clone();
        store::save_record(&dir, &s.record)?;
        Ok(Some(voided))
    }
}
