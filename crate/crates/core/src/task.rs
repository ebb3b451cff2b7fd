//! Fitts-style 2D target acquisition: ring layouts, the click-driven trial
//! state machine, and per-tick trial logging.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Bounds, Vec2};
use crate::teleop::{CommandSample, Pipeline, PipelineConfig, TeleopError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("invalid trial config: {0}")]
    InvalidConfig(String),
    #[error("layout infeasible: {0}")]
    LayoutInfeasible(String),
    #[error("target width must be positive, got {0}")]
    Domain(f64),
    #[error("trial already completed")]
    TrialCompleted,
    #[error(transparent)]
    Teleop(#[from] TeleopError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TargetSpec {
    pub center: Vec2,
    /// Diameter of the circular target.
    pub width: f64,
}

/// One (scale, delay) cell of the experiment plus task geometry.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialConfig {
    pub scale: f64,
    pub delay_s: f64,
    pub target_count: usize,
    /// Distance between successive targets.
    pub distance: f64,
    pub width: f64,
    pub layout_seed: u64,
    pub tick_rate: f64,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            scale: 1.0,
            delay_s: 0.0,
            target_count: 10,
            distance: 0.4,
            width: 0.05,
            layout_seed: 0,
            tick_rate: 100.0,
        }
    }
}

impl TrialConfig {
    pub fn with_cell(mut self, scale: f64, delay_s: f64) -> Self {
        self.scale = scale;
        self.delay_s = delay_s;
        self
    }

    pub fn validate(&self) -> Result<(), TaskError> {
        let bad = |m: &str| Err(TaskError::InvalidConfig(m.to_string()));
        if self.target_count < 2 {
            return bad("target_count must be at least 2");
        }
        if !(self.distance.is_finite() && self.distance > 0.0) {
            return bad("distance must be positive");
        }
        if !(self.width.is_finite() && self.width > 0.0) {
            return bad("width must be positive");
        }
        self.pipeline_config().validate()?;
        Ok(())
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig::new(self.tick_rate, self.delay_s, self.scale)
    }

    pub fn index_of_difficulty(&self) -> f64 {
        // width > 0 is a config invariant
        index_of_difficulty(self.distance, self.width).unwrap_or(f64::NAN)
    }
}

/// Fitts index of difficulty in bits, `log2(D/W + 1)`.
pub fn index_of_difficulty(distance: f64, width: f64) -> Result<f64, TaskError> {
    if !(width > 0.0) {
        return Err(TaskError::Domain(width));
    }
    Ok((distance / width + 1.0).log2())
}

/// Lays targets on a ring around the workspace center and orders them so
/// each consecutive pair sits on a chord of length `distance`.
///
/// The ring holds `m` equally spaced slots with `m` odd (`target_count`, or
/// one more when that is even). Visiting every `(m + 1) / 2`-th slot gives the
/// usual multidirectional crossing pattern with a constant angular step.
pub fn generate_targets(config: &TrialConfig) -> Result<Vec<TargetSpec>, TaskError> {
    config.validate()?;
    let bounds = Bounds::UNIT;
    let n = config.target_count;
    let slots = if n % 2 == 1 { n } else { n + 1 };
    let stride = (slots + 1) / 2;
    let step = 2.0 * PI * stride as f64 / slots as f64;
    let radius = config.distance / (2.0 * (step / 2.0).sin().abs());

    let center = bounds.center();
    let half_extent = (bounds.max.x - bounds.min.x).min(bounds.max.y - bounds.min.y) / 2.0;
    if radius + config.width / 2.0 > half_extent {
        return Err(TaskError::LayoutInfeasible(format!(
            "ring radius {radius:.4} with width {} exceeds the workspace",
            config.width
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.layout_seed);
    let phase = rng.random::<f64>() * 2.0 * PI;
    let slot_angle = 2.0 * PI / slots as f64;
    Ok((0..n)
        .map(|i| {
            let slot = (i * stride) % slots;
            let angle = phase + slot as f64 * slot_angle;
            TargetSpec {
                center: center + radius * Vec2::new(angle.cos(), angle.sin()),
                width: config.width,
            }
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClickRecord {
    pub tick: u64,
    pub follower_pos: Vec2,
    pub target_id: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ClickOutcome {
    /// First click; the timer starts here.
    Started,
    Advanced { next_target: usize },
    Completed,
    /// Click after completion, recorded as a warning and otherwise ignored.
    Ignored,
}

/// Click-driven trial progress. Every click advances, hit or miss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialState {
    targets: Vec<TargetSpec>,
    active: usize,
    clicks: Vec<ClickRecord>,
    ignored_clicks: Vec<u64>,
}

impl TrialState {
    pub fn new(targets: Vec<TargetSpec>) -> Self {
        Self {
            targets,
            active: 0,
            clicks: Vec::new(),
            ignored_clicks: Vec::new(),
        }
    }

    pub fn targets(&self) -> &[TargetSpec] {
        &self.targets
    }

    /// Index of the target awaiting a click (equals the target count once done).
    pub fn active_target(&self) -> usize {
        self.active
    }

    pub fn is_completed(&self) -> bool {
        self.active >= self.targets.len()
    }

    pub fn started_at(&self) -> Option<u64> {
        self.clicks.first().map(|c| c.tick)
    }

    pub fn clicks(&self) -> &[ClickRecord] {
        &self.clicks
    }

    pub fn ignored_clicks(&self) -> &[u64] {
        &self.ignored_clicks
    }

    pub fn click(&mut self, tick: u64, follower_pos: Vec2) -> ClickOutcome {
        if self.is_completed() {
            log::warn!("click at tick {tick} after trial completion ignored");
            self.ignored_clicks.push(tick);
            return ClickOutcome::Ignored;
        }
        self.clicks.push(ClickRecord {
            tick,
            follower_pos,
            target_id: self.active,
        });
        self.active += 1;
        if self.is_completed() {
            ClickOutcome::Completed
        } else if self.clicks.len() == 1 {
            ClickOutcome::Started
        } else {
            ClickOutcome::Advanced {
                next_target: self.active,
            }
        }
    }
}

/// Functional form of [`TrialState::click`].
pub fn advance_trial(mut state: TrialState, tick: u64, follower_pos: Vec2) -> (TrialState, ClickOutcome) {
    let outcome = state.click(tick, follower_pos);
    (state, outcome)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrialSample {
    pub tick: u64,
    pub leader_pos: Vec2,
    pub follower_pos: Vec2,
    pub clutch: bool,
    /// Target that was active when the sample was taken (before this tick's click).
    pub target_id: usize,
    pub click: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialLog {
    pub config: TrialConfig,
    pub targets: Vec<TargetSpec>,
    pub samples: Vec<TrialSample>,
    pub clicks: Vec<ClickRecord>,
    pub completed: bool,
}

impl TrialLog {
    /// Command stream that reproduces this log through the pipeline.
    pub fn commands(&self) -> Vec<CommandSample> {
        self.samples
            .iter()
            .map(|s| CommandSample {
                tick: s.tick,
                leader_pos: s.leader_pos,
                clutch_engaged: s.clutch,
                click: s.click,
            })
            .collect()
    }

    /// Seconds between the first and last click.
    pub fn timed_span_s(&self) -> Option<f64> {
        let first = self.clicks.first()?;
        let last = self.clicks.last()?;
        Some((last.tick - first.tick) as f64 / self.config.tick_rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TickOutcome {
    pub follower_pos: Vec2,
    /// Active target after this tick.
    pub active_target: usize,
    pub click: Option<ClickOutcome>,
}

/// Pipeline and trial state machine driven by one command stream; the shared
/// path for live sessions, headless replay, and synthetic operators.
#[derive(Debug, Clone)]
pub struct TrialRunner {
    config: TrialConfig,
    pipeline: Pipeline,
    state: TrialState,
    samples: Vec<TrialSample>,
}

impl TrialRunner {
    pub fn new(config: TrialConfig) -> Result<Self, TaskError> {
        let targets = generate_targets(&config)?;
        Ok(Self {
            config,
            pipeline: Pipeline::new(config.pipeline_config())?,
            state: TrialState::new(targets),
            samples: Vec::new(),
        })
    }

    pub fn config(&self) -> &TrialConfig {
        &self.config
    }

    pub fn state(&self) -> &TrialState {
        &self.state
    }

    pub fn pipeline(&self) -> &Pipeline {
        &self.pipeline
    }

    pub fn samples(&self) -> &[TrialSample] {
        &self.samples
    }

    pub fn step(&mut self, cmd: &CommandSample) -> Result<TickOutcome, TaskError> {
        if self.state.is_completed() {
            if cmd.click {
                self.state.click(cmd.tick, self.pipeline.follower());
            }
            return Err(TaskError::TrialCompleted);
        }
        let follower = self.pipeline.step(cmd)?.follower_pos;
        let target_id = self.state.active_target();
        self.samples.push(TrialSample {
            tick: cmd.tick,
            leader_pos: cmd.leader_pos,
            follower_pos: follower,
            clutch: cmd.clutch_engaged,
            target_id,
            click: cmd.click,
        });
        let click = cmd.click.then(|| self.state.click(cmd.tick, follower));
        Ok(TickOutcome {
            follower_pos: follower,
            active_target: self.state.active_target(),
            click,
        })
    }

    pub fn finish(self) -> TrialLog {
        TrialLog {
            config: self.config,
            completed: self.state.is_completed(),
            targets: self.state.targets,
            clicks: self.state.clicks,
            samples: self.samples,
        }
    }
}
