//! Fixed-tick leader/follower pipeline with a command delay buffer, clutch,
//! and incremental motion scaling.
//!
//! Every tick the pipeline accepts one leader command and emits the command
//! that was enqueued `delay_ticks` earlier. When the emitted command has the
//! clutch released, the follower moves by `scale` times the leader's
//! displacement since the previously emitted command; when the clutch is
//! engaged the follower holds still. The clutch flag rides through the buffer
//! with its command.
//!
//! Positions are tracked against an anchor `(follower, leader)` pair that is
//! re-taken whenever the clutch is engaged or the workspace clamp bites. Between
//! re-anchors the follower is `anchor_f + scale * (leader - anchor_l)`, which
//! equals the accumulated increments exactly in real arithmetic and does not
//! drift in floating point.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Bounds, Vec2};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TeleopError {
    #[error("invalid pipeline config: {0}")]
    InvalidConfig(String),
    #[error("out-of-order command: expected tick {expected}, got {got}")]
    Sequence { expected: u64, got: u64 },
    #[error("non-finite leader position at tick {0}")]
    NonFinite(u64),
}

/// One tick of leader input.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CommandSample {
    pub tick: u64,
    pub leader_pos: Vec2,
    pub clutch_engaged: bool,
    #[serde(default)]
    pub click: bool,
}

impl CommandSample {
    pub fn new(tick: u64, leader_pos: Vec2) -> Self {
        Self {
            tick,
            leader_pos,
            clutch_engaged: false,
            click: false,
        }
    }

    pub fn clutched(mut self, engaged: bool) -> Self {
        self.clutch_engaged = engaged;
        self
    }

    pub fn with_click(mut self, click: bool) -> Self {
        self.click = click;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FollowerState {
    pub tick: u64,
    pub follower_pos: Vec2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Hz.
    pub tick_rate: f64,
    /// Command-path delay in seconds.
    pub delay_s: f64,
    /// Motion scaling factor applied to leader increments.
    pub scale: f64,
    #[serde(default)]
    pub bounds: Bounds,
    /// Follower position before any command takes effect.
    pub follower_start: Vec2,
    /// Leader reference position preceding tick 0. When absent the first
    /// emitted command only establishes the reference.
    #[serde(default)]
    pub leader_origin: Option<Vec2>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            tick_rate: 100.0,
            delay_s: 0.0,
            scale: 1.0,
            bounds: Bounds::UNIT,
            follower_start: Vec2::new(0.5, 0.5),
            leader_origin: None,
        }
    }
}

impl PipelineConfig {
    pub fn new(tick_rate: f64, delay_s: f64, scale: f64) -> Self {
        Self {
            tick_rate,
            delay_s,
            scale,
            ..Self::default()
        }
    }

    pub fn with_leader_origin(mut self, origin: Vec2) -> Self {
        self.leader_origin = Some(origin);
        self
    }

    /// Delay quantized to whole ticks, rounding to nearest.
    pub fn delay_ticks(&self) -> usize {
        (self.delay_s * self.tick_rate).round() as usize
    }

    pub fn validate(&self) -> Result<(), TeleopError> {
        let bad = |m: &str| Err(TeleopError::InvalidConfig(m.to_string()));
        if !(self.tick_rate.is_finite() && self.tick_rate > 0.0) {
            return bad("tick_rate must be positive");
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return bad("scale must be positive");
        }
        if !(self.delay_s.is_finite() && self.delay_s >= 0.0) {
            return bad("delay_s must be non-negative");
        }
        if !self.bounds.is_valid() {
            return bad("workspace bounds are empty");
        }
        if !self.bounds.contains(self.follower_start) {
            return bad("follower start lies outside the workspace");
        }
        if self.leader_origin.is_some_and(|o| !o.is_finite()) {
            return bad("leader origin must be finite");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Queued {
    leader: Vec2,
    clutch: bool,
}

#[derive(Debug, Clone)]
pub struct Pipeline {
    config: PipelineConfig,
    delay_ticks: usize,
    queue: VecDeque<Queued>,
    next_tick: u64,
    follower: Vec2,
    // (follower, leader) pair the current unclutched stretch is measured from
    anchor: Option<(Vec2, Vec2)>,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Result<Self, TeleopError> {
        config.validate()?;
        let delay_ticks = config.delay_ticks();
        Ok(Self {
            config,
            delay_ticks,
            queue: VecDeque::with_capacity(delay_ticks + 1),
            next_tick: 0,
            follower: config.follower_start,
            anchor: config.leader_origin.map(|o| (config.follower_start, o)),
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn delay_ticks(&self) -> usize {
        self.delay_ticks
    }

    pub fn follower(&self) -> Vec2 {
        self.follower
    }

    /// Tick the next command must carry.
    pub fn next_tick(&self) -> u64 {
        self.next_tick
    }

    pub fn step(&mut self, cmd: &CommandSample) -> Result<FollowerState, TeleopError> {
        if cmd.tick != self.next_tick {
            return Err(TeleopError::Sequence {
                expected: self.next_tick,
                got: cmd.tick,
            });
        }
        if !cmd.leader_pos.is_finite() {
            return Err(TeleopError::NonFinite(cmd.tick));
        }
        self.next_tick += 1;
        self.queue.push_back(Queued {
            leader: cmd.leader_pos,
            clutch: cmd.clutch_engaged,
        });
        if self.queue.len() > self.delay_ticks {
            let emitted = self.queue.pop_front().expect("queue is non-empty");
            self.apply(emitted);
        }
        Ok(FollowerState {
            tick: cmd.tick,
            follower_pos: self.follower,
        })
    }

    fn apply(&mut self, cmd: Queued) {
        let Some((anchor_f, anchor_l)) = self.anchor else {
            self.anchor = Some((self.follower, cmd.leader));
            return;
        };
        if cmd.clutch {
            self.anchor = Some((self.follower, cmd.leader));
            return;
        }
        let scale = self.config.scale;
        let raw = Vec2::new(
            anchor_f.x + scale * (cmd.leader.x - anchor_l.x),
            anchor_f.y + scale * (cmd.leader.y - anchor_l.y),
        );
        let clamped = self.config.bounds.clamp(raw);
        self.follower = clamped;
        if clamped != raw {
            self.anchor = Some((clamped, cmd.leader));
        }
    }
}

/// Runs a full command stream through a fresh pipeline.
pub fn replay(
    config: &PipelineConfig,
    commands: &[CommandSample],
) -> Result<Vec<FollowerState>, TeleopError> {
    let mut pipeline = Pipeline::new(*config)?;
    commands.iter().map(|c| pipeline.step(c)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(points: &[(f64, f64)]) -> Vec<CommandSample> {
        points
            .iter()
            .enumerate()
            .map(|(i, &(x, y))| CommandSample::new(i as u64, Vec2::new(x, y)))
            .collect()
    }

    #[test]
    fn delay_ticks_rounding() {
        assert_eq!(PipelineConfig::new(100.0, 0.25, 0.2).delay_ticks(), 25);
        assert_eq!(PipelineConfig::new(100.0, 0.0, 1.0).delay_ticks(), 0);
        assert_eq!(PipelineConfig::new(60.0, 0.75, 0.1).delay_ticks(), 45);
        assert_eq!(PipelineConfig::new(100.0, 0.5, 0.4).delay_ticks(), 50);
    }

    #[test]
    fn rejects_bad_config() {
        for cfg in [
            PipelineConfig::new(0.0, 0.1, 1.0),
            PipelineConfig::new(100.0, 0.1, 0.0),
            PipelineConfig::new(100.0, -0.1, 0.5),
            PipelineConfig::new(f64::NAN, 0.1, 0.5),
        ] {
            assert!(matches!(Pipeline::new(cfg), Err(TeleopError::InvalidConfig(_))));
        }
    }

    #[test]
    fn identity_and_half_scale() {
        let origin = Vec2::new(0.5, 0.5);
        for (scale, expected) in [(1.0, 0.02), (0.5, 0.01)] {
            let cfg = PipelineConfig::new(100.0, 0.0, scale).with_leader_origin(origin);
            let mut p = Pipeline::new(cfg).unwrap();
            let out = p.step(&CommandSample::new(0, Vec2::new(0.52, 0.5))).unwrap();
            let moved = out.follower_pos - Vec2::new(0.5, 0.5);
            assert!((moved.x - expected).abs() < 1e-15);
            assert_eq!(moved.y, 0.0);
        }
    }

    #[test]
    fn three_tick_queue_hand_trace() {
        // 100 Hz, 0.03 s -> 3 slots
        let cfg = PipelineConfig::new(100.0, 0.03, 0.5).with_leader_origin(Vec2::new(0.5, 0.5));
        assert_eq!(cfg.delay_ticks(), 3);
        let cmds = stream(&[(0.52, 0.5), (0.52, 0.5), (0.52, 0.5), (0.52, 0.5), (0.52, 0.5)]);
        let out = replay(&cfg, &cmds).unwrap();
        for s in &out[..3] {
            assert_eq!(s.follower_pos, Vec2::new(0.5, 0.5));
        }
        assert!((out[3].follower_pos.x - 0.51).abs() < 1e-15);
        assert_eq!(out[4].follower_pos, out[3].follower_pos);
    }

    #[test]
    fn out_of_order_tick_is_rejected() {
        let mut p = Pipeline::new(PipelineConfig::default()).unwrap();
        let err = p.step(&CommandSample::new(1, Vec2::new(0.5, 0.5))).unwrap_err();
        assert_eq!(err, TeleopError::Sequence { expected: 0, got: 1 });
        p.step(&CommandSample::new(0, Vec2::new(0.5, 0.5))).unwrap();
        assert!(p.step(&CommandSample::new(0, Vec2::new(0.5, 0.5))).is_err());
    }

    #[test]
    fn without_origin_first_command_only_sets_reference() {
        let cfg = PipelineConfig::new(100.0, 0.0, 1.0);
        let out = replay(&cfg, &stream(&[(0.9, 0.9), (0.95, 0.9)])).unwrap();
        assert_eq!(out[0].follower_pos, Vec2::new(0.5, 0.5));
        assert!((out[1].follower_pos.x - 0.55).abs() < 1e-12);
    }

    #[test]
    fn clutch_holds_follower_and_release_does_not_jump() {
        let cfg = PipelineConfig::new(100.0, 0.0, 1.0).with_leader_origin(Vec2::new(0.5, 0.5));
        let mut cmds = stream(&[(0.6, 0.5), (0.7, 0.5), (0.4, 0.5), (0.3, 0.5), (0.35, 0.5)]);
        cmds[2].clutch_engaged = true;
        cmds[3].clutch_engaged = true;
        let out = replay(&cfg, &cmds).unwrap();
        assert!((out[1].follower_pos.x - 0.7).abs() < 1e-12);
        assert_eq!(out[2].follower_pos, out[1].follower_pos);
        assert_eq!(out[3].follower_pos, out[1].follower_pos);
        // release: only the 0.3 -> 0.35 increment applies
        assert!((out[4].follower_pos.x - 0.75).abs() < 1e-12);
    }

    #[test]
    fn clutch_travels_through_the_buffer() {
        let cfg = PipelineConfig::new(100.0, 0.02, 1.0).with_leader_origin(Vec2::new(0.5, 0.5));
        let mut cmds = stream(&[(0.5, 0.5), (0.6, 0.5), (0.7, 0.5), (0.8, 0.5)]);
        cmds[1].clutch_engaged = true;
        let out = replay(&cfg, &cmds).unwrap();
        // tick 3 applies command 1 (clutched); tick 2 applied command 0 (no motion)
        assert_eq!(out[2].follower_pos, Vec2::new(0.5, 0.5));
        assert_eq!(out[3].follower_pos, Vec2::new(0.5, 0.5));
    }

    #[test]
    fn follower_is_clamped_and_reanchored() {
        let cfg = PipelineConfig::new(100.0, 0.0, 1.0).with_leader_origin(Vec2::new(0.5, 0.5));
        let out = replay(&cfg, &stream(&[(1.2, 0.5), (1.1, 0.5)])).unwrap();
        assert_eq!(out[0].follower_pos, Vec2::new(1.0, 0.5));
        assert!((out[1].follower_pos.x - 0.9).abs() < 1e-12);
    }

    #[test]
    fn empty_replay() {
        assert!(replay(&PipelineConfig::default(), &[]).unwrap().is_empty());
    }
}
