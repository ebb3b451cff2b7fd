//! Simulated operators that perform the target task through the teleop
//! pipeline.
//!
//! An operator sees the follower through its own reaction delay, on top of
//! the pipeline delay, and drives the leader toward the active target:
//!
//! - at short delays, by continuous proportional pursuit whose leader-space
//!   gain only partly compensates the motion scale;
//! - once the delay exceeds a personal threshold, by move-and-wait: a planned
//!   leader displacement, then a pause of at least the round-trip delay
//!   before judging the result.
//!
//! Leader velocity carries noise proportional to its magnitude. The operator
//! clicks when the observed follower is within tolerance of the target and
//! recenters the leader with the clutch when it nears the edge of its
//! workspace.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::metrics::{MetricKind, MetricNormalization, MetricSet, MetricsError, RawMetrics};
use crate::model::{FeatureTransform, OperatorDataset};
use crate::session::SessionPlan;
use crate::task::{TaskError, TrialConfig, TrialLog, TrialRunner};
use crate::teleop::CommandSample;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorParams {
    /// Perception-to-action latency (s).
    pub reaction_delay_s: f64,
    /// Pursuit gain (1/s).
    pub gain: f64,
    /// Exponent `α` of the scale compensation: leader commands are divided by
    /// `s^α`, so the follower-space loop gain is `gain · s^(1-α)`.
    pub scale_compensation: f64,
    /// Ratio of planned to needed displacement in move-and-wait moves.
    pub move_gain: f64,
    /// Leader speed limit (leader units/s).
    pub max_speed: f64,
    /// Motor noise standard deviation per unit commanded speed.
    pub noise: f64,
    /// Perceived delay above which the operator switches to move-and-wait (s).
    pub move_wait_threshold_s: f64,
    pub click_tolerance: f64,
    pub seed: u64,
}

impl Default for OperatorParams {
    fn default() -> Self {
        Self {
            reaction_delay_s: 0.15,
            gain: 2.4,
            scale_compensation: 0.6,
            move_gain: 1.15,
            max_speed: 1.2,
            noise: 0.15,
            move_wait_threshold_s: 0.35,
            click_tolerance: 0.018,
            seed: 0,
        }
    }
}

impl OperatorParams {
    pub fn validate(&self) -> Result<(), TaskError> {
        let checks = [
            ("reaction_delay_s", self.reaction_delay_s, false),
            ("gain", self.gain, true),
            ("scale_compensation", self.scale_compensation, false),
            ("move_gain", self.move_gain, true),
            ("max_speed", self.max_speed, true),
            ("noise", self.noise, false),
            ("move_wait_threshold_s", self.move_wait_threshold_s, false),
            ("click_tolerance", self.click_tolerance, false),
        ];
        for (name, v, strictly_positive) in checks {
            let ok = v.is_finite() && if strictly_positive { v > 0.0 } else { v >= 0.0 };
            if !ok {
                return Err(TaskError::InvalidConfig(format!("operator {name} = {v}")));
            }
        }
        Ok(())
    }
}

/// Per-operator parameter ranges; each operator draws every field uniformly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamRanges {
    pub reaction_delay_s: (f64, f64),
    pub gain: (f64, f64),
    pub scale_compensation: (f64, f64),
    pub move_gain: (f64, f64),
    pub max_speed: (f64, f64),
    pub noise: (f64, f64),
    pub move_wait_threshold_s: (f64, f64),
    pub click_tolerance: (f64, f64),
}

impl Default for ParamRanges {
    fn default() -> Self {
        Self {
            reaction_delay_s: (0.12, 0.18),
            gain: (2.0, 2.8),
            scale_compensation: (0.45, 0.75),
            move_gain: (1.0, 1.3),
            max_speed: (0.9, 1.5),
            noise: (0.08, 0.25),
            move_wait_threshold_s: (0.2, 0.45),
            click_tolerance: (0.012, 0.022),
        }
    }
}

impl ParamRanges {
    pub fn sample<R: Rng>(&self, rng: &mut R, seed: u64) -> OperatorParams {
        let mut draw = |(lo, hi): (f64, f64)| if hi > lo { rng.random_range(lo..=hi) } else { lo };
        OperatorParams {
            reaction_delay_s: draw(self.reaction_delay_s),
            gain: draw(self.gain),
            scale_compensation: draw(self.scale_compensation),
            move_gain: draw(self.move_gain),
            max_speed: draw(self.max_speed),
            noise: draw(self.noise),
            move_wait_threshold_s: draw(self.move_wait_threshold_s),
            click_tolerance: draw(self.click_tolerance),
            seed,
        }
    }
}

/// Where the operator keeps the leader, and how close to its edge they let it
/// get before clutching.
const LEADER_HOME: Vec2 = Vec2 { x: 0.5, y: 0.5 };
const LEADER_MARGIN: f64 = 0.08;
const RECENTER_DONE: f64 = 0.02;
/// Observation pause after a move beyond the round trip (ticks).
const DWELL_TICKS: u64 = 5;
/// Time allowed per target before the operator clicks regardless (s).
pub const TARGET_TIMEOUT_S: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq)]
enum Motion {
    Pursue,
    /// Leader displacement still to execute in the current move.
    Move { remaining: Vec2 },
    Wait { until: u64 },
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stream seed for one trial; depends on the operator seed and the trial's
/// cell and layout, not on the order trials are run in.
fn trial_seed(operator_seed: u64, trial: &TrialConfig) -> u64 {
    [trial.layout_seed, trial.scale.to_bits(), trial.delay_s.to_bits()]
        .into_iter()
        .fold(splitmix64(operator_seed), |acc, x| splitmix64(acc ^ x))
}

fn gaussian2<R: Rng>(rng: &mut R) -> Vec2 {
    Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn with_max_norm(v: Vec2, max: f64) -> Vec2 {
    let n = v.norm();
    if n > max {
        (max / n) * v
    } else {
        v
    }
}

/// Simulates one trial. The log is incomplete only if the tick budget runs
/// out, which the per-target timeout normally prevents.
pub fn run_trial(params: &OperatorParams, trial: &TrialConfig) -> Result<TrialLog, TaskError> {
    params.validate()?;
    let mut runner = TrialRunner::new(*trial)?;
    let rate = trial.tick_rate;
    let dt = 1.0 / rate;
    let reaction_ticks = (params.reaction_delay_s * rate).round() as usize;
    let round_trip = (runner.pipeline().delay_ticks() + reaction_ticks) as u64;
    let timeout = (TARGET_TIMEOUT_S * rate).round() as u64;
    let budget = timeout * (trial.target_count as u64 + 1);
    let move_and_wait = trial.delay_s > params.move_wait_threshold_s;
    let compensation = trial.scale.powf(params.scale_compensation);

    let mut rng = ChaCha8Rng::seed_from_u64(trial_seed(params.seed, trial));
    let start = runner.pipeline().follower();
    let mut seen: Vec<Vec2> = Vec::with_capacity(4096);
    let mut leader = LEADER_HOME;
    let mut recentering = false;
    let mut motion = if move_and_wait { Motion::Wait { until: 0 } } else { Motion::Pursue };
    let mut last_click: Option<u64> = None;
    let mut target_since = 0u64;

    for tick in 0..budget {
        let observed = seen
            .len()
            .checked_sub(1 + reaction_ticks)
            .map_or(start, |i| seen[i]);
        let target = runner.state().targets()[runner.state().active_target()].center;
        let error = target - observed;
        let within = error.norm() < params.click_tolerance;
        let refractory = last_click.is_some_and(|t| tick <= t + reaction_ticks as u64);

        let mut click = false;
        let mut velocity = Vec2::ZERO;
        if recentering {
            let back = LEADER_HOME - leader;
            if back.norm() < RECENTER_DONE {
                recentering = false;
            } else {
                velocity = with_max_norm(rate * back, params.max_speed);
            }
        }
        if !recentering {
            let timed_out = tick - target_since >= timeout;
            match motion {
                Motion::Pursue => {
                    if (within && !refractory) || timed_out {
                        click = true;
                    } else {
                        velocity = with_max_norm((params.gain / compensation) * error, params.max_speed);
                    }
                }
                Motion::Wait { until } if tick >= until || timed_out => {
                    if (within && !refractory) || timed_out {
                        click = true;
                    } else {
                        motion = Motion::Move {
                            remaining: (params.move_gain / compensation) * error,
                        };
                    }
                }
                Motion::Wait { .. } | Motion::Move { .. } => {}
            }
            if let Motion::Move { remaining } = motion {
                let speed = (params.gain * remaining.norm()).min(params.max_speed);
                let step = with_max_norm(remaining, speed * dt);
                let left = remaining - step;
                velocity = rate * step;
                // ends once the operator believes the follower is within half a tolerance
                motion = if compensation * left.norm() < 0.5 * params.click_tolerance {
                    Motion::Wait {
                        until: tick + round_trip + DWELL_TICKS,
                    }
                } else {
                    Motion::Move { remaining: left }
                };
            }
        }
        if click {
            velocity = Vec2::ZERO;
        }

        let speed = velocity.norm();
        if speed > 0.0 && params.noise > 0.0 {
            velocity += (params.noise * speed) * gaussian2(&mut rng);
        }
        leader += dt * velocity;
        let near_edge = [leader.x, leader.y]
            .iter()
            .any(|&c| !(LEADER_MARGIN..=1.0 - LEADER_MARGIN).contains(&c));
        if near_edge && !recentering {
            recentering = true;
        }

        let cmd = CommandSample::new(tick, leader).clutched(recentering).with_click(click);
        let out = runner.step(&cmd)?;
        seen.push(out.follower_pos);
        if click {
            last_click = Some(tick);
            target_since = tick;
            if move_and_wait {
                motion = Motion::Wait { until: tick };
            }
        }
        if runner.state().is_completed() {
            break;
        }
    }
    Ok(runner.finish())
}

/// Cohort layout: operators, the cell grid, and the task template.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortConfig {
    pub size: usize,
    pub ranges: ParamRanges,
    pub scales: Vec<f64>,
    pub delays: Vec<f64>,
    pub trials_per_cell: usize,
    pub task: TrialConfig,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            size: 10,
            ranges: ParamRanges::default(),
            scales: vec![0.1, 0.15, 0.2, 0.4, 0.7, 1.0],
            delays: vec![0.0, 0.25, 0.5, 0.75],
            trials_per_cell: 1,
            task: TrialConfig::default(),
            seed: 1,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<(), TaskError> {
        if self.size < 1 {
            return Err(TaskError::InvalidConfig("cohort needs at least one operator".into()));
        }
        if self.scales.is_empty() || self.delays.is_empty() || self.trials_per_cell == 0 {
            return Err(TaskError::InvalidConfig("empty cell grid".into()));
        }
        self.task.validate()
    }

    pub fn operator_id(index: usize) -> String {
        format!("op{index:02}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTrial {
    /// Position in the operator's randomized schedule.
    pub index: usize,
    pub log: TrialLog,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticOperator {
    pub id: String,
    pub params: OperatorParams,
    pub plan: SessionPlan,
    pub trials: Vec<SyntheticTrial>,
}

impl SyntheticOperator {
    pub fn raw_metrics(&self) -> Result<Vec<RawMetrics>, MetricsError> {
        self.trials.iter().map(|t| RawMetrics::from_log(&t.log)).collect()
    }

    /// Metrics of every trial, with weighted performance normalized over this
    /// operator's own trials.
    pub fn metric_sets(&self, weight: f64) -> Result<Vec<(TrialConfig, MetricSet)>, MetricsError> {
        let raw = self.raw_metrics()?;
        let norms = MetricNormalization::from_reference(&raw)?;
        self.trials
            .iter()
            .zip(raw)
            .map(|(t, r)| Ok((t.log.config, MetricSet::new(r, weight, &norms)?)))
            .collect()
    }

    pub fn dataset(&self, metric: MetricKind, weight: f64, transform: FeatureTransform) -> Result<OperatorDataset, MetricsError> {
        let mut d = OperatorDataset::new(self.id.clone(), metric, transform);
        for (cfg, m) in self.metric_sets(weight)? {
            d.push(cfg.scale, cfg.delay_s, m.get(metric));
        }
        Ok(d)
    }
}

/// Draws operator parameters and simulates each operator over the whole grid.
/// Operators run in parallel; the result depends only on the config.
pub fn generate_cohort(config: &CohortConfig) -> Result<Vec<SyntheticOperator>, TaskError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let params: Vec<OperatorParams> = (0..config.size)
        .map(|_| {
            let seed = rng.random();
            config.ranges.sample(&mut rng, seed)
        })
        .collect();
    params
        .into_par_iter()
        .enumerate()
        .map(|(i, p)| {
            let plan = operator_plan(config, i, &p);
            let trials = plan
                .schedule()
                .into_iter()
                .map(|slot| run_trial(&p, &slot.config).map(|log| SyntheticTrial { index: slot.index, log }))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SyntheticOperator {
                id: plan.operator.clone(),
                params: p,
                plan,
                trials,
            })
        })
        .collect()
}

/// The session plan a synthetic operator follows.
pub fn operator_plan(config: &CohortConfig, index: usize, params: &OperatorParams) -> SessionPlan {
    SessionPlan {
        trials_per_cell: config.trials_per_cell,
        ..SessionPlan::grid(
            CohortConfig::operator_id(index),
            &config.scales,
            &config.delays,
            splitmix64(params.seed),
            config.task,
        )
    }
}
