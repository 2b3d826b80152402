//! Reactive driving controller on top of affordance indicators: proportional
//! steering toward a lane center line, desired-speed shaping with an
//! optimal-velocity following model, and a small lane-change state machine.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::{AffordanceVector, Indicator};
use crate::sim::ControlCommand;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControllerError {
    #[error("inconsistent affordance: {0}")]
    InconsistentAffordance(&'static str),
}

/// What `road_width` means in the steering law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SteerWidth {
    Lane,
    Road,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControllerConfig {
    /// Steering gain `C` at standstill.
    pub steer_gain: f64,
    /// Speed (m/s) at which the effective gain halves.
    pub steer_gain_speed: f64,
    pub steer_width: SteerWidth,
    /// Baseline desired speed, 72 km/h.
    pub v_base: f64,
    /// Following model: `v = v_max (1 - exp(-(c / v_max) dist - d))`.
    pub v_max: f64,
    pub c: f64,
    pub d: f64,
    pub approach_gap: f64,
    pub safe_gap: f64,
    pub overtake_timer: f64,
    pub turn_slowdown: f64,
    pub steer_history: usize,
    pub speed_gain: f64,
    pub done_tolerance: f64,
    /// Lateral error fed to the steering law is clamped to this many meters,
    /// which bounds how sharply the ego cuts across during a lane change.
    pub max_lateral_error: f64,
    /// Used when the indicators do not reveal the lane width.
    pub fallback_lane_width: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            steer_gain: 2.0,
            steer_gain_speed: 20.0,
            steer_width: SteerWidth::Lane,
            v_base: 20.0,
            v_max: 20.0,
            c: 1.0,
            d: 0.0,
            approach_gap: 20.0,
            safe_gap: 15.0,
            overtake_timer: 3.0,
            turn_slowdown: 1.0,
            steer_history: 10,
            speed_gain: 1.0,
            done_tolerance: 0.2,
            max_lateral_error: 0.6,
            fallback_lane_width: 4.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), String> {
        let positive = [
            ("steer_gain", self.steer_gain),
            ("steer_gain_speed", self.steer_gain_speed),
            ("v_base", self.v_base),
            ("v_max", self.v_max),
            ("c", self.c),
            ("approach_gap", self.approach_gap),
            ("safe_gap", self.safe_gap),
            ("overtake_timer", self.overtake_timer),
            ("turn_slowdown", self.turn_slowdown),
            ("speed_gain", self.speed_gain),
            ("done_tolerance", self.done_tolerance),
            ("max_lateral_error", self.max_lateral_error),
            ("fallback_lane_width", self.fallback_lane_width),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(format!("{name} must be positive, got {v}"));
            }
        }
        if !(self.d >= 0.0) {
            return Err(format!("d must be nonnegative, got {}", self.d));
        }
        if self.steer_history == 0 {
            return Err("steer_history must be at least 1".into());
        }
        Ok(())
    }

    /// Steering gain attenuated with speed.
    pub fn effective_steer_gain(&self, speed: f64) -> f64 {
        self.steer_gain / (1.0 + speed.max(0.0) / self.steer_gain_speed)
    }

    pub fn following_speed(&self, dist: f64) -> f64 {
        following_speed(dist, self.v_max, self.c, self.d)
    }
}

/// `C * (angle - dist_center / road_width)` clamped to `[-1, 1]`.
pub fn steering_command(angle: f64, dist_center: f64, road_width: f64, gain: f64) -> f64 {
    debug_assert!(road_width > 0.0);
    (gain * (angle - dist_center / road_width)).clamp(-1.0, 1.0)
}

/// Optimal-velocity car-following speed for a gap `dist`.
pub fn following_speed(dist: f64, v_max: f64, c: f64, d: f64) -> f64 {
    v_max * (1.0 - (-(c / v_max) * dist.max(0.0) - d).exp())
}

/// Gap at which the following model's speed equals `speed`.
pub fn following_fixed_point(speed: f64, v_max: f64, c: f64, d: f64) -> Option<f64> {
    if !(0.0..v_max).contains(&speed) {
        return None;
    }
    Some(((-(1.0 - speed / v_max).ln()) - d).max(0.0) * v_max / c)
}

pub fn speed_control(actual: f64, desired: f64, gain: f64) -> f64 {
    (gain * (desired - actual)).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriveMode {
    Normal,
    ChangeLeft,
    ChangeRight,
    SlowDown,
}

impl DriveMode {
    pub fn is_change(self) -> bool {
        matches!(self, DriveMode::ChangeLeft | DriveMode::ChangeRight)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            DriveMode::Normal => "normal",
            DriveMode::ChangeLeft => "change_left",
            DriveMode::ChangeRight => "change_right",
            DriveMode::SlowDown => "slow_down",
        }
    }
}

impl fmt::Display for DriveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub mode: DriveMode,
    /// Signed offset of the ego from the tracked lane's center line
    /// (positive when the ego is left of it).
    pub target_offset: Option<f64>,
    pub steer_history: VecDeque<f64>,
    /// Seconds since a car was last seen close in the left / right lane.
    pub lane_clear_timers: [f64; 2],
}

impl Default for ControllerState {
    fn default() -> Self {
        Self { mode: DriveMode::Normal, target_offset: None, steer_history: VecDeque::new(), lane_clear_timers: [0.0; 2] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlDecision {
    pub mode: DriveMode,
    /// Offset from the center line being steered to.
    pub dist_center: f64,
    pub lane_width: f64,
    /// Gap that caps desired speed through the following model.
    pub follow_gap: Option<f64>,
}

/// A lane center visible in the indicators.
#[derive(Debug, Clone, Copy, PartialEq)]
struct LaneView {
    offset: f64,
    dist: Option<f64>,
}

fn lane_width_estimate(a: &AffordanceVector, fallback: f64) -> f64 {
    use Indicator::*;
    if let (Some(ml), Some(mr)) = (a.get(ToMarkingML), a.get(ToMarkingMR)) {
        return ml + mr;
    }
    match (a.get(ToMarkingL), a.get(ToMarkingR), a.get(ToMarkingM)) {
        (Some(l), Some(r), _) => (l + r) / 2.0,
        (Some(l), None, Some(m)) => l + m,
        (None, Some(r), Some(m)) => r - m,
        _ => fallback,
    }
}

fn visible_lanes(a: &AffordanceVector, w: f64) -> Vec<LaneView> {
    use Indicator::*;
    let mut lanes = Vec::with_capacity(5);
    if let (Some(ml), Some(mr)) = (a.get(ToMarkingML), a.get(ToMarkingMR)) {
        let cur = (mr - ml) / 2.0;
        lanes.push(LaneView { offset: cur, dist: a.get(DistMM) });
        if a.get(ToMarkingLL).is_some() {
            lanes.push(LaneView { offset: cur - w, dist: a.get(DistLL) });
        }
        if a.get(ToMarkingRR).is_some() {
            lanes.push(LaneView { offset: cur + w, dist: a.get(DistRR) });
        }
    }
    if let Some(m) = a.get(ToMarkingM) {
        if a.get(ToMarkingL).is_some() {
            lanes.push(LaneView { offset: m - w / 2.0, dist: a.get(DistL) });
        }
        if a.get(ToMarkingR).is_some() {
            lanes.push(LaneView { offset: m + w / 2.0, dist: a.get(DistR) });
        }
    }
    lanes
}

fn nearest_lane(lanes: &[LaneView], offset: f64, max_miss: f64) -> Option<LaneView> {
    lanes
        .iter()
        .copied()
        .filter(|l| (l.offset - offset).abs() <= max_miss)
        .min_by(|a, b| (a.offset - offset).abs().total_cmp(&(b.offset - offset).abs()))
}

/// One tick of the decision logic. Returns the decision and the next state.
pub fn decide(
    a: &AffordanceVector,
    state: &ControllerState,
    cfg: &ControllerConfig,
    dt_control: f64,
) -> Result<(ControlDecision, ControllerState), ControllerError> {
    if a.get(Indicator::Angle).is_none() {
        return Err(ControllerError::InconsistentAffordance("angle inactive"));
    }
    let w = lane_width_estimate(a, cfg.fallback_lane_width);
    let lanes = visible_lanes(a, w);
    if lanes.is_empty() {
        return Err(ControllerError::InconsistentAffordance("both coordinate systems inactive"));
    }
    let mut next = state.clone();

    // Keep following the previously tracked lane when it is still visible.
    let tracked = state
        .target_offset
        .and_then(|t| nearest_lane(&lanes, t, w / 2.0))
        .or_else(|| nearest_lane(&lanes, 0.0, f64::INFINITY))
        .expect("lanes is nonempty");
    let mut target = tracked;
    let side = |target: &LaneView, dir: f64| nearest_lane(&lanes, target.offset + dir * w, w / 2.0);

    // Side clearance timers, relative to the lane the ego is closest to.
    let here = nearest_lane(&lanes, 0.0, f64::INFINITY).expect("lanes is nonempty");
    for (i, dir) in [(0usize, -1.0), (1usize, 1.0)] {
        next.lane_clear_timers[i] += dt_control;
        if let Some(LaneView { dist: Some(d), .. }) = side(&here, dir) {
            if d < cfg.safe_gap {
                next.lane_clear_timers[i] = 0.0;
            }
        }
    }

    let mut mode = state.mode;
    if mode.is_change() {
        if target.dist.is_some_and(|d| d < cfg.safe_gap) {
            // Objective lane became occupied. Fall back toward the origin lane
            // unless the ego is already inside the objective lane.
            let back = if mode == DriveMode::ChangeLeft { 1.0 } else { -1.0 };
            if target.offset.abs() > w / 2.0 {
                if let Some(origin) = side(&target, back) {
                    target = origin;
                }
            }
            mode = DriveMode::Normal;
        } else if target.offset.abs() < cfg.done_tolerance {
            mode = DriveMode::Normal;
        }
    }

    let mut follow_gap = None;
    if !mode.is_change() {
        let approaching = target.dist.is_some_and(|d| d < cfg.approach_gap);
        if approaching {
            let available = |dir: f64, timer: f64| {
                side(&target, dir)
                    .filter(|l| l.dist.is_none_or(|d| d >= cfg.safe_gap) && timer >= cfg.overtake_timer)
            };
            if let Some(left) = available(-1.0, next.lane_clear_timers[0]) {
                mode = DriveMode::ChangeLeft;
                follow_gap = target.dist;
                target = left;
            } else if let Some(right) = available(1.0, next.lane_clear_timers[1]) {
                mode = DriveMode::ChangeRight;
                follow_gap = target.dist;
                target = right;
            } else {
                mode = DriveMode::SlowDown;
                follow_gap = target.dist;
            }
        } else {
            mode = DriveMode::Normal;
        }
    } else {
        // While changing lanes, respect close cars in the origin and objective lanes.
        let origin_dir = if mode == DriveMode::ChangeLeft { 1.0 } else { -1.0 };
        let origin = side(&target, origin_dir).and_then(|l| l.dist);
        follow_gap = [origin, target.dist]
            .into_iter()
            .flatten()
            .filter(|d| *d < cfg.approach_gap)
            .min_by(f64::total_cmp);
    }

    next.mode = mode;
    next.target_offset = Some(target.offset);
    Ok((ControlDecision { mode, dist_center: target.offset, lane_width: w, follow_gap }, next))
}

pub fn desired_speed(state: &ControllerState, decision: &ControlDecision, cfg: &ControllerConfig) -> f64 {
    let mean_abs = if state.steer_history.is_empty() {
        0.0
    } else {
        state.steer_history.iter().map(|s| s.abs()).sum::<f64>() / state.steer_history.len() as f64
    };
    let mut v = cfg.v_base * (1.0 - cfg.turn_slowdown * mean_abs).max(0.4);
    if let Some(gap) = decision.follow_gap {
        v = v.min(cfg.following_speed(gap));
    }
    v
}

/// Controller with its mutable decision state.
#[derive(Debug, Clone)]
pub struct Controller {
    pub config: ControllerConfig,
    pub state: ControllerState,
    pub control_dt: f64,
    /// Full road width, used only with [`SteerWidth::Road`].
    pub road_width: Option<f64>,
    /// Steer toward a point this far left of the tracked center line.
    pub lateral_bias: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerOutput {
    pub command: ControlCommand,
    pub decision: Option<ControlDecision>,
    pub desired_speed: f64,
}

impl Controller {
    pub fn new(config: ControllerConfig, control_dt: f64) -> Self {
        Self { config, state: ControllerState::default(), control_dt, road_width: None, lateral_bias: 0.0 }
    }

    /// Computes the command for one control tick and advances the state.
    /// Inconsistent indicators produce a straight, gently braking command.
    pub fn act(&mut self, a: &AffordanceVector, speed: f64) -> ControllerOutput {
        let cfg = &self.config;
        let (decision, mut next) = match decide(a, &self.state, cfg, self.control_dt) {
            Ok(x) => x,
            Err(_) => {
                return ControllerOutput {
                    command: ControlCommand::new(0.0, -0.3),
                    decision: None,
                    desired_speed: 0.0,
                }
            }
        };
        let width = match (cfg.steer_width, self.road_width) {
            (SteerWidth::Road, Some(r)) => r,
            _ => decision.lane_width,
        };
        let error = (decision.dist_center - self.lateral_bias).clamp(-cfg.max_lateral_error, cfg.max_lateral_error);
        let steer = steering_command(a.angle(), error, width, cfg.effective_steer_gain(speed));
        let v_des = desired_speed(&next, &decision, cfg);
        let accel = speed_control(speed, v_des, cfg.speed_gain);
        next.steer_history.push_back(steer);
        while next.steer_history.len() > cfg.steer_history {
            next.steer_history.pop_front();
        }
        self.state = next;
        ControllerOutput { command: ControlCommand::new(steer, accel), decision: Some(decision), desired_speed: v_des }
    }
}
