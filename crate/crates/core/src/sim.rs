//! Fixed-timestep world: kinematic bicycle cars on a [`TrackGeometry`],
//! lane-keeping traffic, and rectangle collision checks.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::controller::{following_speed, speed_control, steering_command, ControllerConfig};
use crate::track::{wrap_angle, LaneFrame, Pose, TrackGeometry};

pub type CarId = u32;

pub const EGO_ID: CarId = 0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("physics dt {0} outside (0, 0.05]")]
    InvalidDt(f64),
    #[error("no command for car {0}")]
    MissingCommand(CarId),
    #[error("cannot place {count} cars with {min_gap} m same-lane gaps")]
    InsufficientSpace { count: usize, min_gap: f64 },
    #[error("invalid scene: {0}")]
    InvalidScene(String),
}

/// Steering and longitudinal command, both clamped to `[-1, 1]`.
/// Positive steer turns left, negative accel brakes.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlCommand {
    pub steer: f64,
    pub accel: f64,
}

impl ControlCommand {
    pub fn new(steer: f64, accel: f64) -> Self {
        let clean = |v: f64| if v.is_finite() { v.clamp(-1.0, 1.0) } else { 0.0 };
        Self { steer: clean(steer), accel: clean(accel) }
    }
}

/// How the gap between two cars on the same lane is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GapMeasure {
    #[default]
    CenterToCenter,
    BumperToBumper,
}

impl GapMeasure {
    pub fn apply(self, center_gap: f64, len_a: f64, len_b: f64) -> f64 {
        match self {
            GapMeasure::CenterToCenter => center_gap,
            GapMeasure::BumperToBumper => (center_gap - (len_a + len_b) / 2.0).max(1e-3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct VehicleParams {
    pub wheelbase: f64,
    pub max_steer: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    pub length: f64,
    pub width: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self { wheelbase: 2.5, max_steer: 0.3, max_accel: 2.0, max_brake: 6.0, length: 4.5, width: 1.8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CarState {
    pub id: CarId,
    pub pose: Pose,
    /// Lane-relative pose, refreshed after every step.
    pub frame: LaneFrame,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
    pub is_ego: bool,
}

impl CarState {
    pub fn at_frame(
        track: &TrackGeometry,
        id: CarId,
        station: f64,
        lateral: f64,
        speed: f64,
        vehicle: &VehicleParams,
        is_ego: bool,
    ) -> Self {
        let pose = track.frame_to_pose(station, lateral, 0.0);
        Self {
            id,
            pose,
            frame: track.project(&pose),
            speed,
            length: vehicle.length,
            width: vehicle.width,
            is_ego,
        }
    }

    pub fn station(&self) -> f64 {
        self.frame.station
    }

    pub fn lateral(&self) -> f64 {
        self.frame.lateral
    }
}

/// Simulation snapshot.
#[derive(Debug, Clone)]
pub struct WorldState {
    pub tick: u64,
    pub time: f64,
    pub track: Arc<TrackGeometry>,
    pub cars: Vec<CarState>,
    pub rng_seed: u64,
    pub vehicle: VehicleParams,
    physics_dt: f64,
}

impl WorldState {
    pub fn new(
        track: Arc<TrackGeometry>,
        cars: Vec<CarState>,
        rng_seed: u64,
        vehicle: VehicleParams,
        physics_dt: f64,
    ) -> Result<Self, SimError> {
        if !(physics_dt > 0.0 && physics_dt <= 0.05) {
            return Err(SimError::InvalidDt(physics_dt));
        }
        let egos = cars.iter().filter(|c| c.is_ego).count();
        if egos != 1 {
            return Err(SimError::InvalidScene(format!("expected exactly one ego car, found {egos}")));
        }
        let mut ids: Vec<CarId> = cars.iter().map(|c| c.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != cars.len() {
            return Err(SimError::InvalidScene("duplicate car ids".into()));
        }
        if let Some(c) = cars.iter().find(|c| c.width >= track.lane_width() || c.speed < 0.0) {
            return Err(SimError::InvalidScene(format!("car {} is wider than a lane or has negative speed", c.id)));
        }
        Ok(Self { tick: 0, time: 0.0, track, cars, rng_seed, vehicle, physics_dt })
    }

    pub fn physics_dt(&self) -> f64 {
        self.physics_dt
    }

    pub fn car(&self, id: CarId) -> Option<&CarState> {
        self.cars.iter().find(|c| c.id == id)
    }

    pub fn ego(&self) -> &CarState {
        self.cars.iter().find(|c| c.is_ego).expect("world has an ego car")
    }

    /// Advances every car by one physics step. Time is always `tick * dt`.
    pub fn step(&mut self, commands: &BTreeMap<CarId, ControlCommand>) -> Result<(), SimError> {
        for car in &self.cars {
            if !commands.contains_key(&car.id) {
                return Err(SimError::MissingCommand(car.id));
            }
        }
        let dt = self.physics_dt;
        for car in &mut self.cars {
            let cmd = commands[&car.id];
            integrate(car, &cmd, &self.vehicle, dt);
            car.frame = self.track.project(&car.pose);
        }
        self.tick += 1;
        self.time = self.tick as f64 * dt;
        Ok(())
    }
}

/// Exact arc motion for one step with constant steering and acceleration.
pub fn integrate(car: &mut CarState, cmd: &ControlCommand, vehicle: &VehicleParams, dt: f64) {
    let cmd = ControlCommand::new(cmd.steer, cmd.accel);
    let accel = cmd.accel * if cmd.accel >= 0.0 { vehicle.max_accel } else { vehicle.max_brake };
    let v0 = car.speed;
    let v1 = v0 + accel * dt;
    let distance = if v1 >= 0.0 {
        0.5 * (v0 + v1) * dt
    } else if accel < 0.0 {
        v0 * v0 / (-2.0 * accel)
    } else {
        0.0
    };
    car.speed = v1.max(0.0);
    if distance == 0.0 {
        return;
    }
    let curvature = (cmd.steer * vehicle.max_steer).tan() / vehicle.wheelbase;
    let h0 = car.pose.heading;
    let turn = curvature * distance;
    // chord of the arc, written to stay accurate as the curvature vanishes
    let half = 0.5 * turn;
    let chord = if half.abs() < 1e-4 { distance * (1.0 - half * half / 6.0) } else { distance * half.sin() / half };
    let mid = h0 + half;
    car.pose.x += chord * mid.cos();
    car.pose.y += chord * mid.sin();
    car.pose.heading = wrap_angle(h0 + turn);
}

/// Scripted switch of a traffic car's lane once it passes `station`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScriptedLaneChange {
    pub station: f64,
    pub lane: usize,
}

/// Lane-keeping behaviour of one traffic car.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficBehavior {
    pub lane: usize,
    pub set_speed: f64,
    #[serde(default)]
    pub lane_changes: Vec<ScriptedLaneChange>,
}

impl TrafficBehavior {
    pub fn lane_at(&self, station: f64) -> usize {
        self.lane_changes
            .iter()
            .filter(|c| c.station <= station)
            .max_by(|a, b| a.station.total_cmp(&b.station))
            .map_or(self.lane, |c| c.lane)
    }
}

pub const CUT_IN_MARGIN: f64 = 0.75;

/// Center-to-center gap to the nearest car ahead whose body overlaps `lane`
/// or comes within [`CUT_IN_MARGIN`] of it.
pub fn gap_ahead_in_lane(world: &WorldState, car: &CarState, lane: usize) -> Option<f64> {
    let half = world.track.lane_width() / 2.0;
    world
        .cars
        .iter()
        .filter(|o| o.id != car.id)
        .filter(|o| {
            world
                .track
                .lane_center_lateral(o.frame.station, lane)
                .is_ok_and(|c| (o.frame.lateral - c).abs() < half + o.width / 2.0 + CUT_IN_MARGIN)
        })
        .filter_map(|o| world.track.forward_gap(car.frame.station, o.frame.station))
        .filter(|g| *g > 0.0)
        .min_by(f64::total_cmp)
}

/// Command for a traffic car: steering law toward its lane center and the
/// following model capped at the behaviour's set speed.
pub fn traffic_policy(
    car: &CarState,
    world: &WorldState,
    behavior: &TrafficBehavior,
    cfg: &ControllerConfig,
    gap_measure: GapMeasure,
) -> ControlCommand {
    let track = &world.track;
    let station = car.frame.station;
    let n = track.lane_count(station);
    let lane = behavior.lane_at(station).min(n - 1);
    let center = track.lane_center_lateral(station, lane).expect("lane clamped to lane count");
    let steer = steering_command(
        -car.frame.angle,
        car.frame.lateral - center,
        track.lane_width(),
        cfg.effective_steer_gain(car.speed),
    );
    let mut v_des = behavior.set_speed;
    if let Some(gap) = gap_ahead_in_lane(world, car, lane) {
        let gap = gap_measure.apply(gap, car.length, world.vehicle.length);
        v_des = v_des.min(following_speed(gap, cfg.v_max, cfg.c, cfg.d));
    }
    ControlCommand::new(steer, speed_control(car.speed, v_des, cfg.speed_gain))
}

fn corners(car: &CarState) -> [(f64, f64); 4] {
    let (s, c) = car.pose.heading.sin_cos();
    let hl = car.length / 2.0;
    let hw = car.width / 2.0;
    [(hl, hw), (hl, -hw), (-hl, -hw), (-hl, hw)]
        .map(|(a, b)| (car.pose.x + a * c - b * s, car.pose.y + a * s + b * c))
}

/// Separating-axis test on the two oriented rectangles; touching does not count.
pub fn cars_overlap(a: &CarState, b: &CarState) -> bool {
    let reach = (a.length.hypot(a.width) + b.length.hypot(b.width)) / 2.0;
    if (a.pose.x - b.pose.x).hypot(a.pose.y - b.pose.y) > reach {
        return false;
    }
    let ca = corners(a);
    let cb = corners(b);
    for h in [a.pose.heading, b.pose.heading] {
        let (s, c) = h.sin_cos();
        for axis in [(c, s), (-s, c)] {
            let proj = |pts: &[(f64, f64); 4]| {
                pts.iter().map(|p| p.0 * axis.0 + p.1 * axis.1).fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                    (lo.min(v), hi.max(v))
                })
            };
            let (alo, ahi) = proj(&ca);
            let (blo, bhi) = proj(&cb);
            if ahi <= blo || bhi <= alo {
                return false;
            }
        }
    }
    true
}

/// All overlapping pairs `(lower id, higher id)`, sorted.
pub fn detect_collisions(world: &WorldState) -> Vec<(CarId, CarId)> {
    let mut out = Vec::new();
    for (i, a) in world.cars.iter().enumerate() {
        for b in &world.cars[i + 1..] {
            if cars_overlap(a, b) {
                out.push((a.id.min(b.id), a.id.max(b.id)));
            }
        }
    }
    out.sort_unstable();
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpawnOptions {
    pub min_gap: f64,
    /// Stations within this distance of `clear_station` stay empty in every lane.
    pub clear_radius: f64,
    pub clear_station: f64,
    pub speed_min: f64,
    pub speed_max: f64,
    pub first_id: CarId,
}

impl Default for SpawnOptions {
    fn default() -> Self {
        Self {
            min_gap: 30.0,
            clear_radius: 0.0,
            clear_station: 0.0,
            speed_min: 40.0 / 3.6,
            speed_max: 55.0 / 3.6,
            first_id: 1,
        }
    }
}

/// A placed traffic car and the behaviour that drives it.
#[derive(Debug, Clone, PartialEq)]
pub struct SpawnedCar {
    pub car: CarState,
    pub behavior: TrafficBehavior,
}

pub fn spawn_traffic(track: &TrackGeometry, count: usize, seed: u64) -> Result<Vec<SpawnedCar>, SimError> {
    spawn_traffic_with(track, count, seed, &SpawnOptions::default(), &VehicleParams::default())
}

fn station_distance(track: &TrackGeometry, a: f64, b: f64) -> f64 {
    if track.is_closed() {
        let d = (a - b).rem_euclid(track.total_length());
        d.min(track.total_length() - d)
    } else {
        (a - b).abs()
    }
}

/// Seeded placement with a minimum same-lane gap, by rejection sampling.
pub fn spawn_traffic_with(
    track: &TrackGeometry,
    count: usize,
    seed: u64,
    opts: &SpawnOptions,
    vehicle: &VehicleParams,
) -> Result<Vec<SpawnedCar>, SimError> {
    let insufficient = SimError::InsufficientSpace { count, min_gap: opts.min_gap };
    if count == 0 {
        return Ok(Vec::new());
    }
    let length = track.total_length();
    let usable = if track.is_closed() { length } else { (length - opts.min_gap).max(0.0) };
    let max_lanes = track.lane_profile().iter().map(|s| s.lane_count).max().unwrap_or(1);
    let capacity = max_lanes * ((usable - 2.0 * opts.clear_radius).max(0.0) / opts.min_gap).floor() as usize;
    if count > capacity {
        return Err(insufficient);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut placed: Vec<(f64, usize)> = Vec::with_capacity(count);
    let mut out = Vec::with_capacity(count);
    let max_attempts = 10_000 * count;
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > max_attempts {
            return Err(insufficient);
        }
        let station = rng.random::<f64>() * usable;
        let lane = rng.random_range(0..track.lane_count(station));
        if opts.clear_radius > 0.0 && station_distance(track, station, opts.clear_station) < opts.clear_radius {
            continue;
        }
        if placed.iter().any(|&(s, l)| l == lane && station_distance(track, s, station) < opts.min_gap) {
            continue;
        }
        let set_speed = opts.speed_min + rng.random::<f64>() * (opts.speed_max - opts.speed_min);
        let lateral = track.lane_center_lateral(station, lane).expect("lane drawn from lane count");
        let id = opts.first_id + out.len() as CarId;
        placed.push((station, lane));
        out.push(SpawnedCar {
            car: CarState::at_frame(track, id, station, lateral, set_speed, vehicle, false),
            behavior: TrafficBehavior { lane, set_speed, lane_changes: Vec::new() },
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn straight_world(cars: Vec<CarState>) -> WorldState {
        let track = Arc::new(TrackGeometry::straight_road(5000.0, 3, 4.0).unwrap());
        WorldState::new(track, cars, 0, VehicleParams::default(), 0.01).unwrap()
    }

    fn ego_at(track: &TrackGeometry, station: f64, lateral: f64, speed: f64) -> CarState {
        CarState::at_frame(track, EGO_ID, station, lateral, speed, &VehicleParams::default(), true)
    }

    #[test]
    fn straight_motion() {
        let track = TrackGeometry::straight_road(5000.0, 3, 4.0).unwrap();
        let mut w = straight_world(vec![ego_at(&track, 100.0, 1.0, 20.0)]);
        let cmds = BTreeMap::from([(EGO_ID, ControlCommand::default())]);
        w.step(&cmds).unwrap();
        let e = w.ego();
        assert_abs_diff_eq!(e.station(), 100.2, epsilon = 1e-9);
        assert_eq!(e.lateral(), 1.0);
        assert_eq!(e.frame.angle, 0.0);
        assert_eq!(e.speed, 20.0);
        assert_eq!(w.tick, 1);
        assert_abs_diff_eq!(w.time, 0.01, epsilon = 1e-12);
    }

    #[test]
    fn tiny_steer_still_advances() {
        let track = TrackGeometry::straight_road(5000.0, 3, 4.0).unwrap();
        let mut car = ego_at(&track, 100.0, 0.0, 11.5);
        car.pose.heading = 2.0;
        let (x0, y0) = (car.pose.x, car.pose.y);
        integrate(&mut car, &ControlCommand::new(1e-17, 0.0), &VehicleParams::default(), 0.01);
        assert_abs_diff_eq!(car.pose.x - x0, 0.115 * 2f64.cos(), epsilon = 1e-12);
        assert_abs_diff_eq!(car.pose.y - y0, 0.115 * 2f64.sin(), epsilon = 1e-12);
    }

    #[test]
    fn constant_steer_traces_turning_circle() {
        let v = VehicleParams::default();
        let track = TrackGeometry::straight_road(5000.0, 3, 4.0).unwrap();
        let mut car = ego_at(&track, 100.0, 0.0, 10.0);
        let steer = 0.5;
        let radius = v.wheelbase / (steer * v.max_steer).tan();
        let (x0, y0, h0) = (car.pose.x, car.pose.y, car.pose.heading);
        let (cx, cy) = (x0 - radius * h0.sin(), y0 + radius * h0.cos());
        let steps = (2.0 * std::f64::consts::PI * radius / (10.0 * 0.01)).ceil() as usize;
        for _ in 0..steps {
            integrate(&mut car, &ControlCommand::new(steer, 0.0), &v, 0.01);
            let r = (car.pose.x - cx).hypot(car.pose.y - cy);
            assert!((r - radius).abs() < 1e-3 * radius);
        }
        assert!((car.pose.x - x0).hypot(car.pose.y - y0) < 0.1 + 1e-9);
    }

    #[test]
    fn zero_speed_is_fixed_point() {
        let track = TrackGeometry::straight_road(5000.0, 3, 4.0).unwrap();
        let mut w = straight_world(vec![ego_at(&track, 100.0, 0.0, 0.0)]);
        let before = w.ego().pose;
        let cmds = BTreeMap::from([(EGO_ID, ControlCommand::new(0.7, 0.0))]);
        for _ in 0..50 {
            w.step(&cmds).unwrap();
        }
        assert_eq!(w.ego().pose, before);
    }

    #[test]
    fn missing_command_and_bad_dt() {
        let track = Arc::new(TrackGeometry::straight_road(5000.0, 3, 4.0).unwrap());
        let ego = ego_at(&track, 100.0, 0.0, 0.0);
        assert!(matches!(
            WorldState::new(track.clone(), vec![ego.clone()], 0, VehicleParams::default(), 0.1),
            Err(SimError::InvalidDt(_))
        ));
        let mut w = WorldState::new(track, vec![ego], 0, VehicleParams::default(), 0.01).unwrap();
        assert_eq!(w.step(&BTreeMap::new()), Err(SimError::MissingCommand(EGO_ID)));
    }

    #[test]
    fn braking_stops_without_reversing() {
        let track = TrackGeometry::straight_road(5000.0, 3, 4.0).unwrap();
        let mut w = straight_world(vec![ego_at(&track, 100.0, 0.0, 3.0)]);
        let cmds = BTreeMap::from([(EGO_ID, ControlCommand::new(0.0, -1.0))]);
        for _ in 0..200 {
            w.step(&cmds).unwrap();
        }
        assert_eq!(w.ego().speed, 0.0);
        // v^2 / (2 b) = 9 / 12
        assert_abs_diff_eq!(w.ego().station(), 100.75, epsilon = 1e-9);
    }

    #[test]
    fn collision_cases() {
        let track = TrackGeometry::straight_road(5000.0, 3, 4.0).unwrap();
        let v = VehicleParams { width: 2.0, ..VehicleParams::default() };
        let mk = |id, s, l| CarState::at_frame(&track, id, s, l, 0.0, &v, id == 0);
        let w = straight_world(vec![mk(0, 100.0, 0.0), mk(1, 100.0, 4.0)]);
        assert!(detect_collisions(&w).is_empty());
        let w = straight_world(vec![mk(0, 100.0, 0.0), mk(1, 100.0, 0.0)]);
        assert_eq!(detect_collisions(&w), vec![(0, 1)]);
        let w = straight_world(vec![mk(0, 100.0, 0.0), mk(1, 104.49, 0.0)]);
        assert_eq!(detect_collisions(&w), vec![(0, 1)]);
        let w = straight_world(vec![mk(0, 100.0, 0.0), mk(1, 104.51, 0.0)]);
        assert!(detect_collisions(&w).is_empty());
    }

    #[test]
    fn traffic_equilibrium_and_restoring_steer() {
        let track = TrackGeometry::straight_road(5000.0, 3, 4.0).unwrap();
        let cfg = ControllerConfig::default();
        let vehicle = VehicleParams::default();
        let behavior = TrafficBehavior { lane: 1, set_speed: 12.0, lane_changes: vec![] };
        let car = CarState::at_frame(&track, 1, 200.0, 0.0, 12.0, &vehicle, false);
        let w = straight_world(vec![ego_at(&track, 10.0, 4.0, 0.0), car.clone()]);
        let cmd = traffic_policy(&car, &w, &behavior, &cfg, GapMeasure::CenterToCenter);
        assert_eq!(cmd, ControlCommand::new(0.0, 0.0));

        let off = CarState::at_frame(&track, 1, 200.0, 1.0, 12.0, &vehicle, false);
        let w = straight_world(vec![ego_at(&track, 10.0, 4.0, 0.0), off.clone()]);
        let cmd = traffic_policy(&off, &w, &behavior, &cfg, GapMeasure::CenterToCenter);
        assert!(cmd.steer < 0.0);
    }

    #[test]
    fn traffic_follows_slower_car() {
        let track = TrackGeometry::straight_road(5000.0, 3, 4.0).unwrap();
        let cfg = ControllerConfig { speed_gain: 10.0, ..ControllerConfig::default() };
        let vehicle = VehicleParams::default();
        let behavior = TrafficBehavior { lane: 1, set_speed: 15.0, lane_changes: vec![] };
        for gap in [30.0, 20.0, 12.0, 8.0] {
            let follower = CarState::at_frame(&track, 1, 200.0, 0.0, 15.0, &vehicle, false);
            let leader = CarState::at_frame(&track, 2, 200.0 + gap, 0.0, 8.0, &vehicle, false);
            let w = straight_world(vec![ego_at(&track, 10.0, 4.0, 0.0), follower.clone(), leader]);
            let cmd = traffic_policy(&follower, &w, &behavior, &cfg, GapMeasure::CenterToCenter);
            let v_target = following_speed(gap, cfg.v_max, cfg.c, cfg.d).min(15.0);
            let expected = speed_control(15.0, v_target, cfg.speed_gain);
            assert_abs_diff_eq!(cmd.accel, expected, epsilon = 1e-12);
        }
    }

    #[test]
    fn spawn_is_seeded_and_spaced() {
        let track = TrackGeometry::oval(500.0, 159.15494309189535, 3, 4.0).unwrap();
        assert!(spawn_traffic(&track, 0, 3).unwrap().is_empty());
        let a = spawn_traffic(&track, 10, 7).unwrap();
        let b = spawn_traffic(&track, 10, 7).unwrap();
        assert_eq!(a, b);
        for (i, x) in a.iter().enumerate() {
            for y in &a[i + 1..] {
                if x.behavior.lane == y.behavior.lane {
                    assert!(station_distance(&track, x.car.station(), y.car.station()) >= 30.0 - 1e-6);
                }
            }
        }
        let short = TrackGeometry::straight_road(100.0, 1, 4.0).unwrap();
        assert!(matches!(spawn_traffic(&short, 5, 1), Err(SimError::InsufficientSpace { .. })));
    }
}
