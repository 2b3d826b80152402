//! The 10 Hz driving loop shared by headless runs and the live service:
//! perceive, decide, hold the command over the physics substeps, record.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::TAU;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::{compute_affordance, AffordanceConfig, AffordanceVector, NormalizationSpec};
use crate::controller::{ControlDecision, Controller, ControllerConfig};
use crate::datastore::{FrameRecord, FrameSource};
use crate::eval::LogRow;
use crate::learning::{LearnError, MlpModel};
use crate::perception::{AffordanceEstimate, Perceiver, PerceptionError};
use crate::render::{render_ego_view, CameraModel, Raster, RenderError, RenderStyle};
use crate::scenario::{PerceiverKind, Scenario};
use crate::sim::{
    detect_collisions, spawn_traffic_with, traffic_policy, CarId, CarState, ControlCommand, SimError, SpawnOptions,
    SpawnedCar, TrafficBehavior, VehicleParams, WorldState, EGO_ID,
};
use crate::track::LaneFrame;

#[derive(Debug, Error)]
pub enum SessionError {
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Perception(#[from] PerceptionError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("{0}")]
    Config(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pilot {
    Autonomous,
    Manual,
}

impl Pilot {
    pub fn as_str(self) -> &'static str {
        match self {
            Pilot::Autonomous => "autonomous",
            Pilot::Manual => "manual",
        }
    }
}

/// Sinusoidal lateral offset added to the autonomous steering target,
/// emulating a driver who wanders inside the lane.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Weave {
    pub amplitude: f64,
    pub period: f64,
}

impl Weave {
    pub fn bias(&self, time: f64) -> f64 {
        self.amplitude * (TAU * time / self.period).sin()
    }
}

#[derive(Debug, Clone)]
pub struct SessionConfig {
    pub physics_dt: f64,
    pub control_dt: f64,
    pub controller: ControllerConfig,
    pub traffic_controller: ControllerConfig,
    pub affordance: AffordanceConfig,
    pub vehicle: VehicleParams,
    pub camera: CameraModel,
    pub style: RenderStyle,
}

impl Default for SessionConfig {
    fn default() -> Self {
        Self {
            physics_dt: 0.01,
            control_dt: 0.1,
            controller: ControllerConfig::default(),
            traffic_controller: ControllerConfig::default(),
            affordance: AffordanceConfig::default(),
            vehicle: VehicleParams::default(),
            camera: CameraModel::default(),
            style: RenderStyle::default(),
        }
    }
}

/// Everything produced by one control tick. Pose fields describe the state
/// that was observed, before the physics substeps ran.
#[derive(Debug, Clone)]
pub struct TickOutcome {
    pub row: LogRow,
    pub frame: LaneFrame,
    pub truth: Option<AffordanceVector>,
    pub estimate: Option<AffordanceEstimate>,
    pub decision: Option<ControlDecision>,
    pub command: ControlCommand,
    /// Pairs overlapping at the end of the tick.
    pub colliding: Vec<(CarId, CarId)>,
}

pub struct Session {
    pub world: WorldState,
    pub behaviors: BTreeMap<CarId, TrafficBehavior>,
    pub controller: Controller,
    pub perceiver: Perceiver,
    pub spec: NormalizationSpec,
    pub config: SessionConfig,
    pub pilot: Pilot,
    pub weave: Option<Weave>,
    manual: ControlCommand,
    colliding: BTreeSet<(CarId, CarId)>,
    control_tick: u64,
    substeps: u64,
}

impl Session {
    pub fn new(
        world: WorldState,
        traffic: Vec<(CarId, TrafficBehavior)>,
        perceiver: Perceiver,
        config: SessionConfig,
    ) -> Result<Self, SessionError> {
        let ratio = config.control_dt / config.physics_dt;
        if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return Err(SessionError::Config("control_dt must be a whole multiple of physics_dt".into()));
        }
        if (world.physics_dt() - config.physics_dt).abs() > 1e-12 {
            return Err(SessionError::Config("world and session physics_dt differ".into()));
        }
        config.controller.validate().map_err(SessionError::Config)?;
        let spec = NormalizationSpec::new(world.track.lane_width(), config.affordance.max_range);
        let mut controller = Controller::new(config.controller.clone(), config.control_dt);
        controller.road_width = Some(2.0 * world.track.road_half_width(world.ego().frame.station));
        Ok(Self {
            behaviors: traffic.into_iter().collect(),
            world,
            controller,
            perceiver,
            spec,
            config,
            pilot: Pilot::Autonomous,
            weave: None,
            manual: ControlCommand::default(),
            colliding: BTreeSet::new(),
            control_tick: 0,
            substeps: ratio.round() as u64,
        })
    }

    /// Builds the world described by a scenario with traffic seeded by `seed`.
    pub fn from_scenario(scenario: &Scenario, seed: u64, perceiver: Perceiver) -> Result<Self, SessionError> {
        let f = &scenario.file;
        let track = scenario.track.clone();
        let lateral = track
            .lane_center_lateral(f.ego.station, f.ego.lane)
            .map_err(|e| SessionError::Config(e.to_string()))?;
        let ego = CarState::at_frame(&track, EGO_ID, f.ego.station, lateral, f.ego.speed, &f.vehicle, true);
        let opts = SpawnOptions {
            min_gap: f.traffic.min_gap,
            clear_radius: f.traffic.clear_radius,
            clear_station: f.ego.station,
            speed_min: f.traffic.speed_min_kmh / 3.6,
            speed_max: f.traffic.speed_max_kmh / 3.6,
            first_id: EGO_ID + 1,
        };
        let mut spawned = spawn_traffic_with(&track, f.traffic.count, seed, &opts, &f.vehicle)?;
        for c in &f.traffic.cars {
            let id = EGO_ID + 1 + spawned.len() as CarId;
            let lateral = track.lane_center_lateral(c.station, c.lane).map_err(|e| SessionError::Config(e.to_string()))?;
            let speed = c.speed_kmh / 3.6;
            spawned.push(SpawnedCar {
                car: CarState::at_frame(&track, id, c.station, lateral, speed, &f.vehicle, false),
                behavior: TrafficBehavior { lane: c.lane, set_speed: speed, lane_changes: c.lane_changes.clone() },
            });
        }
        let mut cars = vec![ego];
        let mut behaviors = Vec::with_capacity(spawned.len());
        for s in spawned {
            behaviors.push((s.car.id, s.behavior));
            cars.push(s.car);
        }
        let world = WorldState::new(track, cars, seed, f.vehicle, f.physics_dt)?;
        let config = SessionConfig {
            physics_dt: f.physics_dt,
            control_dt: f.control_dt,
            controller: f.controller.clone(),
            traffic_controller: scenario.traffic_controller(),
            affordance: f.affordance,
            vehicle: f.vehicle,
            camera: f.camera,
            style: f.style,
        };
        Self::new(world, behaviors, perceiver, config)
    }

    pub fn control_tick(&self) -> u64 {
        self.control_tick
    }

    pub fn set_pilot(&mut self, pilot: Pilot) {
        if pilot != self.pilot {
            self.controller.state = Default::default();
            self.pilot = pilot;
        }
    }

    /// Latest manual command; held until replaced.
    pub fn set_manual_command(&mut self, cmd: ControlCommand) {
        self.manual = ControlCommand::new(cmd.steer, cmd.accel);
    }

    pub fn truth(&self) -> Option<AffordanceVector> {
        compute_affordance(&self.world, EGO_ID, &self.config.affordance).ok()
    }

    pub fn render(&self) -> Result<Raster, SessionError> {
        Ok(render_ego_view(&self.world, EGO_ID, &self.config.camera, &self.config.style)?)
    }

    /// Like [`Session::tick`], also returning the dataset record of the
    /// observed state when the ego was on the road with representable labels.
    pub fn tick_capturing(&mut self, track_id: &str) -> Result<(TickOutcome, Option<FrameRecord>), SessionError> {
        let raster = self.render()?;
        let source = match self.pilot {
            Pilot::Manual => FrameSource::Human,
            Pilot::Autonomous => FrameSource::Autonomous,
        };
        let out = self.tick()?;
        let record = out.truth.as_ref().and_then(|truth| {
            FrameRecord::new(
                out.row.tick,
                track_id,
                source,
                out.frame,
                out.row.speed,
                raster,
                *truth,
                out.command,
                &self.spec,
            )
            .ok()
        });
        Ok((out, record))
    }

    /// Observes and decides without advancing the world.
    pub fn observe(&mut self) -> (Option<AffordanceVector>, Option<AffordanceEstimate>, Option<ControlDecision>, ControlCommand) {
        let truth = self.truth();
        let estimate = self.perceiver.perceive(&self.world, EGO_ID, &self.config.affordance, &self.spec).ok();
        let speed = self.world.ego().speed;
        let (decision, command) = match self.pilot {
            Pilot::Manual => (None, self.manual),
            Pilot::Autonomous => {
                self.controller.lateral_bias = self.weave.map_or(0.0, |w| w.bias(self.world.time));
                match &estimate {
                    Some(e) => {
                        let out = self.controller.act(&e.vector, speed);
                        (out.decision, out.command)
                    }
                    None => (None, ControlCommand::new(0.0, -0.5)),
                }
            }
        };
        (truth, estimate, decision, command)
    }

    /// One control tick: observe, decide, then run the physics substeps.
    pub fn tick(&mut self) -> Result<TickOutcome, SessionError> {
        let ego = self.world.ego().clone();
        let (truth, estimate, decision, command) = self.observe();

        let mut commands: BTreeMap<CarId, ControlCommand> = BTreeMap::new();
        commands.insert(EGO_ID, command);
        for car in self.world.cars.iter().filter(|c| !c.is_ego) {
            let behavior = self.behaviors.get(&car.id).ok_or(SimError::MissingCommand(car.id))?;
            let cmd = traffic_policy(car, &self.world, behavior, &self.config.traffic_controller, self.config.affordance.gap_measure);
            commands.insert(car.id, cmd);
        }

        let mut new_collisions = 0u32;
        for _ in 0..self.substeps {
            self.world.step(&commands)?;
            let now: BTreeSet<(CarId, CarId)> = detect_collisions(&self.world).into_iter().collect();
            new_collisions += now.difference(&self.colliding).count() as u32;
            self.colliding = now;
        }

        let track = &self.world.track;
        let center_offset = ego
            .frame
            .lane_index
            .and_then(|l| track.lane_center_lateral(ego.frame.station, l).ok())
            .map(|c| ego.frame.lateral - c);
        let row = LogRow {
            tick: self.control_tick,
            time: self.control_tick as f64 * self.config.control_dt,
            x: ego.pose.x,
            y: ego.pose.y,
            heading: ego.pose.heading,
            station: ego.frame.station,
            lateral: ego.frame.lateral,
            lane: ego.frame.lane_index,
            speed: ego.speed,
            steer: command.steer,
            accel: command.accel,
            pilot: self.pilot.as_str().to_string(),
            mode: decision.map(|d| d.mode),
            center_offset,
            new_collisions,
            off_road: ego.frame.lane_index.is_none(),
        };
        self.control_tick += 1;
        Ok(TickOutcome {
            row,
            frame: ego.frame,
            truth,
            estimate,
            decision,
            command,
            colliding: self.colliding.iter().copied().collect(),
        })
    }

    /// Runs `ticks` control ticks and returns the trajectory log.
    pub fn run(&mut self, ticks: u64, mut on_tick: impl FnMut(&Session, &TickOutcome)) -> Result<Vec<LogRow>, SessionError> {
        let mut rows = Vec::with_capacity(ticks as usize);
        for _ in 0..ticks {
            let out = self.tick()?;
            on_tick(self, &out);
            rows.push(out.row);
        }
        Ok(rows)
    }
}

/// Perceiver described by a scenario; `kind` overrides the file's choice.
pub fn perceiver_for(scenario: &Scenario, kind: Option<PerceiverKind>, model: Option<&Path>) -> Result<Perceiver, SessionError> {
    let p = &scenario.file.perception;
    Ok(match kind.unwrap_or(p.kind) {
        PerceiverKind::Oracle => Perceiver::Oracle,
        PerceiverKind::Noisy => Perceiver::Noisy(p.noise.clone()),
        PerceiverKind::Learned => {
            let path = match (model, &p.model) {
                (Some(m), _) => m.to_path_buf(),
                (None, Some(m)) => scenario.resolve(m),
                (None, None) => return Err(SessionError::Config("learned perception needs a model checkpoint".into())),
            };
            let ck = MlpModel::load(&path)?;
            if ck.model.input_size() != ck.camera.pixel_count() {
                return Err(SessionError::Config("checkpoint input size does not match its camera".into()));
            }
            Perceiver::Learned { model: Box::new(ck.model), camera: ck.camera, style: scenario.file.style }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::track::TrackGeometry;
    use std::sync::Arc;

    fn straight_session(offset: f64) -> Session {
        let track = Arc::new(TrackGeometry::straight_road(5000.0, 3, 4.0).unwrap());
        let v = VehicleParams::default();
        let ego = CarState::at_frame(&track, EGO_ID, 50.0, offset, 15.0, &v, true);
        let world = WorldState::new(track, vec![ego], 0, v, 0.01).unwrap();
        Session::new(world, vec![], Perceiver::Oracle, SessionConfig::default()).unwrap()
    }

    #[test]
    fn lane_keeping_converges_without_overshoot() {
        let mut s = straight_session(1.0);
        let rows = s.run(80, |_, _| {}).unwrap();
        let last = rows.last().unwrap().center_offset.unwrap();
        assert!(last.abs() < 0.1, "offset after 8 s {last}");
        let worst_overshoot = rows.iter().filter_map(|r| r.center_offset).map(|o| -o).fold(0.0, f64::max);
        assert!(worst_overshoot < 0.5);
        assert!(rows.iter().all(|r| r.new_collisions == 0 && !r.off_road));
    }

    #[test]
    fn manual_pilot_holds_latest_command() {
        let mut s = straight_session(0.0);
        s.set_pilot(Pilot::Manual);
        s.set_manual_command(ControlCommand::new(0.0, 5.0));
        let out = s.tick().unwrap();
        assert_eq!(out.command, ControlCommand::new(0.0, 1.0));
        assert_eq!(out.row.mode, None);
        assert_eq!(out.row.pilot, "manual");
        assert!(s.world.ego().speed > 15.0);
    }

    #[test]
    fn weave_moves_within_lane() {
        let mut s = straight_session(0.0);
        s.weave = Some(Weave { amplitude: 1.0, period: 8.0 });
        let rows = s.run(300, |_, _| {}).unwrap();
        let max = rows.iter().filter_map(|r| r.center_offset).fold(0.0, |m: f64, o| m.max(o.abs()));
        assert!(max > 0.5 && max < 1.5, "max offset {max}");
        assert!(rows.iter().all(|r| r.lane == Some(1)));
    }
}
