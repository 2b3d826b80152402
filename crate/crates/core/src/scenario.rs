//! Scenario files: a TOML document naming a track file plus traffic, ego
//! start, run length and every tunable configuration block.
//!
//! ```toml
//! name = "two_lane"
//! track = "tracks/oval2.track"   # relative to this file
//! duration = 600.0               # seconds
//! seed = 0
//!
//! [ego]
//! station = 0.0
//! lane = 1
//! speed = 15.0
//!
//! [traffic]
//! count = 10
//! speed_min_kmh = 40.0
//! speed_max_kmh = 55.0
//!
//! [[traffic.cars]]               # optional scripted cars
//! station = 300.0
//! lane = 0
//! speed_kmh = 30.0
//! lane_changes = [{ station = 900.0, lane = 1 }]
//!
//! [perception]
//! kind = "noisy"                 # oracle | noisy | learned
//! noise = { sigma_lane = 0.2 }
//! ```
//!
//! Optional tables `controller`, `traffic_controller`, `affordance`,
//! `vehicle`, `camera` and `style` override the defaults field by field.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::AffordanceConfig;
use crate::controller::ControllerConfig;
use crate::perception::NoiseProfile;
use crate::render::{CameraModel, RenderStyle};
use crate::sim::{ScriptedLaneChange, VehicleParams};
use crate::track::{TrackError, TrackGeometry};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("invalid scenario {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("track {path}: {source}")]
    Track { path: PathBuf, source: TrackError },
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EgoSpec {
    pub station: f64,
    pub lane: usize,
    pub speed: f64,
}

impl Default for EgoSpec {
    fn default() -> Self {
        Self { station: 0.0, lane: 0, speed: 15.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedCar {
    pub station: f64,
    pub lane: usize,
    pub speed_kmh: f64,
    #[serde(default)]
    pub lane_changes: Vec<ScriptedLaneChange>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrafficSpec {
    pub count: usize,
    pub speed_min_kmh: f64,
    pub speed_max_kmh: f64,
    pub min_gap: f64,
    /// Spawned cars keep this far from the ego start station.
    pub clear_radius: f64,
    pub cars: Vec<ScriptedCar>,
}

impl Default for TrafficSpec {
    fn default() -> Self {
        Self { count: 0, speed_min_kmh: 40.0, speed_max_kmh: 55.0, min_gap: 30.0, clear_radius: 50.0, cars: Vec::new() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PerceiverKind {
    #[default]
    Oracle,
    Noisy,
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct PerceptionSpec {
    pub kind: PerceiverKind,
    pub noise: NoiseProfile,
    /// Checkpoint path, relative to the scenario file.
    pub model: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: Option<String>,
    pub track: String,
    pub duration: f64,
    pub seed: u64,
    pub physics_dt: f64,
    pub control_dt: f64,
    pub ego: EgoSpec,
    pub traffic: TrafficSpec,
    pub controller: ControllerConfig,
    pub traffic_controller: Option<ControllerConfig>,
    pub affordance: AffordanceConfig,
    pub perception: PerceptionSpec,
    pub vehicle: VehicleParams,
    pub camera: CameraModel,
    pub style: RenderStyle,
}

impl Default for ScenarioFile {
    fn default() -> Self {
        Self {
            name: None,
            track: String::new(),
            duration: 600.0,
            seed: 0,
            physics_dt: 0.01,
            control_dt: 0.1,
            ego: EgoSpec::default(),
            traffic: TrafficSpec::default(),
            controller: ControllerConfig::default(),
            traffic_controller: None,
            affordance: AffordanceConfig::default(),
            perception: PerceptionSpec::default(),
            vehicle: VehicleParams::default(),
            camera: CameraModel::default(),
            style: RenderStyle::default(),
        }
    }
}

/// A parsed scenario with its track loaded.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub file: ScenarioFile,
    pub track: Arc<TrackGeometry>,
    /// Directory relative paths resolve against.
    pub base_dir: PathBuf,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io { path: path.into(), source })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let file: ScenarioFile =
            toml::from_str(&text).map_err(|e| ScenarioError::Parse { path: path.into(), message: e.to_string() })?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scenario").to_string();
        Self::from_file(file, &base, &stem)
    }

    pub fn from_file(file: ScenarioFile, base_dir: &Path, default_name: &str) -> Result<Self, ScenarioError> {
        if file.track.is_empty() {
            return Err(ScenarioError::Invalid("missing `track`".into()));
        }
        let track_path = base_dir.join(&file.track);
        let track = TrackGeometry::from_file(&track_path).map_err(|source| ScenarioError::Track { path: track_path, source })?;
        Self::with_track(file, Arc::new(track), base_dir, default_name)
    }

    pub fn with_track(
        file: ScenarioFile,
        track: Arc<TrackGeometry>,
        base_dir: &Path,
        default_name: &str,
    ) -> Result<Self, ScenarioError> {
        let s = Self {
            name: file.name.clone().unwrap_or_else(|| default_name.to_string()),
            file,
            track,
            base_dir: base_dir.to_path_buf(),
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let f = &self.file;
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if !(f.duration > 0.0 && f.duration.is_finite()) {
            return bad(format!("duration must be positive, got {}", f.duration));
        }
        if !(f.physics_dt > 0.0 && f.physics_dt <= 0.05) {
            return bad(format!("physics_dt must lie in (0, 0.05], got {}", f.physics_dt));
        }
        let ratio = f.control_dt / f.physics_dt;
        if !(ratio >= 1.0 && (ratio - ratio.round()).abs() < 1e-9) {
            return bad("control_dt must be a whole multiple of physics_dt".into());
        }
        f.controller.validate().map_err(ScenarioError::Invalid)?;
        if let Some(t) = &f.traffic_controller {
            t.validate().map_err(|e| ScenarioError::Invalid(format!("traffic_controller: {e}")))?;
        }
        f.affordance.thresholds(self.track.lane_width()).map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        f.perception.noise.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        f.camera.validate().map_err(|e| ScenarioError::Invalid(e.to_string()))?;
        let lanes = self.track.lane_count(f.ego.station);
        if f.ego.lane >= lanes {
            return bad(format!("ego lane {} but the track has {lanes} lanes at station {}", f.ego.lane, f.ego.station));
        }
        let t = &f.traffic;
        if !(t.speed_min_kmh > 0.0 && t.speed_min_kmh <= t.speed_max_kmh) {
            return bad("traffic speeds must satisfy 0 < speed_min_kmh <= speed_max_kmh".into());
        }
        for c in &t.cars {
            if c.lane >= self.track.lane_count(c.station) {
                return bad(format!("scripted car lane {} does not exist at station {}", c.lane, c.station));
            }
        }
        if f.perception.kind == PerceiverKind::Learned && f.perception.model.is_none() {
            return bad("learned perception needs `perception.model`".into());
        }
        Ok(())
    }

    pub fn control_ticks(&self) -> u64 {
        (self.file.duration / self.file.control_dt).round() as u64
    }

    pub fn resolve(&self, relative: &str) -> PathBuf {
        self.base_dir.join(relative)
    }

    pub fn traffic_controller(&self) -> ControllerConfig {
        self.file.traffic_controller.clone().unwrap_or_else(|| self.file.controller.clone())
    }
}
