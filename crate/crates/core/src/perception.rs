//! Estimators producing affordance vectors: ground truth, ground truth plus
//! range-dependent noise, and the learned raster regressor.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::{
    compute_affordance, AffordanceConfig, AffordanceError, AffordanceVector, AreaPartition, Indicator,
    NormalizationSpec, INDICATOR_COUNT,
};
use crate::learning::{LearnError, MlpModel};
use crate::render::{car_pixel_boxes, lower_edge_ground_point, render_ego_view, CameraModel, Raster, RenderError, RenderStyle};
use crate::sim::{CarId, WorldState};

/// Gap separating the near and far reliability bands.
pub const NEAR_BAND: f64 = 30.0;

#[derive(Debug, Error)]
pub enum PerceptionError {
    #[error(transparent)]
    Affordance(#[from] AffordanceError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Learn(#[from] LearnError),
    #[error("invalid noise profile: {0}")]
    InvalidProfile(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimateSource {
    Oracle,
    Noisy,
    Learned,
}

impl EstimateSource {
    pub fn as_str(self) -> &'static str {
        match self {
            EstimateSource::Oracle => "oracle",
            EstimateSource::Noisy => "noisy",
            EstimateSource::Learned => "learned",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AffordanceEstimate {
    pub vector: AffordanceVector,
    pub source: EstimateSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseProfile {
    pub sigma_lane: f64,
    pub sigma_angle: f64,
    pub sigma_near: f64,
    pub sigma_far: f64,
    pub miss_rate_far: f64,
    pub false_positive_rate: f64,
    pub seed: u64,
}

impl Default for NoiseProfile {
    fn default() -> Self {
        Self {
            sigma_lane: 0.2,
            sigma_angle: 0.01,
            sigma_near: 2.0,
            sigma_far: 8.0,
            miss_rate_far: 0.1,
            false_positive_rate: 0.02,
            seed: 0,
        }
    }
}

impl NoiseProfile {
    pub fn silent(seed: u64) -> Self {
        Self {
            sigma_lane: 0.0,
            sigma_angle: 0.0,
            sigma_near: 0.0,
            sigma_far: 0.0,
            miss_rate_far: 0.0,
            false_positive_rate: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), PerceptionError> {
        let sigmas = [self.sigma_lane, self.sigma_angle, self.sigma_near, self.sigma_far];
        if sigmas.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(PerceptionError::InvalidProfile("noise sigmas must be finite and >= 0".into()));
        }
        if ![self.miss_rate_far, self.false_positive_rate].iter().all(|r| (0.0..=1.0).contains(r)) {
            return Err(PerceptionError::InvalidProfile("rates must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

pub fn perceive_oracle(world: &WorldState, ego: CarId, cfg: &AffordanceConfig) -> Result<AffordanceEstimate, PerceptionError> {
    Ok(AffordanceEstimate { vector: compute_affordance(world, ego, cfg)?, source: EstimateSource::Oracle })
}

/// Noise generator for one `(seed, tick)` pair.
fn tick_rng(seed: u64, tick: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tick);
    rng
}

/// Corrupts a ground-truth vector. Draws a fixed number of variates per
/// indicator so the stream does not depend on which indicators are active.
pub fn add_noise(
    truth: &AffordanceVector,
    profile: &NoiseProfile,
    spec: &NormalizationSpec,
    max_range: f64,
    tick: u64,
) -> AffordanceVector {
    let mut rng = tick_rng(profile.seed, tick);
    let mut out = *truth;
    for ind in Indicator::ALL {
        let z: f64 = StandardNormal.sample(&mut rng);
        let u_miss: f64 = rng.random();
        let u_fp: f64 = rng.random();
        let u_pos: f64 = rng.random();
        let range = spec.range(ind);
        let value = match truth.get(ind) {
            Some(v) if ind.is_distance() => {
                let far = v >= NEAR_BAND;
                if far && u_miss < profile.miss_rate_far {
                    None
                } else {
                    let sigma = if far { profile.sigma_far } else { profile.sigma_near };
                    Some((v + sigma * z).clamp(1e-3, max_range))
                }
            }
            None if ind.is_distance() => {
                (u_fp < profile.false_positive_rate).then(|| NEAR_BAND + (max_range - NEAR_BAND) * u_pos)
            }
            Some(v) if ind == Indicator::Angle => Some((v + profile.sigma_angle * z).clamp(range.lo, range.hi)),
            Some(v) => Some((v + profile.sigma_lane * z).clamp(range.lo, range.hi)),
            None => None,
        };
        out.set(ind, value);
    }
    out
}

pub fn perceive_noisy(
    world: &WorldState,
    ego: CarId,
    cfg: &AffordanceConfig,
    spec: &NormalizationSpec,
    profile: &NoiseProfile,
) -> Result<AffordanceEstimate, PerceptionError> {
    let truth = compute_affordance(world, ego, cfg)?;
    Ok(AffordanceEstimate {
        vector: add_noise(&truth, profile, spec, cfg.max_range, world.tick),
        source: EstimateSource::Noisy,
    })
}

/// Closest car per area from the painted car boxes: the lower-edge center is
/// projected to the ground and `depth_offset` is added to turn the bumper
/// depth into a center gap. Cars hidden behind nearer ones are still seen.
pub fn perceive_areas_projection(
    world: &WorldState,
    ego: CarId,
    cam: &CameraModel,
    style: &RenderStyle,
    partition: &AreaPartition,
    depth_offset: f64,
) -> Result<[Option<(f64, f64)>; 3], PerceptionError> {
    let boxes = car_pixel_boxes(world, ego, cam, style)?;
    let points = boxes.iter().filter_map(|b| lower_edge_ground_point(b, cam)).map(|(x, y)| (x, y + depth_offset));
    Ok(partition.closest(points))
}

pub fn raster_input(raster: &Raster) -> Vec<f64> {
    raster.data.iter().map(|&p| p as f64).collect()
}

pub fn perceive_learned(raster: &Raster, model: &MlpModel, spec: &NormalizationSpec) -> Result<AffordanceEstimate, PerceptionError> {
    let y = model.forward(&raster_input(raster))?;
    if y.len() != INDICATOR_COUNT {
        return Err(LearnError::ShapeMismatch { expected: INDICATOR_COUNT, got: y.len() }.into());
    }
    let mut out = [0.0; INDICATOR_COUNT];
    out.copy_from_slice(&y);
    Ok(AffordanceEstimate { vector: spec.denormalize(&out), source: EstimateSource::Learned })
}

/// Estimator selected for a run.
#[derive(Debug, Clone)]
pub enum Perceiver {
    Oracle,
    Noisy(NoiseProfile),
    Learned { model: Box<MlpModel>, camera: CameraModel, style: RenderStyle },
}

impl Perceiver {
    pub fn source(&self) -> EstimateSource {
        match self {
            Perceiver::Oracle => EstimateSource::Oracle,
            Perceiver::Noisy(_) => EstimateSource::Noisy,
            Perceiver::Learned { .. } => EstimateSource::Learned,
        }
    }

    pub fn perceive(
        &self,
        world: &WorldState,
        ego: CarId,
        cfg: &AffordanceConfig,
        spec: &NormalizationSpec,
    ) -> Result<AffordanceEstimate, PerceptionError> {
        match self {
            Perceiver::Oracle => perceive_oracle(world, ego, cfg),
            Perceiver::Noisy(profile) => perceive_noisy(world, ego, cfg, spec, profile),
            Perceiver::Learned { model, camera, style } => {
                let raster = render_ego_view(world, ego, camera, style)?;
                perceive_learned(&raster, model, spec)
            }
        }
    }
}
