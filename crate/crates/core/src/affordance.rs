//! The 13 affordance indicators.
//!
//! Two coordinate systems describe the ego car's lateral situation. The
//! in-lane system measures distances to the markings of the current lane and
//! its neighbours, the on-marking system measures distances relative to the
//! marking the car straddles. Both are active inside a band where the two
//! activation tests overlap, so a lane change passes through the in-lane,
//! overlap, on-marking, overlap, in-lane sequence without a gap.
//!
//! Marking distances follow the positive-left lateral convention of
//! [`crate::track`]: `toMarking_M` is the car's offset from the straddled
//! marking (positive when the car is left of it), so `toMarking_L = w - M`
//! and `toMarking_R = w + M`.
//!
//! The `angle` indicator is the road tangent heading minus the car heading,
//! i.e. positive when the car points to the right of the road. With that sign
//! the steering law `C * (angle - dist_center / w)` is a stabilising feedback.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{CarId, GapMeasure, WorldState};
use crate::track::{marking_positions, LaneFrame, TrackGeometry};

pub const INDICATOR_COUNT: usize = 13;

/// Lower/upper bounds of the normalized target range.
pub const NORM_LO: f64 = 0.1;
pub const NORM_HI: f64 = 0.9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AffordanceError {
    #[error("ego car is off the road (lateral {lateral:.3} m, half width {half_width:.3} m)")]
    OffRoad { lateral: f64, half_width: f64 },
    #[error("no car with id {0}")]
    UnknownCar(CarId),
    #[error("{indicator} value {value} outside [{lo}, {hi}]")]
    OutOfRange { indicator: Indicator, value: f64, lo: f64, hi: f64 },
    #[error("activation thresholds do not overlap: theta_in + theta_on must exceed half the lane width")]
    NoOverlap,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Indicator {
    Angle,
    ToMarkingLL,
    ToMarkingML,
    ToMarkingMR,
    ToMarkingRR,
    DistLL,
    DistMM,
    DistRR,
    ToMarkingL,
    ToMarkingM,
    ToMarkingR,
    DistL,
    DistR,
}

impl Indicator {
    pub const ALL: [Indicator; INDICATOR_COUNT] = [
        Indicator::Angle,
        Indicator::ToMarkingLL,
        Indicator::ToMarkingML,
        Indicator::ToMarkingMR,
        Indicator::ToMarkingRR,
        Indicator::DistLL,
        Indicator::DistMM,
        Indicator::DistRR,
        Indicator::ToMarkingL,
        Indicator::ToMarkingM,
        Indicator::ToMarkingR,
        Indicator::DistL,
        Indicator::DistR,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Indicator::Angle => "angle",
            Indicator::ToMarkingLL => "toMarking_LL",
            Indicator::ToMarkingML => "toMarking_ML",
            Indicator::ToMarkingMR => "toMarking_MR",
            Indicator::ToMarkingRR => "toMarking_RR",
            Indicator::DistLL => "dist_LL",
            Indicator::DistMM => "dist_MM",
            Indicator::DistRR => "dist_RR",
            Indicator::ToMarkingL => "toMarking_L",
            Indicator::ToMarkingM => "toMarking_M",
            Indicator::ToMarkingR => "toMarking_R",
            Indicator::DistL => "dist_L",
            Indicator::DistR => "dist_R",
        }
    }

    pub fn is_distance(self) -> bool {
        matches!(
            self,
            Indicator::DistLL | Indicator::DistMM | Indicator::DistRR | Indicator::DistL | Indicator::DistR
        )
    }

    pub fn is_in_lane(self) -> bool {
        (1..=7).contains(&self.index())
    }

    pub fn is_on_marking(self) -> bool {
        self.index() >= 8
    }
}

impl fmt::Display for Indicator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Indicator values plus per-indicator activity. The stored value of an
/// inactive indicator is 0 and carries no meaning.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffordanceVector {
    pub values: [f64; INDICATOR_COUNT],
    pub active: [bool; INDICATOR_COUNT],
}

impl Default for AffordanceVector {
    fn default() -> Self {
        let mut v = Self { values: [0.0; INDICATOR_COUNT], active: [false; INDICATOR_COUNT] };
        v.active[Indicator::Angle.index()] = true;
        v
    }
}

impl AffordanceVector {
    pub fn get(&self, ind: Indicator) -> Option<f64> {
        self.active[ind.index()].then_some(self.values[ind.index()])
    }

    pub fn set(&mut self, ind: Indicator, value: Option<f64>) {
        let i = ind.index();
        match value {
            Some(v) => {
                self.values[i] = v;
                self.active[i] = true;
            }
            None => {
                self.values[i] = 0.0;
                self.active[i] = false;
            }
        }
    }

    pub fn angle(&self) -> f64 {
        self.values[Indicator::Angle.index()]
    }

    pub fn in_lane_active(&self) -> bool {
        self.active[Indicator::ToMarkingML.index()] && self.active[Indicator::ToMarkingMR.index()]
    }

    pub fn on_marking_active(&self) -> bool {
        self.active[Indicator::ToMarkingM.index()]
    }
}

/// Which coordinate systems are active for a lateral position.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SystemActivation {
    pub in_lane_active: bool,
    pub on_marking_active: bool,
    pub current_lane: usize,
    /// Nearest marking (0 = left road edge), set when the on-marking system is active.
    pub straddled_marking_index: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AffordanceConfig {
    /// In-lane threshold as a fraction of lane width.
    pub in_lane_fraction: f64,
    /// On-marking threshold as a fraction of lane width.
    pub on_marking_fraction: f64,
    pub max_range: f64,
    pub gap_measure: GapMeasure,
}

impl Default for AffordanceConfig {
    fn default() -> Self {
        Self { in_lane_fraction: 0.425, on_marking_fraction: 0.15, max_range: 60.0, gap_measure: GapMeasure::CenterToCenter }
    }
}

/// Absolute activation thresholds in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub theta_in: f64,
    pub theta_on: f64,
}

impl Thresholds {
    pub fn new(theta_in: f64, theta_on: f64, lane_width: f64) -> Result<Self, AffordanceError> {
        if theta_in + theta_on <= lane_width / 2.0 || theta_in <= 0.0 || theta_on <= 0.0 {
            return Err(AffordanceError::NoOverlap);
        }
        Ok(Self { theta_in, theta_on })
    }
}

impl AffordanceConfig {
    pub fn thresholds(&self, lane_width: f64) -> Result<Thresholds, AffordanceError> {
        Thresholds::new(self.in_lane_fraction * lane_width, self.on_marking_fraction * lane_width, lane_width)
    }
}

pub fn system_activation(
    frame: &LaneFrame,
    track: &TrackGeometry,
    thresholds: Thresholds,
) -> Result<SystemActivation, AffordanceError> {
    let half_width = track.road_half_width(frame.station);
    let lateral = frame.lateral;
    let lane = track
        .lane_at(frame.station, lateral)
        .ok_or(AffordanceError::OffRoad { lateral, half_width })?;
    let center = track
        .lane_center_lateral(frame.station, lane)
        .expect("lane_at returns an existing lane");
    let markings = track.marking_laterals(frame.station);
    let (nearest, nearest_dist) = markings
        .iter()
        .enumerate()
        .map(|(j, m)| (j, (lateral - m).abs()))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best });
    let on_marking_active = nearest_dist <= thresholds.theta_on;
    Ok(SystemActivation {
        in_lane_active: (lateral - center).abs() <= thresholds.theta_in,
        on_marking_active,
        current_lane: lane,
        straddled_marking_index: on_marking_active.then_some(nearest),
    })
}

/// Another car as seen from the ego's lane frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OtherCar {
    pub station: f64,
    pub lateral: f64,
    pub length: f64,
}

/// Indicators for an ego at `frame` among `others`.
pub fn affordance_from_scene(
    track: &TrackGeometry,
    frame: &LaneFrame,
    ego_length: f64,
    others: impl IntoIterator<Item = OtherCar>,
    cfg: &AffordanceConfig,
) -> Result<AffordanceVector, AffordanceError> {
    let w = track.lane_width();
    let act = system_activation(frame, track, cfg.thresholds(w)?)?;
    let s = frame.station;
    let l = frame.lateral;
    let n = track.lane_count(s);
    let m = marking_positions(n, w);

    let mut nearest: [Option<f64>; 3] = [None; 3];
    for car in others {
        let Some(gap) = track.forward_gap(s, car.station) else { continue };
        if gap <= 0.0 {
            continue;
        }
        let Some(lane) = track.lane_at(car.station, car.lateral) else { continue };
        let d = cfg.gap_measure.apply(gap, ego_length, car.length);
        if d > cfg.max_range || lane >= 3 {
            continue;
        }
        nearest[lane] = Some(nearest[lane].map_or(d, |cur: f64| cur.min(d)));
    }
    let lane_dist = |lane: isize| -> Option<f64> {
        if lane < 0 || lane as usize >= n {
            None
        } else {
            nearest[lane as usize]
        }
    };

    let mut a = AffordanceVector::default();
    a.set(Indicator::Angle, Some(-frame.angle));

    if act.in_lane_active {
        let i = act.current_lane;
        a.set(Indicator::ToMarkingML, Some(m[i] - l));
        a.set(Indicator::ToMarkingMR, Some(l - m[i + 1]));
        if i > 0 {
            a.set(Indicator::ToMarkingLL, Some(m[i - 1] - l));
            a.set(Indicator::DistLL, lane_dist(i as isize - 1));
        }
        if i + 1 < n {
            a.set(Indicator::ToMarkingRR, Some(l - m[i + 2]));
            a.set(Indicator::DistRR, lane_dist(i as isize + 1));
        }
        a.set(Indicator::DistMM, lane_dist(i as isize));
    }
    if let Some(k) = act.straddled_marking_index {
        a.set(Indicator::ToMarkingM, Some(l - m[k]));
        if k >= 1 {
            a.set(Indicator::ToMarkingL, Some(m[k - 1] - l));
            a.set(Indicator::DistL, lane_dist(k as isize - 1));
        }
        if k < n {
            a.set(Indicator::ToMarkingR, Some(l - m[k + 1]));
            a.set(Indicator::DistR, lane_dist(k as isize));
        }
    }
    Ok(a)
}

/// Ground-truth indicators for car `ego` in `world`.
pub fn compute_affordance(
    world: &WorldState,
    ego: CarId,
    cfg: &AffordanceConfig,
) -> Result<AffordanceVector, AffordanceError> {
    let me = world.car(ego).ok_or(AffordanceError::UnknownCar(ego))?;
    let others = world
        .cars
        .iter()
        .filter(|c| c.id != ego)
        .map(|c| OtherCar { station: c.frame.station, lateral: c.frame.lateral, length: c.length });
    affordance_from_scene(&world.track, &me.frame, me.length, others, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndicatorRange {
    pub lo: f64,
    pub hi: f64,
    pub sentinel: f64,
}

impl IndicatorRange {
    fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi, sentinel: hi + 0.1 * (hi - lo) }
    }

    fn encode(&self, v: f64) -> f64 {
        NORM_LO + (NORM_HI - NORM_LO) * (v - self.lo) / (self.sentinel - self.lo)
    }

    fn decode(&self, y: f64) -> f64 {
        self.lo + (y - NORM_LO) / (NORM_HI - NORM_LO) * (self.sentinel - self.lo)
    }
}

/// Per-indicator affine maps onto `[0.1, 0.9]`. Active values span
/// `[lo, hi]`; inactive indicators encode as the sentinel, which maps to 0.9.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSpec {
    pub ranges: [IndicatorRange; INDICATOR_COUNT],
    /// Fraction of the output range below 0.9 that still decodes as inactive.
    pub sentinel_margin: f64,
}

impl NormalizationSpec {
    pub fn new(lane_width: f64, max_range: f64) -> Self {
        let w = lane_width;
        let ranges = Indicator::ALL.map(|ind| match ind {
            Indicator::Angle => IndicatorRange::new(-0.5, 0.5),
            Indicator::ToMarkingLL | Indicator::ToMarkingML | Indicator::ToMarkingMR | Indicator::ToMarkingRR => {
                IndicatorRange::new(-0.5, 2.0 * w + 1.5)
            }
            Indicator::ToMarkingM => IndicatorRange::new(-w / 2.0, w / 2.0),
            Indicator::ToMarkingL | Indicator::ToMarkingR => IndicatorRange::new(0.0, 2.0 * w),
            _ => IndicatorRange::new(0.0, max_range),
        });
        Self { ranges, sentinel_margin: 0.05 }
    }

    pub fn range(&self, ind: Indicator) -> &IndicatorRange {
        &self.ranges[ind.index()]
    }

    /// Outputs at or above this value decode as inactive.
    pub fn inactive_threshold(&self) -> f64 {
        NORM_HI - self.sentinel_margin * (NORM_HI - NORM_LO)
    }

    pub fn normalize(&self, a: &AffordanceVector) -> Result<[f64; INDICATOR_COUNT], AffordanceError> {
        let mut out = [NORM_HI; INDICATOR_COUNT];
        for ind in Indicator::ALL {
            let Some(v) = a.get(ind) else { continue };
            let r = self.range(ind);
            if !(r.lo..=r.hi).contains(&v) {
                return Err(AffordanceError::OutOfRange { indicator: ind, value: v, lo: r.lo, hi: r.hi });
            }
            out[ind.index()] = r.encode(v);
        }
        Ok(out)
    }

    pub fn denormalize(&self, y: &[f64; INDICATOR_COUNT]) -> AffordanceVector {
        let threshold = self.inactive_threshold();
        let mut a = AffordanceVector::default();
        for ind in Indicator::ALL {
            let yi = y[ind.index()].clamp(NORM_LO, NORM_HI);
            let inactive = ind != Indicator::Angle && yi >= threshold;
            a.set(ind, (!inactive).then(|| self.range(ind).decode(yi)));
        }
        a
    }
}

/// The three areas ahead of the ego car used for closest-car estimation.
/// `x` is positive to the RIGHT of the host car.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaPartition {
    pub central_half_width: f64,
    pub outer: f64,
    pub max_y: f64,
}

impl Default for AreaPartition {
    fn default() -> Self {
        Self { central_half_width: 1.6, outer: 12.0, max_y: 50.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Area {
    Left,
    Central,
    Right,
}

impl Area {
    pub const ALL: [Area; 3] = [Area::Left, Area::Central, Area::Right];
}

impl AreaPartition {
    pub fn classify(&self, x: f64) -> Option<Area> {
        if x.abs() <= self.central_half_width {
            Some(Area::Central)
        } else if x < 0.0 && x >= -self.outer {
            Some(Area::Left)
        } else if x > 0.0 && x <= self.outer {
            Some(Area::Right)
        } else {
            None
        }
    }

    /// Closest car per area as `[left, central, right]`, each `(x, y)`.
    pub fn closest(&self, cars: impl IntoIterator<Item = (f64, f64)>) -> [Option<(f64, f64)>; 3] {
        let mut best: [Option<(f64, f64)>; 3] = [None; 3];
        for (x, y) in cars {
            if !(y > 0.0 && y <= self.max_y) {
                continue;
            }
            let Some(area) = self.classify(x) else { continue };
            let slot = &mut best[area as usize];
            if slot.is_none_or(|(_, by)| y < by) {
                *slot = Some((x, y));
            }
        }
        best
    }
}

pub fn closest_car_by_area(
    world: &WorldState,
    ego: CarId,
    partition: &AreaPartition,
) -> Result<[Option<(f64, f64)>; 3], AffordanceError> {
    let me = world.car(ego).ok_or(AffordanceError::UnknownCar(ego))?;
    let cars = world.cars.iter().filter(|c| c.id != ego).filter_map(|c| {
        let y = world.track.forward_gap(me.frame.station, c.frame.station)?;
        Some((-(c.frame.lateral - me.frame.lateral), y))
    });
    Ok(partition.closest(cars))
}
