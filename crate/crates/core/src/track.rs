//! Road geometry: a piecewise straight/arc centerline with a lane profile.
//!
//! Lateral offsets are positive to the LEFT of the direction of travel and
//! lanes are indexed from the left (lane 0 is the leftmost lane). For `n`
//! lanes of width `w` the road spans `[-n*w/2, +n*w/2]` around the centerline.

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;

use thiserror::Error;

/// Car width every lane must fit twice over.
pub const REFERENCE_CAR_WIDTH: f64 = 1.8;

const CLOSURE_TOL: f64 = 1e-6;
const TIE_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("invalid track: {0}")]
    Invalid(String),
    #[error("pose is off track (lateral {lateral:.3} m exceeds bound {bound:.3} m)")]
    OffTrack { lateral: f64, bound: f64 },
    #[error("lane {lane} does not exist at station {station:.3} ({lane_count} lanes)")]
    InvalidLane { lane: usize, station: f64, lane_count: usize },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("cannot read track file: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentKind {
    Straight,
    Arc,
}

/// One piece of centerline. Curvature is signed, positive bends left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub kind: SegmentKind,
    pub length: f64,
    pub curvature: f64,
}

impl Segment {
    pub fn straight(length: f64) -> Self {
        Self { kind: SegmentKind::Straight, length, curvature: 0.0 }
    }

    pub fn arc(length: f64, curvature: f64) -> Self {
        Self { kind: SegmentKind::Arc, length, curvature }
    }

    /// Arc of the given radius sweeping `degrees` (positive turns left).
    pub fn turn(radius: f64, degrees: f64) -> Self {
        let sweep = degrees.to_radians();
        Self::arc(radius * sweep.abs(), sweep.signum() / radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneSection {
    pub start_station: f64,
    pub lane_count: usize,
}

/// World position and heading (radians, counterclockwise from +x).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }
}

/// Lane-relative coordinates of a pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneFrame {
    pub station: f64,
    /// Positive to the left of travel.
    pub lateral: f64,
    /// Heading minus road tangent, wrapped to [-pi, pi], positive counterclockwise.
    pub angle: f64,
    pub lane_index: Option<usize>,
    pub curvature: f64,
}

#[derive(Debug, Clone, Copy)]
struct SegmentStart {
    station: f64,
    x: f64,
    y: f64,
    heading: f64,
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    distance: f64,
    station: f64,
    lateral: f64,
    tangent: f64,
    curvature: f64,
}

/// Immutable road description. Construct with [`TrackGeometry::new`].
#[derive(Debug, Clone)]
pub struct TrackGeometry {
    name: String,
    segments: Vec<Segment>,
    closed: bool,
    lane_profile: Vec<LaneSection>,
    lane_width: f64,
    starts: Vec<SegmentStart>,
    total_length: f64,
}

/// `lane_count + 1` marking offsets for a road centered on the centerline.
pub fn marking_positions(lane_count: usize, lane_width: f64) -> Vec<f64> {
    (0..=lane_count)
        .map(|j| (lane_count as f64 / 2.0 - j as f64) * lane_width)
        .collect()
}

pub fn wrap_angle(a: f64) -> f64 {
    let mut r = (a + PI).rem_euclid(2.0 * PI) - PI;
    if r <= -PI {
        r += 2.0 * PI;
    }
    r
}

fn advance(start: &SegmentStart, seg: &Segment, t: f64) -> (f64, f64, f64) {
    let (s0, c0) = start.heading.sin_cos();
    if seg.curvature == 0.0 {
        (start.x + t * c0, start.y + t * s0, start.heading)
    } else {
        let k = seg.curvature;
        let h = start.heading + k * t;
        let (s1, c1) = h.sin_cos();
        (start.x + (s1 - s0) / k, start.y - (c1 - c0) / k, h)
    }
}

impl TrackGeometry {
    pub fn new(
        name: impl Into<String>,
        segments: Vec<Segment>,
        closed: bool,
        lane_profile: Vec<LaneSection>,
        lane_width: f64,
    ) -> Result<Self, TrackError> {
        if segments.is_empty() {
            return Err(TrackError::Invalid("track has no segments".into()));
        }
        for (i, seg) in segments.iter().enumerate() {
            if !(seg.length > 0.0) || !seg.length.is_finite() {
                return Err(TrackError::Invalid(format!("segment {i} has non-positive length")));
            }
            match seg.kind {
                SegmentKind::Straight if seg.curvature != 0.0 => {
                    return Err(TrackError::Invalid(format!("straight segment {i} has curvature")));
                }
                SegmentKind::Arc if seg.curvature == 0.0 || !seg.curvature.is_finite() => {
                    return Err(TrackError::Invalid(format!("arc segment {i} has zero curvature")));
                }
                _ => {}
            }
        }
        if !(lane_width > 2.0 * REFERENCE_CAR_WIDTH) {
            return Err(TrackError::Invalid(format!(
                "lane width {lane_width} must exceed twice the car width ({})",
                2.0 * REFERENCE_CAR_WIDTH
            )));
        }

        let mut starts = Vec::with_capacity(segments.len());
        let mut cursor = SegmentStart { station: 0.0, x: 0.0, y: 0.0, heading: 0.0 };
        for seg in &segments {
            starts.push(cursor);
            let (x, y, heading) = advance(&cursor, seg, seg.length);
            cursor = SegmentStart { station: cursor.station + seg.length, x, y, heading };
        }
        let total_length = cursor.station;

        if closed {
            let gap = cursor.x.hypot(cursor.y);
            let dh = wrap_angle(cursor.heading);
            if gap > CLOSURE_TOL || dh.abs() > CLOSURE_TOL {
                return Err(TrackError::Invalid(format!(
                    "closed track does not close: end gap {gap:.3e} m, heading gap {dh:.3e} rad"
                )));
            }
        }

        if lane_profile.is_empty() || lane_profile[0].start_station != 0.0 {
            return Err(TrackError::Invalid("lane profile must start at station 0".into()));
        }
        for w in lane_profile.windows(2) {
            if w[1].start_station <= w[0].start_station {
                return Err(TrackError::Invalid("lane profile stations must increase".into()));
            }
        }
        for sec in &lane_profile {
            if !(1..=3).contains(&sec.lane_count) {
                return Err(TrackError::Invalid(format!(
                    "lane count {} outside 1..=3",
                    sec.lane_count
                )));
            }
            if sec.start_station >= total_length {
                return Err(TrackError::Invalid("lane section starts beyond track end".into()));
            }
            if !starts.iter().any(|s| (s.station - sec.start_station).abs() < 1e-9) {
                return Err(TrackError::Invalid(format!(
                    "lane count change at {} is not on a segment boundary",
                    sec.start_station
                )));
            }
        }

        Ok(Self {
            name: name.into(),
            segments,
            closed,
            lane_profile,
            lane_width,
            starts,
            total_length,
        })
    }

    /// Closed oval: two straights joined by two half circles.
    pub fn oval(straight: f64, radius: f64, lanes: usize, lane_width: f64) -> Result<Self, TrackError> {
        Self::new(
            format!("oval-{lanes}"),
            vec![
                Segment::straight(straight),
                Segment::turn(radius, 180.0),
                Segment::straight(straight),
                Segment::turn(radius, 180.0),
            ],
            true,
            vec![LaneSection { start_station: 0.0, lane_count: lanes }],
            lane_width,
        )
    }

    /// Open straight road.
    pub fn straight_road(length: f64, lanes: usize, lane_width: f64) -> Result<Self, TrackError> {
        Self::new(
            format!("straight-{lanes}"),
            vec![Segment::straight(length)],
            false,
            vec![LaneSection { start_station: 0.0, lane_count: lanes }],
            lane_width,
        )
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn lane_profile(&self) -> &[LaneSection] {
        &self.lane_profile
    }

    pub fn lane_width(&self) -> f64 {
        self.lane_width
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    /// Maps any station onto the track's station range.
    pub fn normalize_station(&self, station: f64) -> f64 {
        if self.closed {
            let s = station.rem_euclid(self.total_length);
            if s >= self.total_length {
                0.0
            } else {
                s
            }
        } else {
            station.clamp(0.0, self.total_length)
        }
    }

    pub fn lane_count(&self, station: f64) -> usize {
        let s = self.normalize_station(station);
        self.lane_profile
            .iter()
            .rev()
            .find(|sec| sec.start_station <= s)
            .map_or(self.lane_profile[0].lane_count, |sec| sec.lane_count)
    }

    pub fn road_half_width(&self, station: f64) -> f64 {
        self.lane_count(station) as f64 * self.lane_width / 2.0
    }

    fn segment_index(&self, station: f64) -> usize {
        match self.starts.binary_search_by(|s| s.station.total_cmp(&station)) {
            Ok(i) => i.min(self.segments.len() - 1),
            Err(i) => i.saturating_sub(1),
        }
    }

    /// Centerline position and tangent heading at `station`.
    pub fn centerline(&self, station: f64) -> Pose {
        let s = self.normalize_station(station);
        let i = self.segment_index(s);
        let (x, y, heading) = advance(&self.starts[i], &self.segments[i], s - self.starts[i].station);
        Pose { x, y, heading }
    }

    pub fn curvature_at(&self, station: f64) -> f64 {
        let s = self.normalize_station(station);
        self.segments[self.segment_index(s)].curvature
    }

    /// World pose of the point `(station, lateral)` heading along the road plus `angle`.
    pub fn frame_to_pose(&self, station: f64, lateral: f64, angle: f64) -> Pose {
        let c = self.centerline(station);
        let (s, co) = c.heading.sin_cos();
        Pose { x: c.x - lateral * s, y: c.y + lateral * co, heading: wrap_angle(c.heading + angle) }
    }

    /// Lane index for a lateral offset, `None` when off the road surface.
    pub fn lane_at(&self, station: f64, lateral: f64) -> Option<usize> {
        let n = self.lane_count(station);
        let half = n as f64 * self.lane_width / 2.0;
        if lateral.abs() > half {
            return None;
        }
        let idx = ((half - lateral) / self.lane_width).floor();
        Some((idx.max(0.0) as usize).min(n - 1))
    }

    pub fn lane_center_lateral(&self, station: f64, lane_index: usize) -> Result<f64, TrackError> {
        let n = self.lane_count(station);
        if lane_index >= n {
            return Err(TrackError::InvalidLane { lane: lane_index, station, lane_count: n });
        }
        Ok(((n as f64 - 1.0) / 2.0 - lane_index as f64) * self.lane_width)
    }

    /// Lateral positions of every marking, from the left road edge to the right.
    pub fn marking_laterals(&self, station: f64) -> Vec<f64> {
        marking_positions(self.lane_count(station), self.lane_width)
    }

    /// Distance travelled from `from` forward to `to`. On open tracks there is
    /// no forward path to a station behind `from`.
    pub fn forward_gap(&self, from: f64, to: f64) -> Option<f64> {
        if self.closed {
            Some((to - from).rem_euclid(self.total_length))
        } else if to >= from {
            Some(to - from)
        } else {
            None
        }
    }

    fn project_segment(&self, i: usize, x: f64, y: f64) -> Candidate {
        let seg = &self.segments[i];
        let start = &self.starts[i];
        let (sh, ch) = start.heading.sin_cos();
        let dx = x - start.x;
        let dy = y - start.y;
        if seg.curvature == 0.0 {
            let along = dx * ch + dy * sh;
            let t = along.clamp(0.0, seg.length);
            let fx = start.x + t * ch;
            let fy = start.y + t * sh;
            return Candidate {
                distance: (x - fx).hypot(y - fy),
                station: start.station + t,
                lateral: -dx * sh + dy * ch,
                tangent: start.heading,
                curvature: 0.0,
            };
        }
        let k = seg.curvature;
        let radius = 1.0 / k.abs();
        // Center lies on the left normal for left bends, the right normal otherwise.
        let cx = start.x - sh / k;
        let cy = start.y + ch / k;
        let rx = x - cx;
        let ry = y - cy;
        let phi = ry.atan2(rx);
        let phi0 = (start.y - cy).atan2(start.x - cx);
        let swept = if k > 0.0 { (phi - phi0).rem_euclid(2.0 * PI) } else { (phi0 - phi).rem_euclid(2.0 * PI) };
        let sweep_len = seg.length * k.abs();
        let t = if swept <= sweep_len {
            swept / k.abs()
        } else if swept - sweep_len < 2.0 * PI - swept {
            seg.length
        } else {
            0.0
        };
        let (fx, fy, tangent) = advance(start, seg, t);
        let on_arc = swept <= sweep_len;
        let lateral = if on_arc {
            k.signum() * (radius - rx.hypot(ry))
        } else {
            let (st, ct) = tangent.sin_cos();
            -(x - fx) * st + (y - fy) * ct
        };
        Candidate {
            distance: (x - fx).hypot(y - fy),
            station: start.station + t,
            lateral,
            tangent,
            curvature: k,
        }
    }

    /// Nearest-point projection with no off-track bound. Equidistant
    /// candidates resolve to the smaller station.
    pub fn project(&self, pose: &Pose) -> LaneFrame {
        let mut best: Option<Candidate> = None;
        for i in 0..self.segments.len() {
            let mut c = self.project_segment(i, pose.x, pose.y);
            c.station = self.normalize_station(c.station);
            best = match best {
                None => Some(c),
                Some(b) => {
                    if c.distance < b.distance - TIE_TOL
                        || ((c.distance - b.distance).abs() <= TIE_TOL && c.station < b.station)
                    {
                        Some(c)
                    } else {
                        Some(b)
                    }
                }
            };
        }
        let c = best.expect("track has segments");
        LaneFrame {
            station: c.station,
            lateral: c.lateral,
            angle: wrap_angle(pose.heading - c.tangent),
            lane_index: self.lane_at(c.station, c.lateral),
            curvature: c.curvature,
        }
    }

    /// Projects a pose that must lie within twice the road half-width of the centerline.
    pub fn pose_to_lane_frame(&self, pose: &Pose) -> Result<LaneFrame, TrackError> {
        let frame = self.project(pose);
        let bound = 2.0 * self.road_half_width(frame.station);
        if frame.lateral.abs() > bound {
            return Err(TrackError::OffTrack { lateral: frame.lateral, bound });
        }
        Ok(frame)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, TrackError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| TrackError::Io(format!("{}: {e}", path.display())))?;
        let default_name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("track");
        parse_track(&text, default_name)
    }
}

impl fmt::Display for TrackGeometry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "name = {}", self.name)?;
        writeln!(f, "closed = {}", self.closed)?;
        writeln!(f, "lane_width = {}", self.lane_width)?;
        for sec in &self.lane_profile {
            writeln!(f, "lanes {} {}", sec.start_station, sec.lane_count)?;
        }
        for seg in &self.segments {
            match seg.kind {
                SegmentKind::Straight => writeln!(f, "straight {}", seg.length)?,
                SegmentKind::Arc => writeln!(f, "arc {} {}", seg.length, seg.curvature)?,
            }
        }
        Ok(())
    }
}

/// Parses the line-oriented track format.
///
/// ```text
/// # comments start with '#'
/// name = oval-3
/// closed = true
/// lane_width = 4.0
/// lanes 0 3              # start_station lane_count
/// straight 500           # length
/// turn 150 180           # radius degrees (positive turns left)
/// arc 100 0.005          # length curvature
/// ```
pub fn parse_track(text: &str, default_name: &str) -> Result<TrackGeometry, TrackError> {
    let mut name = default_name.to_string();
    let mut closed = None;
    let mut lane_width = None;
    let mut lanes = Vec::new();
    let mut segments = Vec::new();
    let mut last_line = 0;

    let err = |line: usize, message: String| TrackError::Parse { line, message };
    let num = |line: usize, tok: Option<&str>, what: &str| -> Result<f64, TrackError> {
        let tok = tok.ok_or_else(|| err(line, format!("missing {what}")))?;
        tok.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| err(line, format!("invalid {what} '{tok}'")))
    };

    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        last_line = line;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some((key, value)) = content.split_once('=') {
            let value = value.trim();
            match key.trim() {
                "name" => name = value.to_string(),
                "closed" => {
                    closed = Some(value.parse::<bool>().map_err(|_| {
                        err(line, format!("closed must be true or false, got '{value}'"))
                    })?)
                }
                "lane_width" => {
                    let w = num(line, Some(value), "lane_width")?;
                    if !(w > 2.0 * REFERENCE_CAR_WIDTH) {
                        return Err(err(line, format!("lane_width {w} must exceed {}", 2.0 * REFERENCE_CAR_WIDTH)));
                    }
                    lane_width = Some(w);
                }
                other => return Err(err(line, format!("unknown key '{other}'"))),
            }
            continue;
        }
        let mut toks = content.split_whitespace();
        let directive = toks.next().unwrap_or_default();
        let seg = match directive {
            "straight" => {
                let len = num(line, toks.next(), "length")?;
                if len <= 0.0 {
                    return Err(err(line, "segment length must be positive".into()));
                }
                Segment::straight(len)
            }
            "arc" => {
                let len = num(line, toks.next(), "length")?;
                let k = num(line, toks.next(), "curvature")?;
                if len <= 0.0 {
                    return Err(err(line, "segment length must be positive".into()));
                }
                if k == 0.0 {
                    return Err(err(line, "arc curvature must be nonzero (use 'straight')".into()));
                }
                Segment::arc(len, k)
            }
            "turn" => {
                let r = num(line, toks.next(), "radius")?;
                let deg = num(line, toks.next(), "degrees")?;
                if r <= 0.0 || deg == 0.0 {
                    return Err(err(line, "turn needs positive radius and nonzero angle".into()));
                }
                Segment::turn(r, deg)
            }
            "lanes" => {
                let start = num(line, toks.next(), "start station")?;
                let count = num(line, toks.next(), "lane count")?;
                if count.fract() != 0.0 || !(1.0..=3.0).contains(&count) {
                    return Err(err(line, format!("lane count must be 1, 2 or 3, got {count}")));
                }
                lanes.push(LaneSection { start_station: start, lane_count: count as usize });
                if toks.next().is_some() {
                    return Err(err(line, "trailing tokens".into()));
                }
                continue;
            }
            other => return Err(err(line, format!("unknown directive '{other}'"))),
        };
        if toks.next().is_some() {
            return Err(err(line, "trailing tokens".into()));
        }
        segments.push(seg);
    }

    let closed = closed.ok_or_else(|| err(last_line, "missing 'closed'".into()))?;
    let lane_width = lane_width.ok_or_else(|| err(last_line, "missing 'lane_width'".into()))?;
    if lanes.is_empty() {
        return Err(err(last_line, "missing 'lanes' directive".into()));
    }
    TrackGeometry::new(name, segments, closed, lanes, lane_width)
        .map_err(|e| err(last_line, e.to_string()))
}
