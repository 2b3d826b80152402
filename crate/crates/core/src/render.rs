//! Flat-shaded ego-view rasterizer and pinhole ground-plane geometry.
//!
//! Camera coordinates: `x` meters to the right of the ego car, `y` meters
//! forward, ground plane at `height` below the optical center, zero pitch.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sim::{CarId, WorldState};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RenderError {
    #[error("pixel row {v} is at or above the horizon row {cv}")]
    AboveHorizon { v: f64, cv: f64 },
    #[error("ground point {y} m is not in front of the camera")]
    BehindCamera { y: f64 },
    #[error("invalid camera: {0}")]
    InvalidCamera(String),
    #[error("unknown car {0}")]
    UnknownCar(CarId),
    #[error("raster data length {got} does not match {width}x{height}")]
    Shape { width: usize, height: usize, got: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CameraModel {
    pub height: f64,
    pub focal: f64,
    pub cu: f64,
    pub cv: f64,
    pub width: usize,
    pub rows: usize,
}

impl Default for CameraModel {
    fn default() -> Self {
        Self { height: 1.5, focal: 38.0, cu: 31.5, cv: 16.8, width: 64, rows: 48 }
    }
}

impl CameraModel {
    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: &str| Err(RenderError::InvalidCamera(m.to_string()));
        if !(self.focal > 0.0) {
            return bad("focal must be positive");
        }
        if !(self.height > 0.0) {
            return bad("height must be positive");
        }
        if self.width == 0 || self.rows == 0 {
            return bad("image size must be nonzero");
        }
        if !(self.cu >= 0.0 && self.cu < self.width as f64 && self.cv >= 0.0 && self.cv < self.rows as f64) {
            return bad("principal point outside the image");
        }
        Ok(())
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.rows
    }
}

/// Ground point to pixel: `(cu + f x / y, cv + f h / y)`.
pub fn project_ground_point(x: f64, y: f64, cam: &CameraModel) -> Result<(f64, f64), RenderError> {
    if !(y > 0.0) {
        return Err(RenderError::BehindCamera { y });
    }
    Ok((cam.cu + cam.focal * x / y, cam.cv + cam.focal * cam.height / y))
}

/// Pixel below the horizon to the ground point it images.
pub fn project_to_ground(u: f64, v: f64, cam: &CameraModel) -> Result<(f64, f64), RenderError> {
    if !(v > cam.cv) {
        return Err(RenderError::AboveHorizon { v, cv: cam.cv });
    }
    let y = cam.focal * cam.height / (v - cam.cv);
    Ok(((u - cam.cu) * y / cam.focal, y))
}

/// Image-plane box `(u_left, u_right, v_top, v_bottom)` of an upright
/// rectangle standing on the ground at depth `y`.
pub fn upright_box(x: f64, y: f64, width: f64, height: f64, cam: &CameraModel) -> Result<(f64, f64, f64, f64), RenderError> {
    let (u0, vb) = project_ground_point(x - width / 2.0, y, cam)?;
    let (u1, _) = project_ground_point(x + width / 2.0, y, cam)?;
    let vt = cam.cv + cam.focal * (cam.height - height) / y;
    Ok((u0, u1, vt, vb))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RenderStyle {
    pub road: f32,
    pub marking: f32,
    pub car: f32,
    pub background: f32,
    pub marking_width: f64,
    pub car_height: f64,
    /// Ground beyond this depth is left as background.
    pub max_depth: f64,
}

impl Default for RenderStyle {
    fn default() -> Self {
        Self { road: 0.3, marking: 1.0, car: 0.7, background: 0.0, marking_width: 0.15, car_height: 1.4, max_depth: 150.0 }
    }
}

/// Row-major grayscale image with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn filled(width: usize, height: usize, value: f32) -> Self {
        Self { width, height, data: vec![value; width * height] }
    }

    pub fn from_data(width: usize, height: usize, data: Vec<f32>) -> Result<Self, RenderError> {
        if data.len() != width * height {
            return Err(RenderError::Shape { width, height, got: data.len() });
        }
        Ok(Self { width, height, data })
    }

    pub fn get(&self, u: usize, v: usize) -> f32 {
        self.data[v * self.width + u]
    }

    pub fn set(&mut self, u: usize, v: usize, value: f32) {
        self.data[v * self.width + u] = value;
    }
}

/// Camera-frame `(x right, y forward)` of a world point seen from the ego pose.
fn to_camera(ego_x: f64, ego_y: f64, heading: f64, px: f64, py: f64) -> (f64, f64) {
    let (s, c) = heading.sin_cos();
    let dx = px - ego_x;
    let dy = py - ego_y;
    (dx * s - dy * c, dx * c + dy * s)
}

pub fn render_ego_view(
    world: &WorldState,
    ego: CarId,
    cam: &CameraModel,
    style: &RenderStyle,
) -> Result<Raster, RenderError> {
    cam.validate()?;
    let me = world.car(ego).ok_or(RenderError::UnknownCar(ego))?;
    let track = &world.track;
    let (ex, ey, eh) = (me.pose.x, me.pose.y, me.pose.heading);
    let (s, c) = eh.sin_cos();
    let mut img = Raster::filled(cam.width, cam.rows, style.background);

    for v in 0..cam.rows {
        let Ok((_, depth)) = project_to_ground(0.0, v as f64, cam) else { continue };
        if depth > style.max_depth {
            continue;
        }
        // a marking stays at least one pixel wide at every depth
        let half_stripe = (style.marking_width / 2.0).max(0.5 * depth / cam.focal);
        for u in 0..cam.width {
            let (gx, gy) = project_to_ground(u as f64, v as f64, cam).expect("row below horizon");
            let wx = ex + gy * c + gx * s;
            let wy = ey + gy * s - gx * c;
            let frame = track.project(&crate::track::Pose { x: wx, y: wy, heading: eh });
            let half = track.road_half_width(frame.station);
            if frame.lateral.abs() > half + half_stripe {
                continue;
            }
            let on_marking = track
                .marking_laterals(frame.station)
                .iter()
                .any(|m| (frame.lateral - m).abs() <= half_stripe);
            let value = if on_marking { style.marking } else { style.road };
            img.set(u, v, value);
        }
    }

    for b in car_pixel_boxes(world, ego, cam, style)? {
        for v in b.rows.0..b.rows.1 {
            for u in b.cols.0..b.cols.1 {
                img.set(u, v, style.car);
            }
        }
    }
    Ok(img)
}

/// Half-open pixel extent of a painted car.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PixelBox {
    pub car: CarId,
    pub cols: (usize, usize),
    pub rows: (usize, usize),
}

/// Boxes of the cars in view, farthest first, as the renderer paints them.
pub fn car_pixel_boxes(
    world: &WorldState,
    ego: CarId,
    cam: &CameraModel,
    style: &RenderStyle,
) -> Result<Vec<PixelBox>, RenderError> {
    let me = world.car(ego).ok_or(RenderError::UnknownCar(ego))?;
    let (ex, ey, eh) = (me.pose.x, me.pose.y, me.pose.heading);
    let mut boxes: Vec<(f64, CarId, (f64, f64, f64, f64))> = Vec::new();
    for car in world.cars.iter().filter(|o| o.id != ego) {
        let (x, y) = to_camera(ex, ey, eh, car.pose.x, car.pose.y);
        let rear = y - car.length / 2.0;
        if rear < 0.5 || rear > style.max_depth {
            continue;
        }
        boxes.push((rear, car.id, upright_box(x, rear, car.width, style.car_height, cam)?));
    }
    boxes.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    Ok(boxes
        .into_iter()
        .filter_map(|(_, car, (u0, u1, vt, vb))| {
            let cols = pixel_span(u0, u1, cam.width)?;
            let rows = pixel_span(vt, vb, cam.rows)?;
            Some(PixelBox { car, cols, rows })
        })
        .collect())
}

/// Pixels whose centers fall inside `[a, b]`, widened to at least one.
fn pixel_span(a: f64, b: f64, n: usize) -> Option<(usize, usize)> {
    let (mut lo, mut hi) = (a.ceil(), b.floor() + 1.0);
    if hi <= lo {
        lo = ((a + b) / 2.0).round();
        hi = lo + 1.0;
    }
    let lo = lo.max(0.0);
    let hi = hi.min(n as f64);
    (lo < hi).then_some((lo as usize, hi as usize))
}

/// Ground point under the center of a box's lower edge. Boxes cut off by
/// the image bottom or lying on the horizon give `None`.
pub fn lower_edge_ground_point(b: &PixelBox, cam: &CameraModel) -> Option<(f64, f64)> {
    if b.rows.1 >= cam.rows {
        return None;
    }
    let u = (b.cols.0 + b.cols.1 - 1) as f64 / 2.0;
    let v = b.rows.1 as f64 - 0.5;
    project_to_ground(u, v, cam).ok()
}
