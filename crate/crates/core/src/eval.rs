//! Error metrics for estimators and closed-loop driving summaries.

use std::fmt::Write as _;
use std::io;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::{AffordanceVector, Indicator, NormalizationSpec, INDICATOR_COUNT};
use crate::controller::DriveMode;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no samples to evaluate")]
    EmptyInput,
    #[error("malformed trajectory log: {0}")]
    BadLog(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Gap window, in meters, over which distance errors are counted.
pub const DIST_WINDOW: (f64, f64) = (2.0, 50.0);

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaeOptions {
    /// Charge `|sentinel - truth|` when estimate and truth disagree on
    /// activity. When false those frames are skipped.
    pub penalize_disagreement: bool,
}

impl Default for MaeOptions {
    fn default() -> Self {
        Self { penalize_disagreement: true }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaeReport {
    pub estimator: String,
    /// `None` where no frame satisfied the inclusion rule.
    pub mae: [Option<f64>; INDICATOR_COUNT],
    pub counts: [usize; INDICATOR_COUNT],
}

impl MaeReport {
    pub fn get(&self, ind: Indicator) -> Option<f64> {
        self.mae[ind.index()]
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("MAE ({}), angle in radians, the rest in meters\n", self.estimator);
        let _ = writeln!(out, "{:<14} {:>12} {:>8}", "indicator", "mae", "frames");
        for ind in Indicator::ALL {
            let v = self.mae[ind.index()].map_or("-".to_string(), |v| format!("{v:.6}"));
            let _ = writeln!(out, "{:<14} {:>12} {:>8}", ind.name(), v, self.counts[ind.index()]);
        }
        out
    }

    pub fn write_csv(&self, w: impl io::Write) -> Result<(), EvalError> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["estimator", "indicator", "mae", "frames"])?;
        for ind in Indicator::ALL {
            let v = self.mae[ind.index()].map_or(String::new(), |v| v.to_string());
            csv.write_record([self.estimator.as_str(), ind.name(), &v, &self.counts[ind.index()].to_string()])?;
        }
        csv.flush()?;
        Ok(())
    }
}

/// Per-indicator mean absolute error. Distance indicators count only frames
/// whose true gap lies in [2, 50] m; the others count frames where the truth
/// is active.
pub fn mae_per_indicator(
    pairs: &[(AffordanceVector, AffordanceVector)],
    spec: &NormalizationSpec,
    opts: MaeOptions,
    estimator: &str,
) -> Result<MaeReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let mut errors: [Vec<f64>; INDICATOR_COUNT] = Default::default();
    for (est, truth) in pairs {
        for ind in Indicator::ALL {
            let Some(t) = truth.get(ind) else { continue };
            if ind.is_distance() && !(DIST_WINDOW.0..=DIST_WINDOW.1).contains(&t) {
                continue;
            }
            let err = match est.get(ind) {
                Some(e) => (e - t).abs(),
                None if opts.penalize_disagreement => (spec.range(ind).sentinel - t).abs(),
                None => continue,
            };
            errors[ind.index()].push(err);
        }
    }
    let counts = errors.each_ref().map(Vec::len);
    let mae = errors.map(|e| (!e.is_empty()).then(|| ordered_sum(e.clone()) / e.len() as f64));
    Ok(MaeReport { estimator: estimator.to_string(), mae, counts })
}

/// Closest car per area, `[left, central, right]`, each `(x, y)`.
pub type AreaCars = [Option<(f64, f64)>; 3];

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct AreaErrors {
    pub mae_y: f64,
    pub mae_x: f64,
    pub mae_d: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AreaReport {
    pub pooled: AreaErrors,
    /// Left, central, right.
    pub per_area: [AreaErrors; 3],
}

/// Closest-car errors per area. An absent car stands in as `(0, 50)`; with
/// `penalize_fp` false, frames whose truth is absent are skipped.
pub fn area_task_mae(pairs: &[(AreaCars, AreaCars)], penalize_fp: bool, max_y: f64) -> Result<AreaReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let absent = (0.0, max_y);
    let mut errs: [[Vec<f64>; 3]; 3] = Default::default();
    for (est, truth) in pairs {
        for a in 0..3 {
            if truth[a].is_none() && !penalize_fp {
                continue;
            }
            let (tx, ty) = truth[a].unwrap_or(absent);
            let (ex, ey) = est[a].unwrap_or(absent);
            errs[a][0].push((ey - ty).abs());
            errs[a][1].push((ex - tx).abs());
            errs[a][2].push((ex - tx).hypot(ey - ty));
        }
    }
    let finish = |e: [Vec<f64>; 3]| {
        let n = e[0].len();
        if n == 0 {
            return AreaErrors::default();
        }
        let [y, x, d] = e.map(|v| ordered_sum(v) / n as f64);
        AreaErrors { mae_y: y, mae_x: x, mae_d: d, count: n }
    };
    let pooled = finish([0, 1, 2].map(|k| errs.iter().flat_map(|a| a[k].iter().copied()).collect()));
    let per_area = errs.map(finish);
    Ok(AreaReport { pooled, per_area })
}

/// Sum that does not depend on input order.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    v.iter().sum()
}

impl AreaReport {
    pub fn to_table(&self, label: &str) -> String {
        let mut out = format!("closest car by area ({label})\n");
        let _ = writeln!(out, "{:<8} {:>10} {:>10} {:>10} {:>8}", "area", "mae_y", "mae_x", "mae_d", "frames");
        let rows = [("pooled", self.pooled), ("left", self.per_area[0]), ("central", self.per_area[1]), ("right", self.per_area[2])];
        for (name, e) in rows {
            let _ = writeln!(out, "{:<8} {:>10.4} {:>10.4} {:>10.4} {:>8}", name, e.mae_y, e.mae_x, e.mae_d, e.count);
        }
        out
    }
}

/// One control tick of a driving run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub tick: u64,
    pub time: f64,
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub station: f64,
    pub lateral: f64,
    pub lane: Option<usize>,
    pub speed: f64,
    pub steer: f64,
    pub accel: f64,
    pub pilot: String,
    pub mode: Option<DriveMode>,
    /// Signed offset from the nearest lane center, positive to the left.
    pub center_offset: Option<f64>,
    pub new_collisions: u32,
    pub off_road: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopReport {
    pub collisions: u32,
    pub off_road_fraction: f64,
    pub mean_abs_center_offset: f64,
    pub lane_changes_completed: u32,
    pub max_overshoot: f64,
    pub duration: f64,
}

impl ClosedLoopReport {
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let rows: [(&str, String); 6] = [
            ("collisions", self.collisions.to_string()),
            ("off_road_fraction", format!("{:.6}", self.off_road_fraction)),
            ("mean_abs_center_offset_m", format!("{:.6}", self.mean_abs_center_offset)),
            ("lane_changes_completed", self.lane_changes_completed.to_string()),
            ("max_overshoot_m", format!("{:.6}", self.max_overshoot)),
            ("duration_s", format!("{:.3}", self.duration)),
        ];
        for (k, v) in rows {
            let _ = writeln!(out, "{k:<26} {v:>12}");
        }
        out
    }

    pub fn write_csv(&self, w: impl io::Write) -> Result<(), EvalError> {
        let mut csv = csv::Writer::from_writer(w);
        csv.serialize(self)?;
        csv.flush()?;
        Ok(())
    }
}

/// Seconds after a lane change during which overshoot is measured.
pub const OVERSHOOT_WINDOW: f64 = 5.0;

/// Aggregates a run. A lane change is complete when the mode leaves a change
/// state with the ego in a different lane from the one it started in.
pub fn closed_loop_metrics(rows: &[LogRow], control_dt: f64) -> Result<ClosedLoopReport, EvalError> {
    if rows.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let collisions = rows.iter().map(|r| r.new_collisions).sum();
    let off_road = rows.iter().filter(|r| r.off_road).count();
    let offsets: Vec<f64> = rows.iter().filter_map(|r| r.center_offset).map(f64::abs).collect();
    let mean_abs = if offsets.is_empty() { 0.0 } else { offsets.iter().sum::<f64>() / offsets.len() as f64 };

    let mut completed = 0;
    let mut max_overshoot: f64 = 0.0;
    // (direction, start lane) of the change in progress
    let mut change: Option<(f64, Option<usize>)> = None;
    // (direction, start lane, time the ego left the start lane)
    let mut watch: Option<(f64, Option<usize>, Option<f64>)> = None;
    let mut prev_mode: Option<DriveMode> = None;
    for r in rows {
        let mode = r.mode;
        let dir = match mode {
            Some(DriveMode::ChangeLeft) => Some(1.0),
            Some(DriveMode::ChangeRight) => Some(-1.0),
            _ => None,
        };
        match (dir, change) {
            (Some(d), None) => {
                change = Some((d, r.lane));
                watch = Some((d, r.lane, None));
            }
            (Some(d), Some((cd, _))) if d != cd => {
                change = Some((d, r.lane));
                watch = Some((d, r.lane, None));
            }
            (None, Some((_, start))) => {
                if prev_mode.is_some_and(|m| m.is_change()) && r.lane.is_some() && r.lane != start {
                    completed += 1;
                }
                change = None;
            }
            _ => {}
        }
        if let Some((d, start, ref mut left_at)) = watch {
            if r.lane.is_some() && r.lane != start {
                let t0 = *left_at.get_or_insert(r.time);
                if r.time - t0 <= OVERSHOOT_WINDOW {
                    if let Some(off) = r.center_offset {
                        max_overshoot = max_overshoot.max(d * off);
                    }
                } else {
                    watch = None;
                }
            }
        }
        prev_mode = mode;
    }
    Ok(ClosedLoopReport {
        collisions,
        off_road_fraction: off_road as f64 / rows.len() as f64,
        mean_abs_center_offset: mean_abs,
        lane_changes_completed: completed,
        max_overshoot,
        duration: rows.len() as f64 * control_dt,
    })
}

pub fn write_log(rows: &[LogRow], w: impl io::Write) -> Result<(), EvalError> {
    let mut csv = csv::Writer::from_writer(w);
    for r in rows {
        csv.serialize(r)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_log(r: impl io::Read) -> Result<Vec<LogRow>, EvalError> {
    let mut csv = csv::Reader::from_reader(r);
    let rows = csv.deserialize().collect::<Result<Vec<LogRow>, _>>()?;
    Ok(rows)
}

/// One frame of an estimator run next to its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct PairRow {
    pub tick: u64,
    pub truth: AffordanceVector,
    pub estimate: AffordanceVector,
    pub area_truth: AreaCars,
    pub area_estimate: AreaCars,
}

const AREA_NAMES: [&str; 3] = ["left", "central", "right"];

fn pair_header() -> Vec<String> {
    let mut h = vec!["tick".to_string()];
    for ind in Indicator::ALL {
        h.push(format!("truth_{}", ind.name()));
        h.push(format!("est_{}", ind.name()));
    }
    for area in AREA_NAMES {
        for who in ["truth", "est"] {
            h.push(format!("{who}_{area}_x"));
            h.push(format!("{who}_{area}_y"));
        }
    }
    h
}

fn cell(v: Option<f64>) -> String {
    v.map_or(String::new(), |v| v.to_string())
}

/// CSV with one column per indicator and area coordinate; empty cells mark
/// inactive indicators and empty areas.
pub fn write_pairs(rows: &[PairRow], w: impl io::Write) -> Result<(), EvalError> {
    let mut csv = csv::Writer::from_writer(w);
    csv.write_record(pair_header())?;
    for r in rows {
        let mut rec = vec![r.tick.to_string()];
        for ind in Indicator::ALL {
            rec.push(cell(r.truth.get(ind)));
            rec.push(cell(r.estimate.get(ind)));
        }
        for a in 0..3 {
            for cars in [&r.area_truth, &r.area_estimate] {
                rec.push(cell(cars[a].map(|c| c.0)));
                rec.push(cell(cars[a].map(|c| c.1)));
            }
        }
        csv.write_record(&rec)?;
    }
    csv.flush()?;
    Ok(())
}

pub fn read_pairs(r: impl io::Read) -> Result<Vec<PairRow>, EvalError> {
    let mut csv = csv::Reader::from_reader(r);
    let expected = pair_header();
    if csv.headers()?.iter().ne(expected.iter().map(String::as_str)) {
        return Err(EvalError::BadLog("unexpected paired-log header".into()));
    }
    let num = |s: &str, line: usize| -> Result<Option<f64>, EvalError> {
        if s.is_empty() {
            return Ok(None);
        }
        s.parse().map(Some).map_err(|_| EvalError::BadLog(format!("line {line}: bad number {s:?}")))
    };
    let mut rows = Vec::new();
    for (i, rec) in csv.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let tick = rec[0].parse().map_err(|_| EvalError::BadLog(format!("line {line}: bad tick")))?;
        let mut truth = AffordanceVector::default();
        let mut estimate = AffordanceVector::default();
        for (k, ind) in Indicator::ALL.into_iter().enumerate() {
            truth.set(ind, num(&rec[1 + 2 * k], line)?);
            estimate.set(ind, num(&rec[2 + 2 * k], line)?);
        }
        let base = 1 + 2 * INDICATOR_COUNT;
        let mut cars = [[None; 3]; 2];
        for a in 0..3 {
            for (who, slot) in cars.iter_mut().enumerate() {
                let at = base + a * 4 + who * 2;
                slot[a] = match (num(&rec[at], line)?, num(&rec[at + 1], line)?) {
                    (Some(x), Some(y)) => Some((x, y)),
                    (None, None) => None,
                    _ => return Err(EvalError::BadLog(format!("line {line}: half-empty area cell"))),
                };
            }
        }
        rows.push(PairRow { tick, truth, estimate, area_truth: cars[0], area_estimate: cars[1] });
    }
    Ok(rows)
}
