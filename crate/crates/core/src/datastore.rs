//! Append-only binary dataset of recorded frames.
//!
//! Layout: 8-byte magic, `u32` version, normalization spec, camera/raster
//! spec, then records. Each record is a `u32` payload length, the payload's
//! CRC32, and the payload. All integers and floats are little-endian.

use std::fs::{File, OpenOptions};
use std::io::{self, BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::{AffordanceError, AffordanceVector, Indicator, NormalizationSpec, INDICATOR_COUNT};
use crate::codec::*;
use crate::learning::{LearnError, TrainingSet};
use crate::render::{CameraModel, Raster};
use crate::sim::ControlCommand;
use crate::track::LaneFrame;

const MAGIC: &[u8; 8] = b"AFFDATA\0";
const VERSION: u32 = 1;
const MAX_RECORD: u32 = 64 << 20;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("i/o failure: {0}")]
    Io(#[from] io::Error),
    #[error("corrupt record at byte {offset}: {reason}")]
    CorruptRecord { offset: u64, reason: String },
    #[error("bad header: {0}")]
    BadHeader(String),
    #[error("spec mismatch: {0}")]
    SpecMismatch(String),
    #[error("dataset holds a single track; a track-disjoint split needs at least two")]
    SingleTrack,
    #[error("split ratio {0} outside (0, 1)")]
    BadRatio(f64),
    #[error(transparent)]
    Affordance(#[from] AffordanceError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Learn(#[from] LearnError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameSource {
    Human,
    Autonomous,
}

impl FrameSource {
    pub fn as_str(self) -> &'static str {
        match self {
            FrameSource::Human => "human",
            FrameSource::Autonomous => "autonomous",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub tick: u64,
    pub track_id: String,
    pub source: FrameSource,
    pub frame: LaneFrame,
    pub speed: f64,
    pub raster: Raster,
    pub affordance: AffordanceVector,
    pub targets: [f64; INDICATOR_COUNT],
    pub command: ControlCommand,
}

impl FrameRecord {
    /// Builds a record whose targets are the normalized affordance.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        tick: u64,
        track_id: &str,
        source: FrameSource,
        frame: LaneFrame,
        speed: f64,
        raster: Raster,
        affordance: AffordanceVector,
        command: ControlCommand,
        spec: &NormalizationSpec,
    ) -> Result<Self, DataError> {
        let targets = spec.normalize(&affordance)?;
        Ok(Self { tick, track_id: track_id.to_string(), source, frame, speed, raster, affordance, targets, command })
    }

    fn encode(&self) -> io::Result<Vec<u8>> {
        let mut b = Vec::with_capacity(self.raster.data.len() * 4 + 512);
        put_u64(&mut b, self.tick)?;
        put_str(&mut b, &self.track_id)?;
        put_u8(&mut b, matches!(self.source, FrameSource::Autonomous) as u8)?;
        put_f64(&mut b, self.frame.station)?;
        put_f64(&mut b, self.frame.lateral)?;
        put_f64(&mut b, self.frame.angle)?;
        put_u32(&mut b, self.frame.lane_index.map_or(u32::MAX, |l| l as u32))?;
        put_f64(&mut b, self.frame.curvature)?;
        put_f64(&mut b, self.speed)?;
        put_u32(&mut b, self.raster.width as u32)?;
        put_u32(&mut b, self.raster.height as u32)?;
        for p in &self.raster.data {
            put_f32(&mut b, *p)?;
        }
        for i in 0..INDICATOR_COUNT {
            put_u8(&mut b, self.affordance.active[i] as u8)?;
            put_f64(&mut b, self.affordance.values[i])?;
        }
        for t in &self.targets {
            put_f64(&mut b, *t)?;
        }
        put_f64(&mut b, self.command.steer)?;
        put_f64(&mut b, self.command.accel)?;
        Ok(b)
    }

    fn decode(mut r: &[u8]) -> io::Result<Self> {
        let r = &mut r;
        let tick = get_u64(r)?;
        let track_id = get_str(r, 4096)?;
        let source = match get_u8(r)? {
            0 => FrameSource::Human,
            1 => FrameSource::Autonomous,
            v => return Err(io::Error::new(io::ErrorKind::InvalidData, format!("source tag {v}"))),
        };
        let station = get_f64(r)?;
        let lateral = get_f64(r)?;
        let angle = get_f64(r)?;
        let lane = get_u32(r)?;
        let curvature = get_f64(r)?;
        let frame = LaneFrame { station, lateral, angle, lane_index: (lane != u32::MAX).then_some(lane as usize), curvature };
        let speed = get_f64(r)?;
        let width = get_u32(r)? as usize;
        let height = get_u32(r)? as usize;
        if width.saturating_mul(height) > MAX_RECORD as usize / 4 {
            return Err(io::Error::new(io::ErrorKind::InvalidData, "raster too large"));
        }
        let data = (0..width * height).map(|_| get_f32(r)).collect::<io::Result<Vec<_>>>()?;
        let mut affordance = AffordanceVector::default();
        for i in 0..INDICATOR_COUNT {
            affordance.active[i] = get_u8(r)? != 0;
            affordance.values[i] = get_f64(r)?;
        }
        let mut targets = [0.0; INDICATOR_COUNT];
        for t in &mut targets {
            *t = get_f64(r)?;
        }
        let command = ControlCommand { steer: get_f64(r)?, accel: get_f64(r)? };
        if !r.is_empty() {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("{} trailing bytes", r.len())));
        }
        Ok(Self { tick, track_id, source, frame, speed, raster: Raster { width, height, data }, affordance, targets, command })
    }
}

/// Dataset-level metadata stored in the header.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DatasetHeader {
    pub spec: NormalizationSpec,
    pub camera: CameraModel,
}

impl DatasetHeader {
    fn write(&self, w: &mut impl Write) -> io::Result<()> {
        w.write_all(MAGIC)?;
        put_u32(w, VERSION)?;
        put_spec(w, &self.spec)?;
        put_camera(w, &self.camera)
    }

    fn read(r: &mut impl Read) -> Result<Self, DataError> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| DataError::BadHeader("file too short".into()))?;
        if &magic != MAGIC {
            return Err(DataError::BadHeader("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != VERSION {
            return Err(DataError::BadHeader(format!("unsupported version {version}")));
        }
        Ok(Self { spec: get_spec(r)?, camera: get_camera(r)? })
    }
}

pub struct DatasetWriter {
    out: BufWriter<File>,
    header: DatasetHeader,
    written: usize,
}

impl DatasetWriter {
    pub fn create(path: &Path, header: DatasetHeader) -> Result<Self, DataError> {
        let mut out = BufWriter::new(File::create(path)?);
        header.write(&mut out)?;
        Ok(Self { out, header, written: 0 })
    }

    /// Opens an existing dataset for appending; its header must match.
    pub fn append_to(path: &Path, header: DatasetHeader) -> Result<Self, DataError> {
        let mut file = OpenOptions::new().read(true).append(true).open(path)?;
        let existing = DatasetHeader::read(&mut BufReader::new(&mut file))?;
        if existing != header {
            return Err(DataError::SpecMismatch("existing dataset header differs".into()));
        }
        file.seek(SeekFrom::End(0))?;
        Ok(Self { out: BufWriter::new(file), header, written: 0 })
    }

    pub fn header(&self) -> &DatasetHeader {
        &self.header
    }

    pub fn append(&mut self, record: &FrameRecord) -> Result<(), DataError> {
        let cam = &self.header.camera;
        if record.raster.width != cam.width || record.raster.height != cam.rows {
            return Err(DataError::SpecMismatch(format!(
                "raster {}x{} but dataset declares {}x{}",
                record.raster.width, record.raster.height, cam.width, cam.rows
            )));
        }
        let payload = record.encode()?;
        put_u32(&mut self.out, payload.len() as u32)?;
        put_u32(&mut self.out, crc32fast::hash(&payload))?;
        self.out.write_all(&payload)?;
        self.written += 1;
        Ok(())
    }

    pub fn written(&self) -> usize {
        self.written
    }

    pub fn finish(mut self) -> Result<(), DataError> {
        self.out.flush()?;
        self.out.get_ref().sync_all()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub header: DatasetHeader,
    pub records: Vec<FrameRecord>,
}

pub fn read_all(path: &Path) -> Result<Dataset, DataError> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_dataset(&bytes)
}

pub fn parse_dataset(bytes: &[u8]) -> Result<Dataset, DataError> {
    let mut cursor = bytes;
    let header = DatasetHeader::read(&mut cursor)?;
    let mut offset = (bytes.len() - cursor.len()) as u64;
    let mut records = Vec::new();
    while !cursor.is_empty() {
        let corrupt = |reason: String| DataError::CorruptRecord { offset, reason };
        if cursor.len() < 8 {
            return Err(corrupt(format!("truncated record prefix ({} bytes)", cursor.len())));
        }
        let len = u32::from_le_bytes(cursor[..4].try_into().expect("4 bytes"));
        let crc = u32::from_le_bytes(cursor[4..8].try_into().expect("4 bytes"));
        if len > MAX_RECORD {
            return Err(corrupt(format!("record length {len} exceeds limit")));
        }
        let end = 8 + len as usize;
        if cursor.len() < end {
            return Err(corrupt(format!("record needs {len} bytes, {} remain", cursor.len() - 8)));
        }
        let payload = &cursor[8..end];
        if crc32fast::hash(payload) != crc {
            return Err(corrupt("checksum mismatch".into()));
        }
        let rec = FrameRecord::decode(payload).map_err(|e| corrupt(e.to_string()))?;
        if rec.raster.width != header.camera.width || rec.raster.height != header.camera.rows {
            return Err(DataError::SpecMismatch(format!("record at byte {offset} has a {}x{} raster", rec.raster.width, rec.raster.height)));
        }
        records.push(rec);
        cursor = &cursor[end..];
        offset += end as u64;
    }
    Ok(Dataset { header, records })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitBy {
    Track,
    Random,
}

/// Returns `(train, validation)` record indices.
pub fn split(records: &[FrameRecord], by: SplitBy, ratio: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>), DataError> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(DataError::BadRatio(ratio));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    match by {
        SplitBy::Random => {
            let mut idx: Vec<usize> = (0..records.len()).collect();
            idx.shuffle(&mut rng);
            let n_train = (ratio * records.len() as f64).round() as usize;
            let val = idx.split_off(n_train);
            Ok((idx, val))
        }
        SplitBy::Track => {
            let mut tracks: Vec<&str> = records.iter().map(|r| r.track_id.as_str()).collect();
            tracks.sort_unstable();
            tracks.dedup();
            if tracks.len() < 2 {
                return Err(DataError::SingleTrack);
            }
            tracks.shuffle(&mut rng);
            let n_train = ((ratio * tracks.len() as f64).round() as usize).clamp(1, tracks.len() - 1);
            let train_tracks = &tracks[..n_train];
            let (train, val): (Vec<usize>, Vec<usize>) =
                (0..records.len()).partition(|&i| train_tracks.contains(&records[i].track_id.as_str()));
            Ok((train, val))
        }
    }
}

/// Rasters as inputs and stored normalized targets as outputs.
pub fn training_set<'a>(records: impl IntoIterator<Item = &'a FrameRecord>) -> Result<TrainingSet, DataError> {
    let recs: Vec<&FrameRecord> = records.into_iter().collect();
    let width = recs.first().map_or(0, |r| r.raster.data.len());
    let mut inputs = Array2::<f32>::zeros((recs.len(), width));
    let mut targets = Array2::<f64>::zeros((recs.len(), INDICATOR_COUNT));
    for (i, r) in recs.iter().enumerate() {
        if r.raster.data.len() != width {
            return Err(DataError::SpecMismatch("rasters differ in size".into()));
        }
        inputs.row_mut(i).iter_mut().zip(&r.raster.data).for_each(|(d, s)| *d = *s);
        targets.row_mut(i).iter_mut().zip(&r.targets).for_each(|(d, s)| *d = *s);
    }
    Ok(TrainingSet::new(inputs, targets)?)
}

/// Labels and commands without rasters, one row per record.
pub fn export_labels_csv(records: &[FrameRecord], w: impl Write) -> Result<(), DataError> {
    let mut csv = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["tick", "track", "source", "station", "lateral", "speed", "steer", "accel"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    header.extend(Indicator::ALL.iter().map(|i| i.name().to_string()));
    header.extend(Indicator::ALL.iter().map(|i| format!("{}_norm", i.name())));
    csv.write_record(&header)?;
    for r in records {
        let mut row = vec![
            r.tick.to_string(),
            r.track_id.clone(),
            r.source.as_str().to_string(),
            r.frame.station.to_string(),
            r.frame.lateral.to_string(),
            r.speed.to_string(),
            r.command.steer.to_string(),
            r.command.accel.to_string(),
        ];
        row.extend(Indicator::ALL.iter().map(|&i| r.affordance.get(i).map_or(String::new(), |v| v.to_string())));
        row.extend(r.targets.iter().map(|t| t.to_string()));
        csv.write_record(&row)?;
    }
    csv.flush()?;
    Ok(())
}
