use afford::affordance::{AffordanceVector, Indicator, NormalizationSpec};
use afford::datastore::{parse_dataset, DatasetHeader, DatasetWriter, FrameRecord, FrameSource};
use afford::render::{CameraModel, Raster};
use afford::sim::ControlCommand;
use afford::track::LaneFrame;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn header() -> DatasetHeader {
    DatasetHeader {
        spec: NormalizationSpec::new(4.0, 60.0),
        camera: CameraModel { width: 8, rows: 6, cu: 3.5, cv: 2.0, ..CameraModel::default() },
    }
}

fn record(rng: &mut ChaCha8Rng, tick: u64, spec: &NormalizationSpec) -> FrameRecord {
    let mut a = AffordanceVector::default();
    a.set(Indicator::Angle, Some(rng.random_range(-0.3..0.3)));
    let ml = rng.random_range(0.5..3.5);
    a.set(Indicator::ToMarkingML, Some(ml));
    a.set(Indicator::ToMarkingMR, Some(4.0 - ml));
    if rng.random_bool(0.5) {
        a.set(Indicator::DistMM, Some(rng.random_range(1.0..60.0)));
    }
    let frame = LaneFrame {
        station: rng.random_range(0.0..2000.0),
        lateral: ml - 2.0,
        angle: -a.angle(),
        lane_index: Some(rng.random_range(0..3)),
        curvature: rng.random_range(-0.01..0.01),
    };
    let raster = Raster::from_data(8, 6, (0..48).map(|_| rng.random::<f32>()).collect()).unwrap();
    let command = ControlCommand::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let source = if tick % 2 == 0 { FrameSource::Human } else { FrameSource::Autonomous };
    FrameRecord::new(tick, "trackA", source, frame, rng.random_range(0.0..20.0), raster, a, command, spec).unwrap()
}

#[test]
fn round_trip_is_bit_exact_and_bit_flips_are_caught() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("data.afd");
    let h = header();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let records: Vec<FrameRecord> = (0..20).map(|t| record(&mut rng, t, &h.spec)).collect();
    let mut w = DatasetWriter::create(&path, h).unwrap();
    for r in &records {
        w.append(r).unwrap();
    }
    w.finish().unwrap();

    let bytes = std::fs::read(&path).unwrap();
    let ds = parse_dataset(&bytes).unwrap();
    assert_eq!(ds.records, records);
    assert_eq!(ds.header, h);

    // everything past the header belongs to records
    let empty = dir.path().join("empty.afd");
    DatasetWriter::create(&empty, h).unwrap().finish().unwrap();
    let header_len = std::fs::read(&empty).unwrap().len();

    let mut fuzz = ChaCha8Rng::seed_from_u64(2);
    for trial in 0..1000 {
        let mut corrupt = bytes.clone();
        let byte = fuzz.random_range(header_len..corrupt.len());
        let bit = fuzz.random_range(0..8);
        corrupt[byte] ^= 1 << bit;
        assert!(parse_dataset(&corrupt).is_err(), "trial {trial}: flip of bit {bit} in byte {byte} went unnoticed");
    }
}
