use afford::affordance::NormalizationSpec;
use afford::learning::{train, MlpModel, TrainConfig, TrainingSet};
use afford::render::CameraModel;
use ndarray::Array2;
use proptest::prelude::*;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn outputs_stay_inside_unit_interval(
        seed in any::<u64>(),
        scale in 0.1..20.0f64,
        x in prop::collection::vec(-50.0..50.0f64, 16),
    ) {
        let model = MlpModel::new(&[16, 12, 13], seed, scale);
        for y in model.forward(&x).unwrap() {
            prop_assert!(y > 0.0 && y < 1.0 || y == 0.0 || y == 1.0);
            prop_assert!(y.is_finite());
        }
    }
}

#[test]
fn moderate_inputs_give_open_interval_outputs() {
    let model = MlpModel::new(&[16, 12, 13], 3, 1.0);
    for k in 0..100 {
        let x: Vec<f64> = (0..16).map(|i| ((i * 7 + k) % 11) as f64 / 11.0).collect();
        assert!(model.forward(&x).unwrap().iter().all(|&y| y > 0.0 && y < 1.0));
    }
}

fn toy_data() -> TrainingSet {
    let n = 50;
    let inputs = Array2::from_shape_fn((n, 10), |(i, j)| ((i * 3 + j * 5) % 7) as f32 / 7.0);
    let targets = Array2::from_shape_fn((n, 13), |(i, j)| 0.1 + 0.8 * ((i + j) % 5) as f64 / 4.0);
    TrainingSet::new(inputs, targets).unwrap()
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = toy_data();
    let cfg = TrainConfig { iterations: 300, batch_size: 8, seed: 5, ..TrainConfig::default() };
    let a = train(&data, &[10, 16, 13], &cfg, |_, _| {}).unwrap();
    let b = train(&data, &[10, 16, 13], &cfg, |_, _| {}).unwrap();
    assert_eq!(a.model, b.model);
    assert_eq!(a.losses, b.losses);
    let c = train(&data, &[10, 16, 13], &TrainConfig { seed: 6, ..cfg }, |_, _| {}).unwrap();
    assert_ne!(a.model, c.model);
    let early: f64 = a.losses[..20].iter().sum();
    let late: f64 = a.losses[a.losses.len() - 20..].iter().sum();
    assert!(late < early);
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let model = MlpModel::new(&[10, 16, 13], 9, 1.0);
    let spec = NormalizationSpec::new(4.0, 60.0);
    let cam = CameraModel { width: 5, rows: 2, cu: 2.0, cv: 0.5, ..CameraModel::default() };
    let mut buf = Vec::new();
    model.write_checkpoint(&mut buf, &spec, &cam).unwrap();
    let ck = MlpModel::read_checkpoint(&mut buf.as_slice()).unwrap();
    assert_eq!(ck.model, model);
    assert_eq!(ck.spec, spec);
    assert_eq!(ck.camera, cam);
    let mut again = Vec::new();
    ck.model.write_checkpoint(&mut again, &ck.spec, &ck.camera).unwrap();
    assert_eq!(again, buf);
}
