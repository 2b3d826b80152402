use std::hint::black_box;
use std::path::Path;

use afford::affordance::{compute_affordance, AffordanceConfig, INDICATOR_COUNT};
use afford::learning::{default_layer_sizes, train_step, MlpModel, Optimizer, TrainConfig};
use afford::render::{render_ego_view, CameraModel, RenderStyle};
use afford::scenario::Scenario;
use afford::session::{perceiver_for, Session};
use afford::sim::EGO_ID;
use criterion::{criterion_group, criterion_main, Criterion};
use ndarray::Array2;

fn session() -> Session {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios/lanes3.toml");
    let sc = Scenario::load(&path).unwrap();
    let mut s = Session::from_scenario(&sc, 0, perceiver_for(&sc, None, None).unwrap()).unwrap();
    // get traffic into view
    s.run(300, |_, _| {}).unwrap();
    s
}

fn bench_world(c: &mut Criterion) {
    let s = session();
    let cam = CameraModel::default();
    let style = RenderStyle::default();
    let cfg = AffordanceConfig::default();
    c.bench_function("render_ego_view", |b| b.iter(|| render_ego_view(black_box(&s.world), EGO_ID, &cam, &style).unwrap()));
    c.bench_function("compute_affordance", |b| b.iter(|| compute_affordance(black_box(&s.world), EGO_ID, &cfg).unwrap()));
    c.bench_function("control_tick", |b| {
        b.iter_batched_ref(session, |s| s.tick().unwrap(), criterion::BatchSize::LargeInput)
    });
}

fn bench_learning(c: &mut Criterion) {
    let cam = CameraModel::default();
    let sizes = default_layer_sizes(cam.pixel_count());
    let model = MlpModel::new(&sizes, 0, 1.0);
    let x: Vec<f64> = (0..cam.pixel_count()).map(|i| (i % 7) as f64 / 7.0).collect();
    c.bench_function("forward", |b| b.iter(|| model.forward(black_box(&x)).unwrap()));

    let batch = 64;
    let xs = Array2::from_shape_fn((batch, cam.pixel_count()), |(i, j)| ((i + j) % 5) as f64 / 5.0);
    let ts = Array2::from_shape_fn((batch, INDICATOR_COUNT), |(i, j)| 0.1 + 0.8 * ((i * j) % 3) as f64 / 2.0);
    let cfg = TrainConfig::default();
    let mut m = model.clone();
    let mut opt = Optimizer::new();
    c.bench_function("train_step_batch64", |b| b.iter(|| train_step(&mut m, &mut opt, xs.view(), ts.view(), &cfg).unwrap()));
}

criterion_group!(benches, bench_world, bench_learning);
criterion_main!(benches);
