use afford::learning::MlpModel;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Central differences on every parameter of a 3072-8-13 model.
pub fn max_relative_gradient_error(seed: u64) -> f64 {
    let sizes = [3072, 8, 13];
    let model = MlpModel::new(&sizes, seed, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed + 100);
    let x = Array2::from_shape_fn((5, 3072), |_| rng.random::<f64>());
    let t = Array2::from_shape_fn((5, 13), |_| rng.random_range(0.1..0.9));
    let (_, grads) = model.gradients(x.view(), t.view()).unwrap();

    let eps = 1e-6;
    let loss_at = |m: &MlpModel| m.gradients(x.view(), t.view()).unwrap().0;
    let mut worst: f64 = 0.0;
    let mut probe = model.clone();
    for l in 0..model.layers.len() {
        let (rows, cols) = model.layers[l].weights.dim();
        for r in 0..rows {
            for c in 0..cols {
                let w0 = model.layers[l].weights[[r, c]];
                probe.layers[l].weights[[r, c]] = w0 + eps;
                let up = loss_at(&probe);
                probe.layers[l].weights[[r, c]] = w0 - eps;
                let down = loss_at(&probe);
                probe.layers[l].weights[[r, c]] = w0;
                worst = worst.max(rel(grads.weights[l][[r, c]], (up - down) / (2.0 * eps)));
            }
            let b0 = model.layers[l].bias[r];
            probe.layers[l].bias[r] = b0 + eps;
            let up = loss_at(&probe);
            probe.layers[l].bias[r] = b0 - eps;
            let down = loss_at(&probe);
            probe.layers[l].bias[r] = b0;
            worst = worst.max(rel(grads.bias[l][r], (up - down) / (2.0 * eps)));
        }
    }
    worst
}

/// Relative error with a 1e-6 magnitude floor: below it the central
/// difference is dominated by loss roundoff (about 1e-17 / eps).
fn rel(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let worst = max_relative_gradient_error(5);
    println!("max relative error {worst:.3e}");
    assert!(worst < 1e-4, "max relative error {worst}");
}
