//! Dense feedforward regressor from rasters to normalized indicators,
//! trained by mini-batch SGD on the half sum-of-squares loss.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{s, Array1, Array2, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::affordance::{NormalizationSpec, INDICATOR_COUNT};
use crate::codec::*;
use crate::render::CameraModel;

const CHECKPOINT_MAGIC: &[u8; 8] = b"AFFMLP\0\x01";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum LearnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("loss became non-finite at iteration {0}")]
    NonFiniteLoss(usize),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("invalid checkpoint: {0}")]
    BadCheckpoint(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Logistic,
}

impl Activation {
    fn id(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Logistic => 1,
        }
    }

    fn from_id(id: u8) -> Option<Self> {
        match id {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Logistic),
            _ => None,
        }
    }

    fn apply(self, z: &mut Array2<f64>) {
        match self {
            Activation::Relu => z.mapv_inplace(|v| v.max(0.0)),
            Activation::Logistic => z.mapv_inplace(logistic),
        }
    }
}

pub fn logistic(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `(outputs, inputs)`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

/// Rectifier hidden layers and a logistic output layer.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<DenseLayer>,
}

pub fn default_layer_sizes(input: usize) -> Vec<usize> {
    vec![input, 256, 64, INDICATOR_COUNT]
}

/// Per-layer parameter gradients, same shapes as the model.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub bias: Vec<Array1<f64>>,
}

impl MlpModel {
    pub fn zeros(sizes: &[usize]) -> Self {
        assert!(sizes.len() >= 2, "a model needs at least input and output sizes");
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer {
                weights: Array2::zeros((w[1], w[0])),
                bias: Array1::zeros(w[1]),
                activation: if i == last { Activation::Logistic } else { Activation::Relu },
            })
            .collect();
        Self { layers }
    }

    /// He-normal weights scaled by `init_scale`, zero biases.
    pub fn new(sizes: &[usize], seed: u64, init_scale: f64) -> Self {
        let mut model = Self::zeros(sizes);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in &mut model.layers {
            let fan_in = layer.weights.ncols() as f64;
            let normal = Normal::new(0.0, init_scale * (2.0 / fan_in).sqrt()).expect("finite std");
            layer.weights.mapv_inplace(|_| normal.sample(&mut rng));
        }
        model
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![self.layers[0].weights.ncols()];
        out.extend(self.layers.iter().map(|l| l.weights.nrows()));
        out
    }

    pub fn input_size(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_size(&self) -> usize {
        self.layers.last().expect("nonempty model").weights.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    fn check_input(&self, got: usize) -> Result<(), LearnError> {
        let expected = self.input_size();
        if got != expected {
            return Err(LearnError::ShapeMismatch { expected, got });
        }
        Ok(())
    }

    /// Activations of every layer, input first.
    fn activations(&self, x: ArrayView2<f64>) -> Vec<Array2<f64>> {
        let mut acts = vec![x.to_owned()];
        for layer in &self.layers {
            let mut z = acts.last().expect("input present").dot(&layer.weights.t());
            z += &layer.bias;
            layer.activation.apply(&mut z);
            acts.push(z);
        }
        acts
    }

    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Result<Array2<f64>, LearnError> {
        self.check_input(x.ncols())?;
        Ok(self.activations(x).pop().expect("output present"))
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, LearnError> {
        let view = ArrayView2::from_shape((1, x.len()), x).expect("row vector");
        Ok(self.forward_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// Mean batch loss and its gradient with respect to every parameter.
    pub fn gradients(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>) -> Result<(f64, Gradients), LearnError> {
        self.check_input(x.ncols())?;
        if targets.ncols() != self.output_size() || targets.nrows() != x.nrows() {
            return Err(LearnError::ShapeMismatch { expected: self.output_size(), got: targets.ncols() });
        }
        let n = x.nrows() as f64;
        let acts = self.activations(x);
        let out = acts.last().expect("output present");
        let diff = out - &targets;
        let loss = 0.5 * diff.iter().map(|d| d * d).sum::<f64>() / n;

        let mut delta = diff;
        Zip::from(&mut delta).and(out).for_each(|d, &y| *d *= y * (1.0 - y) / n);

        let mut gw = Vec::with_capacity(self.layers.len());
        let mut gb = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            gw.push(delta.t().dot(&acts[i]));
            gb.push(delta.sum_axis(Axis(0)));
            if i > 0 {
                let mut prev = delta.dot(&layer.weights);
                Zip::from(&mut prev).and(&acts[i]).for_each(|d, &a| {
                    if a <= 0.0 {
                        *d = 0.0;
                    }
                });
                delta = prev;
            }
        }
        gw.reverse();
        gb.reverse();
        Ok((loss, Gradients { weights: gw, bias: gb }))
    }

    pub fn save(&self, path: &Path, spec: &NormalizationSpec, camera: &CameraModel) -> Result<(), LearnError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_checkpoint(&mut w, spec, camera)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_checkpoint(&self, w: &mut impl Write, spec: &NormalizationSpec, camera: &CameraModel) -> io::Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        put_u32(w, CHECKPOINT_VERSION)?;
        let sizes = self.sizes();
        put_u32(w, sizes.len() as u32)?;
        for s in &sizes {
            put_u32(w, *s as u32)?;
        }
        for l in &self.layers {
            put_u8(w, l.activation.id())?;
        }
        put_spec(w, spec)?;
        put_camera(w, camera)?;
        for l in &self.layers {
            for v in l.weights.iter().chain(l.bias.iter()) {
                put_f64(w, *v)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint, LearnError> {
        Self::read_checkpoint(&mut BufReader::new(File::open(path)?))
    }

    pub fn read_checkpoint(r: &mut impl Read) -> Result<Checkpoint, LearnError> {
        let bad = |m: String| LearnError::BadCheckpoint(m);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic".into()));
        }
        let version = get_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {version}")));
        }
        let count = get_u32(r)? as usize;
        if !(2..=16).contains(&count) {
            return Err(bad(format!("{count} layer sizes")));
        }
        let sizes = (0..count).map(|_| get_u32(r).map(|v| v as usize)).collect::<io::Result<Vec<_>>>()?;
        if sizes.iter().any(|&s| s == 0 || s > 1 << 20) {
            return Err(bad(format!("layer sizes {sizes:?}")));
        }
        let mut model = MlpModel::zeros(&sizes);
        for l in &mut model.layers {
            let id = get_u8(r)?;
            l.activation = Activation::from_id(id).ok_or_else(|| bad(format!("activation id {id}")))?;
        }
        let spec = get_spec(r)?;
        let camera = get_camera(r)?;
        for l in &mut model.layers {
            for v in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *v = get_f64(r)?;
            }
        }
        if !model.is_finite() {
            return Err(bad("non-finite parameter".into()));
        }
        Ok(Checkpoint { model, spec, camera })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: MlpModel,
    pub spec: NormalizationSpec,
    pub camera: CameraModel,
}

/// Half sum of squared differences.
pub fn loss(pred: &[f64], target: &[f64]) -> f64 {
    0.5 * pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub seed: u64,
    pub init_scale: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            batch_size: 64,
            iterations: 20_000,
            seed: 0,
            init_scale: 1.0,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::InvalidConfig(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a finite value >= 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must be in [0, 1)");
        }
        if !(self.weight_decay >= 0.0) {
            return bad("weight_decay must be >= 0");
        }
        Ok(())
    }
}

/// SGD state carried between steps (momentum buffers).
#[derive(Debug, Clone)]
pub struct Optimizer {
    velocity: Option<Gradients>,
    pub iteration: usize,
}

impl Optimizer {
    pub fn new() -> Self {
        Self { velocity: None, iteration: 0 }
    }
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::new()
    }
}

/// One SGD update on the batch mean loss; returns the loss before the update.
pub fn train_step(
    model: &mut MlpModel,
    opt: &mut Optimizer,
    x: ArrayView2<f64>,
    targets: ArrayView2<f64>,
    cfg: &TrainConfig,
) -> Result<f64, LearnError> {
    if x.nrows() == 0 {
        return Err(LearnError::EmptyDataset);
    }
    let (loss, mut grads) = model.gradients(x, targets)?;
    if !loss.is_finite() {
        return Err(LearnError::NonFiniteLoss(opt.iteration));
    }
    if cfg.weight_decay > 0.0 {
        for (g, l) in grads.weights.iter_mut().zip(&model.layers) {
            g.scaled_add(cfg.weight_decay, &l.weights);
        }
    }
    if cfg.momentum > 0.0 {
        let v = opt.velocity.get_or_insert_with(|| Gradients {
            weights: grads.weights.iter().map(|g| Array2::zeros(g.raw_dim())).collect(),
            bias: grads.bias.iter().map(|g| Array1::zeros(g.raw_dim())).collect(),
        });
        for (vw, gw) in v.weights.iter_mut().zip(&grads.weights) {
            vw.mapv_inplace(|a| a * cfg.momentum);
            *vw += gw;
        }
        for (vb, gb) in v.bias.iter_mut().zip(&grads.bias) {
            vb.mapv_inplace(|a| a * cfg.momentum);
            *vb += gb;
        }
        grads = v.clone();
    }
    for ((l, gw), gb) in model.layers.iter_mut().zip(&grads.weights).zip(&grads.bias) {
        l.weights.scaled_add(-cfg.learning_rate, gw);
        l.bias.scaled_add(-cfg.learning_rate, gb);
    }
    opt.iteration += 1;
    if !model.is_finite() {
        return Err(LearnError::NonFiniteLoss(opt.iteration));
    }
    Ok(loss)
}

/// Inputs and normalized targets, one row per sample. Inputs stay `f32` to
/// halve memory; batches are widened to `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSet {
    pub inputs: Array2<f32>,
    pub targets: Array2<f64>,
}

impl TrainingSet {
    pub fn new(inputs: Array2<f32>, targets: Array2<f64>) -> Result<Self, LearnError> {
        if inputs.nrows() != targets.nrows() {
            return Err(LearnError::ShapeMismatch { expected: inputs.nrows(), got: targets.nrows() });
        }
        Ok(Self { inputs, targets })
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn batch(&self, idx: &[usize]) -> (Array2<f64>, Array2<f64>) {
        let mut x = Array2::zeros((idx.len(), self.inputs.ncols()));
        let mut t = Array2::zeros((idx.len(), self.targets.ncols()));
        for (row, &i) in idx.iter().enumerate() {
            x.row_mut(row).zip_mut_with(&self.inputs.row(i), |d, &s| *d = s as f64);
            t.row_mut(row).assign(&self.targets.row(i));
        }
        (x, t)
    }

    pub fn predict(&self, model: &MlpModel, chunk: usize) -> Result<Array2<f64>, LearnError> {
        let mut out = Array2::zeros((self.len(), model.output_size()));
        let all: Vec<usize> = (0..self.len()).collect();
        for (k, idx) in all.chunks(chunk.max(1)).enumerate() {
            let (x, _) = self.batch(idx);
            let y = model.forward_batch(x.view())?;
            let start = k * chunk.max(1);
            out.slice_mut(s![start..start + idx.len(), ..]).assign(&y);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub model: MlpModel,
    pub losses: Vec<f64>,
}

/// Seeded-shuffle mini-batch SGD for `cfg.iterations` steps. The callback
/// sees every iteration's loss.
pub fn train(
    data: &TrainingSet,
    sizes: &[usize],
    cfg: &TrainConfig,
    mut on_iteration: impl FnMut(usize, f64),
) -> Result<TrainOutput, LearnError> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(LearnError::EmptyDataset);
    }
    if sizes.first() != Some(&data.inputs.ncols()) || sizes.last() != Some(&data.targets.ncols()) {
        return Err(LearnError::ShapeMismatch { expected: sizes[0], got: data.inputs.ncols() });
    }
    let mut model = MlpModel::new(sizes, cfg.seed, cfg.init_scale);
    let mut opt = Optimizer::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x05ee_d0fb_a7c4);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let batch = cfg.batch_size.min(data.len());
    let mut losses = Vec::with_capacity(cfg.iterations);
    let mut cursor = order.len();
    for it in 0..cfg.iterations {
        if cursor + batch > order.len() {
            order.shuffle(&mut rng);
            cursor = 0;
        }
        let (x, t) = data.batch(&order[cursor..cursor + batch]);
        cursor += batch;
        let l = train_step(&mut model, &mut opt, x.view(), t.view(), cfg)?;
        on_iteration(it, l);
        losses.push(l);
    }
    Ok(TrainOutput { model, losses })
}
