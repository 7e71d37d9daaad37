//! Learned inverse kinematics: a fully connected network mapping a pose
//! `(x, y, z, qw, qx, qy, qz)` to the nine cable lengths.
//!
//! The network is generic over [`Real`] so training can run in `f32` while
//! gradient checks run in `f64`. Weight matrices are stored row-major with
//! shape `(outputs, inputs)`.

use std::fmt::Debug;

use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::arm::{ArmGeometry, ConfigurationL, EndEffectorPose};
use crate::quat;
use crate::rng::{self, Purpose};
use crate::sampling::DatasetRow;

pub const INPUTS: usize = 7;
pub const OUTPUTS: usize = 9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IkError {
    #[error("shape mismatch: expected {expected} values, got {got}")]
    Shape { expected: usize, got: usize },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("non-finite input")]
    NonFiniteInput,
    #[error("dataset has {0} rows, at least 100 are needed")]
    TooFewRows(usize),
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("invalid model: {0}")]
    Model(String),
}

/// Scalar type the network runs in.
pub trait Real: Float + Default + Debug + Serialize + DeserializeOwned + Send + Sync + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
    /// `C ← α·A·B + β·C` with arbitrary strides.
    ///
    /// # Safety
    /// Pointers and strides must describe valid `m×k`, `k×n` and `m×n` views.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize, k: usize, n: usize, alpha: Self,
        a: *const Self, rsa: isize, csa: isize,
        b: *const Self, rsb: isize, csb: isize,
        beta: Self, c: *mut Self, rsc: isize, csc: isize,
    );
}

impl Real for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
    unsafe fn gemm(
        m: usize, k: usize, n: usize, alpha: f32,
        a: *const f32, rsa: isize, csa: isize,
        b: *const f32, rsb: isize, csb: isize,
        beta: f32, c: *mut f32, rsc: isize, csc: isize,
    ) {
        matrixmultiply::sgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

impl Real for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
    unsafe fn gemm(
        m: usize, k: usize, n: usize, alpha: f64,
        a: *const f64, rsa: isize, csa: isize,
        b: *const f64, rsb: isize, csb: isize,
        beta: f64, c: *mut f64, rsc: isize, csc: isize,
    ) {
        matrixmultiply::dgemm(m, k, n, alpha, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc)
    }
}

/// Min-max statistics for inputs and outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub input_min: [f64; INPUTS],
    pub input_max: [f64; INPUTS],
    pub output_min: [f64; OUTPUTS],
    pub output_max: [f64; OUTPUTS],
}

/// `(x - min) / (max - min)`; a constant feature maps to 0.5.
pub fn normalize(x: &[f64], min: &[f64], max: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(min.iter().zip(max))
        .map(|(x, (lo, hi))| if hi > lo { (x - lo) / (hi - lo) } else { 0.5 })
        .collect()
}

pub fn denormalize(x: &[f64], min: &[f64], max: &[f64]) -> Vec<f64> {
    x.iter().zip(min.iter().zip(max)).map(|(x, (lo, hi))| if hi > lo { lo + x * (hi - lo) } else { *lo }).collect()
}

fn min_max<const D: usize>(it: impl Iterator<Item = [f64; D]>) -> ([f64; D], [f64; D]) {
    let mut lo = [f64::INFINITY; D];
    let mut hi = [f64::NEG_INFINITY; D];
    for v in it {
        for k in 0..D {
            lo[k] = lo[k].min(v[k]);
            hi[k] = hi[k].max(v[k]);
        }
    }
    (lo, hi)
}

impl NormStats {
    pub fn from_rows(rows: &[&DatasetRow]) -> NormStats {
        let (input_min, input_max) = min_max(rows.iter().map(|r| pose_features(&r.pose)));
        let (output_min, output_max) = min_max(rows.iter().map(|r| r.config.cable_lengths));
        NormStats { input_min, input_max, output_min, output_max }
    }

    pub fn validate(&self) -> Result<(), IkError> {
        let pairs = self.input_min.iter().zip(&self.input_max).chain(self.output_min.iter().zip(&self.output_max));
        for (lo, hi) in pairs {
            if !(lo.is_finite() && hi.is_finite() && hi >= lo) {
                return Err(IkError::Model("normalization stats need finite min <= max".into()));
            }
        }
        Ok(())
    }

    pub fn normalize_input(&self, x: &[f64; INPUTS]) -> Vec<f64> {
        normalize(x, &self.input_min, &self.input_max)
    }

    pub fn normalize_output(&self, y: &[f64; OUTPUTS]) -> Vec<f64> {
        normalize(y, &self.output_min, &self.output_max)
    }

    pub fn denormalize_output(&self, y: &[f64]) -> Vec<f64> {
        denormalize(y, &self.output_min, &self.output_max)
    }
}

/// Network input for a pose, with the quaternion moved to `qw >= 0`.
pub fn pose_features(p: &EndEffectorPose) -> [f64; INPUTS] {
    let q = quat::canonical(p.orientation);
    [p.position[0], p.position[1], p.position[2], q[0], q[1], q[2], q[3]]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<T> {
    /// Output count.
    pub rows: usize,
    /// Input count.
    pub cols: usize,
    /// Row-major `rows × cols`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

/// ReLU on every hidden layer, identity on the output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Mlp<T> {
    pub fn zeros(sizes: &[usize]) -> Mlp<T> {
        let layers = sizes
            .windows(2)
            .map(|w| Layer { rows: w[1], cols: w[0], weights: vec![T::zero(); w[0] * w[1]], bias: vec![T::zero(); w[1]] })
            .collect();
        Mlp { layers }
    }

    /// He-uniform weights `U(±sqrt(6 / fan_in))`, zero biases.
    pub fn he_uniform(sizes: &[usize], seed: u64) -> Mlp<T> {
        let mut mlp = Mlp::zeros(sizes);
        for (i, l) in mlp.layers.iter_mut().enumerate() {
            let mut r = rng::stream(seed, Purpose::Init, i as u64);
            let a = (6.0 / l.cols as f64).sqrt();
            for w in &mut l.weights {
                *w = T::from_f64(r.random_range(-a..a));
            }
        }
        mlp
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.layers[0].cols];
        s.extend(self.layers.iter().map(|l| l.rows));
        s
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn validate(&self) -> Result<(), IkError> {
        if self.layers.is_empty() {
            return Err(IkError::Model("no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(IkError::Model(format!("layer {i} arrays do not match its shape")));
            }
            if i > 0 && l.cols != self.layers[i - 1].rows {
                return Err(IkError::Model(format!("layer {i} input does not match layer {} output", i - 1)));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(IkError::Model(format!("layer {i} has non-finite entries")));
            }
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> Mlp<U> {
        let c = |v: &[T]| v.iter().map(|x| U::from_f64(x.as_f64())).collect();
        Mlp { layers: self.layers.iter().map(|l| Layer { rows: l.rows, cols: l.cols, weights: c(&l.weights), bias: c(&l.bias) }).collect() }
    }

    /// Evaluates one input vector.
    pub fn forward(&self, x: &[T]) -> Result<Vec<T>, IkError> {
        let n_in = self.layers[0].cols;
        if x.len() != n_in {
            return Err(IkError::Shape { expected: n_in, got: x.len() });
        }
        Ok(self.forward_batch(x, 1))
    }

    /// Evaluates `batch` row-major inputs.
    pub fn forward_batch(&self, x: &[T], batch: usize) -> Vec<T> {
        let mut acts = vec![x.to_vec()];
        self.forward_into(&mut acts, batch);
        acts.pop().unwrap()
    }

    /// Fills `acts[1..]` from `acts[0]`.
    fn forward_into(&self, acts: &mut Vec<Vec<T>>, batch: usize) {
        acts.truncate(1);
        let last = self.layers.len() - 1;
        for (i, l) in self.layers.iter().enumerate() {
            let mut z: Vec<T> = Vec::with_capacity(batch * l.rows);
            for _ in 0..batch {
                z.extend_from_slice(&l.bias);
            }
            let a = &acts[i];
            debug_assert_eq!(a.len(), batch * l.cols);
            // Z = A · Wᵀ + b
            unsafe {
                T::gemm(
                    batch, l.cols, l.rows, T::one(),
                    a.as_ptr(), l.cols as isize, 1,
                    l.weights.as_ptr(), 1, l.cols as isize,
                    T::one(), z.as_mut_ptr(), l.rows as isize, 1,
                );
            }
            if i < last {
                for v in &mut z {
                    *v = v.max(T::zero());
                }
            }
            acts.push(z);
        }
    }

    /// Mean squared error over the batch and outputs, and its gradient.
    pub fn loss_and_grad(&self, x: &[T], y: &[T], batch: usize) -> (T, Gradients<T>) {
        let mut acts = vec![x.to_vec()];
        let mut grads = Gradients::zeros_like(self);
        let loss = self.backprop(&mut acts, y, batch, &mut grads);
        (loss, grads)
    }

    fn backprop(&self, acts: &mut Vec<Vec<T>>, y: &[T], batch: usize, grads: &mut Gradients<T>) -> T {
        self.forward_into(acts, batch);
        let out = acts.last().unwrap();
        let scale = T::from_f64(1.0 / out.len() as f64);
        let mut loss = T::zero();
        let mut delta: Vec<T> = out
            .iter()
            .zip(y)
            .map(|(p, t)| {
                let e = *p - *t;
                loss = loss + e * e;
                (e + e) * scale
            })
            .collect();
        for i in (0..self.layers.len()).rev() {
            let l = &self.layers[i];
            let a = &acts[i];
            let g = &mut grads.layers[i];
            // dW = δᵀ · A
            unsafe {
                T::gemm(
                    l.rows, batch, l.cols, T::one(),
                    delta.as_ptr(), 1, l.rows as isize,
                    a.as_ptr(), l.cols as isize, 1,
                    T::zero(), g.weights.as_mut_ptr(), l.cols as isize, 1,
                );
            }
            g.bias.iter_mut().for_each(|b| *b = T::zero());
            for row in delta.chunks_exact(l.rows) {
                for (b, d) in g.bias.iter_mut().zip(row) {
                    *b = *b + *d;
                }
            }
            if i > 0 {
                // δ_prev = (δ · W) ∘ relu'(A)
                let mut prev = vec![T::zero(); batch * l.cols];
                unsafe {
                    T::gemm(
                        batch, l.rows, l.cols, T::one(),
                        delta.as_ptr(), l.rows as isize, 1,
                        l.weights.as_ptr(), l.cols as isize, 1,
                        T::zero(), prev.as_mut_ptr(), l.cols as isize, 1,
                    );
                }
                for (p, a) in prev.iter_mut().zip(a) {
                    if *a <= T::zero() {
                        *p = T::zero();
                    }
                }
                delta = prev;
            }
        }
        loss * scale
    }
}

/// Gradient with the same layout as the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Gradients<T> {
    fn zeros_like(m: &Mlp<T>) -> Gradients<T> {
        Gradients { layers: Mlp::zeros(&m.sizes()).layers }
    }
}

/// Largest relative deviation between `grads` and central differences
/// (`h = 1e-5`) of the loss on `(x, y)`, over every parameter.
pub fn gradient_deviation(mlp: &Mlp<f64>, x: &[f64], y: &[f64], batch: usize, grads: &Gradients<f64>) -> f64 {
    const H: f64 = 1e-5;
    let mut probe = mlp.clone();
    let loss = |m: &Mlp<f64>| m.loss_and_grad(x, y, batch).0;
    let mut worst: f64 = 0.0;
    let mut compare = |analytic: f64, numeric: f64| {
        let dev = (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6);
        worst = worst.max(dev);
    };
    for i in 0..mlp.layers.len() {
        for j in 0..mlp.layers[i].weights.len() {
            let w = mlp.layers[i].weights[j];
            probe.layers[i].weights[j] = w + H;
            let up = loss(&probe);
            probe.layers[i].weights[j] = w - H;
            let down = loss(&probe);
            probe.layers[i].weights[j] = w;
            compare(grads.layers[i].weights[j], (up - down) / (2.0 * H));
        }
        for j in 0..mlp.layers[i].bias.len() {
            let b = mlp.layers[i].bias[j];
            probe.layers[i].bias[j] = b + H;
            let up = loss(&probe);
            probe.layers[i].bias[j] = b - H;
            let down = loss(&probe);
            probe.layers[i].bias[j] = b;
            compare(grads.layers[i].bias[j], (up - down) / (2.0 * H));
        }
    }
    worst
}

/// Backpropagation against finite differences on normalized samples.
pub fn gradient_check(mlp: &Mlp<f64>, x: &[f64], y: &[f64], batch: usize) -> f64 {
    let (_, g) = mlp.loss_and_grad(x, y, batch);
    gradient_deviation(mlp, x, y, batch, &g)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    /// Adam β₁.
    pub first_moment_decay: f64,
    /// Adam β₂.
    pub second_moment_decay: f64,
    pub epsilon: f64,
    /// Per-epoch multiplicative decay λ.
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub train_fraction: f64,
    /// Width of each of the two hidden layers.
    pub hidden: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.001,
            first_moment_decay: 0.9,
            second_moment_decay: 0.999,
            epsilon: 1e-8,
            lr_decay: 0.9,
            batch_size: 16,
            epochs: 50,
            train_fraction: 0.8,
            hidden: 1600,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), IkError> {
        let pos = [self.learning_rate, self.lr_decay, self.epsilon];
        if pos.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(IkError::Config("learning rate, decay and epsilon must be positive".into()));
        }
        for b in [self.first_moment_decay, self.second_moment_decay] {
            if !(0.0..1.0).contains(&b) {
                return Err(IkError::Config("moment decays must lie in [0, 1)".into()));
            }
        }
        if self.batch_size == 0 || self.epochs == 0 || self.hidden == 0 {
            return Err(IkError::Config("batch size, epochs and hidden width must be positive".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(IkError::Config("train fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    /// Learning rate used throughout epoch `epoch` (0-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi(epoch as i32)
    }

    pub fn sizes(&self) -> [usize; 4] {
        [INPUTS, self.hidden, self.hidden, OUTPUTS]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub learning_rate: f64,
    /// Mean normalized MSE over the epoch's batches.
    pub train_loss: f64,
    /// Mean absolute cable error in mm, averaged over the epoch's batches.
    pub train_error_mm: f64,
    pub val_loss: f64,
    /// Mean absolute cable error in mm on the validation split.
    pub val_error_mm: f64,
}

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// Everything inference needs, plus provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IkModel {
    pub format_version: u32,
    pub init: String,
    pub network: Mlp<f32>,
    pub stats: NormStats,
    pub config: TrainConfig,
    pub seed: u64,
    pub dataset_hash: String,
    pub history: Vec<EpochStats>,
}

impl IkModel {
    pub fn validate(&self) -> Result<(), IkError> {
        self.network.validate()?;
        self.stats.validate()?;
        let s = self.network.sizes();
        if s.first() != Some(&INPUTS) || s.last() != Some(&OUTPUTS) {
            return Err(IkError::Model(format!("network maps {:?}, expected {INPUTS} inputs and {OUTPUTS} outputs", s)));
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<IkModel, IkError> {
        let m: IkModel = serde_json::from_str(s).map_err(|e| IkError::Model(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

/// SHA-256 over the little-endian bytes of every row value.
pub fn dataset_hash(rows: &[DatasetRow]) -> String {
    let mut h = Sha256::new();
    for r in rows {
        for v in r.config.cable_lengths.iter().chain(&r.pose.position).chain(&r.pose.orientation) {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(h.finalize())
}

struct Adam<T> {
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    step: i32,
}

impl<T: Real> Adam<T> {
    fn new(mlp: &Mlp<T>) -> Adam<T> {
        let z = || mlp.layers.iter().flat_map(|l| [vec![T::zero(); l.weights.len()], vec![T::zero(); l.bias.len()]]).collect();
        Adam { m: z(), v: z(), step: 0 }
    }

    fn update(&mut self, mlp: &mut Mlp<T>, g: &Gradients<T>, lr: f64, cfg: &TrainConfig) {
        self.step += 1;
        let (b1, b2) = (cfg.first_moment_decay, cfg.second_moment_decay);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let (b1, b2) = (T::from_f64(b1), T::from_f64(b2));
        let (nb1, nb2) = (T::one() - b1, T::one() - b2);
        let (inv_c1, inv_c2) = (T::from_f64(1.0 / c1), T::from_f64(1.0 / c2));
        let (lr, eps) = (T::from_f64(lr), T::from_f64(cfg.epsilon));
        let params = mlp.layers.iter_mut().flat_map(|l| [&mut l.weights, &mut l.bias]);
        let grads = g.layers.iter().flat_map(|l| [&l.weights, &l.bias]);
        for (((p, g), m), v) in params.zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for (((p, &g), m), v) in p.iter_mut().zip(g.iter()).zip(m.iter_mut()).zip(v.iter_mut()) {
                *m = b1 * *m + nb1 * g;
                *v = b2 * *v + nb2 * g * g;
                *p = *p - lr * (*m * inv_c1) / ((*v * inv_c2).sqrt() + eps);
            }
        }
    }
}

fn to_t<T: Real>(v: &[f64]) -> impl Iterator<Item = T> + '_ {
    v.iter().map(|x| T::from_f64(*x))
}

/// Normalized features and targets for a set of rows, row-major.
fn encode<T: Real>(rows: &[&DatasetRow], stats: &NormStats) -> (Vec<T>, Vec<T>) {
    let mut x = Vec::with_capacity(rows.len() * INPUTS);
    let mut y = Vec::with_capacity(rows.len() * OUTPUTS);
    for r in rows {
        x.extend(to_t::<T>(&stats.normalize_input(&pose_features(&r.pose))));
        y.extend(to_t::<T>(&stats.normalize_output(&r.config.cable_lengths)));
    }
    (x, y)
}

/// Sum of absolute errors in mm, summed over rows and cables.
fn abs_error_mm<T: Real>(pred: &[T], target: &[T], stats: &NormStats) -> f64 {
    pred.chunks_exact(OUTPUTS)
        .zip(target.chunks_exact(OUTPUTS))
        .map(|(p, t)| (0..OUTPUTS).map(|k| (p[k] - t[k]).as_f64().abs() * (stats.output_max[k] - stats.output_min[k])).sum::<f64>())
        .sum()
}

/// Loss and mean absolute mm error of `mlp` on encoded rows.
fn evaluate<T: Real>(mlp: &Mlp<T>, x: &[T], y: &[T], stats: &NormStats) -> (f64, f64) {
    const CHUNK: usize = 256;
    let n = y.len() / OUTPUTS;
    let (mut sq, mut abs) = (0.0, 0.0);
    for (xc, yc) in x.chunks(CHUNK * INPUTS).zip(y.chunks(CHUNK * OUTPUTS)) {
        let p = mlp.forward_batch(xc, yc.len() / OUTPUTS);
        sq += p.iter().zip(yc).map(|(a, b)| (*a - *b).as_f64().powi(2)).sum::<f64>();
        abs += abs_error_mm(&p, yc, stats);
    }
    let denom = (n * OUTPUTS) as f64;
    (sq / denom, abs / denom)
}

/// The seeded 80/20 split: shuffled row indices, training part first.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng::stream(seed, Purpose::Split, 0));
    let n_train = ((n as f64) * train_fraction).round() as usize;
    let val = idx.split_off(n_train.clamp(1, n - 1));
    (idx, val)
}

/// Sets flush-to-zero and denormals-are-zero for the current thread and
/// restores the old control word on drop. Decaying Adam moments otherwise
/// drift into subnormal `f32` range, where arithmetic is many times slower.
struct FlushDenormals {
    #[cfg(target_arch = "x86_64")]
    saved: u32,
}

impl FlushDenormals {
    fn new() -> FlushDenormals {
        #[cfg(target_arch = "x86_64")]
        {
            let mut saved: u32 = 0;
            // SAFETY: only the FTZ (bit 15) and DAZ (bit 6) flags change.
            unsafe {
                std::arch::asm!("stmxcsr [{}]", in(reg) &mut saved, options(nostack));
                let set = saved | 0x8040;
                std::arch::asm!("ldmxcsr [{}]", in(reg) &set, options(nostack));
            }
            FlushDenormals { saved }
        }
        #[cfg(not(target_arch = "x86_64"))]
        FlushDenormals {}
    }
}

impl Drop for FlushDenormals {
    fn drop(&mut self) {
        #[cfg(target_arch = "x86_64")]
        // SAFETY: restores the word read in `new`.
        unsafe {
            std::arch::asm!("ldmxcsr [{}]", in(reg) &self.saved, options(nostack));
        }
    }
}

/// Trains with the paper recipe; see [`train_with`].
pub fn train(rows: &[DatasetRow], cfg: &TrainConfig) -> Result<IkModel, IkError> {
    train_with(rows, cfg, |_| {})
}

/// Mini-batch Adam on MSE in normalized space, calling `on_epoch` after each
/// epoch. Deterministic given `cfg.seed`.
pub fn train_with(rows: &[DatasetRow], cfg: &TrainConfig, mut on_epoch: impl FnMut(&EpochStats)) -> Result<IkModel, IkError> {
    cfg.validate()?;
    let _ftz = FlushDenormals::new();
    if rows.len() < 100 {
        return Err(IkError::TooFewRows(rows.len()));
    }
    let finite = |r: &DatasetRow| pose_features(&r.pose).iter().chain(&r.config.cable_lengths).all(|v| v.is_finite());
    if !rows.iter().all(finite) {
        return Err(IkError::NonFiniteInput);
    }
    let (train_idx, val_idx) = split_indices(rows.len(), cfg.train_fraction, cfg.seed);
    let train_rows: Vec<&DatasetRow> = train_idx.iter().map(|&i| &rows[i]).collect();
    let val_rows: Vec<&DatasetRow> = val_idx.iter().map(|&i| &rows[i]).collect();
    let stats = NormStats::from_rows(&train_rows);
    let (tx, ty) = encode::<f32>(&train_rows, &stats);
    let (vx, vy) = encode::<f32>(&val_rows, &stats);

    let mut mlp = Mlp::<f32>::he_uniform(&cfg.sizes(), cfg.seed);
    let mut adam = Adam::new(&mlp);
    let mut grads = Gradients::zeros_like(&mlp);
    let mut acts = Vec::new();
    let mut bx = Vec::with_capacity(cfg.batch_size * INPUTS);
    let mut by = Vec::with_capacity(cfg.batch_size * OUTPUTS);
    let mut order: Vec<usize> = (0..train_rows.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        order.shuffle(&mut rng::stream(cfg.seed, Purpose::Shuffle, epoch as u64));
        let (mut loss_sum, mut abs_sum) = (0.0, 0.0);
        let batches = order.chunks(cfg.batch_size);
        let n_batches = batches.len();
        for (b, chunk) in batches.enumerate() {
            bx.clear();
            by.clear();
            for &i in chunk {
                bx.extend_from_slice(&tx[i * INPUTS..(i + 1) * INPUTS]);
                by.extend_from_slice(&ty[i * OUTPUTS..(i + 1) * OUTPUTS]);
            }
            acts.clear();
            acts.push(bx.clone());
            let loss = mlp.backprop(&mut acts, &by, chunk.len(), &mut grads).as_f64();
            if !loss.is_finite() {
                return Err(IkError::NonFiniteLoss { epoch, batch: b });
            }
            loss_sum += loss;
            abs_sum += abs_error_mm(acts.last().unwrap(), &by, &stats) / (chunk.len() * OUTPUTS) as f64;
            adam.update(&mut mlp, &grads, lr, cfg);
        }
        let (val_loss, val_error_mm) = evaluate(&mlp, &vx, &vy, &stats);
        let s = EpochStats {
            epoch,
            learning_rate: lr,
            train_loss: loss_sum / n_batches as f64,
            train_error_mm: abs_sum / n_batches as f64,
            val_loss,
            val_error_mm,
        };
        on_epoch(&s);
        history.push(s);
    }
    Ok(IkModel {
        format_version: MODEL_FORMAT_VERSION,
        init: "he_uniform".into(),
        network: mlp,
        stats,
        config: cfg.clone(),
        seed: cfg.seed,
        dataset_hash: dataset_hash(rows),
        history,
    })
}

/// Mean absolute cable error in mm of `model` on `rows`.
pub fn evaluate_rows(model: &IkModel, rows: &[DatasetRow]) -> f64 {
    let refs: Vec<&DatasetRow> = rows.iter().collect();
    let (x, y) = encode::<f32>(&refs, &model.stats);
    evaluate(&model.network, &x, &y, &model.stats).1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub config: ConfigurationL,
    /// Some cable was pulled back into `[home - max_retraction, home]`.
    pub clamped: bool,
    /// Some input feature lay outside the training range.
    pub out_of_range: bool,
}

/// normalize → forward → denormalize → clamp to the cable limits.
pub fn predict_config(model: &IkModel, geom: &ArmGeometry, pose: &EndEffectorPose) -> Result<Prediction, IkError> {
    let f = pose_features(pose);
    if f.iter().any(|v| !v.is_finite()) {
        return Err(IkError::NonFiniteInput);
    }
    let s = &model.stats;
    let out_of_range = (0..INPUTS).any(|k| f[k] < s.input_min[k] || f[k] > s.input_max[k]);
    let x: Vec<f32> = to_t(&s.normalize_input(&f)).collect();
    let y = model.network.forward(&x)?;
    let y: Vec<f64> = y.iter().map(|v| v.as_f64()).collect();
    let raw = s.denormalize_output(&y);
    let home = geom.home().cable_lengths;
    let mut clamped = false;
    let lengths = std::array::from_fn(|k| {
        // taut cables on a bent segment at neutral length sit past home
        let (lo, hi) = (home[k] - geom.max_retraction, home[k].max(s.output_max[k]));
        let v = raw[k].clamp(lo, hi);
        clamped |= v != raw[k];
        v
    });
    Ok(Prediction { config: ConfigurationL::new(lengths), clamped, out_of_range })
}
