//! Fully connected regression network written out by hand: linear layers,
//! batch normalization, ReLU, inverted dropout, MSE loss, Adam and early
//! stopping.
//!
//! Each hidden layer computes `linear → batch-norm → ReLU → dropout`; the
//! output layer is linear. Gradients are exact, including the batch-statistics
//! terms of batch normalization.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix};

#[derive(Debug, Error)]
pub enum NnError {
    #[error("batch is empty")]
    EmptyBatch,
    #[error("train-mode forward needs at least 2 rows for batch statistics, got {0}")]
    BatchTooSmall(usize),
    #[error("input has {found} columns, network expects {expected}")]
    InputWidth { expected: usize, found: usize },
    #[error("target shape {found:?} does not match predictions {expected:?}")]
    TargetShape {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("non-finite activations in layer {layer}")]
    NonFiniteActivation { layer: usize },
    #[error("training diverged: non-finite loss at epoch {epoch}, batch {batch}")]
    Diverged { epoch: usize, batch: usize },
    #[error("{0} set is empty")]
    EmptySet(&'static str),
    #[error("training set needs at least 2 samples, got {0}")]
    TrainSetTooSmall(usize),
    #[error("invalid config: {0}")]
    Config(String),
    #[error("dropout masks do not match the network's hidden layers")]
    MaskShape,
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NnError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FcnnConfig {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub dropout_rate: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    pub adam: AdamConfig,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl Default for FcnnConfig {
    fn default() -> Self {
        Self {
            input_dim: crate::dataset::SENSOR_INPUTS,
            hidden: vec![50, 50, 50],
            output_dim: 1,
            dropout_rate: 0.2,
            learning_rate: 0.001,
            batch_size: 64,
            max_epochs: 100,
            patience: 10,
            seed: 0,
            adam: AdamConfig::default(),
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }
}

impl FcnnConfig {
    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.input_dim == 0 {
            v.push("nn.input_dim must be positive".into());
        }
        if self.output_dim == 0 {
            v.push("nn.output_dim must be positive".into());
        }
        if self.hidden.iter().any(|&h| h == 0) {
            v.push("nn.hidden sizes must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            v.push(format!("nn.dropout_rate {} must lie in [0, 1)", self.dropout_rate));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            v.push("nn.learning_rate must be positive".into());
        }
        if self.batch_size < 2 {
            v.push("nn.batch_size must be at least 2".into());
        }
        if self.max_epochs == 0 {
            v.push("nn.max_epochs must be positive".into());
        }
        if self.patience == 0 {
            v.push("nn.patience must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.adam.beta1) || !(0.0..1.0).contains(&self.adam.beta2) {
            v.push("nn.adam betas must lie in [0, 1)".into());
        }
        if !(self.adam.eps > 0.0) {
            v.push("nn.adam.eps must be positive".into());
        }
        if !(self.bn_momentum > 0.0 && self.bn_momentum <= 1.0) {
            v.push("nn.bn_momentum must lie in (0, 1]".into());
        }
        if !(self.bn_eps > 0.0) {
            v.push("nn.bn_eps must be positive".into());
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(NnError::Config(v.join("; ")))
        }
    }
}

// ---------------------------------------------------------------------------
// Layers
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    /// `out × in`
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = || rng.random_range(-bound..=bound);
        let weight = Matrix::from_vec(fan_out, fan_in, (0..fan_in * fan_out).map(|_| draw()).collect());
        let bias = (0..fan_out).map(|_| draw()).collect();
        Self { weight, bias }
    }

    fn forward(&self, x: &Matrix) -> Matrix {
        let mut z = x.matmul_transposed(&self.weight);
        for i in 0..z.rows() {
            linalg::axpy(1.0, &self.bias, z.row_mut(i));
        }
        z
    }

    /// Returns `(dW, db, dx)`.
    fn backward(&self, x: &Matrix, dz: &Matrix) -> (Matrix, Vec<f64>, Matrix) {
        let mut dw = Matrix::zeros(self.weight.rows(), self.weight.cols());
        let mut db = vec![0.0; self.bias.len()];
        for i in 0..x.rows() {
            let xi = x.row(i);
            for (o, &g) in dz.row(i).iter().enumerate() {
                if g != 0.0 {
                    linalg::axpy(g, xi, dw.row_mut(o));
                }
                db[o] += g;
            }
        }
        let dx = dz.matmul(&self.weight);
        (dw, db, dx)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

struct NormCache {
    xhat: Matrix,
    inv_std: Vec<f64>,
    mean: Vec<f64>,
    var: Vec<f64>,
}

impl BatchNorm {
    fn new(width: usize) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            running_mean: vec![0.0; width],
            running_var: vec![1.0; width],
        }
    }

    fn forward_train(&self, z: &Matrix, eps: f64) -> (Matrix, NormCache) {
        let (b, width) = z.shape();
        let mut mean = vec![0.0; width];
        for r in z.row_iter() {
            linalg::axpy(1.0, r, &mut mean);
        }
        mean.iter_mut().for_each(|m| *m /= b as f64);
        let mut var = vec![0.0; width];
        for r in z.row_iter() {
            for j in 0..width {
                let c = r[j] - mean[j];
                var[j] += c * c;
            }
        }
        var.iter_mut().for_each(|v| *v /= b as f64);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

        let mut xhat = z.clone();
        let mut out = Matrix::zeros(b, width);
        for i in 0..b {
            let xr = xhat.row_mut(i);
            for j in 0..width {
                xr[j] = (xr[j] - mean[j]) * inv_std[j];
            }
            let orow = out.row_mut(i);
            for j in 0..width {
                orow[j] = self.gamma[j] * xr[j] + self.beta[j];
            }
        }
        (
            out,
            NormCache {
                xhat,
                inv_std,
                mean,
                var,
            },
        )
    }

    fn forward_eval(&self, z: &Matrix, eps: f64) -> Matrix {
        let mut out = z.clone();
        let scale: Vec<f64> = self
            .running_var
            .iter()
            .zip(&self.gamma)
            .map(|(v, g)| g / (v + eps).sqrt())
            .collect();
        for i in 0..out.rows() {
            let r = out.row_mut(i);
            for j in 0..r.len() {
                r[j] = (r[j] - self.running_mean[j]) * scale[j] + self.beta[j];
            }
        }
        out
    }

    fn update_running(&mut self, cache: &NormCache, batch: usize, momentum: f64) {
        // running variance tracks the unbiased batch variance
        let unbias = batch as f64 / (batch as f64 - 1.0);
        for j in 0..self.gamma.len() {
            self.running_mean[j] = (1.0 - momentum) * self.running_mean[j] + momentum * cache.mean[j];
            self.running_var[j] =
                (1.0 - momentum) * self.running_var[j] + momentum * cache.var[j] * unbias;
        }
    }

    /// Returns `(dγ, dβ, dz)` given the gradient w.r.t. the normalized output.
    fn backward(&self, cache: &NormCache, dout: &Matrix) -> (Vec<f64>, Vec<f64>, Matrix) {
        let (b, width) = dout.shape();
        let bf = b as f64;
        let mut dgamma = vec![0.0; width];
        let mut dbeta = vec![0.0; width];
        for i in 0..b {
            let d = dout.row(i);
            let xh = cache.xhat.row(i);
            for j in 0..width {
                dgamma[j] += d[j] * xh[j];
                dbeta[j] += d[j];
            }
        }
        // dxhat = dout·γ; dz = inv_std/b · (b·dxhat − Σdxhat − xhat·Σ(dxhat·xhat))
        //       = inv_std·γ/b · (b·dout − dβ − xhat·dγ)
        let mut dz = Matrix::zeros(b, width);
        for i in 0..b {
            let d = dout.row(i);
            let xh = cache.xhat.row(i);
            let r = dz.row_mut(i);
            for j in 0..width {
                r[j] = cache.inv_std[j] * self.gamma[j] / bf
                    * (bf * d[j] - dbeta[j] - xh[j] * dgamma[j]);
            }
        }
        (dgamma, dbeta, dz)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Where train-mode dropout masks come from.
pub enum Dropout<'a> {
    /// No dropout.
    Off,
    /// Caller-supplied masks, one `batch × width` matrix per hidden layer,
    /// holding the already-scaled keep factors (0 or 1/(1 − rate)).
    Fixed(&'a [Matrix]),
    /// Fresh Bernoulli masks at the network's dropout rate.
    Sample(&'a mut ChaCha8Rng),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HiddenLayer {
    pub dense: Dense,
    pub norm: BatchNorm,
}

/// The network. Hidden widths and input width are fixed at construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fcnn {
    pub hidden: Vec<HiddenLayer>,
    pub output: Dense,
    pub dropout_rate: f64,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

struct LayerCache {
    input: Matrix,
    norm: NormCache,
    /// batch-norm output, before ReLU
    pre_relu: Matrix,
    mask: Option<Matrix>,
}

struct ForwardCache {
    layers: Vec<LayerCache>,
    last_hidden: Matrix,
}

/// Gradient of the batch loss for every parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub hidden: Vec<HiddenGradients>,
    pub output_weight: Matrix,
    pub output_bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HiddenGradients {
    pub weight: Matrix,
    pub bias: Vec<f64>,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
}

impl Gradients {
    /// Parameter gradients in the same order as [`Fcnn::parameters_mut`].
    pub fn slices(&self) -> Vec<&[f64]> {
        let mut out: Vec<&[f64]> = Vec::with_capacity(4 * self.hidden.len() + 2);
        for h in &self.hidden {
            out.push(h.weight.as_slice());
            out.push(&h.bias);
            out.push(&h.gamma);
            out.push(&h.beta);
        }
        out.push(self.output_weight.as_slice());
        out.push(&self.output_bias);
        out
    }

    pub fn max_abs(&self) -> f64 {
        self.slices()
            .iter()
            .flat_map(|s| s.iter())
            .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

impl Fcnn {
    /// Randomly initialized network: weights and biases uniform in
    /// ±1/√fan_in, batch-norm at γ = 1, β = 0, running stats (0, 1).
    pub fn new(config: &FcnnConfig, rng: &mut impl Rng) -> Result<Self> {
        config.validate()?;
        let mut hidden = Vec::with_capacity(config.hidden.len());
        let mut fan_in = config.input_dim;
        for &width in &config.hidden {
            hidden.push(HiddenLayer {
                dense: Dense::init(fan_in, width, rng),
                norm: BatchNorm::new(width),
            });
            fan_in = width;
        }
        Ok(Self {
            hidden,
            output: Dense::init(fan_in, config.output_dim, rng),
            dropout_rate: config.dropout_rate,
            bn_momentum: config.bn_momentum,
            bn_eps: config.bn_eps,
        })
    }

    pub fn seeded(config: &FcnnConfig) -> Result<Self> {
        Self::new(config, &mut ChaCha8Rng::seed_from_u64(config.seed))
    }

    pub fn input_dim(&self) -> usize {
        self.hidden
            .first()
            .map_or(self.output.weight.cols(), |h| h.dense.weight.cols())
    }

    pub fn output_dim(&self) -> usize {
        self.output.weight.rows()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|h| h.dense.weight.rows()).collect()
    }

    /// Mutable views of every trainable parameter, in a fixed order.
    pub fn parameters_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = Vec::with_capacity(4 * self.hidden.len() + 2);
        for h in &mut self.hidden {
            out.push(h.dense.weight.as_mut_slice());
            out.push(&mut h.dense.bias);
            out.push(&mut h.norm.gamma);
            out.push(&mut h.norm.beta);
        }
        out.push(self.output.weight.as_mut_slice());
        out.push(&mut self.output.bias);
        out
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = self.output.weight.as_slice().len() + self.output.bias.len();
        for h in &self.hidden {
            n += h.dense.weight.as_slice().len() + h.dense.bias.len() + 2 * h.norm.gamma.len();
        }
        n
    }

    fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.rows() == 0 {
            return Err(NnError::EmptyBatch);
        }
        if x.cols() != self.input_dim() {
            return Err(NnError::InputWidth {
                expected: self.input_dim(),
                found: x.cols(),
            });
        }
        Ok(())
    }

    /// Eval-mode forward pass: running statistics, no dropout. Pure.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut h = x.clone();
        for (l, layer) in self.hidden.iter().enumerate() {
            let z = layer.dense.forward(&h);
            let mut a = layer.norm.forward_eval(&z, self.bn_eps);
            a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            if !a.is_finite() {
                return Err(NnError::NonFiniteActivation { layer: l });
            }
            h = a;
        }
        let out = self.output.forward(&h);
        if !out.is_finite() {
            return Err(NnError::NonFiniteActivation {
                layer: self.hidden.len(),
            });
        }
        Ok(out)
    }

    /// Forward pass in either mode. Train mode uses batch statistics, samples
    /// dropout masks from `rng` and updates the running statistics.
    pub fn forward(&mut self, x: &Matrix, mode: Mode, rng: &mut ChaCha8Rng) -> Result<Matrix> {
        match mode {
            Mode::Eval => self.predict(x),
            Mode::Train => {
                let (out, cache) = self.forward_cached(x, Dropout::Sample(rng))?;
                self.update_running(&cache, x.rows());
                Ok(out)
            }
        }
    }

    fn update_running(&mut self, cache: &ForwardCache, batch: usize) {
        let momentum = self.bn_momentum;
        for (layer, lc) in self.hidden.iter_mut().zip(&cache.layers) {
            layer.norm.update_running(&lc.norm, batch, momentum);
        }
    }

    fn forward_cached(&self, x: &Matrix, mut dropout: Dropout<'_>) -> Result<(Matrix, ForwardCache)> {
        self.check_input(x)?;
        let b = x.rows();
        if b < 2 {
            return Err(NnError::BatchTooSmall(b));
        }
        if let Dropout::Fixed(masks) = &dropout {
            let ok = masks.len() == self.hidden.len()
                && masks
                    .iter()
                    .zip(&self.hidden)
                    .all(|(m, h)| m.shape() == (b, h.dense.weight.rows()));
            if !ok {
                return Err(NnError::MaskShape);
            }
        }
        let keep = 1.0 - self.dropout_rate;
        let mut layers = Vec::with_capacity(self.hidden.len());
        let mut h = x.clone();
        for (l, layer) in self.hidden.iter().enumerate() {
            let z = layer.dense.forward(&h);
            let (pre_relu, norm) = layer.norm.forward_train(&z, self.bn_eps);
            let mut a = pre_relu.clone();
            a.as_mut_slice().iter_mut().for_each(|v| *v = v.max(0.0));
            let mask = match &mut dropout {
                Dropout::Off => None,
                Dropout::Fixed(masks) => Some(masks[l].clone()),
                Dropout::Sample(rng) => {
                    if self.dropout_rate > 0.0 {
                        let scale = 1.0 / keep;
                        let data = (0..a.as_slice().len())
                            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
                            .collect();
                        Some(Matrix::from_vec(a.rows(), a.cols(), data))
                    } else {
                        None
                    }
                }
            };
            if let Some(m) = &mask {
                for (v, k) in a.as_mut_slice().iter_mut().zip(m.as_slice()) {
                    *v *= k;
                }
            }
            if !a.is_finite() {
                return Err(NnError::NonFiniteActivation { layer: l });
            }
            layers.push(LayerCache {
                input: std::mem::replace(&mut h, a),
                norm,
                pre_relu,
                mask,
            });
        }
        let out = self.output.forward(&h);
        if !out.is_finite() {
            return Err(NnError::NonFiniteActivation {
                layer: self.hidden.len(),
            });
        }
        Ok((
            out,
            ForwardCache {
                layers,
                last_hidden: h,
            },
        ))
    }

    /// Train-mode batch MSE without touching the running statistics.
    pub fn loss(&self, x: &Matrix, y: &Matrix, dropout: Dropout<'_>) -> Result<f64> {
        let (pred, _) = self.forward_cached(x, dropout)?;
        check_target(&pred, y)?;
        Ok(mse(&pred, y))
    }

    /// Train-mode batch MSE and its exact gradient w.r.t. every parameter.
    pub fn gradients(&self, x: &Matrix, y: &Matrix, dropout: Dropout<'_>) -> Result<(f64, Gradients)> {
        let (pred, cache) = self.forward_cached(x, dropout)?;
        let (loss, grads) = self.backward(&pred, y, &cache)?;
        Ok((loss, grads))
    }

    fn backward(&self, pred: &Matrix, y: &Matrix, cache: &ForwardCache) -> Result<(f64, Gradients)> {
        check_target(pred, y)?;
        let count = pred.as_slice().len() as f64;
        let loss = mse(pred, y);
        let mut dpred = pred.clone();
        for (d, t) in dpred.as_mut_slice().iter_mut().zip(y.as_slice()) {
            *d = 2.0 * (*d - t) / count;
        }

        let (output_weight, output_bias, mut dh) = self.output.backward(&cache.last_hidden, &dpred);
        let mut hidden = Vec::with_capacity(self.hidden.len());
        for (layer, lc) in self.hidden.iter().zip(&cache.layers).rev() {
            if let Some(mask) = &lc.mask {
                for (g, k) in dh.as_mut_slice().iter_mut().zip(mask.as_slice()) {
                    *g *= k;
                }
            }
            for (g, p) in dh.as_mut_slice().iter_mut().zip(lc.pre_relu.as_slice()) {
                if *p <= 0.0 {
                    *g = 0.0;
                }
            }
            let (gamma, beta, dz) = layer.norm.backward(&lc.norm, &dh);
            let (weight, bias, dx) = layer.dense.backward(&lc.input, &dz);
            hidden.push(HiddenGradients {
                weight,
                bias,
                gamma,
                beta,
            });
            dh = dx;
        }
        hidden.reverse();
        Ok((
            loss,
            Gradients {
                hidden,
                output_weight,
                output_bias,
            },
        ))
    }

    /// One optimizer step on a mini-batch. Returns the batch loss.
    fn train_step(&mut self, x: &Matrix, y: &Matrix, rng: &mut ChaCha8Rng, adam: &mut Adam) -> Result<f64> {
        let (pred, cache) = self.forward_cached(x, Dropout::Sample(rng))?;
        let (loss, grads) = self.backward(&pred, y, &cache)?;
        self.update_running(&cache, x.rows());
        adam.step(self.parameters_mut(), &grads.slices());
        Ok(loss)
    }
}

fn check_target(pred: &Matrix, y: &Matrix) -> Result<()> {
    if pred.shape() != y.shape() {
        return Err(NnError::TargetShape {
            expected: pred.shape(),
            found: y.shape(),
        });
    }
    Ok(())
}

pub fn mse(pred: &Matrix, y: &Matrix) -> f64 {
    let n = pred.as_slice().len() as f64;
    pred.as_slice()
        .iter()
        .zip(y.as_slice())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / n
}

// ---------------------------------------------------------------------------
// Adam
// ---------------------------------------------------------------------------

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub config: AdamConfig,
    pub learning_rate: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64, config: AdamConfig) -> Self {
        Self {
            config,
            learning_rate,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &[&[f64]]) {
        assert_eq!(params.len(), grads.len(), "parameter/gradient count mismatch");
        if self.m.is_empty() {
            self.m = grads.iter().map(|g| vec![0.0; g.len()]).collect();
            self.v = grads.iter().map(|g| vec![0.0; g.len()]).collect();
        }
        self.t += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (k, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for j in 0..p.len() {
                m[j] = beta1 * m[j] + (1.0 - beta1) * g[j];
                v[j] = beta2 * v[j] + (1.0 - beta2) * g[j] * g[j];
                let mhat = m[j] / c1;
                let vhat = v[j] / c2;
                p[j] -= self.learning_rate * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

/// Inputs and targets, one sample per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub x: Matrix,
    pub y: Matrix,
}

impl Samples {
    pub fn new(x: Matrix, y: Matrix) -> Self {
        assert_eq!(x.rows(), y.rows(), "input/target row mismatch");
        Self { x, y }
    }

    pub fn len(&self) -> usize {
        self.x.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.rows() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopDecision {
    Improved,
    Continue,
    Stop,
}

/// Patience counter on a strictly decreasing validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: f64,
    pub best_epoch: usize,
    wait: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            wait: 0,
        }
    }

    pub fn update(&mut self, epoch: usize, val_loss: f64) -> StopDecision {
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = epoch;
            self.wait = 0;
            StopDecision::Improved
        } else {
            self.wait += 1;
            if self.wait >= self.patience {
                StopDecision::Stop
            } else {
                StopDecision::Continue
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest validation loss.
    pub model: Fcnn,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

/// Mini-batch boundaries for `n` shuffled samples. A trailing batch of one
/// is folded into the previous batch so batch statistics stay defined.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    let mut out: Vec<std::ops::Range<usize>> = (0..n)
        .step_by(batch_size)
        .map(|s| s..(s + batch_size).min(n))
        .collect();
    if out.len() >= 2 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().expect("len ≥ 2");
        out.last_mut().expect("len ≥ 1").end = last.end;
    }
    out
}

/// Adam on MSE with seeded shuffling and early stopping. The returned model
/// carries the best-validation weights.
pub fn train(mut model: Fcnn, train_set: &Samples, val_set: &Samples, config: &FcnnConfig) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() {
        return Err(NnError::EmptySet("training"));
    }
    if val_set.is_empty() {
        return Err(NnError::EmptySet("validation"));
    }
    if train_set.len() < 2 {
        return Err(NnError::TrainSetTooSmall(train_set.len()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(config.learning_rate, config.adam.clone());
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = model.clone();
    let mut history = Vec::new();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for (bi, range) in batch_ranges(order.len(), config.batch_size).into_iter().enumerate() {
            let idx = &order[range];
            let x = train_set.x.select_rows(idx);
            let y = train_set.y.select_rows(idx);
            let loss = match model.train_step(&x, &y, &mut rng, &mut adam) {
                Ok(l) => l,
                Err(NnError::NonFiniteActivation { .. }) => {
                    return Err(NnError::Diverged { epoch, batch: bi })
                }
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(NnError::Diverged { epoch, batch: bi });
            }
            loss_sum += loss * idx.len() as f64;
        }
        let train_mse = loss_sum / train_set.len() as f64;
        let val_pred = model
            .predict(&val_set.x)
            .map_err(|_| NnError::Diverged { epoch, batch: usize::MAX })?;
        let val_mse = mse(&val_pred, &val_set.y);
        if !val_mse.is_finite() {
            return Err(NnError::Diverged { epoch, batch: usize::MAX });
        }
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
        match stopper.update(epoch, val_mse) {
            StopDecision::Improved => best = model.clone(),
            StopDecision::Continue => {}
            StopDecision::Stop => {
                stopped_early = true;
                break;
            }
        }
    }

    Ok(TrainOutcome {
        model: best,
        history,
        best_epoch: stopper.best_epoch,
        best_val_mse: stopper.best,
        stopped_early,
    })
}

pub fn write_history_csv(path: &Path, history: &[EpochRecord]) -> Result<()> {
    let mut out = String::from("epoch,train_mse,val_mse\n");
    for r in history {
        out.push_str(&format!("{},{},{}\n", r.epoch, r.train_mse, r.val_mse));
    }
    std::fs::write(path, out)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// Input scaling and checkpoints
// ---------------------------------------------------------------------------

/// Per-column z-scoring fitted on training inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl Standardizer {
    pub fn fit(x: &Matrix) -> Self {
        let d = x.cols();
        let cols: Vec<Vec<f64>> = (0..d).map(|j| x.column(j)).collect();
        let mean: Vec<f64> = cols.iter().map(|c| linalg::mean(c)).collect();
        let std = cols
            .iter()
            .zip(&mean)
            .map(|(c, m)| {
                let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / c.len() as f64;
                let sd = var.sqrt();
                if sd > 0.0 {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, std }
    }

    pub fn apply(&self, x: &Matrix) -> Matrix {
        let mut out = x.clone();
        for i in 0..out.rows() {
            for (j, v) in out.row_mut(i).iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }
}

/// A trained network together with the input scaling it expects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub config: FcnnConfig,
    pub input_scaler: Standardizer,
    pub network: Fcnn,
}

impl Checkpoint {
    pub fn predict(&self, raw_inputs: &Matrix) -> Result<Matrix> {
        self.network.predict(&self.input_scaler.apply(raw_inputs))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}
