//! A small fully connected softmax classifier trained with Adam.
//!
//! Gradients are computed by hand. The network keeps an exponential moving
//! average of its parameters, updated after every optimizer step as
//! `ema <- decay * ema + (1 - decay) * param`, and [`NetState::ema_forward`]
//! evaluates with those shadow parameters.

use std::io::{Read, Write};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Probabilities are clamped here before any explicit logarithm.
pub const PROB_FLOOR: f64 = 1e-12;

pub const DEFAULT_EMA_DECAY: f64 = 0.999;

const CHECKPOINT_MAGIC: &[u8; 8] = b"MXCFNET\0";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn code(self) -> u32 {
        match self {
            Activation::Relu => 0,
            Activation::Tanh => 1,
        }
    }

    fn from_code(code: u32) -> Result<Self> {
        match code {
            0 => Ok(Activation::Relu),
            1 => Ok(Activation::Tanh),
            other => Err(Error::Checkpoint(format!(
                "unknown activation code {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Input dimension, hidden widths, number of classes.
    pub layer_sizes: Vec<usize>,
    pub activation: Activation,
    pub seed: u64,
    #[serde(default = "default_ema_decay")]
    pub ema_decay: f64,
}

fn default_ema_decay() -> f64 {
    DEFAULT_EMA_DECAY
}

impl NetConfig {
    pub fn new(layer_sizes: Vec<usize>, activation: Activation, seed: u64) -> Self {
        Self {
            layer_sizes,
            activation,
            seed,
            ema_decay: DEFAULT_EMA_DECAY,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_sizes.len() < 2 {
            return Err(Error::InvalidConfig(
                "network needs at least 2 layer sizes".into(),
            ));
        }
        if self.layer_sizes.contains(&0) {
            return Err(Error::InvalidConfig("layer sizes must be positive".into()));
        }
        if *self.layer_sizes.last().unwrap() < 2 {
            return Err(Error::InvalidConfig(
                "need at least 2 output classes".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidConfig(format!(
                "ema decay {} outside [0, 1)",
                self.ema_decay
            )));
        }
        Ok(())
    }
}

/// One affine map `a W + b`, with `W` stored as `fan_in x fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weights: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }

    fn zeros_like(&self) -> Self {
        Self::zeros(self.weights.nrows(), self.weights.ncols())
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn is_finite(&self) -> bool {
        self.weights
            .iter()
            .chain(self.bias.iter())
            .all(|v| v.is_finite())
    }

    fn values(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(self.bias.iter())
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    pub step: u64,
    first: Vec<Layer<T>>,
    second: Vec<Layer<T>>,
}

impl<T: Scalar> AdamState<T> {
    fn new(layers: &[Layer<T>]) -> Self {
        Self {
            beta1: T::of(0.9),
            beta2: T::of(0.999),
            eps: T::of(1e-8),
            step: 0,
            first: layers.iter().map(Layer::zeros_like).collect(),
            second: layers.iter().map(Layer::zeros_like).collect(),
        }
    }
}

/// Parameters, optimizer moments and the EMA shadow of a classifier.
#[derive(Debug, Clone, PartialEq)]
pub struct NetState<T> {
    layers: Vec<Layer<T>>,
    ema: Vec<Layer<T>>,
    activation: Activation,
    ema_decay: T,
    pub adam: AdamState<T>,
}

struct ForwardCache<T> {
    /// Input followed by every hidden activation.
    activations: Vec<Array2<T>>,
    logits: Array2<T>,
}

impl<T: Scalar> NetState<T> {
    /// He-uniform weights and zero biases from the configured seed.
    pub fn new(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let layers = config
            .layer_sizes
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / fan_in as f64).sqrt();
                let weights = Array2::from_shape_simple_fn((fan_in, fan_out), || {
                    T::of(rng.random_range(-limit..limit))
                });
                Layer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self::from_layers(
            layers,
            config.activation,
            T::of(config.ema_decay),
        ))
    }

    /// All weights and biases zero; every prediction is uniform.
    pub fn zeros(config: &NetConfig) -> Result<Self> {
        config.validate()?;
        let layers = config
            .layer_sizes
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        Ok(Self::from_layers(
            layers,
            config.activation,
            T::of(config.ema_decay),
        ))
    }

    fn from_layers(layers: Vec<Layer<T>>, activation: Activation, ema_decay: T) -> Self {
        Self {
            ema: layers.clone(),
            adam: AdamState::new(&layers),
            layers,
            activation,
            ema_decay,
        }
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn ema_layers(&self) -> &[Layer<T>] {
        &self.ema
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn ema_decay(&self) -> T {
        self.ema_decay
    }

    pub fn set_ema_decay(&mut self, decay: T) {
        self.ema_decay = decay;
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.nrows()
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().unwrap().weights.ncols()
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weights.ncols()))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    /// Live parameters flattened in layer order (weights row-major, then bias).
    pub fn flat_params(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.values().copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[T]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::LengthMismatch {
                what: "flat parameters",
                left: params.len(),
                right: self.param_count(),
            });
        }
        for (dst, &src) in self
            .layers
            .iter_mut()
            .flat_map(|l| l.values_mut())
            .zip(params)
        {
            *dst = src;
        }
        Ok(())
    }

    pub fn flat_ema_params(&self) -> Vec<T> {
        self.ema.iter().flat_map(|l| l.values().copied()).collect()
    }

    fn check_input(&self, x: &ArrayView2<T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "input columns",
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        Ok(())
    }

    fn run(&self, params: &[Layer<T>], x: ArrayView2<T>) -> ForwardCache<T> {
        let mut activations = vec![x.to_owned()];
        let last = params.len() - 1;
        for layer in &params[..last] {
            let mut z = activations.last().unwrap().dot(&layer.weights);
            z += &layer.bias;
            match self.activation {
                Activation::Relu => z.mapv_inplace(|v| v.max(T::zero())),
                Activation::Tanh => z.mapv_inplace(T::tanh),
            }
            activations.push(z);
        }
        let mut logits = activations.last().unwrap().dot(&params[last].weights);
        logits += &params[last].bias;
        ForwardCache {
            activations,
            logits,
        }
    }

    /// Row-wise softmax probabilities.
    pub fn forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        Ok(softmax_rows(&self.run(&self.layers, x).logits))
    }

    /// As [`Self::forward`], with the EMA parameters.
    pub fn ema_forward(&self, x: ArrayView2<T>) -> Result<Array2<T>> {
        self.check_input(&x)?;
        Ok(softmax_rows(&self.run(&self.ema, x).logits))
    }

    fn check_targets(&self, x: &ArrayView2<T>, targets: &ArrayView2<T>) -> Result<()> {
        self.check_input(x)?;
        if targets.nrows() != x.nrows() {
            return Err(Error::LengthMismatch {
                what: "input rows vs target rows",
                left: x.nrows(),
                right: targets.nrows(),
            });
        }
        if targets.ncols() != self.n_classes() {
            return Err(Error::DimensionMismatch {
                what: "target columns",
                expected: self.n_classes(),
                got: targets.ncols(),
            });
        }
        Ok(())
    }

    /// Soft-label cross-entropy per row, via log-softmax of the logits.
    pub fn per_sample_loss(&self, x: ArrayView2<T>, targets: ArrayView2<T>) -> Result<Array1<T>> {
        self.check_targets(&x, &targets)?;
        let logits = self.run(&self.layers, x).logits;
        Ok(log_softmax_cross_entropy(&logits, &targets))
    }

    /// Objective `sum_i w_i l_i` and its gradient with respect to every
    /// live parameter. Weights of `1/N` give the batch mean.
    pub fn gradients(
        &self,
        x: ArrayView2<T>,
        targets: ArrayView2<T>,
        weights: ArrayView1<T>,
    ) -> Result<(T, Vec<Layer<T>>)> {
        self.check_targets(&x, &targets)?;
        if weights.len() != x.nrows() {
            return Err(Error::LengthMismatch {
                what: "sample weights vs batch rows",
                left: weights.len(),
                right: x.nrows(),
            });
        }
        if weights.iter().any(|&w| !(w >= T::zero())) {
            return Err(Error::InvalidConfig(
                "sample weights must be non-negative".into(),
            ));
        }

        let cache = self.run(&self.layers, x);
        let losses = log_softmax_cross_entropy(&cache.logits, &targets);
        let loss = losses
            .iter()
            .zip(weights.iter())
            .map(|(&l, &w)| l * w)
            .sum();

        // d/dz of -sum_j t_j log softmax(z)_j is softmax(z) * sum(t) - t.
        let probs = softmax_rows(&cache.logits);
        let mut delta = probs;
        Zip::from(delta.rows_mut())
            .and(targets.rows())
            .and(&weights)
            .for_each(|mut d, t, &w| {
                let mass: T = t.iter().copied().sum();
                Zip::from(&mut d).and(&t).for_each(|dv, &tv| {
                    *dv = w * (*dv * mass - tv);
                });
            });

        let mut grads: Vec<Layer<T>> = Vec::with_capacity(self.layers.len());
        for idx in (0..self.layers.len()).rev() {
            let input = &cache.activations[idx];
            let grad_w = input.t().dot(&delta);
            let grad_b = delta.sum_axis(Axis(0));
            if idx > 0 {
                let mut upstream = delta.dot(&self.layers[idx].weights.t());
                let act = input;
                match self.activation {
                    Activation::Relu => Zip::from(&mut upstream).and(act).for_each(|u, &a| {
                        if a <= T::zero() {
                            *u = T::zero();
                        }
                    }),
                    Activation::Tanh => Zip::from(&mut upstream)
                        .and(act)
                        .for_each(|u, &a| *u *= T::one() - a * a),
                }
                delta = upstream;
            }
            grads.push(Layer {
                weights: grad_w,
                bias: grad_b,
            });
        }
        grads.reverse();
        Ok((loss, grads))
    }

    /// Weighted loss, one Adam step, then the EMA update. On a non-finite
    /// gradient nothing is modified.
    pub fn backward_and_step(
        &mut self,
        x: ArrayView2<T>,
        targets: ArrayView2<T>,
        weights: ArrayView1<T>,
        learn_rate: T,
    ) -> Result<T> {
        let (loss, grads) = self.gradients(x, targets, weights)?;
        if let Some(layer) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient { layer });
        }

        let adam = &mut self.adam;
        adam.step += 1;
        let t = adam.step as i32;
        let (b1, b2, eps) = (adam.beta1, adam.beta2, adam.eps);
        let bias1 = T::one() - b1.powi(t);
        let bias2 = T::one() - b2.powi(t);
        for (((param, grad), m), v) in self
            .layers
            .iter_mut()
            .zip(&grads)
            .zip(adam.first.iter_mut())
            .zip(adam.second.iter_mut())
        {
            for (((p, &g), m), v) in param
                .values_mut()
                .zip(grad.values())
                .zip(m.values_mut())
                .zip(v.values_mut())
            {
                *m = b1 * *m + (T::one() - b1) * g;
                *v = b2 * *v + (T::one() - b2) * g * g;
                let m_hat = *m / bias1;
                let v_hat = *v / bias2;
                *p -= learn_rate * m_hat / (v_hat.sqrt() + eps);
            }
        }

        let decay = self.ema_decay;
        for (shadow, live) in self.ema.iter_mut().zip(&self.layers) {
            for (s, &p) in shadow.values_mut().zip(live.values()) {
                *s = decay * *s + (T::one() - decay) * p;
            }
        }
        Ok(loss)
    }

    /// Header: magic, version, activation code, layer count, layer sizes,
    /// EMA decay. Body: live parameters then EMA parameters, each as
    /// little-endian f64 in layer order.
    pub fn write_checkpoint<W: Write>(&self, mut out: W) -> Result<()> {
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        out.write_all(&self.activation.code().to_le_bytes())?;
        let sizes = self.layer_sizes();
        out.write_all(&(sizes.len() as u32).to_le_bytes())?;
        for s in sizes {
            out.write_all(&(s as u32).to_le_bytes())?;
        }
        out.write_all(&self.ema_decay.to_f64_lossy().to_le_bytes())?;
        for v in self.flat_params().into_iter().chain(self.flat_ema_params()) {
            out.write_all(&v.to_f64_lossy().to_le_bytes())?;
        }
        Ok(())
    }

    /// Inverse of [`Self::write_checkpoint`]. Optimizer moments start fresh.
    pub fn read_checkpoint<R: Read>(mut input: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = read_u32(&mut input)?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let activation = Activation::from_code(read_u32(&mut input)?)?;
        let n = read_u32(&mut input)? as usize;
        let sizes = (0..n)
            .map(|_| read_u32(&mut input).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let ema_decay = read_f64(&mut input)?;
        let config = NetConfig {
            layer_sizes: sizes,
            activation,
            seed: 0,
            ema_decay,
        };
        let mut state = Self::zeros(&config)?;
        let count = state.param_count();
        let live = (0..count)
            .map(|_| read_f64(&mut input).map(T::of))
            .collect::<Result<Vec<_>>>()?;
        let shadow = (0..count)
            .map(|_| read_f64(&mut input).map(T::of))
            .collect::<Result<Vec<_>>>()?;
        state.set_flat_params(&live)?;
        for (dst, src) in state
            .ema
            .iter_mut()
            .flat_map(|l| l.values_mut())
            .zip(shadow)
        {
            *dst = src;
        }
        Ok(state)
    }
}

fn read_u32<R: Read>(input: &mut R) -> Result<u32> {
    let mut buf = [0u8; 4];
    input.read_exact(&mut buf)?;
    Ok(u32::from_le_bytes(buf))
}

fn read_f64<R: Read>(input: &mut R) -> Result<f64> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(f64::from_le_bytes(buf))
}

/// Max-subtracted softmax of every row.
pub fn softmax_rows<T: Scalar>(logits: &Array2<T>) -> Array2<T> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        row.mapv_inplace(|v| (v - max).exp());
        let total: T = row.iter().copied().sum();
        row.mapv_inplace(|v| v / total);
    }
    out
}

fn log_softmax_cross_entropy<T: Scalar>(logits: &Array2<T>, targets: &ArrayView2<T>) -> Array1<T> {
    Zip::from(logits.rows())
        .and(targets.rows())
        .map_collect(|z, t| {
            let max = z.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = z.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            z.iter()
                .zip(t.iter())
                .map(|(&zv, &tv)| tv * (lse - zv))
                .sum()
        })
}

/// `l_i = -sum_j target_ij ln(max(pred_ij, 1e-12))`.
pub fn cross_entropy<T: Scalar>(pred: ArrayView2<T>, target: ArrayView2<T>) -> Result<Array1<T>> {
    if pred.dim() != target.dim() {
        return Err(Error::DimensionMismatch {
            what: "prediction vs target shape",
            expected: pred.len(),
            got: target.len(),
        });
    }
    let floor = T::of(PROB_FLOOR);
    Ok(Zip::from(pred.rows())
        .and(target.rows())
        .map_collect(|p, t| {
            -p.iter()
                .zip(t.iter())
                .map(|(&pv, &tv)| tv * pv.max(floor).ln())
                .sum::<T>()
        }))
}
