//! Dense feed-forward regression networks.
//!
//! A [`Network`] is a stack of affine layers, each followed by an element-wise
//! activation. Weight matrices are stored `fan_in × fan_out`, so a batch of rows
//! `X (m × fan_in)` maps to `X · W + b (m × fan_out)`.
//!
//! Everything is computed in `f64` and every source of randomness (weight
//! initialization, dropout masks) is driven by an explicit seed, so identical
//! inputs produce bit-identical outputs.

use std::fmt;
use std::str::FromStr;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::distr::{Distribution, Uniform};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Negative-side slope used when `leaky_relu` is given without a value.
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.3;

/// Element-wise activation applied after each affine layer.
///
/// Textual form (used in config files): `relu`, `leaky_relu`, `leaky_relu:0.1`,
/// `softsign`, `softplus`, `linear`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ActivationKind {
    Relu,
    LeakyRelu { slope: f64 },
    SoftSign,
    SoftPlus,
    Linear,
}

impl ActivationKind {
    pub fn leaky_relu() -> Self {
        ActivationKind::LeakyRelu {
            slope: DEFAULT_LEAKY_SLOPE,
        }
    }

    /// Returns `(value, derivative)` at `z`.
    ///
    /// The ReLU family uses derivative 0 at exactly `z = 0` (for LeakyReLU the
    /// slope is used at and below zero).
    #[inline]
    pub fn eval(self, z: f64) -> (f64, f64) {
        match self {
            ActivationKind::Relu => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (0.0, 0.0)
                }
            }
            ActivationKind::LeakyRelu { slope } => {
                if z > 0.0 {
                    (z, 1.0)
                } else {
                    (slope * z, slope)
                }
            }
            ActivationKind::SoftSign => {
                let d = 1.0 + z.abs();
                (z / d, 1.0 / (d * d))
            }
            ActivationKind::SoftPlus => {
                // log(1 + e^z) without overflow; derivative is the logistic sigmoid.
                let e = (-z.abs()).exp();
                let value = z.max(0.0) + e.ln_1p();
                let sigmoid = if z >= 0.0 { 1.0 / (1.0 + e) } else { e / (1.0 + e) };
                (value, sigmoid)
            }
            ActivationKind::Linear => (z, 1.0),
        }
    }

    fn validate(self) -> Result<()> {
        if let ActivationKind::LeakyRelu { slope } = self {
            if !slope.is_finite() || slope < 0.0 {
                return Err(Error::InvalidSpec(format!(
                    "leaky_relu slope must be finite and non-negative, got {slope}"
                )));
            }
        }
        Ok(())
    }
}

impl fmt::Display for ActivationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ActivationKind::Relu => f.write_str("relu"),
            ActivationKind::LeakyRelu { slope } => write!(f, "leaky_relu:{slope}"),
            ActivationKind::SoftSign => f.write_str("softsign"),
            ActivationKind::SoftPlus => f.write_str("softplus"),
            ActivationKind::Linear => f.write_str("linear"),
        }
    }
}

impl FromStr for ActivationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let (name, arg) = match lower.split_once(':') {
            Some((n, a)) => (n, Some(a)),
            None => (lower.as_str(), None),
        };
        let kind = match (name, arg) {
            ("relu", None) => ActivationKind::Relu,
            ("leaky_relu" | "leakyrelu", None) => ActivationKind::leaky_relu(),
            ("leaky_relu" | "leakyrelu", Some(a)) => ActivationKind::LeakyRelu {
                slope: a
                    .parse()
                    .map_err(|_| Error::InvalidSpec(format!("bad leaky_relu slope `{a}`")))?,
            },
            ("softsign", None) => ActivationKind::SoftSign,
            ("softplus", None) => ActivationKind::SoftPlus,
            ("linear" | "identity", None) => ActivationKind::Linear,
            _ => return Err(Error::InvalidSpec(format!("unknown activation `{s}`"))),
        };
        kind.validate()?;
        Ok(kind)
    }
}

impl TryFrom<String> for ActivationKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ActivationKind> for String {
    fn from(kind: ActivationKind) -> String {
        kind.to_string()
    }
}

/// One hidden layer: width, activation and (inverted) dropout rate on its output.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HiddenLayer {
    pub width: usize,
    pub activation: ActivationKind,
    #[serde(default)]
    pub dropout: f64,
}

impl HiddenLayer {
    pub fn new(width: usize, activation: ActivationKind) -> Self {
        Self {
            width,
            activation,
            dropout: 0.0,
        }
    }

    pub fn with_dropout(mut self, rate: f64) -> Self {
        self.dropout = rate;
        self
    }
}

/// Architecture of a feed-forward regressor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<HiddenLayer>,
    pub output_dim: usize,
    pub output_activation: ActivationKind,
}

impl NetworkSpec {
    pub fn new(input_dim: usize, output_dim: usize, output_activation: ActivationKind) -> Self {
        Self {
            input_dim,
            hidden: Vec::new(),
            output_dim,
            output_activation,
        }
    }

    pub fn hidden(mut self, layer: HiddenLayer) -> Self {
        self.hidden.push(layer);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be positive".into()));
        }
        if self.output_dim == 0 {
            return Err(Error::InvalidSpec("output_dim must be positive".into()));
        }
        for (i, layer) in self.hidden.iter().enumerate() {
            if layer.width == 0 {
                return Err(Error::InvalidSpec(format!("hidden layer {i} has zero width")));
            }
            if !(0.0..1.0).contains(&layer.dropout) {
                return Err(Error::InvalidSpec(format!(
                    "hidden layer {i} dropout must be in [0, 1), got {}",
                    layer.dropout
                )));
            }
            layer.activation.validate()?;
        }
        self.output_activation.validate()
    }

    /// `(fan_in, fan_out)` for each affine layer, input to output.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(self.hidden.iter().map(|h| h.width));
        dims.push(self.output_dim);
        dims.windows(2).map(|w| (w[0], w[1])).collect()
    }

    fn activation(&self, layer: usize) -> ActivationKind {
        self.hidden
            .get(layer)
            .map(|h| h.activation)
            .unwrap_or(self.output_activation)
    }

    fn dropout(&self, layer: usize) -> f64 {
        self.hidden.get(layer).map(|h| h.dropout).unwrap_or(0.0)
    }
}

/// Weights and biases of one affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    layers: Vec<Dense>,
}

/// Forward-pass mode. Dropout is only active in `Train`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train { seed: u64 },
    Eval,
}

/// Everything recorded by a forward pass that backpropagation needs.
///
/// `activations[0]` is the input batch and `activations[L]` the network output.
/// `derivatives[l]` holds `∂a/∂z` for layer `l + 1`, already multiplied by the
/// dropout mask when one was applied.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardTrace {
    pub pre_activations: Vec<Array2<f64>>,
    pub activations: Vec<Array2<f64>>,
    pub derivatives: Vec<Array2<f64>>,
    pub masks: Vec<Option<Array2<f64>>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("trace always holds the input")
    }

    /// Activations feeding the output layer (the input batch for a network
    /// without hidden layers).
    pub fn penultimate(&self) -> &Array2<f64> {
        &self.activations[self.activations.len() - 2]
    }
}

/// Per-layer gradients, same shapes as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Dense>,
}

impl Gradients {
    /// Largest absolute entry of the output layer's weight gradient.
    pub fn last_layer_max_abs(&self) -> f64 {
        self.layers
            .last()
            .map(|l| l.weights.iter().fold(0.0_f64, |m, g| m.max(g.abs())))
            .unwrap_or(0.0)
    }

    pub fn l2_norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for l in &mut self.layers {
            l.weights *= factor;
            l.bias *= factor;
        }
    }
}

impl Network {
    /// Glorot-uniform weights (`±sqrt(6 / (fan_in + fan_out))`) and zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(fan_in, fan_out)| {
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let dist = Uniform::new(-limit, limit).expect("limit is positive and finite");
                let weights =
                    Array2::from_shape_simple_fn((fan_in, fan_out), || dist.sample(&mut rng));
                Dense {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { spec, layers })
    }

    /// Builds a network from explicit parameters, checking them against `spec`.
    pub fn from_layers(spec: NetworkSpec, layers: Vec<Dense>) -> Result<Self> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != layers.len() {
            return Err(Error::shape(
                format!("{} layers", shapes.len()),
                format!("{} layers", layers.len()),
            ));
        }
        for (l, ((fan_in, fan_out), dense)) in shapes.iter().zip(&layers).enumerate() {
            if dense.weights.dim() != (*fan_in, *fan_out) || dense.bias.len() != *fan_out {
                return Err(Error::shape(
                    format!("layer {l}: {fan_in}x{fan_out}"),
                    format!(
                        "layer {l}: {:?} with bias {}",
                        dense.weights.dim(),
                        dense.bias.len()
                    ),
                ));
            }
            if dense.weights.iter().chain(dense.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::InvalidSpec(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn forward(&self, x: ArrayView2<'_, f64>, mode: Mode) -> Result<ForwardTrace> {
        if x.ncols() != self.spec.input_dim {
            return Err(Error::shape(
                format!("{} input columns", self.spec.input_dim),
                format!("{} input columns", x.ncols()),
            ));
        }
        let depth = self.layers.len();
        let mut rng = match mode {
            Mode::Train { seed } => Some(ChaCha8Rng::seed_from_u64(seed)),
            Mode::Eval => None,
        };
        let mut pre_activations = Vec::with_capacity(depth);
        let mut activations = Vec::with_capacity(depth + 1);
        let mut derivatives = Vec::with_capacity(depth);
        let mut masks = Vec::with_capacity(depth);
        activations.push(x.to_owned());

        for (l, dense) in self.layers.iter().enumerate() {
            let mut z = activations[l].dot(&dense.weights);
            z += &dense.bias;
            let kind = self.spec.activation(l);
            let mut a = Array2::zeros(z.raw_dim());
            let mut d = Array2::zeros(z.raw_dim());
            Zip::from(&mut a).and(&mut d).and(&z).for_each(|a, d, &z| {
                let (v, dv) = kind.eval(z);
                *a = v;
                *d = dv;
            });

            let rate = self.spec.dropout(l);
            let mask = match rng.as_mut() {
                Some(rng) if rate > 0.0 => {
                    let keep = 1.0 / (1.0 - rate);
                    let mask = Array2::from_shape_simple_fn(z.raw_dim(), || {
                        if rng.random::<f64>() < rate {
                            0.0
                        } else {
                            keep
                        }
                    });
                    a *= &mask;
                    d *= &mask;
                    Some(mask)
                }
                _ => None,
            };

            pre_activations.push(z);
            activations.push(a);
            derivatives.push(d);
            masks.push(mask);
        }

        Ok(ForwardTrace {
            pre_activations,
            activations,
            derivatives,
            masks,
        })
    }

    /// Eval-mode output for a batch.
    pub fn predict(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut trace = self.forward(x, Mode::Eval)?;
        Ok(trace.activations.pop().expect("non-empty"))
    }

    /// Gradients of the scalar loss whose derivative with respect to the
    /// network output is `d_output`.
    pub fn backward(&self, trace: &ForwardTrace, d_output: ArrayView2<'_, f64>) -> Result<Gradients> {
        let out = trace.output();
        if d_output.dim() != out.dim() {
            return Err(Error::shape(
                format!("{:?}", out.dim()),
                format!("{:?}", d_output.dim()),
            ));
        }
        if trace.derivatives.len() != self.layers.len() {
            return Err(Error::shape(
                format!("trace of {} layers", self.layers.len()),
                format!("trace of {} layers", trace.derivatives.len()),
            ));
        }

        let mut grads: Vec<Dense> = Vec::with_capacity(self.layers.len());
        let mut delta = &d_output * &trace.derivatives[self.layers.len() - 1];
        for l in (0..self.layers.len()).rev() {
            let weights = trace.activations[l].t().dot(&delta);
            let bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut next = delta.dot(&self.layers[l].weights.t());
                next *= &trace.derivatives[l - 1];
                delta = next;
            }
            grads.push(Dense { weights, bias });
        }
        grads.reverse();
        Ok(Gradients { layers: grads })
    }

    /// `θ ← θ − lr · g` for every weight and bias.
    pub fn apply_update(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        if !lr.is_finite() || lr < 0.0 {
            return Err(Error::InvalidLearningRate(lr));
        }
        if grads.layers.len() != self.layers.len() {
            return Err(Error::shape(
                format!("{} gradient layers", self.layers.len()),
                format!("{} gradient layers", grads.layers.len()),
            ));
        }
        for (p, g) in self.layers.iter().zip(&grads.layers) {
            if p.weights.dim() != g.weights.dim() || p.bias.len() != g.bias.len() {
                return Err(Error::shape(
                    format!("{:?}", p.weights.dim()),
                    format!("{:?}", g.weights.dim()),
                ));
            }
        }
        for (p, g) in self.layers.iter_mut().zip(&grads.layers) {
            p.weights.scaled_add(-lr, &g.weights);
            p.bias.scaled_add(-lr, &g.bias);
        }
        Ok(())
    }

    /// SHA-256 over the parameter bit patterns, hex encoded.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for l in &self.layers {
            for v in l.weights.iter().chain(l.bias.iter()) {
                hasher.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}
