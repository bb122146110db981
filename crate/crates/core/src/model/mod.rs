//! Feedforward classifier whose last hidden layer is the editable latent space.

mod adam;
pub mod checkpoint;
mod gradcheck;

pub use adam::{adam_step, AdamConfig, OptimizerState};
pub use gradcheck::{gradient_check, GradCheckReport};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::{Matrix, Real};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
    /// Linear hidden layers; used for analytic gradient tests.
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Relu => z.max(T::zero()),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the post-activation value.
    fn derivative_from_output<T: Real>(self, a: T) -> T {
        match self {
            Activation::Relu => {
                if a > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub num_classes: usize,
    #[serde(default)]
    pub activation: Activation,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_dims: vec![64, 32],
            num_classes: 4,
            activation: Activation::Relu,
            seed: 0,
        }
    }

    pub fn latent_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.hidden_dims.is_empty() {
            return Err(Error::Config("hidden_dims must not be empty".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer widths must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("num_classes must be at least 2".into()));
        }
        Ok(())
    }

    /// Layer widths from input to logits.
    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden_dims.len() + 2);
        w.push(self.input_dim);
        w.extend_from_slice(&self.hidden_dims);
        w.push(self.num_classes);
        w
    }
}

/// One affine layer. `weights` is `fan_in x fan_out`, so a layer computes `x · W + b`.
#[derive(Clone, Debug, PartialEq)]
pub struct Layer<T> {
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

impl<T: Real> Layer<T> {
    fn zeros_like(&self) -> Self {
        Self {
            weights: Matrix::zeros(self.weights.rows(), self.weights.cols()),
            bias: vec![T::zero(); self.bias.len()],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    layers: Vec<Layer<T>>,
    activation: Activation,
}

/// The stored, trained classifier.
pub type ClassifierModel = Network<f32>;

/// Parameter gradients, laid out exactly like the network's layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Layer<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(model: &Network<T>) -> Self {
        Self {
            layers: model.layers.iter().map(Layer::zeros_like).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.add_assign(&b.weights);
            for (x, &y) in a.bias.iter_mut().zip(&b.bias) {
                *x = *x + y;
            }
        }
    }

    /// Flat view in the canonical parameter order (see [`Network::param`]).
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
        }
        for l in &self.layers {
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn is_all_zero(&self) -> bool {
        self.flat().iter().all(|v| *v == T::zero())
    }
}

/// Activations recorded by a forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass<T> {
    pub inputs: Matrix<T>,
    /// Post-activation output of every hidden layer; the last one is the latent batch.
    pub hidden: Vec<Matrix<T>>,
    pub logits: Matrix<T>,
    pub probs: Matrix<T>,
}

impl<T: Real> ForwardPass<T> {
    pub fn latents(&self) -> &Matrix<T> {
        self.hidden.last().expect("at least one hidden layer")
    }

    pub fn predictions(&self) -> Vec<usize> {
        self.probs.iter_rows().map(argmax).collect()
    }
}

pub(crate) fn argmax<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Builds a freshly initialised classifier.
///
/// Weights are uniform in `±1/√fan_in`, biases zero. The same config and seed
/// always produce bit-identical parameters.
pub fn init_model(config: &ModelConfig) -> Result<ClassifierModel> {
    Network::init(config)
}

impl<T: Real> Network<T> {
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let widths = config.widths();
        let layers = widths
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let data = (0..fan_in * fan_out)
                    .map(|_| T::lit(rng.random_range(-bound..bound)))
                    .collect();
                Layer {
                    weights: Matrix::from_vec(fan_in, fan_out, data).expect("sized"),
                    bias: vec![T::zero(); fan_out],
                }
            })
            .collect();
        Ok(Self {
            layers,
            activation: config.activation,
        })
    }

    /// Assembles a network from explicit layers, checking that shapes chain.
    pub fn from_layers(layers: Vec<Layer<T>>, activation: Activation) -> Result<Self> {
        if layers.len() < 2 {
            return Err(Error::Shape(
                "a classifier needs at least one hidden layer and an output layer".into(),
            ));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.cols() {
                return Err(Error::Shape(format!(
                    "layer {i}: bias length {} != output width {}",
                    l.bias.len(),
                    l.weights.cols()
                )));
            }
            if i > 0 && layers[i - 1].weights.cols() != l.weights.rows() {
                return Err(Error::Shape(format!(
                    "layer {i}: input width {} does not match previous output {}",
                    l.weights.rows(),
                    layers[i - 1].weights.cols()
                )));
            }
        }
        Ok(Self { layers, activation })
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.rows()
    }

    pub fn latent_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.rows()
    }

    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.cols()
    }

    pub fn num_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.as_slice().len() + l.bias.len())
            .sum()
    }

    /// Mutable access to parameter `index` in the canonical order: all weight
    /// matrices in layer order (row-major), then all bias vectors in layer order.
    /// This matches the checkpoint layout.
    pub fn param_mut(&mut self, index: usize) -> &mut T {
        let (layer, is_bias, offset) = self.locate(index);
        let l = &mut self.layers[layer];
        if is_bias {
            &mut l.bias[offset]
        } else {
            &mut l.weights.as_mut_slice()[offset]
        }
    }

    /// `(layer, is_bias, offset)` of a canonical parameter index.
    fn locate(&self, mut index: usize) -> (usize, bool, usize) {
        for (li, l) in self.layers.iter().enumerate() {
            let n = l.weights.as_slice().len();
            if index < n {
                return (li, false, index);
            }
            index -= n;
        }
        for (li, l) in self.layers.iter().enumerate() {
            if index < l.bias.len() {
                return (li, true, index);
            }
            index -= l.bias.len();
        }
        panic!("parameter index out of range");
    }

    pub fn param(&self, index: usize) -> T {
        let (layer, is_bias, offset) = self.locate(index);
        let l = &self.layers[layer];
        if is_bias {
            l.bias[offset]
        } else {
            l.weights.as_slice()[offset]
        }
    }

    /// Human-readable name of a canonical parameter index.
    pub fn param_name(&self, mut index: usize) -> String {
        for (li, l) in self.layers.iter().enumerate() {
            let n = l.weights.as_slice().len();
            if index < n {
                let cols = l.weights.cols();
                return format!("layer {li} weights[{}, {}]", index / cols, index % cols);
            }
            index -= n;
        }
        for (li, l) in self.layers.iter().enumerate() {
            if index < l.bias.len() {
                return format!("layer {li} bias[{index}]");
            }
            index -= l.bias.len();
        }
        "out-of-range parameter".into()
    }

    pub fn all_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.all_finite() && l.bias.iter().all(|b| b.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> Network<U> {
        Network {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weights: l.weights.cast(),
                    bias: l
                        .bias
                        .iter()
                        .map(|&b| U::lit(b.to_f64().unwrap_or(f64::NAN)))
                        .collect(),
                })
                .collect(),
            activation: self.activation,
        }
    }
}

fn affine<T: Real>(x: &Matrix<T>, layer: &Layer<T>) -> Matrix<T> {
    let mut z = x.matmul(&layer.weights);
    for r in 0..z.rows() {
        for (v, &b) in z.row_mut(r).iter_mut().zip(&layer.bias) {
            *v = *v + b;
        }
    }
    z
}

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Real>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

/// Runs the network on a batch, keeping every hidden activation for backprop.
pub fn forward<T: Real>(model: &Network<T>, inputs: &Matrix<T>) -> Result<ForwardPass<T>> {
    if inputs.cols() != model.input_dim() {
        return Err(Error::Shape(format!(
            "input width {} != model input_dim {}",
            inputs.cols(),
            model.input_dim()
        )));
    }
    if !inputs.all_finite() {
        return Err(Error::Input("non-finite value in input batch".into()));
    }
    let (hidden_layers, output) = model.layers.split_at(model.layers.len() - 1);
    let mut hidden = Vec::with_capacity(hidden_layers.len());
    let mut current = inputs.clone();
    for layer in hidden_layers {
        let mut z = affine(&current, layer);
        for v in z.as_mut_slice() {
            *v = model.activation.apply(*v);
        }
        hidden.push(z.clone());
        current = z;
    }
    let logits = affine(&current, &output[0]);
    let probs = softmax(&logits);
    Ok(ForwardPass {
        inputs: inputs.clone(),
        hidden,
        logits,
        probs,
    })
}

const PROB_FLOOR: f64 = 1e-12;

/// Mean cross-entropy over the batch and its gradient with respect to the logits.
pub fn cross_entropy<T: Real>(probs: &Matrix<T>, labels: &[usize]) -> Result<(T, Matrix<T>)> {
    if probs.rows() != labels.len() {
        return Err(Error::Shape(format!(
            "{} probability rows but {} labels",
            probs.rows(),
            labels.len()
        )));
    }
    let classes = probs.cols();
    if let Some((i, &bad)) = labels.iter().enumerate().find(|(_, &l)| l >= classes) {
        return Err(Error::Input(format!(
            "label {bad} at row {i} is outside 0..{classes}"
        )));
    }
    if labels.is_empty() {
        return Ok((T::zero(), Matrix::zeros(0, classes)));
    }
    let batch = T::lit(labels.len() as f64);
    let floor = T::lit(PROB_FLOOR);
    let mut loss = T::zero();
    let mut grad = probs.clone();
    for (r, &label) in labels.iter().enumerate() {
        loss = loss - probs.get(r, label).max(floor).ln();
        let g = grad.row_mut(r);
        g[label] = g[label] - T::one();
        for v in g.iter_mut() {
            *v = *v / batch;
        }
    }
    Ok((loss / batch, grad))
}

/// Exact gradients of a loss whose derivative enters at the logits and,
/// optionally, directly at the latent layer.
pub fn backward<T: Real>(
    model: &Network<T>,
    fp: &ForwardPass<T>,
    grad_logits: &Matrix<T>,
    grad_latents: Option<&Matrix<T>>,
) -> Result<Gradients<T>> {
    if grad_logits.shape() != fp.logits.shape() {
        return Err(Error::Shape(format!(
            "grad_logits {:?} != logits {:?}",
            grad_logits.shape(),
            fp.logits.shape()
        )));
    }
    if let Some(gl) = grad_latents {
        if gl.shape() != fp.latents().shape() {
            return Err(Error::Shape(format!(
                "grad_latents {:?} != latents {:?}",
                gl.shape(),
                fp.latents().shape()
            )));
        }
    }
    let depth = model.layers.len();
    let mut grads: Vec<Option<Layer<T>>> = vec![None; depth];

    let mut delta = grad_logits.clone();
    for l in (0..depth).rev() {
        let layer = &model.layers[l];
        let input = if l == 0 { &fp.inputs } else { &fp.hidden[l - 1] };
        grads[l] = Some(Layer {
            weights: input.t_matmul(&delta),
            bias: delta.column_sums(),
        });
        if l == 0 {
            break;
        }
        // gradient with respect to this layer's input activations
        let mut upstream = delta.matmul_t(&layer.weights);
        if l == depth - 1 {
            if let Some(gl) = grad_latents {
                upstream.add_assign(gl);
            }
        }
        let act = &fp.hidden[l - 1];
        for (u, &a) in upstream.as_mut_slice().iter_mut().zip(act.as_slice()) {
            *u = *u * model.activation.derivative_from_output(a);
        }
        delta = upstream;
    }
    Ok(Gradients {
        layers: grads.into_iter().map(|g| g.expect("filled")).collect(),
    })
}
