//! Small dense networks with exact reverse-mode gradients.
//!
//! Weights of a layer are stored input-major (`w[i * out + o]`) so the inner
//! loops of forward and backward both run over contiguous memory.

mod adam;
mod checkpoint;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{Checkpoint, CheckpointError, NetworkHeader};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum NeuralError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dim { expected: usize, got: usize },
    #[error("architecture mismatch")]
    Architecture,
    #[error("invalid layer spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through the activation's output `y`.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Linear => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub input_dim: usize,
    pub output_dim: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(input_dim: usize, output_dim: usize, activation: Activation) -> Self {
        Self {
            input_dim,
            output_dim,
            activation,
        }
    }
}

/// Specs for `input -> hidden... -> output`, with `hidden_act` on every
/// hidden layer.
pub fn stack(input: usize, hidden: &[usize], output: usize, hidden_act: Activation, out_act: Activation) -> Vec<LayerSpec> {
    let mut specs = Vec::with_capacity(hidden.len() + 1);
    let mut prev = input;
    for &h in hidden {
        specs.push(LayerSpec::new(prev, h, hidden_act));
        prev = h;
    }
    specs.push(LayerSpec::new(prev, output, out_act));
    specs
}

/// Row-major batch of vectors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Self { rows, cols, data }
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            assert_eq!(r.as_ref().len(), cols, "ragged rows");
            data.extend_from_slice(r.as_ref());
        }
        Self {
            rows: rows.len(),
            cols,
            data,
        }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    /// Column-wise concatenation `[self | other]`.
    pub fn hcat(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "hcat row count");
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }

    /// Columns `start..end` as a new matrix.
    pub fn columns(&self, start: usize, end: usize) -> Matrix {
        let mut data = Vec::with_capacity(self.rows * (end - start));
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Matrix {
            rows: self.rows,
            cols: end - start,
            data,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub spec: LayerSpec,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Activations retained by [`Mlp::forward`]; `acts[0]` is the input and
/// `acts[k + 1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct Cache {
    acts: Vec<Matrix>,
}

impl Cache {
    pub fn output(&self) -> &Matrix {
        self.acts.last().expect("cache holds the input at least")
    }
}

/// Per-layer weight and bias gradients, shaped like the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Gradients {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
                .collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b))
            .map(|g| g * g)
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, k: f64) {
        for (w, b) in &mut self.layers {
            w.iter_mut().chain(b.iter_mut()).for_each(|g| *g *= k);
        }
    }

    pub fn add(&mut self, other: &Gradients) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            w.iter_mut().zip(ow).for_each(|(a, o)| *a += o);
            b.iter_mut().zip(ob).for_each(|(a, o)| *a += o);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|(w, b)| w.iter().chain(b))
            .all(|g| g.is_finite())
    }
}

impl Mlp {
    pub fn zeros(specs: &[LayerSpec]) -> Result<Self, NeuralError> {
        validate_specs(specs)?;
        Ok(Self {
            layers: specs
                .iter()
                .map(|&spec| Layer {
                    spec,
                    w: vec![0.0; spec.input_dim * spec.output_dim],
                    b: vec![0.0; spec.output_dim],
                })
                .collect(),
        })
    }

    /// Uniform initialization in `±1/sqrt(fan_in)` for weights and biases.
    pub fn init<R: Rng + ?Sized>(specs: &[LayerSpec], rng: &mut R) -> Result<Self, NeuralError> {
        let mut net = Self::zeros(specs)?;
        for layer in &mut net.layers {
            let bound = 1.0 / (layer.spec.input_dim as f64).sqrt();
            for x in layer.w.iter_mut().chain(layer.b.iter_mut()) {
                *x = rng.gen_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn init_seeded(specs: &[LayerSpec], seed: u64) -> Result<Self, NeuralError> {
        Self::init(specs, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self, NeuralError> {
        let specs: Vec<LayerSpec> = layers.iter().map(|l| l.spec).collect();
        validate_specs(&specs)?;
        for l in &layers {
            if l.w.len() != l.spec.input_dim * l.spec.output_dim || l.b.len() != l.spec.output_dim {
                return Err(NeuralError::Architecture);
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].spec.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].spec.output_dim
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Multiplies the weights and biases of layer `idx` by `k`.
    pub fn scale_layer(&mut self, idx: usize, k: f64) {
        let l = &mut self.layers[idx];
        l.w.iter_mut().chain(l.b.iter_mut()).for_each(|x| *x *= k);
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .flat_map(|l| l.w.iter().chain(&l.b))
            .all(|x| x.is_finite())
    }

    fn layer_forward(layer: &Layer, x: &Matrix) -> Matrix {
        let LayerSpec {
            input_dim: n_in,
            output_dim: n_out,
            activation,
        } = layer.spec;
        let mut y = Matrix::zeros(x.rows, n_out);
        for r in 0..x.rows {
            let xr = x.row(r);
            let yr = y.row_mut(r);
            yr.copy_from_slice(&layer.b);
            for (i, &xi) in xr.iter().enumerate().take(n_in) {
                if xi == 0.0 {
                    continue;
                }
                let wi = &layer.w[i * n_out..(i + 1) * n_out];
                for (yo, &w) in yr.iter_mut().zip(wi) {
                    *yo += xi * w;
                }
            }
            if activation != Activation::Linear {
                yr.iter_mut().for_each(|v| *v = activation.apply(*v));
            }
        }
        y
    }

    fn check_input(&self, x: &Matrix) -> Result<(), NeuralError> {
        if x.cols != self.input_dim() {
            return Err(NeuralError::Dim {
                expected: self.input_dim(),
                got: x.cols,
            });
        }
        Ok(())
    }

    /// Batched forward pass without retaining activations.
    pub fn predict(&self, x: &Matrix) -> Result<Matrix, NeuralError> {
        self.check_input(x)?;
        let mut cur = Self::layer_forward(&self.layers[0], x);
        for layer in &self.layers[1..] {
            cur = Self::layer_forward(layer, &cur);
        }
        Ok(cur)
    }

    pub fn predict_one(&self, x: &[f64]) -> Result<Vec<f64>, NeuralError> {
        Ok(self.predict(&Matrix::from_vec(1, x.len(), x.to_vec()))?.data)
    }

    pub fn forward(&self, x: &Matrix) -> Result<(Matrix, Cache), NeuralError> {
        self.check_input(x)?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for layer in &self.layers {
            let next = Self::layer_forward(layer, acts.last().expect("nonempty"));
            acts.push(next);
        }
        Ok((acts.last().expect("nonempty").clone(), Cache { acts }))
    }

    /// Gradients of `sum(grad_out ⊙ output)` with respect to every weight
    /// and to the input.
    pub fn backward(&self, cache: &Cache, grad_out: &Matrix) -> Result<(Gradients, Matrix), NeuralError> {
        let out = cache.output();
        if cache.acts.len() != self.layers.len() + 1 || out.cols != self.output_dim() {
            return Err(NeuralError::Architecture);
        }
        if grad_out.rows != out.rows || grad_out.cols != out.cols {
            return Err(NeuralError::Dim {
                expected: out.rows * out.cols,
                got: grad_out.rows * grad_out.cols,
            });
        }
        let mut grads = Gradients::zeros_like(self);
        let mut delta = grad_out.clone();
        for (k, layer) in self.layers.iter().enumerate().rev() {
            let n_in = layer.spec.input_dim;
            let n_out = layer.spec.output_dim;
            let y = &cache.acts[k + 1];
            let x = &cache.acts[k];
            if layer.spec.activation != Activation::Linear {
                for (d, &yv) in delta.data.iter_mut().zip(&y.data) {
                    *d *= layer.spec.activation.derivative_from_output(yv);
                }
            }
            let (gw, gb) = &mut grads.layers[k];
            let mut dx = Matrix::zeros(x.rows, n_in);
            for r in 0..x.rows {
                let dr = delta.row(r);
                for (g, &d) in gb.iter_mut().zip(dr) {
                    *g += d;
                }
                let xr = x.row(r);
                let dxr = dx.row_mut(r);
                for i in 0..n_in {
                    let wi = &layer.w[i * n_out..(i + 1) * n_out];
                    let gwi = &mut gw[i * n_out..(i + 1) * n_out];
                    let xi = xr[i];
                    let mut acc = 0.0;
                    for o in 0..n_out {
                        gwi[o] += xi * dr[o];
                        acc += wi[o] * dr[o];
                    }
                    dxr[i] = acc;
                }
            }
            delta = dx;
        }
        Ok((grads, delta))
    }

    /// `self ← τ·source + (1 − τ)·self`, weight by weight.
    pub fn soft_update(&mut self, source: &Mlp, tau: f64) -> Result<(), NeuralError> {
        if self.specs() != source.specs() {
            return Err(NeuralError::Architecture);
        }
        for (t, s) in self.layers.iter_mut().zip(&source.layers) {
            for (tw, sw) in t.w.iter_mut().zip(&s.w).chain(t.b.iter_mut().zip(&s.b)) {
                *tw = tau * sw + (1.0 - tau) * *tw;
            }
        }
        Ok(())
    }

    /// Applies `update(param, grad)` to every weight in layer order.
    pub fn apply_gradients<F: FnMut(&mut f64, f64)>(&mut self, grads: &Gradients, mut update: F) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(&grads.layers) {
            for (p, &g) in layer.w.iter_mut().zip(gw).chain(layer.b.iter_mut().zip(gb)) {
                update(p, g);
            }
        }
    }
}

fn validate_specs(specs: &[LayerSpec]) -> Result<(), NeuralError> {
    if specs.is_empty() {
        return Err(NeuralError::Spec("at least one layer is required".into()));
    }
    for (i, s) in specs.iter().enumerate() {
        if s.input_dim == 0 || s.output_dim == 0 {
            return Err(NeuralError::Spec(format!("layer {i} has a zero dimension")));
        }
        if i > 0 && specs[i - 1].output_dim != s.input_dim {
            return Err(NeuralError::Spec(format!(
                "layer {i} expects {} inputs but the previous layer yields {}",
                s.input_dim,
                specs[i - 1].output_dim
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_net_outputs_zero() {
        let net = Mlp::zeros(&stack(3, &[4], 2, Activation::Relu, Activation::Linear)).unwrap();
        assert_eq!(net.predict_one(&[1.0, -2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut net = Mlp::zeros(&[LayerSpec::new(3, 3, Activation::Linear)]).unwrap();
        for i in 0..3 {
            net.layers_mut()[0].w[i * 3 + i] = 1.0;
        }
        assert_eq!(net.predict_one(&[0.5, -1.0, 2.0]).unwrap(), vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn tanh_output_is_bounded() {
        let mut net = Mlp::init_seeded(&stack(2, &[8], 3, Activation::Relu, Activation::Tanh), 3).unwrap();
        net.scale_layer(1, 50.0);
        let y = net.predict_one(&[10.0, -7.0]).unwrap();
        assert!(y.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn init_respects_fan_in_bound_and_seed() {
        let specs = stack(9, &[16], 1, Activation::Relu, Activation::Linear);
        let a = Mlp::init_seeded(&specs, 11).unwrap();
        let b = Mlp::init_seeded(&specs, 11).unwrap();
        let c = Mlp::init_seeded(&specs, 12).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.layers()[0].w.iter().all(|w| w.abs() <= 1.0 / 3.0));
        assert!(a.layers()[1].w.iter().all(|w| w.abs() <= 0.25));
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let net = Mlp::zeros(&stack(3, &[], 1, Activation::Relu, Activation::Linear)).unwrap();
        assert_eq!(
            net.predict_one(&[1.0]),
            Err(NeuralError::Dim { expected: 3, got: 1 })
        );
        assert!(Mlp::zeros(&[LayerSpec::new(2, 3, Activation::Relu), LayerSpec::new(4, 1, Activation::Linear)]).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_weight_gradients() {
        let net = Mlp::init_seeded(&stack(2, &[5, 5], 2, Activation::Tanh, Activation::Linear), 1).unwrap();
        let x = Matrix::from_rows(&[[0.3, -0.2], [1.0, 0.5]]);
        let (_, cache) = net.forward(&x).unwrap();
        let (g, dx) = net.backward(&cache, &Matrix::zeros(2, 2)).unwrap();
        assert_eq!(g.norm(), 0.0);
        assert!(dx.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn soft_update_endpoints() {
        let specs = stack(2, &[3], 1, Activation::Relu, Activation::Linear);
        let src = Mlp::init_seeded(&specs, 1).unwrap();
        let orig = Mlp::init_seeded(&specs, 2).unwrap();
        let mut t = orig.clone();
        t.soft_update(&src, 0.0).unwrap();
        assert_eq!(t, orig);
        t.soft_update(&src, 1.0).unwrap();
        assert_eq!(t, src);
        let other = Mlp::zeros(&stack(2, &[4], 1, Activation::Relu, Activation::Linear)).unwrap();
        assert_eq!(t.soft_update(&other, 0.5), Err(NeuralError::Architecture));
    }

    #[test]
    fn hcat_and_columns_are_inverse() {
        let a = Matrix::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let b = Matrix::from_rows(&[[5.0], [6.0]]);
        let c = a.hcat(&b);
        assert_eq!(c.row(1), &[3.0, 4.0, 6.0]);
        assert_eq!(c.columns(0, 2), a);
        assert_eq!(c.columns(2, 3), b);
    }
}
