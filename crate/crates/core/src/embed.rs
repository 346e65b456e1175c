//! Descriptors and the siamese embedding network.
//!
//! The network is a stack of fully connected layers, ReLU on hidden layers
//! and identity on the output, optionally followed by L2 normalization. Both
//! branches of a pair share the same parameters, so their gradients are
//! accumulated into a single [`ModelGradients`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dims, Error, Result};
use crate::loss::{gcl_descriptor_gradients, LossConfig};

/// Norms below this are treated as zero when normalizing.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Descriptor {
    pub values: Vec<f64>,
    /// Set when `values` has been scaled to unit length.
    pub normalized: bool,
}

impl Descriptor {
    pub fn new(values: Vec<f64>) -> Self {
        Self {
            values,
            normalized: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Scales to unit length. Returns `false` (and zeroes the vector) when
    /// the norm is below [`NORM_EPS`].
    pub fn l2_normalize(&mut self) -> bool {
        let n = self.norm();
        self.normalized = true;
        if n < NORM_EPS {
            self.values.iter_mut().for_each(|v| *v = 0.0);
            return false;
        }
        self.values.iter_mut().for_each(|v| *v /= n);
        true
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

/// Output of a forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct Embedding {
    pub descriptor: Descriptor,
    /// Normalization was requested but the pre-norm output was (near) zero.
    pub degenerate: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl DenseLayer {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
        }
    }

    fn apply(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(
            self.weights
                .chunks_exact(self.in_dim)
                .zip(&self.bias)
                .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b),
        );
    }

    fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingModel {
    pub layers: Vec<DenseLayer>,
    pub output_normalize: bool,
}

/// Gradient with the same shape as the model parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGradients {
    pub layers: Vec<DenseLayer>,
}

impl ModelGradients {
    pub fn zeros_like(model: &EmbeddingModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| DenseLayer::zeros(l.in_dim, l.out_dim))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ModelGradients) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights
                .iter_mut()
                .zip(&b.weights)
                .for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for l in &mut self.layers {
            l.weights
                .iter_mut()
                .chain(l.bias.iter_mut())
                .for_each(|v| *v *= s);
        }
    }

    /// Flattened in the same order as [`EmbeddingModel::flat_params`].
    pub fn to_flat(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }
}

/// Cached activations of one forward pass, needed for backpropagation.
struct Trace {
    /// `inputs[k]` is the input to layer `k`.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation outputs of each layer.
    pre: Vec<Vec<f64>>,
    raw_norm: f64,
    output: Descriptor,
    degenerate: bool,
}

impl EmbeddingModel {
    /// Uniform `±1/sqrt(fan_in)` initialization. `dims` lists the input
    /// dimension followed by each layer's output dimension (1 to 3 layers).
    pub fn new(dims: &[usize], output_normalize: bool, seed: u64) -> Result<Self> {
        if !(2..=4).contains(&dims.len()) {
            return Err(Error::invalid(format!(
                "model needs 1 to 3 layers, got dims {dims:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::invalid("layer dimensions must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let mut draw = || rng.random_range(-bound..=bound);
                let weights = (0..fan_in * fan_out).map(|_| draw()).collect();
                let bias = (0..fan_out).map(|_| draw()).collect();
                DenseLayer {
                    in_dim: fan_in,
                    out_dim: fan_out,
                    weights,
                    bias,
                }
            })
            .collect();
        Ok(Self {
            layers,
            output_normalize,
        })
    }

    pub fn from_layers(layers: Vec<DenseLayer>, output_normalize: bool) -> Result<Self> {
        let m = Self {
            layers,
            output_normalize,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.layers.len()) {
            return Err(Error::invalid("model needs 1 to 3 layers"));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.in_dim == 0
                || l.out_dim == 0
                || l.weights.len() != l.in_dim * l.out_dim
                || l.bias.len() != l.out_dim
            {
                return Err(Error::invalid(format!("layer {i} has inconsistent shape")));
            }
            if i > 0 && self.layers[i - 1].out_dim != l.in_dim {
                return Err(Error::invalid(format!(
                    "layer {i} expects {} inputs but the previous layer emits {}",
                    l.in_dim,
                    self.layers[i - 1].out_dim
                )));
            }
            if !l.weights.iter().chain(&l.bias).all(|v| v.is_finite()) {
                return Err(Error::NonFinite(format!("layer {i} parameters")));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    /// Input dimension followed by every layer's output dimension.
    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.out_dim))
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(DenseLayer::param_count).sum()
    }

    /// Per layer: weights (row-major), then bias.
    pub fn flat_params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_flat_params(&mut self, params: &[f64]) -> Result<()> {
        check_dims(self.param_count(), params.len())?;
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|v| {
                *v = it.next().unwrap_or_default();
            });
        }
        Ok(())
    }

    /// `params <- params - lr * grads`.
    pub fn sgd_step(&mut self, grads: &ModelGradients, lr: f64) {
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.weights
                .iter_mut()
                .zip(&g.weights)
                .for_each(|(w, d)| *w -= lr * d);
            l.bias
                .iter_mut()
                .zip(&g.bias)
                .for_each(|(b, d)| *b -= lr * d);
        }
    }

    fn trace(&self, input: &[f64]) -> Result<Trace> {
        check_dims(self.input_dim(), input.len())?;
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.out_dim);
            layer.apply(&x, &mut z);
            let next = if k < last {
                z.iter().map(|v| v.max(0.0)).collect()
            } else {
                z.clone()
            };
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
        }
        let mut output = Descriptor::new(x);
        let raw_norm = output.norm();
        let degenerate = self.output_normalize && !output.l2_normalize();
        Ok(Trace {
            inputs,
            pre,
            raw_norm,
            output,
            degenerate,
        })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Embedding> {
        let t = self.trace(input)?;
        Ok(Embedding {
            descriptor: t.output,
            degenerate: t.degenerate,
        })
    }

    /// Backpropagates `grad_out` (gradient w.r.t. the final descriptor) and
    /// accumulates parameter gradients into `acc`.
    fn backprop(&self, t: &Trace, grad_out: &[f64], acc: &mut ModelGradients) {
        let mut g: Vec<f64> = if !self.output_normalize {
            grad_out.to_vec()
        } else if t.degenerate {
            vec![0.0; grad_out.len()]
        } else {
            // y = z / |z|  =>  dL/dz = (g - y (y . g)) / |z|
            let y = &t.output.values;
            let yg: f64 = y.iter().zip(grad_out).map(|(a, b)| a * b).sum();
            grad_out
                .iter()
                .zip(y)
                .map(|(gi, yi)| (gi - yi * yg) / t.raw_norm)
                .collect()
        };
        let last = self.layers.len() - 1;
        for k in (0..self.layers.len()).rev() {
            if k < last {
                // ReLU, subgradient 0 at 0
                g.iter_mut().zip(&t.pre[k]).for_each(|(gi, z)| {
                    if *z <= 0.0 {
                        *gi = 0.0
                    }
                });
            }
            let layer = &self.layers[k];
            let dst = &mut acc.layers[k];
            let x = &t.inputs[k];
            for (o, go) in g.iter().enumerate() {
                if *go == 0.0 {
                    continue;
                }
                dst.bias[o] += go;
                let row = &mut dst.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                row.iter_mut().zip(x).for_each(|(w, xi)| *w += go * xi);
            }
            if k > 0 {
                let mut gin = vec![0.0; layer.in_dim];
                for (o, go) in g.iter().enumerate() {
                    if *go == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                    gin.iter_mut().zip(row).for_each(|(gi, w)| *gi += go * w);
                }
                g = gin;
            }
        }
    }

    /// Parameter gradient of `<grad_out, f(input)>` for a single branch.
    pub fn backward_single(&self, input: &[f64], grad_out: &[f64]) -> Result<ModelGradients> {
        let t = self.trace(input)?;
        check_dims(self.output_dim(), grad_out.len())?;
        let mut acc = ModelGradients::zeros_like(self);
        self.backprop(&t, grad_out, &mut acc);
        Ok(acc)
    }

    /// Loss of one pair under the Generalized Contrastive Loss.
    pub fn pair_loss(
        &self,
        input_a: &[f64],
        input_b: &[f64],
        psi: f64,
        cfg: &LossConfig,
    ) -> Result<f64> {
        let a = self.forward(input_a)?.descriptor;
        let b = self.forward(input_b)?.descriptor;
        Ok(gcl_descriptor_gradients(&a, &b, psi, cfg)?.loss)
    }

    /// Loss and exact parameter gradient of one siamese pair.
    pub fn backward_pair(
        &self,
        input_a: &[f64],
        input_b: &[f64],
        psi: f64,
        cfg: &LossConfig,
    ) -> Result<(f64, ModelGradients)> {
        let mut acc = ModelGradients::zeros_like(self);
        let loss = self.accumulate_pair(input_a, input_b, psi, cfg, &mut acc)?;
        Ok((loss, acc))
    }

    /// Adds the pair's parameter gradient into `acc` and returns its loss.
    pub fn accumulate_pair(
        &self,
        input_a: &[f64],
        input_b: &[f64],
        psi: f64,
        cfg: &LossConfig,
        acc: &mut ModelGradients,
    ) -> Result<f64> {
        let ta = self.trace(input_a)?;
        let tb = self.trace(input_b)?;
        let g = gcl_descriptor_gradients(&ta.output, &tb.output, psi, cfg)?;
        self.backprop(&ta, &g.grad_a, acc);
        self.backprop(&tb, &g.grad_b, acc);
        Ok(g.loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity(dim: usize) -> EmbeddingModel {
        let mut l = DenseLayer::zeros(dim, dim);
        for i in 0..dim {
            l.weights[i * dim + i] = 1.0;
        }
        EmbeddingModel::from_layers(vec![l], false).unwrap()
    }

    #[test]
    fn identity_model_passes_input_through() {
        let m = identity(3);
        let out = m.forward(&[0.5, -1.0, 2.0]).unwrap();
        assert_eq!(out.descriptor.values, vec![0.5, -1.0, 2.0]);
        assert!(!out.degenerate);
    }

    #[test]
    fn zero_model_with_normalization_is_degenerate() {
        let m = EmbeddingModel::from_layers(vec![DenseLayer::zeros(2, 3)], true).unwrap();
        let out = m.forward(&[1.0, 1.0]).unwrap();
        assert!(out.degenerate);
        assert!(out.descriptor.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn normalized_outputs_have_unit_norm() {
        let m = EmbeddingModel::new(&[4, 8, 3], true, 7).unwrap();
        let out = m.forward(&[0.3, -0.1, 0.8, 0.5]).unwrap();
        assert!((out.descriptor.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn input_dimension_checked() {
        let m = EmbeddingModel::new(&[4, 3], false, 1).unwrap();
        assert!(matches!(
            m.forward(&[1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn layer_count_and_shape_checked() {
        assert!(EmbeddingModel::new(&[4], false, 0).is_err());
        assert!(EmbeddingModel::new(&[4, 3, 3, 3, 3], false, 0).is_err());
        assert!(EmbeddingModel::new(&[4, 0, 3], false, 0).is_err());
        let bad = vec![DenseLayer::zeros(2, 3), DenseLayer::zeros(4, 1)];
        assert!(EmbeddingModel::from_layers(bad, false).is_err());
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let a = EmbeddingModel::new(&[9, 5, 2], true, 42).unwrap();
        let b = EmbeddingModel::new(&[9, 5, 2], true, 42).unwrap();
        let c = EmbeddingModel::new(&[9, 5, 2], true, 43).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.layers[0].weights.iter().all(|w| w.abs() <= 1.0 / 3.0));
    }

    #[test]
    fn positive_identical_pair_has_zero_gradient() {
        let m = EmbeddingModel::new(&[3, 6, 2], true, 5).unwrap();
        let x = [0.2, 0.7, -0.4];
        let (loss, g) = m
            .backward_pair(&x, &x, 1.0, &LossConfig::default())
            .unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.to_flat().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn flat_params_round_trip() {
        let mut m = EmbeddingModel::new(&[3, 4, 2], false, 9).unwrap();
        let p = m.flat_params();
        assert_eq!(p.len(), m.param_count());
        let shifted: Vec<f64> = p.iter().map(|v| v + 1.0).collect();
        m.set_flat_params(&shifted).unwrap();
        assert_eq!(m.flat_params(), shifted);
        assert!(m.set_flat_params(&[1.0]).is_err());
    }
}
