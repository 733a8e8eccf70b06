//! Finite-width fully connected network with hand-written reverse mode.
//!
//! Layer `l` computes `h⁽ˡ⁾ = W⁽ˡ⁾ g⁽ˡ⁻¹⁾ + β b⁽ˡ⁾`, `g⁽ˡ⁾ = ρ(h⁽ˡ⁾)` for the
//! `L` hidden layers and `f = W⁽ᴸ⁺¹⁾ g⁽ᴸ⁾ + b⁽ᴸ⁺¹⁾` at the output. Weights
//! are drawn with variance `c_ρ/fan_in` (`ν/m` at the output), hidden bias
//! entries are standard normal and the output bias has variance `ν`.
//!
//! Parameters flatten layer by layer, each layer as its weight matrix in
//! row-major order followed by its bias vector.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix, SymMatrix};
use crate::math;
use crate::rng::{normal, seeded};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "snake_case"))]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => math::tanh(x),
        }
    }

    /// Derivative; ReLU uses 0 at the kink.
    #[inline]
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = math::tanh(x);
                1.0 - t * t
            }
        }
    }

    /// `c_ρ = 1 / E[ρ(z)²]` for standard normal `z`.
    pub fn variance_constant(self) -> f64 {
        match self {
            Activation::Relu => 2.0,
            Activation::Tanh => {
                1.0 / gaussian_mean(|z| {
                    let t = math::tanh(z);
                    t * t
                })
            }
        }
    }
}

/// `E[h(z)]` for `z ~ N(0,1)` by composite Simpson on `[-12, 12]`.
fn gaussian_mean(h: impl Fn(f64) -> f64) -> f64 {
    let steps = 4000;
    let (a, b) = (-12.0, 12.0);
    let dx = (b - a) / steps as f64;
    let w = |z: f64| h(z) * math::exp(-0.5 * z * z);
    let mut acc = w(a) + w(b);
    for i in 1..steps {
        let z = a + i as f64 * dx;
        acc += if i % 2 == 1 { 4.0 } else { 2.0 } * w(z);
    }
    acc * dx / 3.0 / math::sqrt(2.0 * math::PI)
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MlpConfig {
    pub input_dim: usize,
    /// Number of hidden layers.
    pub depth: usize,
    pub width: usize,
    pub activation: Activation,
    pub bias_scale: f64,
    pub last_layer_scale: f64,
    pub seed: u64,
}

impl MlpConfig {
    pub fn relu(input_dim: usize, depth: usize, width: usize, seed: u64) -> Self {
        MlpConfig {
            input_dim,
            depth,
            width,
            activation: Activation::Relu,
            bias_scale: 1.0,
            last_layer_scale: 1e-2,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::invalid("input_dim", "must be at least 1"));
        }
        if self.depth == 0 {
            return Err(Error::invalid("depth", "must be at least 1"));
        }
        if self.width == 0 {
            return Err(Error::invalid("width", "must be at least 1"));
        }
        if !(self.bias_scale >= 0.0 && self.bias_scale.is_finite()) {
            return Err(Error::invalid("bias_scale", "must be nonnegative"));
        }
        if !(self.last_layer_scale > 0.0 && self.last_layer_scale.is_finite()) {
            return Err(Error::invalid("last_layer_scale", "must be positive"));
        }
        Ok(())
    }

    /// `(rows, cols)` of every weight matrix, input layer first.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = vec![(self.width, self.input_dim)];
        for _ in 1..self.depth {
            shapes.push((self.width, self.width));
        }
        shapes.push((1, self.width));
        shapes
    }

    pub fn param_count(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpState {
    config: MlpConfig,
    layers: Vec<Layer>,
}

/// Activations of one batch, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `pre[l]` holds `h⁽ˡ⁺¹⁾` per sample (rows).
    pre: Vec<Matrix>,
    /// `post[0]` is the input, `post[l]` is `g⁽ˡ⁾`.
    post: Vec<Matrix>,
    output: Vec<f64>,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    pub fn len(&self) -> usize {
        self.output.len()
    }

    pub fn is_empty(&self) -> bool {
        self.output.is_empty()
    }
}

/// `∂f/∂h⁽ˡ⁾` per sample for every hidden layer.
#[derive(Debug, Clone)]
pub struct Backward {
    deltas: Vec<Matrix>,
}

pub const DEFAULT_MEMORY_BUDGET: usize = 2 << 30;

impl MlpState {
    pub fn init(config: MlpConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = seeded(config.seed);
        let c = config.activation.variance_constant();
        let shapes = config.layer_shapes();
        let last = shapes.len() - 1;
        let mut layers = Vec::with_capacity(shapes.len());
        for (l, &(rows, cols)) in shapes.iter().enumerate() {
            let std = if l == last {
                math::sqrt(config.last_layer_scale / cols as f64)
            } else {
                math::sqrt(c / cols as f64)
            };
            let weights = Matrix::from_fn(rows, cols, |_, _| std * normal(&mut rng));
            let bias_std = if l == last {
                math::sqrt(config.last_layer_scale)
            } else {
                1.0
            };
            let bias = (0..rows).map(|_| bias_std * normal(&mut rng)).collect();
            layers.push(Layer { weights, bias });
        }
        Ok(MlpState { config, layers })
    }

    /// Builds a state from explicit layers; shapes must match the config.
    pub fn from_layers(config: MlpConfig, layers: Vec<Layer>) -> Result<Self> {
        config.validate()?;
        let shapes = config.layer_shapes();
        if layers.len() != shapes.len() {
            return Err(Error::DimensionMismatch {
                expected: shapes.len(),
                found: layers.len(),
            });
        }
        for (layer, &(r, c)) in layers.iter().zip(&shapes) {
            if layer.weights.rows() != r || layer.weights.cols() != c || layer.bias.len() != r {
                return Err(Error::DimensionMismatch {
                    expected: r * c + r,
                    found: layer.weights.rows() * layer.weights.cols() + layer.bias.len(),
                });
            }
        }
        Ok(MlpState { config, layers })
    }

    pub fn config(&self) -> &MlpConfig {
        &self.config
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn param_count(&self) -> usize {
        self.config.param_count()
    }

    fn bias_factor(&self, layer: usize) -> f64 {
        if layer + 1 == self.layers.len() {
            1.0
        } else {
            self.config.bias_scale
        }
    }

    pub fn forward(&self, x: &Matrix) -> Result<Vec<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    pub fn forward_cached(&self, x: &Matrix) -> Result<ForwardCache> {
        if x.cols() != self.config.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.config.input_dim,
                found: x.cols(),
            });
        }
        let n = x.rows();
        let act = self.config.activation;
        let mut pre = Vec::with_capacity(self.config.depth);
        let mut post = vec![x.clone()];
        let hidden = self.layers.len() - 1;
        for l in 0..hidden {
            let layer = &self.layers[l];
            let beta = self.bias_factor(l);
            let input = &post[l];
            let m = layer.weights.rows();
            let mut h = Matrix::zeros(n, m);
            for o in 0..m {
                let w = layer.weights.row(o);
                let b = beta * layer.bias[o];
                for i in 0..n {
                    h[(i, o)] = dot(input.row(i), w) + b;
                }
            }
            if h.as_slice().iter().any(|v| !v.is_finite()) {
                return Err(Error::Overflow { layer: l + 1 });
            }
            let mut g = h.clone();
            g.as_mut_slice().iter_mut().for_each(|v| *v = act.apply(*v));
            pre.push(h);
            post.push(g);
        }
        let out = &self.layers[hidden];
        let top = &post[hidden];
        let output: Vec<f64> = (0..n)
            .map(|i| dot(top.row(i), out.weights.row(0)) + out.bias[0])
            .collect();
        if output.iter().any(|v| !v.is_finite()) {
            return Err(Error::Overflow { layer: hidden + 1 });
        }
        Ok(ForwardCache { pre, post, output })
    }

    /// Per-sample sensitivities of the output to every hidden pre-activation.
    pub fn backward(&self, cache: &ForwardCache) -> Backward {
        let n = cache.len();
        let act = self.config.activation;
        let depth = cache.pre.len();
        let mut deltas = vec![Matrix::zeros(0, 0); depth];
        let out_w = self.layers[depth].weights.row(0);
        let mut delta = Matrix::from_fn(n, out_w.len(), |i, o| {
            out_w[o] * act.derivative(cache.pre[depth - 1][(i, o)])
        });
        for l in (0..depth).rev() {
            if l > 0 {
                let w = &self.layers[l].weights;
                let mut prev = Matrix::zeros(n, w.cols());
                for o in 0..w.rows() {
                    let row = w.row(o);
                    for i in 0..n {
                        let d = delta[(i, o)];
                        if d != 0.0 {
                            axpy(d, row, prev.row_mut(i));
                        }
                    }
                }
                for i in 0..n {
                    for (v, &h) in prev.row_mut(i).iter_mut().zip(cache.pre[l - 1].row(i)) {
                        *v *= act.derivative(h);
                    }
                }
                deltas[l] = core::mem::replace(&mut delta, prev);
            } else {
                deltas[0] = core::mem::replace(&mut delta, Matrix::zeros(0, 0));
            }
        }
        Backward { deltas }
    }

    /// Flat gradient of `Σᵢ coefᵢ·f(xᵢ)`.
    pub fn weighted_gradient(
        &self,
        cache: &ForwardCache,
        back: &Backward,
        coefs: &[f64],
    ) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.param_count()];
        self.accumulate(cache, back, coefs, &mut grad)?;
        Ok(grad)
    }

    /// In place `w ← w − lr·∇_w Σᵢ coefᵢ·f(xᵢ)`.
    pub fn descend(
        &mut self,
        cache: &ForwardCache,
        back: &Backward,
        coefs: &[f64],
        lr: f64,
    ) -> Result<()> {
        check(cache.len(), coefs.len())?;
        let n = cache.len();
        let depth = self.layers.len() - 1;
        for l in 0..=depth {
            let beta = self.bias_factor(l);
            let input = &cache.post[l];
            let layer = &mut self.layers[l];
            for o in 0..layer.weights.rows() {
                let row = layer.weights.row_mut(o);
                let mut bias_grad = 0.0;
                for i in 0..n {
                    let d = coefs[i]
                        * if l == depth {
                            1.0
                        } else {
                            back.deltas[l][(i, o)]
                        };
                    if d != 0.0 {
                        axpy(-lr * d, input.row(i), row);
                        bias_grad += d;
                    }
                }
                layer.bias[o] -= lr * beta * bias_grad;
            }
        }
        Ok(())
    }

    fn accumulate(
        &self,
        cache: &ForwardCache,
        back: &Backward,
        coefs: &[f64],
        grad: &mut [f64],
    ) -> Result<()> {
        check(cache.len(), coefs.len())?;
        let n = cache.len();
        let depth = self.layers.len() - 1;
        let mut offset = 0;
        for l in 0..=depth {
            let beta = self.bias_factor(l);
            let (rows, cols) = (self.layers[l].weights.rows(), self.layers[l].weights.cols());
            let input = &cache.post[l];
            let block = &mut grad[offset..offset + rows * cols + rows];
            for o in 0..rows {
                let mut bias_grad = 0.0;
                for i in 0..n {
                    let d = coefs[i]
                        * if l == depth {
                            1.0
                        } else {
                            back.deltas[l][(i, o)]
                        };
                    if d != 0.0 {
                        axpy(d, input.row(i), &mut block[o * cols..(o + 1) * cols]);
                        bias_grad += d;
                    }
                }
                block[rows * cols + o] += beta * bias_grad;
            }
            offset += rows * cols + rows;
        }
        Ok(())
    }

    /// `∇_w f(x)` flattened in parameter order.
    pub fn per_sample_gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let input = Matrix::from_vec(1, x.len(), x.to_vec())?;
        let cache = self.forward_cached(&input)?;
        let back = self.backward(&cache);
        self.weighted_gradient(&cache, &back, &[1.0])
    }

    /// Dense `n × p` Jacobian, refused when it would exceed `budget` bytes.
    pub fn jacobian(&self, x: &Matrix, budget: usize) -> Result<Matrix> {
        let n = x.rows();
        let p = self.param_count();
        let required = n
            .saturating_mul(p)
            .saturating_mul(core::mem::size_of::<f64>());
        if required > budget {
            return Err(Error::MemoryBudget { required, budget });
        }
        let cache = self.forward_cached(x)?;
        let back = self.backward(&cache);
        let mut jac = Matrix::zeros(n, p);
        for i in 0..n {
            let mut coefs = vec![0.0; n];
            coefs[i] = 1.0;
            let row = self.weighted_gradient(&cache, &back, &coefs)?;
            jac.row_mut(i).copy_from_slice(&row);
        }
        Ok(jac)
    }

    /// `K = (1/m)·J Jᵀ` computed from per-layer inner products without
    /// forming `J`.
    pub fn empirical_ntk(&self, x: &Matrix) -> Result<SymMatrix> {
        let cache = self.forward_cached(x)?;
        let back = self.backward(&cache);
        Ok(self.ntk_from_cache(&cache, &back))
    }

    pub fn ntk_from_cache(&self, cache: &ForwardCache, back: &Backward) -> SymMatrix {
        let depth = self.layers.len() - 1;
        let inv_m = 1.0 / self.config.width as f64;
        let b2 = self.config.bias_scale * self.config.bias_scale;
        SymMatrix::from_fn(cache.len(), |i, j| {
            let top = &cache.post[depth];
            let mut k = dot(top.row(i), top.row(j)) + 1.0;
            for l in 0..depth {
                let dd = dot(back.deltas[l].row(i), back.deltas[l].row(j));
                let gg = dot(cache.post[l].row(i), cache.post[l].row(j));
                k += dd * (gg + b2);
            }
            inv_m * k
        })
    }

    /// Parameters in flattening order.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weights.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn unflatten(config: MlpConfig, params: &[f64]) -> Result<Self> {
        config.validate()?;
        check(config.param_count(), params.len())?;
        let mut layers = Vec::new();
        let mut offset = 0;
        for (r, c) in config.layer_shapes() {
            let weights = Matrix::from_vec(r, c, params[offset..offset + r * c].to_vec())?;
            offset += r * c;
            let bias = params[offset..offset + r].to_vec();
            offset += r;
            layers.push(Layer { weights, bias });
        }
        Ok(MlpState { config, layers })
    }

    /// A new state with every parameter shifted by `delta`.
    pub fn apply_update(&self, delta: &[f64]) -> Result<MlpState> {
        check(self.param_count(), delta.len())?;
        let mut next = self.clone();
        let mut offset = 0;
        for layer in &mut next.layers {
            let w = layer.weights.as_mut_slice();
            axpy(1.0, &delta[offset..offset + w.len()], w);
            offset += w.len();
            let len = layer.bias.len();
            axpy(1.0, &delta[offset..offset + len], &mut layer.bias);
            offset += len;
        }
        Ok(next)
    }

    /// `‖w − other‖₂` over all parameters.
    pub fn distance(&self, other: &MlpState) -> Result<f64> {
        check(self.param_count(), other.param_count())?;
        let mut acc = 0.0;
        for (a, b) in self.layers.iter().zip(&other.layers) {
            for (x, y) in a.weights.as_slice().iter().zip(b.weights.as_slice()) {
                acc += (x - y) * (x - y);
            }
            for (x, y) in a.bias.iter().zip(&b.bias) {
                acc += (x - y) * (x - y);
            }
        }
        Ok(math::sqrt(acc))
    }

    pub fn param_norm(&self) -> f64 {
        let mut acc = 0.0;
        for layer in &self.layers {
            acc += dot(layer.weights.as_slice(), layer.weights.as_slice())
                + dot(&layer.bias, &layer.bias);
        }
        math::sqrt(acc)
    }
}

fn check(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
