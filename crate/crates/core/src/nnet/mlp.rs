//! Dense multilayer perceptron with explicit reverse-mode gradients.
//!
//! Weights are row-major with shape `(layer_sizes[l + 1], layer_sizes[l])`.
//! Hidden layers apply the activation; the output layer is affine.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::real::{all_finite, Real};
use crate::rng::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply<T: Real>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(T::zero()),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `y`.
    #[inline]
    fn derivative<T: Real>(self, z: T, y: T) -> T {
        match self {
            Activation::Tanh => T::one() - y * y,
            Activation::Relu => {
                if z > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
        }
    }

    /// Orthogonal-init gain for hidden layers.
    pub fn gain(self) -> f64 {
        match self {
            Activation::Tanh => 1.0,
            Activation::Relu => std::f64::consts::SQRT_2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "tanh" => Some(Activation::Tanh),
            "relu" => Some(Activation::Relu),
            _ => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
    pub activation: Activation,
}

/// Gradient buffer congruent with an [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrad<T> {
    pub weights: Vec<Vec<T>>,
    pub biases: Vec<Vec<T>>,
}

/// Intermediate values of one forward pass, kept for the backward pass.
struct Trace<T> {
    /// Inputs to each layer (`acts[0]` is the network input).
    acts: Vec<Vec<T>>,
    /// Pre-activations of each layer.
    pre: Vec<Vec<T>>,
}

impl<T: Real> MlpParams<T> {
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "layer sizes must have length >= 2 and be positive, got {layer_sizes:?}"
            )));
        }
        let weights = layer_sizes
            .windows(2)
            .map(|w| vec![T::zero(); w[0] * w[1]])
            .collect();
        let biases = layer_sizes[1..].iter().map(|&n| vec![T::zero(); n]).collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
            activation,
        })
    }

    /// Checks shapes and finiteness.
    pub fn from_parts(
        layer_sizes: Vec<usize>,
        weights: Vec<Vec<T>>,
        biases: Vec<Vec<T>>,
        activation: Activation,
    ) -> Result<Self> {
        let params = Self {
            layer_sizes,
            weights,
            biases,
            activation,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.layer_sizes.len();
        if n < 2 || self.layer_sizes.contains(&0) {
            return Err(Error::InvalidInput(format!(
                "bad layer sizes {:?}",
                self.layer_sizes
            )));
        }
        if self.weights.len() != n - 1 || self.biases.len() != n - 1 {
            return Err(Error::InvalidInput(format!(
                "expected {} layers, got {} weight and {} bias blocks",
                n - 1,
                self.weights.len(),
                self.biases.len()
            )));
        }
        for l in 0..n - 1 {
            let (fan_in, fan_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            if self.weights[l].len() != fan_in * fan_out || self.biases[l].len() != fan_out {
                return Err(Error::InvalidInput(format!(
                    "layer {l}: expected {fan_out}x{fan_in} weights and {fan_out} biases"
                )));
            }
            if !all_finite(&self.weights[l]) || !all_finite(&self.biases[l]) {
                return Err(Error::InvalidInput(format!("layer {l}: non-finite parameter")));
            }
        }
        Ok(())
    }

    /// Hidden layers use orthogonal rows/columns scaled by the activation
    /// gain, the last layer is scaled by `output_gain`, biases start at zero.
    pub fn init_orthogonal(
        layer_sizes: &[usize],
        activation: Activation,
        output_gain: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut params = Self::zeros(layer_sizes, activation)?;
        let last = params.weights.len() - 1;
        for (l, w) in params.weights.iter_mut().enumerate() {
            let gain = if l == last { output_gain } else { activation.gain() };
            let rows = layer_sizes[l + 1];
            let cols = layer_sizes[l];
            *w = super::init::orthogonal(rows, cols, gain, rng);
        }
        Ok(params)
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().expect("validated non-empty")
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().chain(&self.biases).map(Vec::len).sum()
    }

    pub fn forward(&self, input: &[T]) -> Result<Vec<T>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        let last = self.weights.len() - 1;
        for l in 0..=last {
            let mut z = self.affine(l, &x);
            if l != last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
            }
            x = z;
        }
        Ok(x)
    }

    /// Gradient of `upstream . forward(input)` with respect to every parameter.
    pub fn backward(&self, input: &[T], upstream: &[T]) -> Result<MlpGrad<T>> {
        let mut grad = MlpGrad::zeros_like(self);
        self.accumulate_backward(input, upstream, T::one(), &mut grad)?;
        Ok(grad)
    }

    /// Forward pass followed by `grad += scale * d(upstream . output)/dparams`,
    /// where `upstream` is computed from the output by `upstream_of`.
    /// Returns the network output.
    pub(crate) fn forward_backward_with(
        &self,
        input: &[T],
        grad: &mut MlpGrad<T>,
        upstream_of: impl FnOnce(&[T]) -> Vec<T>,
    ) -> Result<Vec<T>> {
        self.check_input(input)?;
        let trace = self.trace(input);
        let out = trace.pre.last().expect("at least one layer").clone();
        let upstream = upstream_of(&out);
        self.backprop(&trace, &upstream, T::one(), grad)?;
        Ok(out)
    }

    pub(crate) fn accumulate_backward(
        &self,
        input: &[T],
        upstream: &[T],
        scale: T,
        grad: &mut MlpGrad<T>,
    ) -> Result<()> {
        self.check_input(input)?;
        let trace = self.trace(input);
        self.backprop(&trace, upstream, scale, grad)
    }

    fn check_input(&self, input: &[T]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::InvalidInput(format!(
                "network input has length {}, expected {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    fn affine(&self, l: usize, x: &[T]) -> Vec<T> {
        let fan_in = self.layer_sizes[l];
        self.weights[l]
            .chunks_exact(fan_in)
            .zip(&self.biases[l])
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &xi)| acc + w * xi))
            .collect()
    }

    fn trace(&self, input: &[T]) -> Trace<T> {
        let last = self.weights.len() - 1;
        let mut acts = Vec::with_capacity(last + 1);
        let mut pre = Vec::with_capacity(last + 1);
        let mut x = input.to_vec();
        for l in 0..=last {
            let z = self.affine(l, &x);
            let next = if l == last {
                Vec::new()
            } else {
                z.iter().map(|&v| self.activation.apply(v)).collect()
            };
            acts.push(x);
            pre.push(z);
            x = next;
        }
        Trace { acts, pre }
    }

    fn backprop(
        &self,
        trace: &Trace<T>,
        upstream: &[T],
        scale: T,
        grad: &mut MlpGrad<T>,
    ) -> Result<()> {
        if upstream.len() != self.output_dim() {
            return Err(Error::InvalidInput(format!(
                "upstream has length {}, expected {}",
                upstream.len(),
                self.output_dim()
            )));
        }
        let mut delta: Vec<T> = upstream.iter().map(|&g| g * scale).collect();
        for l in (0..self.weights.len()).rev() {
            let x = &trace.acts[l];
            let fan_in = x.len();
            for (i, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                grad.biases[l][i] = grad.biases[l][i] + d;
                let row = &mut grad.weights[l][i * fan_in..(i + 1) * fan_in];
                for (g, &xj) in row.iter_mut().zip(x) {
                    *g = *g + d * xj;
                }
            }
            if l == 0 {
                break;
            }
            // Propagate through W^T and the previous layer's activation.
            let w = &self.weights[l];
            let z_prev = &trace.pre[l - 1];
            let mut next = vec![T::zero(); fan_in];
            for (i, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                for (n, &wij) in next.iter_mut().zip(&w[i * fan_in..(i + 1) * fan_in]) {
                    *n = *n + d * wij;
                }
            }
            for ((n, &z), &y) in next.iter_mut().zip(z_prev).zip(x) {
                *n = *n * self.activation.derivative(z, y);
            }
            delta = next;
        }
        Ok(())
    }

    /// `self += step * grad`.
    pub fn apply(&mut self, grad: &MlpGrad<T>, step: T) {
        for (w, g) in self.weights.iter_mut().zip(&grad.weights) {
            w.iter_mut().zip(g).for_each(|(w, &g)| *w = *w + step * g);
        }
        for (b, g) in self.biases.iter_mut().zip(&grad.biases) {
            b.iter_mut().zip(g).for_each(|(b, &g)| *b = *b + step * g);
        }
    }

    /// All parameters, layer by layer (weights then biases).
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.num_params());
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }

    pub fn set_flat(&mut self, values: &[T]) -> Result<()> {
        if values.len() != self.num_params() {
            return Err(Error::InvalidInput(format!(
                "expected {} parameters, got {}",
                self.num_params(),
                values.len()
            )));
        }
        let mut it = values.iter().copied();
        for (w, b) in self.weights.iter_mut().zip(self.biases.iter_mut()) {
            w.iter_mut().chain(b.iter_mut()).for_each(|p| {
                *p = it.next().expect("length checked");
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.biases).all(|v| all_finite(v))
    }
}

impl<T: Real> MlpGrad<T> {
    pub fn zeros_like(params: &MlpParams<T>) -> Self {
        Self {
            weights: params.weights.iter().map(|w| vec![T::zero(); w.len()]).collect(),
            biases: params.biases.iter().map(|b| vec![T::zero(); b.len()]).collect(),
        }
    }

    fn values_mut(&mut self) -> impl Iterator<Item = &mut T> {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
    }

    fn values(&self) -> impl Iterator<Item = &T> {
        self.weights.iter().chain(&self.biases).flat_map(|v| v.iter())
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.iter_mut().zip(b).for_each(|(a, &b)| *a = *a + b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.iter_mut().zip(b).for_each(|(a, &b)| *a = *a + b);
        }
    }

    pub fn scale(&mut self, c: T) {
        self.values_mut().for_each(|v| *v = *v * c);
    }

    pub fn norm_sq(&self) -> T {
        self.values().fold(T::zero(), |acc, &v| acc + v * v)
    }

    pub fn is_finite(&self) -> bool {
        self.values().all(|v| v.is_finite())
    }

    /// Same ordering as [`MlpParams::flat`].
    pub fn flat(&self) -> Vec<T> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}
