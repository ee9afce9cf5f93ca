use alloc::vec;
use alloc::vec::Vec;

use super::RandomStream;
use crate::error::{check_finite, check_len};
use crate::{math, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => math::tanh_fast(x),
            Activation::Relu => x.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn grad_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Parameters of a fully connected network.
///
/// All parameters live in one flat buffer: for each layer the weight matrix
/// (row = output unit, row-major) followed by the bias vector. Hidden layers
/// use `activation`, the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    layer_sizes: Vec<usize>,
    activation: Activation,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

fn layer_offsets(layer_sizes: &[usize]) -> Vec<usize> {
    let mut offsets = Vec::with_capacity(layer_sizes.len());
    let mut acc = 0;
    for w in layer_sizes.windows(2) {
        offsets.push(acc);
        acc += w[0] * w[1] + w[1];
    }
    offsets.push(acc);
    offsets
}

impl MlpParams {
    /// All-zero network.
    pub fn zeros(layer_sizes: &[usize], activation: Activation) -> Result<Self> {
        if layer_sizes.len() < 2 {
            return Err(Error::Invalid("network needs at least two layers".into()));
        }
        if layer_sizes.iter().any(|&n| n == 0) {
            return Err(Error::Invalid("layer sizes must be positive".into()));
        }
        let offsets = layer_offsets(layer_sizes);
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            activation,
            params: vec![0.0; *offsets.last().unwrap()],
            offsets,
        })
    }

    /// Orthogonal initialization with gain `sqrt(2)` on hidden layers and
    /// `output_gain` on the output layer; biases start at zero.
    pub fn init(
        layer_sizes: &[usize],
        activation: Activation,
        output_gain: f64,
        stream: &mut RandomStream,
    ) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        let n_layers = net.num_layers();
        for l in 0..n_layers {
            let (rows, cols) = (layer_sizes[l + 1], layer_sizes[l]);
            let gain = if l + 1 == n_layers {
                output_gain
            } else {
                math::sqrt(2.0)
            };
            let m = orthogonal(rows, cols, stream);
            for (dst, src) in net.weight_mut(l).iter_mut().zip(m) {
                *dst = gain * src;
            }
        }
        Ok(net)
    }

    /// Rebuild from a flat buffer in the layout described on the type.
    pub fn from_flat(layer_sizes: &[usize], activation: Activation, flat: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(layer_sizes, activation)?;
        check_len("mlp flat parameters", net.params.len(), flat.len())?;
        check_finite("mlp parameters", &flat)?;
        net.params = flat;
        Ok(net)
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn num_layers(&self) -> usize {
        self.layer_sizes.len() - 1
    }

    pub fn input_dim(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn flat(&self) -> &[f64] {
        &self.params
    }

    pub fn flat_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn weight_range(&self, l: usize) -> core::ops::Range<usize> {
        let start = self.offsets[l];
        start..start + self.layer_sizes[l] * self.layer_sizes[l + 1]
    }

    fn bias_range(&self, l: usize) -> core::ops::Range<usize> {
        let start = self.weight_range(l).end;
        start..start + self.layer_sizes[l + 1]
    }

    pub fn weight(&self, l: usize) -> &[f64] {
        &self.params[self.weight_range(l)]
    }

    pub fn weight_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.weight_range(l);
        &mut self.params[r]
    }

    pub fn bias(&self, l: usize) -> &[f64] {
        &self.params[self.bias_range(l)]
    }

    pub fn bias_mut(&mut self, l: usize) -> &mut [f64] {
        let r = self.bias_range(l);
        &mut self.params[r]
    }

    /// Forward pass keeping every layer output for a later backward pass.
    pub fn forward_tape(&self, input: &[f64]) -> Result<Tape> {
        check_len("mlp input", self.input_dim(), input.len())?;
        let mut acts = Vec::with_capacity(self.layer_sizes.len());
        acts.push(input.to_vec());
        let n_layers = self.num_layers();
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let w = self.weight(l);
            let b = self.bias(l);
            let x = &acts[l];
            let mut y = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &w[o * n_in..(o + 1) * n_in];
                let z = b[o] + math::dot(row, x);
                y.push(if l + 1 < n_layers {
                    self.activation.apply(z)
                } else {
                    z
                });
            }
            acts.push(y);
        }
        Ok(Tape { acts })
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_tape(input)?.acts.pop().unwrap())
    }

    /// Accumulate `d<output_grad, f(x)>/dparams` into `grads` and return the
    /// input gradient.
    pub fn backward_accumulate(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        grads: &mut [f64],
    ) -> Result<Vec<f64>> {
        check_len("mlp output gradient", self.output_dim(), output_grad.len())?;
        check_len("mlp gradient buffer", self.params.len(), grads.len())?;
        check_len("mlp tape", self.layer_sizes.len(), tape.acts.len())?;
        let n_layers = self.num_layers();
        let mut delta = output_grad.to_vec();
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            if l + 1 < n_layers {
                for (d, &y) in delta.iter_mut().zip(&tape.acts[l + 1]) {
                    *d *= self.activation.grad_from_output(y);
                }
            }
            let x = &tape.acts[l];
            let wr = self.weight_range(l);
            let br = self.bias_range(l);
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grads[br.start + o] += d;
                let gw = &mut grads[wr.start + o * n_in..wr.start + (o + 1) * n_in];
                for (g, &xi) in gw.iter_mut().zip(x) {
                    *g += d * xi;
                }
            }
            let w = &self.params[wr];
            let mut prev = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                for (p, &wi) in prev.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                    *p += d * wi;
                }
            }
            delta = prev;
        }
        check_finite("mlp backward", &delta)?;
        Ok(delta)
    }
}

impl MlpParams {
    /// Forward pass over `n` samples given sample-major (`n x input_dim`).
    /// Activations are kept feature-major so every inner loop runs over
    /// samples.
    pub fn forward_batch(&self, inputs: &[f64], n: usize, tape: &mut BatchTape) -> Result<()> {
        let d_in = self.input_dim();
        check_len("mlp batch input", n * d_in, inputs.len())?;
        tape.n = n;
        tape.acts.resize_with(self.layer_sizes.len(), Vec::new);
        let x0 = &mut tape.acts[0];
        x0.clear();
        x0.resize(d_in * n, 0.0);
        for i in 0..n {
            for k in 0..d_in {
                x0[k * n + i] = inputs[i * d_in + k];
            }
        }
        let n_layers = self.num_layers();
        for l in 0..n_layers {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            let (done, rest) = tape.acts.split_at_mut(l + 1);
            let x = &done[l];
            let y = &mut rest[0];
            y.clear();
            y.resize(n_out * n, 0.0);
            let w = self.weight(l);
            let b = self.bias(l);
            for o in 0..n_out {
                let yo = &mut y[o * n..(o + 1) * n];
                yo.iter_mut().for_each(|v| *v = b[o]);
                for k in 0..n_in {
                    let wk = w[o * n_in + k];
                    for (v, &xi) in yo.iter_mut().zip(&x[k * n..(k + 1) * n]) {
                        *v += wk * xi;
                    }
                }
                if l + 1 < n_layers {
                    for v in yo.iter_mut() {
                        *v = self.activation.apply(*v);
                    }
                }
            }
        }
        Ok(())
    }

    /// Accumulate parameter gradients for the batch in `tape`, given the
    /// output cotangent feature-major (`output_dim x n`).
    pub fn backward_batch(&self, tape: &BatchTape, output_grad: &[f64], grads: &mut [f64], scratch: &mut BatchScratch) -> Result<()> {
        let n = tape.n;
        check_len("mlp batch output gradient", self.output_dim() * n, output_grad.len())?;
        check_len("mlp gradient buffer", self.params.len(), grads.len())?;
        check_len("mlp batch tape", self.layer_sizes.len(), tape.acts.len())?;
        let n_layers = self.num_layers();
        let delta = &mut scratch.delta;
        let prev = &mut scratch.prev;
        delta.clear();
        delta.extend_from_slice(output_grad);
        for l in (0..n_layers).rev() {
            let (n_in, n_out) = (self.layer_sizes[l], self.layer_sizes[l + 1]);
            if l + 1 < n_layers {
                for (d, &y) in delta.iter_mut().zip(&tape.acts[l + 1]) {
                    *d *= self.activation.grad_from_output(y);
                }
            }
            let x = &tape.acts[l];
            let wr = self.weight_range(l);
            let br = self.bias_range(l);
            for o in 0..n_out {
                let d = &delta[o * n..(o + 1) * n];
                grads[br.start + o] += d.iter().sum::<f64>();
                for k in 0..n_in {
                    grads[wr.start + o * n_in + k] += math::dot(d, &x[k * n..(k + 1) * n]);
                }
            }
            if l > 0 {
                let w = &self.params[wr];
                prev.clear();
                prev.resize(n_in * n, 0.0);
                for o in 0..n_out {
                    let d = &delta[o * n..(o + 1) * n];
                    for k in 0..n_in {
                        let wk = w[o * n_in + k];
                        for (p, &di) in prev[k * n..(k + 1) * n].iter_mut().zip(d) {
                            *p += wk * di;
                        }
                    }
                }
                core::mem::swap(delta, prev);
            }
        }
        Ok(())
    }
}

/// Feature-major layer outputs of [`MlpParams::forward_batch`]; reusable
/// across calls.
#[derive(Debug, Clone, Default)]
pub struct BatchTape {
    n: usize,
    acts: Vec<Vec<f64>>,
}

impl BatchTape {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Output unit `j` for every sample.
    pub fn output(&self, j: usize) -> &[f64] {
        let last = self.acts.last().expect("tape is filled by forward_batch");
        &last[j * self.n..(j + 1) * self.n]
    }
}

/// Work buffers for [`MlpParams::backward_batch`].
#[derive(Debug, Clone, Default)]
pub struct BatchScratch {
    delta: Vec<f64>,
    prev: Vec<f64>,
}

/// Layer outputs recorded by [`MlpParams::forward_tape`]; index 0 is the input.
#[derive(Debug, Clone)]
pub struct Tape {
    acts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

/// Gradients shaped like [`MlpParams`] (same flat layout) plus the input gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct GradBundle {
    pub params: Vec<f64>,
    pub input: Option<Vec<f64>>,
}

pub fn mlp_forward(params: &MlpParams, input: &[f64]) -> Result<Vec<f64>> {
    params.forward(input)
}

pub fn mlp_backward(params: &MlpParams, input: &[f64], output_grad: &[f64]) -> Result<GradBundle> {
    check_len("mlp output gradient", params.output_dim(), output_grad.len())?;
    let tape = params.forward_tape(input)?;
    for a in &tape.acts {
        check_finite("mlp forward intermediates", a)?;
    }
    let mut g = vec![0.0; params.num_params()];
    let dx = params.backward_accumulate(&tape, output_grad, &mut g)?;
    check_finite("mlp parameter gradient", &g)?;
    Ok(GradBundle {
        params: g,
        input: Some(dx),
    })
}

/// `rows x cols` matrix (row-major) with orthonormal rows or columns,
/// whichever is the smaller set.
fn orthogonal(rows: usize, cols: usize, stream: &mut RandomStream) -> Vec<f64> {
    let (k, n) = if rows >= cols { (cols, rows) } else { (rows, cols) };
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(k);
    while basis.len() < k {
        let mut v: Vec<f64> = (0..n).map(|_| stream.normal()).collect();
        for _ in 0..2 {
            for b in &basis {
                let p = math::dot(&v, b);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= p * bi;
                }
            }
        }
        let nv = math::norm(&v);
        if nv > 1e-8 {
            v.iter_mut().for_each(|x| *x /= nv);
            basis.push(v);
        }
    }
    let mut m = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            m[r * cols + c] = if rows >= cols { basis[c][r] } else { basis[r][c] };
        }
    }
    m
}
