//! Fixed-architecture building blocks with hand-written reverse-mode
//! gradients: same-padded convolutions, pointwise activations and 2x
//! pooling. Parameters live in caller-owned flat slices.

use crate::rng::Rng;
use crate::tensor::Tensor;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Identity,
    LeakyRelu(f64),
    Tanh,
}

impl Activation {
    #[inline]
    fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Identity => v,
            Activation::LeakyRelu(s) => {
                if v > 0.0 {
                    v
                } else {
                    s * v
                }
            }
            Activation::Tanh => v.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation and the output.
    #[inline]
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::LeakyRelu(s) => {
                if pre > 0.0 {
                    1.0
                } else {
                    s
                }
            }
            Activation::Tanh => 1.0 - post * post,
        }
    }

    fn init_gain(self) -> f64 {
        match self {
            Activation::Identity | Activation::Tanh => 1.0,
            Activation::LeakyRelu(s) => (2.0 / (1.0 + s * s)).sqrt(),
        }
    }
}

/// A `kernel × kernel` convolution with zero "same" padding and stride 1.
///
/// Parameters are laid out tap-major as `[tap][out][in]` followed by
/// `out` biases, so each tap's weights for one output are contiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
        }
    }

    pub fn weight_count(&self) -> usize {
        self.kernel * self.kernel * self.in_channels * self.out_channels
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.out_channels
    }

    pub fn fan_in(&self) -> usize {
        self.kernel * self.kernel * self.in_channels
    }

    /// Fan-in scaled normal weights, zero biases.
    pub fn init(&self, rng: &mut Rng, params: &mut [f64], gain: f64) {
        let std = gain / (self.fan_in() as f64).sqrt();
        let (weights, biases) = params.split_at_mut(self.weight_count());
        for w in weights {
            *w = std * rng.normal();
        }
        biases.fill(0.0);
    }

    pub fn forward(&self, params: &[f64], input: &Tensor) -> Tensor {
        debug_assert_eq!(input.channels(), self.in_channels);
        debug_assert_eq!(params.len(), self.param_count());
        let (h, w) = (input.height(), input.width());
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let pad = (k / 2) as isize;
        let (weights, bias) = params.split_at(self.weight_count());
        let src = input.data();
        let mut out = Tensor::zeros(h, w, cout);
        let dst = out.data_mut();
        for r in 0..h {
            for c in 0..w {
                let o_px = &mut dst[(r * w + c) * cout..(r * w + c + 1) * cout];
                o_px.copy_from_slice(bias);
                for ky in 0..k {
                    let rr = r as isize + ky as isize - pad;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let cc = c as isize + kx as isize - pad;
                        if cc < 0 || cc >= w as isize {
                            continue;
                        }
                        let i0 = (rr as usize * w + cc as usize) * cin;
                        let i_px = &src[i0..i0 + cin];
                        let tap = &weights[(ky * k + kx) * cout * cin..(ky * k + kx + 1) * cout * cin];
                        for (o, w_row) in tap.chunks_exact(cin).enumerate() {
                            o_px[o] += dot(w_row, i_px);
                        }
                    }
                }
            }
        }
        out
    }

    /// Accumulates parameter gradients into `grad_params` and returns the
    /// gradient with respect to `input`.
    pub fn backward(&self, params: &[f64], input: &Tensor, grad_out: &Tensor, grad_params: &mut [f64]) -> Tensor {
        let (h, w) = (input.height(), input.width());
        let (cin, cout, k) = (self.in_channels, self.out_channels, self.kernel);
        let pad = (k / 2) as isize;
        let nw = self.weight_count();
        let weights = &params[..nw];
        let (gw, gb) = grad_params.split_at_mut(nw);
        let src = input.data();
        let g = grad_out.data();
        let mut grad_in = Tensor::zeros(h, w, cin);
        let gin = grad_in.data_mut();
        for r in 0..h {
            for c in 0..w {
                let g_px = &g[(r * w + c) * cout..(r * w + c + 1) * cout];
                for (b, &gv) in gb.iter_mut().zip(g_px) {
                    *b += gv;
                }
                for ky in 0..k {
                    let rr = r as isize + ky as isize - pad;
                    if rr < 0 || rr >= h as isize {
                        continue;
                    }
                    for kx in 0..k {
                        let cc = c as isize + kx as isize - pad;
                        if cc < 0 || cc >= w as isize {
                            continue;
                        }
                        let i0 = (rr as usize * w + cc as usize) * cin;
                        let t0 = (ky * k + kx) * cout * cin;
                        let i_px = &src[i0..i0 + cin];
                        let gi_px = &mut gin[i0..i0 + cin];
                        for (o, &go) in g_px.iter().enumerate() {
                            if go == 0.0 {
                                continue;
                            }
                            let w_row = &weights[t0 + o * cin..t0 + (o + 1) * cin];
                            let gw_row = &mut gw[t0 + o * cin..t0 + (o + 1) * cin];
                            for ci in 0..cin {
                                gw_row[ci] += go * i_px[ci];
                                gi_px[ci] += go * w_row[ci];
                            }
                        }
                    }
                }
            }
        }
        grad_in
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// A chain of convolutions. `hidden` follows every layer but the last,
/// which is followed by `last`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvStack {
    pub layers: Vec<Conv>,
    pub hidden: Activation,
    pub last: Activation,
}

/// Per-layer values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct StackTrace {
    inputs: Vec<Tensor>,
    pre: Vec<Tensor>,
    output: Tensor,
}

impl StackTrace {
    pub fn output(&self) -> &Tensor {
        &self.output
    }

    pub fn into_output(self) -> Tensor {
        self.output
    }
}

impl ConvStack {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Conv::param_count).sum()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 1 == self.layers.len() {
            self.last
        } else {
            self.hidden
        }
    }

    pub fn init(&self, rng: &mut Rng, params: &mut [f64]) {
        let mut offset = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let n = layer.param_count();
            layer.init(rng, &mut params[offset..offset + n], self.activation(i).init_gain());
            offset += n;
        }
    }

    pub fn forward(&self, params: &[f64], input: &Tensor) -> Tensor {
        self.trace(params, input).output
    }

    pub fn trace(&self, params: &[f64], input: &Tensor) -> StackTrace {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut current = input.clone();
        let mut offset = 0;
        for (i, layer) in self.layers.iter().enumerate() {
            let n = layer.param_count();
            let z = layer.forward(&params[offset..offset + n], &current);
            let act = self.activation(i);
            let a = if act == Activation::Identity {
                z.clone()
            } else {
                z.map(|v| act.apply(v))
            };
            inputs.push(std::mem::replace(&mut current, a));
            pre.push(z);
            offset += n;
        }
        StackTrace {
            inputs,
            pre,
            output: current,
        }
    }

    /// Accumulates into `grad_params`; returns the gradient w.r.t. the input.
    pub fn backward(&self, params: &[f64], trace: &StackTrace, grad_out: &Tensor, grad_params: &mut [f64]) -> Tensor {
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut offset = 0;
        for layer in &self.layers {
            offsets.push(offset);
            offset += layer.param_count();
        }
        let mut grad = grad_out.clone();
        for i in (0..self.layers.len()).rev() {
            let act = self.activation(i);
            let post = if i + 1 == self.layers.len() {
                &trace.output
            } else {
                &trace.inputs[i + 1]
            };
            if act != Activation::Identity {
                for ((g, &z), &a) in grad.data_mut().iter_mut().zip(trace.pre[i].data()).zip(post.data()) {
                    *g *= act.derivative(z, a);
                }
            }
            let layer = &self.layers[i];
            let n = layer.param_count();
            let o = offsets[i];
            grad = layer.backward(&params[o..o + n], &trace.inputs[i], &grad, &mut grad_params[o..o + n]);
        }
        grad
    }
}

/// 2x2 average pooling. Height and width must be even.
pub fn avg_pool2(input: &Tensor) -> Tensor {
    let (h, w, c) = input.dims();
    debug_assert!(h % 2 == 0 && w % 2 == 0);
    let mut out = Tensor::zeros(h / 2, w / 2, c);
    for r in 0..h / 2 {
        for col in 0..w / 2 {
            for ch in 0..c {
                let s = input.get(2 * r, 2 * col, ch)
                    + input.get(2 * r, 2 * col + 1, ch)
                    + input.get(2 * r + 1, 2 * col, ch)
                    + input.get(2 * r + 1, 2 * col + 1, ch);
                out.set(r, col, ch, 0.25 * s);
            }
        }
    }
    out
}

pub fn avg_pool2_backward(grad_out: &Tensor) -> Tensor {
    let (h, w, c) = grad_out.dims();
    let mut out = Tensor::zeros(2 * h, 2 * w, c);
    for r in 0..2 * h {
        for col in 0..2 * w {
            for ch in 0..c {
                out.set(r, col, ch, 0.25 * grad_out.get(r / 2, col / 2, ch));
            }
        }
    }
    out
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample2(input: &Tensor) -> Tensor {
    let (h, w, c) = input.dims();
    let mut out = Tensor::zeros(2 * h, 2 * w, c);
    for r in 0..2 * h {
        for col in 0..2 * w {
            for ch in 0..c {
                out.set(r, col, ch, input.get(r / 2, col / 2, ch));
            }
        }
    }
    out
}

pub fn upsample2_backward(grad_out: &Tensor) -> Tensor {
    avg_pool2(grad_out).map(|v| 4.0 * v)
}

/// Repeats a vector at every pixel of an `height × width` grid.
pub fn broadcast(values: &[f64], height: usize, width: usize) -> Tensor {
    let data = (0..height * width).flat_map(|_| values.iter().copied()).collect();
    Tensor::from_vec(height, width, values.len(), data).expect("broadcast shape")
}

/// Adjoint of [`broadcast`]: sums each channel over all pixels.
pub fn broadcast_backward(grad: &Tensor) -> Vec<f64> {
    let mut out = vec![0.0; grad.channels()];
    for px in grad.data().chunks_exact(grad.channels()) {
        for (o, v) in out.iter_mut().zip(px) {
            *o += v;
        }
    }
    out
}
