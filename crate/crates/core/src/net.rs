//! A four-layer convolutional encoder-decoder that maps a visible frame to
//! an illumination map, with every layer's activations multiplied by the
//! thermal attention map resampled to that layer's resolution.
//!
//! ```text
//! conv 3→8 /2 relu · att₁ → conv 8→16 /2 relu · att₂
//!   → up2 conv 16→8 relu · att₁ → up2 conv 8→1 sigmoid · att₀
//! ```
//!
//! Convolutions are 3×3 with zero padding 1. A stride-2 layer reading an odd
//! extent sees an implicit zero row/column on the bottom/right; decoder
//! outputs are cropped back to the matching encoder resolution. Gradients
//! are computed by hand in reverse mode; no framework is involved.

use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{attention_pyramid, build_attention, AttentionMap, DEFAULT_GAMMA};
use crate::image::RasterImage;
use crate::laplacian::{
    build_matting_laplacian, check_dim, gradient_from_slices, loss_from_slices, LossBreakdown,
    SparseAffinity, DEFAULT_EPSILON, DEFAULT_LAMBDA,
};
use crate::prior::{
    estimate_ambient, initial_illumination, AmbientLight, IlluminationMap, PatchSpec,
    DEFAULT_AMBIENT_FRACTION, DEFAULT_T_MIN,
};
use crate::{Error, Result};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub activation: Activation,
    /// Nearest-neighbour 2× upsampling of the input before the convolution.
    pub upsample_before: bool,
}

/// The fixed layer stack.
pub const ARCHITECTURE: [ConvLayerSpec; 4] = [
    ConvLayerSpec {
        in_channels: 3,
        out_channels: 8,
        stride: 2,
        activation: Activation::Relu,
        upsample_before: false,
    },
    ConvLayerSpec {
        in_channels: 8,
        out_channels: 16,
        stride: 2,
        activation: Activation::Relu,
        upsample_before: false,
    },
    ConvLayerSpec {
        in_channels: 16,
        out_channels: 8,
        stride: 1,
        activation: Activation::Relu,
        upsample_before: true,
    },
    ConvLayerSpec {
        in_channels: 8,
        out_channels: 1,
        stride: 1,
        activation: Activation::Sigmoid,
        upsample_before: true,
    },
];

/// Weights (`out × in × 3 × 3`, row-major) and biases of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub spec: ConvLayerSpec,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl ConvLayer {
    fn zeros(spec: ConvLayerSpec) -> Self {
        Self {
            spec,
            weights: vec![0.0; spec.out_channels * spec.in_channels * TAPS],
            bias: vec![0.0; spec.out_channels],
        }
    }

    fn weight(&self, o: usize, i: usize, tap: usize) -> f64 {
        self.weights[(o * self.spec.in_channels + i) * TAPS + tap]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<ConvLayer>,
    /// Seed used for initialization, kept for provenance.
    pub seed: u64,
    /// Whether the final sigmoid output is multiplied by the attention map.
    pub gate_output: bool,
}

impl NetworkParams {
    /// Uniform fan-in initialization in `±sqrt(1 / (in·9))`, zero biases.
    pub fn init(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = ARCHITECTURE
            .iter()
            .map(|&spec| {
                let mut layer = ConvLayer::zeros(spec);
                let s = libm::sqrt(1.0 / (spec.in_channels * TAPS) as f64);
                for w in &mut layer.weights {
                    *w = rng.random_range(-s..=s);
                }
                layer
            })
            .collect();
        Self {
            layers,
            seed,
            gate_output: true,
        }
    }

    /// All-zero parameters with the fixed architecture.
    pub fn zeros() -> Self {
        Self {
            layers: ARCHITECTURE.iter().map(|&s| ConvLayer::zeros(s)).collect(),
            seed: 0,
            gate_output: true,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Parameters in layer order, each layer's weights then its biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    /// Inverse of [`NetworkParams::flatten`] for the same architecture.
    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        check_dim("flat parameter vector", flat.len(), self.parameter_count())?;
        let mut offset = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[offset..offset + nw]);
            offset += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[offset..offset + nb]);
            offset += nb;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.len() != ARCHITECTURE.len() {
            return Err(Error::DimensionMismatch {
                what: "layer count",
                left: self.layers.len(),
                right: ARCHITECTURE.len(),
            });
        }
        for (layer, spec) in self.layers.iter().zip(&ARCHITECTURE) {
            if layer.spec != *spec {
                return Err(Error::DimensionMismatch {
                    what: "layer spec",
                    left: layer.spec.out_channels,
                    right: spec.out_channels,
                });
            }
            check_dim(
                "layer weights",
                layer.weights.len(),
                spec.out_channels * spec.in_channels * TAPS,
            )?;
            check_dim("layer bias", layer.bias.len(), spec.out_channels)?;
            if layer
                .weights
                .iter()
                .chain(&layer.bias)
                .any(|v| !v.is_finite())
            {
                return Err(Error::NonFinite("network parameters"));
            }
        }
        Ok(())
    }
}

/// Channel-planar activation tensor.
#[derive(Debug, Clone, PartialEq)]
struct Tensor {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl Tensor {
    fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    fn plane_len(&self) -> usize {
        self.height * self.width
    }

    fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    fn upsample2(&self) -> Tensor {
        let (h, w) = (self.height * 2, self.width * 2);
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            let src = self.plane(c);
            let dst = &mut out.data[c * h * w..(c + 1) * h * w];
            for r in 0..h {
                for col in 0..w {
                    dst[r * w + col] = src[(r / 2) * self.width + col / 2];
                }
            }
        }
        out
    }

    /// Adjoint of [`Tensor::upsample2`]: sums each 2×2 block.
    fn downsample2_sum(&self) -> Tensor {
        let (h, w) = (self.height / 2, self.width / 2);
        let mut out = Tensor::zeros(self.channels, h, w);
        for c in 0..self.channels {
            let src = self.plane(c);
            let dst = &mut out.data[c * h * w..(c + 1) * h * w];
            for r in 0..self.height {
                for col in 0..self.width {
                    dst[(r / 2) * w + col / 2] += src[r * self.width + col];
                }
            }
        }
        out
    }
}

/// Column range `[lo, hi)` of outputs whose tap `k` lands inside `[0, extent)`.
fn valid_range(out_len: usize, stride: usize, k: usize, extent: usize) -> (usize, usize) {
    // input index = o·stride + k − 1
    let lo = if k == 0 { 1usize.div_ceil(stride) } else { 0 };
    let hi_excl = (extent + 1 - k).div_ceil(stride).min(out_len);
    (lo.min(hi_excl), hi_excl)
}

fn for_each_plane(
    data: &mut [f64],
    plane: usize,
    f: impl Fn(usize, &mut [f64]) + Sync + Send,
) {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        data.par_chunks_mut(plane)
            .enumerate()
            .for_each(|(c, p)| f(c, p));
    }
    #[cfg(not(feature = "parallel"))]
    for (c, p) in data.chunks_mut(plane).enumerate() {
        f(c, p);
    }
}

fn conv_forward(input: &Tensor, layer: &ConvLayer, out_h: usize, out_w: usize) -> Tensor {
    let stride = layer.spec.stride;
    let mut out = Tensor::zeros(layer.spec.out_channels, out_h, out_w);
    for_each_plane(&mut out.data, out_h * out_w, |o, dst| {
        dst.iter_mut().for_each(|v| *v = layer.bias[o]);
        for i in 0..input.channels {
            let src = input.plane(i);
            for tap in 0..TAPS {
                let (ky, kx) = (tap / KERNEL, tap % KERNEL);
                let w = layer.weight(o, i, tap);
                let (r_lo, r_hi) = valid_range(out_h, stride, ky, input.height);
                let (c_lo, c_hi) = valid_range(out_w, stride, kx, input.width);
                for r in r_lo..r_hi {
                    let ir = r * stride + ky - 1;
                    let src_row = &src[ir * input.width..(ir + 1) * input.width];
                    let dst_row = &mut dst[r * out_w..(r + 1) * out_w];
                    for c in c_lo..c_hi {
                        dst_row[c] += w * src_row[c * stride + kx - 1];
                    }
                }
            }
        }
    });
    out
}

/// Gradients of a convolution with respect to its weights, biases and input.
fn conv_backward(input: &Tensor, layer: &ConvLayer, grad_out: &Tensor) -> (ConvLayer, Tensor) {
    let stride = layer.spec.stride;
    let (out_h, out_w) = (grad_out.height, grad_out.width);
    let (in_c, out_c) = (layer.spec.in_channels, layer.spec.out_channels);
    let mut grad = ConvLayer::zeros(layer.spec);
    for (o, b) in grad.bias.iter_mut().enumerate() {
        *b = grad_out.plane(o).iter().sum();
    }
    for_each_plane(&mut grad.weights, in_c * TAPS, |o, dw| {
        let g = grad_out.plane(o);
        for i in 0..in_c {
            let src = input.plane(i);
            for tap in 0..TAPS {
                let (ky, kx) = (tap / KERNEL, tap % KERNEL);
                let (r_lo, r_hi) = valid_range(out_h, stride, ky, input.height);
                let (c_lo, c_hi) = valid_range(out_w, stride, kx, input.width);
                let mut acc = 0.0;
                for r in r_lo..r_hi {
                    let ir = r * stride + ky - 1;
                    let src_row = &src[ir * input.width..(ir + 1) * input.width];
                    let g_row = &g[r * out_w..(r + 1) * out_w];
                    for c in c_lo..c_hi {
                        acc += g_row[c] * src_row[c * stride + kx - 1];
                    }
                }
                dw[i * TAPS + tap] = acc;
            }
        }
    });
    let mut grad_in = Tensor::zeros(in_c, input.height, input.width);
    let in_w = input.width;
    for_each_plane(&mut grad_in.data, input.plane_len(), |i, dx| {
        for o in 0..out_c {
            let g = grad_out.plane(o);
            for tap in 0..TAPS {
                let (ky, kx) = (tap / KERNEL, tap % KERNEL);
                let w = layer.weight(o, i, tap);
                let (r_lo, r_hi) = valid_range(out_h, stride, ky, input.height);
                let (c_lo, c_hi) = valid_range(out_w, stride, kx, in_w);
                for r in r_lo..r_hi {
                    let ir = r * stride + ky - 1;
                    let g_row = &g[r * out_w..(r + 1) * out_w];
                    let dx_row = &mut dx[ir * in_w..(ir + 1) * in_w];
                    for c in c_lo..c_hi {
                        dx_row[c * stride + kx - 1] += w * g_row[c];
                    }
                }
            }
        }
    });
    (grad, grad_in)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + libm::exp(-x))
}

/// Per-layer output sizes `(width, height)` for an input of the given size.
pub fn layer_sizes(width: usize, height: usize) -> [(usize, usize); 4] {
    let half = |n: usize| n.div_ceil(2);
    let (w1, h1) = (half(width), half(height));
    let (w2, h2) = (half(w1), half(h1));
    [(w1, h1), (w2, h2), (w1, h1), (width, height)]
}

struct LayerCache {
    input: Tensor,
    pre_activation: Tensor,
    activation: Tensor,
}

struct ForwardPass {
    caches: Vec<LayerCache>,
    gates: Vec<AttentionMap>,
    output: Vec<f64>,
}

fn run_forward(
    params: &NetworkParams,
    visible: &RasterImage,
    attention: &AttentionMap,
) -> Result<ForwardPass> {
    params.validate()?;
    visible.require_channels(3)?;
    let (w, h) = (visible.width(), visible.height());
    if attention.width() != w || attention.height() != h {
        return Err(Error::SizeMismatch {
            left_width: w,
            left_height: h,
            right_width: attention.width(),
            right_height: attention.height(),
        });
    }
    let sizes = layer_sizes(w, h);
    let gates = attention_pyramid(attention, &sizes)?;
    let mut x = Tensor {
        channels: 3,
        height: h,
        width: w,
        data: visible.data().to_vec(),
    };
    let mut caches = Vec::with_capacity(params.layers.len());
    let last = params.layers.len() - 1;
    for (l, layer) in params.layers.iter().enumerate() {
        let input = if layer.spec.upsample_before {
            x.upsample2()
        } else {
            x
        };
        let (out_w, out_h) = sizes[l];
        let pre = conv_forward(&input, layer, out_h, out_w);
        let mut act = pre.clone();
        match layer.spec.activation {
            Activation::Relu => act.data.iter_mut().for_each(|v| *v = v.max(0.0)),
            Activation::Sigmoid => act.data.iter_mut().for_each(|v| *v = sigmoid(*v)),
        }
        let mut gated = act.clone();
        if l != last || params.gate_output {
            let gate = gates[l].values();
            for plane in gated.data.chunks_mut(out_h * out_w) {
                plane.iter_mut().zip(gate).for_each(|(v, g)| *v *= g);
            }
        }
        caches.push(LayerCache {
            input,
            pre_activation: pre,
            activation: act,
        });
        x = gated;
    }
    if x.data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network forward pass"));
    }
    Ok(ForwardPass {
        caches,
        gates,
        output: x.data,
    })
}

/// Raw network output: the gated sigmoid map, values in `[0, 1)`. Callers
/// floor it at `t_min` before using it as an illumination map.
pub fn forward(
    params: &NetworkParams,
    visible: &RasterImage,
    attention: &AttentionMap,
) -> Result<IlluminationMap> {
    let pass = run_forward(params, visible, attention)?;
    IlluminationMap::new(visible.width(), visible.height(), pass.output)
}

/// Propagates `dL/dt` back through the network.
fn run_backward(params: &NetworkParams, pass: &ForwardPass, grad_output: &[f64]) -> Result<NetworkParams> {
    let last = params.layers.len() - 1;
    let mut grad = {
        let c = &pass.caches[last].activation;
        Tensor {
            channels: c.channels,
            height: c.height,
            width: c.width,
            data: grad_output.to_vec(),
        }
    };
    let mut grads: Vec<ConvLayer> = Vec::with_capacity(params.layers.len());
    for l in (0..params.layers.len()).rev() {
        let layer = &params.layers[l];
        let cache = &pass.caches[l];
        let plane = cache.activation.plane_len();
        if l != last || params.gate_output {
            let gate = pass.gates[l].values();
            for p in grad.data.chunks_mut(plane) {
                p.iter_mut().zip(gate).for_each(|(g, a)| *g *= a);
            }
        }
        match layer.spec.activation {
            Activation::Relu => grad
                .data
                .iter_mut()
                .zip(&cache.pre_activation.data)
                .for_each(|(g, z)| {
                    if *z <= 0.0 {
                        *g = 0.0
                    }
                }),
            Activation::Sigmoid => grad
                .data
                .iter_mut()
                .zip(&cache.activation.data)
                .for_each(|(g, y)| *g *= y * (1.0 - y)),
        }
        let (layer_grad, grad_in) = conv_backward(&cache.input, layer, &grad);
        grads.push(layer_grad);
        grad = if layer.spec.upsample_before {
            grad_in.downsample2_sum()
        } else {
            grad_in
        };
    }
    grads.reverse();
    let out = NetworkParams {
        layers: grads,
        seed: params.seed,
        gate_output: params.gate_output,
    };
    if out.flatten().iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network gradient"));
    }
    Ok(out)
}

/// Gradient of an arbitrary scalar loss given its derivative with respect
/// to the network output. Used to chain external losses through the net.
pub fn backward_from_output_gradient(
    params: &NetworkParams,
    visible: &RasterImage,
    attention: &AttentionMap,
    grad_output: &[f64],
) -> Result<NetworkParams> {
    let pass = run_forward(params, visible, attention)?;
    check_dim("output gradient", grad_output.len(), pass.output.len())?;
    run_backward(params, &pass, grad_output)
}

/// Loss value and exact gradient of the illumination loss
/// `bcp_loss(forward(·), t̃, L, λ)` with respect to every parameter. The
/// gradient shares the layout of `params`.
pub fn backward(
    params: &NetworkParams,
    visible: &RasterImage,
    attention: &AttentionMap,
    t_tilde: &IlluminationMap,
    lap: &SparseAffinity,
    lambda: f64,
) -> Result<(LossBreakdown, NetworkParams)> {
    let pass = run_forward(params, visible, attention)?;
    check_dim("output vs target", pass.output.len(), t_tilde.len())?;
    check_dim("output vs laplacian", pass.output.len(), lap.dimension())?;
    if !(lambda >= 0.0) {
        return Err(Error::InvalidParameter {
            name: "lambda",
            value: lambda,
        });
    }
    let loss = loss_from_slices(&pass.output, t_tilde.values(), lap, lambda, None);
    let grad_t = gradient_from_slices(&pass.output, t_tilde.values(), lap, lambda, None);
    Ok((loss, run_backward(params, &pass, &grad_t)?))
}

/// Loss of the network output against `t̃`, without gradients.
pub fn evaluate_loss(
    params: &NetworkParams,
    visible: &RasterImage,
    attention: &AttentionMap,
    t_tilde: &IlluminationMap,
    lap: &SparseAffinity,
    lambda: f64,
) -> Result<LossBreakdown> {
    let pass = run_forward(params, visible, attention)?;
    check_dim("output vs target", pass.output.len(), t_tilde.len())?;
    check_dim("output vs laplacian", pass.output.len(), lap.dimension())?;
    Ok(loss_from_slices(&pass.output, t_tilde.values(), lap, lambda, None))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    pub lambda: f64,
    pub seed: u64,
    pub gamma: f64,
    pub patch: PatchSpec,
    pub ambient_fraction: f64,
    pub t_min: f64,
    pub epsilon: f64,
    pub gate_output: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            steps: 500,
            lambda: DEFAULT_LAMBDA,
            seed: 0,
            gamma: DEFAULT_GAMMA,
            patch: PatchSpec::default(),
            ambient_fraction: DEFAULT_AMBIENT_FRACTION,
            t_min: DEFAULT_T_MIN,
            epsilon: DEFAULT_EPSILON,
            gate_output: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParameter {
                name: "learning_rate",
                value: self.learning_rate,
            });
        }
        if self.steps == 0 {
            return Err(Error::InvalidParameter {
                name: "steps",
                value: 0.0,
            });
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "lambda",
                value: self.lambda,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NetworkParams,
    /// Network output after the last update, floored at `t_min`.
    pub illumination: IlluminationMap,
    /// Loss evaluated before each update.
    pub history: Vec<LossBreakdown>,
    pub ambient: AmbientLight,
    pub target: IlluminationMap,
    pub attention: AttentionMap,
}

/// Plain gradient descent on an already prepared problem. Returns the loss
/// recorded before each of the `steps` updates.
pub fn fit(
    params: &mut NetworkParams,
    visible: &RasterImage,
    attention: &AttentionMap,
    t_tilde: &IlluminationMap,
    lap: &SparseAffinity,
    cfg: &TrainConfig,
) -> Result<Vec<LossBreakdown>> {
    cfg.validate()?;
    let mut history = Vec::with_capacity(cfg.steps);
    let mut flat = params.flatten();
    for step in 0..cfg.steps {
        let (loss, grad) = match backward(params, visible, attention, t_tilde, lap, cfg.lambda) {
            Ok(v) => v,
            Err(Error::NonFinite(_)) => return Err(Error::Diverged { step }),
            Err(e) => return Err(e),
        };
        if !loss.total.is_finite() {
            return Err(Error::Diverged { step });
        }
        history.push(loss);
        for (p, g) in flat.iter_mut().zip(grad.flatten()) {
            *p -= cfg.learning_rate * g;
        }
        params.set_flat(&flat)?;
    }
    Ok(history)
}

/// Estimates `A` and `t̃`, builds the attention map and Laplacian, then
/// trains a freshly initialized network for `cfg.steps` steps.
pub fn train(visible: &RasterImage, thermal: &RasterImage, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    visible.require_channels(3)?;
    visible.require_same_size(thermal)?;
    let ambient = estimate_ambient(visible, cfg.ambient_fraction)?;
    let target = initial_illumination(visible, &ambient, cfg.patch, cfg.t_min)?;
    let attention = build_attention(thermal, cfg.gamma)?;
    let lap = build_matting_laplacian(visible, cfg.epsilon)?;
    let mut params = NetworkParams::init(cfg.seed);
    params.gate_output = cfg.gate_output;
    let history = fit(&mut params, visible, &attention, &target, &lap, cfg)?;
    let illumination = forward(&params, visible, &attention)?.clamped(cfg.t_min);
    Ok(TrainOutcome {
        params,
        illumination,
        history,
        ambient,
        target,
        attention,
    })
}
