//! Convolutional predictors: the feature regressor `Phi` and the pixel-space
//! baseline, with exact parameter and input gradients and a minibatch
//! training loop.
//!
//! Convolutions are "same"-padded with zeros; a stride-2 layer halves the
//! grid (rounding up). Parameters are stored flat, layer by layer, weights
//! `[out][in][ky][kx]` followed by biases.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::ImageTensor;
use crate::optim::{Optimizer, OptimizerConfig};
use crate::rng::seeded;
use crate::scattering::{FeatureNetwork, Trainable};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerKind {
    /// Hidden convolution followed by its activation.
    Convolution,
    /// Final convolution without nonlinearity.
    LinearOutput,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    /// 1, or 2 for a downsampling stage.
    pub stride: usize,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn hidden(out_channels: usize, kernel: usize, stride: usize) -> Self {
        Self {
            kind: LayerKind::Convolution,
            out_channels,
            kernel: (kernel, kernel),
            stride,
            activation: Activation::Relu,
        }
    }

    pub fn output(out_channels: usize, kernel: usize) -> Self {
        Self {
            kind: LayerKind::LinearOutput,
            out_channels,
            kernel: (kernel, kernel),
            stride: 1,
            activation: Activation::None,
        }
    }

    fn validate(&self) -> Result<()> {
        let (kh, kw) = self.kernel;
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::InvalidConfig(alloc::format!("kernel {kh}x{kw} must be odd")));
        }
        if !(1..=2).contains(&self.stride) {
            return Err(Error::InvalidConfig(alloc::format!("stride {} not in {{1, 2}}", self.stride)));
        }
        if self.out_channels == 0 {
            return Err(Error::InvalidConfig("layer without output channels".into()));
        }
        Ok(())
    }
}

/// Output grid of a "same" convolution.
fn conv_out(n: usize, stride: usize) -> usize {
    n.div_ceil(stride)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorNetwork {
    input_channels: usize,
    layers: Vec<LayerSpec>,
    params: Vec<f64>,
    /// Adds the input to the output (pixel regression around the bicubic guess).
    global_skip: bool,
}

impl PredictorNetwork {
    /// Builds a network with fan-in scaled uniform weights and zero biases.
    pub fn new(input_channels: usize, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        if input_channels == 0 || layers.is_empty() {
            return Err(Error::InvalidConfig("network needs inputs and layers".into()));
        }
        let mut rng = seeded(seed);
        let mut params = Vec::new();
        let mut cin = input_channels;
        for layer in &layers {
            layer.validate()?;
            let fan_in = (cin * layer.kernel.0 * layer.kernel.1) as f64;
            let gain = match layer.activation {
                Activation::Relu => 6.0,
                Activation::None => 3.0,
            };
            let bound = (gain / fan_in).sqrt();
            let count = layer.out_channels * cin * layer.kernel.0 * layer.kernel.1;
            params.extend((0..count).map(|_| rng.random_range(-bound..bound)));
            params.extend(core::iter::repeat_n(0.0, layer.out_channels));
            cin = layer.out_channels;
        }
        Ok(Self {
            input_channels,
            layers,
            params,
            global_skip: false,
        })
    }

    pub fn with_global_skip(mut self, on: bool) -> Result<Self> {
        if on && self.output_channels() != self.input_channels {
            return Err(Error::InvalidConfig("skip connection needs matching channel counts".into()));
        }
        if on && self.layers.iter().any(|l| l.stride != 1) {
            return Err(Error::InvalidConfig("skip connection needs an unstrided network".into()));
        }
        self.global_skip = on;
        Ok(self)
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    pub fn output_channels(&self) -> usize {
        self.layers.last().map_or(0, |l| l.out_channels)
    }

    pub fn layers(&self) -> &[LayerSpec] {
        &self.layers
    }

    pub fn global_skip(&self) -> bool {
        self.global_skip
    }

    pub fn params_slice(&self) -> &[f64] {
        &self.params
    }

    pub fn output_shape(&self, height: usize, width: usize) -> (usize, usize, usize) {
        let (mut h, mut w) = (height, width);
        for l in &self.layers {
            h = conv_out(h, l.stride);
            w = conv_out(w, l.stride);
        }
        (self.output_channels(), h, w)
    }

    /// Short architecture description, e.g. for checkpoint headers.
    pub fn describe(&self) -> String {
        let mut s = alloc::format!("in={}", self.input_channels);
        for l in &self.layers {
            s.push_str(&alloc::format!(
                ";{}x{}x{}/s{}{}",
                l.out_channels,
                l.kernel.0,
                l.kernel.1,
                l.stride,
                if l.activation == Activation::Relu { "+relu" } else { "" }
            ));
        }
        if self.global_skip {
            s.push_str(";skip");
        }
        s
    }

    /// Restores a network from stored parts (checkpoints).
    pub fn from_parts(input_channels: usize, layers: Vec<LayerSpec>, params: Vec<f64>, global_skip: bool) -> Result<Self> {
        let mut net = Self::new(input_channels, layers, 0)?;
        net.set_params(&params)?;
        net.with_global_skip(global_skip)
    }

    fn check_input(&self, x: &ImageTensor) -> Result<()> {
        if x.channels() != self.input_channels {
            return Err(shape_err(self.input_channels, x.channels()));
        }
        if !x.is_finite() {
            return Err(Error::NonFinite("predictor input"));
        }
        Ok(())
    }

    pub fn forward(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.check_input(x)?;
        let mut cur = x.clone();
        let mut offset = 0;
        let mut cin = self.input_channels;
        for layer in &self.layers {
            let (w, b, next) = self.layer_params(offset, cin, layer);
            cur = conv_forward(&cur, layer, w, b);
            if layer.activation == Activation::Relu {
                cur = cur.map(|v| v.max(0.0));
            }
            offset = next;
            cin = layer.out_channels;
        }
        if self.global_skip {
            cur = cur.add(x)?;
        }
        Ok(cur)
    }

    fn layer_params(&self, offset: usize, cin: usize, layer: &LayerSpec) -> (&[f64], &[f64], usize) {
        let nw = layer.out_channels * cin * layer.kernel.0 * layer.kernel.1;
        let w = &self.params[offset..offset + nw];
        let b = &self.params[offset + nw..offset + nw + layer.out_channels];
        (w, b, offset + nw + layer.out_channels)
    }

    /// Input and parameter gradients of `<forward(x), cotangent>`.
    pub fn vjp(&self, x: &ImageTensor, cotangent: &ImageTensor) -> Result<(ImageTensor, Vec<f64>)> {
        self.check_input(x)?;
        let out_shape = self.output_shape(x.height(), x.width());
        if cotangent.shape() != out_shape {
            return Err(shape_err(out_shape, cotangent.shape()));
        }
        // Forward pass keeping every layer input (post-activation) plus the
        // final activation mask source.
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        let mut offset = 0;
        let mut cin = self.input_channels;
        let mut offsets = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let (w, b, next) = self.layer_params(offset, cin, layer);
            offsets.push((offset, cin));
            let pre = conv_forward(&cur, layer, w, b);
            inputs.push(cur);
            cur = if layer.activation == Activation::Relu {
                pre.map(|v| v.max(0.0))
            } else {
                pre
            };
            offset = next;
            cin = layer.out_channels;
        }
        let mut grad_params = vec![0.0; self.params.len()];
        let mut g = cotangent.clone();
        let mut out = cur;
        for (li, layer) in self.layers.iter().enumerate().rev() {
            if layer.activation == Activation::Relu {
                // ReLU derivative from the layer output: zero where clipped.
                g = g.zip_map(&out, |gv, o| if o > 0.0 { gv } else { 0.0 })?;
            }
            let (off, cin) = offsets[li];
            let (w, _, _) = self.layer_params(off, cin, layer);
            let nw = w.len();
            let (gw, rest) = grad_params[off..].split_at_mut(nw);
            let gb = &mut rest[..layer.out_channels];
            let input = &inputs[li];
            g = conv_backward(input, layer, w, &g, gw, gb);
            out = inputs[li].clone();
        }
        if self.global_skip {
            g.axpy(1.0, cotangent)?;
        }
        Ok((g, grad_params))
    }
}

/// Column matrix `[cin * kh * kw][out_h * out_w]` of zero-padded patches.
fn im2col(x: &ImageTensor, layer: &LayerSpec) -> (Vec<f64>, usize, usize) {
    let (cin, h, w) = x.shape();
    let (kh, kw) = layer.kernel;
    let s = layer.stride;
    let (oh, ow) = (conv_out(h, s), conv_out(w, s));
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let p = oh * ow;
    let mut cols = vec![0.0; cin * kh * kw * p];
    for ci in 0..cin {
        let plane = x.channel(ci);
        for dy in 0..kh {
            for dx in 0..kw {
                let row = ((ci * kh + dy) * kw + dx) * p;
                for oy in 0..oh {
                    let iy = (oy * s) as isize + dy as isize - ph;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                    let dst = &mut cols[row + oy * ow..row + (oy + 1) * ow];
                    for (ox, d) in dst.iter_mut().enumerate() {
                        let ix = (ox * s) as isize + dx as isize - pw;
                        if ix >= 0 && ix < w as isize {
                            *d = src[ix as usize];
                        }
                    }
                }
            }
        }
    }
    (cols, oh, ow)
}

/// Scatters column gradients back onto the input grid.
fn col2im(cols: &[f64], layer: &LayerSpec, shape: (usize, usize, usize)) -> ImageTensor {
    let (cin, h, w) = shape;
    let (kh, kw) = layer.kernel;
    let s = layer.stride;
    let (oh, ow) = (conv_out(h, s), conv_out(w, s));
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let p = oh * ow;
    let mut out = ImageTensor::zeros(cin, h, w);
    for ci in 0..cin {
        let plane = out.channel_mut(ci);
        for dy in 0..kh {
            for dx in 0..kw {
                let row = ((ci * kh + dy) * kw + dx) * p;
                for oy in 0..oh {
                    let iy = (oy * s) as isize + dy as isize - ph;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * s) as isize + dx as isize - pw;
                        if ix >= 0 && ix < w as isize {
                            plane[iy as usize * w + ix as usize] += cols[row + oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Output channels processed together so each column row is read once per
/// block rather than once per channel.
const BLOCK: usize = 4;

fn conv_forward(x: &ImageTensor, layer: &LayerSpec, weights: &[f64], bias: &[f64]) -> ImageTensor {
    let (cols, oh, ow) = im2col(x, layer);
    let p = oh * ow;
    let k = cols.len() / p.max(1);
    let mut out = ImageTensor::zeros(layer.out_channels, oh, ow);
    for (co, v) in out.as_mut_slice().chunks_exact_mut(p).enumerate() {
        v.iter_mut().for_each(|d| *d = bias[co]);
    }
    for (blk, dst) in out.as_mut_slice().chunks_mut(BLOCK * p).enumerate() {
        let co0 = blk * BLOCK;
        let rows = dst.len() / p;
        for ki in 0..k {
            let src = &cols[ki * p..(ki + 1) * p];
            if rows == BLOCK {
                let w: [f64; BLOCK] = core::array::from_fn(|j| weights[(co0 + j) * k + ki]);
                let (d0, rest) = dst.split_at_mut(p);
                let (d1, rest) = rest.split_at_mut(p);
                let (d2, d3) = rest.split_at_mut(p);
                for i in 0..p {
                    let s = src[i];
                    d0[i] += w[0] * s;
                    d1[i] += w[1] * s;
                    d2[i] += w[2] * s;
                    d3[i] += w[3] * s;
                }
            } else {
                for (j, d) in dst.chunks_exact_mut(p).enumerate() {
                    let wv = weights[(co0 + j) * k + ki];
                    for (dv, sv) in d.iter_mut().zip(src) {
                        *dv += wv * sv;
                    }
                }
            }
        }
    }
    out
}

/// Dot product with independent partial sums so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 8];
    let chunks = a.len() / 8;
    for i in 0..chunks {
        let (x, y) = (&a[i * 8..i * 8 + 8], &b[i * 8..i * 8 + 8]);
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let tail: f64 = a[chunks * 8..].iter().zip(&b[chunks * 8..]).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}

/// Accumulates weight/bias gradients and returns the input gradient.
fn conv_backward(
    x: &ImageTensor,
    layer: &LayerSpec,
    weights: &[f64],
    g_out: &ImageTensor,
    g_w: &mut [f64],
    g_b: &mut [f64],
) -> ImageTensor {
    let (cols, oh, ow) = im2col(x, layer);
    let p = oh * ow;
    let k = cols.len() / p.max(1);
    let cout = layer.out_channels;
    for (co, gb) in g_b.iter_mut().enumerate() {
        *gb += g_out.channel(co).iter().sum::<f64>();
    }
    let g = g_out.as_slice();
    let mut g_cols = vec![0.0; cols.len()];
    for ki in 0..k {
        let src = &cols[ki * p..(ki + 1) * p];
        let gc = &mut g_cols[ki * p..(ki + 1) * p];
        let mut co = 0;
        while co + BLOCK <= cout {
            let w: [f64; BLOCK] = core::array::from_fn(|j| weights[(co + j) * k + ki]);
            let (g0, g1, g2, g3) = (
                &g[co * p..(co + 1) * p],
                &g[(co + 1) * p..(co + 2) * p],
                &g[(co + 2) * p..(co + 3) * p],
                &g[(co + 3) * p..(co + 4) * p],
            );
            for i in 0..p {
                gc[i] += w[0] * g0[i] + w[1] * g1[i] + w[2] * g2[i] + w[3] * g3[i];
            }
            for (j, gj) in [g0, g1, g2, g3].into_iter().enumerate() {
                g_w[(co + j) * k + ki] += dot(src, gj);
            }
            co += BLOCK;
        }
        for c in co..cout {
            let gj = &g[c * p..(c + 1) * p];
            let wv = weights[c * k + ki];
            for (d, gv) in gc.iter_mut().zip(gj) {
                *d += wv * gv;
            }
            g_w[c * k + ki] += dot(src, gj);
        }
    }
    col2im(&g_cols, layer, x.shape())
}

impl FeatureNetwork for PredictorNetwork {
    fn features(&self, input: &ImageTensor) -> Result<ImageTensor> {
        self.forward(input)
    }

    fn feature_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        if input.0 != self.input_channels {
            return Err(shape_err(self.input_channels, input.0));
        }
        Ok(self.output_shape(input.1, input.2))
    }

    fn input_vjp(&self, input: &ImageTensor, cotangent: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.vjp(input, cotangent)?.0)
    }
}

impl Trainable for PredictorNetwork {
    fn params(&self) -> Vec<f64> {
        self.params.clone()
    }

    fn num_params(&self) -> usize {
        self.params.len()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(shape_err(self.params.len(), params.len()));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("predictor parameters"));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn param_vjp(&self, input: &ImageTensor, cotangent: &ImageTensor) -> Result<Vec<f64>> {
        Ok(self.vjp(input, cotangent)?.1)
    }
}

/// Widths, kernels and strides of a feature regressor; the last entry is the
/// linear output layer and its width is set by the paired feature network.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhiArchitecture {
    pub hidden_widths: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Default for PhiArchitecture {
    /// `{32, 64, 64, 64, out}` maps, kernels `{9, 9, 9, 3, 1}`, downsampling
    /// entering layers 3 and 4.
    fn default() -> Self {
        Self {
            hidden_widths: vec![32, 64, 64, 64],
            kernels: vec![9, 9, 9, 3, 1],
            strides: vec![1, 1, 2, 2, 1],
        }
    }
}

impl PhiArchitecture {
    /// Total subsampling factor of the stack.
    pub fn stride(&self) -> usize {
        self.strides.iter().product()
    }

    pub fn layers(&self, out_channels: usize) -> Result<Vec<LayerSpec>> {
        let n = self.hidden_widths.len() + 1;
        if self.kernels.len() != n || self.strides.len() != n {
            return Err(Error::InvalidConfig(alloc::format!(
                "architecture needs {n} kernels and strides"
            )));
        }
        let mut layers: Vec<LayerSpec> = self
            .hidden_widths
            .iter()
            .enumerate()
            .map(|(i, &w)| LayerSpec::hidden(w, self.kernels[i], self.strides[i]))
            .collect();
        let mut out = LayerSpec::output(out_channels, self.kernels[n - 1]);
        out.stride = self.strides[n - 1];
        layers.push(out);
        Ok(layers)
    }

    pub fn build(&self, out_channels: usize, seed: u64) -> Result<PredictorNetwork> {
        PredictorNetwork::new(1, self.layers(out_channels)?, seed)
    }
}

/// `Phi` for the default 219-channel scattering statistics.
pub fn build_phi_default(seed: u64) -> Result<PredictorNetwork> {
    PhiArchitecture::default().build(crate::scattering::DEFAULT_CHANNELS, seed)
}

/// Pixel-space baseline: `{64, 64, 64, 32}` ReLU maps with kernels
/// `{7, 3, 3, 5}`, then a 1x1 linear output channel added to the
/// bicubic input.
pub fn build_baseline_default(seed: u64) -> Result<PredictorNetwork> {
    PredictorNetwork::new(
        1,
        vec![
            LayerSpec::hidden(64, 7, 1),
            LayerSpec::hidden(64, 3, 1),
            LayerSpec::hidden(64, 3, 1),
            LayerSpec::hidden(32, 5, 1),
            LayerSpec::output(1, 1),
        ],
        seed,
    )?
    .with_global_skip(true)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Objective {
    /// `||Phi(x) - Psi(r)||^2`.
    FeatureRegression,
    /// `||Phi(x) - y||^2`.
    PixelRegression,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub objective: Objective,
    pub batch_size: usize,
    pub steps: usize,
    pub optimizer: OptimizerConfig,
    pub seed: u64,
    pub patch_size: usize,
    /// Optional per-channel weights of the feature loss (identity if absent).
    pub channel_weights: Option<Vec<f64>>,
    /// Batch loss above which training aborts.
    pub divergence_threshold: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            objective: Objective::FeatureRegression,
            batch_size: 8,
            steps: 2000,
            optimizer: OptimizerConfig::adam(1e-3),
            seed: 0,
            patch_size: 64,
            channel_weights: None,
            divergence_threshold: 1e6,
        }
    }
}

/// One training example. `input` is the network input (the bicubic
/// upsampling of the low-resolution patch); `target` is the residual `r` in
/// feature mode and the high-resolution patch `y` in pixel mode.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub input: ImageTensor,
    pub target: ImageTensor,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Mean minibatch loss per step.
    pub trace: Vec<f64>,
    /// Mean loss over the whole dataset before and after training.
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Optimizer state after the last step, for checkpointing.
    pub optimizer: Option<Optimizer>,
}

/// `sum_c w_c ||out_c - target_c||^2` and its gradient w.r.t. `out`.
fn weighted_sq_loss(out: &ImageTensor, target: &ImageTensor, weights: Option<&[f64]>) -> Result<(f64, ImageTensor)> {
    let diff = out.sub(target)?;
    let (c, h, w) = diff.shape();
    let mut grad = ImageTensor::zeros(c, h, w);
    let mut loss = 0.0;
    for ch in 0..c {
        let wt = weights.map_or(1.0, |ws| ws[ch]);
        for (g, d) in grad.channel_mut(ch).iter_mut().zip(diff.channel(ch)) {
            loss += wt * d * d;
            *g = 2.0 * wt * d;
        }
    }
    Ok((loss, grad))
}

/// Loss of one example and its parameter gradient.
pub fn example_loss_grad(
    net: &PredictorNetwork,
    input: &ImageTensor,
    target: &ImageTensor,
    weights: Option<&[f64]>,
) -> Result<(f64, Vec<f64>)> {
    let out = net.forward(input)?;
    let (loss, g) = weighted_sq_loss(&out, target, weights)?;
    Ok((loss, net.param_vjp(input, &g)?))
}

/// Mean loss over a dataset of (input, regression-target) pairs.
pub fn dataset_loss(net: &PredictorNetwork, data: &[(ImageTensor, ImageTensor)], weights: Option<&[f64]>) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut total = 0.0;
    for (x, t) in data {
        total += weighted_sq_loss(&net.forward(x)?, t, weights)?.0;
    }
    Ok(total / data.len() as f64)
}

/// Minibatch training. In feature mode the targets are `psi.features(r)`,
/// computed once up front.
pub fn train(
    net: &mut PredictorNetwork,
    dataset: &[TrainingPair],
    psi: Option<&dyn FeatureNetwork>,
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    if dataset.is_empty() {
        return Err(Error::EmptySamples);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    cfg.optimizer.validate()?;
    let data: Vec<(ImageTensor, ImageTensor)> = match cfg.objective {
        Objective::FeatureRegression => {
            let psi = psi.ok_or_else(|| Error::InvalidConfig("feature regression needs a feature network".into()))?;
            dataset
                .iter()
                .map(|p| Ok((p.input.clone(), psi.features(&p.target)?)))
                .collect::<Result<_>>()?
        }
        Objective::PixelRegression => dataset.iter().map(|p| (p.input.clone(), p.target.clone())).collect(),
    };
    let weights = cfg.channel_weights.as_deref();
    if let Some(ws) = weights {
        if ws.len() != net.output_channels() {
            return Err(shape_err(net.output_channels(), ws.len()));
        }
    }
    let mut opt = cfg.optimizer.build(net.num_params())?;
    let mut rng = seeded(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut cursor = order.len();
    let mut report = TrainReport {
        initial_loss: dataset_loss(net, &data, weights)?,
        ..TrainReport::default()
    };
    let mut params = net.params();
    let mut grad = vec![0.0; params.len()];
    for step in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        let mut batch_loss = 0.0;
        let batch = cfg.batch_size.min(data.len());
        for _ in 0..batch {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (x, t) = &data[order[cursor]];
            cursor += 1;
            let (loss, g) = example_loss_grad(net, x, t, weights)?;
            batch_loss += loss;
            for (a, b) in grad.iter_mut().zip(&g) {
                *a += b;
            }
        }
        let inv = 1.0 / batch as f64;
        batch_loss *= inv;
        grad.iter_mut().for_each(|g| *g *= inv);
        if !batch_loss.is_finite() || batch_loss > cfg.divergence_threshold {
            return Err(Error::Diverged {
                step,
                reason: alloc::format!(
                    "batch loss {batch_loss:e} (threshold {:e}); gradient norm {:e}",
                    cfg.divergence_threshold,
                    grad.iter().map(|g| g * g).sum::<f64>().sqrt()
                ),
            });
        }
        report.trace.push(batch_loss);
        opt.step(&mut params, &grad)?;
        net.set_params(&params)?;
    }
    report.final_loss = dataset_loss(net, &data, weights)?;
    report.optimizer = Some(opt);
    Ok(report)
}
