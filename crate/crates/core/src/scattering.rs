//! Scattering sufficient statistics: averaged cascades of wavelet-modulus
//! operators, their exact input gradient, and the generic feature-network
//! interface shared with the trainable predictors.
//!
//! A coefficient of order `k` is `| ... |r * psi_1| * ... * psi_k| * phi`,
//! subsampled by `2^(J - oversampling)` and scaled by `c^k`. Order-2 paths
//! only go from finer to strictly coarser wavelet scales.
//!
//! The total-variation channel uses the complex gradient filter as an extra
//! orientation at the finest scale. How it enters second order is set by
//! [`TvPropagation`]; the default, [`TvPropagation::SelfCascade`], adds the
//! single path `||r * psi_h| * psi_h| * phi`, which brings the `J = 3`,
//! `L = 8` configuration to 219 channels.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{Fft2Plan, ImageTensor};
use crate::wavelets::{build_morlet_bank, build_tv_filter, FilterBank, MorletParams};

/// Any differentiable map from images to feature tensors.
pub trait FeatureNetwork {
    fn features(&self, input: &ImageTensor) -> Result<ImageTensor>;

    /// Feature shape `(channels, height, width)` for an input shape.
    fn feature_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)>;

    /// Gradient of `<features(input), cotangent>` with respect to `input`.
    fn input_vjp(&self, input: &ImageTensor, cotangent: &ImageTensor) -> Result<ImageTensor>;

    /// `1/2 ||features(input) - target||^2` and its input gradient.
    fn loss_grad(&self, input: &ImageTensor, target: &ImageTensor) -> Result<(f64, ImageTensor)> {
        let diff = self.features(input)?.sub(target)?;
        let grad = self.input_vjp(input, &diff)?;
        Ok((0.5 * diff.norm_sq(), grad))
    }
}

/// A feature network whose parameters can be read, replaced and differentiated.
pub trait Trainable {
    fn params(&self) -> Vec<f64>;

    fn set_params(&mut self, params: &[f64]) -> Result<()>;

    fn num_params(&self) -> usize {
        self.params().len()
    }

    /// Gradient of `<output(input), cotangent>` with respect to the parameters.
    fn param_vjp(&self, input: &ImageTensor, cotangent: &ImageTensor) -> Result<Vec<f64>>;
}

/// `Psi(r) = r`; handy for tests and as a pixel-space baseline energy.
#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityNetwork;

impl FeatureNetwork for IdentityNetwork {
    fn features(&self, input: &ImageTensor) -> Result<ImageTensor> {
        Ok(input.clone())
    }

    fn feature_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        Ok(input)
    }

    fn input_vjp(&self, input: &ImageTensor, cotangent: &ImageTensor) -> Result<ImageTensor> {
        input.check_same_shape(cotangent)?;
        Ok(cotangent.clone())
    }
}

/// One filter along a scattering path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PathFilter {
    Wavelet { scale: usize, orientation: usize },
    /// Complex gradient filter at the finest scale.
    Tv,
}

impl PathFilter {
    /// Scale at which the filter acts (the gradient filter sits at scale 0).
    pub fn scale(&self) -> usize {
        match *self {
            PathFilter::Wavelet { scale, .. } => scale,
            PathFilter::Tv => 0,
        }
    }
}

/// Ordered filter sequence identifying one output channel.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScatteringPath {
    filters: Vec<PathFilter>,
}

impl ScatteringPath {
    pub fn new(filters: Vec<PathFilter>) -> Self {
        Self { filters }
    }

    pub fn order(&self) -> usize {
        self.filters.len()
    }

    /// Number of modulus nonlinearities along the path (equals the order).
    pub fn nonlinearities(&self) -> usize {
        self.filters.len()
    }

    pub fn filters(&self) -> &[PathFilter] {
        &self.filters
    }

    pub fn scales(&self) -> Vec<usize> {
        self.filters.iter().map(PathFilter::scale).collect()
    }

    pub fn involves_tv(&self) -> bool {
        self.filters.contains(&PathFilter::Tv)
    }

    /// Short human-readable label such as `"(0,3)->(2,1)"` or `"tv"`.
    pub fn label(&self) -> String {
        if self.filters.is_empty() {
            return "lowpass".into();
        }
        let parts: Vec<String> = self
            .filters
            .iter()
            .map(|f| match f {
                PathFilter::Wavelet { scale, orientation } => {
                    alloc::format!("({scale},{orientation})")
                }
                PathFilter::Tv => "tv".into(),
            })
            .collect();
        parts.join("->")
    }
}

/// How the total-variation channel enters second order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum TvPropagation {
    /// First order only.
    None,
    /// One extra path `||r * psi_h| * psi_h| * phi`.
    #[default]
    SelfCascade,
    /// The gradient modulus is cascaded into every wavelet at scales `>= 1`.
    AllCoarser,
}

impl TvPropagation {
    pub fn name(&self) -> &'static str {
        match self {
            TvPropagation::None => "none",
            TvPropagation::SelfCascade => "self-cascade",
            TvPropagation::AllCoarser => "all-coarser",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScatteringConfig {
    pub scales: usize,
    pub orientations: usize,
    pub max_order: usize,
    pub include_tv: bool,
    pub tv_propagation: TvPropagation,
    /// Per-nonlinearity feature gain `c`; channels of order `k` are scaled by `c^k`.
    pub renorm_base: f64,
    /// Extra resolution retained after pooling, as a power of two.
    pub oversampling: usize,
    pub wavelet: MorletParams,
}

/// Channel count of the default configuration.
pub const DEFAULT_CHANNELS: usize = 219;

impl Default for ScatteringConfig {
    fn default() -> Self {
        Self {
            scales: 3,
            orientations: 8,
            max_order: 2,
            include_tv: true,
            tv_propagation: TvPropagation::SelfCascade,
            renorm_base: 2.0,
            oversampling: 0,
            wavelet: MorletParams::default(),
        }
    }
}

impl ScatteringConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scales == 0 || self.orientations == 0 {
            return Err(Error::InvalidConfig("J and L must be at least 1".into()));
        }
        if !(1..=2).contains(&self.max_order) {
            return Err(Error::InvalidConfig(alloc::format!(
                "max_order must be 1 or 2, got {}",
                self.max_order
            )));
        }
        if !(self.renorm_base > 0.0 && self.renorm_base.is_finite()) {
            return Err(Error::InvalidConfig("renormalization base must be positive".into()));
        }
        if self.oversampling > self.scales {
            return Err(Error::InvalidConfig("oversampling exceeds J".into()));
        }
        Ok(())
    }

    /// Subsampling factor of the pooled output grid.
    pub fn stride(&self) -> usize {
        1 << (self.scales - self.oversampling.min(self.scales))
    }

    pub fn output_grid(&self, height: usize, width: usize) -> (usize, usize) {
        (height / self.stride(), width / self.stride())
    }

    pub fn channel_count(&self) -> usize {
        enumerate_paths(self).len()
    }

    /// Stable text identifying everything that changes the feature map.
    pub fn fingerprint(&self) -> String {
        let w = &self.wavelet;
        alloc::format!(
            "scat-v1;J={};L={};order={};tv={};tvprop={};c={:e};os={};xi={:e};sigma={:?};slant={:?};phi={:e};norm={}",
            self.scales,
            self.orientations,
            self.max_order,
            self.include_tv,
            self.tv_propagation.name(),
            self.renorm_base,
            self.oversampling,
            w.xi,
            w.sigma,
            w.slant,
            w.lowpass_sigma,
            w.normalize
        )
    }

    fn first_order_filters(&self) -> Vec<PathFilter> {
        let mut out = Vec::new();
        for scale in 0..self.scales {
            for orientation in 0..self.orientations {
                out.push(PathFilter::Wavelet { scale, orientation });
            }
            if scale == 0 && self.include_tv {
                out.push(PathFilter::Tv);
            }
        }
        out
    }

    fn children(&self, parent: PathFilter) -> Vec<PathFilter> {
        let coarser = |from: usize| {
            (from..self.scales)
                .flat_map(move |scale| {
                    (0..self.orientations).map(move |orientation| PathFilter::Wavelet {
                        scale,
                        orientation,
                    })
                })
                .collect::<Vec<_>>()
        };
        match parent {
            PathFilter::Wavelet { scale, .. } => coarser(scale + 1),
            PathFilter::Tv => match self.tv_propagation {
                TvPropagation::None => Vec::new(),
                TvPropagation::SelfCascade => vec![PathFilter::Tv],
                TvPropagation::AllCoarser => coarser(1),
            },
        }
    }
}

/// Deterministic path list: order 0, then order 1 by `(scale, orientation)`
/// with the gradient filter last within scale 0, then order 2 in
/// lexicographic order of the same filter ordering.
pub fn enumerate_paths(cfg: &ScatteringConfig) -> Vec<ScatteringPath> {
    let first = cfg.first_order_filters();
    let mut paths = vec![ScatteringPath::new(Vec::new())];
    paths.extend(first.iter().map(|&f| ScatteringPath::new(vec![f])));
    if cfg.max_order >= 2 {
        for &f1 in &first {
            for f2 in cfg.children(f1) {
                paths.push(ScatteringPath::new(vec![f1, f2]));
            }
        }
    }
    paths
}

/// Order-2 coefficient count (no gradient channel) for a bank whose coarsest
/// scales are invisible after downsampling by `alpha`:
/// `J' = J - ceil(log2 alpha)`, count `1 + J' L + L^2 J'(J'-1)/2`.
///
/// `alpha = 1` means no reduction.
pub fn effective_coefficients(scales: usize, orientations: usize, alpha: f64) -> Result<usize> {
    if !(alpha >= 1.0 && alpha.is_finite()) {
        return Err(Error::FactorTooLarge { alpha, j: scales });
    }
    let mut lost = 0usize;
    while ((1u64 << lost) as f64) < alpha * (1.0 - 1e-12) {
        lost += 1;
    }
    if lost >= scales && alpha > 1.0 {
        return Err(Error::FactorTooLarge { alpha, j: scales });
    }
    let j = scales - lost;
    let cfg = ScatteringConfig {
        scales: j,
        orientations,
        include_tv: false,
        ..ScatteringConfig::default()
    };
    Ok(enumerate_paths(&cfg).len())
}

/// Pooled scattering maps, one channel per path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatteringCoefficients {
    pub paths: Vec<ScatteringPath>,
    pub maps: ImageTensor,
}

impl ScatteringCoefficients {
    /// Sum of squares of the channels of each order (index = order).
    pub fn energy_by_order(&self) -> Vec<f64> {
        let max = self.paths.iter().map(|p| p.order()).max().unwrap_or(0);
        let mut out = vec![0.0; max + 1];
        for (c, p) in self.paths.iter().enumerate() {
            out[p.order()] += self.maps.channel(c).iter().map(|v| v * v).sum::<f64>();
        }
        out
    }
}

/// Scales each channel by `c^k`, `k` being its nonlinearity count.
pub fn renormalize(coeffs: &ScatteringCoefficients, c: f64) -> ScatteringCoefficients {
    let mut maps = coeffs.maps.clone();
    for (ch, path) in coeffs.paths.iter().enumerate() {
        let gain = c.powi(path.nonlinearities() as i32);
        for v in maps.channel_mut(ch) {
            *v *= gain;
        }
    }
    ScatteringCoefficients {
        paths: coeffs.paths.clone(),
        maps,
    }
}

/// Frequency-domain gradients for every trainable filter of a bank.
#[derive(Debug, Clone)]
pub struct FilterGradients {
    pub bandpass: Vec<Vec<Complex64>>,
    pub tv: Option<Vec<Complex64>>,
}

/// The scattering network with its bank and transform plans.
#[derive(Debug, Clone)]
pub struct Scattering {
    cfg: ScatteringConfig,
    bank: FilterBank,
    paths: Vec<ScatteringPath>,
    first: Vec<PathFilter>,
    children: Vec<Vec<PathFilter>>,
    full: Fft2Plan,
    pooled: Fft2Plan,
    height: usize,
    width: usize,
}

enum Cotangent<'a> {
    None,
    Given(&'a ImageTensor),
    Loss(&'a ImageTensor),
}

struct Pass {
    maps: ImageTensor,
    loss: f64,
    input_grad: Option<ImageTensor>,
    filter_grads: Option<FilterGradients>,
}

impl Scattering {
    /// Builds the Morlet bank (and gradient filter, if enabled) for a
    /// `height x width` input grid.
    pub fn new(cfg: ScatteringConfig, height: usize, width: usize) -> Result<Self> {
        cfg.validate()?;
        let mut bank = build_morlet_bank(cfg.scales, cfg.orientations, (height, width), cfg.wavelet)?;
        if cfg.include_tv {
            bank = bank.with_tv(Some(build_tv_filter((height, width))));
        }
        Self::with_bank(cfg, bank)
    }

    pub fn with_bank(cfg: ScatteringConfig, bank: FilterBank) -> Result<Self> {
        cfg.validate()?;
        if bank.scales() != cfg.scales || bank.orientations() != cfg.orientations {
            return Err(Error::InvalidConfig("filter bank does not match J/L".into()));
        }
        if cfg.include_tv != bank.tv_filter().is_some() {
            return Err(Error::InvalidConfig(
                "gradient filter presence does not match include_tv".into(),
            ));
        }
        let (height, width) = bank.shape();
        let unit = 1usize << cfg.scales;
        if height % unit != 0 || width % unit != 0 {
            return Err(Error::ShapeMismatch {
                expected: alloc::format!("dimensions divisible by 2^J = {unit}"),
                actual: alloc::format!("{height}x{width}"),
            });
        }
        let paths = enumerate_paths(&cfg);
        let first = cfg.first_order_filters();
        let children = first.iter().map(|&f| cfg.children(f)).collect();
        let (ph, pw) = cfg.output_grid(height, width);
        Ok(Self {
            cfg,
            bank,
            paths,
            first,
            children,
            full: Fft2Plan::new(height, width),
            pooled: Fft2Plan::new(ph, pw),
            height,
            width,
        })
    }

    pub fn config(&self) -> &ScatteringConfig {
        &self.cfg
    }

    pub fn bank(&self) -> &FilterBank {
        &self.bank
    }

    pub fn bank_mut(&mut self) -> &mut FilterBank {
        &mut self.bank
    }

    pub fn paths(&self) -> &[ScatteringPath] {
        &self.paths
    }

    pub fn input_shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn output_shape(&self) -> (usize, usize, usize) {
        let (h, w) = self.cfg.output_grid(self.height, self.width);
        (self.paths.len(), h, w)
    }

    pub fn forward(&self, r: &ImageTensor) -> Result<ScatteringCoefficients> {
        let pass = self.run(r, Cotangent::None, false)?;
        Ok(ScatteringCoefficients {
            paths: self.paths.clone(),
            maps: pass.maps,
        })
    }

    /// `1/2 ||Psi(r) - target||^2` and its exact input gradient.
    pub fn loss_grad_coeffs(
        &self,
        r: &ImageTensor,
        target: &ScatteringCoefficients,
    ) -> Result<(f64, ImageTensor)> {
        if target.paths != self.paths {
            return Err(Error::PathMismatch);
        }
        FeatureNetwork::loss_grad(self, r, &target.maps)
    }

    /// Input and filter gradients of `<Psi(r), cotangent>`.
    pub fn full_vjp(
        &self,
        r: &ImageTensor,
        cotangent: &ImageTensor,
    ) -> Result<(ImageTensor, FilterGradients)> {
        let pass = self.run(r, Cotangent::Given(cotangent), true)?;
        Ok((pass.input_grad.unwrap(), pass.filter_grads.unwrap()))
    }

    fn filter(&self, f: PathFilter) -> &[Complex64] {
        match f {
            PathFilter::Wavelet { scale, orientation } => {
                self.bank.bandpass(scale, orientation).as_slice()
            }
            PathFilter::Tv => self
                .bank
                .tv_filter()
                .expect("gradient filter present when paths use it")
                .as_slice(),
        }
    }

    fn check_input(&self, r: &ImageTensor) -> Result<()> {
        if r.shape() != (1, self.height, self.width) {
            return Err(shape_err((1, self.height, self.width), r.shape()));
        }
        if !r.is_finite() {
            return Err(Error::NonFinite("scattering input"));
        }
        Ok(())
    }

    /// Low-pass, subsample, and return the pooled real map.
    fn pool(&self, spectrum: &[Complex64], scratch: &mut Vec<Complex64>) -> Vec<f64> {
        let (h, w) = (self.height, self.width);
        let (ph, pw) = self.pooled.shape();
        scratch.clear();
        scratch.resize(ph * pw, Complex64::new(0.0, 0.0));
        let phi = self.bank.lowpass().as_slice();
        for ky in 0..h {
            let py = ky % ph;
            for kx in 0..w {
                let idx = ky * w + kx;
                scratch[py * pw + kx % pw] += spectrum[idx] * phi[idx];
            }
        }
        self.pooled.inverse(scratch);
        let s = (h / ph * (w / pw)) as f64;
        scratch.iter().map(|z| z.re / s).collect()
    }

    /// Adjoint of [`Self::pool`]: adds `conj(phi) * tile(FFT(g))` to `acc`.
    fn pool_adjoint(&self, g: &[f64], acc: &mut [Complex64], scratch: &mut Vec<Complex64>) {
        let (h, w) = (self.height, self.width);
        let (ph, pw) = self.pooled.shape();
        scratch.clear();
        scratch.extend(g.iter().map(|&v| Complex64::new(v, 0.0)));
        self.pooled.forward(scratch);
        let phi = self.bank.lowpass().as_slice();
        for ky in 0..h {
            let py = ky % ph;
            for kx in 0..w {
                let idx = ky * w + kx;
                acc[idx] += phi[idx].conj() * scratch[py * pw + kx % pw];
            }
        }
    }

    fn run(&self, r: &ImageTensor, cot: Cotangent<'_>, want_filters: bool) -> Result<Pass> {
        self.check_input(r)?;
        let (ch, ph, pw) = self.output_shape();
        if let Cotangent::Given(t) | Cotangent::Loss(t) = cot {
            if t.shape() != (ch, ph, pw) {
                return Err(shape_err((ch, ph, pw), t.shape()));
            }
        }
        let backward = !matches!(cot, Cotangent::None);
        let n = self.height * self.width;
        let inv_n = 1.0 / n as f64;
        let c = self.cfg.renorm_base;
        let zero = Complex64::new(0.0, 0.0);

        let mut maps = ImageTensor::zeros(ch, ph, pw);
        let mut loss = 0.0;
        let mut scratch = Vec::new();
        let mut grad_r_hat = vec![zero; if backward { n } else { 0 }];
        let mut filter_grads = want_filters.then(|| FilterGradients {
            bandpass: vec![vec![zero; n]; self.bank.bandpass_filters().len()],
            tv: self.bank.tv_filter().map(|_| vec![zero; n]),
        });

        // Writes one pooled channel and returns the gradient w.r.t. the
        // unscaled pooled map (empty when running forward only).
        let mut emit = |channel: usize, order: usize, pooled: Vec<f64>, maps: &mut ImageTensor| {
            let gain = c.powi(order as i32);
            let out = maps.channel_mut(channel);
            for (o, v) in out.iter_mut().zip(&pooled) {
                *o = gain * v;
            }
            match cot {
                Cotangent::None => Vec::new(),
                Cotangent::Given(t) => t.channel(channel).iter().map(|g| g * gain).collect(),
                Cotangent::Loss(t) => out
                    .iter()
                    .zip(t.channel(channel))
                    .map(|(o, tv)| {
                        let d = o - tv;
                        loss += 0.5 * d * d;
                        d * gain
                    })
                    .collect(),
            }
        };

        let r_hat = self.full.forward_real(r.as_slice());

        // Order 0.
        let mut channel = 0;
        let pooled = self.pool(&r_hat, &mut scratch);
        let g = emit(channel, 0, pooled, &mut maps);
        if backward {
            self.pool_adjoint(&g, &mut grad_r_hat, &mut scratch);
        }
        channel += 1;

        // Order-2 channels follow all order-1 channels.
        let mut channel2 = 1 + self.first.len();
        let mut u1 = vec![zero; n];
        let mut m1_hat = vec![zero; n];
        let mut u2 = vec![zero; n];
        let mut work = vec![zero; n];
        let mut acc_m1 = vec![zero; n];
        for (i, &f1) in self.first.iter().enumerate() {
            let psi1 = self.filter(f1);
            for k in 0..n {
                u1[k] = r_hat[k] * psi1[k];
            }
            self.full.inverse(&mut u1);
            for k in 0..n {
                m1_hat[k] = Complex64::new(u1[k].norm(), 0.0);
            }
            self.full.forward(&mut m1_hat);
            let pooled = self.pool(&m1_hat, &mut scratch);
            let g1 = emit(channel, 1, pooled, &mut maps);
            if backward {
                acc_m1.iter_mut().for_each(|z| *z = zero);
                self.pool_adjoint(&g1, &mut acc_m1, &mut scratch);
            }
            channel += 1;

            if self.cfg.max_order >= 2 {
                for &f2 in &self.children[i] {
                    let psi2 = self.filter(f2);
                    for k in 0..n {
                        u2[k] = m1_hat[k] * psi2[k];
                    }
                    self.full.inverse(&mut u2);
                    for k in 0..n {
                        work[k] = Complex64::new(u2[k].norm(), 0.0);
                    }
                    self.full.forward(&mut work);
                    let pooled = self.pool(&work, &mut scratch);
                    let g2 = emit(channel2, 2, pooled, &mut maps);
                    channel2 += 1;
                    if !backward {
                        continue;
                    }
                    // d/dM2 = Re IFFT(conj(phi) tile(FFT(g2)))
                    work.iter_mut().for_each(|z| *z = zero);
                    self.pool_adjoint(&g2, &mut work, &mut scratch);
                    self.full.inverse(&mut work);
                    for k in 0..n {
                        work[k] = modulus_backward(work[k].re, u2[k]);
                    }
                    self.full.forward(&mut work);
                    for k in 0..n {
                        acc_m1[k] += psi2[k].conj() * work[k];
                    }
                    if let Some(fg) = filter_grads.as_mut() {
                        let slot = filter_slot(fg, f2, self.cfg.orientations);
                        for k in 0..n {
                            slot[k] += m1_hat[k].conj() * work[k] * inv_n;
                        }
                    }
                }
            }

            if backward {
                self.full.inverse(&mut acc_m1);
                for k in 0..n {
                    acc_m1[k] = modulus_backward(acc_m1[k].re, u1[k]);
                }
                self.full.forward(&mut acc_m1);
                for k in 0..n {
                    grad_r_hat[k] += psi1[k].conj() * acc_m1[k];
                }
                if let Some(fg) = filter_grads.as_mut() {
                    let slot = filter_slot(fg, f1, self.cfg.orientations);
                    for k in 0..n {
                        slot[k] += r_hat[k].conj() * acc_m1[k] * inv_n;
                    }
                }
            }
        }

        let input_grad = if backward {
            self.full.inverse(&mut grad_r_hat);
            Some(ImageTensor::from_vec(
                1,
                self.height,
                self.width,
                grad_r_hat.iter().map(|z| z.re).collect(),
            )?)
        } else {
            None
        };
        Ok(Pass {
            maps,
            loss,
            input_grad,
            filter_grads,
        })
    }
}

fn filter_slot(fg: &mut FilterGradients, f: PathFilter, orientations: usize) -> &mut [Complex64] {
    match f {
        PathFilter::Wavelet { scale, orientation } => &mut fg.bandpass[scale * orientations + orientation],
        PathFilter::Tv => fg.tv.as_mut().expect("gradient filter present"),
    }
}

/// Complex cotangent of `|u|` given the real cotangent `g`; zero at `u = 0`.
#[inline]
fn modulus_backward(g: f64, u: Complex64) -> Complex64 {
    let m = u.norm();
    if m < 1e-12 {
        Complex64::new(0.0, 0.0)
    } else {
        u * (g / m)
    }
}

impl FeatureNetwork for Scattering {
    fn features(&self, input: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.run(input, Cotangent::None, false)?.maps)
    }

    fn feature_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        if input != (1, self.height, self.width) {
            return Err(shape_err((1, self.height, self.width), input));
        }
        Ok(self.output_shape())
    }

    fn input_vjp(&self, input: &ImageTensor, cotangent: &ImageTensor) -> Result<ImageTensor> {
        Ok(self.run(input, Cotangent::Given(cotangent), false)?.input_grad.unwrap())
    }

    fn loss_grad(&self, input: &ImageTensor, target: &ImageTensor) -> Result<(f64, ImageTensor)> {
        let pass = self.run(input, Cotangent::Loss(target), false)?;
        Ok((pass.loss, pass.input_grad.unwrap()))
    }
}

/// The trainable parameters are the real and imaginary parts of every
/// band-pass filter (and the gradient filter, when present) on the DFT grid.
/// The low-pass stays fixed.
impl Trainable for Scattering {
    fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for f in self.bank.bandpass_filters().iter().chain(self.bank.tv_filter()) {
            for z in f.as_slice() {
                out.push(z.re);
                out.push(z.im);
            }
        }
        out
    }

    fn num_params(&self) -> usize {
        let filters = self.bank.bandpass_filters().len() + usize::from(self.bank.tv_filter().is_some());
        2 * filters * self.height * self.width
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.num_params() {
            return Err(shape_err(self.num_params(), params.len()));
        }
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scattering filter parameters"));
        }
        let mut chunks = params.chunks_exact(2);
        for f in self.bank.trainable_filters_mut() {
            for (z, p) in f.as_mut_slice().iter_mut().zip(&mut chunks) {
                *z = Complex64::new(p[0], p[1]);
            }
        }
        Ok(())
    }

    fn param_vjp(&self, input: &ImageTensor, cotangent: &ImageTensor) -> Result<Vec<f64>> {
        let (_, grads) = self.full_vjp(input, cotangent)?;
        let mut out = Vec::with_capacity(self.num_params());
        for g in grads.bandpass.iter().chain(grads.tv.iter()) {
            for z in g {
                out.push(z.re);
                out.push(z.im);
            }
        }
        Ok(out)
    }
}

/// Builds a network for `bank` and evaluates `Psi(r)`.
pub fn scatter_forward(
    r: &ImageTensor,
    bank: &FilterBank,
    cfg: &ScatteringConfig,
) -> Result<ScatteringCoefficients> {
    Scattering::with_bank(*cfg, bank.clone())?.forward(r)
}

/// `1/2 ||Psi(r) - target||^2` and its input gradient.
pub fn scatter_loss_grad(
    r: &ImageTensor,
    target: &ScatteringCoefficients,
    bank: &FilterBank,
    cfg: &ScatteringConfig,
) -> Result<(f64, ImageTensor)> {
    Scattering::with_bank(*cfg, bank.clone())?.loss_grad_coeffs(r, target)
}
