//! Gibbs energies and high-likelihood sampling by gradient descent.
//!
//! The energy of a residual `r` given conditioning features `t = Phi(U_bar(x))`
//! is `||t - Psi(r)||^2 + lambda_tv * TV(r)`. Sampling minimizes it over `r`,
//! either with Adam or with plain gradient descent under an Armijo
//! backtracking line search (which makes the energy trace non-increasing).
//!
//! The optimized variable is always the residual. "Linear-predict"
//! initialization therefore means `r = 0`, i.e. the estimate starts at the
//! bicubic upsampling.

use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::degradation::{linear_predict, DegradationModel};
use crate::error::{shape_err, Error, Result};
use crate::numerics::ImageTensor;
use crate::optim::OptimizerConfig;
use crate::rng::{gaussian_tensor, seeded};
use crate::scattering::FeatureNetwork;

/// Isotropic total variation with periodic forward differences,
/// `sum sqrt((r[y, x+1] - r)^2 + (r[y+1, x] - r)^2)`, and a subgradient that
/// is zero wherever the local gradient vanishes.
pub fn total_variation(r: &ImageTensor) -> (f64, ImageTensor) {
    let (c, h, w) = r.shape();
    let mut grad = ImageTensor::zeros(c, h, w);
    let mut total = 0.0;
    for ch in 0..c {
        let p = r.channel(ch);
        let g = grad.channel_mut(ch);
        for y in 0..h {
            let yn = (y + 1) % h;
            for x in 0..w {
                let xn = (x + 1) % w;
                let v = p[y * w + x];
                let dx = p[y * w + xn] - v;
                let dy = p[yn * w + x] - v;
                let m = (dx * dx + dy * dy).sqrt();
                total += m;
                if m > 1e-12 {
                    g[y * w + xn] += dx / m;
                    g[yn * w + x] += dy / m;
                    g[y * w + x] -= (dx + dy) / m;
                }
            }
        }
    }
    (total, grad)
}

/// `||target - Psi(r)||^2 + lambda_tv TV(r)` for a fixed target.
pub struct EnergyObjective<'a, S: FeatureNetwork + ?Sized> {
    pub psi: &'a S,
    pub target: &'a ImageTensor,
    pub lambda_tv: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyRecord {
    pub iteration: usize,
    pub feature: f64,
    pub tv: f64,
    pub total: f64,
}

impl<S: FeatureNetwork + ?Sized> EnergyObjective<'_, S> {
    pub fn energy(&self, r: &ImageTensor) -> Result<(f64, f64)> {
        let feat = self.psi.features(r)?.sub(self.target)?.norm_sq();
        let tv = if self.lambda_tv > 0.0 {
            self.lambda_tv * total_variation(r).0
        } else {
            0.0
        };
        Ok((feat, tv))
    }

    /// Energy terms and the gradient of their sum.
    pub fn energy_grad(&self, r: &ImageTensor) -> Result<(f64, f64, ImageTensor)> {
        let (half, g) = self.psi.loss_grad(r, self.target)?;
        let mut grad = g.scale(2.0);
        let mut tv = 0.0;
        if self.lambda_tv > 0.0 {
            let (v, tg) = total_variation(r);
            tv = self.lambda_tv * v;
            grad.axpy(self.lambda_tv, &tg)?;
        }
        Ok((2.0 * half, tv, grad))
    }
}

/// Energy of `r` under a model conditioned on precomputed features.
pub fn gibbs_energy<S: FeatureNetwork + ?Sized>(
    psi: &S,
    lambda_tv: f64,
    x_features: &ImageTensor,
    r: &ImageTensor,
) -> Result<f64> {
    let (f, t) = EnergyObjective {
        psi,
        target: x_features,
        lambda_tv,
    }
    .energy(r)?;
    Ok(f + t)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InferenceOptimizer {
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
    /// Gradient descent with Armijo backtracking; the step doubles after
    /// each accepted move (capped at `max_step`).
    GradientDescent { step: f64, max_step: f64, shrink: f64, max_halvings: usize },
}

impl InferenceOptimizer {
    pub fn adam(lr: f64) -> Self {
        InferenceOptimizer::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn gradient_descent(step: f64) -> Self {
        InferenceOptimizer::GradientDescent {
            step,
            max_step: step * 1e3,
            shrink: 0.5,
            max_halvings: 40,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Init {
    /// `r = 0`: the estimate starts at the bicubic upsampling.
    LinearPredict,
    GaussianNoise { sigma: f64 },
    /// `base + N(0, sigma^2)`.
    Perturbed { base: ImageTensor, sigma: f64 },
    Given(ImageTensor),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceConfig {
    pub iterations: usize,
    pub optimizer: InferenceOptimizer,
    pub init: Init,
    pub seed: u64,
}

/// Default Adam learning rate for inference.
pub const DEFAULT_INFERENCE_LR: f64 = 0.05;

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            iterations: 100,
            optimizer: InferenceOptimizer::adam(DEFAULT_INFERENCE_LR),
            init: Init::LinearPredict,
            seed: 0,
        }
    }
}

impl InferenceConfig {
    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::InvalidConfig("at least one iteration is required".into()));
        }
        match self.optimizer {
            InferenceOptimizer::Adam { lr, .. } if !(lr > 0.0) => {
                Err(Error::InvalidConfig("Adam learning rate must be positive".into()))
            }
            InferenceOptimizer::GradientDescent { step, shrink, .. }
                if !(step > 0.0) || !(shrink > 0.0 && shrink < 1.0) =>
            {
                Err(Error::InvalidConfig("invalid gradient-descent step or shrink".into()))
            }
            _ => Ok(()),
        }
    }

    fn initial(&self, shape: (usize, usize, usize)) -> Result<ImageTensor> {
        let (c, h, w) = shape;
        let mut rng = seeded(self.seed);
        let r = match &self.init {
            Init::LinearPredict => ImageTensor::zeros(c, h, w),
            Init::GaussianNoise { sigma } => gaussian_tensor(&mut rng, c, h, w, *sigma),
            Init::Perturbed { base, sigma } => {
                if base.shape() != shape {
                    return Err(shape_err(shape, base.shape()));
                }
                base.add(&gaussian_tensor(&mut rng, c, h, w, *sigma))?
            }
            Init::Given(r) => {
                if r.shape() != shape {
                    return Err(shape_err(shape, r.shape()));
                }
                r.clone()
            }
        };
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleResult {
    /// Lowest-energy iterate visited.
    pub residual: ImageTensor,
    pub energy: f64,
    /// Energy of every visited iterate, starting with the initialization.
    pub trace: Vec<EnergyRecord>,
    /// Number of `Psi` forward+backward passes.
    pub gradient_evaluations: usize,
    /// Number of forward-only `Psi` evaluations (line search, final iterate).
    pub energy_evaluations: usize,
}

/// Minimizes the energy for a fixed conditioning target, starting from
/// `cfg.init` on a residual grid of shape `shape`.
pub fn sample_mode_with_target<S: FeatureNetwork + ?Sized>(
    psi: &S,
    target: &ImageTensor,
    lambda_tv: f64,
    shape: (usize, usize, usize),
    cfg: &InferenceConfig,
) -> Result<SampleResult> {
    cfg.validate()?;
    let expected = psi.feature_shape(shape)?;
    if target.shape() != expected {
        return Err(shape_err(expected, target.shape()));
    }
    if !(lambda_tv >= 0.0) {
        return Err(Error::InvalidConfig("lambda_tv must be non-negative".into()));
    }
    let obj = EnergyObjective {
        psi,
        target,
        lambda_tv,
    };
    let mut r = cfg.initial(shape)?;
    let mut out = SampleResult {
        residual: r.clone(),
        energy: f64::INFINITY,
        trace: Vec::with_capacity(cfg.iterations + 1),
        gradient_evaluations: 0,
        energy_evaluations: 0,
    };
    let record = |out: &mut SampleResult, it: usize, f: f64, t: f64, r: &ImageTensor| -> Result<()> {
        let total = f + t;
        if !total.is_finite() {
            return Err(Error::Diverged {
                step: it,
                reason: alloc::format!("non-finite energy (feature {f:e}, tv {t:e})"),
            });
        }
        out.trace.push(EnergyRecord {
            iteration: it,
            feature: f,
            tv: t,
            total,
        });
        if total < out.energy {
            out.energy = total;
            out.residual = r.clone();
        }
        Ok(())
    };

    match cfg.optimizer {
        InferenceOptimizer::Adam { lr, beta1, beta2, eps } => {
            let mut opt = OptimizerConfig::Adam { lr, beta1, beta2, eps }.build(r.len())?;
            for it in 0..cfg.iterations {
                let (f, t, g) = obj.energy_grad(&r)?;
                out.gradient_evaluations += 1;
                record(&mut out, it, f, t, &r)?;
                opt.step(r.as_mut_slice(), g.as_slice())?;
            }
            let (f, t) = obj.energy(&r)?;
            out.energy_evaluations += 1;
            record(&mut out, cfg.iterations, f, t, &r)?;
        }
        InferenceOptimizer::GradientDescent {
            step,
            max_step,
            shrink,
            max_halvings,
        } => {
            let mut s = step;
            let (mut f, mut t, mut g) = obj.energy_grad(&r)?;
            out.gradient_evaluations += 1;
            record(&mut out, 0, f, t, &r)?;
            for it in 1..=cfg.iterations {
                let e = f + t;
                let gn = g.norm_sq();
                let mut accepted = None;
                if gn > 0.0 {
                    for _ in 0..=max_halvings {
                        let mut cand = r.clone();
                        cand.axpy(-s, &g)?;
                        let (cf, ct) = obj.energy(&cand)?;
                        out.energy_evaluations += 1;
                        if cf + ct <= e - 1e-4 * s * gn {
                            accepted = Some(cand);
                            break;
                        }
                        s *= shrink;
                    }
                }
                match accepted {
                    Some(cand) => {
                        r = cand;
                        let (nf, nt, ng) = obj.energy_grad(&r)?;
                        out.gradient_evaluations += 1;
                        (f, t, g) = (nf, nt, ng);
                        s = (s * 2.0).min(max_step);
                    }
                    // No decrease found: stay put (a stationary point up to
                    // the line-search resolution).
                    None => s = step,
                }
                record(&mut out, it, f, t, &r)?;
            }
        }
    }
    Ok(out)
}

/// The conditional model: `Phi` predicts the statistics of the residual
/// from the bicubic upsampling of `x`; `Psi` computes them from a residual.
pub struct GibbsModel<P, S> {
    pub phi: P,
    pub psi: S,
    pub degradation: DegradationModel,
    pub lambda_tv: f64,
}

/// TV weight used when none is configured.
pub const DEFAULT_LAMBDA_TV: f64 = 1e-8;

impl<P: FeatureNetwork, S: FeatureNetwork> GibbsModel<P, S> {
    /// Checks that `Phi` and `Psi` produce the same feature grid for
    /// high-resolution images of shape `hr_shape`.
    pub fn new(phi: P, psi: S, degradation: DegradationModel, lambda_tv: f64, hr_shape: (usize, usize)) -> Result<Self> {
        degradation.validate()?;
        if !(lambda_tv >= 0.0) {
            return Err(Error::InvalidConfig("lambda_tv must be non-negative".into()));
        }
        let input = (1, hr_shape.0, hr_shape.1);
        let a = phi.feature_shape(input)?;
        let b = psi.feature_shape(input)?;
        if a != b {
            return Err(Error::ShapeMismatch {
                expected: alloc::format!("Phi output {a:?}"),
                actual: alloc::format!("Psi output {b:?}"),
            });
        }
        Ok(Self {
            phi,
            psi,
            degradation,
            lambda_tv,
        })
    }

    /// `Phi(U_bar(x))`.
    pub fn condition(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.phi.features(&linear_predict(x, &self.degradation)?)
    }

    pub fn energy(&self, x_features: &ImageTensor, r: &ImageTensor) -> Result<f64> {
        gibbs_energy(&self.psi, self.lambda_tv, x_features, r)
    }

    fn residual_shape(&self, x: &ImageTensor) -> (usize, usize, usize) {
        let a = self.degradation.factor;
        (x.channels(), x.height() * a, x.width() * a)
    }

    pub fn sample_mode(&self, x: &ImageTensor, cfg: &InferenceConfig) -> Result<SampleResult> {
        let target = self.condition(x)?;
        sample_mode_with_target(&self.psi, &target, self.lambda_tv, self.residual_shape(x), cfg)
    }

    /// `n` mode samples from inits `N(0, sigma^2)` around the bicubic
    /// estimate; run `i` uses seed `cfg.seed + i`.
    pub fn sample_isoprobability(
        &self,
        x: &ImageTensor,
        n: usize,
        sigma: f64,
        cfg: &InferenceConfig,
    ) -> Result<Vec<SampleResult>> {
        if n == 0 {
            return Err(Error::EmptySamples);
        }
        let target = self.condition(x)?;
        isoprobability_with_target(&self.psi, &target, self.lambda_tv, self.residual_shape(x), n, sigma, cfg)
    }

    pub fn super_resolve(&self, x: &ImageTensor, cfg: &InferenceConfig) -> Result<SuperResolution> {
        let up = linear_predict(x, &self.degradation)?;
        let target = self.phi.features(&up)?;
        let sample = sample_mode_with_target(&self.psi, &target, self.lambda_tv, up.shape(), cfg)?;
        let raw = up.add(&sample.residual)?;
        Ok(SuperResolution {
            display: raw.clamp(0.0, 1.0),
            raw,
            sample,
        })
    }
}

/// Iso-probability sampling for a fixed target (see
/// [`GibbsModel::sample_isoprobability`]).
pub fn isoprobability_with_target<S: FeatureNetwork + ?Sized>(
    psi: &S,
    target: &ImageTensor,
    lambda_tv: f64,
    shape: (usize, usize, usize),
    n: usize,
    sigma: f64,
    cfg: &InferenceConfig,
) -> Result<Vec<SampleResult>> {
    if n == 0 {
        return Err(Error::EmptySamples);
    }
    let base = ImageTensor::zeros(shape.0, shape.1, shape.2);
    (0..n)
        .map(|i| {
            let run = InferenceConfig {
                init: Init::Perturbed {
                    base: base.clone(),
                    sigma,
                },
                seed: cfg.seed.wrapping_add(i as u64),
                ..cfg.clone()
            };
            sample_mode_with_target(psi, target, lambda_tv, shape, &run)
        })
        .collect()
}

/// Texture synthesis: match `target` statistics starting from white noise.
pub fn synthesize<S: FeatureNetwork + ?Sized>(
    psi: &S,
    target: &ImageTensor,
    shape: (usize, usize, usize),
    sigma: f64,
    cfg: &InferenceConfig,
) -> Result<SampleResult> {
    let run = InferenceConfig {
        init: Init::GaussianNoise { sigma },
        ..cfg.clone()
    };
    sample_mode_with_target(psi, target, 0.0, shape, &run)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperResolution {
    /// `U_bar(x) + r'` without clamping.
    pub raw: ImageTensor,
    /// `raw` clamped to `[0, 1]` for display.
    pub display: ImageTensor,
    pub sample: SampleResult,
}
