//! Likelihood-gradient fine-tuning of `Phi` and `Psi` with high-likelihood
//! negatives, plus an exactly enumerable toy Gibbs model used as an oracle.
//!
//! With energy `E = ||Phi(x) - Psi(r)||^2` and `p(r|x) = exp(-E) / Z(x)`, the
//! negative log-likelihood gradients are
//!
//! * `d NLL / d theta_Psi = -2 grad Psi(r)^T (Phi - Psi(r)) + 2 E_p[grad Psi(r')^T (Phi - Psi(r'))]`,
//! * `d NLL / d theta_Phi = 2 grad Phi(x)^T (E_p[Psi(r')] - Psi(r))`.
//!
//! The estimators below drop the common factor 2 and replace `E_p` by an
//! average over supplied negatives, so in expectation they equal half the
//! NLL gradient.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

#[allow(unused_imports)]
use num_traits::Float;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::inference::{isoprobability_with_target, InferenceConfig};
use crate::numerics::ImageTensor;
use crate::rng::{gaussian_tensor, seeded, SeededRng};
use crate::scattering::{FeatureNetwork, Trainable};

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `-grad Psi(r)^T (t - Psi(r)) + 1/L sum grad Psi(r')^T (t - Psi(r'))`,
/// accumulated as `1/L sum [g(r') - g(r)]` so that it is exactly zero when
/// every negative equals the data point.
pub fn grad_psi_estimate<S>(psi: &S, target: &ImageTensor, r: &ImageTensor, samples: &[ImageTensor]) -> Result<Vec<f64>>
where
    S: FeatureNetwork + Trainable + ?Sized,
{
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let data = psi.param_vjp(r, &target.sub(&psi.features(r)?)?)?;
    let mut acc = vec![0.0; data.len()];
    for s in samples {
        let neg = psi.param_vjp(s, &target.sub(&psi.features(s)?)?)?;
        for ((a, n), d) in acc.iter_mut().zip(&neg).zip(&data) {
            *a += n - d;
        }
    }
    let inv = 1.0 / samples.len() as f64;
    acc.iter_mut().for_each(|a| *a *= inv);
    Ok(acc)
}

/// `grad Phi(x)^T (1/L sum Psi(r') - Psi(r))`.
pub fn grad_phi_estimate<P, S>(
    phi: &P,
    phi_input: &ImageTensor,
    psi: &S,
    r: &ImageTensor,
    samples: &[ImageTensor],
) -> Result<Vec<f64>>
where
    P: FeatureNetwork + Trainable + ?Sized,
    S: FeatureNetwork + ?Sized,
{
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let data = psi.features(r)?;
    let (c, h, w) = data.shape();
    let mut cot = ImageTensor::zeros(c, h, w);
    for s in samples {
        let neg = psi.features(s)?;
        for ((a, n), d) in cot.as_mut_slice().iter_mut().zip(neg.as_slice()).zip(data.as_slice()) {
            *a += n - d;
        }
    }
    let cot = cot.scale(1.0 / samples.len() as f64);
    phi.param_vjp(phi_input, &cot)
}

/// Produces negatives for one data point.
pub trait NegativeSampler<S: ?Sized> {
    fn negatives(
        &mut self,
        psi: &S,
        target: &ImageTensor,
        data: &ImageTensor,
        count: usize,
        seed: u64,
    ) -> Result<Vec<ImageTensor>>;
}

/// The biased high-likelihood sampler: energy minimization from perturbed
/// initializations.
#[derive(Debug, Clone)]
pub struct IsoprobabilitySampler {
    pub inference: InferenceConfig,
    pub sigma: f64,
    pub lambda_tv: f64,
}

impl<S: FeatureNetwork + ?Sized> NegativeSampler<S> for IsoprobabilitySampler {
    fn negatives(
        &mut self,
        psi: &S,
        target: &ImageTensor,
        data: &ImageTensor,
        count: usize,
        seed: u64,
    ) -> Result<Vec<ImageTensor>> {
        let cfg = InferenceConfig {
            seed,
            ..self.inference.clone()
        };
        let runs = isoprobability_with_target(psi, target, self.lambda_tv, data.shape(), count, self.sigma, &cfg)?;
        Ok(runs.into_iter().map(|s| s.residual).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FineTuneConfig {
    /// `Psi` learning rate = `eta * psi_base_lr`.
    pub eta: f64,
    /// Negatives per data point (`L`).
    pub negatives: usize,
    pub sigma_perturb: f64,
    pub phi_lr: f64,
    pub psi_base_lr: f64,
    /// Updates per phase within one alternation round.
    pub phi_steps: usize,
    pub psi_steps: usize,
    /// Alternation rounds.
    pub steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Compute gradients and diagnostics without touching parameters.
    pub dry_run: bool,
    /// Abort when a gradient norm exceeds this.
    pub max_grad_norm: f64,
    /// Abort when the data energy exceeds `explode_factor` times its first
    /// value for `patience` consecutive rounds.
    pub explode_factor: f64,
    pub patience: usize,
}

impl Default for FineTuneConfig {
    fn default() -> Self {
        Self {
            eta: 1e-4,
            negatives: 1,
            sigma_perturb: 0.05,
            phi_lr: 1e-4,
            psi_base_lr: 1e-4,
            phi_steps: 1,
            psi_steps: 1,
            steps: 50,
            batch_size: 4,
            seed: 0,
            dry_run: false,
            max_grad_norm: 1e8,
            explode_factor: 10.0,
            patience: 5,
        }
    }
}

impl FineTuneConfig {
    pub fn validate(&self) -> Result<()> {
        if self.negatives == 0 {
            return Err(Error::InvalidConfig("need at least one negative sample".into()));
        }
        if !(self.eta >= 0.0 && self.eta <= 1.0) {
            return Err(Error::InvalidConfig("eta must lie in [0, 1]".into()));
        }
        if !(self.phi_lr >= 0.0) || !(self.psi_base_lr >= 0.0) {
            return Err(Error::InvalidConfig("learning rates must be non-negative".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }
}

/// One training point: `Phi`'s input (bicubic upsampling) and the true residual.
#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneExample {
    pub phi_input: ImageTensor,
    pub residual: ImageTensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FineTuneDiagnostics {
    pub step: usize,
    /// Mean `||Phi(x) - Psi(r)||^2` over the minibatch.
    pub data_energy: f64,
    /// Mean energy of the negatives.
    pub negative_energy: f64,
    pub phi_grad_norm: f64,
    pub psi_grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FineTuneReport {
    pub diagnostics: Vec<FineTuneDiagnostics>,
    /// Set when training stopped early; the networks hold the last
    /// parameters before the offending update.
    pub aborted: Option<(usize, String)>,
}

/// Alternating fine-tuning: each round runs `phi_steps` updates of `Phi`
/// and then `psi_steps` updates of `Psi`, each on a fresh minibatch with
/// fresh negatives from the current model. Both phases use plain SGD so the
/// `Psi` step is exactly proportional to `eta`.
pub fn finetune<P, S, N>(
    phi: &mut P,
    psi: &mut S,
    data: &[FineTuneExample],
    sampler: &mut N,
    cfg: &FineTuneConfig,
) -> Result<FineTuneReport>
where
    P: FeatureNetwork + Trainable,
    S: FeatureNetwork + Trainable,
    N: NegativeSampler<S>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut report = FineTuneReport::default();
    let mut cursor = 0usize;
    let mut sample_seed = cfg.seed;
    let mut first_energy = None;
    let mut over = 0usize;
    let psi_lr = cfg.eta * cfg.psi_base_lr;

    for step in 0..cfg.steps {
        let mut diag = FineTuneDiagnostics {
            step,
            data_energy: 0.0,
            negative_energy: 0.0,
            phi_grad_norm: 0.0,
            psi_grad_norm: 0.0,
        };
        let phi_backup = phi.params();
        let psi_backup = psi.params();

        for phase in 0..cfg.phi_steps + cfg.psi_steps {
            let phi_phase = phase < cfg.phi_steps;
            let mut grad = vec![0.0; if phi_phase { phi.num_params() } else { psi.num_params() }];
            let (mut e_data, mut e_neg) = (0.0, 0.0);
            let batch = cfg.batch_size.min(data.len());
            for _ in 0..batch {
                let ex = &data[cursor % data.len()];
                cursor += 1;
                let target = phi.features(&ex.phi_input)?;
                let negs = sampler.negatives(psi, &target, &ex.residual, cfg.negatives, sample_seed)?;
                sample_seed = sample_seed.wrapping_add(cfg.negatives as u64);
                e_data += target.sub(&psi.features(&ex.residual)?)?.norm_sq();
                for n in &negs {
                    e_neg += target.sub(&psi.features(n)?)?.norm_sq() / negs.len() as f64;
                }
                let g = if phi_phase {
                    grad_phi_estimate(phi, &ex.phi_input, psi, &ex.residual, &negs)?
                } else {
                    grad_psi_estimate(psi, &target, &ex.residual, &negs)?
                };
                for (a, b) in grad.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let inv = 1.0 / batch as f64;
            grad.iter_mut().for_each(|g| *g *= inv);
            let gn = norm(&grad);
            if phi_phase {
                diag.phi_grad_norm = gn;
            } else {
                diag.psi_grad_norm = gn;
                diag.data_energy = e_data * inv;
                diag.negative_energy = e_neg * inv;
            }
            if cfg.psi_steps == 0 {
                diag.data_energy = e_data * inv;
                diag.negative_energy = e_neg * inv;
            }
            if !gn.is_finite() || gn > cfg.max_grad_norm {
                phi.set_params(&phi_backup)?;
                psi.set_params(&psi_backup)?;
                report.aborted = Some((step, alloc::format!("gradient norm {gn:e} exceeds {:e}", cfg.max_grad_norm)));
                return Ok(report);
            }
            if cfg.dry_run {
                continue;
            }
            if phi_phase {
                let mut p = phi.params();
                p.iter_mut().zip(&grad).for_each(|(v, g)| *v -= cfg.phi_lr * g);
                phi.set_params(&p)?;
            } else {
                let mut p = psi.params();
                p.iter_mut().zip(&grad).for_each(|(v, g)| *v -= psi_lr * g);
                psi.set_params(&p)?;
            }
        }

        let e0 = *first_energy.get_or_insert(diag.data_energy);
        if diag.data_energy > cfg.explode_factor * e0.max(1e-300) {
            over += 1;
        } else {
            over = 0;
        }
        report.diagnostics.push(diag);
        if over >= cfg.patience.max(1) {
            phi.set_params(&phi_backup)?;
            psi.set_params(&psi_backup)?;
            report.aborted = Some((
                step,
                alloc::format!(
                    "data energy {:e} above {}x its initial value {:e} for {over} rounds",
                    diag.data_energy,
                    cfg.explode_factor,
                    e0
                ),
            ));
            return Ok(report);
        }
    }
    Ok(report)
}

/// `Psi_toy(r)_k = sqrt((a_k . r)^2 + eps^2)`: a smoothed modulus of linear
/// filters, the one-dimensional analogue of a first-order scattering layer.
/// The smoothing `eps` makes it differentiable at states where `a_k . r = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPsi {
    pub len: usize,
    pub features: usize,
    pub eps: f64,
    pub filters: Vec<f64>,
}

impl ToyPsi {
    pub fn random(len: usize, features: usize, eps: f64, seed: u64) -> Self {
        let mut rng = seeded(seed);
        Self {
            len,
            features,
            eps,
            filters: (0..len * features).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn responses(&self, r: &[f64]) -> Vec<f64> {
        self.filters.chunks_exact(self.len).map(|a| a.iter().zip(r).map(|(x, y)| x * y).sum()).collect()
    }

    fn check(&self, r: &ImageTensor) -> Result<()> {
        if r.shape() != (1, 1, self.len) {
            return Err(shape_err((1, 1, self.len), r.shape()));
        }
        Ok(())
    }
}

impl FeatureNetwork for ToyPsi {
    fn features(&self, r: &ImageTensor) -> Result<ImageTensor> {
        self.check(r)?;
        let v = self.responses(r.as_slice()).into_iter().map(|u| (u * u + self.eps * self.eps).sqrt()).collect();
        ImageTensor::from_vec(self.features, 1, 1, v)
    }

    fn feature_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        if input != (1, 1, self.len) {
            return Err(shape_err((1, 1, self.len), input));
        }
        Ok((self.features, 1, 1))
    }

    fn input_vjp(&self, r: &ImageTensor, cot: &ImageTensor) -> Result<ImageTensor> {
        self.check(r)?;
        let u = self.responses(r.as_slice());
        let mut g = vec![0.0; self.len];
        for (k, a) in self.filters.chunks_exact(self.len).enumerate() {
            let m = (u[k] * u[k] + self.eps * self.eps).sqrt();
            let s = cot.as_slice()[k] * u[k] / m;
            for (gv, av) in g.iter_mut().zip(a) {
                *gv += s * av;
            }
        }
        ImageTensor::from_vec(1, 1, self.len, g)
    }
}

impl Trainable for ToyPsi {
    fn params(&self) -> Vec<f64> {
        self.filters.clone()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.filters.len() {
            return Err(shape_err(self.filters.len(), params.len()));
        }
        self.filters.copy_from_slice(params);
        Ok(())
    }

    fn param_vjp(&self, r: &ImageTensor, cot: &ImageTensor) -> Result<Vec<f64>> {
        self.check(r)?;
        let u = self.responses(r.as_slice());
        let mut g = vec![0.0; self.filters.len()];
        for k in 0..self.features {
            let m = (u[k] * u[k] + self.eps * self.eps).sqrt();
            let s = cot.as_slice()[k] * u[k] / m;
            for (gv, rv) in g[k * self.len..(k + 1) * self.len].iter_mut().zip(r.as_slice()) {
                *gv = s * rv;
            }
        }
        Ok(g)
    }
}

/// `Phi_toy(x) = W x + b`, mapping a conditioning vector to toy features.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyPhi {
    pub inputs: usize,
    pub features: usize,
    pub params: Vec<f64>,
}

impl ToyPhi {
    pub fn random(inputs: usize, features: usize, seed: u64) -> Self {
        let mut rng = seeded(seed);
        Self {
            inputs,
            features,
            params: (0..features * (inputs + 1)).map(|_| rng.random_range(-1.0..1.0)).collect(),
        }
    }

    fn check(&self, x: &ImageTensor) -> Result<()> {
        if x.shape() != (1, 1, self.inputs) {
            return Err(shape_err((1, 1, self.inputs), x.shape()));
        }
        Ok(())
    }
}

impl FeatureNetwork for ToyPhi {
    fn features(&self, x: &ImageTensor) -> Result<ImageTensor> {
        self.check(x)?;
        let n = self.inputs;
        let out = (0..self.features)
            .map(|k| {
                let row = &self.params[k * (n + 1)..(k + 1) * (n + 1)];
                row[..n].iter().zip(x.as_slice()).map(|(a, b)| a * b).sum::<f64>() + row[n]
            })
            .collect();
        ImageTensor::from_vec(self.features, 1, 1, out)
    }

    fn feature_shape(&self, input: (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        if input != (1, 1, self.inputs) {
            return Err(shape_err((1, 1, self.inputs), input));
        }
        Ok((self.features, 1, 1))
    }

    fn input_vjp(&self, x: &ImageTensor, cot: &ImageTensor) -> Result<ImageTensor> {
        self.check(x)?;
        let n = self.inputs;
        let mut g = vec![0.0; n];
        for k in 0..self.features {
            for (gv, a) in g.iter_mut().zip(&self.params[k * (n + 1)..k * (n + 1) + n]) {
                *gv += cot.as_slice()[k] * a;
            }
        }
        ImageTensor::from_vec(1, 1, n, g)
    }
}

impl Trainable for ToyPhi {
    fn params(&self) -> Vec<f64> {
        self.params.clone()
    }

    fn set_params(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.params.len() {
            return Err(shape_err(self.params.len(), params.len()));
        }
        self.params.copy_from_slice(params);
        Ok(())
    }

    fn param_vjp(&self, x: &ImageTensor, cot: &ImageTensor) -> Result<Vec<f64>> {
        self.check(x)?;
        let n = self.inputs;
        let mut g = vec![0.0; self.params.len()];
        for k in 0..self.features {
            let c = cot.as_slice()[k];
            for (i, xv) in x.as_slice().iter().enumerate() {
                g[k * (n + 1) + i] = c * xv;
            }
            g[k * (n + 1) + n] = c;
        }
        Ok(g)
    }
}

/// Exact Gibbs model on all `|alphabet|^len` quantized signals.
#[derive(Debug, Clone)]
pub struct ToyGibbsOracle {
    pub alphabet: Vec<f64>,
    pub len: usize,
    states: Vec<ImageTensor>,
}

/// Largest state space the oracle will enumerate.
pub const MAX_TOY_LEN: usize = 10;

impl ToyGibbsOracle {
    pub fn new(alphabet: Vec<f64>, len: usize) -> Result<Self> {
        if alphabet.is_empty() || alphabet.len() > 3 || len == 0 || len > MAX_TOY_LEN {
            return Err(Error::InvalidConfig("toy oracle needs len <= 10 and 1..=3 symbols".into()));
        }
        let count = alphabet.len().pow(len as u32);
        let states = (0..count)
            .map(|mut idx| {
                let mut v = vec![0.0; len];
                for slot in v.iter_mut() {
                    *slot = alphabet[idx % alphabet.len()];
                    idx /= alphabet.len();
                }
                ImageTensor::from_vec(1, 1, len, v).expect("state shape")
            })
            .collect();
        Ok(Self { alphabet, len, states })
    }

    pub fn states(&self) -> &[ImageTensor] {
        &self.states
    }

    /// Energies of every state for conditioning features `t`.
    pub fn energies<S: FeatureNetwork + ?Sized>(&self, psi: &S, target: &ImageTensor) -> Result<Vec<f64>> {
        self.states.iter().map(|s| Ok(target.sub(&psi.features(s)?)?.norm_sq())).collect()
    }

    /// `log Z` and the normalized probabilities.
    pub fn distribution<S: FeatureNetwork + ?Sized>(&self, psi: &S, target: &ImageTensor) -> Result<(f64, Vec<f64>)> {
        let e = self.energies(psi, target)?;
        let emin = e.iter().cloned().fold(f64::INFINITY, f64::min);
        let w: Vec<f64> = e.iter().map(|v| (emin - v).exp()).collect();
        let z: f64 = w.iter().sum();
        Ok((z.ln() - emin, w.into_iter().map(|v| v / z).collect()))
    }

    /// Mean negative log-likelihood of `(x, r)` pairs.
    pub fn nll<P, S>(&self, phi: &P, psi: &S, data: &[(ImageTensor, ImageTensor)]) -> Result<f64>
    where
        P: FeatureNetwork + ?Sized,
        S: FeatureNetwork + ?Sized,
    {
        if data.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut total = 0.0;
        for (x, r) in data {
            let t = phi.features(x)?;
            let (log_z, _) = self.distribution(psi, &t)?;
            total += t.sub(&psi.features(r)?)?.norm_sq() + log_z;
        }
        Ok(total / data.len() as f64)
    }

    /// Exact expectations of both estimators under `p(.|x)`, averaged over
    /// the data: returns `(phi_grad, psi_grad)`, which equal half the NLL
    /// gradient.
    pub fn exact_estimator_means<P, S>(&self, phi: &P, psi: &S, data: &[(ImageTensor, ImageTensor)]) -> Result<(Vec<f64>, Vec<f64>)>
    where
        P: FeatureNetwork + Trainable + ?Sized,
        S: FeatureNetwork + Trainable + ?Sized,
    {
        if data.is_empty() {
            return Err(Error::EmptySamples);
        }
        let mut gphi = vec![0.0; phi.num_params()];
        let mut gpsi = vec![0.0; psi.num_params()];
        for (x, r) in data {
            let t = phi.features(x)?;
            let (_, probs) = self.distribution(psi, &t)?;
            let psi_r = psi.features(r)?;
            let mut mean_feat = ImageTensor::zeros(psi_r.channels(), psi_r.height(), psi_r.width());
            let mut neg_term = vec![0.0; gpsi.len()];
            for (s, p) in self.states.iter().zip(&probs) {
                let f = psi.features(s)?;
                mean_feat.axpy(*p, &f)?;
                let g = psi.param_vjp(s, &t.sub(&f)?)?;
                neg_term.iter_mut().zip(&g).for_each(|(a, b)| *a += p * b);
            }
            let data_term = psi.param_vjp(r, &t.sub(&psi_r)?)?;
            for ((a, n), d) in gpsi.iter_mut().zip(&neg_term).zip(&data_term) {
                *a += n - d;
            }
            let g = phi.param_vjp(x, &mean_feat.sub(&psi_r)?)?;
            gphi.iter_mut().zip(&g).for_each(|(a, b)| *a += b);
        }
        let inv = 1.0 / data.len() as f64;
        gphi.iter_mut().for_each(|v| *v *= inv);
        gpsi.iter_mut().for_each(|v| *v *= inv);
        Ok((gphi, gpsi))
    }

    /// Index of a draw from `probs`.
    pub fn draw_index(probs: &[f64], rng: &mut SeededRng) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.len() - 1
    }

    /// Draws `(x, r)` pairs with `x ~ N(0, I)` and `r ~ p(.|x)`.
    pub fn simulate<P, S>(&self, phi: &P, psi: &S, inputs: usize, count: usize, seed: u64) -> Result<Vec<(ImageTensor, ImageTensor)>>
    where
        P: FeatureNetwork + ?Sized,
        S: FeatureNetwork + ?Sized,
    {
        let mut rng = seeded(seed);
        (0..count)
            .map(|_| {
                let x = gaussian_tensor(&mut rng, 1, 1, inputs, 1.0);
                let (_, probs) = self.distribution(psi, &phi.features(&x)?)?;
                let r = self.states[Self::draw_index(&probs, &mut rng)].clone();
                Ok((x, r))
            })
            .collect()
    }
}

/// Negatives drawn from the exact toy distribution.
pub struct ExactSampler<'a> {
    pub oracle: &'a ToyGibbsOracle,
}

impl<S: FeatureNetwork + ?Sized> NegativeSampler<S> for ExactSampler<'_> {
    fn negatives(&mut self, psi: &S, target: &ImageTensor, _: &ImageTensor, count: usize, seed: u64) -> Result<Vec<ImageTensor>> {
        let (_, probs) = self.oracle.distribution(psi, target)?;
        let mut rng = seeded(seed);
        Ok((0..count)
            .map(|_| self.oracle.states[ToyGibbsOracle::draw_index(&probs, &mut rng)].clone())
            .collect())
    }
}
