//! TOML run configuration. Every section is optional; missing keys take the
//! library defaults, unknown keys are rejected, and `schema_version` must
//! match.

use std::path::Path;

use scatsr_core::degradation::{AntialiasSpec, DegradationModel, Upsampler};
use scatsr_core::finetune::FineTuneConfig;
use scatsr_core::inference::{InferenceConfig, InferenceOptimizer, Init, DEFAULT_INFERENCE_LR, DEFAULT_LAMBDA_TV};
use scatsr_core::metrics::{DegradationKind, StabilitySignal};
use scatsr_core::optim::OptimizerConfig;
use scatsr_core::predictor::{Objective, PhiArchitecture, TrainConfig};
use scatsr_core::scattering::{ScatteringConfig, TvPropagation};
use scatsr_core::wavelets::MorletParams;
use serde::{Deserialize, Serialize};

use crate::container::SCHEMA_VERSION;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    pub seed: u64,
    pub scattering: ScatteringSection,
    pub degradation: DegradationSection,
    pub phi: PhiSection,
    pub train: TrainSection,
    pub inference: InferenceSection,
    pub synthesis: SynthesisSection,
    pub finetune: FineTuneSection,
    pub stability: StabilitySection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            seed: 0,
            scattering: ScatteringSection::default(),
            degradation: DegradationSection::default(),
            phi: PhiSection::default(),
            train: TrainSection::default(),
            inference: InferenceSection::default(),
            synthesis: SynthesisSection::default(),
            finetune: FineTuneSection::default(),
            stability: StabilitySection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScatteringSection {
    pub scales: usize,
    pub orientations: usize,
    pub max_order: usize,
    pub include_tv: bool,
    /// `none`, `self-cascade` or `all-coarser`.
    pub tv_propagation: String,
    pub renorm_base: f64,
    /// Unset: 0 for `scatter`/`synthesize`/`eval-stability`, and whatever
    /// matches the `Phi` stride for the model commands.
    pub oversampling: Option<usize>,
    pub xi: f64,
    pub sigma: Option<f64>,
    pub slant: Option<f64>,
    pub lowpass_sigma: f64,
    pub normalize: bool,
}

impl Default for ScatteringSection {
    fn default() -> Self {
        let c = ScatteringConfig::default();
        Self {
            scales: c.scales,
            orientations: c.orientations,
            max_order: c.max_order,
            include_tv: c.include_tv,
            tv_propagation: c.tv_propagation.name().into(),
            renorm_base: c.renorm_base,
            oversampling: None,
            xi: c.wavelet.xi,
            sigma: c.wavelet.sigma,
            slant: c.wavelet.slant,
            lowpass_sigma: c.wavelet.lowpass_sigma,
            normalize: c.wavelet.normalize,
        }
    }
}

impl ScatteringSection {
    pub fn build(&self, default_oversampling: usize) -> CliResult<ScatteringConfig> {
        let tv_propagation = match self.tv_propagation.as_str() {
            "none" => TvPropagation::None,
            "self-cascade" => TvPropagation::SelfCascade,
            "all-coarser" => TvPropagation::AllCoarser,
            other => return Err(CliError::Config(format!("unknown tv_propagation '{other}'"))),
        };
        let cfg = ScatteringConfig {
            scales: self.scales,
            orientations: self.orientations,
            max_order: self.max_order,
            include_tv: self.include_tv,
            tv_propagation,
            renorm_base: self.renorm_base,
            oversampling: self.oversampling.unwrap_or(default_oversampling),
            wavelet: MorletParams {
                xi: self.xi,
                sigma: self.sigma,
                slant: self.slant,
                lowpass_sigma: self.lowpass_sigma,
                normalize: self.normalize,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Configuration whose pooled grid matches a predictor of total
    /// subsampling `stride`.
    pub fn build_for_stride(&self, stride: usize) -> CliResult<ScatteringConfig> {
        if !stride.is_power_of_two() || stride.trailing_zeros() as usize > self.scales {
            return Err(CliError::Config(format!(
                "Phi stride {stride} cannot match a scattering network with J={}",
                self.scales
            )));
        }
        let os = self.scales - stride.trailing_zeros() as usize;
        let cfg = self.build(os)?;
        if cfg.stride() != stride {
            return Err(CliError::Config(format!(
                "scattering stride {} (oversampling {}) does not match Phi stride {stride}",
                cfg.stride(),
                cfg.oversampling
            )));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DegradationSection {
    pub factor: usize,
    pub passband: f64,
    pub attenuation_db: f64,
    pub taps: Option<usize>,
}

impl Default for DegradationSection {
    fn default() -> Self {
        let a = AntialiasSpec::default();
        Self {
            factor: 2,
            passband: a.passband,
            attenuation_db: a.attenuation_db,
            taps: a.taps,
        }
    }
}

impl DegradationSection {
    pub fn build(&self) -> CliResult<DegradationModel> {
        let m = DegradationModel {
            factor: self.factor,
            antialias: AntialiasSpec {
                passband: self.passband,
                attenuation_db: self.attenuation_db,
                taps: self.taps,
            },
            upsampler: Upsampler::Bicubic,
        };
        m.validate()?;
        Ok(m)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhiSection {
    pub hidden_widths: Vec<usize>,
    pub kernels: Vec<usize>,
    pub strides: Vec<usize>,
}

impl Default for PhiSection {
    fn default() -> Self {
        let a = PhiArchitecture::default();
        Self {
            hidden_widths: a.hidden_widths,
            kernels: a.kernels,
            strides: a.strides,
        }
    }
}

impl PhiSection {
    pub fn build(&self) -> PhiArchitecture {
        PhiArchitecture {
            hidden_widths: self.hidden_widths.clone(),
            kernels: self.kernels.clone(),
            strides: self.strides.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    /// `feature` (Phi regresses scattering statistics) or `pixel` (baseline).
    pub objective: String,
    pub batch_size: usize,
    pub steps: usize,
    pub lr: f64,
    pub divergence_threshold: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            objective: "feature".into(),
            batch_size: t.batch_size,
            steps: t.steps,
            lr: t.optimizer.lr(),
            divergence_threshold: t.divergence_threshold,
        }
    }
}

impl TrainSection {
    pub fn build(&self, seed: u64, patch_size: usize) -> CliResult<TrainConfig> {
        let objective = match self.objective.as_str() {
            "feature" => Objective::FeatureRegression,
            "pixel" => Objective::PixelRegression,
            other => return Err(CliError::Config(format!("unknown objective '{other}'"))),
        };
        let cfg = TrainConfig {
            objective,
            batch_size: self.batch_size,
            steps: self.steps,
            optimizer: OptimizerConfig::adam(self.lr),
            seed,
            patch_size,
            channel_weights: None,
            divergence_threshold: self.divergence_threshold,
        };
        cfg.optimizer.validate()?;
        if cfg.batch_size == 0 {
            return Err(CliError::Config("batch_size must be positive".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InferenceSection {
    pub iterations: usize,
    /// `adam` or `gradient-descent`.
    pub optimizer: String,
    /// Adam learning rate or initial gradient-descent step.
    pub lr: f64,
    pub lambda_tv: f64,
    /// `bicubic` (r = 0) or `noise`.
    pub init: String,
    pub init_sigma: f64,
}

impl Default for InferenceSection {
    fn default() -> Self {
        let c = InferenceConfig::default();
        Self {
            iterations: c.iterations,
            optimizer: "adam".into(),
            lr: DEFAULT_INFERENCE_LR,
            lambda_tv: DEFAULT_LAMBDA_TV,
            init: "bicubic".into(),
            init_sigma: 0.05,
        }
    }
}

fn optimizer(name: &str, lr: f64) -> CliResult<InferenceOptimizer> {
    match name {
        "adam" => Ok(InferenceOptimizer::adam(lr)),
        "gradient-descent" => Ok(InferenceOptimizer::gradient_descent(lr)),
        other => Err(CliError::Config(format!("unknown optimizer '{other}'"))),
    }
}

impl InferenceSection {
    pub fn build(&self, seed: u64) -> CliResult<InferenceConfig> {
        let init = match self.init.as_str() {
            "bicubic" => Init::LinearPredict,
            "noise" => Init::GaussianNoise { sigma: self.init_sigma },
            other => return Err(CliError::Config(format!("unknown init '{other}'"))),
        };
        if self.iterations == 0 || !(self.lr > 0.0) || !(self.lambda_tv >= 0.0) {
            return Err(CliError::Config("inference needs iterations > 0, lr > 0 and lambda_tv >= 0".into()));
        }
        Ok(InferenceConfig {
            iterations: self.iterations,
            optimizer: optimizer(&self.optimizer, self.lr)?,
            init,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthesisSection {
    pub iterations: usize,
    pub optimizer: String,
    pub lr: f64,
    /// Noise standard deviation; unset uses the RMS of the target signal.
    pub noise_sigma: Option<f64>,
    /// `residual` (the high-frequency residual of the image) or `raw`.
    pub signal: String,
}

impl Default for SynthesisSection {
    fn default() -> Self {
        Self {
            iterations: 500,
            optimizer: "adam".into(),
            lr: DEFAULT_INFERENCE_LR,
            noise_sigma: None,
            signal: "residual".into(),
        }
    }
}

impl SynthesisSection {
    pub fn build(&self, seed: u64) -> CliResult<InferenceConfig> {
        if self.iterations == 0 || !(self.lr > 0.0) {
            return Err(CliError::Config("synthesis needs iterations > 0 and lr > 0".into()));
        }
        if !matches!(self.signal.as_str(), "residual" | "raw") {
            return Err(CliError::Config(format!("unknown synthesis signal '{}'", self.signal)));
        }
        Ok(InferenceConfig {
            iterations: self.iterations,
            optimizer: optimizer(&self.optimizer, self.lr)?,
            init: Init::LinearPredict,
            seed,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FineTuneSection {
    pub eta: f64,
    pub negatives: usize,
    pub sigma_perturb: f64,
    pub phi_lr: f64,
    pub psi_base_lr: f64,
    pub phi_steps: usize,
    pub psi_steps: usize,
    pub steps: usize,
    pub batch_size: usize,
    pub dry_run: bool,
    pub max_grad_norm: f64,
    pub explode_factor: f64,
    pub patience: usize,
    /// Mode-sampling iterations used to draw each negative.
    pub sampler_iterations: usize,
}

impl Default for FineTuneSection {
    fn default() -> Self {
        let f = FineTuneConfig::default();
        Self {
            eta: f.eta,
            negatives: f.negatives,
            sigma_perturb: f.sigma_perturb,
            phi_lr: f.phi_lr,
            psi_base_lr: f.psi_base_lr,
            phi_steps: f.phi_steps,
            psi_steps: f.psi_steps,
            steps: f.steps,
            batch_size: f.batch_size,
            dry_run: f.dry_run,
            max_grad_norm: f.max_grad_norm,
            explode_factor: f.explode_factor,
            patience: f.patience,
            sampler_iterations: 20,
        }
    }
}

impl FineTuneSection {
    pub fn build(&self, seed: u64) -> CliResult<FineTuneConfig> {
        let cfg = FineTuneConfig {
            eta: self.eta,
            negatives: self.negatives,
            sigma_perturb: self.sigma_perturb,
            phi_lr: self.phi_lr,
            psi_base_lr: self.psi_base_lr,
            phi_steps: self.phi_steps,
            psi_steps: self.psi_steps,
            steps: self.steps,
            batch_size: self.batch_size,
            seed,
            dry_run: self.dry_run,
            max_grad_norm: self.max_grad_norm,
            explode_factor: self.explode_factor,
            patience: self.patience,
        };
        cfg.validate()?;
        if self.sampler_iterations == 0 {
            return Err(CliError::Config("sampler_iterations must be positive".into()));
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StabilitySection {
    pub shifts: Vec<f64>,
    pub blurs: Vec<f64>,
    /// `raw`, `centered` or `residual`.
    pub signal: String,
    /// Measure features with the configured `c^k` renormalization (true) or
    /// with `c = 1`.
    pub renormalized: bool,
}

impl Default for StabilitySection {
    fn default() -> Self {
        Self {
            shifts: vec![1.0, 2.0, 3.0, 4.0],
            blurs: vec![0.5, 1.0, 1.5, 2.0],
            signal: "raw".into(),
            renormalized: true,
        }
    }
}

impl StabilitySection {
    pub fn signal(&self, factor: usize) -> CliResult<StabilitySignal> {
        match self.signal.as_str() {
            "raw" => Ok(StabilitySignal::Raw),
            "centered" => Ok(StabilitySignal::Centered),
            "residual" => Ok(StabilitySignal::Residual { factor }),
            other => Err(CliError::Config(format!("unknown stability signal '{other}'"))),
        }
    }

    pub fn grids(&self) -> [(DegradationKind, &[f64]); 2] {
        [(DegradationKind::Shift, &self.shifts), (DegradationKind::Blur, &self.blurs)]
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Config(m) => CliError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Schema and cross-field checks that do not depend on inputs.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.scattering.build(0)?;
        self.degradation.build()?;
        self.train.build(self.seed, 64)?;
        self.inference.build(self.seed)?;
        self.synthesis.build(self.seed)?;
        self.finetune.build(self.seed)?;
        self.stability.signal(self.degradation.factor)?;
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
