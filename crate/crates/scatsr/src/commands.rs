//! The command implementations behind the CLI verbs. Each returns a summary
//! that the binary prints; files are written as a side effect.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use scatsr_core::degradation::{downsample, linear_predict, residual, DegradationModel};
use scatsr_core::finetune::{finetune, FineTuneExample, FineTuneReport, IsoprobabilitySampler};
use scatsr_core::inference::{synthesize, EnergyRecord, GibbsModel, InferenceConfig};
use scatsr_core::metrics::{stability_curve, StabilityCurve, STABILITY_CSV_HEADER};
use scatsr_core::predictor::{build_baseline_default, train, Objective, PredictorNetwork, TrainingPair};
use scatsr_core::scattering::{FeatureNetwork, Scattering, ScatteringConfig};
use scatsr_core::ImageTensor;

use crate::config::RunConfig;
use crate::container::{read_coefficients, write_coefficients, Checkpoint, FeatureSpec, Role};
use crate::error::{CliError, CliResult};
use crate::imageio::{list_images, load_image, save_image, RAW_EXTENSION};
use crate::manifest::{extract_patches, DatasetManifest};

/// `<output>.<suffix>` next to the output file.
pub fn sidecar(output: &Path, suffix: &str) -> PathBuf {
    let mut s = output.as_os_str().to_owned();
    s.push(".");
    s.push(suffix);
    PathBuf::from(s)
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn energy_trace_csv(trace: &[EnergyRecord]) -> String {
    let mut s = String::from("iteration,feature,tv,total\n");
    for r in trace {
        let _ = writeln!(s, "{},{:.12e},{:.12e},{:.12e}", r.iteration, r.feature, r.tv, r.total);
    }
    s
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScatterSummary {
    pub channels: usize,
    pub shape: (usize, usize, usize),
    pub energy_by_order: Vec<f64>,
}

impl std::fmt::Display for ScatterSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "channels: {}", self.channels)?;
        writeln!(f, "shape: {:?}", self.shape)?;
        for (k, e) in self.energy_by_order.iter().enumerate() {
            writeln!(f, "energy order {k}: {e:.6e}")?;
        }
        Ok(())
    }
}

pub fn cmd_scatter(image: &Path, cfg: &RunConfig, output: &Path) -> CliResult<ScatterSummary> {
    let img = load_image(image)?;
    let scfg = cfg.scattering.build(0)?;
    let psi = Scattering::new(scfg, img.height(), img.width())?;
    let coeffs = psi.forward(&img)?;
    write_coefficients(output, &coeffs, &FeatureSpec::new(scfg, (img.height(), img.width())))?;
    Ok(ScatterSummary {
        channels: coeffs.paths.len(),
        shape: coeffs.maps.shape(),
        energy_by_order: coeffs.energy_by_order(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub role: Role,
    pub examples: usize,
    pub steps: usize,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl std::fmt::Display for TrainSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "role: {:?}", self.role)?;
        writeln!(f, "examples: {}", self.examples)?;
        writeln!(f, "steps: {}", self.steps)?;
        writeln!(f, "initial loss: {:.6e}", self.initial_loss)?;
        writeln!(f, "final loss: {:.6e}", self.final_loss)
    }
}

/// `Phi` for the configured architecture and its paired scattering config.
pub fn build_phi(cfg: &RunConfig, seed: u64) -> CliResult<(PredictorNetwork, ScatteringConfig)> {
    let arch = cfg.phi.build();
    let scfg = cfg.scattering.build_for_stride(arch.stride())?;
    let net = arch.build(scfg.channel_count(), seed)?;
    Ok((net, scfg))
}

pub fn cmd_train(manifest: &Path, cfg: &RunConfig, output: &Path, trace: bool) -> CliResult<TrainSummary> {
    let manifest = DatasetManifest::load(manifest)?;
    let model = cfg.degradation.build()?;
    let tcfg = cfg.train.build(cfg.seed, manifest.patch_size)?;
    let (mut net, features, divisor) = match tcfg.objective {
        Objective::FeatureRegression => {
            let (net, scfg) = build_phi(cfg, cfg.seed)?;
            (net, Some(scfg), 1usize << scfg.scales)
        }
        Objective::PixelRegression => (build_baseline_default(cfg.seed)?, None, 1),
    };
    let patches = extract_patches(&manifest, &model, divisor)?;
    if patches.is_empty() {
        return Err(CliError::Config("manifest yields no training patches".into()));
    }
    let data = patches
        .iter()
        .map(|t| {
            Ok(TrainingPair {
                input: linear_predict(&t.x, &model)?,
                target: match tcfg.objective {
                    Objective::FeatureRegression => t.r.clone(),
                    Objective::PixelRegression => t.y.clone(),
                },
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let p = manifest.patch_size;
    let psi = features.map(|s| Scattering::new(s, p, p)).transpose()?;
    let report = train(&mut net, &data, psi.as_ref().map(|s| s as &dyn FeatureNetwork), &tcfg)?;
    if trace {
        let mut s = String::from("step,loss\n");
        for (i, l) in report.trace.iter().enumerate() {
            let _ = writeln!(s, "{i},{l:.12e}");
        }
        write_text(&sidecar(output, "trace.csv"), &s)?;
    }
    let role = if features.is_some() { Role::Phi } else { Role::Baseline };
    Checkpoint {
        role,
        network: net,
        features: features.map(|s| FeatureSpec::new(s, (p, p))),
        degradation_factor: model.factor,
        psi_params: None,
        optimizer: report.optimizer.clone(),
    }
    .write(output)?;
    Ok(TrainSummary {
        role,
        examples: data.len(),
        steps: tcfg.steps,
        initial_loss: report.initial_loss,
        final_loss: report.final_loss,
    })
}

/// The configured degradation, which must be the one the checkpoint was
/// trained for.
fn checkpoint_model(ck: &Checkpoint, cfg: &RunConfig) -> CliResult<DegradationModel> {
    let model = cfg.degradation.build()?;
    if model.factor != ck.degradation_factor {
        return Err(CliError::Config(format!(
            "checkpoint was trained for factor {} but the configuration uses {}",
            ck.degradation_factor, model.factor
        )));
    }
    Ok(model)
}

/// Scattering network for a checkpoint, checked against the configuration.
fn checkpoint_psi(ck: &Checkpoint, cfg: &RunConfig, grid: (usize, usize)) -> CliResult<Scattering> {
    let spec = ck.features.as_ref().ok_or_else(|| CliError::Config("checkpoint has no feature network".into()))?;
    let stride = ck.network.layers().iter().map(|l| l.stride).product();
    let expected = cfg.scattering.build_for_stride(stride)?;
    if expected.fingerprint() != spec.fingerprint {
        return Err(CliError::Fingerprint {
            checkpoint: spec.fingerprint.clone(),
            config: expected.fingerprint(),
        });
    }
    Ok(ck.psi_for(grid)?.expect("feature checkpoint"))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuperResolveSummary {
    pub input_shape: (usize, usize, usize),
    pub output_shape: (usize, usize, usize),
    pub energy: Option<f64>,
    pub gradient_evaluations: usize,
    pub energy_evaluations: usize,
}

impl std::fmt::Display for SuperResolveSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "input: {:?}", self.input_shape)?;
        writeln!(f, "output: {:?}", self.output_shape)?;
        if let Some(e) = self.energy {
            writeln!(f, "final energy: {e:.6e}")?;
        }
        writeln!(f, "gradient evaluations: {}", self.gradient_evaluations)?;
        writeln!(f, "energy evaluations: {}", self.energy_evaluations)
    }
}

/// Super-resolves a low-resolution image. A `Phi` checkpoint runs mode
/// sampling of the Gibbs model; a baseline checkpoint is a single forward
/// pass. `residual_output` receives the estimate minus the bicubic image.
pub fn cmd_super_resolve(
    image: &Path,
    checkpoint: &Path,
    cfg: &RunConfig,
    output: &Path,
    trace: bool,
    residual_output: Option<&Path>,
) -> CliResult<SuperResolveSummary> {
    let x = load_image(image)?;
    let ck = Checkpoint::read(checkpoint)?;
    let model = checkpoint_model(&ck, cfg)?;
    let up = linear_predict(&x, &model)?;
    let grid = (up.height(), up.width());
    let (estimate, summary) = match ck.role {
        Role::Baseline => {
            let out = ck.network.forward(&up)?;
            let s = SuperResolveSummary {
                input_shape: x.shape(),
                output_shape: out.shape(),
                energy: None,
                gradient_evaluations: 0,
                energy_evaluations: 0,
            };
            (out, s)
        }
        Role::Phi => {
            let psi = checkpoint_psi(&ck, cfg, grid)?;
            let icfg: InferenceConfig = cfg.inference.build(cfg.seed)?;
            let gibbs = GibbsModel::new(ck.network.clone(), psi, model, cfg.inference.lambda_tv, grid)?;
            let sr = gibbs.super_resolve(&x, &icfg)?;
            if trace {
                write_text(&sidecar(output, "trace.csv"), &energy_trace_csv(&sr.sample.trace))?;
            }
            let s = SuperResolveSummary {
                input_shape: x.shape(),
                output_shape: sr.raw.shape(),
                energy: Some(sr.sample.energy),
                gradient_evaluations: sr.sample.gradient_evaluations,
                energy_evaluations: sr.sample.energy_evaluations,
            };
            (sr.raw, s)
        }
    };
    save_image(&estimate, output)?;
    if let Some(p) = residual_output {
        save_residual(&estimate.sub(&up)?, p)?;
    }
    Ok(summary)
}

/// Residuals go to raster files with a mid-gray offset of 0.5.
fn save_residual(r: &ImageTensor, path: &Path) -> CliResult<()> {
    let is_raw = path.extension().and_then(|e| e.to_str()) == Some(RAW_EXTENSION);
    if is_raw {
        save_image(r, path)
    } else {
        save_image(&r.map(|v| v + 0.5), path)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisSummary {
    pub shape: (usize, usize, usize),
    pub noise_sigma: f64,
    pub initial_error: f64,
    pub final_error: f64,
}

impl SynthesisSummary {
    pub fn ratio(&self) -> f64 {
        self.final_error / self.initial_error
    }
}

impl std::fmt::Display for SynthesisSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "shape: {:?}", self.shape)?;
        writeln!(f, "noise sigma: {:.6e}", self.noise_sigma)?;
        writeln!(f, "initial feature error: {:.6e}", self.initial_error)?;
        writeln!(f, "final feature error: {:.6e}", self.final_error)?;
        writeln!(f, "ratio: {:.6e}", self.ratio())
    }
}

/// Signal whose statistics a synthesis or stability run matches.
pub fn synthesis_signal(img: &ImageTensor, cfg: &RunConfig) -> CliResult<ImageTensor> {
    if cfg.synthesis.signal == "raw" {
        return Ok(img.clone());
    }
    let model: DegradationModel = cfg.degradation.build()?;
    Ok(residual(img, &downsample(img, &model)?, &model)?)
}

/// Matches the scattering statistics of a target (an image or a
/// coefficients file) starting from Gaussian noise.
pub fn cmd_synthesize(target: &Path, cfg: &RunConfig, output: &Path, trace: bool) -> CliResult<SynthesisSummary> {
    let is_image = crate::imageio::is_image_path(target);
    let (psi, feats, sigma) = if is_image {
        let signal = synthesis_signal(&load_image(target)?, cfg)?;
        let psi = Scattering::new(cfg.scattering.build(0)?, signal.height(), signal.width())?;
        let rms = (signal.norm_sq() / signal.len() as f64).sqrt();
        let feats = psi.features(&signal)?;
        (psi, feats, cfg.synthesis.noise_sigma.unwrap_or(rms))
    } else {
        let (coeffs, spec) = read_coefficients(target)?;
        let sigma = cfg.synthesis.noise_sigma.ok_or_else(|| {
            CliError::Config("synthesis from coefficients needs synthesis.noise_sigma".into())
        })?;
        (Scattering::new(spec.config, spec.grid.0, spec.grid.1)?, coeffs.maps, sigma)
    };
    let (h, w) = psi.input_shape();
    let icfg = cfg.synthesis.build(cfg.seed)?;
    let res = synthesize(&psi, &feats, (1, h, w), sigma, &icfg)?;
    if trace {
        write_text(&sidecar(output, "trace.csv"), &energy_trace_csv(&res.trace))?;
    }
    if cfg.synthesis.signal == "residual" || !is_image {
        save_residual(&res.residual, output)?;
    } else {
        save_image(&res.residual, output)?;
    }
    Ok(SynthesisSummary {
        shape: res.residual.shape(),
        noise_sigma: sigma,
        initial_error: res.trace[0].feature.sqrt(),
        final_error: res.energy.sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FineTuneSummary {
    pub steps: usize,
    pub aborted: Option<String>,
    pub first_data_energy: Option<f64>,
    pub last_data_energy: Option<f64>,
}

impl std::fmt::Display for FineTuneSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "rounds completed: {}", self.steps)?;
        if let (Some(a), Some(b)) = (self.first_data_energy, self.last_data_energy) {
            writeln!(f, "data energy: {a:.6e} -> {b:.6e}")?;
        }
        if let Some(r) = &self.aborted {
            writeln!(f, "aborted: {r}")?;
        }
        Ok(())
    }
}

pub fn diagnostics_csv(report: &FineTuneReport) -> String {
    let mut s = String::from("step,data_energy,negative_energy,phi_grad_norm,psi_grad_norm\n");
    for d in &report.diagnostics {
        let _ = writeln!(
            s,
            "{},{:.12e},{:.12e},{:.12e},{:.12e}",
            d.step, d.data_energy, d.negative_energy, d.phi_grad_norm, d.psi_grad_norm
        );
    }
    s
}

/// Likelihood fine-tuning of a `Phi` checkpoint and its scattering filters.
/// Writes the checkpoint and `<output>.diagnostics.csv`. An aborted run
/// still writes the last good parameters, then reports divergence.
pub fn cmd_finetune(checkpoint: &Path, manifest: &Path, cfg: &RunConfig, output: &Path) -> CliResult<FineTuneSummary> {
    let mut ck = Checkpoint::read(checkpoint)?;
    if ck.role != Role::Phi {
        return Err(CliError::Config("fine-tuning needs a feature-regression checkpoint".into()));
    }
    let manifest = DatasetManifest::load(manifest)?;
    let p = manifest.patch_size;
    let mut psi = checkpoint_psi(&ck, cfg, (p, p))?;
    let model = checkpoint_model(&ck, cfg)?;
    let fcfg = cfg.finetune.build(cfg.seed)?;
    let patches = extract_patches(&manifest, &model, 1 << psi.config().scales)?;
    let data = patches
        .iter()
        .map(|t| {
            Ok(FineTuneExample {
                phi_input: linear_predict(&t.x, &model)?,
                residual: t.r.clone(),
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    let mut sampler = IsoprobabilitySampler {
        inference: InferenceConfig {
            iterations: cfg.finetune.sampler_iterations,
            ..cfg.inference.build(cfg.seed)?
        },
        sigma: fcfg.sigma_perturb,
        lambda_tv: cfg.inference.lambda_tv,
    };
    let mut phi = ck.network.clone();
    let report = finetune(&mut phi, &mut psi, &data, &mut sampler, &fcfg)?;
    write_text(&sidecar(output, "diagnostics.csv"), &diagnostics_csv(&report))?;
    ck.network = phi;
    ck.psi_params = Some(scatsr_core::scattering::Trainable::params(&psi));
    ck.features = Some(FeatureSpec::new(*psi.config(), (p, p)));
    ck.write(output)?;
    let summary = FineTuneSummary {
        steps: report.diagnostics.len(),
        aborted: report.aborted.as_ref().map(|(s, r)| format!("step {s}: {r}")),
        first_data_energy: report.diagnostics.first().map(|d| d.data_energy),
        last_data_energy: report.diagnostics.last().map(|d| d.data_energy),
    };
    if let Some(reason) = &summary.aborted {
        return Err(CliError::Diverged(format!("fine-tuning aborted at {reason}; last good parameters saved")));
    }
    Ok(summary)
}

/// Pixel-versus-feature stability curves over every image in a folder.
/// Per-image errors may be computed in parallel (`threads > 1`); they are
/// always summed in file-name order, so results do not depend on `threads`.
pub fn cmd_eval_stability(folder: &Path, cfg: &RunConfig, output: &Path, threads: usize) -> CliResult<Vec<StabilityCurve>> {
    let paths = list_images(folder)?;
    if paths.is_empty() {
        return Err(CliError::Config(format!("no images in {}", folder.display())));
    }
    let images = paths.iter().map(|p| load_image(p)).collect::<CliResult<Vec<_>>>()?;
    let mut scfg = cfg.scattering.build(0)?;
    if !cfg.stability.renormalized {
        scfg.renorm_base = 1.0;
    }
    let signal = cfg.stability.signal(cfg.degradation.factor)?;
    let mut nets = BTreeMap::new();
    for img in &images {
        let key = (img.height(), img.width());
        if let std::collections::btree_map::Entry::Vacant(e) = nets.entry(key) {
            e.insert(Scattering::new(scfg, key.0, key.1)?);
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let mut curves = Vec::new();
    let mut csv = format!("{STABILITY_CSV_HEADER}\n");
    for (kind, grid) in cfg.stability.grids() {
        let per_image: Vec<StabilityCurve> = pool.install(|| {
            images
                .par_iter()
                .map(|img| stability_curve(std::slice::from_ref(img), &nets[&(img.height(), img.width())], kind, grid, signal))
                .collect::<Result<Vec<_>, _>>()
        })?;
        let n = per_image.len() as f64;
        let mut pixel = vec![0.0; grid.len()];
        let mut feature = vec![0.0; grid.len()];
        for c in &per_image {
            for i in 0..grid.len() {
                pixel[i] += c.pixel_rel_err[i];
                feature[i] += c.feature_rel_err[i];
            }
        }
        pixel.iter_mut().chain(feature.iter_mut()).for_each(|v| *v /= n);
        let curve = StabilityCurve {
            kind,
            severities: grid.to_vec(),
            pixel_rel_err: pixel,
            feature_rel_err: feature,
            n_images: images.len(),
        };
        csv.push_str(&curve.to_csv(false));
        curves.push(curve);
    }
    write_text(output, &csv)?;
    Ok(curves)
}

/// Writes a manifest for every image in a folder. Entry paths are relative
/// when the manifest sits in that folder and absolute otherwise.
pub fn cmd_manifest(folder: &Path, output: &Path, patch_size: usize, patches_per_image: usize, seed: u64) -> CliResult<usize> {
    let mut m = DatasetManifest::from_folder(folder, patch_size, patches_per_image, seed)?;
    let canon = |p: &Path| std::fs::canonicalize(p).map_err(|e| CliError::io(p, e));
    let out_dir = match output.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    if canon(out_dir)? != canon(folder)? {
        for e in &mut m.entries {
            e.path = canon(&folder.join(&e.path))?;
        }
    }
    m.save(output)?;
    Ok(m.entries.len())
}
