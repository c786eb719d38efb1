//! Binary container shared by tensors, filter banks, coefficient files and
//! checkpoints.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic    8 bytes  "SCATSR\0\x01"
//! kind     u32 length + UTF-8
//! header   u64 length + UTF-8 JSON (always carries "schema_version")
//! arrays   u32 count, then per array: u32 name length + UTF-8 name,
//!          u64 element count, f64 elements
//! ```
//!
//! Floats are stored bit-exactly; everything descriptive lives in the JSON
//! header.

use std::io::{Read, Write};
use std::path::Path;

use scatsr_core::numerics::{Complex64, ComplexPlane};
use scatsr_core::scattering::{ScatteringConfig, ScatteringCoefficients, ScatteringPath, TvPropagation};
use scatsr_core::wavelets::{FilterBank, MorletParams};
use scatsr_core::ImageTensor;
use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::error::{CliError, CliResult};
use scatsr_core::optim::{Optimizer, OptimizerConfig};
use scatsr_core::predictor::{LayerSpec, PredictorNetwork};
use scatsr_core::scattering::{Scattering, Trainable};

pub const MAGIC: &[u8; 8] = b"SCATSR\0\x01";
pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: String,
    pub header: serde_json::Value,
    pub arrays: Vec<(String, Vec<f64>)>,
}

fn put_str(out: &mut Vec<u8>, s: &str, wide: bool) {
    if wide {
        out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    } else {
        out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    }
    out.extend_from_slice(s.as_bytes());
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let end = self.pos.checked_add(n)?;
        let s = self.buf.get(self.pos..end)?;
        self.pos = end;
        Some(s)
    }

    fn u32(&mut self) -> Option<u32> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?))
    }

    fn u64(&mut self) -> Option<u64> {
        Some(u64::from_le_bytes(self.take(8)?.try_into().ok()?))
    }

    fn string(&mut self, wide: bool) -> Option<String> {
        let n = if wide { self.u64()? as usize } else { self.u32()? as usize };
        String::from_utf8(self.take(n)?.to_vec()).ok()
    }
}

impl Container {
    pub fn new(kind: &str, header: impl Serialize) -> CliResult<Self> {
        let mut header = serde_json::to_value(header).map_err(|e| CliError::Config(e.to_string()))?;
        if let serde_json::Value::Object(map) = &mut header {
            map.insert("schema_version".into(), SCHEMA_VERSION.into());
        }
        Ok(Self {
            kind: kind.into(),
            header,
            arrays: Vec::new(),
        })
    }

    pub fn with_array(mut self, name: &str, data: Vec<f64>) -> Self {
        self.arrays.push((name.into(), data));
        self
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, &self.kind, false);
        put_str(&mut out, &self.header.to_string(), true);
        out.extend_from_slice(&(self.arrays.len() as u32).to_le_bytes());
        for (name, data) in &self.arrays {
            put_str(&mut out, name, false);
            out.extend_from_slice(&(data.len() as u64).to_le_bytes());
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> CliResult<Self> {
        let bad = |m: &str| CliError::format(origin, m.to_string());
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(bad("not a scatsr container (bad magic)"));
        }
        let mut c = Cursor { buf: bytes, pos: 8 };
        let kind = c.string(false).ok_or_else(|| bad("truncated kind"))?;
        let header_text = c.string(true).ok_or_else(|| bad("truncated header"))?;
        let header: serde_json::Value = serde_json::from_str(&header_text).map_err(|e| bad(&format!("header: {e}")))?;
        match header.get("schema_version").and_then(|v| v.as_u64()) {
            Some(v) if v == SCHEMA_VERSION as u64 => {}
            other => return Err(bad(&format!("unsupported schema version {other:?}"))),
        }
        let count = c.u32().ok_or_else(|| bad("truncated array table"))?;
        let mut arrays = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name = c.string(false).ok_or_else(|| bad("truncated array name"))?;
            let n = c.u64().ok_or_else(|| bad("truncated array length"))? as usize;
            let raw = c.take(n.checked_mul(8).ok_or_else(|| bad("array too large"))?).ok_or_else(|| bad("truncated array data"))?;
            arrays.push((name, raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().unwrap())).collect()));
        }
        if c.pos != bytes.len() {
            return Err(bad("trailing bytes"));
        }
        Ok(Self { kind, header, arrays })
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
        f.write_all(&self.to_bytes()).map_err(|e| CliError::io(path, e))
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let mut buf = Vec::new();
        std::fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut buf))
            .map_err(|e| CliError::io(path, e))?;
        Self::from_bytes(&buf, path)
    }

    /// Reads a container and checks its kind.
    pub fn read_kind(path: &Path, kind: &str) -> CliResult<Self> {
        let c = Self::read(path)?;
        if c.kind != kind {
            return Err(CliError::format(path, format!("expected a {kind} file, found {}", c.kind)));
        }
        Ok(c)
    }

    pub fn header_as<T: DeserializeOwned>(&self, origin: &Path) -> CliResult<T> {
        serde_json::from_value(self.header.clone()).map_err(|e| CliError::format(origin, format!("header: {e}")))
    }

    pub fn array(&self, name: &str, origin: &Path) -> CliResult<&[f64]> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d.as_slice())
            .ok_or_else(|| CliError::format(origin, format!("missing array {name}")))
    }

    pub fn has_array(&self, name: &str) -> bool {
        self.arrays.iter().any(|(n, _)| n == name)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct TensorHeader {
    shape: (usize, usize, usize),
}

pub const TENSOR_KIND: &str = "tensor";

pub fn tensor_container(t: &ImageTensor) -> CliResult<Container> {
    Ok(Container::new(TENSOR_KIND, TensorHeader { shape: t.shape() })?.with_array("data", t.as_slice().to_vec()))
}

pub fn tensor_from_container(c: &Container, origin: &Path) -> CliResult<ImageTensor> {
    let h: TensorHeader = c.header_as(origin)?;
    let (ch, y, x) = h.shape;
    Ok(ImageTensor::from_vec(ch, y, x, c.array("data", origin)?.to_vec())?)
}

/// Scattering configuration as stored alongside data derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub config: ScatteringConfig,
    pub fingerprint: String,
    /// Input grid `(height, width)` the filters were built for.
    pub grid: (usize, usize),
}

impl FeatureSpec {
    pub fn new(config: ScatteringConfig, grid: (usize, usize)) -> Self {
        Self {
            fingerprint: config.fingerprint(),
            config,
            grid,
        }
    }

    pub fn check(&self, origin: &Path) -> CliResult<()> {
        if self.fingerprint != self.config.fingerprint() {
            return Err(CliError::format(origin, "stored fingerprint disagrees with stored configuration"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CoefficientsHeader {
    features: FeatureSpec,
    shape: (usize, usize, usize),
    paths: Vec<ScatteringPath>,
    labels: Vec<String>,
}

pub const COEFFICIENTS_KIND: &str = "scattering-coefficients";

pub fn write_coefficients(path: &Path, coeffs: &ScatteringCoefficients, features: &FeatureSpec) -> CliResult<()> {
    let header = CoefficientsHeader {
        features: features.clone(),
        shape: coeffs.maps.shape(),
        labels: coeffs.paths.iter().map(|p| p.label()).collect(),
        paths: coeffs.paths.clone(),
    };
    Container::new(COEFFICIENTS_KIND, header)?
        .with_array("maps", coeffs.maps.as_slice().to_vec())
        .write(path)
}

pub fn read_coefficients(path: &Path) -> CliResult<(ScatteringCoefficients, FeatureSpec)> {
    let c = Container::read_kind(path, COEFFICIENTS_KIND)?;
    let h: CoefficientsHeader = c.header_as(path)?;
    h.features.check(path)?;
    let (ch, y, x) = h.shape;
    let maps = ImageTensor::from_vec(ch, y, x, c.array("maps", path)?.to_vec())?;
    if h.paths.len() != ch {
        return Err(CliError::format(path, "path table does not match channel count"));
    }
    Ok((ScatteringCoefficients { paths: h.paths, maps }, h.features))
}

fn planes_to_vec<'a>(planes: impl IntoIterator<Item = &'a ComplexPlane>) -> Vec<f64> {
    planes.into_iter().flat_map(|p| p.as_slice().iter().flat_map(|z| [z.re, z.im])).collect()
}

fn vec_to_planes(data: &[f64], (h, w): (usize, usize), origin: &Path) -> CliResult<Vec<ComplexPlane>> {
    let n = 2 * h * w;
    if n == 0 || data.len() % n != 0 {
        return Err(CliError::format(origin, "filter array length is not a whole number of planes"));
    }
    data.chunks_exact(n)
        .map(|c| {
            let z = c.chunks_exact(2).map(|p| Complex64::new(p[0], p[1])).collect();
            Ok(ComplexPlane::from_vec(h, w, z)?)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct BankHeader {
    features: FeatureSpec,
    morlet: MorletParams,
    gain: f64,
    has_tv: bool,
    tv_propagation: TvPropagation,
}

pub const BANK_KIND: &str = "filter-bank";

pub fn write_bank(path: &Path, bank: &FilterBank, features: &FeatureSpec) -> CliResult<()> {
    bank_container(bank, features)?.write(path)
}

pub fn bank_container(bank: &FilterBank, features: &FeatureSpec) -> CliResult<Container> {
    let header = BankHeader {
        features: features.clone(),
        morlet: *bank.params(),
        gain: bank.gain(),
        has_tv: bank.tv_filter().is_some(),
        tv_propagation: features.config.tv_propagation,
    };
    let mut c = Container::new(BANK_KIND, header)?
        .with_array("bandpass", planes_to_vec(bank.bandpass_filters()))
        .with_array("lowpass", planes_to_vec([bank.lowpass()]));
    if let Some(tv) = bank.tv_filter() {
        c = c.with_array("tv", planes_to_vec([tv]));
    }
    Ok(c)
}

pub fn read_bank(path: &Path) -> CliResult<(FilterBank, FeatureSpec)> {
    let c = Container::read_kind(path, BANK_KIND)?;
    let h: BankHeader = c.header_as(path)?;
    h.features.check(path)?;
    let grid = h.features.grid;
    let bandpass = vec_to_planes(c.array("bandpass", path)?, grid, path)?;
    let lowpass = vec_to_planes(c.array("lowpass", path)?, grid, path)?.remove(0);
    let tv = if h.has_tv {
        Some(vec_to_planes(c.array("tv", path)?, grid, path)?.remove(0))
    } else {
        None
    };
    let cfg = &h.features.config;
    let bank = FilterBank::from_parts(cfg.scales, cfg.orientations, bandpass, tv, lowpass, h.morlet, h.gain)?;
    Ok((bank, h.features))
}

/// What a checkpoint's network predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Role {
    /// Feature regressor `Phi` paired with a scattering network.
    Phi,
    /// Pixel-space baseline predicting the high-resolution image.
    Baseline,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointHeader {
    role: Role,
    input_channels: usize,
    layers: Vec<LayerSpec>,
    global_skip: bool,
    features: Option<FeatureSpec>,
    degradation_factor: usize,
    fine_tuned_psi: bool,
    /// Training optimizer and its step count; moments live in arrays.
    #[serde(default)]
    optimizer: Option<(OptimizerConfig, u64)>,
}

pub const CHECKPOINT_KIND: &str = "checkpoint";

/// A trained network plus, for `Phi`, the feature network it regresses to.
/// Fine-tuned `Psi` filters are stored for the grid in `features.grid`.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub role: Role,
    pub network: PredictorNetwork,
    pub features: Option<FeatureSpec>,
    pub degradation_factor: usize,
    pub psi_params: Option<Vec<f64>>,
    /// State of the training optimizer (moments included), if saved.
    pub optimizer: Option<Optimizer>,
}

impl Checkpoint {
    pub fn write(&self, path: &Path) -> CliResult<()> {
        let header = CheckpointHeader {
            role: self.role,
            input_channels: self.network.input_channels(),
            layers: self.network.layers().to_vec(),
            global_skip: self.network.global_skip(),
            features: self.features.clone(),
            degradation_factor: self.degradation_factor,
            fine_tuned_psi: self.psi_params.is_some(),
            optimizer: self.optimizer.as_ref().map(|o| (*o.config(), o.steps_taken())),
        };
        let mut c = Container::new(CHECKPOINT_KIND, header)?.with_array("phi", self.network.params_slice().to_vec());
        if let Some(p) = &self.psi_params {
            c = c.with_array("psi", p.clone());
        }
        if let Some(o) = &self.optimizer {
            let (m, v) = o.moments();
            c = c.with_array("optimizer_m", m.to_vec()).with_array("optimizer_v", v.to_vec());
        }
        c.write(path)
    }

    pub fn read(path: &Path) -> CliResult<Self> {
        let c = Container::read_kind(path, CHECKPOINT_KIND)?;
        let h: CheckpointHeader = c.header_as(path)?;
        if let Some(f) = &h.features {
            f.check(path)?;
        }
        if h.role == Role::Phi && h.features.is_none() {
            return Err(CliError::format(path, "feature checkpoint without feature network description"));
        }
        let network = PredictorNetwork::from_parts(h.input_channels, h.layers, c.array("phi", path)?.to_vec(), h.global_skip)?;
        let psi_params = if h.fine_tuned_psi { Some(c.array("psi", path)?.to_vec()) } else { None };
        let optimizer = match h.optimizer {
            Some((config, step)) => Some(Optimizer::from_state(
                config,
                step,
                c.array("optimizer_m", path)?.to_vec(),
                c.array("optimizer_v", path)?.to_vec(),
            )?),
            None => None,
        };
        Ok(Self {
            role: h.role,
            network,
            features: h.features,
            degradation_factor: h.degradation_factor,
            psi_params,
            optimizer,
        })
    }

    /// The scattering network for a high-resolution grid, with fine-tuned
    /// filters when present (these exist only for the training grid).
    pub fn psi_for(&self, grid: (usize, usize)) -> CliResult<Option<Scattering>> {
        let Some(f) = &self.features else { return Ok(None) };
        let mut psi = Scattering::new(f.config, grid.0, grid.1)?;
        if let Some(p) = &self.psi_params {
            if grid != f.grid {
                return Err(CliError::Config(format!(
                    "fine-tuned feature filters exist for {}x{} inputs only, got {}x{}",
                    f.grid.0, f.grid.1, grid.0, grid.1
                )));
            }
            psi.set_params(p)?;
        }
        Ok(Some(psi))
    }
}
