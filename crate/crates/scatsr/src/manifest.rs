//! Dataset manifests and training-patch extraction.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::Rng;
use scatsr_core::degradation::{downsample, linear_predict, residual, DegradationModel};
use scatsr_core::rng::seeded;
use scatsr_core::ImageTensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::container::SCHEMA_VERSION;
use crate::error::{CliError, CliResult};
use crate::imageio::{list_images, load_image};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    /// Relative to the manifest's directory unless absolute.
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    #[serde(default = "default_patch")]
    pub patch_size: usize,
    #[serde(default = "default_cap")]
    pub patches_per_image: usize,
    #[serde(default)]
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    /// Directory that relative entry paths resolve against (not serialized).
    #[serde(skip)]
    pub root: PathBuf,
}

fn default_patch() -> usize {
    64
}

fn default_cap() -> usize {
    2
}

pub fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// One training example: high-resolution patch `y`, its observation
/// `x = downsample(y)` and residual `r = y - linear_predict(x)`.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchTriple {
    pub x: ImageTensor,
    pub y: ImageTensor,
    pub r: ImageTensor,
    /// Source image index and top-left corner.
    pub origin: (usize, usize, usize),
}

impl DatasetManifest {
    /// Hashes every image in `dir` (sorted by name); paths are stored
    /// relative to `dir`.
    pub fn from_folder(dir: &Path, patch_size: usize, patches_per_image: usize, seed: u64) -> CliResult<Self> {
        let entries = list_images(dir)?
            .into_iter()
            .map(|p| {
                Ok(ManifestEntry {
                    sha256: sha256_file(&p)?,
                    path: p.file_name().map(PathBuf::from).unwrap_or_default(),
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let m = Self {
            schema_version: SCHEMA_VERSION,
            patch_size,
            patches_per_image,
            seed,
            entries,
            root: dir.to_path_buf(),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(CliError::Config(format!(
                "manifest schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.patches_per_image == 0 {
            return Err(CliError::Config("patches_per_image must be at least 1".into()));
        }
        if self.patch_size == 0 {
            return Err(CliError::Config("patch_size must be positive".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| CliError::io(path, e))
    }

    /// Parses a manifest and checks that every entry exists with the
    /// recorded hash.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut m: Self = toml::from_str(&text).map_err(|e| CliError::format(path, e.to_string()))?;
        m.root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        m.validate()?;
        m.verify()?;
        Ok(m)
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn verify(&self) -> CliResult<()> {
        for e in &self.entries {
            let p = self.resolve(e);
            let actual = sha256_file(&p)?;
            if actual != e.sha256 {
                return Err(CliError::Drift {
                    path: p,
                    expected: e.sha256.clone(),
                    actual,
                });
            }
        }
        Ok(())
    }
}

/// Random patches (at most `patches_per_image` distinct positions per
/// image), deterministic in the manifest seed. `divisor` is the extra
/// alignment the patch size must satisfy (e.g. `2^J`).
pub fn extract_patches(manifest: &DatasetManifest, model: &DegradationModel, divisor: usize) -> CliResult<Vec<PatchTriple>> {
    let p = manifest.patch_size;
    if p % model.factor != 0 || p % divisor.max(1) != 0 {
        return Err(CliError::Config(format!(
            "patch size {p} must be divisible by the factor {} and by {divisor}",
            model.factor
        )));
    }
    let mut rng = seeded(manifest.seed);
    let mut out = Vec::new();
    for (idx, entry) in manifest.entries.iter().enumerate() {
        let path = manifest.resolve(entry);
        let img = load_image(&path)?;
        let (_, h, w) = img.shape();
        if h < p || w < p {
            return Err(CliError::format(&path, format!("image {h}x{w} is smaller than the {p}x{p} patch")));
        }
        let positions = (h - p + 1) * (w - p + 1);
        let want = manifest.patches_per_image.min(positions);
        let mut chosen = BTreeSet::new();
        let mut picks = Vec::with_capacity(want);
        while picks.len() < want {
            let pos = (rng.random_range(0..=h - p), rng.random_range(0..=w - p));
            if chosen.insert(pos) {
                picks.push(pos);
            }
        }
        for (top, left) in picks {
            let y = ImageTensor::from_fn(1, p, p, |_, i, j| img.get(0, top + i, left + j));
            let x = downsample(&y, model)?;
            let r = residual(&y, &x, model)?;
            out.push(PatchTriple {
                x,
                y,
                r,
                origin: (idx, top, left),
            });
        }
    }
    Ok(out)
}

/// Network input for a patch: the linear prediction from `x`.
pub fn upsampled(t: &PatchTriple, model: &DegradationModel) -> CliResult<ImageTensor> {
    Ok(linear_predict(&t.x, model)?)
}
