//! Image files.
//!
//! * `.png`, `.pgm`, `.ppm`, `.pnm`: 8- or 16-bit rasters mapped to `[0, 1]`.
//!   Colour is reduced to luminance `0.299 R + 0.587 G + 0.114 B`; alpha is
//!   ignored. Saving writes 8-bit grayscale after clamping to `[0, 1]`.
//! * `.sfr`: the raw float container (any channel count, bit-exact).

use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, ImageFormat};
use scatsr_core::ImageTensor;

use crate::container::{tensor_container, tensor_from_container, Container, TENSOR_KIND};
use crate::error::{CliError, CliResult};

pub const RAW_EXTENSION: &str = "sfr";
pub const RASTER_EXTENSIONS: [&str; 4] = ["png", "pgm", "ppm", "pnm"];

fn extension(path: &Path) -> String {
    path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase()
}

pub fn is_image_path(path: &Path) -> bool {
    let ext = extension(path);
    ext == RAW_EXTENSION || RASTER_EXTENSIONS.contains(&ext.as_str())
}

pub fn load_image(path: &Path) -> CliResult<ImageTensor> {
    let ext = extension(path);
    if ext == RAW_EXTENSION {
        let c = Container::read_kind(path, TENSOR_KIND)?;
        return tensor_from_container(&c, path);
    }
    if !RASTER_EXTENSIONS.contains(&ext.as_str()) {
        return Err(CliError::format(path, format!("unsupported image format '.{ext}'")));
    }
    let img = image::open(path).map_err(|e| match e {
        image::ImageError::IoError(io) => CliError::io(path, io),
        other => CliError::format(path, other.to_string()),
    })?;
    Ok(luminance(&img))
}

/// Single-channel `[0, 1]` luminance of a decoded raster.
pub fn luminance(img: &DynamicImage) -> ImageTensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data: Vec<f64> = match img {
        DynamicImage::ImageLuma8(g) => g.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLumaA8(_) => img.to_luma8().as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(g) => g.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageLumaA16(_) => img.to_luma16().as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb16(_) | DynamicImage::ImageRgba16(_) => img
            .to_rgb16()
            .as_raw()
            .chunks_exact(3)
            .map(|p| weighted(p[0] as f64, p[1] as f64, p[2] as f64) / 65535.0)
            .collect(),
        _ => img
            .to_rgb8()
            .as_raw()
            .chunks_exact(3)
            .map(|p| weighted(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect(),
    };
    ImageTensor::from_vec(1, h, w, data).expect("decoded buffer matches its dimensions")
}

fn weighted(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn save_image(img: &ImageTensor, path: &Path) -> CliResult<()> {
    let ext = extension(path);
    if ext == RAW_EXTENSION {
        return tensor_container(img)?.write(path);
    }
    let format = match ext.as_str() {
        "png" => ImageFormat::Png,
        "pgm" | "pnm" => ImageFormat::Pnm,
        _ => return Err(CliError::format(path, format!("cannot write '.{ext}' (use .png, .pgm or .{RAW_EXTENSION})"))),
    };
    if img.channels() != 1 {
        return Err(CliError::format(path, "raster output needs a single-channel image"));
    }
    let bytes: Vec<u8> = img.as_slice().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect();
    let gray = GrayImage::from_raw(img.width() as u32, img.height() as u32, bytes).expect("buffer size");
    gray.save_with_format(path, format).map_err(|e| CliError::io(path, e))
}

/// Image files in a directory, sorted by file name.
pub fn list_images(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_image_path(p))
        .collect();
    out.sort();
    Ok(out)
}
