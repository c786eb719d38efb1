//! Image-quality metrics, controlled degradations and the pixel-versus-feature
//! stability experiment.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt::Write;

#[allow(unused_imports)]
use num_traits::Float;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::degradation::{downsample, residual, DegradationModel};
use crate::error::{shape_err, Error, Result};
use crate::numerics::{ComplexPlane, Fft2Plan, ImageTensor};
use crate::scattering::FeatureNetwork;

/// Returned by [`psnr`] for identical images.
pub const PSNR_CAP_DB: f64 = f64::INFINITY;

pub fn mse(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(shape_err(a.shape(), b.shape()));
    }
    Ok(a.sub(b)?.norm_sq() / a.len().max(1) as f64)
}

/// `10 log10(peak^2 / mse)`; [`PSNR_CAP_DB`] when the images are equal.
pub fn psnr(a: &ImageTensor, b: &ImageTensor, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::InvalidConfig("PSNR peak must be positive".into()));
    }
    let m = mse(a, b)?;
    if m == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok(10.0 * (peak * peak / m).log10())
}

/// `||a - b|| / ||a||`, with `0` when both are zero and `inf` when only `a` is.
pub fn relative_error(a: &ImageTensor, b: &ImageTensor) -> Result<f64> {
    let d = a.sub(b)?.norm();
    if d == 0.0 {
        return Ok(0.0);
    }
    Ok(d / a.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Axis {
    Rows,
    Cols,
}

/// Circular shift by `k` pixels: `out[i] = img[i - k]` along `axis`.
pub fn shift_image(img: &ImageTensor, k: isize, axis: Axis) -> ImageTensor {
    let (c, h, w) = img.shape();
    let (dy, dx) = match axis {
        Axis::Rows => (k, 0),
        Axis::Cols => (0, k),
    };
    ImageTensor::from_fn(c, h, w, |ch, y, x| {
        let sy = (y as isize - dy).rem_euclid(h as isize) as usize;
        let sx = (x as isize - dx).rem_euclid(w as isize) as usize;
        img.get(ch, sy, sx)
    })
}

/// Periodic Gaussian blur applied in the Fourier domain; the transfer
/// function `exp(-sigma^2 |omega|^2 / 2)` is 1 at DC, so the mean is kept.
pub fn gaussian_blur(img: &ImageTensor, sigma: f64) -> Result<ImageTensor> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::InvalidConfig("blur sigma must be finite and >= 0".into()));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let (c, h, w) = img.shape();
    let kernel = ComplexPlane::from_frequency_fn(h, w, |wy, wx| {
        Complex64::new((-0.5 * sigma * sigma * (wy * wy + wx * wx)).exp(), 0.0)
    });
    let plan = Fft2Plan::new(h, w);
    let mut out = ImageTensor::zeros(c, h, w);
    for ch in 0..c {
        let mut spec = plan.forward_real(img.channel(ch));
        spec.iter_mut().zip(kernel.as_slice()).for_each(|(s, k)| *s *= k);
        plan.inverse(&mut spec);
        for (o, s) in out.channel_mut(ch).iter_mut().zip(&spec) {
            *o = s.re;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DegradationKind {
    /// Diagonal circular shift; severity in pixels along each axis.
    Shift,
    /// Gaussian blur; severity is sigma in pixels.
    Blur,
}

impl DegradationKind {
    pub fn name(&self) -> &'static str {
        match self {
            DegradationKind::Shift => "shift",
            DegradationKind::Blur => "blur",
        }
    }

    pub fn apply(&self, img: &ImageTensor, severity: f64) -> Result<ImageTensor> {
        match self {
            DegradationKind::Shift => {
                let k = severity.round();
                if (k - severity).abs() > 1e-9 {
                    return Err(Error::InvalidConfig("shift severity must be an integer".into()));
                }
                Ok(shift_image(&shift_image(img, k as isize, Axis::Rows), k as isize, Axis::Cols))
            }
            DegradationKind::Blur => gaussian_blur(img, severity),
        }
    }
}

/// Signal on which errors are measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum StabilitySignal {
    /// The image itself.
    Raw,
    /// The image minus its mean.
    Centered,
    /// The high-frequency residual at the given downsampling factor.
    Residual { factor: usize },
}

impl StabilitySignal {
    pub fn extract(&self, img: &ImageTensor) -> Result<ImageTensor> {
        match *self {
            StabilitySignal::Raw => Ok(img.clone()),
            StabilitySignal::Centered => {
                let m = img.mean();
                Ok(img.map(|v| v - m))
            }
            StabilitySignal::Residual { factor } => {
                let model = DegradationModel::new(factor)?;
                residual(img, &downsample(img, &model)?, &model)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StabilityCurve {
    pub kind: DegradationKind,
    pub severities: Vec<f64>,
    pub pixel_rel_err: Vec<f64>,
    pub feature_rel_err: Vec<f64>,
    pub n_images: usize,
}

/// CSV header matching [`StabilityCurve::to_csv`].
pub const STABILITY_CSV_HEADER: &str = "kind,severity,pixel_rel_err,feature_rel_err,n_images";

impl StabilityCurve {
    pub fn to_csv(&self, with_header: bool) -> String {
        let mut s = String::new();
        if with_header {
            s.push_str(STABILITY_CSV_HEADER);
            s.push('\n');
        }
        for i in 0..self.severities.len() {
            let _ = writeln!(
                s,
                "{},{},{:.10e},{:.10e},{}",
                self.kind.name(),
                self.severities[i],
                self.pixel_rel_err[i],
                self.feature_rel_err[i],
                self.n_images
            );
        }
        s
    }

    /// Whether `feature < pixel` (`below = true`) or `feature > pixel` holds
    /// at every severity.
    pub fn ordering_holds(&self, below: bool) -> bool {
        self.pixel_rel_err.iter().zip(&self.feature_rel_err).all(|(p, f)| if below { f < p } else { f > p })
    }
}

/// For each severity, the mean over images of `relative_error(s, s')` in
/// pixels and `relative_error(Psi(s), Psi(s'))` in features, where `s` is
/// the chosen signal of an image and `s'` the signal of its degraded copy.
/// Images are summed in list order.
pub fn stability_curve<N: FeatureNetwork + ?Sized>(
    images: &[ImageTensor],
    psi: &N,
    kind: DegradationKind,
    severities: &[f64],
    signal: StabilitySignal,
) -> Result<StabilityCurve> {
    if images.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut pixel = alloc::vec![0.0; severities.len()];
    let mut feature = alloc::vec![0.0; severities.len()];
    for img in images {
        let s = signal.extract(img)?;
        let f = psi.features(&s)?;
        for (i, &sev) in severities.iter().enumerate() {
            let d = signal.extract(&kind.apply(img, sev)?)?;
            pixel[i] += relative_error(&s, &d)?;
            feature[i] += relative_error(&f, &psi.features(&d)?)?;
        }
    }
    let n = images.len() as f64;
    pixel.iter_mut().chain(feature.iter_mut()).for_each(|v| *v /= n);
    Ok(StabilityCurve {
        kind,
        severities: severities.to_vec(),
        pixel_rel_err: pixel,
        feature_rel_err: feature,
        n_images: images.len(),
    })
}
