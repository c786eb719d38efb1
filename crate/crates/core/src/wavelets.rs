//! Frequency-domain filter banks: oriented Morlet wavelets, the complex
//! gradient filter used for the total-variation channel, and a Gaussian
//! low-pass.
//!
//! Filters are sampled on the principal period `[-pi, pi)^2` of the DFT grid
//! (no periodization). Orientation `l` of an `L`-orientation bank points at
//! angle `pi * l / L`; the bank therefore covers a half-plane of directions
//! and the Littlewood-Paley sum is symmetrized over `omega` and `-omega`,
//! which is what matters for real-valued inputs.

#[allow(unused_imports)]
use num_traits::Float;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{angular_frequency, ComplexPlane};

/// Shape parameters of the Morlet family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MorletParams {
    /// Center frequency of the finest-scale wavelet (radians per sample).
    pub xi: f64,
    /// Radial standard deviation of the finest-scale frequency envelope.
    /// `None` picks the half-power overlap between adjacent octaves.
    pub sigma: Option<f64>,
    /// Ratio of angular to radial envelope width. `None` picks half-power
    /// overlap between adjacent orientations at the outer band edge.
    pub slant: Option<f64>,
    /// Spatial standard deviation of the low-pass, in units of `2^J` pixels.
    pub lowpass_sigma: f64,
    /// Rescale band-pass filters so that the Littlewood-Paley sum is at most 1.
    pub normalize: bool,
}

impl Default for MorletParams {
    fn default() -> Self {
        Self {
            xi: 3.0 * PI / 4.0,
            sigma: None,
            slant: None,
            lowpass_sigma: 0.8,
            normalize: true,
        }
    }
}

impl MorletParams {
    pub fn radial_sigma(&self) -> f64 {
        // Half-power points of octaves j and j+1 meet when xi/2 = 1.5 sigma sqrt(ln 2).
        self.sigma
            .unwrap_or_else(|| self.xi / (3.0 * core::f64::consts::LN_2.sqrt()))
    }

    pub fn slant_for(&self, orientations: usize) -> f64 {
        // Half-power points of neighbouring orientations meet on the arc of
        // radius 7 pi / 8, the outer edge of the retained band.
        self.slant.unwrap_or(7.0 * PI / (4.0 * orientations as f64))
    }
}

/// Unnormalized Morlet frequency response at scale 0, orientation `theta`.
///
/// A Gaussian bump centered at `xi` along `theta`, minus a centered Gaussian
/// weighted so that the response vanishes at DC.
pub fn morlet_hat(params: &MorletParams, orientations: usize, theta: f64, wy: f64, wx: f64) -> f64 {
    let sigma = params.radial_sigma();
    let sigma_perp = sigma * params.slant_for(orientations);
    let (s, c) = theta.sin_cos();
    let u = wx * c + wy * s;
    let v = -wx * s + wy * c;
    let perp = (v / sigma_perp).powi(2);
    let bump = (-0.5 * (((u - params.xi) / sigma).powi(2) + perp)).exp();
    let kappa = (-0.5 * (params.xi / sigma).powi(2)).exp();
    let centre = (-0.5 * ((u / sigma).powi(2) + perp)).exp();
    bump - kappa * centre
}

/// Band-pass filters indexed by `(scale, orientation)`, an optional
/// finest-scale gradient filter, and a Gaussian low-pass at scale `2^J`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    scales: usize,
    orientations: usize,
    height: usize,
    width: usize,
    bandpass: Vec<ComplexPlane>,
    tv: Option<ComplexPlane>,
    lowpass: ComplexPlane,
    params: MorletParams,
    /// Multiplier applied to every Morlet filter by the normalization step.
    gain: f64,
}

impl FilterBank {
    /// Assembles a bank from already-built planes (used by deserializers).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        scales: usize,
        orientations: usize,
        bandpass: Vec<ComplexPlane>,
        tv: Option<ComplexPlane>,
        lowpass: ComplexPlane,
        params: MorletParams,
        gain: f64,
    ) -> Result<Self> {
        let (height, width) = lowpass.shape();
        if bandpass.len() != scales * orientations {
            return Err(shape_err(scales * orientations, bandpass.len()));
        }
        for p in bandpass.iter().chain(tv.iter()) {
            if p.shape() != (height, width) {
                return Err(shape_err((height, width), p.shape()));
            }
        }
        Ok(Self {
            scales,
            orientations,
            height,
            width,
            bandpass,
            tv,
            lowpass,
            params,
            gain,
        })
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn orientations(&self) -> usize {
        self.orientations
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn params(&self) -> &MorletParams {
        &self.params
    }

    pub fn gain(&self) -> f64 {
        self.gain
    }

    pub fn bandpass(&self, scale: usize, orientation: usize) -> &ComplexPlane {
        &self.bandpass[scale * self.orientations + orientation]
    }

    pub fn bandpass_filters(&self) -> &[ComplexPlane] {
        &self.bandpass
    }

    pub fn bandpass_filters_mut(&mut self) -> &mut [ComplexPlane] {
        &mut self.bandpass
    }

    pub fn tv_filter(&self) -> Option<&ComplexPlane> {
        self.tv.as_ref()
    }

    pub fn tv_filter_mut(&mut self) -> Option<&mut ComplexPlane> {
        self.tv.as_mut()
    }

    pub fn lowpass(&self) -> &ComplexPlane {
        &self.lowpass
    }

    /// Band-pass filters in `(scale, orientation)` order, then the gradient
    /// filter if present. The low-pass is not included.
    pub fn trainable_filters_mut(&mut self) -> impl Iterator<Item = &mut ComplexPlane> {
        self.bandpass.iter_mut().chain(self.tv.iter_mut())
    }

    pub fn with_tv(mut self, tv: Option<ComplexPlane>) -> Self {
        self.tv = tv;
        self
    }
}

/// Builds the `J x L` Morlet bank plus low-pass on a `height x width` grid.
pub fn build_morlet_bank(
    scales: usize,
    orientations: usize,
    size: (usize, usize),
    params: MorletParams,
) -> Result<FilterBank> {
    let (height, width) = size;
    if scales == 0 || orientations == 0 {
        return Err(Error::InvalidConfig(
            "filter bank needs at least one scale and one orientation".into(),
        ));
    }
    if scales >= usize::BITS as usize || (1usize << scales) > height.min(width) {
        return Err(Error::ScaleTooLarge {
            j: scales,
            height,
            width,
        });
    }
    let mut bandpass = Vec::with_capacity(scales * orientations);
    for j in 0..scales {
        let dilation = (1u64 << j) as f64;
        for l in 0..orientations {
            let theta = PI * l as f64 / orientations as f64;
            let mut plane = ComplexPlane::from_frequency_fn(height, width, |wy, wx| {
                Complex64::new(
                    morlet_hat(&params, orientations, theta, dilation * wy, dilation * wx),
                    0.0,
                )
            });
            plane.as_mut_slice()[0] = Complex64::new(0.0, 0.0);
            bandpass.push(plane);
        }
    }
    let lowpass = gaussian_lowpass((height, width), scales, params.lowpass_sigma);
    let mut bank = FilterBank {
        scales,
        orientations,
        height,
        width,
        bandpass,
        tv: None,
        lowpass,
        params,
        gain: 1.0,
    };
    if params.normalize {
        normalize_bank(&mut bank);
    }
    Ok(bank)
}

/// Gaussian low-pass with spatial standard deviation `sigma * 2^J`, unit DC.
pub fn gaussian_lowpass(size: (usize, usize), scales: usize, sigma: f64) -> ComplexPlane {
    let s = sigma * (1u64 << scales) as f64;
    ComplexPlane::from_frequency_fn(size.0, size.1, |wy, wx| {
        Complex64::new((-0.5 * s * s * (wx * wx + wy * wy)).exp(), 0.0)
    })
}

/// Frequency response of `grad_x + i grad_y` with forward differences,
/// `(x * psi)(u) = [x(u + e_x) - x(u)] + i [x(u + e_y) - x(u)]`.
pub fn build_tv_filter(size: (usize, usize)) -> ComplexPlane {
    let i = Complex64::new(0.0, 1.0);
    ComplexPlane::from_frequency_fn(size.0, size.1, |wy, wx| {
        let dx = Complex64::from_polar(1.0, wx) - 1.0;
        let dy = Complex64::from_polar(1.0, wy) - 1.0;
        dx + i * dy
    })
}

/// Index of `-k` on an `n`-point DFT grid.
#[inline]
pub(crate) fn mirror(k: usize, n: usize) -> usize {
    (n - k) % n
}

/// Symmetrized band-pass energy `1/2 sum |psi(w)|^2 + |psi(-w)|^2` per bin.
fn bandpass_energy(bank: &FilterBank) -> Vec<f64> {
    let (h, w) = bank.shape();
    let mut energy = alloc::vec![0.0; h * w];
    for f in &bank.bandpass {
        for ky in 0..h {
            let my = mirror(ky, h);
            for kx in 0..w {
                let a = f.get(ky, kx).norm_sqr();
                let b = f.get(my, mirror(kx, w)).norm_sqr();
                energy[ky * w + kx] += 0.5 * (a + b);
            }
        }
    }
    energy
}

fn normalize_bank(bank: &mut FilterBank) {
    let energy = bandpass_energy(bank);
    let mut gain2 = f64::INFINITY;
    for (e, phi) in energy.iter().zip(bank.lowpass.as_slice()) {
        if *e > 1e-14 {
            gain2 = gain2.min((1.0 - phi.norm_sqr()).max(0.0) / e);
        }
    }
    if gain2.is_finite() && gain2 > 0.0 {
        let g = gain2.sqrt();
        for f in &mut bank.bandpass {
            f.scale(g);
        }
        bank.gain = g;
    }
}

/// Littlewood-Paley frame diagnostic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LittlewoodPaley {
    /// Minimum of the energy sum over the retained radial band.
    pub min_energy: f64,
    /// Maximum of the energy sum over the whole grid.
    pub max_energy: f64,
}

/// Default retained band `[pi / 2^J, 7 pi / 8]` for the lower frame bound.
pub fn default_frame_band(scales: usize) -> (f64, f64) {
    (PI / (1u64 << scales) as f64, 7.0 * PI / 8.0)
}

/// Default lower-frame-bound target over [`default_frame_band`].
pub const DEFAULT_FRAME_THRESHOLD: f64 = 0.5;

/// `|phi(w)|^2 + 1/2 sum (|psi(w)|^2 + |psi(-w)|^2)`, minimized over the
/// default band and maximized over the grid.
pub fn littlewood_paley(bank: &FilterBank) -> LittlewoodPaley {
    littlewood_paley_in_band(bank, default_frame_band(bank.scales))
}

pub fn littlewood_paley_in_band(bank: &FilterBank, band: (f64, f64)) -> LittlewoodPaley {
    let (h, w) = bank.shape();
    let energy = bandpass_energy(bank);
    let mut min_energy = f64::INFINITY;
    let mut max_energy: f64 = 0.0;
    for ky in 0..h {
        let wy = angular_frequency(ky, h);
        for kx in 0..w {
            let wx = angular_frequency(kx, w);
            let idx = ky * w + kx;
            let total = energy[idx] + bank.lowpass.as_slice()[idx].norm_sqr();
            max_energy = max_energy.max(total);
            let radius = (wx * wx + wy * wy).sqrt();
            if radius >= band.0 && radius <= band.1 {
                min_energy = min_energy.min(total);
            }
        }
    }
    LittlewoodPaley {
        min_energy,
        max_energy,
    }
}
