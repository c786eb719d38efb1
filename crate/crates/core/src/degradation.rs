//! The forward operator `U` (anti-aliased decimation), the linear predictor
//! `U_bar` (bicubic upsampling) and residual extraction.
//!
//! Both operators act per channel on a periodic grid. Low-resolution pixel
//! `i` sits at high-resolution coordinate `alpha * i + (alpha - 1) / 2`, so
//! the two operators share pixel centres for every factor.
//!
//! The anti-alias filter is a Kaiser-windowed sinc whose transition band is
//! `[passband, 1] * pi / alpha`, cut off in the middle of that band, with
//! length from Kaiser's formula for the requested stop-band attenuation. The
//! defaults (passband `0.7`, 60 dB) keep everything above `pi / alpha` at
//! least 40 dB down.

use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::numerics::{angular_frequency, Fft2Plan, ImageTensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AntialiasSpec {
    /// Passband edge as a fraction of the post-decimation Nyquist frequency.
    pub passband: f64,
    /// Target stop-band attenuation in dB.
    pub attenuation_db: f64,
    /// Overrides the tap count from Kaiser's formula.
    pub taps: Option<usize>,
}

impl Default for AntialiasSpec {
    fn default() -> Self {
        Self {
            passband: 0.7,
            attenuation_db: 60.0,
            taps: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Upsampler {
    /// Keys cubic convolution with `a = -0.5`.
    #[default]
    Bicubic,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DegradationModel {
    pub factor: usize,
    pub antialias: AntialiasSpec,
    pub upsampler: Upsampler,
}

impl DegradationModel {
    pub fn new(factor: usize) -> Result<Self> {
        let model = Self {
            factor,
            antialias: AntialiasSpec::default(),
            upsampler: Upsampler::Bicubic,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=4).contains(&self.factor) {
            return Err(Error::InvalidConfig(alloc::format!(
                "downsampling factor must be 2, 3 or 4, got {}",
                self.factor
            )));
        }
        let a = &self.antialias;
        if !(a.passband > 0.0 && a.passband < 1.0) || !(a.attenuation_db > 0.0) {
            return Err(Error::InvalidConfig("invalid anti-alias specification".into()));
        }
        if a.taps == Some(0) {
            return Err(Error::InvalidConfig("anti-alias filter needs taps".into()));
        }
        Ok(())
    }

    /// High-resolution offset of low-resolution pixel centres.
    fn centre(&self) -> f64 {
        (self.factor as f64 - 1.0) / 2.0
    }

    /// One-dimensional anti-alias filter as `(first_offset, taps)`: output
    /// sample `i` is `sum_k taps[k] * y[alpha * i + first_offset + k]`.
    pub fn antialias_taps(&self) -> (isize, Vec<f64>) {
        let alpha = self.factor as f64;
        let spec = &self.antialias;
        let transition = (1.0 - spec.passband) * PI / alpha;
        let cutoff = 0.5 * (1.0 + spec.passband) * PI / alpha;
        let count = spec.taps.unwrap_or_else(|| {
            ((spec.attenuation_db - 7.95) / (2.285 * transition)).ceil() as usize + 1
        });
        let beta = kaiser_beta(spec.attenuation_db);
        let c = self.centre();
        // Integer tap positions symmetric around the pixel centre `c`.
        let half = (count as f64 - 1.0) / 2.0;
        let first = (c - half).ceil() as isize;
        let last = (c + half).floor() as isize;
        let span = half.max(0.5);
        let norm = bessel_i0(beta);
        let mut taps: Vec<f64> = (first..=last)
            .map(|k| {
                let t = k as f64 - c;
                let ratio = (t / (span + 0.5)).clamp(-1.0, 1.0);
                let window = bessel_i0(beta * (1.0 - ratio * ratio).sqrt()) / norm;
                sinc_lowpass(cutoff, t) * window
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t /= sum;
        }
        (first, taps)
    }
}

/// `sin(cutoff t) / (pi t)`, the ideal low-pass with band edge `cutoff`.
fn sinc_lowpass(cutoff: f64, t: f64) -> f64 {
    if t.abs() < 1e-12 {
        cutoff / PI
    } else {
        (cutoff * t).sin() / (PI * t)
    }
}

fn kaiser_beta(attenuation: f64) -> f64 {
    if attenuation > 50.0 {
        0.1102 * (attenuation - 8.7)
    } else if attenuation >= 21.0 {
        0.5842 * (attenuation - 21.0).powf(0.4) + 0.07886 * (attenuation - 21.0)
    } else {
        0.0
    }
}

/// Modified Bessel function of the first kind, order zero (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = 0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < 1e-17 * sum {
            break;
        }
    }
    sum
}

/// Filters and decimates one periodic line.
fn decimate_line(line: &[f64], alpha: usize, first: isize, taps: &[f64], out: &mut [f64]) {
    let n = line.len() as isize;
    for (i, o) in out.iter_mut().enumerate() {
        let base = (alpha * i) as isize + first;
        *o = taps
            .iter()
            .enumerate()
            .map(|(k, t)| t * line[(base + k as isize).rem_euclid(n) as usize])
            .sum();
    }
}

/// `U`: anti-alias low-pass followed by decimation by `alpha`.
pub fn downsample(y: &ImageTensor, model: &DegradationModel) -> Result<ImageTensor> {
    model.validate()?;
    let alpha = model.factor;
    let (c, h, w) = y.shape();
    if h % alpha != 0 || w % alpha != 0 || h == 0 || w == 0 {
        return Err(Error::ShapeMismatch {
            expected: alloc::format!("dimensions divisible by {alpha}"),
            actual: alloc::format!("{h}x{w}"),
        });
    }
    let (first, taps) = model.antialias_taps();
    let (lh, lw) = (h / alpha, w / alpha);
    let mut out = ImageTensor::zeros(c, lh, lw);
    let mut rows = vec![0.0; h * lw];
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; lh];
    for ch in 0..c {
        let src = y.channel(ch);
        for r in 0..h {
            decimate_line(&src[r * w..(r + 1) * w], alpha, first, &taps, &mut rows[r * lw..(r + 1) * lw]);
        }
        let dst = out.channel_mut(ch);
        for x in 0..lw {
            for (r, v) in col.iter_mut().enumerate() {
                *v = rows[r * lw + x];
            }
            decimate_line(&col, alpha, first, &taps, &mut col_out);
            for (r, v) in col_out.iter().enumerate() {
                dst[r * lw + x] = *v;
            }
        }
    }
    Ok(out)
}

/// Keys cubic convolution kernel with `a = -0.5`.
fn keys(t: f64) -> f64 {
    let a = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Per-output-sample `(base index, 4 weights)` for upsampling a periodic line.
fn cubic_plan(len: usize, alpha: usize, centre: f64) -> Vec<(isize, [f64; 4])> {
    (0..len * alpha)
        .map(|p| {
            let u = (p as f64 - centre) / alpha as f64;
            let base = u.floor();
            let frac = u - base;
            let weights = [keys(frac + 1.0), keys(frac), keys(1.0 - frac), keys(2.0 - frac)];
            (base as isize - 1, weights)
        })
        .collect()
}

fn upsample_line(line: &[f64], plan: &[(isize, [f64; 4])], out: &mut [f64]) {
    let n = line.len() as isize;
    for (o, (base, wts)) in out.iter_mut().zip(plan) {
        *o = wts
            .iter()
            .enumerate()
            .map(|(k, wt)| wt * line[(base + k as isize).rem_euclid(n) as usize])
            .sum();
    }
}

/// `U_bar`: bicubic upsampling by `alpha` on a periodic grid.
pub fn linear_predict(x: &ImageTensor, model: &DegradationModel) -> Result<ImageTensor> {
    model.validate()?;
    let alpha = model.factor;
    let (c, lh, lw) = x.shape();
    let (h, w) = (lh * alpha, lw * alpha);
    let row_plan = cubic_plan(lw, alpha, model.centre());
    let col_plan = cubic_plan(lh, alpha, model.centre());
    let mut out = ImageTensor::zeros(c, h, w);
    let mut rows = vec![0.0; lh * w];
    let mut col = vec![0.0; lh];
    let mut col_out = vec![0.0; h];
    for ch in 0..c {
        let src = x.channel(ch);
        for r in 0..lh {
            upsample_line(&src[r * lw..(r + 1) * lw], &row_plan, &mut rows[r * w..(r + 1) * w]);
        }
        let dst = out.channel_mut(ch);
        for xx in 0..w {
            for (r, v) in col.iter_mut().enumerate() {
                *v = rows[r * w + xx];
            }
            upsample_line(&col, &col_plan, &mut col_out);
            for (r, v) in col_out.iter().enumerate() {
                dst[r * w + xx] = *v;
            }
        }
    }
    Ok(out)
}

/// `r = y - U_bar(x)`.
///
/// Each residual value is nudged by at most a few ulps so that
/// [`reconstruct`] returns `y` bit for bit. That is possible whenever
/// `|r| <= |y|`; when the residual is larger than the pixel, the sum can miss
/// `y` by up to half an ulp of `r`.
pub fn residual(y: &ImageTensor, x: &ImageTensor, model: &DegradationModel) -> Result<ImageTensor> {
    let alpha = model.factor;
    let (c, h, w) = y.shape();
    if x.shape() != (c, h / alpha, w / alpha) || h % alpha != 0 || w % alpha != 0 {
        return Err(shape_err((c, h / alpha, w / alpha), x.shape()));
    }
    let pred = linear_predict(x, model)?;
    let data = y
        .as_slice()
        .iter()
        .zip(pred.as_slice())
        .map(|(&yv, &p)| exact_difference(yv, p))
        .collect();
    ImageTensor::from_vec(c, h, w, data)
}

/// Returns `r` with `p + r == y` in floating point when such an `r` is
/// within a few ulps of `y - p`.
fn exact_difference(y: f64, p: f64) -> f64 {
    let mut r = y - p;
    for _ in 0..8 {
        let s = p + r;
        if s == y {
            return r;
        }
        r = if s < y { next_up(r) } else { next_down(r) };
    }
    y - p
}

fn next_up(v: f64) -> f64 {
    if v == 0.0 {
        return f64::from_bits(1);
    }
    let bits = v.to_bits();
    f64::from_bits(if v > 0.0 { bits + 1 } else { bits - 1 })
}

fn next_down(v: f64) -> f64 {
    -next_up(-v)
}

/// `U_bar(x) + r`.
pub fn reconstruct(x: &ImageTensor, r: &ImageTensor, model: &DegradationModel) -> Result<ImageTensor> {
    linear_predict(x, model)?.add(r)
}

/// Fraction of the energy of each channel's non-DC spectrum lying outside
/// the square `|omega_y|, |omega_x| <= cutoff` (summed over channels).
pub fn upper_band_fraction(img: &ImageTensor, cutoff: f64) -> f64 {
    let (c, h, w) = img.shape();
    let plan = Fft2Plan::new(h, w);
    let (mut upper, mut total) = (0.0, 0.0);
    for ch in 0..c {
        let spec = plan.forward_real(img.channel(ch));
        for ky in 0..h {
            let wy = angular_frequency(ky, h).abs();
            for kx in 0..w {
                if ky == 0 && kx == 0 {
                    continue;
                }
                let wx = angular_frequency(kx, w).abs();
                let e = spec[ky * w + kx].norm_sqr();
                total += e;
                if wy > cutoff + 1e-12 || wx > cutoff + 1e-12 {
                    upper += e;
                }
            }
        }
    }
    if total == 0.0 {
        0.0
    } else {
        upper / total
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_tensor, seeded};

    fn blurred(seed: u64, c: usize, h: usize, w: usize, sigma: f64) -> ImageTensor {
        // Gaussian blur in the frequency domain.
        let noise = gaussian_tensor(&mut seeded(seed), c, h, w, 1.0);
        let plan = Fft2Plan::new(h, w);
        let mut out = ImageTensor::zeros(c, h, w);
        for ch in 0..c {
            let mut spec = plan.forward_real(noise.channel(ch));
            for ky in 0..h {
                for kx in 0..w {
                    let wy = angular_frequency(ky, h);
                    let wx = angular_frequency(kx, w);
                    spec[ky * w + kx] *= (-0.5 * sigma * sigma * (wy * wy + wx * wx)).exp();
                }
            }
            plan.inverse(&mut spec);
            for (o, z) in out.channel_mut(ch).iter_mut().zip(&spec) {
                *o = z.re;
            }
        }
        out
    }

    fn response(taps: &[f64], first: isize, omega: f64) -> f64 {
        let (mut re, mut im) = (0.0, 0.0);
        for (k, t) in taps.iter().enumerate() {
            let n = first as f64 + k as f64;
            re += t * (omega * n).cos();
            im -= t * (omega * n).sin();
        }
        (re * re + im * im).sqrt()
    }

    #[test]
    fn constants_are_preserved() {
        for alpha in 2..=4 {
            let m = DegradationModel::new(alpha).unwrap();
            let y = ImageTensor::filled(2, 12 * alpha, 12 * alpha, 0.37);
            let x = downsample(&y, &m).unwrap();
            assert!(x.as_slice().iter().all(|v| (v - 0.37).abs() < 1e-12));
            let up = linear_predict(&x, &m).unwrap();
            assert!(up.as_slice().iter().all(|v| (v - 0.37).abs() < 1e-12));
        }
    }

    #[test]
    fn shapes() {
        let m = DegradationModel::new(3).unwrap();
        let y = gaussian_tensor(&mut seeded(1), 1, 96, 96, 1.0);
        assert_eq!(downsample(&y, &m).unwrap().shape(), (1, 32, 32));
        let x = gaussian_tensor(&mut seeded(2), 1, 32, 32, 1.0);
        assert_eq!(linear_predict(&x, &m).unwrap().shape(), (1, 96, 96));
        assert!(matches!(
            downsample(&ImageTensor::zeros(1, 32, 32), &m),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(DegradationModel::new(5).is_err());
    }

    #[test]
    fn stopband_is_40_db_down() {
        for alpha in 2..=4 {
            let m = DegradationModel::new(alpha).unwrap();
            let (first, taps) = m.antialias_taps();
            let nyq = PI / alpha as f64;
            let dc = response(&taps, first, 0.0);
            assert!((dc - 1.0).abs() < 1e-12);
            for i in 0..=400 {
                let omega = nyq + (PI - nyq) * i as f64 / 400.0;
                let g = response(&taps, first, omega);
                assert!(20.0 * g.log10() < -40.0, "alpha {alpha}: {omega} -> {g}");
            }
            // Passband ripple stays small.
            for i in 0..=100 {
                let omega = 0.7 * nyq * i as f64 / 100.0;
                assert!((response(&taps, first, omega) - 1.0).abs() < 0.01);
            }
        }
    }

    #[test]
    fn sinusoid_above_nyquist_is_removed() {
        let m = DegradationModel::new(3).unwrap();
        let (h, w) = (96, 96);
        // Frequency 2 pi * 20 / 96 along x, above pi / 3.
        let y = ImageTensor::from_fn(1, h, w, |_, _, x| (2.0 * PI * 20.0 * x as f64 / w as f64).cos());
        let x = downsample(&y, &m).unwrap();
        let ratio = x.norm_sq() / (x.len() as f64) / (y.norm_sq() / y.len() as f64);
        assert!(ratio < 0.01, "{ratio}");
    }

    #[test]
    fn roundtrip_on_smooth_images() {
        for alpha in 2..=4 {
            let m = DegradationModel::new(alpha).unwrap();
            let x = blurred(alpha as u64, 1, 24, 24, 2.0);
            let back = downsample(&linear_predict(&x, &m).unwrap(), &m).unwrap();
            let rel = back.sub(&x).unwrap().norm() / x.norm();
            assert!(rel < 0.05, "alpha {alpha}: {rel}");
        }
    }

    #[test]
    fn operators_are_linear() {
        let m = DegradationModel::new(2).unwrap();
        let mut rng = seeded(4);
        let a = gaussian_tensor(&mut rng, 1, 16, 16, 1.0);
        let b = gaussian_tensor(&mut rng, 1, 16, 16, 1.0);
        let mix = a.scale(2.0).add(&b.scale(-0.5)).unwrap();
        let lhs = downsample(&mix, &m).unwrap();
        let rhs = downsample(&a, &m).unwrap().scale(2.0).add(&downsample(&b, &m).unwrap().scale(-0.5)).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
        let lhs = linear_predict(&mix, &m).unwrap();
        let rhs = linear_predict(&a, &m).unwrap().scale(2.0).add(&linear_predict(&b, &m).unwrap().scale(-0.5)).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-12);
    }

    #[test]
    fn residual_of_prediction_is_zero() {
        let m = DegradationModel::new(4).unwrap();
        let x = gaussian_tensor(&mut seeded(5), 1, 8, 8, 1.0);
        let y = linear_predict(&x, &m).unwrap();
        assert_eq!(residual(&y, &x, &m).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn reconstruction_is_bit_exact_when_representable() {
        for alpha in 2..=4 {
            let m = DegradationModel::new(alpha).unwrap();
            let n = 12 * alpha;
            let smooth = blurred(alpha as u64, 1, n, n, 1.0);
            let noisy = gaussian_tensor(&mut seeded(alpha as u64 + 10), 1, n, n, 1.0);
            for y in [smooth.map(|v| 0.5 + 0.1 * v), noisy.map(|v| 0.5 + 0.2 * v)] {
                let x = downsample(&y, &m).unwrap();
                let r = residual(&y, &x, &m).unwrap();
                let back = reconstruct(&x, &r, &m).unwrap();
                for ((a, b), rv) in back.as_slice().iter().zip(y.as_slice()).zip(r.as_slice()) {
                    if a.to_bits() == b.to_bits() {
                        continue;
                    }
                    // A miss is only possible when one ulp of r spans
                    // several ulps of y.
                    let ulp_r = next_up(rv.abs()) - rv.abs();
                    assert!(rv.abs() > b.abs(), "alpha {alpha}: {a:e} vs {b:e}");
                    assert!((a - b).abs() <= 0.5 * ulp_r, "alpha {alpha}: {a:e} vs {b:e}");
                }
            }
            let smooth = smooth.map(|v| 0.5 + 0.1 * v);
            let x = downsample(&smooth, &m).unwrap();
            let r = residual(&smooth, &x, &m).unwrap();
            assert_eq!(reconstruct(&x, &r, &m).unwrap(), smooth);
        }
    }

    #[test]
    fn residual_rejects_bad_shapes() {
        let m = DegradationModel::new(2).unwrap();
        let y = ImageTensor::zeros(1, 16, 16);
        assert!(residual(&y, &ImageTensor::zeros(1, 7, 8), &m).is_err());
    }

    #[test]
    fn residual_energy_sits_in_upper_band() {
        // Power-law spectrum, a rough stand-in for natural images; the
        // real-image check lives with the file-loading tests.
        let (h, w) = (96, 96);
        let noise = gaussian_tensor(&mut seeded(6), 1, h, w, 1.0);
        let plan = Fft2Plan::new(h, w);
        let mut spec = plan.forward_real(noise.as_slice());
        for ky in 0..h {
            for kx in 0..w {
                let wy = angular_frequency(ky, h);
                let wx = angular_frequency(kx, w);
                let rad = (wy * wy + wx * wx).sqrt().max(2.0 * PI / h as f64);
                spec[ky * w + kx] /= rad;
            }
        }
        plan.inverse(&mut spec);
        let y = ImageTensor::from_vec(1, h, w, spec.iter().map(|z| z.re).collect()).unwrap();
        for alpha in 2..=4 {
            let m = DegradationModel::new(alpha).unwrap();
            let x = downsample(&y, &m).unwrap();
            let r = residual(&y, &x, &m).unwrap();
            let frac = upper_band_fraction(&r, PI / alpha as f64);
            assert!(frac >= 0.6, "alpha {alpha}: {frac}");
        }
    }

    #[test]
    fn bessel_i0_reference_values() {
        assert!((bessel_i0(0.0) - 1.0).abs() < 1e-15);
        assert!((bessel_i0(1.0) - 1.266_065_877_752_008_4).abs() < 1e-14);
        assert!((bessel_i0(5.0) - 27.239_871_823_604_45).abs() < 1e-11);
    }
}
