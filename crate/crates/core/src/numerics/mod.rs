//! Tensors, Fourier transforms, circular convolution and the
//! finite-difference gradient oracle shared by every other module.
//!
//! All boundaries are periodic. Arbitrary grid sizes are supported (see
//! [`fft`] for the normalization convention).

pub mod fft;
mod tensor;

use alloc::vec::Vec;

pub use fft::{Fft2Plan, FftPlan};
pub use num_complex::Complex64;
pub use tensor::{angular_frequency, ComplexPlane, ImageTensor};

use crate::error::{shape_err, Error, Result};

fn require_single_channel(img: &ImageTensor) -> Result<()> {
    if img.channels() != 1 {
        return Err(shape_err("1 channel", img.channels()));
    }
    Ok(())
}

/// Unnormalized forward DFT of a single-channel image.
pub fn fft2(img: &ImageTensor) -> Result<ComplexPlane> {
    require_single_channel(img)?;
    if !img.is_finite() {
        return Err(Error::NonFinite("fft2 input"));
    }
    let plan = Fft2Plan::new(img.height(), img.width());
    ComplexPlane::from_vec(img.height(), img.width(), plan.forward_real(img.as_slice()))
}

/// Inverse DFT (divides by the number of samples).
pub fn ifft2(plane: &ComplexPlane) -> ComplexPlane {
    let plan = Fft2Plan::new(plane.height(), plane.width());
    let mut out = plane.clone();
    plan.inverse(out.as_mut_slice());
    out
}

/// Circular convolution of a real image with a frequency-domain filter.
///
/// Returns two channels `(re, im)`; for Hermitian filters the imaginary
/// channel vanishes up to rounding.
pub fn circular_convolve(img: &ImageTensor, filter: &ComplexPlane) -> Result<ImageTensor> {
    Ok(circular_convolve_complex(img, filter)?.to_tensor())
}

/// Same as [`circular_convolve`] but keeps the complex plane.
pub fn circular_convolve_complex(img: &ImageTensor, filter: &ComplexPlane) -> Result<ComplexPlane> {
    require_single_channel(img)?;
    if filter.shape() != (img.height(), img.width()) {
        return Err(shape_err((img.height(), img.width()), filter.shape()));
    }
    let plan = Fft2Plan::new(img.height(), img.width());
    let mut spec = plan.forward_real(img.as_slice());
    for (s, f) in spec.iter_mut().zip(filter.as_slice()) {
        *s *= f;
    }
    plan.inverse(&mut spec);
    ComplexPlane::from_vec(img.height(), img.width(), spec)
}

/// Central-difference gradient `(f(x + h e_i) - f(x - h e_i)) / 2h`, one
/// coordinate at a time.
pub fn finite_difference_grad<F>(mut f: F, x: &ImageTensor, h: f64) -> Result<ImageTensor>
where
    F: FnMut(&ImageTensor) -> f64,
{
    if !(1e-6..=1e-2).contains(&h) {
        return Err(Error::InvalidConfig(alloc::format!(
            "finite-difference step {h} outside [1e-6, 1e-2]"
        )));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = probe.as_slice()[i];
        probe.as_mut_slice()[i] = orig + h;
        let fp = f(&probe);
        probe.as_mut_slice()[i] = orig - h;
        let fm = f(&probe);
        probe.as_mut_slice()[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("finite-difference objective"));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    ImageTensor::from_vec(x.channels(), x.height(), x.width(), grad)
}

/// Central-difference gradient of a function of a flat parameter vector.
pub fn finite_difference_grad_params<F>(mut f: F, params: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = params.to_vec();
    let mut grad = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let fp = f(&probe);
        probe[i] = orig - h;
        let fm = f(&probe);
        probe[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite("finite-difference objective"));
        }
        grad.push((fp - fm) / (2.0 * h));
    }
    Ok(grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{gaussian_tensor, seeded};
    use core::f64::consts::PI;
    use num_complex::Complex64;

    fn random_image(seed: u64, h: usize, w: usize) -> ImageTensor {
        gaussian_tensor(&mut seeded(seed), 1, h, w, 1.0)
    }

    /// Direct O(N^2) circular convolution with a spatial complex kernel.
    fn spatial_convolve(img: &ImageTensor, kernel: &[Complex64]) -> Vec<Complex64> {
        let (h, w) = (img.height(), img.width());
        let mut out = alloc::vec![Complex64::new(0.0, 0.0); h * w];
        for y in 0..h {
            for x in 0..w {
                let mut acc = Complex64::new(0.0, 0.0);
                for v in 0..h {
                    for u in 0..w {
                        let k = kernel[v * w + u];
                        let sy = (y + h - v) % h;
                        let sx = (x + w - u) % w;
                        acc += k * img.get(0, sy, sx);
                    }
                }
                out[y * w + x] = acc;
            }
        }
        out
    }

    #[test]
    fn constant_image_has_only_dc() {
        let img = ImageTensor::filled(1, 8, 8, 1.0);
        let spec = fft2(&img).unwrap();
        assert!((spec.dc() - Complex64::new(64.0, 0.0)).norm() < 1e-12);
        for (i, z) in spec.as_slice().iter().enumerate().skip(1) {
            assert!(z.norm() < 1e-12, "bin {i} = {z}");
        }
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let mut img = ImageTensor::zeros(1, 8, 16);
        img.set(0, 0, 0, 1.0);
        let spec = fft2(&img).unwrap();
        for z in spec.as_slice() {
            assert!((z.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn roundtrip_power_of_two_and_general_sizes() {
        for &(h, w) in &[(16, 16), (12, 20), (96, 96), (7, 5), (1, 9)] {
            let img = random_image(h as u64 * 31 + w as u64, h, w);
            let back = ifft2(&fft2(&img).unwrap()).real_part();
            let err = img.max_abs_diff(&back).unwrap();
            assert!(err < 1e-10 * img.max_abs().max(1.0), "{h}x{w}: {err}");
        }
    }

    #[test]
    fn matches_naive_dft_on_odd_size() {
        let img = random_image(3, 5, 6);
        let spec = fft2(&img).unwrap();
        for ky in 0..5 {
            for kx in 0..6 {
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..5 {
                    for x in 0..6 {
                        let ph = -2.0 * PI * ((ky * y) as f64 / 5.0 + (kx * x) as f64 / 6.0);
                        acc += Complex64::from_polar(img.get(0, y, x), ph);
                    }
                }
                assert!((acc - spec.get(ky, kx)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn parseval_with_unnormalized_forward() {
        for &(h, w) in &[(16, 16), (24, 10)] {
            let img = random_image(7, h, w);
            let spec = fft2(&img).unwrap();
            let lhs = img.norm_sq();
            let rhs = spec.energy() / (h * w) as f64;
            assert!((lhs - rhs).abs() < 1e-8 * lhs);
        }
    }

    #[test]
    fn identity_filter_leaves_input() {
        let img = random_image(11, 16, 16);
        let ones = ComplexPlane::from_frequency_fn(16, 16, |_, _| Complex64::new(1.0, 0.0));
        let out = circular_convolve(&img, &ones).unwrap();
        assert!(out.extract_channel(0).max_abs_diff(&img).unwrap() < 1e-12);
        assert!(out.extract_channel(1).max_abs() < 1e-12);
    }

    #[test]
    fn phase_ramp_shifts_by_one_pixel() {
        let img = random_image(5, 16, 16);
        // exp(-i omega_y) delays rows by one sample: out[y] = in[y - 1].
        let shift = ComplexPlane::from_frequency_fn(16, 16, |wy, _| Complex64::from_polar(1.0, -wy));
        let out = circular_convolve(&img, &shift).unwrap().extract_channel(0);
        let expected = ImageTensor::from_fn(1, 16, 16, |_, y, x| img.get(0, (y + 15) % 16, x));
        assert!(out.max_abs_diff(&expected).unwrap() < 1e-9);
    }

    #[test]
    fn matches_spatial_convolution_oracle() {
        let img = random_image(21, 16, 16);
        let mut rng = seeded(22);
        let re = gaussian_tensor(&mut rng, 1, 16, 16, 1.0);
        let im = gaussian_tensor(&mut rng, 1, 16, 16, 1.0);
        let kernel: Vec<Complex64> = re
            .as_slice()
            .iter()
            .zip(im.as_slice())
            .map(|(&a, &b)| Complex64::new(a, b))
            .collect();
        let mut khat = kernel.clone();
        Fft2Plan::new(16, 16).forward(&mut khat);
        let filter = ComplexPlane::from_vec(16, 16, khat).unwrap();
        let fast = circular_convolve_complex(&img, &filter).unwrap();
        let slow = spatial_convolve(&img, &kernel);
        for (a, b) in fast.as_slice().iter().zip(&slow) {
            assert!((a - b).norm() < 1e-8);
        }
    }

    #[test]
    fn convolution_is_linear() {
        let u = random_image(1, 16, 16);
        let v = random_image(2, 16, 16);
        let filt = ComplexPlane::from_frequency_fn(16, 16, |wy, wx| {
            Complex64::new(wy.cos() + 0.3, wx.sin() * 0.5)
        });
        let (a, b) = (1.7, -0.4);
        let mut mix = u.scale(a);
        mix.axpy(b, &v).unwrap();
        let lhs = circular_convolve(&mix, &filt).unwrap();
        let mut rhs = circular_convolve(&u, &filt).unwrap().scale(a);
        rhs.axpy(b, &circular_convolve(&v, &filt).unwrap()).unwrap();
        assert!(lhs.max_abs_diff(&rhs).unwrap() < 1e-9);
    }

    #[test]
    fn convolution_rejects_shape_mismatch() {
        let img = random_image(1, 8, 8);
        let filt = ComplexPlane::zeros(8, 4);
        assert!(matches!(
            circular_convolve(&img, &filt),
            Err(Error::ShapeMismatch { .. })
        ));
    }

    #[test]
    fn fft_rejects_non_finite() {
        let mut img = ImageTensor::zeros(1, 4, 4);
        img.as_mut_slice()[3] = f64::NAN;
        assert_eq!(fft2(&img), Err(Error::NonFinite("fft2 input")));
    }

    #[test]
    fn fd_gradient_of_quadratic_and_linear() {
        let x = random_image(9, 4, 5);
        let g = finite_difference_grad(|t| 0.5 * t.norm_sq(), &x, 1e-4).unwrap();
        assert!(g.max_abs_diff(&x).unwrap() < 1e-8);
        let g = finite_difference_grad(|t| t.sum(), &x, 1e-3).unwrap();
        assert!(g.max_abs_diff(&ImageTensor::filled(1, 4, 5, 1.0)).unwrap() < 1e-10);
    }

    #[test]
    fn fd_gradient_rejects_bad_step_and_nan() {
        let x = ImageTensor::zeros(1, 2, 2);
        assert!(finite_difference_grad(|t| t.sum(), &x, 1.0).is_err());
        assert_eq!(
            finite_difference_grad(|_| f64::NAN, &x, 1e-4),
            Err(Error::NonFinite("finite-difference objective"))
        );
    }
}
