//! Discrete Fourier transforms on arbitrary lengths.
//!
//! Convention used throughout the crate: the forward transform is
//! unnormalized, `X[k] = sum_n x[n] exp(-2 pi i k n / N)`, and the inverse
//! divides by `N`. Power-of-two lengths use an iterative radix-2 kernel;
//! every other length goes through Bluestein's chirp-z reformulation on a
//! padded power-of-two grid.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

#[derive(Debug, Clone)]
enum Algorithm {
    Identity,
    Radix2 {
        twiddles: Vec<Complex64>,
        bitrev: Vec<u32>,
    },
    Bluestein {
        inner: Box<FftPlan>,
        chirp: Vec<Complex64>,
        kernel_hat: Vec<Complex64>,
    },
}

/// Precomputed one-dimensional transform of a fixed length.
#[derive(Debug, Clone)]
pub struct FftPlan {
    len: usize,
    algorithm: Algorithm,
}

impl FftPlan {
    pub fn new(len: usize) -> Self {
        let algorithm = if len <= 1 {
            Algorithm::Identity
        } else if len.is_power_of_two() {
            let bits = len.trailing_zeros();
            let twiddles = (0..len / 2)
                .map(|k| Complex64::from_polar(1.0, -2.0 * PI * k as f64 / len as f64))
                .collect();
            let bitrev = (0..len as u32)
                .map(|i| i.reverse_bits() >> (32 - bits))
                .collect();
            Algorithm::Radix2 { twiddles, bitrev }
        } else {
            let m = (2 * len - 1).next_power_of_two();
            let inner = FftPlan::new(m);
            // k^2 mod 2N keeps the chirp phase argument small and exact.
            let chirp: Vec<Complex64> = (0..len)
                .map(|k| {
                    let k2 = (k as u64 * k as u64) % (2 * len as u64);
                    Complex64::from_polar(1.0, -PI * k2 as f64 / len as f64)
                })
                .collect();
            let mut kernel = vec![Complex64::new(0.0, 0.0); m];
            kernel[0] = chirp[0].conj();
            for k in 1..len {
                kernel[k] = chirp[k].conj();
                kernel[m - k] = chirp[k].conj();
            }
            inner.forward(&mut kernel);
            Algorithm::Bluestein {
                inner: Box::new(inner),
                chirp,
                kernel_hat: kernel,
            }
        };
        Self { len, algorithm }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// In-place unnormalized forward transform.
    pub fn forward(&self, buf: &mut [Complex64]) {
        debug_assert_eq!(buf.len(), self.len);
        match &self.algorithm {
            Algorithm::Identity => {}
            Algorithm::Radix2 { twiddles, bitrev } => radix2(buf, twiddles, bitrev),
            Algorithm::Bluestein {
                inner,
                chirp,
                kernel_hat,
            } => {
                let m = inner.len();
                let mut work = vec![Complex64::new(0.0, 0.0); m];
                for ((w, &x), &c) in work.iter_mut().zip(buf.iter()).zip(chirp) {
                    *w = x * c;
                }
                inner.forward(&mut work);
                for (w, k) in work.iter_mut().zip(kernel_hat) {
                    *w *= k;
                }
                inner.inverse_unnormalized(&mut work);
                let scale = 1.0 / m as f64;
                for ((b, w), &c) in buf.iter_mut().zip(&work).zip(chirp) {
                    *b = w * c * scale;
                }
            }
        }
    }

    /// In-place inverse transform without the `1/N` factor.
    pub fn inverse_unnormalized(&self, buf: &mut [Complex64]) {
        for z in buf.iter_mut() {
            *z = z.conj();
        }
        self.forward(buf);
        for z in buf.iter_mut() {
            *z = z.conj();
        }
    }
}

fn radix2(buf: &mut [Complex64], twiddles: &[Complex64], bitrev: &[u32]) {
    let n = buf.len();
    for (i, &j) in bitrev.iter().enumerate() {
        let j = j as usize;
        if i < j {
            buf.swap(i, j);
        }
    }
    let mut size = 2;
    while size <= n {
        let half = size / 2;
        let stride = n / size;
        for block in buf.chunks_exact_mut(size) {
            let (lo, hi) = block.split_at_mut(half);
            for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let t = *b * twiddles[k * stride];
                *b = *a - t;
                *a += t;
            }
        }
        size *= 2;
    }
}

/// Row-column two-dimensional transform on a fixed `(height, width)` grid.
#[derive(Debug, Clone)]
pub struct Fft2Plan {
    height: usize,
    width: usize,
    rows: FftPlan,
    cols: FftPlan,
}

impl Fft2Plan {
    pub fn new(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            rows: FftPlan::new(width),
            cols: FftPlan::new(height),
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.apply(data, false);
    }

    /// Inverse transform including the `1/(height*width)` normalization.
    pub fn inverse(&self, data: &mut [Complex64]) {
        self.apply(data, true);
        let s = 1.0 / self.len() as f64;
        for z in data.iter_mut() {
            *z *= s;
        }
    }

    fn apply(&self, data: &mut [Complex64], inverse: bool) {
        assert_eq!(data.len(), self.len(), "plane size does not match plan");
        let (h, w) = (self.height, self.width);
        for row in data.chunks_exact_mut(w) {
            if inverse {
                self.rows.inverse_unnormalized(row);
            } else {
                self.rows.forward(row);
            }
        }
        let mut column = vec![Complex64::new(0.0, 0.0); h];
        for x in 0..w {
            for (y, c) in column.iter_mut().enumerate() {
                *c = data[y * w + x];
            }
            if inverse {
                self.cols.inverse_unnormalized(&mut column);
            } else {
                self.cols.forward(&mut column);
            }
            for (y, c) in column.iter().enumerate() {
                data[y * w + x] = *c;
            }
        }
    }

    /// Forward transform of a real plane.
    pub fn forward_real(&self, real: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = real.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward(&mut buf);
        buf
    }
}
