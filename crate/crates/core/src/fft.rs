//! Iterative radix-2 FFT and one-sided magnitude spectra.

use alloc::vec::Vec;
use core::f64::consts::PI;

use crate::math;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Complex {
    pub re: f64,
    pub im: f64,
}

impl Complex {
    pub const fn new(re: f64, im: f64) -> Self {
        Self { re, im }
    }

    pub fn norm(self) -> f64 {
        math::sqrt(self.re * self.re + self.im * self.im)
    }

    fn mul(self, o: Self) -> Self {
        Self::new(self.re * o.re - self.im * o.im, self.re * o.im + self.im * o.re)
    }
}

/// In-place forward FFT. `data.len()` must be a power of two.
pub fn fft_in_place(data: &mut [Complex]) {
    let n = data.len();
    assert!(n.is_power_of_two(), "fft length must be a power of two, got {n}");
    if n < 2 {
        return;
    }

    // bit-reversal permutation
    let bits = n.trailing_zeros();
    for i in 0..n {
        let j = i.reverse_bits() >> (usize::BITS - bits);
        if i < j {
            data.swap(i, j);
        }
    }

    // Twiddles for the largest stage, computed directly to avoid the drift
    // of repeated complex multiplication.
    let half = n / 2;
    let twiddles: Vec<Complex> = (0..half)
        .map(|k| {
            let angle = -2.0 * PI * k as f64 / n as f64;
            Complex::new(math::cos(angle), math::sin(angle))
        })
        .collect();

    let mut len = 2;
    while len <= n {
        let step = n / len;
        for chunk in data.chunks_exact_mut(len) {
            let (lo, hi) = chunk.split_at_mut(len / 2);
            for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                let t = b.mul(twiddles[k * step]);
                *b = Complex::new(a.re - t.re, a.im - t.im);
                *a = Complex::new(a.re + t.re, a.im + t.im);
            }
        }
        len <<= 1;
    }
}

/// One-sided magnitude spectrum with bin frequencies.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    bin_freqs_hz: Vec<f64>,
    magnitudes: Vec<f64>,
}

impl Spectrum {
    pub fn bin_freqs_hz(&self) -> &[f64] {
        &self.bin_freqs_hz
    }

    pub fn magnitudes(&self) -> &[f64] {
        &self.magnitudes
    }

    pub fn len(&self) -> usize {
        self.magnitudes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.magnitudes.is_empty()
    }

    /// Spacing between adjacent bins.
    pub fn bin_width_hz(&self) -> f64 {
        self.bin_freqs_hz.get(1).copied().unwrap_or(0.0)
    }

    /// Magnitude-weighted mean frequency; `None` when the spectrum is all zero.
    pub fn centroid_hz(&self) -> Option<f64> {
        let mut weighted = 0.0;
        let mut total = 0.0;
        for (&f, &m) in self.bin_freqs_hz.iter().zip(&self.magnitudes) {
            weighted += f * m;
            total += m;
        }
        (total > 0.0).then(|| weighted / total)
    }
}

/// One-sided spectrum of `samples`, zero-padded to the next power of two.
///
/// Bins run from DC to Nyquist inclusive: `padded / 2 + 1` entries with
/// frequency `k * sample_rate / padded`.
pub fn magnitude_spectrum(samples: &[f32], sample_rate_hz: f64) -> Spectrum {
    let padded = samples.len().max(2).next_power_of_two();
    let mut buf: Vec<Complex> = Vec::with_capacity(padded);
    buf.extend(samples.iter().map(|&v| Complex::new(f64::from(v), 0.0)));
    buf.resize(padded, Complex::default());
    fft_in_place(&mut buf);

    let bins = padded / 2 + 1;
    let df = sample_rate_hz / padded as f64;
    Spectrum {
        bin_freqs_hz: (0..bins).map(|k| k as f64 * df).collect(),
        magnitudes: buf[..bins].iter().map(|c| c.norm()).collect(),
    }
}
