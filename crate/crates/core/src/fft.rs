//! FFT backend abstraction.
//!
//! A backend hands out plans for a given length and direction; plans are
//! immutable and shared between worker threads. [`BuiltinFft`] needs nothing
//! beyond `alloc`: an iterative radix-2 transform for powers of two and
//! Bluestein's chirp-z algorithm for every other length. The std companion
//! crate adds a rustfft-backed backend; results agree to well below 1e-9.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// `X[k] = sum x[n] e^{-2 pi i k n / N}`
    Forward,
    /// Unnormalized inverse, `x[n] = sum X[k] e^{+2 pi i k n / N}`.
    Inverse,
}

pub trait FftPlan: Send + Sync {
    fn len(&self) -> usize;

    /// Transforms `buffer` (exactly `len()` values) in place.
    fn process(&self, buffer: &mut [Complex64]);
}

pub trait FftBackend: Send + Sync {
    fn name(&self) -> &str;

    fn plan(&self, len: usize, direction: Direction) -> Arc<dyn FftPlan>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct BuiltinFft;

impl FftBackend for BuiltinFft {
    fn name(&self) -> &str {
        "builtin"
    }

    fn plan(&self, len: usize, direction: Direction) -> Arc<dyn FftPlan> {
        assert!(len >= 1, "FFT length must be positive");
        if len.is_power_of_two() {
            Arc::new(Radix2::new(len, direction))
        } else {
            Arc::new(Bluestein::new(len, direction))
        }
    }
}

fn unit(angle: f64) -> Complex64 {
    Complex64::new(libm::cos(angle), libm::sin(angle))
}

struct Radix2 {
    len: usize,
    twiddles: Vec<Complex64>,
    bitrev: Vec<u32>,
}

impl Radix2 {
    fn new(len: usize, direction: Direction) -> Self {
        let sign = match direction {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        };
        let twiddles = (0..len / 2)
            .map(|k| unit(sign * 2.0 * PI * k as f64 / len as f64))
            .collect();
        let bits = len.trailing_zeros();
        let bitrev = (0..len as u32)
            .map(|i| if bits == 0 { 0 } else { i.reverse_bits() >> (32 - bits) })
            .collect();
        Self {
            len,
            twiddles,
            bitrev,
        }
    }
}

impl FftPlan for Radix2 {
    fn len(&self) -> usize {
        self.len
    }

    fn process(&self, buf: &mut [Complex64]) {
        let n = self.len;
        assert_eq!(buf.len(), n, "buffer length does not match plan");
        for i in 0..n {
            let j = self.bitrev[i] as usize;
            if i < j {
                buf.swap(i, j);
            }
        }
        let mut size = 2;
        while size <= n {
            let half = size / 2;
            let step = n / size;
            for block in buf.chunks_exact_mut(size) {
                let (lo, hi) = block.split_at_mut(half);
                for (k, (a, b)) in lo.iter_mut().zip(hi.iter_mut()).enumerate() {
                    let t = *b * self.twiddles[k * step];
                    *b = *a - t;
                    *a += t;
                }
            }
            size *= 2;
        }
    }
}

/// Chirp-z evaluation of an arbitrary-length DFT through a power-of-two
/// circular convolution.
struct Bluestein {
    len: usize,
    chirp: Vec<Complex64>,
    kernel_spectrum: Vec<Complex64>,
    forward: Radix2,
    inverse: Radix2,
}

impl Bluestein {
    fn new(len: usize, direction: Direction) -> Self {
        let sign = match direction {
            Direction::Forward => -1.0,
            Direction::Inverse => 1.0,
        };
        let m = (2 * len - 1).next_power_of_two();
        // k^2 mod 2N keeps the chirp angle exact for large k.
        let modulus = 2 * len as u128;
        let chirp: Vec<Complex64> = (0..len)
            .map(|k| {
                let k2 = (k as u128 * k as u128) % modulus;
                unit(sign * PI * k2 as f64 / len as f64)
            })
            .collect();
        let forward = Radix2::new(m, Direction::Forward);
        let inverse = Radix2::new(m, Direction::Inverse);
        let mut kernel = vec![Complex64::new(0.0, 0.0); m];
        kernel[0] = chirp[0].conj();
        for k in 1..len {
            kernel[k] = chirp[k].conj();
            kernel[m - k] = chirp[k].conj();
        }
        forward.process(&mut kernel);
        let scale = 1.0 / m as f64;
        for v in &mut kernel {
            *v *= scale;
        }
        Self {
            len,
            chirp,
            kernel_spectrum: kernel,
            forward,
            inverse,
        }
    }
}

impl FftPlan for Bluestein {
    fn len(&self) -> usize {
        self.len
    }

    fn process(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.len, "buffer length does not match plan");
        let m = self.forward.len;
        let mut work = vec![Complex64::new(0.0, 0.0); m];
        for ((w, x), c) in work.iter_mut().zip(buf.iter()).zip(&self.chirp) {
            *w = *x * *c;
        }
        self.forward.process(&mut work);
        for (w, k) in work.iter_mut().zip(&self.kernel_spectrum) {
            *w *= *k;
        }
        self.inverse.process(&mut work);
        for ((x, w), c) in buf.iter_mut().zip(&work).zip(&self.chirp) {
            *x = *w * *c;
        }
    }
}

/// Number of one-sided bins for a real transform of length `nfft`.
pub fn n_bins(nfft: usize) -> usize {
    nfft / 2 + 1
}

/// Prepares a real signal for a fixed-resolution transform: exactly `nfft`
/// samples (truncated or zero-padded) with the mean of the retained samples
/// removed.
pub(crate) fn load_demeaned(signal: &[f64], nfft: usize, out: &mut [Complex64]) {
    let used = signal.len().min(nfft);
    let mean = if used > 0 {
        signal[..used].iter().sum::<f64>() / used as f64
    } else {
        0.0
    };
    for (o, &x) in out.iter_mut().zip(&signal[..used]) {
        *o = Complex64::new(x - mean, 0.0);
    }
    for o in &mut out[used..nfft] {
        *o = Complex64::new(0.0, 0.0);
    }
}

/// Forces the bins that are real for real input to be exactly real, and the
/// DC bin of a mean-removed signal to zero.
pub(crate) fn clean_real_spectrum(spectrum: &mut [Complex64], nfft: usize) {
    spectrum[0] = Complex64::new(0.0, 0.0);
    if nfft % 2 == 0 && nfft >= 2 {
        spectrum[nfft / 2].im = 0.0;
    }
}

/// One-sided DFT of a mean-removed real signal using exactly `nfft` samples.
///
/// Bin `k` corresponds to `k * sfreq / nfft` Hz.
pub fn fft_real(plan: &dyn FftPlan, signal: &[f64]) -> Result<Vec<Complex64>> {
    let nfft = plan.len();
    if nfft < 2 {
        return Err(param(format!("nfft must be at least 2, got {nfft}")));
    }
    if signal.is_empty() {
        return Err(param("signal must not be empty"));
    }
    let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
    load_demeaned(signal, nfft, &mut buf);
    plan.process(&mut buf);
    buf.truncate(n_bins(nfft));
    clean_real_spectrum(&mut buf, nfft);
    Ok(buf)
}
