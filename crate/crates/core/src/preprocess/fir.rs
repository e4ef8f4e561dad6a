//! Linear-phase FIR design by the windowed-sinc method (Hamming window).
//!
//! Cutoffs are passband edges. The ideal cutoff of the prototype sits half a
//! transition band further into the stopband, so the -6 dB point lies in
//! the middle of the transition band. The transition width a Hamming design
//! actually achieves is about `3.3 * sfreq / n_taps`; [`taps_for_transition`]
//! picks the tap count for a requested width.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterKind {
    Lowpass,
    Highpass,
    Bandpass,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FirFilter {
    taps: Vec<f64>,
    pub kind: FilterKind,
    /// Passband edges in Hz: one for low/highpass, `[lo, hi]` for bandpass.
    pub cutoffs: Vec<f64>,
    pub transition_bw: f64,
    pub sfreq: f64,
}

impl FirFilter {
    /// Wraps existing taps. They must be odd in number and symmetric.
    pub fn from_taps(taps: Vec<f64>, sfreq: f64) -> Result<Self> {
        if taps.len() < 3 || taps.len() % 2 == 0 {
            return Err(param(format!("tap count must be odd and at least 3, got {}", taps.len())));
        }
        let n = taps.len();
        if (0..n / 2).any(|k| (taps[k] - taps[n - 1 - k]).abs() > 1e-12 * (1.0 + taps[k].abs())) {
            return Err(param("taps are not symmetric"));
        }
        Ok(Self {
            taps,
            kind: FilterKind::Lowpass,
            cutoffs: Vec::new(),
            transition_bw: 0.0,
            sfreq,
        })
    }

    pub fn taps(&self) -> &[f64] {
        &self.taps
    }

    pub fn len(&self) -> usize {
        self.taps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.taps.is_empty()
    }

    /// Constant delay in samples, `(len - 1) / 2`.
    pub fn group_delay(&self) -> usize {
        (self.taps.len() - 1) / 2
    }

    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = -2.0 * PI * freq_hz / self.sfreq;
        self.taps.iter().enumerate().fold(Complex64::new(0.0, 0.0), |acc, (n, h)| {
            acc + Complex64::new(libm::cos(w * n as f64), libm::sin(w * n as f64)) * *h
        })
    }

    pub fn gain_db(&self, freq_hz: f64) -> f64 {
        20.0 * libm::log10(self.response(freq_hz).norm())
    }

    /// `(frequency, magnitude)` at `n_points` evenly spaced frequencies from
    /// 0 to Nyquist.
    pub fn magnitude_response(&self, n_points: usize) -> Vec<(f64, f64)> {
        let n_points = n_points.max(2);
        (0..n_points)
            .map(|k| {
                let f = self.sfreq / 2.0 * k as f64 / (n_points - 1) as f64;
                (f, self.response(f).norm())
            })
            .collect()
    }
}

/// Smallest odd tap count whose Hamming transition width is at most
/// `transition_bw`.
pub fn taps_for_transition(transition_bw: f64, sfreq: f64) -> usize {
    let n = libm::ceil(3.3 * sfreq / transition_bw) as usize;
    (n | 1).max(3)
}

fn lowpass_prototype(cutoff: f64, n_taps: usize, sfreq: f64) -> Vec<f64> {
    let f = cutoff / sfreq;
    let m = (n_taps - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..n_taps)
        .map(|n| {
            let x = n as f64 - m;
            let sinc = if x == 0.0 {
                2.0 * f
            } else {
                libm::sin(2.0 * PI * f * x) / (PI * x)
            };
            let window = 0.54 - 0.46 * libm::cos(2.0 * PI * n as f64 / (n_taps - 1) as f64);
            sinc * window
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    taps.iter_mut().for_each(|t| *t /= sum);
    // Summation order can break exact symmetry; mirror the first half.
    for k in 0..n_taps / 2 {
        taps[n_taps - 1 - k] = taps[k];
    }
    taps
}

/// Designs a linear-phase FIR filter.
///
/// `cutoffs` holds one passband edge for low/highpass and two for bandpass.
pub fn design_fir(
    kind: FilterKind,
    cutoffs: &[f64],
    transition_bw: f64,
    n_taps: usize,
    sfreq: f64,
) -> Result<FirFilter> {
    if n_taps < 3 || n_taps % 2 == 0 {
        return Err(param(format!("tap count must be odd and at least 3, got {n_taps}")));
    }
    if !(sfreq > 0.0) || !(transition_bw > 0.0) {
        return Err(param("sampling rate and transition bandwidth must be positive"));
    }
    let nyquist = sfreq / 2.0;
    let expected = if kind == FilterKind::Bandpass { 2 } else { 1 };
    if cutoffs.len() != expected {
        return Err(param(format!("{kind:?} needs {expected} cutoff(s), got {}", cutoffs.len())));
    }
    if cutoffs.iter().any(|&c| !(c > 0.0 && c < nyquist)) {
        return Err(param(format!("cutoffs {cutoffs:?} outside (0, {nyquist})")));
    }
    let half = transition_bw / 2.0;
    let check = |c: f64| {
        if c > 0.0 && c < nyquist {
            Ok(c)
        } else {
            Err(param(format!(
                "transition band of {transition_bw} Hz pushes the cutoff to {c} Hz, outside (0, {nyquist})"
            )))
        }
    };
    let centre = n_taps / 2;
    let taps = match kind {
        FilterKind::Lowpass => lowpass_prototype(check(cutoffs[0] + half)?, n_taps, sfreq),
        FilterKind::Highpass => {
            let mut taps = lowpass_prototype(check(cutoffs[0] - half)?, n_taps, sfreq);
            taps.iter_mut().for_each(|t| *t = -*t);
            taps[centre] += 1.0;
            taps
        }
        FilterKind::Bandpass => {
            if cutoffs[0] >= cutoffs[1] {
                return Err(param("bandpass needs lo < hi"));
            }
            let hi = lowpass_prototype(check(cutoffs[1] + half)?, n_taps, sfreq);
            let lo = lowpass_prototype(check(cutoffs[0] - half)?, n_taps, sfreq);
            hi.iter().zip(&lo).map(|(a, b)| a - b).collect()
        }
    };
    Ok(FirFilter {
        taps,
        kind,
        cutoffs: cutoffs.to_vec(),
        transition_bw,
        sfreq,
    })
}
