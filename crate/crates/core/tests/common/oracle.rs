//! Literal per-trial evaluation of the metric definitions, used as an
//! independent reference. Everything here is written for clarity, not
//! speed: direct DFT sums, explicit per-trial averages, direct lag scans.
#![allow(dead_code)]

use std::f64::consts::PI;

pub type C = (f64, f64);

fn mul_conj(a: C, b: C) -> C {
    (a.0 * b.0 + a.1 * b.1, a.1 * b.0 - a.0 * b.1)
}

fn abs(a: C) -> f64 {
    a.0.hypot(a.1)
}

/// `(cos, sin)` of `2 pi m / n`, exact at quarter turns.
fn unit(m: usize, n: usize) -> C {
    let m = m % n;
    if (4 * m) % n == 0 {
        return [(1.0, 0.0), (0.0, 1.0), (-1.0, 0.0), (0.0, -1.0)][4 * m / n];
    }
    let phase = 2.0 * PI * m as f64 / n as f64;
    (phase.cos(), phase.sin())
}

/// Direct DFT of the first `nfft` samples (zero-padded) after removing
/// their mean; bins `0..=nfft/2`.
pub fn dft(signal: &[f64], nfft: usize) -> Vec<C> {
    let used = signal.len().min(nfft);
    let mean = signal[..used].iter().sum::<f64>() / used as f64;
    (0..=nfft / 2)
        .map(|k| {
            // The DC term of a mean-removed signal is zero; summing it
            // would only leave rounding residue.
            if k == 0 {
                return (0.0, 0.0);
            }
            let mut acc = (0.0, 0.0);
            for (t, x) in signal[..used].iter().enumerate() {
                let (c, s) = unit(k * t, nfft);
                acc.0 += (x - mean) * c;
                acc.1 -= (x - mean) * s;
            }
            acc
        })
        .collect()
}

/// `trials[t][c]` is channel `c` of trial `t`.
pub struct Oracle {
    /// spectra[t][c][k]
    spectra: Vec<Vec<Vec<C>>>,
}

impl Oracle {
    pub fn new(trials: &[Vec<Vec<f64>>], nfft: usize) -> Self {
        let spectra = trials
            .iter()
            .map(|t| t.iter().map(|ch| dft(ch, nfft)).collect())
            .collect();
        Self { spectra }
    }

    fn k(&self) -> f64 {
        self.spectra.len() as f64
    }

    fn csd(&self, t: usize, i: usize, j: usize, bin: usize) -> C {
        mul_conj(self.spectra[t][i][bin], self.spectra[t][j][bin])
    }

    fn mean<F: Fn(usize) -> C>(&self, f: F) -> C {
        let mut acc = (0.0, 0.0);
        for t in 0..self.spectra.len() {
            let v = f(t);
            acc.0 += v.0;
            acc.1 += v.1;
        }
        (acc.0 / self.k(), acc.1 / self.k())
    }

    pub fn cohy(&self, i: usize, j: usize, bin: usize) -> C {
        let s = self.mean(|t| self.csd(t, i, j, bin));
        let pi = self.mean(|t| self.csd(t, i, i, bin)).0;
        let pj = self.mean(|t| self.csd(t, j, j, bin)).0;
        let d = (pi * pj).sqrt();
        if d == 0.0 {
            (0.0, 0.0)
        } else {
            (s.0 / d, s.1 / d)
        }
    }

    pub fn plv(&self, i: usize, j: usize, bin: usize) -> f64 {
        abs(self.mean(|t| {
            let c = self.csd(t, i, j, bin);
            let m = abs(c);
            if m == 0.0 {
                (0.0, 0.0)
            } else {
                (c.0 / m, c.1 / m)
            }
        }))
    }

    pub fn pli(&self, i: usize, j: usize, bin: usize) -> f64 {
        let sign = |v: f64| if v > 0.0 { 1.0 } else if v < 0.0 { -1.0 } else { 0.0 };
        self.mean(|t| (sign(self.csd(t, i, j, bin).1), 0.0)).0.abs()
    }

    pub fn uspli(&self, i: usize, j: usize, bin: usize) -> f64 {
        let k = self.k();
        let pi = self.mean(|t| self.csd(t, i, i, bin)).0;
        let pj = self.mean(|t| self.csd(t, j, j, bin)).0;
        if pi * pj == 0.0 {
            return 0.0;
        }
        let p = self.pli(i, j, bin);
        (k * p * p - 1.0) / (k - 1.0)
    }

    pub fn wpli(&self, i: usize, j: usize, bin: usize) -> f64 {
        let num = self.mean(|t| (self.csd(t, i, j, bin).1, 0.0)).0.abs();
        let den = self.mean(|t| (self.csd(t, i, j, bin).1.abs(), 0.0)).0;
        if den == 0.0 {
            0.0
        } else {
            num / den
        }
    }

    /// Per-bin value of a spectral metric by name; COHY yields its
    /// magnitude and imaginary part.
    pub fn value(&self, metric: &str, i: usize, j: usize, bin: usize) -> (f64, f64) {
        match metric {
            "COHY" => self.cohy(i, j, bin),
            "COH" => (abs(self.cohy(i, j, bin)), 0.0),
            "IMAGCOHY" => (self.cohy(i, j, bin).1, 0.0),
            "PLV" => (self.plv(i, j, bin), 0.0),
            "PLI" => (self.pli(i, j, bin), 0.0),
            "USPLI" => (self.uspli(i, j, bin), 0.0),
            "WPLI" => (self.wpli(i, j, bin), 0.0),
            "DSWPLI" => (self.wpli(i, j, bin).powi(2), 0.0),
            other => panic!("not a spectral metric: {other}"),
        }
    }

    /// Band average over `lo..=hi`; COHY averages the complex value and
    /// returns `(|mean|, Im mean)`.
    pub fn band(&self, metric: &str, i: usize, j: usize, lo: usize, hi: usize) -> (f64, f64) {
        let n = (hi - lo + 1) as f64;
        let (mut a, mut b) = (0.0, 0.0);
        for bin in lo..=hi {
            let v = self.value(metric, i, j, bin);
            a += v.0;
            b += v.1;
        }
        if metric == "COHY" {
            ((a / n).hypot(b / n), b / n)
        } else {
            (a / n, 0.0)
        }
    }
}

/// Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

/// Direct lag scan of the normalized cross-correlation. Returns the peak
/// value and its lag reported so that positive means `y` trails `x`.
pub fn xcor_scan(x: &[f64], y: &[f64], max_lag: usize) -> (f64, i64) {
    let n = x.len();
    let mx = x.iter().sum::<f64>() / n as f64;
    let my = y.iter().sum::<f64>() / n as f64;
    let x: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let y: Vec<f64> = y.iter().map(|v| v - my).collect();
    let ey: f64 = y.iter().map(|v| v * v).sum();
    let mut best = (f64::NEG_INFINITY, 0i64);
    for tau in -(max_lag as i64)..=(max_lag as i64) {
        let mut num = 0.0;
        let mut ex = 0.0;
        for t in 0..n as i64 {
            let s = t + tau;
            if s < 0 || s >= n as i64 {
                continue;
            }
            num += x[s as usize] * y[t as usize];
            ex += x[s as usize] * x[s as usize];
        }
        let d = (ex * ey).sqrt();
        let v = if d > 0.0 { num / d } else { 0.0 };
        if v > best.0 {
            best = (v, -tau);
        }
    }
    best
}
