//! Time-domain metrics: Pearson correlation and peak normalized
//! cross-correlation.

use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{param, Error, Result};
use crate::fft::{Direction, FftBackend, FftPlan};
use crate::par;
use crate::types::{
    n_pairs, pairs, ConnectivityNetwork, Edge, EpochMatrix, FrequencyBand, MetricId,
    XCorEdgeValue,
};

fn demeaned(x: &[f64]) -> Vec<f64> {
    let mean = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - mean).collect()
}

/// Channels whose samples are all equal (zero variance).
pub fn flat_channels(epoch: &EpochMatrix) -> Vec<usize> {
    epoch
        .rows()
        .enumerate()
        .filter(|(_, row)| row.iter().all(|v| *v == row[0]))
        .map(|(c, _)| c)
        .collect()
}

/// Pearson correlation of every pair `i < j` for one trial.
///
/// Zero-variance channels give 0 for all their pairs.
pub fn cor_trial(epoch: &EpochMatrix) -> Vec<f64> {
    const CHUNK: usize = 256;
    const BLOCK: usize = 32;
    let (n, t) = (epoch.n_channels(), epoch.n_samples());
    let mut scale = Vec::with_capacity(n);
    for row in epoch.rows() {
        let mean = row.iter().sum::<f64>() / t as f64;
        let ss: f64 = row.iter().map(|v| (v - mean) * (v - mean)).sum();
        scale.push((mean, if ss > 0.0 { 1.0 / libm::sqrt(ss) } else { 0.0 }));
    }
    // Upper block triangle of the Gram matrix of the unit rows, accumulated
    // over sample chunks.
    let mut buf = vec![0.0; n * CHUNK.min(t)];
    let mut gram = vec![0.0; n * n];
    let mut s = 0;
    while s < t {
        let w = CHUNK.min(t - s);
        for (c, row) in epoch.rows().enumerate() {
            let (mean, inv) = scale[c];
            for (d, v) in buf[c * w..(c + 1) * w].iter_mut().zip(&row[s..s + w]) {
                *d = (v - mean) * inv;
            }
        }
        for i0 in (0..n).step_by(BLOCK) {
            let rows = BLOCK.min(n - i0);
            // SAFETY: rows i0.. of `buf` form an (n - i0) x w row-major
            // block, read as A (its first `rows` rows) and as B = its
            // transpose. The output starts at gram[i0][i0] with row stride n
            // and spans `rows` x (n - i0) entries inside `gram`, which is
            // not aliased by `buf`.
            unsafe {
                let a = buf.as_ptr().add(i0 * w);
                matrixmultiply::dgemm(
                    rows,
                    w,
                    n - i0,
                    1.0,
                    a,
                    w as isize,
                    1,
                    a,
                    1,
                    w as isize,
                    1.0,
                    gram.as_mut_ptr().add(i0 * n + i0),
                    n as isize,
                    1,
                );
            }
        }
        s += w;
    }
    let mut out = Vec::with_capacity(n_pairs(n));
    for i in 0..n {
        out.extend(gram[i * n + i + 1..(i + 1) * n].iter().map(|v| v.clamp(-1.0, 1.0)));
    }
    out
}

fn check_same_layout(epochs: &[EpochMatrix]) -> Result<&EpochMatrix> {
    let first = epochs.first().ok_or(Error::NoData)?;
    for e in epochs {
        if !e.same_layout(first) {
            return Err(Error::Dimension {
                what: "epoch shape",
                expected: first.n_channels() * first.n_samples(),
                got: e.n_channels() * e.n_samples(),
            });
        }
    }
    Ok(first)
}

/// Trial-averaged Pearson correlation network.
pub fn cor(epochs: &[EpochMatrix]) -> Result<ConnectivityNetwork> {
    let first = check_same_layout(epochs)?;
    let n = first.n_channels();
    let mut sum = vec![0.0; n_pairs(n)];
    for e in epochs {
        for (s, v) in sum.iter_mut().zip(cor_trial(e)) {
            *s += v;
        }
    }
    Ok(cor_network(n, &sum, epochs.len(), FrequencyBand::default()))
}

pub(crate) fn cor_network(
    n_channels: usize,
    sum: &[f64],
    n_trials: usize,
    band: FrequencyBand,
) -> ConnectivityNetwork {
    let mut net = ConnectivityNetwork::empty(MetricId::Cor, band, n_channels, n_trials);
    let k = n_trials as f64;
    net.edges = pairs(n_channels)
        .zip(sum)
        .map(|((i, j), s)| Edge::real(i as u32, j as u32, s / k))
        .collect();
    net
}

/// FFT plans for cross-correlating trials of a given length.
pub struct XcorPlans {
    n_samples: usize,
    forward: Arc<dyn FftPlan>,
    inverse: Arc<dyn FftPlan>,
}

impl XcorPlans {
    pub fn new(backend: &dyn FftBackend, n_samples: usize) -> Self {
        let len = (2 * n_samples - 1).next_power_of_two();
        Self {
            n_samples,
            forward: backend.plan(len, Direction::Forward),
            inverse: backend.plan(len, Direction::Inverse),
        }
    }

    pub fn fft_len(&self) -> usize {
        self.forward.len()
    }
}

struct XcorChannel {
    spectrum: Vec<Complex64>,
    /// `prefix[t]` is the energy of the first `t` mean-removed samples.
    prefix: Vec<f64>,
}

/// Peak normalized cross-correlation for every pair `i < j` of one trial.
///
/// For a lag `tau` the correlation is
/// `sum_t x(t + tau) y(t) / sqrt(sum_t x(t + tau)^2 * sum_t y(t)^2)` with
/// `x` = channel `i`, `y` = channel `j`, both mean-removed, the numerator and
/// the `x` energy taken over the overlapping samples and the `y` energy over
/// the whole trial. The numerator comes from an FFT cross-correlation. The
/// reported lag is `-tau`, so a positive lag means `j` trails `i`.
///
/// Returns the per-pair peaks and the number of transforms run.
pub fn xcor_trial(
    plans: &XcorPlans,
    epoch: &EpochMatrix,
    max_lag: usize,
) -> Result<(Vec<XCorEdgeValue>, u64)> {
    let n = epoch.n_samples();
    if n != plans.n_samples {
        return Err(Error::Dimension {
            what: "xcor trial length",
            expected: plans.n_samples,
            got: n,
        });
    }
    if max_lag >= n {
        return Err(param(alloc::format!(
            "max_lag {max_lag} must be below the trial length {n}"
        )));
    }
    let len = plans.fft_len();
    let n_channels = epoch.n_channels();
    let channels: Vec<XcorChannel> = par::map_range(n_channels, |c| {
        let x = demeaned(epoch.channel(c));
        let mut prefix = Vec::with_capacity(n + 1);
        prefix.push(0.0);
        let mut acc = 0.0;
        for v in &x {
            acc += v * v;
            prefix.push(acc);
        }
        let mut spectrum = vec![Complex64::new(0.0, 0.0); len];
        for (s, v) in spectrum.iter_mut().zip(&x) {
            s.re = *v;
        }
        plans.forward.process(&mut spectrum);
        XcorChannel { spectrum, prefix }
    });
    let rows = par::map_range(n_channels, |i| {
        let mut buf = vec![Complex64::new(0.0, 0.0); len];
        (i + 1..n_channels)
            .map(|j| {
                let (x, y) = (&channels[i], &channels[j]);
                for ((b, a), c) in buf.iter_mut().zip(&x.spectrum).zip(&y.spectrum) {
                    *b = a * c.conj();
                }
                plans.inverse.process(&mut buf);
                peak_from_correlation(&buf, x, y, n, max_lag)
            })
            .collect::<Vec<_>>()
    });
    let transforms = (n_channels + n_pairs(n_channels)) as u64;
    Ok((rows.concat(), transforms))
}

fn peak_from_correlation(
    circ: &[Complex64],
    x: &XcorChannel,
    y: &XcorChannel,
    n: usize,
    max_lag: usize,
) -> XCorEdgeValue {
    let len = circ.len();
    let y_energy = y.prefix[n];
    let mut best = XCorEdgeValue {
        peak_value: f64::NEG_INFINITY,
        peak_lag: 0,
    };
    for tau in -(max_lag as i64)..=(max_lag as i64) {
        let (lo, hi) = if tau >= 0 {
            (tau as usize, n)
        } else {
            (0, (n as i64 + tau) as usize)
        };
        let x_energy = x.prefix[hi] - x.prefix[lo];
        let denom = libm::sqrt(x_energy * y_energy);
        let idx = if tau >= 0 { tau as usize } else { len - (-tau) as usize };
        let value = if denom > 0.0 {
            circ[idx].re / len as f64 / denom
        } else {
            0.0
        };
        if value > best.peak_value {
            best = XCorEdgeValue {
                peak_value: value,
                peak_lag: -tau,
            };
        }
    }
    best
}

/// Running sums of per-trial XCOR peaks.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct XcorSums {
    pub value: Vec<f64>,
    pub lag: Vec<i64>,
}

impl XcorSums {
    pub fn new(n_pairs: usize) -> Self {
        Self {
            value: vec![0.0; n_pairs],
            lag: vec![0; n_pairs],
        }
    }

    pub fn add(&mut self, trial: &[XCorEdgeValue]) {
        for ((v, l), t) in self.value.iter_mut().zip(&mut self.lag).zip(trial) {
            *v += t.peak_value;
            *l += t.peak_lag;
        }
    }

    pub fn remove(&mut self, trial: &[XCorEdgeValue]) {
        for ((v, l), t) in self.value.iter_mut().zip(&mut self.lag).zip(trial) {
            *v -= t.peak_value;
            *l -= t.peak_lag;
        }
    }

    pub fn network(&self, n_channels: usize, n_trials: usize, band: FrequencyBand) -> ConnectivityNetwork {
        let mut net = ConnectivityNetwork::empty(MetricId::Xcor, band, n_channels, n_trials);
        let k = n_trials as f64;
        net.edges = pairs(n_channels)
            .enumerate()
            .map(|(p, (i, j))| Edge {
                i: i as u32,
                j: j as u32,
                weight: (self.value[p] / k).abs(),
                weight_im: None,
                lag: Some(libm::round(self.lag[p] as f64 / k) as i64),
            })
            .collect();
        net
    }
}

/// Trial-averaged XCOR network: edge weight is the absolute mean peak value
/// and the lag the rounded mean peak lag.
pub fn xcor(
    backend: &dyn FftBackend,
    epochs: &[EpochMatrix],
    max_lag: Option<usize>,
) -> Result<ConnectivityNetwork> {
    let first = check_same_layout(epochs)?;
    let n = first.n_channels();
    let max_lag = max_lag.unwrap_or(first.n_samples() - 1);
    let plans = XcorPlans::new(backend, first.n_samples());
    let mut sums = XcorSums::new(n_pairs(n));
    for e in epochs {
        let (trial, _) = xcor_trial(&plans, e, max_lag)?;
        sums.add(&trial);
    }
    Ok(sums.network(n, epochs.len(), FrequencyBand::default()))
}
