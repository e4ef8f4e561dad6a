//! Domain types shared across the engine.

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::error::{param, Error, Result};

/// One trial: a channels × samples real matrix, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochMatrix {
    data: Vec<f64>,
    n_channels: usize,
    n_samples: usize,
    /// Sampling rate in Hz.
    pub sfreq: f64,
    /// Epoch start relative to the trigger, in seconds.
    pub t0_offset: f64,
    pub trial_index: u64,
}

impl EpochMatrix {
    /// Builds an epoch from row-major `data` (`n_channels` rows).
    pub fn new(data: Vec<f64>, n_channels: usize, sfreq: f64) -> Result<Self> {
        if n_channels == 0 {
            return Err(param("epoch needs at least one channel"));
        }
        if data.len() % n_channels != 0 {
            return Err(Error::Dimension {
                what: "epoch data length",
                expected: n_channels * (data.len() / n_channels + 1),
                got: data.len(),
            });
        }
        let n_samples = data.len() / n_channels;
        if n_samples < 2 {
            return Err(param(format!("epoch needs at least 2 samples, got {n_samples}")));
        }
        if !(sfreq > 0.0 && sfreq.is_finite()) {
            return Err(param(format!("sampling rate must be positive, got {sfreq}")));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(param("epoch contains non-finite values"));
        }
        Ok(Self {
            data,
            n_channels,
            n_samples,
            sfreq,
            t0_offset: 0.0,
            trial_index: 0,
        })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R], sfreq: f64) -> Result<Self> {
        let n_samples = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * n_samples);
        for row in rows {
            let row = row.as_ref();
            if row.len() != n_samples {
                return Err(Error::Dimension {
                    what: "epoch row length",
                    expected: n_samples,
                    got: row.len(),
                });
            }
            data.extend_from_slice(row);
        }
        Self::new(data, rows.len(), sfreq)
    }

    pub fn with_offset(mut self, t0_offset: f64) -> Self {
        self.t0_offset = t0_offset;
        self
    }

    pub fn with_trial_index(mut self, trial_index: u64) -> Self {
        self.trial_index = trial_index;
        self
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        &mut self.data[c * self.n_samples..(c + 1) * self.n_samples]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.n_samples)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same shape and sampling rate.
    pub fn same_layout(&self, other: &EpochMatrix) -> bool {
        self.n_channels == other.n_channels && self.n_samples == other.n_samples
    }
}

/// An inclusive range of FFT bins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrequencyBand {
    pub lo_bin: usize,
    pub hi_bin: usize,
    /// Hz per bin (`sfreq / nfft`).
    pub bin_hz: f64,
}

impl FrequencyBand {
    pub fn new(lo_bin: usize, hi_bin: usize, bin_hz: f64) -> Result<Self> {
        if lo_bin > hi_bin {
            return Err(param(format!("band lo_bin {lo_bin} > hi_bin {hi_bin}")));
        }
        Ok(Self {
            lo_bin,
            hi_bin,
            bin_hz,
        })
    }

    /// Band between two frequencies for a given resolution, rounding to the
    /// nearest bins.
    pub fn from_hz(lo_hz: f64, hi_hz: f64, sfreq: f64, nfft: usize) -> Result<Self> {
        let bin_hz = sfreq / nfft as f64;
        let lo = libm::round(lo_hz / bin_hz);
        let hi = libm::round(hi_hz / bin_hz);
        if lo < 0.0 || hi < lo {
            return Err(param(format!("invalid band {lo_hz}..{hi_hz} Hz")));
        }
        Self::new(lo as usize, hi as usize, bin_hz)
    }

    pub fn n_bins(&self) -> usize {
        self.hi_bin - self.lo_bin + 1
    }

    /// Checks `hi_bin < n_bins_total` (one-sided spectrum length).
    pub fn check(&self, n_bins_total: usize) -> Result<()> {
        if self.hi_bin >= n_bins_total {
            return Err(param(format!(
                "band {}..={} outside spectrum of {} bins",
                self.lo_bin, self.hi_bin, n_bins_total
            )));
        }
        Ok(())
    }

    pub fn lo_hz(&self) -> f64 {
        self.lo_bin as f64 * self.bin_hz
    }

    pub fn hi_hz(&self) -> f64 {
        self.hi_bin as f64 * self.bin_hz
    }
}

impl Default for FrequencyBand {
    fn default() -> Self {
        Self {
            lo_bin: 0,
            hi_bin: 0,
            bin_hz: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum MetricId {
    Cor,
    Xcor,
    Cohy,
    Coh,
    ImagCohy,
    Plv,
    Pli,
    UsPli,
    Wpli,
    DsWpli,
}

impl MetricId {
    pub const ALL: [MetricId; 10] = [
        MetricId::Cor,
        MetricId::Xcor,
        MetricId::Cohy,
        MetricId::Coh,
        MetricId::ImagCohy,
        MetricId::Plv,
        MetricId::Pli,
        MetricId::UsPli,
        MetricId::Wpli,
        MetricId::DsWpli,
    ];

    pub const SPECTRAL: [MetricId; 8] = [
        MetricId::Cohy,
        MetricId::Coh,
        MetricId::ImagCohy,
        MetricId::Plv,
        MetricId::Pli,
        MetricId::UsPli,
        MetricId::Wpli,
        MetricId::DsWpli,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricId::Cor => "COR",
            MetricId::Xcor => "XCOR",
            MetricId::Cohy => "COHY",
            MetricId::Coh => "COH",
            MetricId::ImagCohy => "IMAGCOHY",
            MetricId::Plv => "PLV",
            MetricId::Pli => "PLI",
            MetricId::UsPli => "USPLI",
            MetricId::Wpli => "WPLI",
            MetricId::DsWpli => "DSWPLI",
        }
    }

    /// Computed from the accumulated cross-spectra rather than the epochs.
    pub fn is_spectral(self) -> bool {
        !matches!(self, MetricId::Cor | MetricId::Xcor)
    }

    /// Minimum trial count for a defined result.
    pub fn min_trials(self) -> usize {
        match self {
            MetricId::UsPli => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for MetricId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MetricId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MetricId::ALL
            .iter()
            .copied()
            .find(|m| m.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| param(format!("unknown metric '{s}'")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Node {
    pub id: u32,
    /// Position in meters; all zeros when no geometry is known.
    pub pos: [f64; 3],
}

impl Node {
    pub fn unplaced(id: u32) -> Self {
        Self { id, pos: [0.0; 3] }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub i: u32,
    pub j: u32,
    /// Scalar strength used for display and thresholding. For COHY this is
    /// the magnitude, for XCOR the absolute peak correlation.
    pub weight: f64,
    /// Imaginary part of a complex-valued weight (COHY).
    pub weight_im: Option<f64>,
    /// Peak lag in samples (XCOR); positive when `j` lags `i`.
    pub lag: Option<i64>,
}

impl Edge {
    pub fn real(i: u32, j: u32, weight: f64) -> Self {
        Self {
            i,
            j,
            weight,
            weight_im: None,
            lag: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConnectivityNetwork {
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
    pub metric: MetricId,
    pub band: FrequencyBand,
    pub n_trials: usize,
    pub normalized: bool,
}

impl ConnectivityNetwork {
    /// Empty network over `n_nodes` unplaced nodes.
    pub fn empty(metric: MetricId, band: FrequencyBand, n_nodes: usize, n_trials: usize) -> Self {
        Self {
            nodes: (0..n_nodes as u32).map(Node::unplaced).collect(),
            edges: Vec::new(),
            metric,
            band,
            n_trials,
            normalized: false,
        }
    }

    pub fn edge(&self, i: u32, j: u32) -> Option<&Edge> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.edges.iter().find(|e| e.i == i && e.j == j)
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.edges.iter().fold(0.0, |m, e| f64::max(m, e.weight.abs()))
    }

    /// Replaces node positions, keeping ids.
    pub fn with_positions(mut self, positions: &[[f64; 3]]) -> Self {
        for (node, pos) in self.nodes.iter_mut().zip(positions) {
            node.pos = *pos;
        }
        self
    }
}

/// Peak of the normalized cross-correlation of one channel pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct XCorEdgeValue {
    pub peak_value: f64,
    /// Lag in samples; positive when the second channel lags the first.
    pub peak_lag: i64,
}

/// Number of unordered channel pairs (`i < j`).
pub fn n_pairs(n_channels: usize) -> usize {
    n_channels * n_channels.saturating_sub(1) / 2
}

/// Linear index of pair `(i, j)`, `i < j`, in row-major upper-triangle order.
pub fn pair_index(n_channels: usize, i: usize, j: usize) -> usize {
    debug_assert!(i < j && j < n_channels);
    i * (2 * n_channels - i - 1) / 2 + (j - i - 1)
}

/// Iterates all pairs `(i, j)` with `i < j` in row-major order.
pub fn pairs(n_channels: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..n_channels).flat_map(move |i| (i + 1..n_channels).map(move |j| (i, j)))
}
