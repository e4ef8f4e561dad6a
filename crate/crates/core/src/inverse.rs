//! Noise covariance estimation and the Tikhonov minimum-norm inverse.
//!
//! The operator is `M = Gᵀ (G Gᵀ + λ C')⁻¹` with `λ = 1 / snr²` and `C'` the
//! noise covariance rescaled to the trace of `G Gᵀ`, so that `λ` has the
//! same meaning whatever the units of the recording. Sources have a fixed
//! orientation (one leadfield column each).

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{param, Error, Result};
use crate::linalg;
use crate::par;
use crate::preprocess::Block;
use crate::types::EpochMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardModel {
    /// Row-major `n_sensors × n_sources` leadfield.
    gain: Vec<f64>,
    n_sensors: usize,
    n_sources: usize,
    pub positions: Vec<[f64; 3]>,
    pub labels: Option<Vec<u32>>,
}

impl ForwardModel {
    pub fn new(
        gain: Vec<f64>,
        n_sensors: usize,
        n_sources: usize,
        positions: Vec<[f64; 3]>,
        labels: Option<Vec<u32>>,
    ) -> Result<Self> {
        if n_sensors == 0 || n_sources == 0 {
            return Err(param("forward model needs at least one sensor and one source"));
        }
        if gain.len() != n_sensors * n_sources {
            return Err(Error::Dimension {
                what: "leadfield",
                expected: n_sensors * n_sources,
                got: gain.len(),
            });
        }
        if positions.len() != n_sources {
            return Err(Error::Dimension {
                what: "source positions",
                expected: n_sources,
                got: positions.len(),
            });
        }
        if labels.as_ref().is_some_and(|l| l.len() != n_sources) {
            return Err(param("one label per source required"));
        }
        if gain.iter().any(|v| !v.is_finite()) {
            return Err(param("leadfield contains non-finite values"));
        }
        Ok(Self {
            gain,
            n_sensors,
            n_sources,
            positions,
            labels,
        })
    }

    pub fn gain(&self) -> &[f64] {
        &self.gain
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }
}

/// Averages leadfield columns (and positions) that share a label.
///
/// A crude stand-in for proper region clustering; the result has one source
/// per distinct label, in ascending label order, labelled accordingly.
pub fn cluster_forward(fwd: &ForwardModel) -> Result<ForwardModel> {
    let labels = fwd
        .labels
        .as_ref()
        .ok_or_else(|| param("forward model has no labels to cluster by"))?;
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (s, &l) in labels.iter().enumerate() {
        groups.entry(l).or_default().push(s);
    }
    let n_out = groups.len();
    let mut gain = vec![0.0; fwd.n_sensors * n_out];
    let mut positions = Vec::with_capacity(n_out);
    for (g, members) in groups.values().enumerate() {
        let k = members.len() as f64;
        for r in 0..fwd.n_sensors {
            gain[r * n_out + g] = members.iter().map(|&s| fwd.gain[r * fwd.n_sources + s]).sum::<f64>() / k;
        }
        let mut p = [0.0; 3];
        for &s in members {
            for d in 0..3 {
                p[d] += fwd.positions[s][d] / k;
            }
        }
        positions.push(p);
    }
    ForwardModel::new(gain, fwd.n_sensors, n_out, positions, Some(groups.keys().copied().collect()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseCovariance {
    /// Row-major symmetric `n × n` matrix.
    data: Vec<f64>,
    n: usize,
    pub n_samples_used: usize,
}

impl NoiseCovariance {
    pub fn new(data: Vec<f64>, n: usize, n_samples_used: usize) -> Result<Self> {
        if data.len() != n * n {
            return Err(Error::Dimension {
                what: "covariance",
                expected: n * n,
                got: data.len(),
            });
        }
        Ok(Self {
            data,
            n,
            n_samples_used,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0.0; n * n];
        (0..n).for_each(|i| data[i * n + i] = 1.0);
        Self {
            data,
            n,
            n_samples_used: 0,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }
}

/// Sample covariance (normalized by `N - 1`) of the row-mean-removed rows.
pub fn covariance_of(rows: &[Vec<f64>]) -> NoiseCovariance {
    let n = rows.len();
    let len = rows.first().map_or(0, Vec::len);
    let centred: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mean = r.iter().sum::<f64>() / len.max(1) as f64;
            r.iter().map(|v| v - mean).collect()
        })
        .collect();
    let denom = len.saturating_sub(1).max(1) as f64;
    let upper = par::map_range(n, |i| {
        (i..n)
            .map(|j| centred[i].iter().zip(&centred[j]).map(|(a, b)| a * b).sum::<f64>() / denom)
            .collect::<Vec<f64>>()
    });
    let mut data = vec![0.0; n * n];
    for (i, row) in upper.iter().enumerate() {
        for (k, v) in row.iter().enumerate() {
            data[i * n + i + k] = *v;
            data[(i + k) * n + i] = *v;
        }
    }
    NoiseCovariance {
        data,
        n,
        n_samples_used: len,
    }
}

/// Collects samples of selected channels and emits a covariance estimate
/// every `target` samples.
#[derive(Debug, Clone)]
pub struct CovarianceEstimator {
    picks: Vec<usize>,
    target: usize,
    buffer: Vec<Vec<f64>>,
}

impl CovarianceEstimator {
    pub fn new(picks: Vec<usize>, target: usize) -> Result<Self> {
        if picks.is_empty() || target < 2 {
            return Err(param("covariance needs channels and a target of at least 2 samples"));
        }
        Ok(Self {
            buffer: vec![Vec::with_capacity(target); picks.len()],
            picks,
            target,
        })
    }

    /// True when fewer samples than channels go into each estimate.
    pub fn underdetermined(&self) -> bool {
        self.target < self.picks.len()
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn buffered(&self) -> usize {
        self.buffer[0].len()
    }

    /// Adds a block; returns the estimates completed by it, each paired with
    /// the absolute sample index one past its last sample.
    pub fn push(&mut self, block: &Block) -> Result<Vec<(NoiseCovariance, u64)>> {
        if let Some(&bad) = self.picks.iter().find(|&&c| c >= block.n_channels()) {
            return Err(Error::Stream(format!("covariance channel {bad} missing from block")));
        }
        let mut out = Vec::new();
        let mut pos = 0;
        while pos < block.n_samples() {
            let take = (self.target - self.buffered()).min(block.n_samples() - pos);
            for (buf, &c) in self.buffer.iter_mut().zip(&self.picks) {
                buf.extend_from_slice(&block.channel(c)[pos..pos + take]);
            }
            pos += take;
            if self.buffered() == self.target {
                out.push((covariance_of(&self.buffer), block.first_sample + pos as u64));
                self.buffer.iter_mut().for_each(Vec::clear);
            }
        }
        Ok(out)
    }
}

/// Covariance estimates over a sequence of blocks.
pub fn estimate_covariance(blocks: &[Block], picks: Vec<usize>, target: usize) -> Result<Vec<NoiseCovariance>> {
    let mut est = CovarianceEstimator::new(picks, target)?;
    let mut out = Vec::new();
    for b in blocks {
        out.extend(est.push(b)?.into_iter().map(|(c, _)| c));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct InverseOperator {
    /// Row-major `n_sources × n_sensors`.
    m: Vec<f64>,
    n_sources: usize,
    n_sensors: usize,
    pub lambda: f64,
    pub snr_assumed: f64,
    pub positions: Vec<[f64; 3]>,
}

impl InverseOperator {
    pub fn from_matrix(m: Vec<f64>, n_sources: usize, n_sensors: usize, positions: Vec<[f64; 3]>) -> Result<Self> {
        if m.len() != n_sources * n_sensors || positions.len() != n_sources {
            return Err(Error::Dimension {
                what: "inverse operator",
                expected: n_sources * n_sensors,
                got: m.len(),
            });
        }
        Ok(Self {
            m,
            n_sources,
            n_sensors,
            lambda: 0.0,
            snr_assumed: f64::INFINITY,
            positions,
        })
    }

    pub fn matrix(&self) -> &[f64] {
        &self.m
    }

    pub fn n_sources(&self) -> usize {
        self.n_sources
    }

    pub fn n_sensors(&self) -> usize {
        self.n_sensors
    }

    fn apply_rows(&self, rows: &[&[f64]], n_samples: usize) -> Result<Vec<f64>> {
        if rows.len() != self.n_sensors {
            return Err(param(format!(
                "operator expects {} sensors, got {}",
                self.n_sensors,
                rows.len()
            )));
        }
        let out = par::map_range(self.n_sources, |s| {
            let mut acc = vec![0.0; n_samples];
            for (k, row) in rows.iter().enumerate() {
                let w = self.m[s * self.n_sensors + k];
                if w != 0.0 {
                    acc.iter_mut().zip(row.iter()).for_each(|(a, x)| *a += w * x);
                }
            }
            acc
        });
        Ok(out.concat())
    }
}

/// Regularization parameter for an assumed signal-to-noise ratio.
pub fn lambda_from_snr(snr: f64) -> f64 {
    1.0 / (snr * snr)
}

pub fn build_inverse(fwd: &ForwardModel, cov: &NoiseCovariance, snr: f64) -> Result<InverseOperator> {
    if !(snr > 0.0 && snr.is_finite()) {
        return Err(param(format!("snr must be positive, got {snr}")));
    }
    let n = fwd.n_sensors;
    let p = fwd.n_sources;
    if cov.n != n {
        return Err(Error::Dimension {
            what: "noise covariance",
            expected: n,
            got: cov.n,
        });
    }
    let g = &fwd.gain;
    let rows = par::map_range(n, |i| {
        (0..n)
            .map(|j| (0..p).map(|k| g[i * p + k] * g[j * p + k]).sum::<f64>())
            .collect::<Vec<f64>>()
    });
    let mut a = rows.concat();
    let gg_trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let c_trace = cov.trace();
    let lambda = lambda_from_snr(snr);
    let scale = if c_trace > 0.0 { lambda * gg_trace / c_trace } else { 0.0 };
    for (x, c) in a.iter_mut().zip(&cov.data) {
        *x += scale * c;
    }
    linalg::cholesky(&mut a, n)?;
    let mut x = g.clone();
    linalg::cholesky_solve(&a, n, &mut x, p);
    let mut m = vec![0.0; p * n];
    for i in 0..n {
        for k in 0..p {
            m[k * n + i] = x[i * p + k];
        }
    }
    Ok(InverseOperator {
        m,
        n_sources: p,
        n_sensors: n,
        lambda,
        snr_assumed: snr,
        positions: fwd.positions.clone(),
    })
}

/// Maps a sensor-space epoch to source space (`M · data`).
pub fn apply_inverse(op: &InverseOperator, epoch: &EpochMatrix) -> Result<EpochMatrix> {
    let rows: Vec<&[f64]> = epoch.rows().collect();
    let data = op.apply_rows(&rows, epoch.n_samples())?;
    Ok(EpochMatrix::new(data, op.n_sources, epoch.sfreq)?
        .with_offset(epoch.t0_offset)
        .with_trial_index(epoch.trial_index))
}

/// Maps the `picks` channels of a raw block to source space.
pub fn apply_inverse_block(op: &InverseOperator, block: &Block, picks: &[usize]) -> Result<Block> {
    if let Some(&bad) = picks.iter().find(|&&c| c >= block.n_channels()) {
        return Err(param(format!("channel {bad} missing from block")));
    }
    let rows: Vec<&[f64]> = picks.iter().map(|&c| block.channel(c)).collect();
    let data = op.apply_rows(&rows, block.n_samples())?;
    Block::new(data, op.n_sources, block.first_sample)
}
