//! The ten connectivity metrics.
//!
//! Frequency-domain metrics are finalized per bin from trial sums (see
//! [`crate::spectral`]) and then averaged over the requested band:
//!
//! | metric   | per-bin value                                  |
//! |----------|------------------------------------------------|
//! | COHY     | `S_xy / sqrt(S_xx * S_yy)` (complex)           |
//! | COH      | `abs(COHY)`                                    |
//! | IMAGCOHY | `Im(COHY)`                                     |
//! | PLV      | `abs(sum CSD / abs(CSD)) / K`                  |
//! | PLI      | `abs(sum sign(Im CSD)) / K`                    |
//! | USPLI    | `(K * PLI^2 - 1) / (K - 1)`                    |
//! | WPLI     | `abs(sum Im CSD) / sum abs(Im CSD)`            |
//! | DSWPLI   | `WPLI^2`                                       |
//!
//! `S` are CSD/PSD sums over the `K` trials; the `1/K` factors of the trial
//! means cancel in COHY. Zero-power bins give 0 (USPLI included), as does
//! WPLI when every imaginary part is zero. `sign(0)` is 0.
//!
//! COR and XCOR work on the epochs directly, see [`time`].

mod batch;
mod cache;
pub mod time;

use alloc::format;
use alloc::vec::Vec;

use num_complex::Complex64;

pub use batch::{batch_network, batch_network_with, batch_spectral_bins};
pub use cache::{CacheConfig, TrialCache};
pub use time::{cor, cor_trial, flat_channels, xcor, xcor_trial, XcorPlans};

use crate::error::{param, Error, Result};
use crate::network::{band_average, PerBinWeights};
use crate::spectral::{Families, PairBinSums, SpectrumSet};
use crate::types::{n_pairs, pair_index, pairs, ConnectivityNetwork, Edge, FrequencyBand, MetricId};
use crate::par;

/// Value of a spectral metric at one bin. Real-valued metrics are returned
/// in the real part.
#[inline]
pub fn finalize_bin(
    metric: MetricId,
    sums: &PairBinSums,
    psd_i: f64,
    psd_j: f64,
    n_trials: usize,
) -> Complex64 {
    let k = n_trials as f64;
    let cohy = || {
        let denom = libm::sqrt(psd_i * psd_j);
        if denom > 0.0 {
            sums.csd / denom
        } else {
            Complex64::new(0.0, 0.0)
        }
    };
    let wpli = || {
        if sums.abs_im > 0.0 {
            sums.im.abs() / sums.abs_im
        } else {
            0.0
        }
    };
    let real = match metric {
        MetricId::Cohy => return cohy(),
        MetricId::Coh => cohy().norm(),
        MetricId::ImagCohy => cohy().im,
        MetricId::Plv => sums.plv.norm() / k,
        MetricId::Pli => sums.pli.abs() / k,
        // A pair without power carries no phase information at all.
        MetricId::UsPli if psd_i * psd_j == 0.0 => 0.0,
        MetricId::UsPli => {
            let pli = sums.pli.abs() / k;
            (k * pli * pli - 1.0) / (k - 1.0)
        }
        MetricId::Wpli => wpli(),
        MetricId::DsWpli => {
            let w = wpli();
            w * w
        }
        MetricId::Cor | MetricId::Xcor => 0.0,
    };
    Complex64::new(real, 0.0)
}

/// Per-bin values of a spectral metric for every pair, with the imaginary
/// part kept for COHY.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralBins {
    pub metric: MetricId,
    pub n_channels: usize,
    pub n_trials: usize,
    pub re: PerBinWeights,
    pub im: Option<PerBinWeights>,
}

pub(crate) fn check_trials(metric: MetricId, n_trials: usize) -> Result<()> {
    let needed = metric.min_trials();
    if n_trials < needed {
        return Err(Error::DegenerateTrialCount {
            metric,
            needed,
            available: n_trials,
        });
    }
    Ok(())
}

pub(crate) fn check_spectral(metric: MetricId) -> Result<()> {
    if !metric.is_spectral() {
        return Err(param(format!("{metric} is not a spectral metric")));
    }
    Ok(())
}

fn families_cover(have: Families, need: Families) -> bool {
    (!need.cross || have.cross)
        && (!need.power || have.power || have.cross)
        && (!need.phase || have.phase)
        && (!need.lag_sign || have.lag_sign)
        && (!need.lag_weight || have.lag_weight)
}

/// Collects per-pair rows (row `i` holds pairs `(i, j > i)`) into
/// [`SpectralBins`].
pub(crate) fn assemble_bins(
    metric: MetricId,
    n_channels: usize,
    n_trials: usize,
    first_bin: usize,
    n_bins: usize,
    rows: Vec<Vec<Complex64>>,
) -> SpectralBins {
    let n_edges = n_pairs(n_channels);
    let mut re = PerBinWeights::zeros(n_edges, first_bin, n_bins);
    let mut im = (metric == MetricId::Cohy).then(|| PerBinWeights::zeros(n_edges, first_bin, n_bins));
    for (dst, v) in rows.iter().flatten().enumerate() {
        re.values[dst] = v.re;
        if let Some(im) = im.as_mut() {
            im.values[dst] = v.im;
        }
    }
    SpectralBins {
        metric,
        n_channels,
        n_trials,
        re,
        im,
    }
}

/// Finalizes `metric` from running sums over the bins of `band`.
pub fn finalize_set(set: &SpectrumSet, metric: MetricId, band: &FrequencyBand) -> Result<SpectralBins> {
    check_spectral(metric)?;
    let n_trials = set.n_trials_accumulated();
    if n_trials == 0 {
        return Err(Error::NoData);
    }
    check_trials(metric, n_trials)?;
    if !families_cover(set.families(), Families::for_metric(metric)) {
        return Err(param(format!("sums for {metric} were not accumulated")));
    }
    let last = set.first_bin() + set.n_bins() - 1;
    if band.lo_bin < set.first_bin() || band.hi_bin > last || band.lo_bin > band.hi_bin {
        return Err(param(format!(
            "band {}..={} outside stored bins {}..={}",
            band.lo_bin,
            band.hi_bin,
            set.first_bin(),
            last
        )));
    }
    let n = set.n_channels();
    let lo = band.lo_bin - set.first_bin();
    let nb = band.n_bins();
    let rows = par::map_range(n, |i| {
        let psd_i = &set.psd_row(i)[lo..lo + nb];
        let mut out = Vec::with_capacity((n - 1 - i) * nb);
        for j in i + 1..n {
            let psd_j = &set.psd_row(j)[lo..lo + nb];
            let p = pair_index(n, i, j);
            for b in 0..nb {
                out.push(finalize_bin(metric, &set.pair_bin(p, lo + b), psd_i[b], psd_j[b], n_trials));
            }
        }
        out
    });
    Ok(assemble_bins(metric, n, n_trials, band.lo_bin, nb, rows))
}

/// Band-averages per-bin values into a network with nodes `0..n_channels`.
pub fn spectral_network(bins: &SpectralBins, band: &FrequencyBand) -> Result<ConnectivityNetwork> {
    let re = band_average(&bins.re, band)?;
    let im = bins.im.as_ref().map(|im| band_average(im, band)).transpose()?;
    let mut net = ConnectivityNetwork::empty(bins.metric, *band, bins.n_channels, bins.n_trials);
    net.edges = pairs(bins.n_channels)
        .enumerate()
        .map(|(p, (i, j))| match &im {
            Some(im) => Edge {
                i: i as u32,
                j: j as u32,
                weight: Complex64::new(re[p], im[p]).norm(),
                weight_im: Some(im[p]),
                lag: None,
            },
            None => Edge::real(i as u32, j as u32, re[p]),
        })
        .collect();
    Ok(net)
}

/// Finalizes `metric` from running sums and band-averages it.
pub fn finalize_network(
    set: &SpectrumSet,
    metric: MetricId,
    band: &FrequencyBand,
) -> Result<ConnectivityNetwork> {
    spectral_network(&finalize_set(set, metric, band)?, band)
}

/// Coherency network; edge weight is the magnitude of the band-averaged
/// complex coherency and `weight_im` its imaginary part.
pub fn cohy(set: &SpectrumSet, band: &FrequencyBand) -> Result<ConnectivityNetwork> {
    finalize_network(set, MetricId::Cohy, band)
}

pub fn coh(set: &SpectrumSet, band: &FrequencyBand) -> Result<ConnectivityNetwork> {
    finalize_network(set, MetricId::Coh, band)
}

pub fn imagcohy(set: &SpectrumSet, band: &FrequencyBand) -> Result<ConnectivityNetwork> {
    finalize_network(set, MetricId::ImagCohy, band)
}

pub fn plv(set: &SpectrumSet, band: &FrequencyBand) -> Result<ConnectivityNetwork> {
    finalize_network(set, MetricId::Plv, band)
}

pub fn pli(set: &SpectrumSet, band: &FrequencyBand) -> Result<ConnectivityNetwork> {
    finalize_network(set, MetricId::Pli, band)
}

/// Fails with [`Error::DegenerateTrialCount`] for a single trial.
pub fn uspli(set: &SpectrumSet, band: &FrequencyBand) -> Result<ConnectivityNetwork> {
    finalize_network(set, MetricId::UsPli, band)
}

pub fn wpli(set: &SpectrumSet, band: &FrequencyBand) -> Result<ConnectivityNetwork> {
    finalize_network(set, MetricId::Wpli, band)
}

pub fn dswpli(set: &SpectrumSet, band: &FrequencyBand) -> Result<ConnectivityNetwork> {
    finalize_network(set, MetricId::DsWpli, band)
}
