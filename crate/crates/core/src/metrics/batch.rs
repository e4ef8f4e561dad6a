//! One-shot computation over a fixed set of trials.
//!
//! Only the sums the requested metric needs are formed, pair by pair, so the
//! full pairs × bins accumulator never has to exist in memory. Trials are
//! visited in the given order, which makes the result bit-identical to
//! accumulating the same trials one by one into a [`SpectrumSet`].
//!
//! [`SpectrumSet`]: crate::spectral::SpectrumSet

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::{assemble_bins, check_spectral, check_trials, finalize_bin, spectral_network, SpectralBins};
use crate::error::{Error, Result};
use crate::fft::FftBackend;
use crate::par;
use crate::spectral::{add_trial_term, Families, PairBinSums, SpectralConfig, SpectralEngine, Spectra};
use crate::types::{ConnectivityNetwork, EpochMatrix, FrequencyBand, MetricId};

/// Per-bin values of a spectral metric over every stored bin of `trials`.
pub fn batch_spectral_bins(trials: &[Spectra], metric: MetricId) -> Result<SpectralBins> {
    check_spectral(metric)?;
    let first = trials.first().ok_or(Error::NoData)?;
    check_trials(metric, trials.len())?;
    let (n, first_bin, nb) = (first.n_channels(), first.first_bin(), first.n_bins());
    for t in trials {
        if t.n_channels() != n || t.first_bin() != first_bin || t.n_bins() != nb {
            return Err(Error::Dimension {
                what: "trial spectra",
                expected: n * nb,
                got: t.n_channels() * t.n_bins(),
            });
        }
    }
    let families = Families::for_metric(metric);
    let psd: Vec<Vec<f64>> = if families.needs_psd() {
        par::map_range(n, |c| {
            let mut sum = vec![0.0; nb];
            let mut tmp = vec![0.0; nb];
            for t in trials {
                t.psd_into(c, &mut tmp);
                for (s, p) in sum.iter_mut().zip(&tmp) {
                    *s += 1.0 * p;
                }
            }
            sum
        })
    } else {
        vec![vec![0.0; nb]; n]
    };
    let k = trials.len();
    let rows = par::map_range(n, |i| {
        let mut csd = vec![Complex64::new(0.0, 0.0); nb];
        let mut sums = vec![PairBinSums::default(); nb];
        let mut out = Vec::with_capacity((n - 1 - i) * nb);
        for j in i + 1..n {
            sums.iter_mut().for_each(|s| *s = PairBinSums::default());
            for t in trials {
                t.pair_csd_into(i, j, &mut csd);
                for (acc, &c) in sums.iter_mut().zip(&csd) {
                    add_trial_term(acc, c, families, 1.0);
                }
            }
            for b in 0..nb {
                out.push(finalize_bin(metric, &sums[b], psd[i][b], psd[j][b], k));
            }
        }
        out
    });
    Ok(assemble_bins(metric, n, k, first_bin, nb, rows))
}

/// Computes `metric` over all `epochs` from scratch.
///
/// `engine` performs (and counts) the transforms for spectral metrics; its
/// stored bin range must cover `band`. XCOR uses `max_lag` (default: trial
/// length minus one).
pub fn batch_network(
    engine: &SpectralEngine,
    backend: &dyn FftBackend,
    epochs: &[EpochMatrix],
    metric: MetricId,
    band: &FrequencyBand,
    max_lag: Option<usize>,
) -> Result<ConnectivityNetwork> {
    if epochs.is_empty() {
        return Err(Error::NoData);
    }
    let mut net = match metric {
        MetricId::Cor => super::cor(epochs)?,
        MetricId::Xcor => super::xcor(backend, epochs, max_lag)?,
        _ => {
            check_trials(metric, epochs.len())?;
            let trials = epochs
                .iter()
                .map(|e| engine.trial_spectra(e))
                .collect::<Result<Vec<_>>>()?;
            let bins = batch_spectral_bins(&trials, metric)?;
            spectral_network(&bins, band)?
        }
    };
    net.band = *band;
    Ok(net)
}

/// Convenience wrapper that builds a throwaway [`SpectralEngine`].
pub fn batch_network_with(
    backend: &dyn FftBackend,
    config: SpectralConfig,
    epochs: &[EpochMatrix],
    metric: MetricId,
    band: &FrequencyBand,
) -> Result<ConnectivityNetwork> {
    let engine = SpectralEngine::new(backend, config)?;
    batch_network(&engine, backend, epochs, metric, band, None)
}
