//! Per-trial cache behind the incremental update.
//!
//! Every added trial is transformed once; its contribution is folded into
//! running sums that any metric is finalized from. With storage mode on the
//! per-trial spectra are kept next to sums for every metric family, so a
//! metric switch re-finalizes without a single new transform. With storage
//! mode off only the sums of the current metric are kept; switching to a
//! metric that needs other sums recomputes them from the retained epochs.
//!
//! An optional trial window (`max_trials`) drops the oldest trial when a new
//! one arrives. Evicted contributions are subtracted; the sums are rebuilt
//! from scratch once a full window has been evicted so rounding drift never
//! accumulates.

use alloc::collections::{BTreeSet, VecDeque};
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use super::time::{cor_network, cor_trial, flat_channels, xcor_trial, XcorPlans, XcorSums};
use super::{check_trials, finalize_network};
use crate::error::{param, Error, Result};
use crate::fft::FftBackend;
use crate::spectral::{Families, SpectralConfig, SpectralEngine, Spectra, SpectrumSet};
use crate::types::{n_pairs, ConnectivityNetwork, EpochMatrix, FrequencyBand, MetricId, XCorEdgeValue};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CacheConfig {
    pub spectral: SpectralConfig,
    /// Keep per-trial spectra and sums for every metric family.
    pub storage: bool,
    /// Only the most recent `max_trials` trials contribute.
    pub max_trials: Option<usize>,
    /// XCOR lag range; defaults to the trial length minus one.
    pub xcor_max_lag: Option<usize>,
}

impl CacheConfig {
    pub fn new(spectral: SpectralConfig) -> Self {
        Self {
            spectral,
            storage: true,
            max_trials: None,
            xcor_max_lag: None,
        }
    }

    pub fn with_storage(mut self, storage: bool) -> Self {
        self.storage = storage;
        self
    }

    pub fn with_max_trials(mut self, max_trials: Option<usize>) -> Self {
        self.max_trials = max_trials;
        self
    }
}

struct Entry {
    epoch: EpochMatrix,
    spectra: Option<Spectra>,
    cor: Option<Vec<f64>>,
    xcor: Option<Vec<XCorEdgeValue>>,
}

impl Entry {
    fn memory_bytes(&self) -> usize {
        self.epoch.data().len() * 8
            + self.spectra.as_ref().map_or(0, Spectra::memory_bytes)
            + self.cor.as_ref().map_or(0, |c| c.len() * 8)
            + self.xcor.as_ref().map_or(0, |x| x.len() * core::mem::size_of::<XCorEdgeValue>())
    }
}

/// Running state of one connectivity session.
pub struct TrialCache {
    config: CacheConfig,
    backend: Arc<dyn FftBackend>,
    engine: SpectralEngine,
    xcor_plans: Option<XcorPlans>,
    xcor_transforms: u64,
    entries: VecDeque<Entry>,
    spectral: Option<SpectrumSet>,
    cor_sum: Option<Vec<f64>>,
    xcor_sum: Option<XcorSums>,
    evicted_since_rebuild: usize,
    flat: BTreeSet<usize>,
    positions: Option<Vec<[f64; 3]>>,
}

impl TrialCache {
    pub fn new(backend: Arc<dyn FftBackend>, config: CacheConfig) -> Result<Self> {
        if config.max_trials == Some(0) {
            return Err(param("max_trials must be at least 1"));
        }
        let engine = SpectralEngine::new(backend.as_ref(), config.spectral)?;
        Ok(Self {
            config,
            backend,
            engine,
            xcor_plans: None,
            xcor_transforms: 0,
            entries: VecDeque::new(),
            spectral: None,
            cor_sum: None,
            xcor_sum: None,
            evicted_since_rebuild: 0,
            flat: BTreeSet::new(),
            positions: None,
        })
    }

    pub fn config(&self) -> &CacheConfig {
        &self.config
    }

    pub fn storage(&self) -> bool {
        self.config.storage
    }

    pub fn n_trials(&self) -> usize {
        self.entries.len()
    }

    pub fn n_channels(&self) -> Option<usize> {
        self.entries.front().map(|e| e.epoch.n_channels())
    }

    /// Trial indices currently contributing, oldest first.
    pub fn trial_indices(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.epoch.trial_index).collect()
    }

    /// Transforms run so far: per-channel spectra plus XCOR transforms.
    pub fn fft_calls(&self) -> u64 {
        self.engine.fft_calls() + self.xcor_transforms
    }

    /// Approximate bytes held by cached trials and running sums.
    pub fn memory_bytes(&self) -> usize {
        self.entries.iter().map(Entry::memory_bytes).sum::<usize>()
            + self.spectral.as_ref().map_or(0, SpectrumSet::memory_bytes)
            + self.cor_sum.as_ref().map_or(0, |c| c.len() * 8)
            + self.xcor_sum.as_ref().map_or(0, |x| x.value.len() * 16)
    }

    /// Channels that were constant over at least one added trial.
    pub fn flat_channels(&self) -> Vec<usize> {
        self.flat.iter().copied().collect()
    }

    /// Node positions attached to every finalized network.
    pub fn set_positions(&mut self, positions: Option<Vec<[f64; 3]>>) {
        self.positions = positions;
    }

    /// The running spectral sums, if any are held.
    pub fn spectrum_set(&self) -> Option<&SpectrumSet> {
        self.spectral.as_ref()
    }

    /// Drops every trial and all sums. Counters are kept.
    pub fn reset(&mut self) {
        self.entries.clear();
        self.spectral = None;
        self.cor_sum = None;
        self.xcor_sum = None;
        self.xcor_plans = None;
        self.evicted_since_rebuild = 0;
        self.flat.clear();
    }

    /// Changes the trial window, evicting the oldest trials if needed.
    pub fn set_max_trials(&mut self, max_trials: Option<usize>) -> Result<()> {
        if max_trials == Some(0) {
            return Err(param("max_trials must be at least 1"));
        }
        self.config.max_trials = max_trials;
        self.evict_excess()
    }

    /// Adds one trial: only its own spectra (and time-domain values of the
    /// metrics in use) are computed.
    pub fn add_trial(&mut self, epoch: EpochMatrix) -> Result<()> {
        if let Some(first) = self.entries.front() {
            if !first.epoch.same_layout(&epoch) {
                return Err(Error::Dimension {
                    what: "trial shape",
                    expected: first.epoch.n_channels() * first.epoch.n_samples(),
                    got: epoch.n_channels() * epoch.n_samples(),
                });
            }
        }
        self.flat.extend(flat_channels(&epoch));
        let n = epoch.n_channels();
        if self.config.storage && self.spectral.is_none() {
            self.spectral = Some(SpectrumSet::new(n, &self.config.spectral));
        }
        let mut entry = Entry {
            epoch,
            spectra: None,
            cor: None,
            xcor: None,
        };
        if let Some(set) = self.spectral.as_mut() {
            let spectra = self.engine.trial_spectra(&entry.epoch)?;
            set.accumulate(&spectra)?;
            if self.config.storage {
                entry.spectra = Some(spectra);
            }
        }
        if let Some(sum) = self.cor_sum.as_mut() {
            let values = cor_trial(&entry.epoch);
            add_into(sum, &values, 1.0);
            if self.config.storage {
                entry.cor = Some(values);
            }
        }
        if self.xcor_sum.is_some() {
            let values = self.xcor_values(&entry.epoch)?;
            self.xcor_sum.as_mut().unwrap().add(&values);
            if self.config.storage {
                entry.xcor = Some(values);
            }
        }
        self.entries.push_back(entry);
        self.evict_excess()
    }

    /// Finalizes `metric` over the contributing trials, band-averaged over
    /// `band` for spectral metrics.
    pub fn finalize(&mut self, metric: MetricId, band: &FrequencyBand) -> Result<ConnectivityNetwork> {
        if self.entries.is_empty() {
            return Err(Error::NoData);
        }
        check_trials(metric, self.entries.len())?;
        self.activate(metric)?;
        let n = self.entries[0].epoch.n_channels();
        let k = self.entries.len();
        let mut net = match metric {
            MetricId::Cor => cor_network(n, self.cor_sum.as_ref().unwrap(), k, *band),
            MetricId::Xcor => self.xcor_sum.as_ref().unwrap().network(n, k, *band),
            _ => finalize_network(self.spectral.as_ref().unwrap(), metric, band)?,
        };
        if let Some(pos) = &self.positions {
            net = net.with_positions(pos);
        }
        Ok(net)
    }

    /// Adds `epoch` and finalizes `metric`.
    pub fn update_and_finalize(
        &mut self,
        epoch: EpochMatrix,
        metric: MetricId,
        band: &FrequencyBand,
    ) -> Result<ConnectivityNetwork> {
        self.activate(metric)?;
        self.add_trial(epoch)?;
        self.finalize(metric, band)
    }

    fn xcor_values(&mut self, epoch: &EpochMatrix) -> Result<Vec<XCorEdgeValue>> {
        let n_samples = epoch.n_samples();
        if self.xcor_plans.is_none() {
            self.xcor_plans = Some(XcorPlans::new(self.backend.as_ref(), n_samples));
        }
        let max_lag = self.config.xcor_max_lag.unwrap_or(n_samples - 1);
        let (values, transforms) = xcor_trial(self.xcor_plans.as_ref().unwrap(), epoch, max_lag)?;
        self.xcor_transforms += transforms;
        Ok(values)
    }

    /// Makes sure the sums `metric` needs exist and cover every trial.
    fn activate(&mut self, metric: MetricId) -> Result<()> {
        let storage = self.config.storage;
        if !storage {
            // Only the current metric's sums are kept.
            if metric != MetricId::Cor {
                self.cor_sum = None;
            }
            if metric != MetricId::Xcor {
                self.xcor_sum = None;
            }
            if !metric.is_spectral() {
                self.spectral = None;
            } else if let Some(set) = &self.spectral {
                if set.families() != Families::for_metric(metric) {
                    self.spectral = None;
                }
            }
        }
        let Some(n) = self.n_channels() else {
            return Ok(());
        };
        match metric {
            MetricId::Cor if self.cor_sum.is_none() => self.rebuild_cor(n),
            MetricId::Xcor if self.xcor_sum.is_none() => self.rebuild_xcor(n)?,
            m if m.is_spectral() && self.spectral.is_none() => {
                let families = if storage {
                    Families::ALL
                } else {
                    Families::for_metric(m)
                };
                self.rebuild_spectral(SpectrumSet::with_families(n, &self.config.spectral, families))?;
            }
            _ => {}
        }
        Ok(())
    }

    fn rebuild_spectral(&mut self, mut set: SpectrumSet) -> Result<()> {
        set.clear();
        for entry in self.entries.iter_mut() {
            match &entry.spectra {
                Some(s) => set.accumulate(s)?,
                None => {
                    let s = self.engine.trial_spectra(&entry.epoch)?;
                    set.accumulate(&s)?;
                    if self.config.storage {
                        entry.spectra = Some(s);
                    }
                }
            }
        }
        self.spectral = Some(set);
        Ok(())
    }

    fn rebuild_cor(&mut self, n: usize) {
        let mut sum = vec![0.0; n_pairs(n)];
        for entry in self.entries.iter_mut() {
            match &entry.cor {
                Some(v) => add_into(&mut sum, v, 1.0),
                None => {
                    let v = cor_trial(&entry.epoch);
                    add_into(&mut sum, &v, 1.0);
                    if self.config.storage {
                        entry.cor = Some(v);
                    }
                }
            }
        }
        self.cor_sum = Some(sum);
    }

    fn rebuild_xcor(&mut self, n: usize) -> Result<()> {
        let mut sum = XcorSums::new(n_pairs(n));
        for idx in 0..self.entries.len() {
            if let Some(v) = &self.entries[idx].xcor {
                sum.add(v);
                continue;
            }
            let epoch = self.entries[idx].epoch.clone();
            let v = self.xcor_values(&epoch)?;
            sum.add(&v);
            if self.config.storage {
                self.entries[idx].xcor = Some(v);
            }
        }
        self.xcor_sum = Some(sum);
        Ok(())
    }

    fn evict_excess(&mut self) -> Result<()> {
        let Some(max) = self.config.max_trials else {
            return Ok(());
        };
        while self.entries.len() > max {
            let old = self.entries.pop_front().unwrap();
            if let Some(set) = self.spectral.as_mut() {
                let spectra = match old.spectra {
                    Some(s) => s,
                    None => self.engine.trial_spectra(&old.epoch)?,
                };
                set.subtract(&spectra)?;
            }
            if let Some(sum) = self.cor_sum.as_mut() {
                let v = old.cor.unwrap_or_else(|| cor_trial(&old.epoch));
                add_into(sum, &v, -1.0);
            }
            if self.xcor_sum.is_some() {
                let v = match old.xcor {
                    Some(v) => v,
                    None => self.xcor_values(&old.epoch)?,
                };
                self.xcor_sum.as_mut().unwrap().remove(&v);
            }
            self.evicted_since_rebuild += 1;
        }
        if self.evicted_since_rebuild >= max && !self.entries.is_empty() {
            self.evicted_since_rebuild = 0;
            let n = self.entries[0].epoch.n_channels();
            if let Some(set) = self.spectral.take() {
                self.rebuild_spectral(set)?;
            }
            if self.cor_sum.is_some() {
                self.rebuild_cor(n);
            }
            if self.xcor_sum.is_some() {
                self.rebuild_xcor(n)?;
            }
        }
        Ok(())
    }
}

fn add_into(sum: &mut [f64], values: &[f64], scale: f64) {
    for (s, v) in sum.iter_mut().zip(values) {
        *s += scale * v;
    }
}
