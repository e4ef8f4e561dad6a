//! Per-trial spectra and the running cross-spectral sums every frequency
//! domain metric is finalized from.
//!
//! For a trial with channel spectra `X_c(k)`, the cross-spectral density of
//! the pair `(i, j)` is `X_i(k) * conj(X_j(k))`. [`SpectrumSet`] keeps, per
//! pair `i < j` and per stored bin, the sums over trials of
//!
//! - the CSD itself (coherency family),
//! - the unit phasor `CSD / |CSD|` (phase locking),
//! - `sign(Im CSD)` (phase lag index),
//! - `Im CSD` and `|Im CSD|` (weighted phase lag index),
//!
//! plus the per-channel PSD sums. Only the upper triangle is stored; the
//! lower triangle follows from Hermitian symmetry.

use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use num_complex::Complex64;

use crate::error::{param, Error, Result};
use crate::fft::{self, Direction, FftBackend, FftPlan};
use crate::par;
use crate::types::{n_pairs, pair_index, EpochMatrix, MetricId};

/// How a trial longer than `nfft` samples is turned into a spectrum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SegmentMode {
    /// Exactly `nfft` samples enter the transform: longer trials are
    /// truncated, shorter ones zero-padded.
    #[default]
    Fixed,
    /// The trial CSD is the mean over consecutive non-overlapping `nfft`
    /// segments; a trailing partial segment is dropped.
    Welch,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralConfig {
    pub nfft: usize,
    /// Inclusive range of bins that are computed and stored. `None` keeps
    /// the whole one-sided spectrum.
    pub bins: Option<(usize, usize)>,
    pub mode: SegmentMode,
}

impl SpectralConfig {
    pub fn new(nfft: usize) -> Self {
        Self {
            nfft,
            bins: None,
            mode: SegmentMode::Fixed,
        }
    }

    pub fn with_bins(mut self, lo: usize, hi: usize) -> Self {
        self.bins = Some((lo, hi));
        self
    }

    pub fn with_mode(mut self, mode: SegmentMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.nfft < 2 {
            return Err(param(format!("nfft must be at least 2, got {}", self.nfft)));
        }
        if let Some((lo, hi)) = self.bins {
            if lo > hi || hi >= fft::n_bins(self.nfft) {
                return Err(param(format!(
                    "stored bins {lo}..={hi} outside 0..{}",
                    fft::n_bins(self.nfft)
                )));
            }
        }
        Ok(())
    }

    /// `(first_bin, n_bins)` of the stored range.
    pub fn stored_range(&self) -> (usize, usize) {
        match self.bins {
            Some((lo, hi)) => (lo, hi - lo + 1),
            None => (0, fft::n_bins(self.nfft)),
        }
    }

    fn n_segments(&self, n_samples: usize) -> usize {
        match self.mode {
            SegmentMode::Fixed => 1,
            SegmentMode::Welch => (n_samples / self.nfft).max(1),
        }
    }
}

/// Complex spectra of one trial, restricted to the stored bins.
///
/// Layout is `[segment][channel][bin]`; fixed-resolution spectra have a
/// single segment.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectra {
    n_channels: usize,
    n_segments: usize,
    first_bin: usize,
    n_bins: usize,
    data: Vec<Complex64>,
}

impl Spectra {
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_segments(&self) -> usize {
        self.n_segments
    }

    pub fn first_bin(&self) -> usize {
        self.first_bin
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn row(&self, segment: usize, channel: usize) -> &[Complex64] {
        let start = (segment * self.n_channels + channel) * self.n_bins;
        &self.data[start..start + self.n_bins]
    }

    pub fn memory_bytes(&self) -> usize {
        self.data.len() * core::mem::size_of::<Complex64>()
    }

    /// Trial CSD of `(i, j)` over the stored bins.
    pub fn pair_csd_into(&self, i: usize, j: usize, out: &mut [Complex64]) {
        if self.n_segments == 1 {
            for ((o, a), b) in out.iter_mut().zip(self.row(0, i)).zip(self.row(0, j)) {
                *o = a * b.conj();
            }
            return;
        }
        out.iter_mut().for_each(|o| *o = Complex64::new(0.0, 0.0));
        for s in 0..self.n_segments {
            for ((o, a), b) in out.iter_mut().zip(self.row(s, i)).zip(self.row(s, j)) {
                *o += a * b.conj();
            }
        }
        let scale = 1.0 / self.n_segments as f64;
        out.iter_mut().for_each(|o| *o *= scale);
    }

    /// Trial PSD of channel `c` over the stored bins.
    pub fn psd_into(&self, c: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for s in 0..self.n_segments {
            for (o, a) in out.iter_mut().zip(self.row(s, c)) {
                *o += a.norm_sqr();
            }
        }
        if self.n_segments > 1 {
            let scale = 1.0 / self.n_segments as f64;
            out.iter_mut().for_each(|o| *o *= scale);
        }
    }
}

/// Computes trial spectra and counts every transform it runs.
pub struct SpectralEngine {
    config: SpectralConfig,
    plan: Arc<dyn FftPlan>,
    calls: AtomicU64,
}

impl SpectralEngine {
    pub fn new(backend: &dyn FftBackend, config: SpectralConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            plan: backend.plan(config.nfft, Direction::Forward),
            config,
            calls: AtomicU64::new(0),
        })
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.config
    }

    /// Total number of forward transforms run so far.
    pub fn fft_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    pub fn trial_spectra(&self, epoch: &EpochMatrix) -> Result<Spectra> {
        let spectra = trial_spectra(self.plan.as_ref(), &self.config, epoch)?;
        self.calls.fetch_add(
            (spectra.n_channels * spectra.n_segments) as u64,
            Ordering::Relaxed,
        );
        Ok(spectra)
    }
}

/// Spectra of every channel of `epoch`; row `c` is the one-sided transform
/// of channel `c`.
pub fn trial_spectra(
    plan: &dyn FftPlan,
    config: &SpectralConfig,
    epoch: &EpochMatrix,
) -> Result<Spectra> {
    config.validate()?;
    let nfft = config.nfft;
    if plan.len() != nfft {
        return Err(Error::Dimension {
            what: "FFT plan length",
            expected: nfft,
            got: plan.len(),
        });
    }
    let (first_bin, n_bins) = config.stored_range();
    let n_channels = epoch.n_channels();
    let n_segments = config.n_segments(epoch.n_samples());
    let rows = par::map_range(n_segments * n_channels, |row| {
        let (s, c) = (row / n_channels, row % n_channels);
        let channel = epoch.channel(c);
        let start = (s * nfft).min(channel.len());
        let mut buf = vec![Complex64::new(0.0, 0.0); nfft];
        fft::load_demeaned(&channel[start..], nfft, &mut buf);
        plan.process(&mut buf);
        buf.truncate(fft::n_bins(nfft));
        fft::clean_real_spectrum(&mut buf, nfft);
        buf[first_bin..first_bin + n_bins].to_vec()
    });
    Ok(Spectra {
        n_channels,
        n_segments,
        first_bin,
        n_bins,
        data: rows.concat(),
    })
}

/// Sums over trials for one pair at one bin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PairBinSums {
    pub csd: Complex64,
    pub plv: Complex64,
    pub pli: f64,
    pub abs_im: f64,
    pub im: f64,
}

/// Which running sums a computation needs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Families {
    pub cross: bool,
    /// PSD sums alone (without the CSD sums).
    pub power: bool,
    pub phase: bool,
    pub lag_sign: bool,
    pub lag_weight: bool,
}

impl Families {
    pub const ALL: Families = Families {
        cross: true,
        power: true,
        phase: true,
        lag_sign: true,
        lag_weight: true,
    };

    pub const NONE: Families = Families {
        cross: false,
        power: false,
        phase: false,
        lag_sign: false,
        lag_weight: false,
    };

    pub fn for_metric(metric: MetricId) -> Families {
        let mut f = Families::NONE;
        match metric {
            MetricId::Cohy | MetricId::Coh | MetricId::ImagCohy => f.cross = true,
            MetricId::Plv => f.phase = true,
            MetricId::Pli => f.lag_sign = true,
            MetricId::UsPli => {
                f.lag_sign = true;
                f.power = true;
            }
            MetricId::Wpli | MetricId::DsWpli => f.lag_weight = true,
            MetricId::Cor | MetricId::Xcor => {}
        }
        f
    }

    pub fn needs_psd(&self) -> bool {
        self.cross || self.power
    }
}

/// Imaginary parts this small relative to the real part are rounding noise
/// from the transform; they are treated as exactly zero so that zero-lag
/// coupling yields exactly zero lag-based metrics.
pub const IMAG_SNAP: f64 = 1e-12;

#[inline]
pub(crate) fn snap_csd(c: Complex64) -> Complex64 {
    if c.im.abs() <= IMAG_SNAP * c.re.abs() {
        Complex64::new(c.re, 0.0)
    } else {
        c
    }
}

#[inline]
fn signum0(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// `c / |c|`, or `None` for a zero CSD.
#[inline]
fn unit_phase(c: Complex64) -> Option<Complex64> {
    let sq = c.norm_sqr();
    // The plain square root is exact enough and far cheaper than `hypot`;
    // the fallback covers squares that left the normal range.
    let mag = if sq >= f64::MIN_POSITIVE && sq < f64::INFINITY { libm::sqrt(sq) } else { c.norm() };
    (mag > 0.0).then(|| c / mag)
}

#[inline]
fn add_cross(acc: &mut Complex64, csd: Complex64, scale: f64) {
    *acc += csd * scale;
}

#[inline]
fn add_phase(acc: &mut Complex64, csd: Complex64, scale: f64) {
    if let Some(u) = unit_phase(csd) {
        *acc += u * scale;
    }
}

#[inline]
fn add_lag_sign(acc: &mut f64, csd: Complex64, scale: f64) {
    *acc += scale * signum0(csd.im);
}

#[inline]
fn add_lag_weight(im: &mut f64, abs_im: &mut f64, csd: Complex64, scale: f64) {
    *im += scale * csd.im;
    *abs_im += scale * csd.im.abs();
}

/// Adds `scale` times one trial's contribution for a single CSD value.
#[inline]
pub(crate) fn add_trial_term(acc: &mut PairBinSums, csd: Complex64, families: Families, scale: f64) {
    let csd = snap_csd(csd);
    if families.cross {
        add_cross(&mut acc.csd, csd, scale);
    }
    if families.phase {
        add_phase(&mut acc.plv, csd, scale);
    }
    if families.lag_sign {
        add_lag_sign(&mut acc.pli, csd, scale);
    }
    if families.lag_weight {
        add_lag_weight(&mut acc.im, &mut acc.abs_im, csd, scale);
    }
}

/// Sum arrays laid out `[pair][bin]`, one per family; families that are not
/// tracked stay empty.
#[derive(Debug, Clone, PartialEq, Default)]
struct FamilySums {
    csd: Vec<Complex64>,
    plv: Vec<Complex64>,
    pli: Vec<f64>,
    im: Vec<f64>,
    abs_im: Vec<f64>,
}

impl FamilySums {
    fn new(len: usize, families: Families) -> Self {
        let sized = |on: bool| if on { vec![0.0; len] } else { Vec::new() };
        let sized_c = |on: bool| if on { vec![Complex64::new(0.0, 0.0); len] } else { Vec::new() };
        Self {
            csd: sized_c(families.cross),
            plv: sized_c(families.phase),
            pli: sized(families.lag_sign),
            im: sized(families.lag_weight),
            abs_im: sized(families.lag_weight),
        }
    }

    fn bytes(&self) -> usize {
        (self.csd.len() + self.plv.len()) * core::mem::size_of::<Complex64>()
            + (self.pli.len() + self.im.len() + self.abs_im.len()) * core::mem::size_of::<f64>()
    }

    fn get(&self, idx: usize) -> PairBinSums {
        PairBinSums {
            csd: self.csd.get(idx).copied().unwrap_or_default(),
            plv: self.plv.get(idx).copied().unwrap_or_default(),
            pli: self.pli.get(idx).copied().unwrap_or_default(),
            abs_im: self.abs_im.get(idx).copied().unwrap_or_default(),
            im: self.im.get(idx).copied().unwrap_or_default(),
        }
    }

    fn clear(&mut self) {
        self.csd.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        self.plv.iter_mut().for_each(|v| *v = Complex64::new(0.0, 0.0));
        for v in [&mut self.pli, &mut self.im, &mut self.abs_im] {
            v.iter_mut().for_each(|x| *x = 0.0);
        }
    }

    fn merge(&mut self, other: &FamilySums) {
        fn add<T: Copy + core::ops::AddAssign>(a: &mut [T], b: &[T]) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += *y);
        }
        add(&mut self.csd, &other.csd);
        add(&mut self.plv, &other.plv);
        add(&mut self.pli, &other.pli);
        add(&mut self.im, &other.im);
        add(&mut self.abs_im, &other.abs_im);
    }

    /// Mutable per-row views; row `i` holds the pairs `(i, j > i)`.
    fn rows(&mut self, lengths: &[usize]) -> Vec<RowSums<'_>> {
        fn split<'a, T>(v: &'a mut [T], lengths: &[usize]) -> Vec<&'a mut [T]> {
            if v.is_empty() {
                lengths.iter().map(|_| <&mut [T]>::default()).collect()
            } else {
                par::split_lengths(v, lengths)
            }
        }
        let csd = split(&mut self.csd, lengths);
        let plv = split(&mut self.plv, lengths);
        let pli = split(&mut self.pli, lengths);
        let im = split(&mut self.im, lengths);
        let abs_im = split(&mut self.abs_im, lengths);
        csd.into_iter()
            .zip(plv)
            .zip(pli)
            .zip(im)
            .zip(abs_im)
            .map(|((((csd, plv), pli), im), abs_im)| RowSums { csd, plv, pli, im, abs_im })
            .collect()
    }
}

struct RowSums<'a> {
    csd: &'a mut [Complex64],
    plv: &'a mut [Complex64],
    pli: &'a mut [f64],
    im: &'a mut [f64],
    abs_im: &'a mut [f64],
}

impl RowSums<'_> {
    /// Adds one pair's trial CSD over all bins at pair offset `at`.
    fn add(&mut self, at: usize, csd: &[Complex64], scale: f64) {
        let r = at..at + csd.len();
        if !self.csd.is_empty() {
            self.csd[r.clone()].iter_mut().zip(csd).for_each(|(a, &c)| add_cross(a, c, scale));
        }
        if !self.plv.is_empty() {
            self.plv[r.clone()].iter_mut().zip(csd).for_each(|(a, &c)| add_phase(a, c, scale));
        }
        if !self.pli.is_empty() {
            self.pli[r.clone()].iter_mut().zip(csd).for_each(|(a, &c)| add_lag_sign(a, c, scale));
        }
        if !self.im.is_empty() {
            let (im, abs_im) = (&mut self.im[r.clone()], &mut self.abs_im[r]);
            for ((a, b), &c) in im.iter_mut().zip(abs_im.iter_mut()).zip(csd) {
                add_lag_weight(a, b, c, scale);
            }
        }
    }
}

/// Running sums over trials for all channel pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectrumSet {
    n_channels: usize,
    nfft: usize,
    first_bin: usize,
    n_bins: usize,
    families: Families,
    sums: FamilySums,
    psd_sum: Vec<f64>,
    n_trials: usize,
}

impl SpectrumSet {
    pub fn new(n_channels: usize, config: &SpectralConfig) -> Self {
        Self::with_families(n_channels, config, Families::ALL)
    }

    pub fn with_families(n_channels: usize, config: &SpectralConfig, families: Families) -> Self {
        let (first_bin, n_bins) = config.stored_range();
        Self {
            n_channels,
            nfft: config.nfft,
            first_bin,
            n_bins,
            families,
            sums: FamilySums::new(n_pairs(n_channels) * n_bins, families),
            psd_sum: vec![0.0; n_channels * n_bins],
            n_trials: 0,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn nfft(&self) -> usize {
        self.nfft
    }

    pub fn first_bin(&self) -> usize {
        self.first_bin
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn families(&self) -> Families {
        self.families
    }

    pub fn n_trials_accumulated(&self) -> usize {
        self.n_trials
    }

    pub fn memory_bytes(&self) -> usize {
        self.sums.bytes() + self.psd_sum.len() * core::mem::size_of::<f64>()
    }

    fn local_bin(&self, k: usize) -> usize {
        assert!(
            k >= self.first_bin && k < self.first_bin + self.n_bins,
            "bin {k} not stored"
        );
        k - self.first_bin
    }

    /// Sums for pair `i < j` over the stored bins; untracked families
    /// read as zero.
    pub fn pair_sums(&self, i: usize, j: usize) -> Vec<PairBinSums> {
        let p = pair_index(self.n_channels, i, j);
        (0..self.n_bins).map(|b| self.pair_bin(p, b)).collect()
    }

    /// Sums of pair index `p` (see [`pair_index`]) at stored bin offset `b`.
    #[inline]
    pub fn pair_bin(&self, p: usize, b: usize) -> PairBinSums {
        self.sums.get(p * self.n_bins + b)
    }

    fn upper(&self, i: usize, j: usize, b: usize) -> PairBinSums {
        self.pair_bin(pair_index(self.n_channels, i, j), b)
    }

    /// PSD sum of channel `c` over the stored bins.
    pub fn psd_row(&self, c: usize) -> &[f64] {
        &self.psd_sum[c * self.n_bins..(c + 1) * self.n_bins]
    }

    pub fn psd_sum(&self, c: usize, k: usize) -> f64 {
        self.psd_row(c)[self.local_bin(k)]
    }

    /// CSD sum for any ordered pair; the lower triangle is the conjugate of
    /// the upper one and the diagonal is the PSD sum.
    pub fn csd_sum(&self, i: usize, j: usize, k: usize) -> Complex64 {
        let b = self.local_bin(k);
        match i.cmp(&j) {
            core::cmp::Ordering::Equal => Complex64::new(self.psd_row(i)[b], 0.0),
            core::cmp::Ordering::Less => self.upper(i, j, b).csd,
            core::cmp::Ordering::Greater => self.upper(j, i, b).csd.conj(),
        }
    }

    pub fn plv_sum(&self, i: usize, j: usize, k: usize) -> Complex64 {
        let b = self.local_bin(k);
        if i < j {
            self.upper(i, j, b).plv
        } else {
            self.upper(j, i, b).plv.conj()
        }
    }

    pub fn pli_sum(&self, i: usize, j: usize, k: usize) -> f64 {
        let b = self.local_bin(k);
        if i < j {
            self.upper(i, j, b).pli
        } else {
            -self.upper(j, i, b).pli
        }
    }

    pub fn im_sum(&self, i: usize, j: usize, k: usize) -> f64 {
        let b = self.local_bin(k);
        if i < j {
            self.upper(i, j, b).im
        } else {
            -self.upper(j, i, b).im
        }
    }

    pub fn abs_im_sum(&self, i: usize, j: usize, k: usize) -> f64 {
        let b = self.local_bin(k);
        let (a, c) = if i < j { (i, j) } else { (j, i) };
        self.upper(a, c, b).abs_im
    }

    /// Adds one trial.
    pub fn accumulate(&mut self, spectra: &Spectra) -> Result<()> {
        self.apply(spectra, 1.0)?;
        self.n_trials += 1;
        Ok(())
    }

    /// Removes a trial previously added with [`accumulate`](Self::accumulate).
    pub fn subtract(&mut self, spectra: &Spectra) -> Result<()> {
        if self.n_trials == 0 {
            return Err(Error::NoData);
        }
        self.apply(spectra, -1.0)?;
        self.n_trials -= 1;
        Ok(())
    }

    /// Adds the sums of another set over the same layout.
    pub fn merge(&mut self, other: &SpectrumSet) -> Result<()> {
        if other.n_channels != self.n_channels
            || other.first_bin != self.first_bin
            || other.n_bins != self.n_bins
            || other.families != self.families
        {
            return Err(param("spectrum sets have different layouts"));
        }
        self.sums.merge(&other.sums);
        for (a, b) in self.psd_sum.iter_mut().zip(&other.psd_sum) {
            *a += *b;
        }
        self.n_trials += other.n_trials;
        Ok(())
    }

    pub fn clear(&mut self) {
        self.sums.clear();
        self.psd_sum.iter_mut().for_each(|s| *s = 0.0);
        self.n_trials = 0;
    }

    fn check(&self, spectra: &Spectra) -> Result<()> {
        if spectra.n_channels != self.n_channels {
            return Err(Error::Dimension {
                what: "spectra channels",
                expected: self.n_channels,
                got: spectra.n_channels,
            });
        }
        if spectra.first_bin != self.first_bin || spectra.n_bins != self.n_bins {
            return Err(Error::Dimension {
                what: "spectra bins",
                expected: self.n_bins,
                got: spectra.n_bins,
            });
        }
        Ok(())
    }

    fn apply(&mut self, spectra: &Spectra, scale: f64) -> Result<()> {
        self.check(spectra)?;
        let n = self.n_channels;
        let n_bins = self.n_bins;
        let families = self.families;
        if families.needs_psd() {
            let mut psd = vec![0.0; n_bins];
            for c in 0..n {
                spectra.psd_into(c, &mut psd);
                for (acc, p) in self.psd_sum[c * n_bins..(c + 1) * n_bins].iter_mut().zip(&psd) {
                    *acc += scale * p;
                }
            }
        }
        let lengths: Vec<usize> = (0..n).map(|i| (n - 1 - i) * n_bins).collect();
        let mut rows = self.sums.rows(&lengths);
        par::for_each_indexed(&mut rows, |i, row| {
            let mut csd = vec![Complex64::new(0.0, 0.0); n_bins];
            for jj in 0..n - 1 - i {
                spectra.pair_csd_into(i, i + 1 + jj, &mut csd);
                csd.iter_mut().for_each(|c| *c = snap_csd(*c));
                row.add(jj * n_bins, &csd, scale);
            }
        });
        Ok(())
    }
}

/// Adds one trial's spectra to `acc`.
pub fn accumulate_spectra(acc: &mut SpectrumSet, spectra: &Spectra) -> Result<()> {
    acc.accumulate(spectra)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fft::BuiltinFft;

    fn lcg_epoch(n_channels: usize, n_samples: usize, seed: u64) -> EpochMatrix {
        let mut s = seed;
        let data = (0..n_channels * n_samples)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 11) as f64 / (1u64 << 53) as f64) - 0.5
            })
            .collect();
        EpochMatrix::new(data, n_channels, 100.0).unwrap()
    }

    #[test]
    fn diagonal_equals_psd_after_one_trial() {
        let cfg = SpectralConfig::new(32);
        let engine = SpectralEngine::new(&BuiltinFft, cfg).unwrap();
        let sp = engine.trial_spectra(&lcg_epoch(3, 32, 1)).unwrap();
        let mut set = SpectrumSet::new(3, &cfg);
        set.accumulate(&sp).unwrap();
        for c in 0..3 {
            for k in 0..17 {
                assert_eq!(set.csd_sum(c, c, k).re, set.psd_sum(c, k));
                let x = sp.row(0, c)[k];
                assert!((set.psd_sum(c, k) - x.norm_sqr()).abs() <= 1e-12 * x.norm_sqr().max(1.0));
            }
        }
        assert_eq!(engine.fft_calls(), 3);
    }

    #[test]
    fn identical_trials_double_every_sum() {
        let cfg = SpectralConfig::new(16);
        let engine = SpectralEngine::new(&BuiltinFft, cfg).unwrap();
        let sp = engine.trial_spectra(&lcg_epoch(4, 20, 7)).unwrap();
        let mut once = SpectrumSet::new(4, &cfg);
        once.accumulate(&sp).unwrap();
        let mut twice = once.clone();
        twice.accumulate(&sp).unwrap();
        let all = |set: &SpectrumSet| (0..n_pairs(4) * set.n_bins).map(|k| set.sums.get(k)).collect::<Vec<_>>();
        for (a, b) in all(&once).iter().zip(&all(&twice)) {
            assert_eq!(b.csd, a.csd * 2.0);
            assert_eq!(b.plv, a.plv * 2.0);
            assert_eq!(b.pli, a.pli * 2.0);
            assert_eq!(b.im, a.im * 2.0);
            assert_eq!(b.abs_im, a.abs_im * 2.0);
        }
        assert_eq!(twice.n_trials_accumulated(), 2);
    }

    #[test]
    fn hermitian_lower_triangle() {
        let cfg = SpectralConfig::new(16);
        let engine = SpectralEngine::new(&BuiltinFft, cfg).unwrap();
        let mut set = SpectrumSet::new(3, &cfg);
        set.accumulate(&engine.trial_spectra(&lcg_epoch(3, 16, 3)).unwrap()).unwrap();
        for k in 0..9 {
            assert_eq!(set.csd_sum(2, 0, k), set.csd_sum(0, 2, k).conj());
            assert_eq!(set.pli_sum(2, 0, k), -set.pli_sum(0, 2, k));
        }
    }

    #[test]
    fn dimension_mismatch_is_rejected() {
        let cfg = SpectralConfig::new(16);
        let engine = SpectralEngine::new(&BuiltinFft, cfg).unwrap();
        let sp = engine.trial_spectra(&lcg_epoch(2, 16, 3)).unwrap();
        let mut set = SpectrumSet::new(3, &cfg);
        assert!(matches!(set.accumulate(&sp), Err(Error::Dimension { .. })));
        let mut narrow = SpectrumSet::new(2, &cfg.with_bins(1, 4));
        assert!(narrow.accumulate(&sp).is_err());
    }

    #[test]
    fn subtract_undoes_accumulate() {
        let cfg = SpectralConfig::new(16).with_bins(2, 6);
        let engine = SpectralEngine::new(&BuiltinFft, cfg).unwrap();
        let a = engine.trial_spectra(&lcg_epoch(3, 16, 5)).unwrap();
        let b = engine.trial_spectra(&lcg_epoch(3, 16, 6)).unwrap();
        let mut set = SpectrumSet::new(3, &cfg);
        set.accumulate(&a).unwrap();
        let snapshot = set.clone();
        set.accumulate(&b).unwrap();
        set.subtract(&b).unwrap();
        assert_eq!(set.n_trials_accumulated(), 1);
        let all = |set: &SpectrumSet| (0..n_pairs(3) * set.n_bins).map(|k| set.sums.get(k)).collect::<Vec<_>>();
        for (x, y) in all(&set).iter().zip(&all(&snapshot)) {
            assert!((x.csd - y.csd).norm() < 1e-12);
            assert!((x.plv - y.plv).norm() < 1e-12);
            assert!((x.pli - y.pli).abs() < 1e-12);
        }
    }

    #[test]
    fn welch_mode_averages_segments() {
        let cfg = SpectralConfig::new(8).with_mode(SegmentMode::Welch);
        let engine = SpectralEngine::new(&BuiltinFft, cfg).unwrap();
        let epoch = lcg_epoch(2, 20, 9);
        let sp = engine.trial_spectra(&epoch).unwrap();
        assert_eq!(sp.n_segments(), 2);
        let fixed = SpectralConfig::new(8);
        let seg0 = EpochMatrix::from_rows(&[&epoch.channel(0)[0..8], &epoch.channel(1)[0..8]], 100.0).unwrap();
        let seg1 = EpochMatrix::from_rows(&[&epoch.channel(0)[8..16], &epoch.channel(1)[8..16]], 100.0).unwrap();
        let plan = BuiltinFft.plan(8, Direction::Forward);
        let s0 = trial_spectra(plan.as_ref(), &fixed, &seg0).unwrap();
        let s1 = trial_spectra(plan.as_ref(), &fixed, &seg1).unwrap();
        let mut got = vec![Complex64::new(0.0, 0.0); 5];
        sp.pair_csd_into(0, 1, &mut got);
        for k in 0..5 {
            let want = (s0.row(0, 0)[k] * s0.row(0, 1)[k].conj() + s1.row(0, 0)[k] * s1.row(0, 1)[k].conj()) * 0.5;
            assert!((got[k] - want).norm() < 1e-12);
        }
        assert_eq!(engine.fft_calls(), 4);
    }
}
