//! Cutting trials out of the stream around event markers.
//!
//! Times are seconds relative to the marker and are turned into sample
//! offsets with `round(t * sfreq)`. Windows are half-open: `[tmin, tmax)`
//! covers `round(tmax * sfreq) - round(tmin * sfreq)` samples.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Block, EventMarker};
use crate::error::{param, Error, Result};
use crate::types::EpochMatrix;

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSpec {
    pub tmin: f64,
    pub tmax: f64,
    /// Window whose per-channel mean is subtracted.
    pub baseline: Option<(f64, f64)>,
    /// Window kept after baseline correction.
    pub crop: Option<(f64, f64)>,
    pub reject_channel: Option<usize>,
    /// Peak-to-peak limit on the rejection channel, in recording units.
    pub reject_threshold: f64,
    /// Part of the trial ignored by rejection (stimulus artifact).
    pub reject_exclude: Option<(f64, f64)>,
    /// Event codes that start a trial; empty accepts every code.
    pub event_codes: Vec<i64>,
}

impl EpochSpec {
    pub fn new(tmin: f64, tmax: f64) -> Self {
        Self {
            tmin,
            tmax,
            baseline: None,
            crop: None,
            reject_channel: None,
            reject_threshold: f64::INFINITY,
            reject_exclude: Some((0.0, 0.010)),
            event_codes: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tmin < self.tmax) {
            return Err(param(format!("tmin {} must be below tmax {}", self.tmin, self.tmax)));
        }
        let inside = |(a, b): (f64, f64), what: &str| {
            if a < b && a >= self.tmin && b <= self.tmax {
                Ok(())
            } else {
                Err(param(format!(
                    "{what} window [{a}, {b}) outside the epoch [{}, {})",
                    self.tmin, self.tmax
                )))
            }
        };
        if let Some(b) = self.baseline {
            inside(b, "baseline")?;
        }
        if let Some(c) = self.crop {
            inside(c, "crop")?;
        }
        if !(self.reject_threshold > 0.0) {
            return Err(param("rejection threshold must be positive"));
        }
        Ok(())
    }

    /// Sample offset of the first sample and the number of samples.
    pub fn sample_range(&self, sfreq: f64) -> (i64, usize) {
        let start = offset(self.tmin, sfreq);
        let end = offset(self.tmax, sfreq);
        (start, (end - start).max(0) as usize)
    }

    pub fn accepts(&self, code: i64) -> bool {
        self.event_codes.is_empty() || self.event_codes.contains(&code)
    }
}

fn offset(t: f64, sfreq: f64) -> i64 {
    libm::round(t * sfreq) as i64
}

/// Fixed-capacity history of the most recent samples of every channel.
#[derive(Debug, Clone)]
pub struct RingBuffer {
    n_channels: usize,
    capacity: usize,
    data: Vec<f64>,
    head: u64,
}

impl RingBuffer {
    pub fn new(n_channels: usize, capacity: usize) -> Self {
        Self {
            n_channels,
            capacity,
            data: vec![0.0; n_channels * capacity],
            head: 0,
        }
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    /// Absolute index one past the newest sample.
    pub fn head(&self) -> u64 {
        self.head
    }

    /// Absolute index of the oldest retained sample.
    pub fn oldest(&self) -> u64 {
        self.head.saturating_sub(self.capacity as u64)
    }

    /// Appends a block. A block starting past the head (samples lost
    /// upstream) leaves zeros in the gap.
    pub fn push(&mut self, block: &Block) -> Result<()> {
        if block.n_channels() != self.n_channels {
            return Err(Error::Stream(format!(
                "channel count changed from {} to {}",
                self.n_channels,
                block.n_channels()
            )));
        }
        if block.first_sample < self.head {
            return Err(Error::Stream(format!(
                "block starts at sample {}, before the buffer head {}",
                block.first_sample, self.head
            )));
        }
        while self.head < block.first_sample {
            let pos = (self.head % self.capacity as u64) as usize;
            for c in 0..self.n_channels {
                self.data[c * self.capacity + pos] = 0.0;
            }
            self.head += 1;
        }
        let n = block.n_samples();
        let skip = n.saturating_sub(self.capacity);
        for c in 0..self.n_channels {
            let row = &mut self.data[c * self.capacity..(c + 1) * self.capacity];
            for (k, v) in block.channel(c)[skip..].iter().enumerate() {
                let pos = ((self.head + (skip + k) as u64) % self.capacity as u64) as usize;
                row[pos] = *v;
            }
        }
        self.head += n as u64;
        Ok(())
    }

    /// Copies `[start, start + len)` channel-major, or `None` when the end
    /// has not arrived yet.
    pub fn get(&self, start: i64, len: usize) -> Result<Option<Vec<f64>>> {
        if start < 0 || (start as u64) < self.oldest() {
            return Err(Error::DataLoss {
                requested: start.max(0) as u64,
                oldest: self.oldest(),
            });
        }
        let start = start as u64;
        if start + len as u64 > self.head {
            return Ok(None);
        }
        let mut out = Vec::with_capacity(self.n_channels * len);
        for c in 0..self.n_channels {
            let row = &self.data[c * self.capacity..(c + 1) * self.capacity];
            out.extend((0..len as u64).map(|k| row[((start + k) % self.capacity as u64) as usize]));
        }
        Ok(Some(out))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum EpochOutcome {
    Ready(EpochMatrix),
    /// The end of the window has not been buffered yet.
    Pending,
}

/// Cuts the epoch of `marker` (all buffered channels) out of `ring`.
pub fn extract_epoch(
    ring: &RingBuffer,
    marker: &EventMarker,
    spec: &EpochSpec,
    sfreq: f64,
) -> Result<EpochOutcome> {
    let (start, len) = spec.sample_range(sfreq);
    let Some(data) = ring.get(marker.sample_index as i64 + start, len)? else {
        return Ok(EpochOutcome::Pending);
    };
    let epoch = EpochMatrix::new(data, ring.n_channels(), sfreq)?.with_offset(start as f64 / sfreq);
    Ok(EpochOutcome::Ready(epoch))
}

/// Sample offset (relative to the marker) of the first sample of `epoch`.
fn start_offset(epoch: &EpochMatrix) -> i64 {
    libm::round(epoch.t0_offset * epoch.sfreq) as i64
}

/// Local sample range of the window `[a, b)` inside `epoch`.
fn local_window(epoch: &EpochMatrix, (a, b): (f64, f64), what: &str) -> Result<(usize, usize)> {
    let start = start_offset(epoch);
    let lo = offset(a, epoch.sfreq) - start;
    let hi = offset(b, epoch.sfreq) - start;
    if lo < 0 || hi > epoch.n_samples() as i64 || lo >= hi {
        return Err(param(format!("{what} window [{a}, {b}) outside the epoch or empty")));
    }
    Ok((lo as usize, hi as usize))
}

/// Whether the peak-to-peak amplitude of the rejection channel, outside the
/// exclusion window, exceeds the threshold.
pub fn reject_epoch(epoch: &EpochMatrix, spec: &EpochSpec) -> Result<bool> {
    let Some(ch) = spec.reject_channel else {
        return Ok(false);
    };
    if ch >= epoch.n_channels() {
        return Err(Error::Config(format!(
            "rejection channel {ch} not present ({} channels)",
            epoch.n_channels()
        )));
    }
    let start = start_offset(epoch);
    let excluded = spec
        .reject_exclude
        .map(|(a, b)| (offset(a, epoch.sfreq), offset(b, epoch.sfreq)));
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (k, &v) in epoch.channel(ch).iter().enumerate() {
        let s = start + k as i64;
        if matches!(excluded, Some((a, b)) if s >= a && s < b) {
            continue;
        }
        lo = lo.min(v);
        hi = hi.max(v);
    }
    Ok(hi > lo && hi - lo > spec.reject_threshold)
}

/// Subtracts each channel's mean over the baseline window.
pub fn baseline_correct(epoch: &EpochMatrix, spec: &EpochSpec) -> Result<EpochMatrix> {
    let window = spec.baseline.ok_or_else(|| param("no baseline window configured"))?;
    let (lo, hi) = local_window(epoch, window, "baseline")?;
    let mut out = epoch.clone();
    for c in 0..out.n_channels() {
        let row = out.channel_mut(c);
        let mean = row[lo..hi].iter().sum::<f64>() / (hi - lo) as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    Ok(out)
}

/// Keeps the samples of `[a, b)`.
pub fn crop(epoch: &EpochMatrix, window: (f64, f64)) -> Result<EpochMatrix> {
    let (lo, hi) = local_window(epoch, window, "crop")?;
    let rows: Vec<&[f64]> = (0..epoch.n_channels()).map(|c| &epoch.channel(c)[lo..hi]).collect();
    let start = start_offset(epoch) + lo as i64;
    Ok(EpochMatrix::from_rows(&rows, epoch.sfreq)?
        .with_offset(start as f64 / epoch.sfreq)
        .with_trial_index(epoch.trial_index))
}

/// Result of processing one marker.
#[derive(Debug, Clone, PartialEq)]
pub enum EpochEvent {
    Accepted { epoch: EpochMatrix, marker: EventMarker },
    Rejected { trial_index: u64, marker: EventMarker },
}

impl EpochEvent {
    pub fn marker(&self) -> &EventMarker {
        match self {
            EpochEvent::Accepted { marker, .. } | EpochEvent::Rejected { marker, .. } => marker,
        }
    }

    pub fn trial_index(&self) -> u64 {
        match self {
            EpochEvent::Accepted { epoch, .. } => epoch.trial_index,
            EpochEvent::Rejected { trial_index, .. } => *trial_index,
        }
    }
}

/// Streaming epoching: buffers blocks, waits for each marker's window to
/// complete, then rejects, baseline-corrects, crops and picks channels.
#[derive(Debug, Clone)]
pub struct Epocher {
    spec: EpochSpec,
    sfreq: f64,
    picks: Vec<usize>,
    ring: RingBuffer,
    pending: VecDeque<EventMarker>,
    next_trial: u64,
    lost: u64,
}

impl Epocher {
    /// `picks` are the channels kept in emitted epochs; `capacity` is the
    /// ring size in samples and must hold at least one epoch.
    pub fn new(spec: EpochSpec, sfreq: f64, n_channels: usize, picks: Vec<usize>, capacity: usize) -> Result<Self> {
        spec.validate()?;
        let (_, len) = spec.sample_range(sfreq);
        if len < 2 {
            return Err(param("epoch window covers fewer than 2 samples"));
        }
        if capacity < len {
            return Err(param(format!("ring capacity {capacity} below the epoch length {len}")));
        }
        if picks.is_empty() || picks.iter().any(|&c| c >= n_channels) {
            return Err(param("picked channels out of range"));
        }
        if let Some(ch) = spec.reject_channel {
            if ch >= n_channels {
                return Err(Error::Config(format!("rejection channel {ch} not present")));
            }
        }
        Ok(Self {
            spec,
            sfreq,
            picks,
            ring: RingBuffer::new(n_channels, capacity),
            pending: VecDeque::new(),
            next_trial: 0,
            lost: 0,
        })
    }

    pub fn spec(&self) -> &EpochSpec {
        &self.spec
    }

    /// Markers whose data had already left the buffer (or started before
    /// the stream).
    pub fn lost(&self) -> u64 {
        self.lost
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Queues markers; codes the spec does not accept are ignored.
    pub fn add_markers(&mut self, markers: &[EventMarker]) {
        self.pending
            .extend(markers.iter().filter(|m| self.spec.accepts(m.event_code)));
    }

    /// Buffers `block` and returns every trial whose window is now complete.
    pub fn push_block(&mut self, block: &Block) -> Result<Vec<EpochEvent>> {
        // Feed large blocks in slices so no complete window is overwritten
        // before it is cut.
        let (_, len) = self.spec.sample_range(self.sfreq);
        let step = (self.ring.capacity - len).max(1);
        let mut out = Vec::new();
        let mut start = 0;
        while start < block.n_samples() || (start == 0 && block.n_samples() == 0) {
            let n = step.min(block.n_samples() - start);
            self.ring.push(&block.slice(start, n))?;
            self.drain(&mut out)?;
            start += n.max(1);
        }
        Ok(out)
    }

    fn drain(&mut self, out: &mut Vec<EpochEvent>) -> Result<()> {
        while let Some(marker) = self.pending.front().copied() {
            match extract_epoch(&self.ring, &marker, &self.spec, self.sfreq) {
                Ok(EpochOutcome::Pending) => break,
                Ok(EpochOutcome::Ready(epoch)) => {
                    self.pending.pop_front();
                    out.push(self.finish(epoch, marker)?);
                }
                Err(Error::DataLoss { .. }) => {
                    self.pending.pop_front();
                    self.lost += 1;
                }
                Err(e) => return Err(e),
            }
        }
        Ok(())
    }

    /// One past the absolute index of the last sample of `marker`'s window.
    pub fn window_end(&self, marker: &EventMarker) -> i64 {
        let (start, len) = self.spec.sample_range(self.sfreq);
        marker.sample_index as i64 + start + len as i64
    }

    fn finish(&mut self, epoch: EpochMatrix, marker: EventMarker) -> Result<EpochEvent> {
        let trial_index = self.next_trial;
        self.next_trial += 1;
        if reject_epoch(&epoch, &self.spec)? {
            return Ok(EpochEvent::Rejected { trial_index, marker });
        }
        let mut epoch = epoch;
        if self.spec.baseline.is_some() {
            epoch = baseline_correct(&epoch, &self.spec)?;
        }
        if let Some(window) = self.spec.crop {
            epoch = crop(&epoch, window)?;
        }
        let rows: Vec<&[f64]> = self.picks.iter().map(|&c| epoch.channel(c)).collect();
        let picked = EpochMatrix::from_rows(&rows, self.sfreq)?
            .with_offset(epoch.t0_offset)
            .with_trial_index(trial_index);
        Ok(EpochEvent::Accepted { epoch: picked, marker })
    }
}
