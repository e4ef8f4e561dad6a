//! Online preprocessing: FIR filtering, trigger detection, epoching,
//! rejection, baseline correction and trial averaging.
//!
//! Every stage works on [`Block`]s, so splitting a recording into blocks of
//! any size gives the same epochs as handing it over in one piece.

mod average;
mod epoch;
mod fir;
mod overlap_add;
mod trigger;

pub use average::{moving_average, MovingAverage};
pub use epoch::{
    baseline_correct, crop, extract_epoch, reject_epoch, EpochEvent, EpochOutcome, EpochSpec, Epocher,
    RingBuffer,
};
pub use fir::{design_fir, taps_for_transition, FilterKind, FirFilter};
pub use overlap_add::OverlapAddFilter;
pub use trigger::{detect_triggers, EventMarker, TriggerDetector};

use alloc::format;
use alloc::vec::Vec;

use crate::error::{param, Error, Result};

/// A run of consecutive samples from a stream, stored channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    data: Vec<f64>,
    n_channels: usize,
    n_samples: usize,
    /// Absolute index of the first sample in the stream.
    pub first_sample: u64,
}

impl Block {
    pub fn new(data: Vec<f64>, n_channels: usize, first_sample: u64) -> Result<Self> {
        if n_channels == 0 {
            return Err(param("block needs at least one channel"));
        }
        if data.len() % n_channels != 0 {
            return Err(Error::Dimension {
                what: "block data length",
                expected: n_channels * (data.len() / n_channels),
                got: data.len(),
            });
        }
        let n_samples = data.len() / n_channels;
        Ok(Self {
            data,
            n_channels,
            n_samples,
            first_sample,
        })
    }

    /// Builds a block from sample-major interleaved values.
    pub fn from_interleaved(values: &[f64], n_channels: usize, first_sample: u64) -> Result<Self> {
        if n_channels == 0 || values.len() % n_channels != 0 {
            return Err(param(format!(
                "{} interleaved values do not split into {n_channels} channels",
                values.len()
            )));
        }
        let n_samples = values.len() / n_channels;
        let mut data = alloc::vec![0.0; values.len()];
        for (s, frame) in values.chunks_exact(n_channels).enumerate() {
            for (c, v) in frame.iter().enumerate() {
                data[c * n_samples + s] = *v;
            }
        }
        Self::new(data, n_channels, first_sample)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Samples `[start, start + len)` of every channel.
    pub fn slice(&self, start: usize, len: usize) -> Block {
        let mut data = Vec::with_capacity(self.n_channels * len);
        for c in 0..self.n_channels {
            data.extend_from_slice(&self.channel(c)[start..start + len]);
        }
        Block {
            data,
            n_channels: self.n_channels,
            n_samples: len,
            first_sample: self.first_sample + start as u64,
        }
    }

    /// One past the absolute index of the last sample.
    pub fn end_sample(&self) -> u64 {
        self.first_sample + self.n_samples as u64
    }

    /// Concatenates consecutive blocks.
    pub fn concat(blocks: &[Block]) -> Result<Block> {
        let first = blocks.first().ok_or(Error::NoData)?;
        let n_channels = first.n_channels;
        let total: usize = blocks.iter().map(|b| b.n_samples).sum();
        let mut data = alloc::vec![0.0; n_channels * total];
        let mut offset = 0;
        let mut expected_start = first.first_sample;
        for b in blocks {
            if b.n_channels != n_channels {
                return Err(Error::Stream(format!(
                    "channel count changed from {n_channels} to {}",
                    b.n_channels
                )));
            }
            if b.first_sample != expected_start {
                return Err(Error::Stream(format!(
                    "block starts at sample {}, expected {expected_start}",
                    b.first_sample
                )));
            }
            for c in 0..n_channels {
                data[c * total + offset..c * total + offset + b.n_samples].copy_from_slice(b.channel(c));
            }
            offset += b.n_samples;
            expected_start = b.end_sample();
        }
        Block::new(data, n_channels, first.first_sample)
    }
}
