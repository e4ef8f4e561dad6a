//! Block-streaming FIR application by FFT overlap-add.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use super::{Block, FirFilter};
use crate::error::{param, Error, Result};
use crate::fft::{Direction, FftBackend, FftPlan};
use crate::par;

struct Plans {
    forward: Arc<dyn FftPlan>,
    inverse: Arc<dyn FftPlan>,
    taps_spectrum: Vec<Complex64>,
}

/// Causal streaming convolution with a fixed FIR filter.
///
/// Each output block has the same length and start sample as its input
/// block and equals the direct convolution of everything seen so far, so it
/// trails the zero-phase result by the filter's group delay. Channels marked
/// as pass-through (trigger channels) are not filtered, only delayed by the
/// same amount so events stay aligned with the filtered data.
pub struct OverlapAddFilter {
    taps: Vec<f64>,
    delay: usize,
    n_channels: usize,
    passthrough: Vec<bool>,
    backend: Arc<dyn FftBackend>,
    plans: BTreeMap<usize, Plans>,
    tails: Vec<Vec<f64>>,
}

impl OverlapAddFilter {
    pub fn new(
        filter: &FirFilter,
        n_channels: usize,
        passthrough: &[usize],
        backend: Arc<dyn FftBackend>,
    ) -> Result<Self> {
        if n_channels == 0 {
            return Err(param("filter needs at least one channel"));
        }
        let mut mask = vec![false; n_channels];
        for &c in passthrough {
            if c >= n_channels {
                return Err(param(format!("pass-through channel {c} out of range")));
            }
            mask[c] = true;
        }
        let taps = filter.taps().to_vec();
        let delay = filter.group_delay();
        let tails = mask
            .iter()
            .map(|&p| vec![0.0; if p { delay } else { taps.len() - 1 }])
            .collect();
        Ok(Self {
            taps,
            delay,
            n_channels,
            passthrough: mask,
            backend,
            plans: BTreeMap::new(),
            tails,
        })
    }

    /// Delay in samples between input and output.
    pub fn delay(&self) -> usize {
        self.delay
    }

    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    /// Clears the filter memory.
    pub fn reset(&mut self) {
        self.tails.iter_mut().for_each(|t| t.iter_mut().for_each(|v| *v = 0.0));
    }

    fn plans_for(&mut self, len: usize) -> &Plans {
        let taps = &self.taps;
        let backend = &self.backend;
        self.plans.entry(len).or_insert_with(|| {
            let forward = backend.plan(len, Direction::Forward);
            let inverse = backend.plan(len, Direction::Inverse);
            let mut taps_spectrum = vec![Complex64::new(0.0, 0.0); len];
            for (s, t) in taps_spectrum.iter_mut().zip(taps) {
                s.re = *t;
            }
            forward.process(&mut taps_spectrum);
            let scale = 1.0 / len as f64;
            taps_spectrum.iter_mut().for_each(|s| *s *= scale);
            Plans {
                forward,
                inverse,
                taps_spectrum,
            }
        })
    }

    pub fn process(&mut self, block: &Block) -> Result<Block> {
        if block.n_channels() != self.n_channels {
            return Err(Error::Stream(format!(
                "channel count changed from {} to {}",
                self.n_channels,
                block.n_channels()
            )));
        }
        let b = block.n_samples();
        if b == 0 {
            return Ok(block.clone());
        }
        let l = self.taps.len();
        let fft_len = (b + l - 1).next_power_of_two();
        self.plans_for(fft_len);
        let plans = &self.plans[&fft_len];
        let tails = &self.tails;
        let passthrough = &self.passthrough;
        let results: Vec<(Vec<f64>, Vec<f64>)> = par::map_range(self.n_channels, |c| {
            let x = block.channel(c);
            let tail = &tails[c];
            let mut ext = if passthrough[c] {
                let mut ext = Vec::with_capacity(tail.len() + b);
                ext.extend_from_slice(tail);
                ext.extend_from_slice(x);
                ext
            } else {
                let mut buf = vec![Complex64::new(0.0, 0.0); fft_len];
                for (s, v) in buf.iter_mut().zip(x) {
                    s.re = *v;
                }
                plans.forward.process(&mut buf);
                for (s, h) in buf.iter_mut().zip(&plans.taps_spectrum) {
                    *s *= *h;
                }
                plans.inverse.process(&mut buf);
                let mut ext: Vec<f64> = buf[..b + l - 1].iter().map(|v| v.re).collect();
                for (e, t) in ext.iter_mut().zip(tail) {
                    *e += *t;
                }
                ext
            };
            let new_tail = ext.split_off(b);
            (ext, new_tail)
        });
        let mut data = Vec::with_capacity(self.n_channels * b);
        for (c, (out, tail)) in results.into_iter().enumerate() {
            data.extend_from_slice(&out);
            self.tails[c] = tail;
        }
        Block::new(data, self.n_channels, block.first_sample)
    }
}
