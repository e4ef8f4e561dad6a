//! Moving average over the most recent trials (evoked response).

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec;

use crate::error::{param, Error, Result};
use crate::types::EpochMatrix;

/// Elementwise mean of the last `min(n, len)` epochs.
pub fn moving_average(epochs: &[EpochMatrix], n: usize) -> Result<EpochMatrix> {
    if n == 0 {
        return Err(param("average count must be at least 1"));
    }
    let last = epochs.last().ok_or(Error::NoData)?;
    let used = &epochs[epochs.len().saturating_sub(n)..];
    let mut sum = vec![0.0; last.data().len()];
    for e in used {
        if !e.same_layout(last) {
            return Err(Error::Dimension {
                what: "epoch shape",
                expected: last.data().len(),
                got: e.data().len(),
            });
        }
        for (s, v) in sum.iter_mut().zip(e.data()) {
            *s += v;
        }
    }
    let k = used.len() as f64;
    sum.iter_mut().for_each(|s| *s /= k);
    Ok(EpochMatrix::new(sum, last.n_channels(), last.sfreq)?
        .with_offset(last.t0_offset)
        .with_trial_index(last.trial_index))
}

/// Keeps the last `n` epochs and averages them on request.
#[derive(Debug, Clone)]
pub struct MovingAverage {
    n: usize,
    queue: VecDeque<EpochMatrix>,
}

impl MovingAverage {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(param("average count must be at least 1"));
        }
        Ok(Self {
            n,
            queue: VecDeque::new(),
        })
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.queue.len()
    }

    pub fn is_empty(&self) -> bool {
        self.queue.is_empty()
    }

    pub fn set_count(&mut self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(param(format!("average count must be at least 1, got {n}")));
        }
        self.n = n;
        while self.queue.len() > n {
            self.queue.pop_front();
        }
        Ok(())
    }

    pub fn push(&mut self, epoch: EpochMatrix) {
        self.queue.push_back(epoch);
        while self.queue.len() > self.n {
            self.queue.pop_front();
        }
    }

    pub fn average(&self) -> Result<EpochMatrix> {
        let (a, b) = self.queue.as_slices();
        if b.is_empty() {
            moving_average(a, self.n)
        } else {
            let all: alloc::vec::Vec<EpochMatrix> = self.queue.iter().cloned().collect();
            moving_average(&all, self.n)
        }
    }

    pub fn clear(&mut self) {
        self.queue.clear();
    }
}
