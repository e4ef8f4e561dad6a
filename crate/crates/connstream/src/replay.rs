//! Replays a recording as timed blocks, mimicking an acquisition system.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use connstream_core::preprocess::Block;

use crate::error::{Error, Result};
use crate::format::RawRecording;

/// Iterator over consecutive blocks of a recording. The last block may be
/// shorter than `block_size`.
///
/// At `speed` 1 block `k` is released at `start + k * block_size / sfreq`;
/// the schedule is absolute, so slow consumers do not accumulate drift.
/// Speed 0 releases blocks as fast as they are pulled.
pub struct Replay {
    rec: Arc<RawRecording>,
    block_size: usize,
    speed: f64,
    next: usize,
    start: Option<Instant>,
    stop: Option<Arc<AtomicBool>>,
    done: bool,
}

impl Replay {
    pub fn new(rec: Arc<RawRecording>, block_size: usize, speed: f64) -> Result<Self> {
        if block_size == 0 {
            return Err(Error::Config("block size must be at least 1".into()));
        }
        if !(speed >= 0.0 && speed.is_finite()) {
            return Err(Error::Config(format!("replay speed must be non-negative, got {speed}")));
        }
        Ok(Self {
            rec,
            block_size,
            speed,
            next: 0,
            start: None,
            stop: None,
            done: false,
        })
    }

    /// Ends the stream early once `flag` is set.
    pub fn with_stop(mut self, flag: Arc<AtomicBool>) -> Self {
        self.stop = Some(flag);
        self
    }

    pub fn n_blocks(&self) -> usize {
        self.rec.n_samples().div_ceil(self.block_size)
    }

    fn wait_for(&self, k: usize) {
        let (Some(start), true) = (self.start, self.speed > 0.0) else {
            return;
        };
        let offset = (k * self.block_size) as f64 / self.rec.header.sfreq / self.speed;
        let due = start + Duration::from_secs_f64(offset);
        loop {
            let now = Instant::now();
            if now >= due || self.stopped() {
                return;
            }
            // Short sleeps keep the stop flag responsive.
            thread::sleep((due - now).min(Duration::from_millis(50)));
        }
    }

    fn stopped(&self) -> bool {
        self.stop.as_ref().is_some_and(|f| f.load(Ordering::Relaxed))
    }
}

impl Iterator for Replay {
    type Item = Result<Block>;

    fn next(&mut self) -> Option<Result<Block>> {
        if self.done {
            return None;
        }
        let k = self.next;
        let start = k * self.block_size;
        if start >= self.rec.n_samples() {
            self.done = true;
            if self.rec.trailing_bytes > 0 {
                return Some(Err(Error::format(
                    "recording",
                    format!("payload truncated: {} bytes after the last complete sample", self.rec.trailing_bytes),
                )));
            }
            return None;
        }
        if self.start.is_none() {
            self.start = Some(Instant::now());
        }
        self.wait_for(k);
        if self.stopped() {
            self.done = true;
            return None;
        }
        self.next += 1;
        Some(Ok(self.rec.block(start, self.block_size)))
    }
}
