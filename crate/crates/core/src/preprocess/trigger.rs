//! Rising-edge event detection on trigger channels.

use alloc::vec::Vec;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EventMarker {
    /// Absolute sample index of the first sample at or above threshold.
    pub sample_index: u64,
    /// Trigger amplitude at that sample, rounded.
    pub event_code: i64,
}

/// Markers for every sample where the signal goes from below `threshold`
/// to at or above it.
///
/// `previous_tail` is the last sample of the preceding block (treated as 0
/// for the first block); `offset` is the absolute index of `block[0]`.
pub fn detect_triggers(
    block: &[f64],
    threshold: f64,
    previous_tail: Option<f64>,
    offset: u64,
) -> Vec<EventMarker> {
    let mut prev = previous_tail.unwrap_or(0.0);
    let mut out = Vec::new();
    for (k, &v) in block.iter().enumerate() {
        if prev < threshold && v >= threshold {
            out.push(EventMarker {
                sample_index: offset + k as u64,
                event_code: libm::round(v) as i64,
            });
        }
        prev = v;
    }
    out
}

/// Stateful detector that carries the last sample across blocks.
#[derive(Debug, Clone)]
pub struct TriggerDetector {
    threshold: f64,
    tail: Option<f64>,
}

impl TriggerDetector {
    pub fn new(threshold: f64) -> Self {
        Self {
            threshold,
            tail: None,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    /// Scans the next block, starting at absolute sample `offset`.
    pub fn process(&mut self, block: &[f64], offset: u64) -> Vec<EventMarker> {
        let markers = detect_triggers(block, self.threshold, self.tail, offset);
        if let Some(&last) = block.last() {
            self.tail = Some(last);
        }
        markers
    }

    pub fn reset(&mut self) {
        self.tail = None;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn single_pulse() {
        let m = detect_triggers(&[0.0, 0.0, 5.0, 5.0, 0.0], 0.5, None, 0);
        assert_eq!(
            m,
            vec![EventMarker {
                sample_index: 2,
                event_code: 5
            }]
        );
    }

    #[test]
    fn edge_across_blocks_is_found_once() {
        let signal = [0.0, 0.0, 0.0, 3.0, 3.0, 3.0, 0.0, 7.0];
        let whole = detect_triggers(&signal, 0.5, None, 0);
        for split in 0..signal.len() {
            let mut det = TriggerDetector::new(0.5);
            let mut got = det.process(&signal[..split], 0);
            got.extend(det.process(&signal[split..], split as u64));
            assert_eq!(got, whole, "split at {split}");
        }
        assert_eq!(whole.len(), 2);
        assert_eq!(whole[1].event_code, 7);
    }

    #[test]
    fn constant_channel_fires_only_once() {
        let mut det = TriggerDetector::new(0.5);
        assert_eq!(det.process(&[4.0; 10], 0).len(), 1);
        assert!(det.process(&[4.0; 10], 10).is_empty());
    }
}
