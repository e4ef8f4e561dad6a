#![allow(dead_code)]

pub mod oracle;

use connstream_core::{ConnectivityNetwork, EpochMatrix};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// `n_trials` trials of uniform noise in [-1, 1).
pub fn random_trials(seed: u64, n_trials: usize, n_channels: usize, n_samples: usize) -> Vec<Vec<Vec<f64>>> {
    let mut r = rng(seed);
    (0..n_trials)
        .map(|_| {
            (0..n_channels)
                .map(|_| (0..n_samples).map(|_| r.random_range(-1.0..1.0)).collect())
                .collect()
        })
        .collect()
}

pub fn to_epochs(trials: &[Vec<Vec<f64>>], sfreq: f64) -> Vec<EpochMatrix> {
    trials
        .iter()
        .enumerate()
        .map(|(t, rows)| EpochMatrix::from_rows(rows, sfreq).unwrap().with_trial_index(t as u64))
        .collect()
}

/// `max |a - b| / max |b|` over edge weights (and imaginary parts).
pub fn rel_error(a: &ConnectivityNetwork, b: &ConnectivityNetwork) -> f64 {
    assert_eq!(a.edges.len(), b.edges.len());
    let mut diff = 0.0f64;
    let mut scale = 0.0f64;
    for (x, y) in a.edges.iter().zip(&b.edges) {
        assert_eq!((x.i, x.j), (y.i, y.j));
        diff = diff.max((x.weight - y.weight).abs());
        scale = scale.max(y.weight.abs());
        if let (Some(p), Some(q)) = (x.weight_im, y.weight_im) {
            diff = diff.max((p - q).abs());
            scale = scale.max(q.abs());
        }
        assert_eq!(x.lag, y.lag);
    }
    if scale == 0.0 {
        diff
    } else {
        diff / scale
    }
}
