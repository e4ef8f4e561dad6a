mod common;

use std::sync::Arc;

use common::{rel_error, to_epochs};
use connstream_core::fft::{fft_real, Direction};
use connstream_core::inverse::{apply_inverse, InverseOperator};
use connstream_core::metrics::{batch_network, cor};
use connstream_core::network::kept_edge_count;
use connstream_core::preprocess::{design_fir, Block, FilterKind, OverlapAddFilter, TriggerDetector};
use connstream_core::spectral::SpectralEngine;
use connstream_core::{
    normalize_network, threshold_network, BuiltinFft, CacheConfig, ConnectivityNetwork, Edge,
    EpochMatrix, FftBackend, FrequencyBand, MetricId, SpectralConfig, SpectrumSet, TrialCache,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;

const NFFT: usize = 32;

fn trials_strategy(max_ch: usize, max_trials: usize) -> impl Strategy<Value = Vec<Vec<Vec<f64>>>> {
    (2..=max_ch, 2..=max_trials, 16usize..=40).prop_flat_map(|(c, k, n)| {
        prop::collection::vec(
            prop::collection::vec(prop::collection::vec(-10.0f64..10.0, n), c),
            k,
        )
    })
}

fn cache(storage: bool) -> TrialCache {
    let config = CacheConfig::new(SpectralConfig::new(NFFT)).with_storage(storage);
    TrialCache::new(Arc::new(BuiltinFft), config).unwrap()
}

fn band() -> FrequencyBand {
    FrequencyBand::new(1, 15, 1.0).unwrap()
}

fn network_from(weights: &[f64]) -> ConnectivityNetwork {
    let mut n = 2;
    while n * (n - 1) / 2 < weights.len() {
        n += 1;
    }
    let mut net = ConnectivityNetwork::empty(MetricId::Coh, FrequencyBand::default(), n, 1);
    let mut w = weights.iter();
    for i in 0..n {
        for j in i + 1..n {
            if let Some(&v) = w.next() {
                net.edges.push(Edge::real(i as u32, j as u32, v));
            }
        }
    }
    net
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn metric_values_stay_in_range(trials in trials_strategy(5, 6)) {
        let epochs = to_epochs(&trials, 32.0);
        let mut c = cache(true);
        for e in epochs.iter().cloned() {
            c.add_trial(e).unwrap();
        }
        let eps = 1e-9;
        for metric in MetricId::ALL {
            let net = c.finalize(metric, &band()).unwrap();
            for e in &net.edges {
                let w = e.weight;
                prop_assert!(w.is_finite());
                match metric {
                    MetricId::Coh | MetricId::Plv | MetricId::Pli | MetricId::Wpli
                    | MetricId::DsWpli | MetricId::Cohy | MetricId::Xcor => {
                        prop_assert!((-eps..=1.0 + eps).contains(&w), "{metric} {w}")
                    }
                    MetricId::Cor | MetricId::ImagCohy => {
                        prop_assert!((-1.0 - eps..=1.0 + eps).contains(&w), "{metric} {w}")
                    }
                    MetricId::UsPli => prop_assert!(w <= 1.0 + eps),
                }
            }
        }
    }

    #[test]
    fn zero_lag_mixtures_are_invisible_to_lag_metrics(
        source in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 32), 1..6),
        gain in prop::sample::select(vec![-3.0f64, -0.5, 0.25, 2.0, 7.0]),
    ) {
        let epochs: Vec<EpochMatrix> = source
            .iter()
            .map(|s| {
                let scaled: Vec<f64> = s.iter().map(|v| v * gain).collect();
                EpochMatrix::from_rows(&[s.clone(), scaled], 32.0).unwrap()
            })
            .collect();
        let mut c = cache(true);
        for e in epochs {
            c.add_trial(e).unwrap();
        }
        for metric in [MetricId::ImagCohy, MetricId::Pli, MetricId::Wpli] {
            let w = c.finalize(metric, &band()).unwrap().edges[0].weight;
            prop_assert_eq!(w, 0.0, "{}", metric);
        }
        for metric in [MetricId::Coh, MetricId::Plv] {
            let w = c.finalize(metric, &band()).unwrap().edges[0].weight;
            prop_assert!((w - 1.0).abs() < 1e-12, "{} {}", metric, w);
        }
    }

    #[test]
    fn incremental_equals_batch_in_any_order(trials in trials_strategy(4, 6), seed in any::<u64>()) {
        let mut epochs = to_epochs(&trials, 32.0);
        let engine = SpectralEngine::new(&BuiltinFft, SpectralConfig::new(NFFT)).unwrap();
        let mut reference = Vec::new();
        for metric in MetricId::ALL {
            reference.push(batch_network(&engine, &BuiltinFft, &epochs, metric, &band(), None).unwrap());
        }
        epochs.shuffle(&mut common::rng(seed));
        for storage in [true, false] {
            let mut c = cache(storage);
            for (k, e) in epochs.iter().enumerate() {
                c.add_trial(e.clone()).unwrap();
                if k + 1 == epochs.len() {
                    for (metric, want) in MetricId::ALL.into_iter().zip(&reference) {
                        let got = c.finalize(metric, &band()).unwrap();
                        prop_assert!(rel_error(&got, want) <= 1e-10, "{}", metric);
                    }
                }
            }
        }
    }

    #[test]
    fn swapping_channels_flips_only_signs(trials in trials_strategy(3, 5)) {
        let epochs = to_epochs(&trials, 32.0);
        let swapped: Vec<EpochMatrix> = trials
            .iter()
            .map(|t| {
                let mut rows = t.clone();
                rows.swap(0, 1);
                EpochMatrix::from_rows(&rows, 32.0).unwrap()
            })
            .collect();
        let engine = SpectralEngine::new(&BuiltinFft, SpectralConfig::new(NFFT)).unwrap();
        for metric in MetricId::ALL.into_iter().filter(|m| *m != MetricId::Xcor) {
            let a = batch_network(&engine, &BuiltinFft, &epochs, metric, &band(), None).unwrap();
            let b = batch_network(&engine, &BuiltinFft, &swapped, metric, &band(), None).unwrap();
            let (ea, eb) = (a.edge(0, 1).unwrap(), b.edge(0, 1).unwrap());
            let tol = 1e-12 * (1.0 + ea.weight.abs());
            if metric == MetricId::ImagCohy {
                prop_assert!((ea.weight + eb.weight).abs() <= tol);
            } else {
                prop_assert!((ea.weight - eb.weight).abs() <= tol, "{}", metric);
            }
            if let (Some(x), Some(y)) = (ea.weight_im, eb.weight_im) {
                prop_assert!((x + y).abs() <= tol);
            }
        }
    }

    #[test]
    fn parseval_holds(signal in prop::collection::vec(-100.0f64..100.0, 2..80), nfft in 2usize..96) {
        let plan = BuiltinFft.plan(nfft, Direction::Forward);
        let spec = fft_real(plan.as_ref(), &signal).unwrap();
        let used = signal.len().min(nfft);
        let mean = signal[..used].iter().sum::<f64>() / used as f64;
        let energy: f64 = signal[..used].iter().map(|x| (x - mean).powi(2)).sum();
        let mut power = 0.0;
        for (k, v) in spec.iter().enumerate() {
            let both_sides = k != 0 && !(nfft % 2 == 0 && k == nfft / 2);
            power += v.norm_sqr() * if both_sides { 2.0 } else { 1.0 };
        }
        prop_assert!((power / nfft as f64 - energy).abs() <= 1e-6 * energy.max(1e-12));
    }

    #[test]
    fn accumulation_order_barely_matters(trials in trials_strategy(4, 8), seed in any::<u64>()) {
        let epochs = to_epochs(&trials, 32.0);
        let config = SpectralConfig::new(NFFT);
        let engine = SpectralEngine::new(&BuiltinFft, config).unwrap();
        let spectra: Vec<_> = epochs.iter().map(|e| engine.trial_spectra(e).unwrap()).collect();
        let n = epochs[0].n_channels();
        let mut a = SpectrumSet::new(n, &config);
        spectra.iter().for_each(|s| a.accumulate(s).unwrap());
        let mut order: Vec<usize> = (0..spectra.len()).collect();
        order.shuffle(&mut common::rng(seed));
        let mut b = SpectrumSet::new(n, &config);
        order.iter().for_each(|&t| b.accumulate(&spectra[t]).unwrap());
        for i in 0..n {
            for j in i + 1..n {
                for (x, y) in a.pair_sums(i, j).iter().zip(b.pair_sums(i, j)) {
                    let scale = 1.0 + x.csd.norm();
                    prop_assert!((x.csd - y.csd).norm() <= 1e-10 * scale);
                    prop_assert!((x.plv - y.plv).norm() <= 1e-10 * trials.len() as f64);
                    prop_assert_eq!(x.pli, y.pli);
                }
                for k in 0..a.n_bins() {
                    prop_assert!((a.csd_sum(j, i, k) - a.csd_sum(i, j, k).conj()).norm() == 0.0);
                }
            }
        }
    }

    #[test]
    fn normalize_and_threshold_commute(weights in prop::collection::vec(-5.0f64..5.0, 1..60), frac in 0.01f64..=1.0) {
        let net = network_from(&weights);
        let a = threshold_network(normalize_network(net.clone()), frac).unwrap();
        let b = normalize_network(threshold_network(net.clone(), frac).unwrap());
        let ka: Vec<_> = a.edges.iter().map(|e| (e.i, e.j)).collect();
        let kb: Vec<_> = b.edges.iter().map(|e| (e.i, e.j)).collect();
        prop_assert_eq!(&ka, &kb);
        prop_assert_eq!(ka.len(), kept_edge_count(weights.len(), frac));
        let norm = normalize_network(net);
        let max = norm.max_abs_weight();
        prop_assert!(max == 0.0 || (max - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cor_is_bounded_and_symmetric(trials in trials_strategy(4, 3)) {
        let net = cor(&to_epochs(&trials, 10.0)).unwrap();
        prop_assert!(net.edges.iter().all(|e| e.weight.abs() <= 1.0));
    }

    #[test]
    fn inverse_application_is_linear(
        m in prop::collection::vec(-2.0f64..2.0, 6),
        x in prop::collection::vec(-2.0f64..2.0, 10),
        y in prop::collection::vec(-2.0f64..2.0, 10),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
    ) {
        let op = InverseOperator::from_matrix(m, 3, 2, vec![[0.0; 3]; 3]).unwrap();
        let ex = EpochMatrix::new(x.clone(), 2, 10.0).unwrap();
        let ey = EpochMatrix::new(y.clone(), 2, 10.0).unwrap();
        let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
        let ec = EpochMatrix::new(combo, 2, 10.0).unwrap();
        let (sx, sy, sc) = (apply_inverse(&op, &ex).unwrap(), apply_inverse(&op, &ey).unwrap(), apply_inverse(&op, &ec).unwrap());
        for k in 0..sc.data().len() {
            prop_assert!((sc.data()[k] - (a * sx.data()[k] + b * sy.data()[k])).abs() < 1e-10);
        }
    }

    #[test]
    fn filtering_is_independent_of_block_partition(
        signal in prop::collection::vec(-1.0f64..1.0, 50..400),
        cuts in prop::collection::vec(1usize..120, 1..10),
    ) {
        let f = design_fir(FilterKind::Bandpass, &[5.0, 40.0], 5.0, 61, 200.0).unwrap();
        let run = |sizes: &mut dyn Iterator<Item = usize>| {
            let mut ola = OverlapAddFilter::new(&f, 1, &[], Arc::new(BuiltinFft)).unwrap();
            let mut out = Vec::new();
            let mut pos = 0;
            while pos < signal.len() {
                let n = sizes.next().unwrap_or(signal.len()).min(signal.len() - pos);
                let block = Block::new(signal[pos..pos + n].to_vec(), 1, pos as u64).unwrap();
                out.extend_from_slice(ola.process(&block).unwrap().channel(0));
                pos += n;
            }
            out
        };
        let whole = run(&mut std::iter::once(signal.len()));
        let parts = run(&mut cuts.iter().copied().cycle());
        for (p, w) in parts.iter().zip(&whole) {
            prop_assert!((p - w).abs() <= 1e-9);
        }
    }

    #[test]
    fn trigger_detection_is_independent_of_block_partition(
        levels in prop::collection::vec(prop::sample::select(vec![0.0f64, 0.0, 0.0, 1.0, 3.0, 5.0]), 1..200),
        cut in 0usize..200,
    ) {
        let cut = cut.min(levels.len());
        let mut whole = TriggerDetector::new(0.5);
        let all = whole.process(&levels, 0);
        let mut split = TriggerDetector::new(0.5);
        let mut got = split.process(&levels[..cut], 0);
        got.extend(split.process(&levels[cut..], cut as u64));
        prop_assert_eq!(got, all);
    }
}
