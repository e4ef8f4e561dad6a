mod common;

use connstream_core::inverse::{
    apply_inverse, apply_inverse_block, build_inverse, cluster_forward, covariance_of, estimate_covariance,
    lambda_from_snr, CovarianceEstimator, ForwardModel, InverseOperator, NoiseCovariance,
};
use connstream_core::preprocess::Block;
use connstream_core::{EpochMatrix, Error};
use rand::RngExt;

fn random_matrix(seed: u64, rows: usize, cols: usize) -> Vec<f64> {
    let mut r = common::rng(seed);
    (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn forward(seed: u64, n_sensors: usize, n_sources: usize) -> ForwardModel {
    let positions = (0..n_sources).map(|s| [s as f64 * 0.01, 0.0, 0.0]).collect();
    ForwardModel::new(random_matrix(seed, n_sensors, n_sources), n_sensors, n_sources, positions, None).unwrap()
}

fn matmul(a: &[f64], b: &[f64], n: usize, k: usize, m: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * m];
    for i in 0..n {
        for j in 0..m {
            out[i * m + j] = (0..k).map(|t| a[i * k + t] * b[t * m + j]).sum();
        }
    }
    out
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

/// A random symmetric positive definite matrix `B Bᵀ + n I`.
fn spd(seed: u64, n: usize) -> NoiseCovariance {
    let b = random_matrix(seed, n, n);
    let mut c = matmul(&b, &transpose(&b, n, n), n, n, n);
    (0..n).for_each(|i| c[i * n + i] += n as f64);
    NoiseCovariance::new(c, n, 1000).unwrap()
}

#[test]
fn lambda_follows_snr() {
    assert_eq!(lambda_from_snr(1.0), 1.0);
    assert_eq!(lambda_from_snr(3.0), 1.0 / 9.0);
    let op = build_inverse(&forward(1, 6, 12), &NoiseCovariance::identity(6), 1.0).unwrap();
    assert_eq!(op.lambda, 1.0);
    assert_eq!(op.snr_assumed, 1.0);
}

#[test]
fn operator_solves_regularized_system() {
    let (n, p) = (12, 40);
    let fwd = forward(7, n, p);
    let cov = spd(8, n);
    let snr = 3.0;
    let op = build_inverse(&fwd, &cov, snr).unwrap();
    // Independent assembly of G Gᵀ + λ C' with C' scaled to trace(G Gᵀ).
    let g = fwd.gain();
    let mut a = matmul(g, &transpose(g, n, p), n, p, n);
    let gg_trace: f64 = (0..n).map(|i| a[i * n + i]).sum();
    let scale = lambda_from_snr(snr) * gg_trace / cov.trace();
    for (x, c) in a.iter_mut().zip(cov.data()) {
        *x += scale * c;
    }
    let x = transpose(op.matrix(), p, n);
    let ax = matmul(&a, &x, n, n, p);
    let g_norm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let residual = ax.iter().zip(g).fold(0.0f64, |m, (u, v)| m.max((u - v).abs()));
    assert!(residual / g_norm <= 1e-8, "residual {residual}");
}

#[test]
fn small_lambda_gives_pseudo_inverse() {
    // Rows of a permutation-with-signs matrix are orthonormal.
    let (n, p) = (4, 7);
    let mut g = vec![0.0; n * p];
    for (row, (col, sign)) in [(5, 1.0), (0, -1.0), (3, 1.0), (6, -1.0)].iter().enumerate() {
        g[row * p + col] = *sign;
    }
    let fwd = ForwardModel::new(g.clone(), n, p, vec![[0.0; 3]; p], None).unwrap();
    let op = build_inverse(&fwd, &NoiseCovariance::identity(n), 1e6).unwrap();
    let mg = matmul(op.matrix(), &g, p, n, p);
    let mut r = common::rng(4);
    let a: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let s = matmul(&transpose(&g, n, p), &a, p, n, 1);
    let back = matmul(&mg, &s, p, p, 1);
    for (u, v) in back.iter().zip(&s) {
        assert!((u - v).abs() <= 1e-8);
    }
}

#[test]
fn singular_system_is_reported() {
    let n = 3;
    let fwd = ForwardModel::new(vec![1.0, 1.0, 1.0], n, 1, vec![[0.0; 3]], None).unwrap();
    let zero = NoiseCovariance::new(vec![0.0; 9], n, 10).unwrap();
    let err = build_inverse(&fwd, &zero, 2.0).unwrap_err();
    assert!(matches!(err, Error::Singular { .. }));
    assert!(build_inverse(&fwd, &NoiseCovariance::identity(2), 2.0).is_err());
    assert!(build_inverse(&fwd, &NoiseCovariance::identity(3), 0.0).is_err());
}

#[test]
fn rebuild_is_bit_stable() {
    let fwd = forward(11, 20, 60);
    let cov = spd(12, 20);
    let a = build_inverse(&fwd, &cov, 3.0).unwrap();
    let b = build_inverse(&fwd, &cov, 3.0).unwrap();
    assert_eq!(a, b);
}

#[test]
fn covariance_of_independent_unit_noise() {
    let mut r = common::rng(31);
    let half_width = 3.0f64.sqrt();
    let rows: Vec<Vec<f64>> = (0..4)
        .map(|_| (0..100_000).map(|_| r.random_range(-half_width..half_width)).collect())
        .collect();
    let c = covariance_of(&rows);
    for i in 0..4 {
        assert!((c.get(i, i) - 1.0).abs() < 0.05);
        for j in 0..4 {
            assert_eq!(c.get(i, j), c.get(j, i));
            if i != j {
                assert!(c.get(i, j).abs() < 0.05);
            }
        }
    }
}

#[test]
fn covariance_degenerate_inputs() {
    let c = covariance_of(&[vec![2.0; 50], vec![-1.0; 50]]);
    assert!(c.data().iter().all(|&v| v == 0.0));
    let x: Vec<f64> = (0..50).map(|t| (t as f64 * 0.3).sin()).collect();
    let c = covariance_of(&[x.clone(), x]);
    let v = c.get(0, 0);
    assert!(v > 0.0);
    for (i, j) in [(0, 1), (1, 0), (1, 1)] {
        assert_eq!(c.get(i, j), v);
    }
}

#[test]
fn covariance_is_emitted_every_target() {
    let n = 1000;
    let data = random_matrix(40, 3, n);
    let whole = Block::new(data, 3, 0).unwrap();
    let mut est = CovarianceEstimator::new(vec![0, 2], 300).unwrap();
    let mut ends = Vec::new();
    let mut covs = Vec::new();
    for s in (0..n).step_by(128) {
        for (c, end) in est.push(&whole.slice(s, 128.min(n - s))).unwrap() {
            covs.push(c);
            ends.push(end);
        }
    }
    assert_eq!(ends, vec![300, 600, 900]);
    assert_eq!(est.buffered(), 100);
    // Each estimate equals the covariance of its own segment.
    let direct = covariance_of(&[whole.channel(0)[300..600].to_vec(), whole.channel(2)[300..600].to_vec()]);
    for (a, b) in covs[1].data().iter().zip(direct.data()) {
        assert!((a - b).abs() < 1e-12);
    }
    let batch = estimate_covariance(&[whole], vec![0, 2], 300).unwrap();
    assert_eq!(batch, covs);
    assert!(CovarianceEstimator::new(vec![0, 1, 2], 2).unwrap().underdetermined());
}

#[test]
fn applied_operator_shapes_and_identities() {
    let n_sensors = 32;
    let op = build_inverse(&forward(3, n_sensors, 265), &NoiseCovariance::identity(n_sensors), 3.0).unwrap();
    let epoch = EpochMatrix::new(random_matrix(5, n_sensors, 250), n_sensors, 600.0).unwrap();
    let src = apply_inverse(&op, &epoch).unwrap();
    assert_eq!((src.n_channels(), src.n_samples()), (265, 250));
    assert_eq!(src.sfreq, 600.0);

    let zero = EpochMatrix::new(vec![0.0; n_sensors * 250], n_sensors, 600.0).unwrap();
    assert!(apply_inverse(&op, &zero).unwrap().data().iter().all(|&v| v == 0.0));

    let mut eye = vec![0.0; 9];
    (0..3).for_each(|i| eye[i * 3 + i] = 1.0);
    let id = InverseOperator::from_matrix(eye, 3, 3, vec![[0.0; 3]; 3]).unwrap();
    let e = EpochMatrix::new(random_matrix(6, 3, 20), 3, 100.0).unwrap();
    assert_eq!(apply_inverse(&id, &e).unwrap().data(), e.data());

    let wrong = EpochMatrix::new(vec![0.0; 40], 2, 100.0).unwrap();
    assert!(apply_inverse(&id, &wrong).is_err());
}

#[test]
fn block_application_uses_picked_channels() {
    let mut eye = vec![0.0; 4];
    eye[0] = 1.0;
    eye[3] = 2.0;
    let op = InverseOperator::from_matrix(eye, 2, 2, vec![[0.0; 3]; 2]).unwrap();
    let block = Block::new(random_matrix(9, 3, 10), 3, 77).unwrap();
    let out = apply_inverse_block(&op, &block, &[2, 0]).unwrap();
    assert_eq!(out.first_sample, 77);
    assert_eq!(out.channel(0), block.channel(2));
    let doubled: Vec<f64> = block.channel(0).iter().map(|v| 2.0 * v).collect();
    assert_eq!(out.channel(1), doubled.as_slice());
    assert!(apply_inverse_block(&op, &block, &[0, 5]).is_err());
}

#[test]
fn clustering_averages_columns_per_label() {
    let (n, p) = (3, 5);
    let g = random_matrix(13, n, p);
    let positions = (0..p).map(|s| [s as f64, 0.0, 1.0]).collect();
    let fwd = ForwardModel::new(g.clone(), n, p, positions, Some(vec![7, 2, 7, 2, 9])).unwrap();
    let c = cluster_forward(&fwd).unwrap();
    assert_eq!(c.n_sources(), 3);
    assert_eq!(c.labels.as_deref(), Some(&[2, 7, 9][..]));
    for r in 0..n {
        let row = &c.gain()[r * 3..r * 3 + 3];
        assert!((row[0] - (g[r * p + 1] + g[r * p + 3]) / 2.0).abs() < 1e-15);
        assert!((row[1] - (g[r * p] + g[r * p + 2]) / 2.0).abs() < 1e-15);
        assert_eq!(row[2], g[r * p + 4]);
    }
    assert_eq!(c.positions[0], [2.0, 0.0, 1.0]);
    assert!(cluster_forward(&forward(1, 2, 2)).is_err());
}
