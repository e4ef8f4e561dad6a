//! Network post-processing: normalization, thresholding and band averaging.

use alloc::format;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::error::{param, Result};
use crate::types::{ConnectivityNetwork, FrequencyBand};

/// Divides every weight by the largest absolute weight.
///
/// An all-zero (or edgeless) network is returned unchanged apart from the
/// `normalized` flag.
pub fn normalize_network(mut net: ConnectivityNetwork) -> ConnectivityNetwork {
    let max = net.max_abs_weight();
    if max > 0.0 && max.is_finite() {
        for e in &mut net.edges {
            e.weight /= max;
            if let Some(im) = e.weight_im.as_mut() {
                *im /= max;
            }
        }
    }
    net.normalized = true;
    net
}

/// Number of edges kept by [`threshold_network`] out of `n_edges`.
pub fn kept_edge_count(n_edges: usize, keep_fraction: f64) -> usize {
    if n_edges == 0 {
        return 0;
    }
    let x = keep_fraction * n_edges as f64;
    // Products like 0.1 * 30 land one ulp above the integer.
    let k = libm::ceil(x - x * 1e-12) as usize;
    k.clamp(1, n_edges)
}

/// Keeps the `ceil(keep_fraction * n_edges)` strongest edges by absolute
/// weight. Ties are broken by `(i, j)`; retained edges stay in `(i, j)` order.
pub fn threshold_network(
    mut net: ConnectivityNetwork,
    keep_fraction: f64,
) -> Result<ConnectivityNetwork> {
    if !(keep_fraction > 0.0 && keep_fraction <= 1.0) {
        return Err(param(format!(
            "keep fraction must be in (0, 1], got {keep_fraction}"
        )));
    }
    let k = kept_edge_count(net.edges.len(), keep_fraction);
    if k == net.edges.len() {
        return Ok(net);
    }
    let mut order: Vec<usize> = (0..net.edges.len()).collect();
    let edges = &net.edges;
    order.sort_unstable_by(|&a, &b| {
        let (ea, eb) = (&edges[a], &edges[b]);
        eb.weight
            .abs()
            .partial_cmp(&ea.weight.abs())
            .unwrap_or(Ordering::Equal)
            .then((ea.i, ea.j).cmp(&(eb.i, eb.j)))
    });
    order.truncate(k);
    order.sort_unstable_by_key(|&x| (edges[x].i, edges[x].j));
    net.edges = order.iter().map(|&x| net.edges[x]).collect();
    Ok(net)
}

/// Per-edge values over a contiguous run of frequency bins, edge-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PerBinWeights {
    pub n_edges: usize,
    /// Absolute index of the first column.
    pub first_bin: usize,
    pub n_bins: usize,
    pub values: Vec<f64>,
}

impl PerBinWeights {
    pub fn zeros(n_edges: usize, first_bin: usize, n_bins: usize) -> Self {
        Self {
            n_edges,
            first_bin,
            n_bins,
            values: alloc::vec![0.0; n_edges * n_bins],
        }
    }

    pub fn row(&self, edge: usize) -> &[f64] {
        &self.values[edge * self.n_bins..(edge + 1) * self.n_bins]
    }

    pub fn row_mut(&mut self, edge: usize) -> &mut [f64] {
        &mut self.values[edge * self.n_bins..(edge + 1) * self.n_bins]
    }

    pub fn last_bin(&self) -> usize {
        self.first_bin + self.n_bins - 1
    }
}

/// Arithmetic mean over the band's inclusive bin range, per edge.
pub fn band_average(per_bin: &PerBinWeights, band: &FrequencyBand) -> Result<Vec<f64>> {
    if per_bin.n_bins == 0
        || band.lo_bin < per_bin.first_bin
        || band.hi_bin > per_bin.last_bin()
        || band.lo_bin > band.hi_bin
    {
        return Err(param(format!(
            "band {}..={} outside computed bins {}..{}",
            band.lo_bin,
            band.hi_bin,
            per_bin.first_bin,
            per_bin.first_bin + per_bin.n_bins
        )));
    }
    let lo = band.lo_bin - per_bin.first_bin;
    let hi = band.hi_bin - per_bin.first_bin;
    let n = (hi - lo + 1) as f64;
    Ok((0..per_bin.n_edges)
        .map(|e| per_bin.row(e)[lo..=hi].iter().sum::<f64>() / n)
        .collect())
}
