//! How edge weights settle as trials accumulate.
//!
//! The 20 strongest edges (by absolute weight) of the network over all
//! trials are fixed first; the curve is then their mean absolute weight
//! after 1, 2, ... trials. Weights are not normalized, so curves of
//! different trial counts are comparable.

use std::fmt::Write;
use std::sync::Arc;

use connstream_core::{CacheConfig, ConnectivityNetwork, EpochMatrix, FftBackend, FrequencyBand, MetricId, TrialCache};

use crate::error::{Error, Result};

pub const TOP_EDGES: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergenceCurve {
    pub metric: MetricId,
    pub top_edges: Vec<(u32, u32)>,
    /// `(n_trials, mean |w|)` for every trial count the metric supports.
    pub points: Vec<(usize, f64)>,
}

impl ConvergenceCurve {
    pub fn value_at(&self, n_trials: usize) -> Option<f64> {
        self.points.iter().find(|p| p.0 == n_trials).map(|p| p.1)
    }

    /// Largest relative deviation from the value at `from` over all later
    /// trial counts.
    pub fn max_change_after(&self, from: usize) -> Option<f64> {
        let base = self.value_at(from)?;
        let worst = self
            .points
            .iter()
            .filter(|p| p.0 > from)
            .map(|p| (p.1 - base).abs())
            .fold(0.0, f64::max);
        Some(if base == 0.0 { worst } else { worst / base.abs() })
    }
}

/// Indices of the `n` strongest edges, strongest first, ties by `(i, j)`.
pub fn strongest_edges(net: &ConnectivityNetwork, n: usize) -> Vec<(u32, u32)> {
    let mut edges: Vec<_> = net.edges.iter().collect();
    edges.sort_by(|a, b| {
        b.weight
            .abs()
            .total_cmp(&a.weight.abs())
            .then((a.i, a.j).cmp(&(b.i, b.j)))
    });
    edges.iter().take(n).map(|e| (e.i, e.j)).collect()
}

fn mean_abs(net: &ConnectivityNetwork, edges: &[(u32, u32)]) -> f64 {
    let sum: f64 = edges
        .iter()
        .map(|&(i, j)| net.edge(i, j).map_or(0.0, |e| e.weight.abs()))
        .sum();
    sum / edges.len().max(1) as f64
}

/// Curves for `metrics` over `epochs` in order. `config` must have storage
/// on; its trial window is ignored.
pub fn convergence(
    epochs: &[EpochMatrix],
    metrics: &[MetricId],
    config: CacheConfig,
    band: &FrequencyBand,
    backend: Arc<dyn FftBackend>,
) -> Result<Vec<ConvergenceCurve>> {
    if epochs.is_empty() {
        return Err(Error::Core(connstream_core::Error::NoData));
    }
    let config = config.with_storage(true).with_max_trials(None);
    let mut cache = TrialCache::new(backend, config)?;
    for e in epochs {
        cache.add_trial(e.clone())?;
    }
    let mut curves = Vec::with_capacity(metrics.len());
    for &metric in metrics {
        let last = cache.finalize(metric, band)?;
        curves.push(ConvergenceCurve {
            metric,
            top_edges: strongest_edges(&last, TOP_EDGES),
            points: Vec::with_capacity(epochs.len()),
        });
    }
    cache.reset();
    for (k, e) in epochs.iter().enumerate() {
        cache.add_trial(e.clone())?;
        for curve in &mut curves {
            if k + 1 >= curve.metric.min_trials() {
                let net = cache.finalize(curve.metric, band)?;
                curve.points.push((k + 1, mean_abs(&net, &curve.top_edges)));
            }
        }
    }
    Ok(curves)
}

/// CSV with columns `metric,n_trials,mean_abs_weight`.
pub fn to_csv(curves: &[ConvergenceCurve]) -> String {
    let mut out = String::from("metric,n_trials,mean_abs_weight\n");
    for c in curves {
        for (k, v) in &c.points {
            writeln!(out, "{},{k},{v:e}", c.metric.as_str()).unwrap();
        }
    }
    out
}
