//! Filter export for inspection: taps plus the magnitude response.

use connstream_core::preprocess::{FilterKind, FirFilter};
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct ResponsePoint {
    pub hz: f64,
    pub gain_db: f64,
}

#[derive(Debug, Serialize)]
pub struct FilterDoc {
    pub kind: &'static str,
    pub cutoffs: Vec<f64>,
    pub transition_bw: f64,
    pub sfreq: f64,
    pub n_taps: usize,
    pub group_delay: usize,
    pub taps: Vec<f64>,
    pub response: Vec<ResponsePoint>,
}

pub fn kind_name(kind: FilterKind) -> &'static str {
    match kind {
        FilterKind::Lowpass => "lowpass",
        FilterKind::Highpass => "highpass",
        FilterKind::Bandpass => "bandpass",
    }
}

/// Taps and the response at `n_points` frequencies from 0 to Nyquist.
pub fn filter_doc(filter: &FirFilter, n_points: usize) -> FilterDoc {
    FilterDoc {
        kind: kind_name(filter.kind),
        cutoffs: filter.cutoffs.clone(),
        transition_bw: filter.transition_bw,
        sfreq: filter.sfreq,
        n_taps: filter.len(),
        group_delay: filter.group_delay(),
        taps: filter.taps().to_vec(),
        response: filter
            .magnitude_response(n_points)
            .into_iter()
            // Exact zeros (DC of a highpass) would be -inf, which JSON lacks.
            .map(|(hz, magnitude)| ResponsePoint {
                hz,
                gain_db: (20.0 * magnitude.log10()).max(-400.0),
            })
            .collect(),
    }
}

pub fn to_json(filter: &FirFilter, n_points: usize) -> String {
    serde_json::to_string_pretty(&filter_doc(filter, n_points)).expect("filter document serializes")
}
