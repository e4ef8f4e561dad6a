//! Streaming all-to-all functional connectivity.
//!
//! This crate holds the numerical side of the engine and builds without the
//! standard library (only `alloc` is required). Disable the default features
//! to use it in a `no_std` environment:
//!
//! ```toml
//! connstream-core = { version = "0.1", default-features = false }
//! ```
//!
//! The `parallel` feature (on by default) spreads per-trial spectra, pair
//! accumulation and finalization over a rayon worker pool.
//!
//! Layout:
//!
//! - [`types`]: epochs, frequency bands, metric identifiers and networks.
//! - [`network`]: normalization, thresholding and band averaging.
//! - [`fft`]: the FFT backend abstraction and the built-in backend.
//! - [`spectral`]: per-trial spectra and the running CSD/PSD sums.
//! - [`metrics`]: the ten connectivity metrics and the per-trial cache.
//! - [`preprocess`]: FIR design, overlap-add filtering, triggers and epochs.
//! - [`inverse`]: noise covariance and the minimum-norm inverse operator.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod error;
pub mod fft;
pub mod inverse;
mod linalg;
pub mod metrics;
pub mod network;
mod par;
pub mod preprocess;
pub mod spectral;
pub mod types;

pub use error::{Error, Result};
pub use fft::{BuiltinFft, FftBackend, FftPlan};
pub use metrics::{CacheConfig, TrialCache};
pub use network::{band_average, normalize_network, threshold_network, PerBinWeights};
pub use spectral::{SegmentMode, SpectralConfig, Spectra, SpectrumSet};
pub use types::{
    ConnectivityNetwork, Edge, EpochMatrix, FrequencyBand, MetricId, Node, XCorEdgeValue,
};
