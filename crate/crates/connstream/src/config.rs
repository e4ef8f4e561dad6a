//! Pipeline configuration, read from TOML or JSON.
//!
//! ```toml
//! block_size = 500
//!
//! [filter]
//! kind = "highpass"
//! cutoffs = [2.0]
//! transition_bw = 2.0
//!
//! [epoch]
//! tmin = -0.1
//! tmax = 0.4
//! baseline = [-0.05, 0.0]
//!
//! [connectivity]
//! metric = "IMAGCOHY"
//! band = [18, 30]
//! threshold = 0.05
//! ```
//!
//! Every section and field is optional; see the `Default` impls.

use std::fs;
use std::path::{Path, PathBuf};

use connstream_core::preprocess::{design_fir, taps_for_transition, EpochSpec, FilterKind, FirFilter};
use connstream_core::{CacheConfig, FrequencyBand, MetricId, SegmentMode, SpectralConfig};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Samples per streamed block.
    pub block_size: usize,
    /// Capacity of every inter-stage queue, in messages.
    pub queue_capacity: usize,
    /// Drop the oldest raw block instead of blocking when the first queue
    /// is full.
    pub lossy: bool,
    pub fft_backend: String,
    pub filter: Option<FilterConfig>,
    pub trigger: TriggerConfig,
    pub epoch: EpochConfig,
    pub inverse: Option<InverseConfig>,
    pub connectivity: ConnectivityConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            block_size: 500,
            queue_capacity: 8,
            lossy: false,
            fft_backend: "default".into(),
            filter: None,
            trigger: TriggerConfig::default(),
            epoch: EpochConfig::default(),
            inverse: None,
            connectivity: ConnectivityConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FilterKindConfig {
    Lowpass,
    Highpass,
    Bandpass,
}

impl From<FilterKindConfig> for FilterKind {
    fn from(k: FilterKindConfig) -> Self {
        match k {
            FilterKindConfig::Lowpass => FilterKind::Lowpass,
            FilterKindConfig::Highpass => FilterKind::Highpass,
            FilterKindConfig::Bandpass => FilterKind::Bandpass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FilterConfig {
    pub kind: FilterKindConfig,
    /// Passband edges in Hz.
    pub cutoffs: Vec<f64>,
    pub transition_bw: f64,
    /// Defaults to the smallest length reaching `transition_bw`.
    #[serde(default)]
    pub n_taps: Option<usize>,
}

impl FilterConfig {
    pub fn design(&self, sfreq: f64) -> Result<FirFilter> {
        let n_taps = self
            .n_taps
            .unwrap_or_else(|| taps_for_transition(self.transition_bw, sfreq));
        Ok(design_fir(self.kind.into(), &self.cutoffs, self.transition_bw, n_taps, sfreq)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    pub threshold: f64,
    /// Trigger channel; defaults to the recording's first trigger channel.
    pub channel: Option<usize>,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            channel: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EpochConfig {
    pub tmin: f64,
    pub tmax: f64,
    pub baseline: Option<[f64; 2]>,
    pub crop: Option<[f64; 2]>,
    pub reject_channel: Option<usize>,
    pub reject_threshold: Option<f64>,
    pub reject_exclude: Option<[f64; 2]>,
    pub event_codes: Vec<i64>,
    /// Channels entering connectivity; defaults to every non-trigger channel.
    pub picks: Option<Vec<usize>>,
    /// Ring buffer length; defaults to four epoch lengths or two blocks,
    /// whichever is larger.
    pub buffer_samples: Option<usize>,
}

impl Default for EpochConfig {
    fn default() -> Self {
        Self {
            tmin: 0.0,
            tmax: 0.16,
            baseline: None,
            crop: None,
            reject_channel: None,
            reject_threshold: None,
            reject_exclude: Some([0.0, 0.010]),
            event_codes: Vec::new(),
            picks: None,
            buffer_samples: None,
        }
    }
}

impl EpochConfig {
    pub fn spec(&self) -> EpochSpec {
        let mut spec = EpochSpec::new(self.tmin, self.tmax);
        spec.baseline = self.baseline.map(|[a, b]| (a, b));
        spec.crop = self.crop.map(|[a, b]| (a, b));
        spec.reject_channel = self.reject_channel;
        if let Some(t) = self.reject_threshold {
            spec.reject_threshold = t;
        }
        spec.reject_exclude = self.reject_exclude.map(|[a, b]| (a, b));
        spec.event_codes = self.event_codes.clone();
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseConfig {
    /// Leadfield (`.fwdx`); the operator is rebuilt from it on every new
    /// covariance estimate.
    pub forward: Option<PathBuf>,
    /// Fixed precomputed operator (`.fwdx`), used when no forward model is
    /// given.
    pub operator: Option<PathBuf>,
    pub snr: f64,
    /// Average leadfield columns per label before building the operator.
    pub cluster: bool,
    /// Samples per covariance estimate.
    pub covariance_samples: usize,
}

impl Default for InverseConfig {
    fn default() -> Self {
        Self {
            forward: None,
            operator: None,
            snr: 3.0,
            cluster: false,
            covariance_samples: 6000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeConfig {
    Fixed,
    Welch,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConnectivityConfig {
    #[serde(serialize_with = "metric_out", deserialize_with = "metric_in")]
    pub metric: MetricId,
    /// Inclusive bin range averaged into edge weights.
    pub band: [usize; 2],
    pub nfft: usize,
    /// Fraction of strongest edges kept in published networks.
    pub threshold: f64,
    pub normalize: bool,
    /// Keep per-trial intermediates so metric switches need no new FFTs.
    pub storage: bool,
    /// Trial average count: only the most recent trials contribute.
    /// Unbounded by default.
    pub max_trials: Option<usize>,
    pub xcor_max_lag: Option<usize>,
    pub mode: ModeConfig,
    /// Inclusive bin range computed and stored; bands selected later must
    /// lie inside it. `None` stores the whole spectrum.
    pub store_bins: Option<[usize; 2]>,
}

impl Default for ConnectivityConfig {
    fn default() -> Self {
        Self {
            metric: MetricId::Coh,
            band: [18, 30],
            nfft: 600,
            threshold: 1.0,
            normalize: true,
            storage: true,
            max_trials: None,
            xcor_max_lag: None,
            mode: ModeConfig::Fixed,
            store_bins: Some([0, 50]),
        }
    }
}

fn metric_out<S: Serializer>(m: &MetricId, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(m.as_str())
}

fn metric_in<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<MetricId, D::Error> {
    let s = String::deserialize(d)?;
    s.parse().map_err(serde::de::Error::custom)
}

impl ConnectivityConfig {
    pub fn spectral(&self) -> SpectralConfig {
        let mut cfg = SpectralConfig::new(self.nfft).with_mode(match self.mode {
            ModeConfig::Fixed => SegmentMode::Fixed,
            ModeConfig::Welch => SegmentMode::Welch,
        });
        let last = self.nfft / 2;
        if let Some([lo, hi]) = self.store_bins {
            // A stored range reaching past Nyquist is clipped to it.
            cfg = cfg.with_bins(lo.min(last), hi.min(last));
        }
        cfg
    }

    pub fn cache(&self) -> CacheConfig {
        let mut cfg = CacheConfig::new(self.spectral())
            .with_storage(self.storage)
            .with_max_trials(self.max_trials);
        cfg.xcor_max_lag = self.xcor_max_lag;
        cfg
    }

    pub fn band(&self, sfreq: f64) -> Result<FrequencyBand> {
        self.band_for(self.band[0], self.band[1], sfreq)
    }

    /// Checks a band against the stored bin range.
    pub fn band_for(&self, lo: usize, hi: usize, sfreq: f64) -> Result<FrequencyBand> {
        let band = FrequencyBand::new(lo, hi, sfreq / self.nfft as f64).map_err(|e| Error::Config(e.to_string()))?;
        let (first, n) = self.spectral().stored_range();
        if lo < first || hi >= first + n {
            return Err(Error::Config(format!(
                "band {lo}..={hi} outside the stored bins {first}..={}",
                first + n - 1
            )));
        }
        Ok(band)
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads `.json` files as JSON and everything else as TOML.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cfg = match path.extension().and_then(|e| e.to_str()) {
            Some("json") => Self::from_json(&text)?,
            _ => Self::from_toml(&text)?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Checks everything that does not depend on the recording.
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.block_size == 0 {
            return fail("block_size must be at least 1".into());
        }
        if self.queue_capacity == 0 {
            return fail("queue_capacity must be at least 1".into());
        }
        crate::fft::backend(&self.fft_backend)?;
        if !(self.trigger.threshold > 0.0) {
            return fail("trigger threshold must be positive".into());
        }
        self.epoch.spec().validate().map_err(|e| Error::Config(e.to_string()))?;
        let c = &self.connectivity;
        c.spectral().validate().map_err(|e| Error::Config(e.to_string()))?;
        c.band_for(c.band[0], c.band[1], 1.0)?;
        if !(c.threshold > 0.0 && c.threshold <= 1.0) {
            return fail(format!("threshold must be in (0, 1], got {}", c.threshold));
        }
        if c.max_trials == Some(0) {
            return fail("max_trials must be at least 1".into());
        }
        if let Some(inv) = &self.inverse {
            if inv.forward.is_none() && inv.operator.is_none() {
                return fail("inverse needs a forward model or an operator".into());
            }
            if !(inv.snr > 0.0) {
                return fail("inverse snr must be positive".into());
            }
            if inv.covariance_samples < 2 {
                return fail("covariance_samples must be at least 2".into());
            }
        }
        Ok(())
    }
}
