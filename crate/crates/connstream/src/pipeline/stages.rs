//! Per-stage state. Each stage is plain data plus a `process` method so the
//! threaded pipeline and the offline path run the same code.

use std::collections::BTreeMap;
use std::sync::Arc;

use connstream_core::inverse::{apply_inverse, build_inverse, cluster_forward, CovarianceEstimator, ForwardModel, InverseOperator, NoiseCovariance};
use connstream_core::preprocess::{Block, EpochEvent, Epocher, EventMarker, OverlapAddFilter, TriggerDetector};
use connstream_core::{normalize_network, threshold_network, ConnectivityNetwork, EpochMatrix, FftBackend, FrequencyBand, MetricId, TrialCache};

use crate::config::{ConnectivityConfig, InverseConfig, PipelineConfig};
use crate::control::ControlMessage;
use crate::error::{Error, Result};
use crate::format::{fwdx, RawHeader};

/// Static facts about the incoming stream.
#[derive(Debug, Clone)]
pub struct StreamInfo {
    pub sfreq: f64,
    pub n_channels: usize,
    pub trigger_channel: Option<usize>,
    /// Channels cut into epochs.
    pub picks: Vec<usize>,
    pub positions: Option<Vec<[f64; 3]>>,
}

impl StreamInfo {
    pub fn new(config: &PipelineConfig, header: &RawHeader) -> Result<Self> {
        header.validate()?;
        let trigger_channel = config.trigger.channel.or_else(|| header.trigger_channels.first().copied());
        if trigger_channel.is_some_and(|c| c >= header.n_channels) {
            return Err(Error::Config(format!("trigger channel {} not in the recording", trigger_channel.unwrap())));
        }
        let picks = match &config.epoch.picks {
            Some(p) => p.clone(),
            None => header.data_channels(),
        };
        if picks.is_empty() || picks.iter().any(|&c| c >= header.n_channels) {
            return Err(Error::Config("picked channels out of range".into()));
        }
        let positions = header
            .positions
            .as_ref()
            .map(|p| picks.iter().map(|&c| p[c]).collect());
        Ok(Self {
            sfreq: header.sfreq,
            n_channels: header.n_channels,
            trigger_channel,
            picks,
            positions,
        })
    }

    /// Processing time available per block, in milliseconds.
    pub fn budget_ms(&self, block_size: usize) -> f64 {
        1000.0 * block_size as f64 / self.sfreq
    }
}

/// FIR filtering and trigger detection.
pub struct FilterStage {
    filter: Option<OverlapAddFilter>,
    detector: TriggerDetector,
    trigger_channel: Option<usize>,
}

impl FilterStage {
    pub fn new(config: &PipelineConfig, info: &StreamInfo, backend: Arc<dyn FftBackend>) -> Result<Self> {
        let filter = match &config.filter {
            Some(f) => {
                let fir = f.design(info.sfreq)?;
                let passthrough: Vec<usize> = info.trigger_channel.into_iter().collect();
                Some(OverlapAddFilter::new(&fir, info.n_channels, &passthrough, backend)?)
            }
            None => None,
        };
        Ok(Self {
            filter,
            detector: TriggerDetector::new(config.trigger.threshold),
            trigger_channel: info.trigger_channel,
        })
    }

    /// Samples between a raw input sample and its filtered output.
    pub fn delay(&self) -> usize {
        self.filter.as_ref().map_or(0, OverlapAddFilter::delay)
    }

    pub fn process(&mut self, block: &Block) -> Result<(Block, Vec<EventMarker>)> {
        let out = match self.filter.as_mut() {
            Some(f) => f.process(block)?,
            None => block.clone(),
        };
        // The trigger channel passes the filter with the same delay as the
        // data, so markers line up with the filtered samples.
        let markers = match self.trigger_channel {
            Some(c) => self.detector.process(out.channel(c), out.first_sample),
            None => Vec::new(),
        };
        Ok((out, markers))
    }
}

/// Output of the epoch stage, in stream order.
#[derive(Debug, Clone)]
pub enum EpochItem {
    /// A noise covariance estimate over samples before `at_sample`.
    Covariance { seq: u64, at_sample: u64, cov: NoiseCovariance },
    Trial { event: EpochEvent, window_end: i64 },
}

/// Epoching plus the covariance estimates for the inverse operator.
pub struct EpochStage {
    epocher: Epocher,
    covariance: Option<CovarianceEstimator>,
    next_seq: u64,
}

impl EpochStage {
    pub fn new(config: &PipelineConfig, info: &StreamInfo) -> Result<Self> {
        let spec = config.epoch.spec();
        let (_, len) = spec.sample_range(info.sfreq);
        let capacity = config
            .epoch
            .buffer_samples
            .unwrap_or_else(|| (4 * len).max(2 * config.block_size));
        let epocher = Epocher::new(spec, info.sfreq, info.n_channels, info.picks.clone(), capacity)?;
        let covariance = match &config.inverse {
            Some(inv) if inv.forward.is_some() => Some(CovarianceEstimator::new(info.picks.clone(), inv.covariance_samples)?),
            _ => None,
        };
        Ok(Self {
            epocher,
            covariance,
            next_seq: 1,
        })
    }

    pub fn lost(&self) -> u64 {
        self.epocher.lost()
    }

    pub fn process(&mut self, block: &Block, markers: &[EventMarker]) -> Result<Vec<EpochItem>> {
        let mut out = Vec::new();
        if let Some(est) = self.covariance.as_mut() {
            for (cov, at_sample) in est.push(block)? {
                out.push(EpochItem::Covariance {
                    seq: self.next_seq,
                    at_sample,
                    cov,
                });
                self.next_seq += 1;
            }
        }
        self.epocher.add_markers(markers);
        for event in self.epocher.push_block(block)? {
            let window_end = self.epocher.window_end(event.marker());
            out.push(EpochItem::Trial { event, window_end });
        }
        Ok(out)
    }
}

/// Everything needed to build operators.
#[derive(Debug, Clone)]
pub struct OperatorSource {
    pub forward: Option<ForwardModel>,
    pub snr: f64,
}

impl OperatorSource {
    /// Loads the model files and returns the builder together with the
    /// operator used before the first covariance estimate.
    pub fn load(config: &InverseConfig, n_picks: usize) -> Result<(Self, InverseOperator)> {
        if let Some(path) = &config.forward {
            let mut fwd = fwdx::read_forward(path)?;
            if config.cluster {
                fwd = cluster_forward(&fwd)?;
            }
            if fwd.n_sensors() != n_picks {
                return Err(Error::Config(format!(
                    "forward model has {} sensors, {} channels are picked",
                    fwd.n_sensors(),
                    n_picks
                )));
            }
            let initial = build_inverse(&fwd, &NoiseCovariance::identity(n_picks), config.snr)?;
            return Ok((
                Self {
                    forward: Some(fwd),
                    snr: config.snr,
                },
                initial,
            ));
        }
        let path = config.operator.as_ref().ok_or_else(|| Error::Config("inverse needs a forward model or an operator".into()))?;
        let op = fwdx::read_inverse(path)?;
        if op.n_sensors() != n_picks {
            return Err(Error::Config(format!(
                "inverse operator expects {} sensors, {} channels are picked",
                op.n_sensors(),
                n_picks
            )));
        }
        Ok((
            Self {
                forward: None,
                snr: config.snr,
            },
            op,
        ))
    }

    pub fn build(&self, cov: &NoiseCovariance) -> Result<InverseOperator> {
        let fwd = self.forward.as_ref().ok_or_else(|| Error::Pipeline("no forward model to rebuild from".into()))?;
        Ok(build_inverse(fwd, cov, self.snr)?)
    }
}

/// Chooses the operator for each trial: the newest one whose covariance
/// ended at or before the trial's last sample. Operators may be built
/// elsewhere and arrive late; the choice does not depend on when they
/// arrive.
pub struct OperatorSchedule {
    announced: Vec<(u64, u64)>,
    operators: BTreeMap<u64, Arc<InverseOperator>>,
}

impl OperatorSchedule {
    pub fn new(initial: InverseOperator) -> Self {
        let mut operators = BTreeMap::new();
        operators.insert(0, Arc::new(initial));
        Self {
            announced: vec![(0, 0)],
            operators,
        }
    }

    pub fn announce(&mut self, seq: u64, at_sample: u64) {
        self.announced.push((seq, at_sample));
    }

    pub fn insert(&mut self, seq: u64, op: Arc<InverseOperator>) {
        self.operators.insert(seq, op);
    }

    /// Operator sequence number for a trial ending at `window_end`.
    pub fn select(&self, window_end: i64) -> u64 {
        self.announced
            .iter()
            .filter(|&&(_, at)| at as i64 <= window_end)
            .map(|&(seq, _)| seq)
            .max()
            .unwrap_or(0)
    }

    pub fn get(&self, seq: u64) -> Option<Arc<InverseOperator>> {
        self.operators.get(&seq).cloned()
    }

    /// Forgets operators older than `seq`; trials only move forward.
    pub fn prune_below(&mut self, seq: u64) {
        self.operators = self.operators.split_off(&seq);
        self.announced.retain(|&(s, _)| s >= seq);
    }

    pub fn apply(&self, seq: u64, epoch: &EpochMatrix) -> Result<EpochMatrix> {
        let op = self.get(seq).ok_or_else(|| Error::Pipeline(format!("operator {seq} missing")))?;
        Ok(apply_inverse(&op, epoch)?)
    }
}

/// Running connectivity plus the live-mutable parameters.
pub struct ConnectivityStage {
    cache: TrialCache,
    config: ConnectivityConfig,
    sfreq: f64,
    pub metric: MetricId,
    pub band: FrequencyBand,
    pub threshold: f64,
}

impl ConnectivityStage {
    pub fn new(
        config: &ConnectivityConfig,
        sfreq: f64,
        positions: Option<Vec<[f64; 3]>>,
        backend: Arc<dyn FftBackend>,
    ) -> Result<Self> {
        let mut cache = TrialCache::new(backend, config.cache())?;
        cache.set_positions(positions);
        Ok(Self {
            cache,
            band: config.band(sfreq)?,
            metric: config.metric,
            threshold: config.threshold,
            config: config.clone(),
            sfreq,
        })
    }

    pub fn cache(&self) -> &TrialCache {
        &self.cache
    }

    /// Applies a control message. On error nothing changed.
    pub fn apply(&mut self, msg: &ControlMessage) -> Result<()> {
        match *msg {
            ControlMessage::SetMetric(m) => self.metric = m,
            ControlMessage::SetBand { lo, hi } => self.band = self.config.band_for(lo, hi, self.sfreq)?,
            ControlMessage::SetThreshold(t) => {
                if !(t > 0.0 && t <= 1.0) {
                    return Err(Error::Config(format!("threshold {t} outside (0, 1]")));
                }
                self.threshold = t;
            }
            ControlMessage::SetAverageCount(n) => self.cache.set_max_trials(Some(n))?,
            ControlMessage::ResetAccumulators => self.cache.reset(),
        }
        Ok(())
    }

    /// Adds a trial and returns the published network, or `None` while too
    /// few trials have arrived for the current metric.
    pub fn process(&mut self, epoch: EpochMatrix) -> Result<Option<ConnectivityNetwork>> {
        match self.cache.update_and_finalize(epoch, self.metric, &self.band) {
            Ok(net) => Ok(Some(self.publishable(net)?)),
            Err(connstream_core::Error::DegenerateTrialCount { .. }) => Ok(None),
            Err(e) => Err(e.into()),
        }
    }

    /// Normalization and thresholding as configured.
    pub fn publishable(&self, net: ConnectivityNetwork) -> Result<ConnectivityNetwork> {
        finish_network(net, self.config.normalize, self.threshold)
    }
}

pub fn finish_network(mut net: ConnectivityNetwork, normalize: bool, threshold: f64) -> Result<ConnectivityNetwork> {
    if normalize {
        net = normalize_network(net);
    }
    Ok(threshold_network(net, threshold)?)
}
