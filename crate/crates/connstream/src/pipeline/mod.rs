//! The streaming pipeline: one thread per stage connected by bounded
//! queues.
//!
//! ```text
//! source -> filter -> epoch -> [inverse] -> connectivity -> events
//!                        \-> [operator builder] -/
//! ```
//!
//! The filter stage also detects triggers. The operator builder only runs
//! when a forward model is configured; it rebuilds the inverse operator from
//! every new noise covariance estimate while trials keep flowing. Control
//! messages reach the connectivity stage on their own queue and are applied
//! between trials.

mod stages;

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::Instant;

use connstream_core::metrics::batch_network;
use connstream_core::preprocess::{Block, EpochEvent};
use connstream_core::spectral::SpectralEngine;
use connstream_core::{ConnectivityNetwork, EpochMatrix, FftBackend};
use crossbeam_channel::{bounded, never, select, unbounded, Receiver, Sender, TrySendError};
use serde::Serialize;

pub use stages::{
    finish_network, ConnectivityStage, EpochItem, EpochStage, FilterStage, OperatorSchedule, OperatorSource, StreamInfo,
};

use crate::config::PipelineConfig;
use crate::control::{Ack, ControlRequest};
use crate::error::{Error, Result};
use crate::format::{network_json, RawRecording};

/// Processing time of one stage for one block (or one trial, for the
/// stages downstream of epoching).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageTiming {
    pub stage: &'static str,
    /// Index of the block that completed the work.
    pub block: u64,
    pub trial: Option<u64>,
    pub ms: f64,
    /// Real time covered by one block.
    pub budget_ms: f64,
}

impl StageTiming {
    pub fn over_budget(&self) -> bool {
        self.ms > self.budget_ms
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("timing serializes")
    }
}

/// A network ready to send, serialized once by the connectivity stage.
#[derive(Debug, Clone)]
pub struct Published {
    /// Trial that produced the network.
    pub trial: u64,
    pub network: Arc<ConnectivityNetwork>,
    pub json: Arc<String>,
}

#[derive(Debug, Clone)]
pub enum PipelineEvent {
    Network(Published),
    Timing(StageTiming),
    Ack(Ack),
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct PipelineSummary {
    pub blocks: u64,
    pub accepted: u64,
    pub rejected: u64,
    /// Trials whose data had left the epoch buffer.
    pub lost: u64,
    pub networks: u64,
    /// Raw blocks dropped in lossy mode.
    pub dropped_blocks: u64,
    /// Operator rebuilds that failed; the previous operator stayed in use.
    pub failed_operator_builds: u64,
    /// Timings above the block budget, per stage.
    pub over_budget: Vec<(String, u64)>,
}

#[derive(Default)]
struct StageStats {
    name: &'static str,
    blocks: u64,
    accepted: u64,
    rejected: u64,
    lost: u64,
    networks: u64,
    failed_builds: u64,
    over_budget: u64,
}

type Stage = JoinHandle<Result<StageStats>>;

/// A running pipeline. Drain `events` until it disconnects, then `join`.
pub struct PipelineHandle {
    pub events: Receiver<PipelineEvent>,
    pub control: Sender<ControlRequest>,
    threads: Vec<(&'static str, Stage)>,
    source: Option<JoinHandle<Result<()>>>,
    dropped: Arc<AtomicU64>,
}

/// Everything the stages need, resolved before any thread starts so that
/// configuration errors surface synchronously.
struct Prepared {
    info: StreamInfo,
    budget_ms: f64,
    filter: FilterStage,
    epoch: EpochStage,
    inverse: Option<(OperatorSource, OperatorSchedule)>,
    connectivity: ConnectivityStage,
}

fn prepare(config: &PipelineConfig, info: StreamInfo) -> Result<Prepared> {
    config.validate()?;
    let backend = crate::fft::backend(&config.fft_backend)?;
    let filter = FilterStage::new(config, &info, backend.clone())?;
    let epoch = EpochStage::new(config, &info)?;
    let (inverse, positions) = match &config.inverse {
        Some(inv) => {
            let (source, initial) = OperatorSource::load(inv, info.picks.len())?;
            let positions = Some(initial.positions.clone());
            (Some((source, OperatorSchedule::new(initial))), positions)
        }
        None => (None, info.positions.clone()),
    };
    let connectivity = ConnectivityStage::new(&config.connectivity, info.sfreq, positions, backend)?;
    Ok(Prepared {
        budget_ms: info.budget_ms(config.block_size),
        info,
        filter,
        epoch,
        inverse,
        connectivity,
    })
}

fn timing(stage: &'static str, block: u64, trial: Option<u64>, start: Instant, budget_ms: f64) -> StageTiming {
    StageTiming {
        stage,
        block,
        trial,
        ms: start.elapsed().as_secs_f64() * 1000.0,
        budget_ms,
    }
}

/// Starts the pipeline on `source`, which yields consecutive blocks of the
/// stream described by `info`.
pub fn spawn<I>(config: &PipelineConfig, info: StreamInfo, source: I) -> Result<PipelineHandle>
where
    I: Iterator<Item = Result<Block>> + Send + 'static,
{
    let p = prepare(config, info)?;
    let cap = config.queue_capacity;
    let budget = p.budget_ms;
    let (events_tx, events) = unbounded();
    let (control_tx, control_rx) = unbounded::<ControlRequest>();
    let (raw_tx, raw_rx) = bounded::<Result<Block>>(cap);
    let (filt_tx, filt_rx) = bounded(cap);
    let (ep_tx, ep_rx) = bounded::<(u64, EpochItem)>(cap);
    let dropped = Arc::new(AtomicU64::new(0));
    let mut threads: Vec<(&'static str, Stage)> = Vec::new();

    let source = {
        let lossy = config.lossy.then(|| raw_rx.clone());
        let dropped = dropped.clone();
        thread::Builder::new()
            .name("source".into())
            .spawn(move || {
                for item in source {
                    let failed = item.is_err();
                    let sent = match &lossy {
                        None => raw_tx.send(item).is_ok(),
                        // Never blocks: a full queue loses its oldest block.
                        Some(rx) => {
                            let mut item = item;
                            loop {
                                match raw_tx.try_send(item) {
                                    Ok(()) => break true,
                                    Err(TrySendError::Full(back)) => {
                                        if rx.try_recv().is_ok() {
                                            dropped.fetch_add(1, Ordering::Relaxed);
                                        }
                                        item = back;
                                    }
                                    Err(TrySendError::Disconnected(_)) => break false,
                                }
                            }
                        }
                    };
                    if !sent || failed {
                        break;
                    }
                }
                Ok(())
            })
            .map_err(|e| Error::Pipeline(e.to_string()))?
    };

    let mut filter = p.filter;
    let tx = events_tx.clone();
    threads.push(("filter", spawn_stage("filter", move || {
        let mut stats = StageStats { name: "filter", ..Default::default() };
        for (k, item) in raw_rx.iter().enumerate() {
            let block = item?;
            let start = Instant::now();
            let out = filter.process(&block)?;
            let t = timing("filter", k as u64, None, start, budget);
            stats.blocks += 1;
            stats.over_budget += t.over_budget() as u64;
            let _ = tx.send(PipelineEvent::Timing(t));
            if filt_tx.send((k as u64, out)).is_err() {
                break;
            }
        }
        Ok(stats)
    })?));

    let mut epoch = p.epoch;
    let tx = events_tx.clone();
    let (cov_tx, cov_rx) = unbounded();
    let building = p.inverse.as_ref().is_some_and(|(s, _)| s.forward.is_some());
    threads.push(("epoch", spawn_stage("epoch", move || {
        let mut stats = StageStats { name: "epoch", ..Default::default() };
        'blocks: for (k, (block, markers)) in filt_rx.iter() {
            let start = Instant::now();
            let items = epoch.process(&block, &markers)?;
            let t = timing("epoch", k, None, start, budget);
            stats.over_budget += t.over_budget() as u64;
            let _ = tx.send(PipelineEvent::Timing(t));
            for item in items {
                if let EpochItem::Covariance { seq, cov, .. } = &item {
                    if building {
                        let _ = cov_tx.send((*seq, cov.clone()));
                    }
                }
                if let EpochItem::Trial { event, .. } = &item {
                    match event {
                        EpochEvent::Accepted { .. } => stats.accepted += 1,
                        EpochEvent::Rejected { .. } => stats.rejected += 1,
                    }
                }
                if ep_tx.send((k, item)).is_err() {
                    break 'blocks;
                }
            }
        }
        stats.lost = epoch.lost();
        Ok(stats)
    })?));

    let trials_rx = match p.inverse {
        None => ep_rx,
        Some((source, mut schedule)) => {
            let (ops_tx, ops_rx) = unbounded();
            threads.push(("builder", spawn_stage("builder", move || {
                let mut stats = StageStats { name: "builder", ..Default::default() };
                for (seq, cov) in cov_rx.iter() {
                    let op = source.build(&cov);
                    stats.failed_builds += op.is_err() as u64;
                    if ops_tx.send((seq, op.ok().map(Arc::new))).is_err() {
                        break;
                    }
                }
                Ok(stats)
            })?));
            let (inv_tx, inv_rx) = bounded(cap);
            let tx = events_tx.clone();
            threads.push(("inverse", spawn_stage("inverse", move || {
                let mut stats = StageStats { name: "inverse", ..Default::default() };
                for (k, item) in ep_rx.iter() {
                    let item = match item {
                        EpochItem::Covariance { seq, at_sample, .. } => {
                            schedule.announce(seq, at_sample);
                            continue;
                        }
                        EpochItem::Trial { event: EpochEvent::Accepted { epoch, marker }, window_end } => {
                            let seq = schedule.select(window_end);
                            while schedule.get(seq).is_none() {
                                let (s, op) = ops_rx
                                    .recv()
                                    .map_err(|_| Error::Pipeline("operator builder stopped".into()))?;
                                // A failed rebuild keeps the operator before it.
                                let op = match op {
                                    Some(op) => op,
                                    None => schedule.get(s - 1).ok_or_else(|| Error::Pipeline(format!("operator {} missing", s - 1)))?,
                                };
                                schedule.insert(s, op);
                            }
                            let start = Instant::now();
                            let source = schedule.apply(seq, &epoch)?;
                            schedule.prune_below(seq);
                            let t = timing("inverse", k, Some(epoch.trial_index), start, budget);
                            stats.over_budget += t.over_budget() as u64;
                            let _ = tx.send(PipelineEvent::Timing(t));
                            EpochItem::Trial {
                                event: EpochEvent::Accepted { epoch: source, marker },
                                window_end,
                            }
                        }
                        other => other,
                    };
                    if inv_tx.send((k, item)).is_err() {
                        break;
                    }
                }
                Ok(stats)
            })?));
            inv_rx
        }
    };

    let mut conn = p.connectivity;
    let tx = events_tx;
    threads.push(("connectivity", spawn_stage("connectivity", move || {
        let mut stats = StageStats { name: "connectivity", ..Default::default() };
        let mut control = control_rx;
        loop {
            select! {
                recv(trials_rx) -> item => {
                    let Ok((k, item)) = item else { break };
                    let EpochItem::Trial { event: EpochEvent::Accepted { epoch, .. }, .. } = item else {
                        continue;
                    };
                    let trial = epoch.trial_index;
                    let start = Instant::now();
                    let published = match conn.process(epoch)? {
                        Some(net) => Some(Published {
                            trial,
                            json: Arc::new(network_json::to_json(&net)?),
                            network: Arc::new(net),
                        }),
                        None => None,
                    };
                    let t = timing("connectivity", k, Some(trial), start, budget);
                    stats.over_budget += t.over_budget() as u64;
                    if let Some(p) = published {
                        stats.networks += 1;
                        let _ = tx.send(PipelineEvent::Network(p));
                    }
                    let _ = tx.send(PipelineEvent::Timing(t));
                }
                recv(control) -> req => {
                    let Ok(req) = req else {
                        control = never();
                        continue;
                    };
                    let ack = match conn.apply(&req.message) {
                        Ok(()) => Ack::accept(&req),
                        Err(e) => Ack::reject(&req, e.to_string()),
                    };
                    let _ = tx.send(PipelineEvent::Ack(ack));
                }
            }
        }
        Ok(stats)
    })?));

    Ok(PipelineHandle {
        events,
        control: control_tx,
        threads,
        source: Some(source),
        dropped,
    })
}

fn spawn_stage<F>(name: &'static str, f: F) -> Result<Stage>
where
    F: FnOnce() -> Result<StageStats> + Send + 'static,
{
    thread::Builder::new()
        .name(name.into())
        .spawn(f)
        .map_err(|e| Error::Pipeline(format!("cannot start the {name} stage: {e}")))
}

fn panic_message(p: Box<dyn std::any::Any + Send>) -> String {
    if let Some(s) = p.downcast_ref::<&str>() {
        s.to_string()
    } else if let Some(s) = p.downcast_ref::<String>() {
        s.clone()
    } else {
        "unknown panic".into()
    }
}

impl PipelineHandle {
    /// Waits for every stage. The first stage error (in pipeline order) is
    /// returned; a panicking stage is reported by name.
    pub fn join(mut self) -> Result<PipelineSummary> {
        drop(self.control);
        let mut summary = PipelineSummary::default();
        let mut first_err = None;
        if let Some(src) = self.source.take() {
            match src.join() {
                Ok(Err(e)) => first_err = first_err.or(Some(e)),
                Err(p) => first_err = first_err.or(Some(Error::Pipeline(format!("source panicked: {}", panic_message(p))))),
                Ok(Ok(())) => {}
            }
        }
        for (name, handle) in self.threads {
            match handle.join() {
                Ok(Ok(s)) => {
                    summary.blocks = summary.blocks.max(s.blocks);
                    summary.accepted += s.accepted;
                    summary.rejected += s.rejected;
                    summary.lost += s.lost;
                    summary.networks += s.networks;
                    summary.failed_operator_builds += s.failed_builds;
                    if s.name != "builder" {
                        summary.over_budget.push((s.name.to_string(), s.over_budget));
                    }
                }
                Ok(Err(e)) => first_err = first_err.or(Some(e)),
                Err(p) => {
                    first_err = first_err.or(Some(Error::Pipeline(format!("{name} stage panicked: {}", panic_message(p)))))
                }
            }
        }
        summary.dropped_blocks = self.dropped.load(Ordering::Relaxed);
        match first_err {
            Some(e) => Err(e),
            None => Ok(summary),
        }
    }
}

/// Everything a pipeline run published, collected in order.
#[derive(Debug, Default)]
pub struct Collected {
    pub networks: Vec<Published>,
    pub timings: Vec<StageTiming>,
    pub acks: Vec<Ack>,
}

/// Drains a pipeline to completion.
pub fn collect(handle: PipelineHandle) -> Result<(Collected, PipelineSummary)> {
    let mut out = Collected::default();
    for ev in handle.events.iter() {
        match ev {
            PipelineEvent::Network(p) => out.networks.push(p),
            PipelineEvent::Timing(t) => out.timings.push(t),
            PipelineEvent::Ack(a) => out.acks.push(a),
        }
    }
    let summary = handle.join()?;
    Ok((out, summary))
}

/// Result of the sequential offline run.
#[derive(Debug)]
pub struct OfflineRun {
    /// Accepted trials as they enter connectivity (in source space when an
    /// inverse is configured).
    pub epochs: Vec<EpochMatrix>,
    pub rejected: u64,
    pub lost: u64,
    pub positions: Option<Vec<[f64; 3]>>,
}

/// Runs filtering, epoching and the inverse in one thread over the whole
/// recording.
pub fn preprocess_offline(config: &PipelineConfig, rec: &RawRecording) -> Result<OfflineRun> {
    let info = StreamInfo::new(config, &rec.header)?;
    let p = prepare(config, info)?;
    let (mut filter, mut epoch, mut inverse) = (p.filter, p.epoch, p.inverse);
    let positions = match &inverse {
        Some((_, s)) => s.get(0).map(|op| op.positions.clone()),
        None => p.info.positions.clone(),
    };
    let mut run = OfflineRun {
        epochs: Vec::new(),
        rejected: 0,
        lost: 0,
        positions,
    };
    let mut start = 0;
    while start < rec.n_samples() {
        let block = rec.block(start, config.block_size);
        start += config.block_size;
        let (filtered, markers) = filter.process(&block)?;
        for item in epoch.process(&filtered, &markers)? {
            match item {
                EpochItem::Covariance { seq, at_sample, cov } => {
                    if let Some((source, schedule)) = inverse.as_mut() {
                        schedule.announce(seq, at_sample);
                        let op = match source.build(&cov) {
                            Ok(op) => Arc::new(op),
                            Err(_) => schedule.get(seq - 1).expect("previous operator"),
                        };
                        schedule.insert(seq, op);
                    }
                }
                EpochItem::Trial { event: EpochEvent::Rejected { .. }, .. } => run.rejected += 1,
                EpochItem::Trial { event: EpochEvent::Accepted { epoch, .. }, window_end } => {
                    let epoch = match inverse.as_mut() {
                        Some((_, schedule)) => {
                            let seq = schedule.select(window_end);
                            let out = schedule.apply(seq, &epoch)?;
                            schedule.prune_below(seq);
                            out
                        }
                        None => epoch,
                    };
                    run.epochs.push(epoch);
                }
            }
        }
    }
    if rec.trailing_bytes > 0 {
        return Err(Error::format(
            "recording",
            format!("payload truncated: {} bytes after the last complete sample", rec.trailing_bytes),
        ));
    }
    run.lost = epoch.lost();
    Ok(run)
}

/// Batch connectivity over the trials the streaming run would hold at the
/// end: all of them, or the most recent `max_trials`. Returned before
/// normalization and thresholding.
pub fn offline_network(config: &PipelineConfig, sfreq: f64, run: &OfflineRun, backend: &dyn FftBackend) -> Result<ConnectivityNetwork> {
    let c = &config.connectivity;
    let band = c.band(sfreq)?;
    let keep = c.max_trials.unwrap_or(usize::MAX).min(run.epochs.len());
    let epochs = &run.epochs[run.epochs.len() - keep..];
    let engine = SpectralEngine::new(backend, c.spectral())?;
    let mut net = batch_network(&engine, backend, epochs, c.metric, &band, c.xcor_max_lag)?;
    if let Some(pos) = &run.positions {
        net = net.with_positions(pos);
    }
    Ok(net)
}
