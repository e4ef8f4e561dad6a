//! Runtime sweeps over metric, window size, trial count and node count.
//!
//! Each case times building a fresh accumulator from its trials and
//! finalizing the network, on seeded Gaussian data. Spectra use a 600-point
//! FFT at 600 Hz in fixed-resolution mode, and the 8 to 12 Hz band (bins 8
//! to 11) is averaged.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::{Duration, Instant};

use connstream_core::{CacheConfig, EpochMatrix, FftBackend, FrequencyBand, MetricId, SpectralConfig, TrialCache};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const NFFT: usize = 600;
pub const SFREQ: f64 = 600.0;
pub const BAND: (usize, usize) = (8, 11);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BenchCase {
    pub metric: MetricId,
    pub n_nodes: usize,
    pub window_sp: usize,
    pub n_trials: usize,
    pub n_repeats: usize,
    pub storage: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub metric: String,
    pub n_nodes: usize,
    pub window_sp: usize,
    pub n_trials: usize,
    pub storage: bool,
    pub mean_s: f64,
    pub std_s: f64,
    pub timed_out: bool,
}

const HEADER: &str = "metric,n_nodes,window_sp,n_trials,storage,mean_s,std_s,timed_out";

pub const WINDOWS: [usize; 7] = [100, 250, 500, 1000, 2500, 5000, 10_000];
pub const TRIALS: [usize; 5] = [1, 5, 10, 25, 50];
pub const NODES: [usize; 6] = [32, 64, 128, 243, 265, 512];

/// The three sweeps: window size at one trial, trial count at 1,000
/// samples, and node count at 1,000 samples and one trial.
pub fn default_cases(metrics: &[MetricId], nodes: usize, n_repeats: usize) -> Vec<BenchCase> {
    let mut out = Vec::new();
    let case = |metric, n_nodes, window_sp, n_trials| BenchCase {
        metric,
        n_nodes,
        window_sp,
        n_trials,
        n_repeats,
        storage: false,
    };
    for &m in metrics {
        for w in WINDOWS {
            out.push(case(m, nodes, w, m.min_trials()));
        }
        for t in TRIALS {
            out.push(case(m, nodes, 1000, t.max(m.min_trials())));
        }
        for n in NODES {
            out.push(case(m, n, 1000, m.min_trials()));
        }
    }
    dedup(out)
}

fn dedup(cases: Vec<BenchCase>) -> Vec<BenchCase> {
    let mut seen = Vec::new();
    for c in cases {
        if !seen.contains(&c) {
            seen.push(c);
        }
    }
    seen
}

/// Gaussian trials for a case shape. The data depend only on the seed and
/// the shape, so every metric sees the same input.
pub fn case_data(seed: u64, n_nodes: usize, window_sp: usize, n_trials: usize) -> Vec<EpochMatrix> {
    let mix = seed ^ ((n_nodes as u64) << 40) ^ ((window_sp as u64) << 16) ^ n_trials as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    (0..n_trials)
        .map(|t| {
            let data: Vec<f64> = (0..n_nodes * window_sp).map(|_| StandardNormal.sample(&mut rng)).collect();
            EpochMatrix::new(data, n_nodes, SFREQ).unwrap().with_trial_index(t as u64)
        })
        .collect()
}

pub fn cache_config(storage: bool) -> CacheConfig {
    CacheConfig::new(SpectralConfig::new(NFFT)).with_storage(storage)
}

pub fn band() -> FrequencyBand {
    FrequencyBand::new(BAND.0, BAND.1, SFREQ / NFFT as f64).unwrap()
}

fn time_once(case: &BenchCase, data: &[EpochMatrix], backend: &Arc<dyn FftBackend>) -> Result<f64> {
    let trials = data.to_vec();
    let band = band();
    let start = Instant::now();
    let mut cache = TrialCache::new(backend.clone(), cache_config(case.storage))?;
    for t in trials {
        cache.add_trial(t)?;
    }
    let net = cache.finalize(case.metric, &band)?;
    let secs = start.elapsed().as_secs_f64();
    drop(net);
    Ok(secs)
}

/// Runs every case: one discarded warm-up, then `n_repeats` timed runs.
/// A case whose runs add up to more than `cap` stops early and is marked
/// timed out.
pub fn run_sweep(cases: &[BenchCase], seed: u64, cap: Duration, backend: Arc<dyn FftBackend>) -> Result<Vec<BenchRow>> {
    let mut rows = Vec::with_capacity(cases.len());
    let mut cached: Option<((usize, usize, usize), Vec<EpochMatrix>)> = None;
    for case in cases {
        if case.n_nodes == 0 || case.window_sp == 0 || case.n_trials == 0 || case.n_repeats == 0 {
            return Err(Error::Config(format!("bench case {case:?} has a zero parameter")));
        }
        let shape = (case.n_nodes, case.window_sp, case.n_trials);
        if cached.as_ref().is_none_or(|c| c.0 != shape) {
            cached = Some((shape, case_data(seed, case.n_nodes, case.window_sp, case.n_trials)));
        }
        let data = &cached.as_ref().unwrap().1;
        let begin = Instant::now();
        let warm = time_once(case, data, &backend)?;
        let mut times = Vec::with_capacity(case.n_repeats);
        let mut timed_out = warm > cap.as_secs_f64();
        while !timed_out && times.len() < case.n_repeats {
            times.push(time_once(case, data, &backend)?);
            timed_out = begin.elapsed() > cap && times.len() < case.n_repeats;
        }
        if times.is_empty() {
            times.push(warm);
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        let var = times.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / times.len() as f64;
        rows.push(BenchRow {
            metric: case.metric.as_str().into(),
            n_nodes: case.n_nodes,
            window_sp: case.window_sp,
            n_trials: case.n_trials,
            storage: case.storage,
            mean_s: mean,
            std_s: var.sqrt(),
            timed_out,
        });
    }
    Ok(rows)
}

pub fn to_csv(rows: &[BenchRow]) -> String {
    let mut out = String::from(HEADER);
    out.push('\n');
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{:e},{:e},{}",
            r.metric, r.n_nodes, r.window_sp, r.n_trials, r.storage, r.mean_s, r.std_s, r.timed_out
        )
        .unwrap();
    }
    out
}

pub fn from_csv(text: &str) -> Result<Vec<BenchRow>> {
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(HEADER) {
        return Err(Error::format("bench csv", "unexpected header"));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            let bad = || Error::format("bench csv", format!("bad row '{l}'"));
            if f.len() != 8 {
                return Err(bad());
            }
            Ok(BenchRow {
                metric: f[0].to_string(),
                n_nodes: f[1].parse().map_err(|_| bad())?,
                window_sp: f[2].parse().map_err(|_| bad())?,
                n_trials: f[3].parse().map_err(|_| bad())?,
                storage: f[4].parse().map_err(|_| bad())?,
                mean_s: f[5].parse().map_err(|_| bad())?,
                std_s: f[6].parse().map_err(|_| bad())?,
                timed_out: f[7].parse().map_err(|_| bad())?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendCheck {
    pub name: &'static str,
    pub passed: bool,
    /// Number of comparisons the check made.
    pub compared: usize,
    /// Offending rows or groups.
    pub offenders: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub checks: Vec<TrendCheck>,
}

impl TrendReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&TrendCheck> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            let status = if c.passed { "ok" } else { "VIOLATED" };
            writeln!(out, "{:<22} {status} ({} comparisons)", c.name, c.compared).unwrap();
            for o in &c.offenders {
                writeln!(out, "    {o}").unwrap();
            }
        }
        out
    }
}

type GroupKey = (usize, usize, usize, bool);

fn is_spectral(name: &str) -> bool {
    name.parse::<MetricId>().is_ok_and(MetricId::is_spectral)
}

fn describe(r: &BenchRow) -> String {
    format!("{} nodes={} window={} trials={} mean={:.3e}s", r.metric, r.n_nodes, r.window_sp, r.n_trials, r.mean_s)
}

/// Ordinal checks on a completed sweep. Timed-out rows are skipped.
pub fn assert_trends(rows: &[BenchRow]) -> TrendReport {
    let rows: Vec<&BenchRow> = rows.iter().filter(|r| !r.timed_out).collect();
    let mut groups: BTreeMap<GroupKey, Vec<&BenchRow>> = BTreeMap::new();
    for r in &rows {
        groups.entry((r.n_nodes, r.window_sp, r.n_trials, r.storage)).or_default().push(r);
    }

    let extreme = |name: &'static str, metric: &str, fastest: bool| {
        let mut check = TrendCheck { name, passed: true, compared: 0, offenders: Vec::new() };
        for g in groups.values() {
            let Some(target) = g.iter().find(|r| r.metric == metric) else { continue };
            for other in g.iter().filter(|r| r.metric != metric) {
                check.compared += 1;
                let wrong = if fastest { other.mean_s < target.mean_s } else { other.mean_s > target.mean_s };
                if wrong {
                    check.offenders.push(format!("{} vs {}", describe(target), describe(other)));
                }
            }
        }
        check.passed = check.offenders.is_empty();
        check
    };
    let mut checks = vec![extreme("cor_fastest", "COR", true), extreme("xcor_slowest", "XCOR", false)];

    let mut spread = TrendCheck { name: "spectral_within_3x", passed: true, compared: 0, offenders: Vec::new() };
    for g in groups.values() {
        let spectral: Vec<&&BenchRow> = g.iter().filter(|r| is_spectral(&r.metric)).collect();
        if spectral.len() < 2 {
            continue;
        }
        spread.compared += 1;
        let lo = spectral.iter().min_by(|a, b| a.mean_s.total_cmp(&b.mean_s)).unwrap();
        let hi = spectral.iter().max_by(|a, b| a.mean_s.total_cmp(&b.mean_s)).unwrap();
        if hi.mean_s > 3.0 * lo.mean_s {
            spread.offenders.push(format!("{} vs {}", describe(hi), describe(lo)));
        }
    }
    spread.passed = spread.offenders.is_empty();
    checks.push(spread);

    let mut flat = TrendCheck { name: "spectral_flat_in_window", passed: true, compared: 0, offenders: Vec::new() };
    for r5 in rows.iter().filter(|r| r.window_sp == 5000 && is_spectral(&r.metric)) {
        let Some(r1) = rows
            .iter()
            .find(|r| r.window_sp == 1000 && r.metric == r5.metric && r.n_nodes == r5.n_nodes && r.n_trials == r5.n_trials && r.storage == r5.storage)
        else {
            continue;
        };
        flat.compared += 1;
        if r5.mean_s > 2.0 * r1.mean_s {
            flat.offenders.push(format!("{} vs {}", describe(r5), describe(r1)));
        }
    }
    flat.passed = flat.offenders.is_empty();
    checks.push(flat);

    let mut exponent = TrendCheck { name: "node_exponent", passed: true, compared: 0, offenders: Vec::new() };
    let mut series: BTreeMap<(String, usize, usize, bool), Vec<(f64, f64)>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.n_nodes >= 128) {
        series
            .entry((r.metric.clone(), r.window_sp, r.n_trials, r.storage))
            .or_default()
            .push(((r.n_nodes as f64).ln(), r.mean_s.ln()));
    }
    for ((metric, window, trials, _), pts) in &series {
        if pts.len() < 3 {
            continue;
        }
        exponent.compared += 1;
        let slope = fit_slope(pts);
        if !(1.7..=2.2).contains(&slope) {
            exponent.offenders.push(format!("{metric} window={window} trials={trials} exponent={slope:.2}"));
        }
    }
    exponent.passed = exponent.offenders.is_empty();
    checks.push(exponent);

    TrendReport { checks }
}

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
