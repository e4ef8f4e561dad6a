use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand, ValueEnum};
use connstream::bench::{self, BenchCase};
use connstream::config::{FilterConfig, FilterKindConfig, PipelineConfig};
use connstream::convergence;
use connstream::core::MetricId;
use connstream::error::{Error, Result};
use connstream::format::filter_json;
use connstream::format::{network_json, RawRecording};
use connstream::pipeline::{self, finish_network};
use connstream::server::{self, Listeners, ServeOptions};
use connstream::simulate::{self, SimulationConfig};

#[derive(Parser)]
#[command(name = "connstream", version, about = "Streaming all-to-all functional connectivity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Batch analysis of a recording: final network plus convergence table.
    Offline {
        recording: PathBuf,
        /// Output directory for network.json and convergence.csv.
        #[arg(long, default_value = ".")]
        out: PathBuf,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Replay a recording through the streaming pipeline and publish over
    /// TCP (port) and WebSocket (port + 1, path /ws).
    Serve {
        recording: PathBuf,
        #[arg(long, default_value_t = 7878)]
        port: u16,
        /// Replay speed relative to real time; 0 replays as fast as possible.
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        /// File receiving the last published network on shutdown.
        #[arg(long, default_value = "network.json")]
        out: PathBuf,
        /// Hold the replay until this many clients have connected.
        #[arg(long, default_value_t = 0)]
        wait_clients: usize,
        /// Exit when the replay ends instead of waiting for a signal.
        #[arg(long)]
        exit_when_done: bool,
        #[command(flatten)]
        pipeline: PipelineArgs,
    },
    /// Runtime sweeps over window size, trial count and node count.
    Bench {
        #[arg(long, default_value = "bench.csv")]
        out: PathBuf,
        /// Comma-separated metrics; all by default.
        #[arg(long, value_delimiter = ',')]
        metrics: Vec<String>,
        /// Node count for the window and trial sweeps.
        #[arg(long, default_value_t = 64)]
        nodes: usize,
        #[arg(long, default_value_t = 5)]
        repeats: usize,
        /// Per-case wall-clock cap in seconds.
        #[arg(long, default_value_t = 120.0)]
        cap: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Check the trends of an existing CSV instead of running a sweep.
        #[arg(long)]
        check: Option<PathBuf>,
    },
    /// Write a synthetic recording with a lagged 18 Hz connection.
    Simulate {
        /// Output path (`<name>.json` and `<name>.f32` are written).
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        trials: usize,
        #[arg(long, default_value_t = 11.85)]
        snr_db: f64,
        #[arg(long)]
        noise_free: bool,
    },
    /// Design an FIR filter and print its taps and response as JSON.
    FilterDesign {
        #[arg(long, value_enum)]
        kind: Kind,
        /// Comma-separated cutoff frequencies in Hz.
        #[arg(long, value_delimiter = ',', required = true)]
        cutoffs: Vec<f64>,
        #[arg(long)]
        transition_bw: f64,
        #[arg(long)]
        sfreq: f64,
        #[arg(long)]
        taps: Option<usize>,
        #[arg(long, default_value_t = 512)]
        points: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Lowpass,
    Highpass,
    Bandpass,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnOff {
    On,
    Off,
}

/// Settings shared by `offline` and `serve`; flags override the config file.
#[derive(Args)]
struct PipelineArgs {
    /// TOML or JSON pipeline configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    metric: Option<String>,
    /// Inclusive bin range, `lo:hi`.
    #[arg(long)]
    band: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long, value_enum)]
    storage: Option<OnOff>,
    #[arg(long)]
    nfft: Option<usize>,
}

impl PipelineArgs {
    fn resolve(&self) -> Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        let c = &mut cfg.connectivity;
        if let Some(b) = self.block_size {
            cfg.block_size = b;
        }
        if let Some(m) = &self.metric {
            c.metric = parse_metric(m)?;
        }
        if let Some(b) = &self.band {
            let (lo, hi) = b
                .split_once(':')
                .and_then(|(lo, hi)| Some((lo.trim().parse().ok()?, hi.trim().parse().ok()?)))
                .ok_or_else(|| Error::Config(format!("band '{b}' is not lo:hi")))?;
            c.band = [lo, hi];
        }
        if let Some(t) = self.threshold {
            c.threshold = t;
        }
        if let Some(s) = self.storage {
            c.storage = matches!(s, OnOff::On);
        }
        if let Some(n) = self.nfft {
            c.nfft = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn parse_metric(s: &str) -> Result<MetricId> {
    s.parse().map_err(|e: connstream::core::Error| Error::Config(e.to_string()))
}

/// Prints to stdout; a closed pipe is not an error worth reporting.
fn emit(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes()).and_then(|_| out.flush());
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var("CONNSTREAM_THREADS") else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Environment(format!("CONNSTREAM_THREADS must be a positive integer, got '{v}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Environment(e.to_string()))
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn offline(recording: &Path, out: &Path, args: &PipelineArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let rec = RawRecording::read(recording)?;
    let run = pipeline::preprocess_offline(&cfg, &rec)?;
    let backend = connstream::fft::backend(&cfg.fft_backend)?;
    let c = &cfg.connectivity;
    let net = pipeline::offline_network(&cfg, rec.header.sfreq, &run, backend.as_ref())?;
    let net = finish_network(net, c.normalize, c.threshold)?;
    write_file(&out.join("network.json"), &(network_json::to_json(&net)? + "\n"))?;

    let band = c.band(rec.header.sfreq)?;
    let metrics: Vec<MetricId> = MetricId::ALL
        .into_iter()
        .filter(|m| m.min_trials() <= run.epochs.len())
        .collect();
    let curves = convergence::convergence(&run.epochs, &metrics, c.cache(), &band, backend)?;
    write_file(&out.join("convergence.csv"), &convergence::to_csv(&curves))?;
    eprintln!(
        "{} trials accepted, {} rejected, {} lost; {} edges written",
        run.epochs.len(),
        run.rejected,
        run.lost,
        net.edges.len()
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn serve(recording: &Path, port: u16, speed: f64, out: PathBuf, wait_clients: usize, exit_when_done: bool, args: &PipelineArgs) -> Result<()> {
    let cfg = args.resolve()?;
    let rec = Arc::new(RawRecording::read(recording)?);
    let listeners = Listeners::bind(port)?;
    let (tx, rx) = crossbeam_channel::bounded(1);
    ctrlc::set_handler(move || {
        let _ = tx.try_send(());
    })
    .map_err(|e| Error::Environment(format!("cannot install the signal handler: {e}")))?;
    emit(&format!("listening tcp={} ws=ws://{}/ws\n", listeners.tcp_addr(), listeners.ws_addr()));
    let opts = ServeOptions {
        speed,
        wait_clients,
        out,
        linger: !exit_when_done,
    };
    let outcome = server::serve(&cfg, rec, listeners, &opts, rx)?;
    let s = &outcome.summary;
    eprintln!(
        "{} networks published, {} trials accepted, {} rejected, {} blocks dropped, {} frames dropped",
        outcome.networks_sent, s.accepted, s.rejected, s.dropped_blocks, outcome.frames_dropped
    );
    for (stage, n) in &s.over_budget {
        if *n > 0 {
            eprintln!("{stage}: {n} timings over budget");
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_bench(out: &Path, metrics: &[String], nodes: usize, repeats: usize, cap: f64, seed: u64, check: Option<&Path>) -> Result<bool> {
    let rows = match check {
        Some(p) => bench::from_csv(&std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?)?,
        None => {
            let metrics: Vec<MetricId> = if metrics.is_empty() {
                MetricId::ALL.to_vec()
            } else {
                metrics.iter().map(|m| parse_metric(m)).collect::<Result<_>>()?
            };
            let cases: Vec<BenchCase> = bench::default_cases(&metrics, nodes, repeats);
            let backend = connstream::fft::backend("default")?;
            let rows = bench::run_sweep(&cases, seed, Duration::from_secs_f64(cap), backend)?;
            write_file(out, &bench::to_csv(&rows))?;
            rows
        }
    };
    let report = bench::assert_trends(&rows);
    emit(&report.render());
    Ok(report.passed())
}

fn simulate_cmd(out: &Path, seed: u64, trials: usize, snr_db: f64, noise_free: bool) -> Result<()> {
    let cfg = SimulationConfig {
        seed,
        n_trials: trials,
        snr_db: (!noise_free).then_some(snr_db),
        ..Default::default()
    };
    let (rec, report) = simulate::simulate(&cfg)?;
    rec.write(out)?;
    emit(&(serde_json::to_string_pretty(&report).expect("report serializes") + "\n"));
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn filter_design(kind: Kind, cutoffs: Vec<f64>, transition_bw: f64, sfreq: f64, taps: Option<usize>, points: usize, out: Option<&Path>) -> Result<()> {
    let spec = FilterConfig {
        kind: match kind {
            Kind::Lowpass => FilterKindConfig::Lowpass,
            Kind::Highpass => FilterKindConfig::Highpass,
            Kind::Bandpass => FilterKindConfig::Bandpass,
        },
        cutoffs,
        transition_bw,
        n_taps: taps,
    };
    let fir = spec.design(sfreq)?;
    let json = filter_json::to_json(&fir, points);
    match out {
        Some(p) => write_file(p, &(json + "\n")),
        None => {
            emit(&(json + "\n"));
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<bool> {
    configure_threads()?;
    match cli.command {
        Command::Offline { recording, out, pipeline } => offline(&recording, &out, &pipeline)?,
        Command::Serve {
            recording,
            port,
            speed,
            out,
            wait_clients,
            exit_when_done,
            pipeline,
        } => serve(&recording, port, speed, out, wait_clients, exit_when_done, &pipeline)?,
        Command::Bench {
            out,
            metrics,
            nodes,
            repeats,
            cap,
            seed,
            check,
        } => return run_bench(&out, &metrics, nodes, repeats, cap, seed, check.as_deref()),
        Command::Simulate {
            out,
            seed,
            trials,
            snr_db,
            noise_free,
        } => simulate_cmd(&out, seed, trials, snr_db, noise_free)?,
        Command::FilterDesign {
            kind,
            cutoffs,
            transition_bw,
            sfreq,
            taps,
            points,
            out,
        } => filter_design(kind, cutoffs, transition_bw, sfreq, taps, points, out.as_deref())?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        // Trend violations in a benchmark report.
        Ok(false) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
