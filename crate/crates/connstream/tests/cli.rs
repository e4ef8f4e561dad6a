use std::io::{BufRead, BufReader, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::sync::mpsc;
use std::time::Duration;

use connstream::core::preprocess::EpochSpec;
use connstream::format::{network_json, RawRecording};
use connstream::frame::{Frame, FrameType};
use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_connstream"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn simulate(dir: &Path, name: &str, extra: &[&str]) -> PathBuf {
    let mut args = vec!["simulate", name];
    args.extend_from_slice(extra);
    let out = run(&args, dir);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    dir.join(name)
}

#[test]
fn offline_writes_network_and_convergence() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "sim", &["--trials", "30", "--seed", "4"]);
    let out = run(&["offline", "sim", "--metric", "IMAGCOHY", "--out", "res"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let net = network_json::from_json(&std::fs::read_to_string(dir.path().join("res/network.json")).unwrap()).unwrap();
    assert_eq!(net.n_trials, 30);
    assert_eq!(net.nodes.len(), 32);
    let csv = std::fs::read_to_string(dir.path().join("res/convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("metric,n_trials,mean_abs_weight"));
    let imag: Vec<&str> = lines.filter(|l| l.starts_with("IMAGCOHY,")).collect();
    assert_eq!(imag.len(), 30);
}

#[test]
fn same_inputs_give_identical_bytes() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "a", &["--trials", "12", "--seed", "8"]);
    simulate(dir.path(), "b", &["--trials", "12", "--seed", "8"]);
    for ext in ["json", "f32"] {
        let read = |n: &str| std::fs::read(dir.path().join(format!("{n}.{ext}"))).unwrap();
        assert_eq!(read("a"), read("b"), "{ext}");
    }
    for out in ["r1", "r2"] {
        let o = run(&["offline", "a", "--metric", "WPLI", "--threshold", "0.2", "--out", out], dir.path());
        assert_eq!(code(&o), 0);
    }
    for file in ["network.json", "convergence.csv"] {
        let read = |d: &str| std::fs::read(dir.path().join(d).join(file)).unwrap();
        assert_eq!(read("r1"), read("r2"), "{file}");
    }
}

#[test]
fn noise_free_imaginary_coherency_matches_the_signal_phases() {
    let dir = TempDir::new().unwrap();
    let path = simulate(dir.path(), "clean", &["--noise-free", "--trials", "4"]);
    std::fs::write(
        dir.path().join("cfg.toml"),
        "[connectivity]\nmetric = \"IMAGCOHY\"\nband = [18, 18]\nnormalize = false\n",
    )
    .unwrap();
    let out = run(&["offline", "clean", "--config", "cfg.toml", "--out", "res"], dir.path());
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let net = network_json::from_json(&std::fs::read_to_string(dir.path().join("res/network.json")).unwrap()).unwrap();

    // Every trial holds the same samples, so the coherency is the phase
    // difference of one trial's bin-18 coefficients.
    let rec = RawRecording::read(&path).unwrap();
    let (offset, len) = EpochSpec::new(0.0, 0.16).sample_range(rec.header.sfreq);
    let onset = 150 + offset as usize;
    let bin18 = |c: usize| {
        let x: Vec<f64> = (onset..onset + len).map(|s| rec.sample(s, c) as f64).collect();
        let mean = x.iter().sum::<f64>() / len as f64;
        x.iter().enumerate().fold((0.0, 0.0), |(re, im), (t, v)| {
            let a = 2.0 * std::f64::consts::PI * 18.0 * t as f64 / 600.0;
            (re + (v - mean) * a.cos(), im - (v - mean) * a.sin())
        })
    };
    let (a, b) = (bin18(0), bin18(2));
    let cross_im = a.1 * b.0 - a.0 * b.1;
    let expected = cross_im / ((a.0 * a.0 + a.1 * a.1) * (b.0 * b.0 + b.1 * b.1)).sqrt();
    let w = net.edge(0, 2).unwrap().weight;
    assert!((w.abs() - expected.abs()).abs() < 1e-9, "{w} vs {expected}");
    assert!(w.abs() > 0.99);
    // Copies of one source have no imaginary part.
    assert!(net.edge(0, 1).unwrap().weight.abs() < 1e-9);
    assert!(net.edge(2, 3).unwrap().weight.abs() < 1e-9);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    simulate(d, "one", &["--trials", "1"]);
    std::fs::write(d.join("bad.toml"), "block_size = \"large\"\n").unwrap();
    std::fs::write(d.join("junk.json"), "{not json").unwrap();
    std::fs::write(d.join("junk.f32"), [0u8; 8]).unwrap();

    assert_eq!(code(&run(&["offline", "missing"], d)), 2);
    assert_eq!(code(&run(&["offline", "junk"], d)), 2);
    assert_eq!(code(&run(&["offline", "one", "--config", "bad.toml"], d)), 2);
    assert_eq!(code(&run(&["offline", "one", "--metric", "GRANGER"], d)), 2);
    assert_eq!(code(&run(&["offline", "one", "--band", "30:18"], d)), 2);
    assert_eq!(code(&run(&["frobnicate"], d)), 2);

    let degenerate = run(&["offline", "one", "--metric", "USPLI"], d);
    assert_eq!(code(&degenerate), 3);
    assert!(!String::from_utf8_lossy(&degenerate.stderr).is_empty());
    assert_eq!(code(&run(&["offline", "one", "--metric", "WPLI", "--out", "ok"], d)), 0);

    let threads = bin().args(["offline", "one", "--out", "t"]).env("CONNSTREAM_THREADS", "many").current_dir(d).output().unwrap();
    assert_eq!(code(&threads), 4);

    let busy = TcpListener::bind("127.0.0.1:0").unwrap();
    let port = busy.local_addr().unwrap().port().to_string();
    assert_eq!(code(&run(&["serve", "one", "--port", &port, "--exit-when-done"], d)), 4);
}

#[test]
fn filter_design_prints_taps_and_response() {
    let dir = TempDir::new().unwrap();
    let out = run(
        &["filter-design", "--kind", "lowpass", "--cutoffs", "40", "--transition-bw", "20", "--sfreq", "600", "--taps", "101"],
        dir.path(),
    );
    assert_eq!(code(&out), 0);
    let doc: Value = serde_json::from_slice(&out.stdout).unwrap();
    let taps = doc["taps"].as_array().unwrap();
    assert_eq!(taps.len(), 101);
    let sum: f64 = taps.iter().map(|t| t.as_f64().unwrap()).sum();
    assert!((sum - 1.0).abs() < 1e-6);
}

/// A running `serve` and the addresses it printed.
struct Server {
    child: Child,
    tcp: String,
    ws: String,
}

fn serve(dir: &Path, rec: &str, extra: &[&str]) -> Server {
    let mut child = bin()
        .args(["serve", rec, "--port", "0"])
        .args(extra)
        .current_dir(dir)
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let stdout = child.stdout.take().unwrap();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        for line in BufReader::new(stdout).lines() {
            let _ = tx.send(line.unwrap());
        }
    });
    let line = rx.recv_timeout(Duration::from_secs(30)).expect("serve prints its addresses");
    let mut parts = line.strip_prefix("listening ").expect(&line).split(' ');
    let tcp = parts.next().unwrap().strip_prefix("tcp=").unwrap().to_string();
    let ws = parts.next().unwrap().strip_prefix("ws=").unwrap().to_string();
    Server { child, tcp, ws }
}

fn wait(child: &mut Child) -> i32 {
    for _ in 0..600 {
        if let Some(status) = child.try_wait().unwrap() {
            return status.code().expect("exited normally");
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    let _ = child.kill();
    panic!("serve did not exit");
}

#[test]
fn tcp_client_gets_a_frame_per_trial_and_control_acks() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "sim", &["--trials", "20", "--seed", "2"]);
    let mut server = serve(dir.path(), "sim", &["--speed", "0", "--wait-clients", "1", "--exit-when-done", "--out", "last.json"]);
    let mut stream = TcpStream::connect(&server.tcp).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    Frame::new(FrameType::Control, r#"{"id":1,"type":"set_metric","value":"PLI"}"#)
        .write_to(&mut stream)
        .unwrap();
    Frame::new(FrameType::Control, r#"{"id":2,"type":"set_threshold","value":1.5}"#)
        .write_to(&mut stream)
        .unwrap();
    stream.flush().unwrap();

    let mut networks = Vec::new();
    let mut acks = Vec::new();
    let mut timings = 0;
    while let Some(frame) = Frame::read_from(&mut stream).unwrap() {
        match frame.kind {
            FrameType::Network => networks.push(network_json::from_json(&frame.payload).unwrap()),
            FrameType::Ack => acks.push(serde_json::from_str::<Value>(&frame.payload).unwrap()),
            FrameType::Timing => timings += 1,
            FrameType::Control => panic!("server sent a control frame"),
        }
    }
    assert_eq!(wait(&mut server.child), 0);
    assert_eq!(networks.len(), 20);
    assert!(timings > 0);
    assert_eq!(acks.len(), 2);
    let ack = |id: u64| acks.iter().find(|a| a["id"] == id).unwrap();
    assert_eq!(ack(1)["accepted"], true);
    assert_eq!(ack(1)["type"], "set_metric");
    assert_eq!(ack(2)["accepted"], false);
    assert!(ack(2)["reason"].is_string());
    assert_eq!(networks.last().unwrap().metric, connstream::core::MetricId::Pli);
    let saved = network_json::from_json(&std::fs::read_to_string(dir.path().join("last.json")).unwrap()).unwrap();
    assert_eq!(&saved, networks.last().unwrap());
}

#[test]
fn websocket_mirror_publishes_json_and_takes_control() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "sim", &["--trials", "15", "--seed", "3"]);
    let mut server = serve(dir.path(), "sim", &["--speed", "0", "--wait-clients", "1", "--exit-when-done"]);

    let wrong_path = server.ws.replace("/ws", "/other");
    assert!(tungstenite::connect(wrong_path.as_str()).is_err());

    let (mut ws, _) = tungstenite::connect(server.ws.as_str()).unwrap();
    ws.send(tungstenite::Message::text(r#"{"id":"b","type":"set_band","lo":18,"hi":30}"#)).unwrap();
    let mut kinds = std::collections::BTreeMap::<String, usize>::new();
    let mut ack = None;
    let mut last_band = None;
    loop {
        match ws.read() {
            Ok(tungstenite::Message::Text(t)) => {
                let v: Value = serde_json::from_str(t.as_str()).unwrap();
                let kind = v["type"].as_str().unwrap().to_string();
                if kind == "ack" {
                    ack = Some(v["payload"].clone());
                }
                if kind == "network" {
                    let net = network_json::from_value(v["payload"].clone()).unwrap();
                    last_band = Some((net.band.lo_bin, net.band.hi_bin));
                }
                *kinds.entry(kind).or_default() += 1;
            }
            Ok(tungstenite::Message::Close(_)) | Err(_) => break,
            Ok(_) => {}
        }
    }
    assert_eq!(wait(&mut server.child), 0);
    assert_eq!(kinds.get("network"), Some(&15));
    assert!(kinds.get("timing").is_some_and(|&n| n > 0));
    let ack = ack.expect("ack message");
    assert_eq!(ack["id"], "b");
    assert_eq!(ack["accepted"], true);
    assert_eq!(last_band, Some((18, 30)));
}

#[test]
fn interrupt_flushes_the_last_network() {
    let dir = TempDir::new().unwrap();
    simulate(dir.path(), "long", &["--trials", "200"]);
    let mut server = serve(dir.path(), "long", &["--speed", "1", "--out", "final.json"]);
    let mut stream = TcpStream::connect(&server.tcp).unwrap();
    stream.set_read_timeout(Some(Duration::from_secs(30))).unwrap();
    let mut seen = 0;
    while seen < 2 {
        let frame = Frame::read_from(&mut stream).unwrap().expect("stream open");
        seen += (frame.kind == FrameType::Network) as usize;
    }
    let status = Command::new("kill").args(["-INT", &server.child.id().to_string()]).status().unwrap();
    assert!(status.success());
    assert_eq!(wait(&mut server.child), 0);
    let net = network_json::from_json(&std::fs::read_to_string(dir.path().join("final.json")).unwrap()).unwrap();
    assert!(net.n_trials >= 2 && net.n_trials < 200, "{}", net.n_trials);
}
