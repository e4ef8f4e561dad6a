//! Publishing networks, timings and acks to TCP and WebSocket clients, and
//! taking control messages from them.
//!
//! TCP clients speak the length-prefixed frames of [`crate::frame`].
//! WebSocket clients connect to `/ws` on the next port up and receive text
//! messages `{"type":"network"|"timing"|"ack","payload":{...}}`; they send
//! control JSON as plain text messages.
//!
//! Delivery is fire-and-forget: every client has a small outgoing queue and
//! frames that do not fit are dropped for that client only.

use std::io::{self, ErrorKind};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use crossbeam_channel::{bounded, select, Receiver, Sender, TrySendError};
use tungstenite::handshake::server::{ErrorResponse, Request, Response};
use tungstenite::{Message, WebSocket};

use crate::config::PipelineConfig;
use crate::control::{handle_control, Ack, ControlRequest};
use crate::error::{Error, Result};
use crate::format::RawRecording;
use crate::frame::{Frame, FrameType};
use crate::pipeline::{self, PipelineEvent, PipelineSummary, Published, StreamInfo};
use crate::replay::Replay;

const CLIENT_QUEUE: usize = 64;
const POLL: Duration = Duration::from_millis(20);
/// A client that accepts no data for this long is dropped.
const WRITE_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone)]
enum Outgoing {
    Tcp(Arc<Vec<u8>>),
    Ws(Arc<String>),
}

struct Client {
    websocket: bool,
    tx: Sender<Outgoing>,
}

/// Subscriber registry shared by the accept loops and the publisher.
pub struct Hub {
    clients: Mutex<Vec<Client>>,
    connected: AtomicUsize,
    dropped: AtomicU64,
    control: Sender<ControlRequest>,
    stop: AtomicBool,
    /// Client threads, joined on shutdown once their queues have drained.
    workers: Mutex<Vec<thread::JoinHandle<()>>>,
}

impl Hub {
    fn new(control: Sender<ControlRequest>) -> Self {
        Self {
            clients: Mutex::new(Vec::new()),
            connected: AtomicUsize::new(0),
            dropped: AtomicU64::new(0),
            control,
            stop: AtomicBool::new(false),
            workers: Mutex::new(Vec::new()),
        }
    }

    fn register(&self, websocket: bool) -> Receiver<Outgoing> {
        let (tx, rx) = bounded(CLIENT_QUEUE);
        self.clients.lock().unwrap().push(Client { websocket, tx });
        self.connected.fetch_add(1, Ordering::SeqCst);
        rx
    }

    /// Clients that have ever connected.
    pub fn connected(&self) -> usize {
        self.connected.load(Ordering::SeqCst)
    }

    /// Frames dropped because a client's queue was full.
    pub fn dropped(&self) -> u64 {
        self.dropped.load(Ordering::Relaxed)
    }

    pub fn broadcast(&self, kind: FrameType, json: &str) -> Result<()> {
        let frame = Arc::new(Frame::new(kind, json).encode()?);
        let tag = match kind {
            FrameType::Network => "network",
            FrameType::Timing => "timing",
            FrameType::Ack => "ack",
            FrameType::Control => "control",
        };
        let text = Arc::new(format!("{{\"type\":\"{tag}\",\"payload\":{json}}}"));
        let mut clients = self.clients.lock().unwrap();
        clients.retain(|c| {
            let msg = if c.websocket {
                Outgoing::Ws(text.clone())
            } else {
                Outgoing::Tcp(frame.clone())
            };
            match c.tx.try_send(msg) {
                Ok(()) => true,
                Err(TrySendError::Full(_)) => {
                    self.dropped.fetch_add(1, Ordering::Relaxed);
                    true
                }
                Err(TrySendError::Disconnected(_)) => false,
            }
        });
        Ok(())
    }

    /// Routes control JSON from a client to the pipeline; malformed
    /// messages are rejected right away.
    fn control(&self, raw: &str) {
        match handle_control(raw) {
            Ok(req) => {
                if let Err(e) = self.control.send(req) {
                    let ack = Ack::reject(&e.0, "pipeline has finished");
                    let _ = self.broadcast(FrameType::Ack, &ack.to_json());
                }
            }
            Err(ack) => {
                let _ = self.broadcast(FrameType::Ack, &ack.to_json());
            }
        }
    }
}

/// Bound listeners: TCP frames on `port`, WebSocket on `port + 1`. Port 0
/// picks two free ports.
pub struct Listeners {
    tcp: TcpListener,
    ws: TcpListener,
}

impl Listeners {
    pub fn bind(port: u16) -> Result<Self> {
        let bind = |p: u16| TcpListener::bind(("127.0.0.1", p)).map_err(|source| Error::Bind { port: p, source });
        let tcp = bind(port)?;
        let ws_port = if port == 0 {
            0
        } else {
            port.checked_add(1).ok_or_else(|| Error::Config("port 65535 leaves no room for the WebSocket".into()))?
        };
        let ws = bind(ws_port)?;
        Ok(Self { tcp, ws })
    }

    pub fn tcp_addr(&self) -> SocketAddr {
        self.tcp.local_addr().expect("bound listener")
    }

    pub fn ws_addr(&self) -> SocketAddr {
        self.ws.local_addr().expect("bound listener")
    }
}

fn accept_loop(listener: TcpListener, hub: Arc<Hub>, handle: fn(TcpStream, Arc<Hub>)) -> io::Result<()> {
    listener.set_nonblocking(true)?;
    while !hub.stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                stream.set_nonblocking(false)?;
                let worker = hub.clone();
                let t = thread::spawn(move || handle(stream, worker));
                hub.workers.lock().unwrap().push(t);
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => thread::sleep(POLL),
            Err(_) => thread::sleep(POLL),
        }
    }
    Ok(())
}

fn tcp_client(stream: TcpStream, hub: Arc<Hub>) {
    let (Ok(mut reader), Ok(shutdown)) = (stream.try_clone(), stream.try_clone()) else { return };
    if stream.set_write_timeout(Some(WRITE_TIMEOUT)).is_err() {
        return;
    }
    let rx = hub.register(false);
    let mut writer = stream;
    // Runs until the hub drops this client's queue, then ends the
    // connection, which also stops the reader below.
    let writer = thread::spawn(move || {
        while let Ok(msg) = rx.recv() {
            if let Outgoing::Tcp(bytes) = msg {
                if io::Write::write_all(&mut writer, &bytes).is_err() {
                    break;
                }
            }
        }
        let _ = writer.shutdown(Shutdown::Both);
    });
    loop {
        match Frame::read_from(&mut reader) {
            Ok(Some(f)) if f.kind == FrameType::Control => hub.control(&f.payload),
            Ok(Some(_)) => {}
            Ok(None) | Err(_) => break,
        }
    }
    if hub.stop.load(Ordering::Relaxed) {
        let _ = writer.join();
    }
    let _ = shutdown.shutdown(Shutdown::Read);
}

#[allow(clippy::result_large_err)]
fn only_ws_path(req: &Request, resp: Response) -> std::result::Result<Response, ErrorResponse> {
    if req.uri().path() == "/ws" {
        Ok(resp)
    } else {
        let mut err = ErrorResponse::new(Some("not found".into()));
        *err.status_mut() = tungstenite::http::StatusCode::NOT_FOUND;
        Err(err)
    }
}

fn ws_client(stream: TcpStream, hub: Arc<Hub>) {
    let Ok(mut ws) = tungstenite::accept_hdr(stream, only_ws_path) else { return };
    if ws.get_mut().set_read_timeout(Some(POLL)).is_err() || ws.get_mut().set_write_timeout(Some(WRITE_TIMEOUT)).is_err() {
        return;
    }
    let rx = hub.register(true);
    let _ = ws_loop(&mut ws, &rx, &hub);
    let _ = ws.close(None);
    let _ = ws.flush();
}

fn ws_loop(ws: &mut WebSocket<TcpStream>, rx: &Receiver<Outgoing>, hub: &Hub) -> tungstenite::Result<()> {
    loop {
        let stopping = hub.stop.load(Ordering::Relaxed);
        while let Ok(msg) = rx.try_recv() {
            if let Outgoing::Ws(text) = msg {
                ws.send(Message::text(text.as_str()))?;
            }
        }
        if stopping {
            return Ok(());
        }
        match ws.read() {
            Ok(Message::Text(t)) => hub.control(t.as_str()),
            Ok(Message::Close(_)) => return Ok(()),
            Ok(_) => {}
            Err(tungstenite::Error::Io(e)) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut) => {}
            Err(e) => return Err(e),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ServeOptions {
    pub speed: f64,
    /// Hold the replay until this many clients have connected.
    pub wait_clients: usize,
    /// Where the last published network is written on shutdown.
    pub out: PathBuf,
    /// Keep serving after the replay ends, until shutdown.
    pub linger: bool,
}

#[derive(Debug)]
pub struct ServeOutcome {
    pub summary: PipelineSummary,
    pub last: Option<Published>,
    pub networks_sent: u64,
    pub frames_dropped: u64,
    pub interrupted: bool,
}

/// Replays `rec` through the pipeline and publishes everything until the
/// replay ends (or, with `linger`, until `shutdown` fires). The last network
/// is written to `opts.out`.
pub fn serve(
    config: &PipelineConfig,
    rec: Arc<RawRecording>,
    listeners: Listeners,
    opts: &ServeOptions,
    shutdown: Receiver<()>,
) -> Result<ServeOutcome> {
    let info = StreamInfo::new(config, &rec.header)?;
    let stop = Arc::new(AtomicBool::new(false));
    let (gate_tx, gate_rx) = bounded::<()>(1);
    let replay = Replay::new(rec, config.block_size, opts.speed)?.with_stop(stop.clone());
    // The replay clock starts when the first block is pulled, after the gate.
    let gated = std::iter::once(()).flat_map(move |_| {
        let _ = gate_rx.recv();
        std::iter::empty::<Result<connstream_core::preprocess::Block>>()
    });
    let source = gated.chain(replay);
    let handle = pipeline::spawn(config, info, source)?;
    let hub = Arc::new(Hub::new(handle.control.clone()));

    let Listeners { tcp, ws } = listeners;
    let accept = [(tcp, tcp_client as fn(TcpStream, Arc<Hub>)), (ws, ws_client as fn(TcpStream, Arc<Hub>))].map(|(l, f)| {
        let hub = hub.clone();
        thread::spawn(move || accept_loop(l, hub, f))
    });

    let mut interrupted = false;
    let mut waiting = true;
    while waiting && hub.connected() < opts.wait_clients {
        if shutdown.recv_timeout(POLL).is_ok() {
            interrupted = true;
            stop.store(true, Ordering::Relaxed);
            waiting = false;
        }
    }
    let _ = gate_tx.send(());

    let events = handle.events.clone();
    let mut signal = shutdown.clone();
    let mut last = None;
    let mut networks_sent = 0;
    loop {
        select! {
            recv(events) -> ev => {
                let Ok(ev) = ev else { break };
                match ev {
                    PipelineEvent::Network(p) => {
                        hub.broadcast(FrameType::Network, &p.json)?;
                        networks_sent += 1;
                        last = Some(p);
                    }
                    PipelineEvent::Timing(t) => hub.broadcast(FrameType::Timing, &t.to_json())?,
                    PipelineEvent::Ack(a) => hub.broadcast(FrameType::Ack, &a.to_json())?,
                }
            }
            recv(signal) -> _ => {
                // Stop the replay; queued blocks still drain through.
                interrupted = true;
                stop.store(true, Ordering::Relaxed);
                signal = crossbeam_channel::never();
            }
        }
    }
    let summary = handle.join();
    if let Some(p) = &last {
        write_network(&opts.out, &p.json)?;
    }
    if opts.linger && !interrupted {
        let _ = shutdown.recv();
        interrupted = true;
    }
    hub.stop.store(true, Ordering::Relaxed);
    hub.clients.lock().unwrap().clear();
    for t in accept {
        let _ = t.join();
    }
    let workers = std::mem::take(&mut *hub.workers.lock().unwrap());
    for t in workers {
        let _ = t.join();
    }
    Ok(ServeOutcome {
        summary: summary?,
        last,
        networks_sent,
        frames_dropped: hub.dropped(),
        interrupted,
    })
}

pub fn write_network(path: &std::path::Path, json: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, format!("{json}\n")).map_err(|e| Error::io(path, e))
}
