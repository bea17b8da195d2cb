//! Live session service.
//!
//! One loop thread owns the [`Session`]; it ticks on a fixed wall-clock schedule, drains the
//! inbound queue before each tick (latest input wins) and broadcasts events and snapshots.
//! Each console connection gets a reader thread feeding the queue and a writer thread
//! draining its own outbound queue.

use std::io;
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{self, Receiver, Sender};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use anyhow::{Context, Result};
use bodylink::log::TrialLog;
use bodylink::session::{InboundMessage, Session, SessionSetup, TickOutput, TrialOutcome, TrialRecorder};

use crate::logfiles;
use crate::wire::{read_frame, read_frame_bytes, write_frame, Hello, Outbound, PROTOCOL_VERSION};

type ClientId = u64;

/// Read-only fan-out to every connected console.
#[derive(Default)]
pub struct Hub {
    clients: Mutex<Vec<(ClientId, Sender<Outbound>)>>,
    next_id: AtomicU64,
}

impl Hub {
    fn register(&self, tx: Sender<Outbound>) -> ClientId {
        let id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.clients.lock().expect("hub lock").push((id, tx));
        id
    }

    fn remove(&self, id: ClientId) {
        self.clients.lock().expect("hub lock").retain(|(c, _)| *c != id);
    }

    pub fn len(&self) -> usize {
        self.clients.lock().expect("hub lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn broadcast(&self, msg: &Outbound) {
        self.clients
            .lock()
            .expect("hub lock")
            .retain(|(_, tx)| tx.send(msg.clone()).is_ok());
    }

    fn send_to(&self, id: ClientId, msg: Outbound) {
        if let Some((_, tx)) = self.clients.lock().expect("hub lock").iter().find(|(c, _)| *c == id) {
            let _ = tx.send(msg);
        }
    }
}

enum ClientEvent {
    Input(ClientId, InboundMessage),
    Malformed(ClientId, String),
    Closed(ClientId),
}

/// What a new connection is told, and what it must present.
#[derive(Clone)]
pub struct Greeting {
    pub welcome: Outbound,
    pub config_hash: String,
}

fn handshake(stream: &mut TcpStream, greeting: &Greeting) -> io::Result<bool> {
    stream.set_read_timeout(Some(Duration::from_secs(5)))?;
    let hello: Option<Hello> = match read_frame(stream) {
        Ok(h) => h,
        Err(e) => {
            write_frame(stream, &Outbound::Error { message: format!("bad hello: {e}") })?;
            return Ok(false);
        }
    };
    let Some(hello) = hello else { return Ok(false) };
    let refusal = if hello.version != PROTOCOL_VERSION {
        Some(format!(
            "protocol version mismatch: client speaks v{}, server speaks v{PROTOCOL_VERSION}",
            hello.version
        ))
    } else {
        match &hello.config_hash {
            Some(h) if *h != greeting.config_hash => Some(format!(
                "config hash mismatch: client expects {h}, session runs {}",
                greeting.config_hash
            )),
            _ => None,
        }
    };
    if let Some(message) = refusal {
        write_frame(stream, &Outbound::Error { message })?;
        return Ok(false);
    }
    write_frame(stream, &greeting.welcome)?;
    stream.set_read_timeout(None)?;
    Ok(true)
}

fn connection(
    mut stream: TcpStream,
    greeting: Greeting,
    hub: Arc<Hub>,
    inbound: Option<Sender<ClientEvent>>,
) -> io::Result<()> {
    stream.set_nodelay(true)?;
    if !handshake(&mut stream, &greeting)? {
        return Ok(());
    }
    let (tx, rx) = mpsc::channel::<Outbound>();
    let id = hub.register(tx);
    let mut writer = stream.try_clone()?;
    thread::spawn(move || {
        for msg in rx {
            if write_frame(&mut writer, &msg).is_err() {
                break;
            }
        }
        let _ = writer.shutdown(std::net::Shutdown::Both);
    });
    loop {
        match read_frame_bytes(&mut stream) {
            Ok(Some(body)) => {
                let event = match serde_json::from_slice::<InboundMessage>(&body) {
                    Ok(msg) => ClientEvent::Input(id, msg),
                    Err(e) => ClientEvent::Malformed(id, e.to_string()),
                };
                match &inbound {
                    Some(q) => {
                        if q.send(event).is_err() {
                            break;
                        }
                    }
                    None => {
                        // Replay streams take no input.
                        if let ClientEvent::Input(_, InboundMessage::Heartbeat {}) = event {
                            hub.send_to(id, Outbound::HeartbeatAck { t: 0.0 });
                        }
                    }
                }
            }
            Ok(None) | Err(_) => break,
        }
    }
    match &inbound {
        Some(q) => {
            let _ = q.send(ClientEvent::Closed(id));
        }
        None => hub.remove(id),
    }
    Ok(())
}

fn accept_loop(
    listener: TcpListener,
    greeting: Greeting,
    hub: Arc<Hub>,
    inbound: Option<Sender<ClientEvent>>,
    stop: Arc<AtomicBool>,
) {
    listener.set_nonblocking(true).expect("nonblocking listener");
    while !stop.load(Ordering::Relaxed) {
        match listener.accept() {
            Ok((stream, _)) => {
                let _ = stream.set_nonblocking(false);
                let (greeting, hub, inbound) = (greeting.clone(), hub.clone(), inbound.clone());
                thread::spawn(move || connection(stream, greeting, hub, inbound));
            }
            Err(e) if e.kind() == io::ErrorKind::WouldBlock => thread::sleep(Duration::from_millis(2)),
            Err(_) => thread::sleep(Duration::from_millis(20)),
        }
    }
}

/// Starts listening and returns the accept-loop handle; used by both live and replay servers.
pub fn listen(
    addr: SocketAddr,
    greeting: Greeting,
    hub: Arc<Hub>,
    stop: Arc<AtomicBool>,
) -> Result<(SocketAddr, JoinHandle<()>)> {
    listen_inner(addr, greeting, hub, None, stop)
}

fn listen_inner(
    addr: SocketAddr,
    greeting: Greeting,
    hub: Arc<Hub>,
    inbound: Option<Sender<ClientEvent>>,
    stop: Arc<AtomicBool>,
) -> Result<(SocketAddr, JoinHandle<()>)> {
    let listener = TcpListener::bind(addr).with_context(|| format!("binding {addr}"))?;
    let local = listener.local_addr()?;
    let handle = thread::spawn(move || accept_loop(listener, greeting, hub, inbound, stop));
    Ok((local, handle))
}

#[derive(Clone, Debug)]
pub struct ServeOptions {
    pub addr: SocketAddr,
    pub log_dir: PathBuf,
}

/// Handle to a running session service.
pub struct ServerHandle {
    pub addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
    session: Option<JoinHandle<Result<Vec<PathBuf>>>>,
}

impl ServerHandle {
    /// Stops the loop (aborting a running trial) and returns the log files written.
    pub fn stop(mut self) -> Result<Vec<PathBuf>> {
        self.stop.store(true, Ordering::Relaxed);
        self.shutdown()
    }

    /// Runs until the process is killed.
    pub fn wait(mut self) -> Result<Vec<PathBuf>> {
        self.shutdown()
    }

    fn shutdown(&mut self) -> Result<Vec<PathBuf>> {
        let written = match self.session.take() {
            Some(h) => h.join().map_err(|_| anyhow::anyhow!("session loop panicked"))??,
            None => vec![],
        };
        self.stop.store(true, Ordering::Relaxed);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
        Ok(written)
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::Relaxed);
    }
}

struct Loop {
    session: Session,
    hub: Arc<Hub>,
    recorder: Option<TrialRecorder>,
    log_dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Loop {
    fn finish_trial(&mut self, trial_id: u32, outcome: &TrialOutcome) -> Result<()> {
        let (completed, reason) = match outcome {
            TrialOutcome::Completed => (true, None),
            TrialOutcome::Aborted { reason } => (false, Some(reason.clone())),
        };
        self.hub.broadcast(&Outbound::TrialFinished {
            trial_id,
            completed,
            reason,
        });
        if let Some(rec) = self.recorder.take() {
            let log: TrialLog = rec.log;
            let (e, t) = logfiles::write_trial(&self.log_dir, &log)?;
            self.written.extend([e, t]);
        }
        Ok(())
    }

    fn publish(&mut self, out: &TickOutput) -> Result<()> {
        if let Some(rec) = &mut self.recorder {
            rec.push(out);
        }
        for e in &out.events {
            self.hub.broadcast(&Outbound::Event(e.clone()));
        }
        if let Some(s) = &out.snapshot {
            self.hub.broadcast(&Outbound::Snapshot(Box::new(s.clone())));
        }
        if let Some((id, outcome)) = &out.finished {
            self.finish_trial(*id, outcome)?;
        }
        Ok(())
    }

    fn abort(&mut self, reason: &str) -> Result<()> {
        if let Some((events, outcome)) = self.session.abort_trial(reason) {
            let id = events[0].trial_id;
            let out = TickOutput {
                events,
                snapshot: Some(self.session.current_snapshot()),
                finished: Some((id, outcome)),
            };
            self.publish(&out)?;
        }
        Ok(())
    }

    fn handle(&mut self, event: ClientEvent) -> Result<()> {
        match event {
            ClientEvent::Input(id, InboundMessage::Heartbeat {}) => {
                self.hub.send_to(id, Outbound::HeartbeatAck { t: self.session.now() });
            }
            ClientEvent::Input(id, msg) => match self.session.handle(&msg) {
                Ok(Some(events)) => {
                    let header = self.session.trial_header().expect("trial started");
                    let mut rec = TrialRecorder::new(header);
                    rec.log.events.extend(events.iter().cloned());
                    rec.log.telemetry.push(self.session.current_snapshot());
                    self.recorder = Some(rec);
                    for e in events {
                        self.hub.broadcast(&Outbound::Event(e));
                    }
                }
                Ok(None) => {}
                Err(e) => self.hub.send_to(id, Outbound::Rejected { reason: e.to_string() }),
            },
            ClientEvent::Malformed(id, reason) => {
                self.hub.send_to(id, Outbound::Rejected { reason: format!("malformed message: {reason}") });
            }
            ClientEvent::Closed(id) => {
                self.hub.remove(id);
                if self.hub.is_empty() && self.session.trial_running() {
                    self.abort("input stream closed")?;
                }
            }
        }
        Ok(())
    }
}

fn session_loop(mut state: Loop, inbound: Receiver<ClientEvent>, stop: Arc<AtomicBool>) -> Result<Vec<PathBuf>> {
    let rate = state.session.setup().tick_rate_control;
    let period = Duration::from_secs_f64(1.0 / f64::from(rate));
    let start = Instant::now();
    let mut n: u32 = 0;
    while !stop.load(Ordering::Relaxed) {
        // Integration step is fixed; lateness only delays the tick, never lengthens dt.
        n += 1;
        let due = start + period * n;
        let now = Instant::now();
        if due > now {
            thread::sleep(due - now);
        }
        while let Ok(event) = inbound.try_recv() {
            state.handle(event)?;
        }
        let out = state.session.tick();
        state.publish(&out)?;
    }
    state.abort("server stopped")?;
    Ok(state.written)
}

/// Starts the live service: binds, then runs the session loop on its own thread.
pub fn spawn(setup: SessionSetup, opts: &ServeOptions) -> Result<ServerHandle> {
    let stop = Arc::new(AtomicBool::new(false));
    let hub = Arc::new(Hub::default());
    let greeting = Greeting {
        welcome: Outbound::Welcome {
            version: PROTOCOL_VERSION,
            config_hash: setup.config_hash.clone(),
            session_id: setup.session_id.clone(),
            tick_rate_control: setup.tick_rate_control,
            tick_rate_telemetry: setup.tick_rate_telemetry,
            replay: false,
        },
        config_hash: setup.config_hash.clone(),
    };
    let (tx, rx) = mpsc::channel();
    let (addr, accept) = listen_inner(opts.addr, greeting, hub.clone(), Some(tx), stop.clone())?;
    let state = Loop {
        session: Session::new(setup),
        hub,
        recorder: None,
        log_dir: opts.log_dir.clone(),
        written: vec![],
    };
    let loop_stop = stop.clone();
    let session = thread::spawn(move || session_loop(state, rx, loop_stop));
    Ok(ServerHandle {
        addr,
        stop,
        accept: Some(accept),
        session: Some(session),
    })
}

/// Minimal blocking client, used by tests and tools.
pub struct Client {
    stream: TcpStream,
    pub welcome: Outbound,
}

impl Client {
    pub fn connect(addr: SocketAddr, config_hash: Option<String>) -> Result<Self> {
        let mut stream = TcpStream::connect(addr).with_context(|| format!("connecting to {addr}"))?;
        stream.set_nodelay(true)?;
        write_frame(
            &mut stream,
            &Hello {
                version: PROTOCOL_VERSION,
                config_hash,
            },
        )?;
        let welcome: Outbound = read_frame(&mut stream)?.context("server closed during handshake")?;
        if let Outbound::Error { message } = &welcome {
            anyhow::bail!("server refused connection: {message}");
        }
        Ok(Self { stream, welcome })
    }

    pub fn send(&mut self, msg: &InboundMessage) -> Result<()> {
        Ok(write_frame(&mut self.stream, msg)?)
    }

    /// Next message, or `None` once the server has closed the stream.
    pub fn recv(&mut self) -> Result<Option<Outbound>> {
        Ok(read_frame(&mut self.stream)?)
    }

    pub fn set_timeout(&self, timeout: Option<Duration>) -> Result<()> {
        Ok(self.stream.set_read_timeout(timeout)?)
    }
}
