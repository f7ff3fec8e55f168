//! Live sessions over TCP.
//!
//! Each line on the socket is one JSON envelope
//! `{"session_id": .., "seq": .., "type": .., "payload": ..}`. A client
//! opens or resumes a session with `hello`, streams `gaze` samples and
//! sends `command`, `confirm` and `reject`; the server answers with
//! `hello`, `scene_init`, and then a `snapshot` every tick plus `plan`,
//! `notice` and `error` messages as they arise.
//!
//! [`Session`] holds all protocol logic and is transport-free; the server
//! only moves lines between sockets and sessions.

use std::collections::HashMap;
use std::io::{self, BufRead, BufReader, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::control::{ControlParams, Event, Mode};
use crate::engine::{Engine, Snapshot};
use crate::intent::{GazeSample, IntentParams};
use crate::planner::Plan;
use crate::scenario::Scenario;
use crate::scene::{BBox, ObjectId, SceneFrame, WorkspaceObject};

pub const PROTOCOL_VERSION: u32 = 1;

/// Gaze samples closer together than this are coalesced (10 per second).
pub const MIN_GAZE_INTERVAL: f64 = 0.1;
pub const HEARTBEAT_INTERVAL: f64 = 5.0;
pub const DETACHED_KEEPALIVE: Duration = Duration::from_secs(30);
pub const DEFAULT_TICK_HZ: f64 = 20.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session_id: Option<String>,
    pub seq: u64,
    #[serde(flatten)]
    pub message: Message,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "payload", rename_all = "snake_case")]
pub enum Message {
    Hello(Hello),
    SceneInit(SceneInit),
    Gaze(GazeSample),
    Command { text: String },
    Confirm,
    Reject,
    Snapshot(Box<Snapshot>),
    Plan(Plan),
    Notice { text: String },
    Error { message: String },
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Hello {
    pub version: u32,
    /// Session configuration; the server default is used when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario: Option<Box<Scenario>>,
    /// Set by a client resuming a detached session.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resume: Option<String>,
}

/// Scene description. From the server it describes the session; from a
/// client it replaces the image boxes and may add workspace objects.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SceneInit {
    pub image: [f64; 2],
    pub boxes: Vec<(ObjectId, BBox)>,
    #[serde(default)]
    pub workspace: Vec<WorkspaceObject>,
    /// Image object id to workspace object id.
    #[serde(default)]
    pub alignment: Vec<(ObjectId, ObjectId)>,
}

#[derive(Debug, Clone)]
pub struct SessionParams {
    pub intent: IntentParams,
    pub control: ControlParams,
    pub shared: bool,
}

/// One live session: an engine plus protocol bookkeeping.
pub struct Session {
    id: String,
    engine: Engine,
    last_in_seq: Option<u64>,
    out_seq: u64,
    pending_gaze: Option<GazeSample>,
    last_received_t: Option<f64>,
    last_fed_t: Option<f64>,
    coalesced: u64,
    coalesce_noticed: bool,
    last_heartbeat: f64,
    last_mode: Mode,
    outbox: Vec<Envelope>,
}

impl Session {
    /// Builds the engine (aligning once) and queues `hello` and `scene_init`.
    pub fn open(id: String, scenario: &Scenario, params: &SessionParams) -> Result<Self, String> {
        let mut scenario = scenario.clone();
        scenario.finalize().map_err(|e| e.to_string())?;
        let engine =
            Engine::from_scenario(&scenario, params.intent, params.control, params.shared).map_err(|e| e.to_string())?;
        let mut s = Self {
            id,
            last_mode: engine.state().mode,
            engine,
            last_in_seq: None,
            out_seq: 0,
            pending_gaze: None,
            last_received_t: None,
            last_fed_t: None,
            coalesced: 0,
            coalesce_noticed: false,
            last_heartbeat: 0.0,
            outbox: Vec::new(),
        };
        s.push(Message::Hello(Hello { version: PROTOCOL_VERSION, scenario: None, resume: Some(s.id.clone()) }));
        s.push(Message::SceneInit(s.scene_init()));
        Ok(s)
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    /// Number of gaze samples dropped by rate limiting.
    pub fn coalesced(&self) -> u64 {
        self.coalesced
    }

    fn scene_init(&self) -> SceneInit {
        let scene = self.engine.scene();
        SceneInit {
            image: [scene.image_w, scene.image_h],
            boxes: scene.boxes.clone(),
            workspace: Vec::new(),
            alignment: self.engine.id_map().iter().map(|(a, b)| (a.clone(), b.clone())).collect(),
        }
    }

    fn push(&mut self, message: Message) {
        self.out_seq += 1;
        self.outbox.push(Envelope { session_id: Some(self.id.clone()), seq: self.out_seq, message });
    }

    fn notice(&mut self, text: impl Into<String>) {
        self.push(Message::Notice { text: text.into() });
    }

    fn error(&mut self, message: impl Into<String>) {
        self.push(Message::Error { message: message.into() });
    }

    /// Takes all queued outgoing messages.
    pub fn drain(&mut self) -> Vec<Envelope> {
        std::mem::take(&mut self.outbox)
    }

    /// Handles one client message. Replies are queued, never returned.
    pub fn ingest(&mut self, env: Envelope) {
        if let Some(last) = self.last_in_seq {
            if env.seq <= last {
                self.error(format!("out-of-order seq {} (last accepted {last})", env.seq));
                return;
            }
        }
        self.last_in_seq = Some(env.seq);
        match env.message {
            Message::Gaze(g) => self.receive_gaze(g),
            Message::Command { text } => self.event(Event::Command(text)),
            Message::Confirm => self.event(Event::Confirm),
            Message::Reject => self.event(Event::Reject),
            Message::SceneInit(init) => self.update_scene(init),
            Message::Hello(_) => self.error("session already open"),
            other => self.error(format!("unexpected client message `{}`", message_type(&other))),
        }
    }

    fn receive_gaze(&mut self, g: GazeSample) {
        if !(g.t.is_finite() && g.x.is_finite() && g.y.is_finite()) {
            self.error("non-finite gaze sample");
            return;
        }
        if self.last_received_t.is_some_and(|t| g.t <= t) {
            self.error(format!("gaze sample at t={} is not after the previous one", g.t));
            return;
        }
        self.last_received_t = Some(g.t);
        let too_soon = self.last_fed_t.is_some_and(|t| g.t - t < MIN_GAZE_INTERVAL - 1e-9);
        if self.pending_gaze.is_some() || too_soon {
            self.coalesced += 1;
            if !self.coalesce_noticed {
                self.coalesce_noticed = true;
                self.notice("gaze arrives faster than 10/s; coalescing to the most recent sample");
            }
        }
        self.pending_gaze = Some(g);
    }

    fn event(&mut self, e: Event) {
        if let Some(n) = self.engine.handle(&e) {
            self.notice(n);
        }
        self.after_transition();
    }

    fn after_transition(&mut self) {
        let mode = self.engine.state().mode;
        if mode == Mode::Executing && self.last_mode != Mode::Executing {
            if let Some(plan) = self.engine.last_plan().cloned() {
                self.push(Message::Plan(plan));
            }
        }
        self.last_mode = mode;
    }

    fn update_scene(&mut self, init: SceneInit) {
        let scene = self.engine.scene();
        let frame = match SceneFrame::new(scene.t + 1, init.image[0], init.image[1], scene.expand, init.boxes) {
            Ok(f) => f,
            Err(e) => return self.error(e.to_string()),
        };
        let mut realigned = self.engine.set_scene(frame);
        for obj in init.workspace {
            match self.engine.add_workspace_object(obj) {
                Ok(_) => realigned = true,
                Err(e) => self.error(e.to_string()),
            }
        }
        if realigned {
            self.notice(format!("new objects appeared; re-aligned {} objects", self.engine.id_map().len()));
            self.push(Message::SceneInit(self.scene_init()));
        }
    }

    /// One control tick: feed at most one (coalesced) gaze sample, advance
    /// control, and queue a snapshot.
    pub fn tick(&mut self, dt: f64) {
        if let Some(g) = self.pending_gaze {
            if self.last_fed_t.is_none_or(|t| g.t - t >= MIN_GAZE_INTERVAL - 1e-9) {
                self.pending_gaze = None;
                self.last_fed_t = Some(g.t);
                if let Err(e) = self.engine.ingest_gaze(&g) {
                    self.error(e.to_string());
                }
            }
        }
        for n in self.engine.tick(dt) {
            self.notice(n);
        }
        self.after_transition();
        if self.engine.time() - self.last_heartbeat >= HEARTBEAT_INTERVAL - 1e-9 {
            self.last_heartbeat = self.engine.time();
            self.notice(format!("heartbeat t={:.1}s coalesced={}", self.engine.time(), self.coalesced));
        }
        self.push(Message::Snapshot(Box::new(self.engine.snapshot())));
    }
}

fn message_type(m: &Message) -> &'static str {
    match m {
        Message::Hello(_) => "hello",
        Message::SceneInit(_) => "scene_init",
        Message::Gaze(_) => "gaze",
        Message::Command { .. } => "command",
        Message::Confirm => "confirm",
        Message::Reject => "reject",
        Message::Snapshot(_) => "snapshot",
        Message::Plan(_) => "plan",
        Message::Notice { .. } => "notice",
        Message::Error { .. } => "error",
    }
}

#[derive(Debug, Clone)]
pub struct ServerConfig {
    pub intent: IntentParams,
    pub control: ControlParams,
    pub tick_hz: f64,
    pub keepalive: Duration,
    /// Used when a client's hello carries no scenario.
    pub default_scenario: Option<Scenario>,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            intent: IntentParams::default(),
            control: ControlParams::default(),
            tick_hz: DEFAULT_TICK_HZ,
            keepalive: DETACHED_KEEPALIVE,
            default_scenario: None,
        }
    }
}

struct Slot {
    session: Session,
    writer: Option<TcpStream>,
    detached_since: Option<Instant>,
    /// Which connection currently owns the writer.
    conn: u64,
}

impl Slot {
    fn flush(&mut self) {
        let out = self.session.drain();
        let Some(w) = &mut self.writer else { return };
        let mut buf = Vec::new();
        for env in &out {
            serde_json::to_writer(&mut buf, env).expect("envelope serializes");
            buf.push(b'\n');
        }
        if w.write_all(&buf).is_err() {
            self.writer = None;
            self.detached_since = Some(Instant::now());
        }
    }
}

/// All live sessions. Each session sits behind its own lock, so ingest and
/// tick never interleave within a session.
#[derive(Clone, Default)]
pub struct Registry {
    sessions: Arc<Mutex<HashMap<String, Arc<Mutex<Slot>>>>>,
}

impl Registry {
    pub fn len(&self) -> usize {
        self.sessions.lock().expect("registry lock").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn contains(&self, id: &str) -> bool {
        self.sessions.lock().expect("registry lock").contains_key(id)
    }

    fn get(&self, id: &str) -> Option<Arc<Mutex<Slot>>> {
        self.sessions.lock().expect("registry lock").get(id).cloned()
    }

    fn insert(&self, id: String, slot: Slot) -> Arc<Mutex<Slot>> {
        let slot = Arc::new(Mutex::new(slot));
        self.sessions.lock().expect("registry lock").insert(id, slot.clone());
        slot
    }

    fn all(&self) -> Vec<Arc<Mutex<Slot>>> {
        let map = self.sessions.lock().expect("registry lock");
        let mut ids: Vec<&String> = map.keys().collect();
        ids.sort();
        ids.into_iter().map(|k| map[k].clone()).collect()
    }

    /// Marks a session as disconnected at `now`.
    pub fn detach(&self, id: &str, now: Instant) {
        if let Some(slot) = self.get(id) {
            let mut s = slot.lock().expect("session lock");
            s.writer = None;
            s.detached_since = Some(now);
        }
    }

    /// Drops sessions detached for longer than `keep`; returns their ids.
    pub fn reap(&self, now: Instant, keep: Duration) -> Vec<String> {
        let mut map = self.sessions.lock().expect("registry lock");
        let expired: Vec<String> = map
            .iter()
            .filter(|(_, slot)| {
                let s = slot.lock().expect("session lock");
                s.detached_since.is_some_and(|t| now.duration_since(t) > keep)
            })
            .map(|(id, _)| id.clone())
            .collect();
        for id in &expired {
            map.remove(id);
        }
        expired
    }
}

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    registry: Registry,
    threads: Vec<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn registry(&self) -> &Registry {
        &self.registry
    }

    /// Stops accepting, ends the tick loop, and waits for both threads.
    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // unblock accept()
        let _ = TcpStream::connect(self.addr);
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }

    /// Blocks until the server stops.
    pub fn join(mut self) {
        for t in self.threads.drain(..) {
            let _ = t.join();
        }
    }
}

/// Binds, then runs the accept loop and the tick loop on background threads.
pub fn serve(addr: impl ToSocketAddrs, config: ServerConfig) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let registry = Registry::default();
    let config = Arc::new(config);
    let counter = Arc::new(AtomicU64::new(0));

    let ticker = {
        let (stop, registry, config) = (stop.clone(), registry.clone(), config.clone());
        std::thread::spawn(move || tick_loop(&registry, &config, &stop))
    };
    let acceptor = {
        let (stop, registry) = (stop.clone(), registry.clone());
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = stream else { continue };
                let (registry, config, counter) = (registry.clone(), config.clone(), counter.clone());
                std::thread::spawn(move || {
                    let _ = handle_connection(stream, &registry, &config, &counter);
                });
            }
        })
    };
    Ok(ServerHandle { addr: local, stop, registry, threads: vec![ticker, acceptor] })
}

fn tick_loop(registry: &Registry, config: &ServerConfig, stop: &AtomicBool) {
    let period = Duration::from_secs_f64(1.0 / config.tick_hz);
    let dt = 1.0 / config.tick_hz;
    let mut next = Instant::now() + period;
    while !stop.load(Ordering::SeqCst) {
        for slot in registry.all() {
            let mut s = slot.lock().expect("session lock");
            s.session.tick(dt);
            s.flush();
        }
        registry.reap(Instant::now(), config.keepalive);
        let now = Instant::now();
        if next > now {
            std::thread::sleep(next - now);
        }
        next += period;
    }
}

fn write_line(w: &mut TcpStream, env: &Envelope) -> io::Result<()> {
    let mut line = serde_json::to_vec(env).expect("envelope serializes");
    line.push(b'\n');
    w.write_all(&line)
}

static CONNECTIONS: AtomicU64 = AtomicU64::new(0);

fn handle_connection(stream: TcpStream, registry: &Registry, config: &ServerConfig, counter: &AtomicU64) -> io::Result<()> {
    let conn = CONNECTIONS.fetch_add(1, Ordering::SeqCst);
    let mut writer = stream.try_clone()?;
    let mut lines = BufReader::new(stream).lines();
    let reject = |w: &mut TcpStream, message: String| {
        write_line(w, &Envelope { session_id: None, seq: 1, message: Message::Error { message } })
    };

    // the first line must be hello
    let Some(first) = lines.next() else { return Ok(()) };
    let hello = match serde_json::from_str::<Envelope>(&first?) {
        Ok(Envelope { message: Message::Hello(h), .. }) => h,
        Ok(_) => return reject(&mut writer, "expected hello".into()),
        Err(e) => return reject(&mut writer, format!("malformed message: {e}")),
    };
    if hello.version != PROTOCOL_VERSION {
        return reject(&mut writer, format!("unsupported protocol version {} (server speaks {PROTOCOL_VERSION})", hello.version));
    }

    let slot = match hello.resume.as_deref().and_then(|id| registry.get(id)) {
        Some(slot) => {
            let mut s = slot.lock().expect("session lock");
            s.writer = Some(writer.try_clone()?);
            s.detached_since = None;
            s.conn = conn;
            // seq numbering is per connection
            s.session.last_in_seq = None;
            let id = s.session.id.clone();
            s.session.push(Message::Hello(Hello { version: PROTOCOL_VERSION, scenario: None, resume: Some(id) }));
            s.session.notice("session resumed");
            let init = s.session.scene_init();
            s.session.push(Message::SceneInit(init));
            s.flush();
            drop(s);
            slot
        }
        None => {
            let Some(scenario) = hello.scenario.map(|b| *b).or_else(|| config.default_scenario.clone()) else {
                return reject(&mut writer, "hello carries no scenario and the server has no default".into());
            };
            let id = format!("s{}", counter.fetch_add(1, Ordering::SeqCst) + 1);
            let params = SessionParams { intent: config.intent, control: config.control, shared: scenario.control.shared };
            let session = match Session::open(id.clone(), &scenario, &params) {
                Ok(s) => s,
                Err(e) => return reject(&mut writer, e),
            };
            let slot = registry.insert(id, Slot { session, writer: Some(writer.try_clone()?), detached_since: None, conn });
            slot.lock().expect("session lock").flush();
            slot
        }
    };

    for line in lines {
        let Ok(line) = line else { break };
        if line.trim().is_empty() {
            continue;
        }
        let mut s = slot.lock().expect("session lock");
        match serde_json::from_str::<Envelope>(&line) {
            Ok(env) => s.session.ingest(env),
            Err(e) => s.session.error(format!("malformed message: {e}")),
        }
        s.flush();
    }
    let mut s = slot.lock().expect("session lock");
    // a resumed session may already belong to a newer connection
    if s.conn == conn {
        s.writer = None;
        s.detached_since = Some(Instant::now());
    }
    let _ = writer.shutdown(Shutdown::Both);
    Ok(())
}

/// Minimal blocking client, used by tests and scripted feeds.
pub struct Client {
    writer: TcpStream,
    reader: BufReader<TcpStream>,
    seq: u64,
    pub session_id: Option<String>,
}

impl Client {
    pub fn connect(addr: SocketAddr) -> io::Result<Self> {
        let stream = TcpStream::connect(addr)?;
        stream.set_read_timeout(Some(Duration::from_secs(5)))?;
        Ok(Self { writer: stream.try_clone()?, reader: BufReader::new(stream), seq: 0, session_id: None })
    }

    pub fn send(&mut self, message: Message) -> io::Result<()> {
        self.seq += 1;
        let env = Envelope { session_id: self.session_id.clone(), seq: self.seq, message };
        write_line(&mut self.writer, &env)
    }

    /// Sends an envelope with an explicit seq (for testing ordering rules).
    pub fn send_raw(&mut self, env: &Envelope) -> io::Result<()> {
        write_line(&mut self.writer, env)
    }

    pub fn recv(&mut self) -> io::Result<Envelope> {
        let mut line = String::new();
        if self.reader.read_line(&mut line)? == 0 {
            return Err(io::Error::new(io::ErrorKind::UnexpectedEof, "server closed the connection"));
        }
        serde_json::from_str(&line).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))
    }

    /// Reads until a message satisfies `pred`.
    pub fn recv_until(&mut self, mut pred: impl FnMut(&Envelope) -> bool) -> io::Result<Envelope> {
        loop {
            let env = self.recv()?;
            if pred(&env) {
                return Ok(env);
            }
        }
    }

    /// Sends hello and waits for the server's hello, recording the session id.
    pub fn open(&mut self, scenario: Option<Scenario>, resume: Option<String>) -> io::Result<String> {
        self.send(Message::Hello(Hello { version: PROTOCOL_VERSION, scenario: scenario.map(Box::new), resume }))?;
        let env = self.recv_until(|e| matches!(e.message, Message::Hello(_) | Message::Error { .. } | Message::Notice { .. }))?;
        match (&env.message, env.session_id) {
            (Message::Error { message }, _) => Err(io::Error::new(io::ErrorKind::InvalidInput, message.clone())),
            (_, Some(id)) => {
                self.session_id = Some(id.clone());
                Ok(id)
            }
            _ => Err(io::Error::new(io::ErrorKind::InvalidData, "hello without a session id")),
        }
    }

    pub fn close(self) {
        let _ = self.writer.shutdown(Shutdown::Both);
    }
}
