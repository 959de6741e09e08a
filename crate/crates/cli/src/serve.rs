//! Live session server: static UI assets over HTTP plus the websocket protocol on `/ws`.
//!
//! One evaluation owner thread holds the operator and the input cursor. Connection
//! handlers only exchange messages with it, so edits and tuples are applied one at
//! a time and never interleave.

use std::collections::{BTreeMap, BTreeSet};
use std::future::Future;
use std::net::{Ipv4Addr, SocketAddr};
use std::path::{Path as FsPath, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{mpsc, Arc};
use std::thread;
use std::time::{Duration, Instant};

use axum::extract::ws::{close_code, CloseFrame, Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{Html, IntoResponse, Response};
use axum::routing::get;
use axum::Router;
use futures::{SinkExt, StreamExt};
use sheetstream_core::io::{open_inputs, IoError, MergedCursor, Source, TupleRecord};
use sheetstream_core::partition::DEFAULT_MAX_PARTITIONS;
use sheetstream_core::{CellAddr, ChangeSet, EngineInstance, Key, Operator, Outcome, Program, SheetModel};
use thiserror::Error;
use tokio::sync::mpsc::{unbounded_channel, UnboundedSender};

use crate::protocol::{key_from_json, key_json, CellDelta, CellView, ClientMsg, Control, ServerMsg, WireValue};

#[derive(Debug, Clone)]
pub struct ServeConfig {
    pub sources: BTreeMap<String, Source>,
    pub port: u16,
    /// 0 replays as fast as possible; 1 paces tuples by their timestamps.
    pub replay_speed: f64,
    pub paused: bool,
    pub static_dir: Option<PathBuf>,
    pub max_partitions: usize,
}

impl ServeConfig {
    pub fn new(sources: BTreeMap<String, Source>, port: u16) -> Self {
        Self {
            sources,
            port,
            replay_speed: 0.0,
            paused: false,
            static_dir: None,
            max_partitions: DEFAULT_MAX_PARTITIONS,
        }
    }
}

#[derive(Debug, Error)]
pub enum ServeError {
    #[error("cannot listen on port {port}: {source}")]
    Bind { port: u16, source: std::io::Error },
    #[error("{0}")]
    Inputs(#[from] IoError),
    #[error("replay speed must be a finite number >= 0, got {0}")]
    Speed(f64),
    #[error("server failed: {0}")]
    Server(std::io::Error),
}

/// State left when the server stops.
pub struct ServeOutcome {
    /// The model with every client edit applied.
    pub model: SheetModel,
    pub operator: Operator,
}

enum Command {
    Connect { id: u64, tx: UnboundedSender<ServerMsg> },
    Disconnect { id: u64 },
    Client { id: u64, msg: ClientMsg },
    Shutdown,
}

#[derive(Clone)]
struct AppState {
    commands: mpsc::Sender<Command>,
    next_id: Arc<AtomicU64>,
    static_dir: Option<Arc<PathBuf>>,
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    program: Program,
    config: ServeConfig,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<ServeOutcome, ServeError> {
    if !config.replay_speed.is_finite() || config.replay_speed < 0.0 {
        return Err(ServeError::Speed(config.replay_speed));
    }
    let addr = SocketAddr::from((Ipv4Addr::LOCALHOST, config.port));
    let listener =
        tokio::net::TcpListener::bind(addr).await.map_err(|source| ServeError::Bind { port: config.port, source })?;

    let (cmd_tx, cmd_rx) = mpsc::channel();
    let (ready_tx, ready_rx) = mpsc::channel();
    let owner_config = config.clone();
    let owner = thread::spawn(move || {
        let program = Arc::new(program);
        let cursor = match open_inputs(program.model(), &owner_config.sources) {
            Ok(c) => {
                let _ = ready_tx.send(Ok(()));
                c
            }
            Err(e) => {
                let _ = ready_tx.send(Err(e));
                return None;
            }
        };
        let mut owner = Owner::new(program, cursor, &owner_config);
        owner.run(cmd_rx);
        Some(owner.finish())
    });
    if let Ok(Err(e)) = ready_rx.recv() {
        let _ = owner.join();
        return Err(ServeError::Inputs(e));
    }

    let state = AppState {
        commands: cmd_tx.clone(),
        next_id: Arc::new(AtomicU64::new(1)),
        static_dir: config.static_dir.map(Arc::new),
    };
    let app = Router::new()
        .route("/", get(index))
        .route("/ws", get(ws_upgrade))
        .route("/{*path}", get(asset))
        .with_state(state);
    eprintln!("listening on http://{addr}");
    let stop = cmd_tx.clone();
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(async move {
            shutdown.await;
            let _ = stop.send(Command::Shutdown);
        })
        .await;
    let _ = cmd_tx.send(Command::Shutdown);
    let outcome = owner.join().expect("evaluation owner panicked").expect("owner started");
    result.map_err(ServeError::Server)?;
    Ok(outcome)
}

const PLACEHOLDER: &str = "<!doctype html>\n<html><head><meta charset=\"utf-8\"><title>sheetstream</title></head>\n<body><p>sheetstream is running. No UI assets were given (<code>--static-dir</code>); the session protocol is on <code>/ws</code>.</p></body></html>\n";

async fn index(State(state): State<AppState>) -> Response {
    match &state.static_dir {
        Some(dir) => read_asset(dir, "index.html").await,
        None => Html(PLACEHOLDER).into_response(),
    }
}

async fn asset(State(state): State<AppState>, Path(path): Path<String>) -> Response {
    match &state.static_dir {
        Some(dir) => read_asset(dir, &path).await,
        None => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn read_asset(dir: &FsPath, rel: &str) -> Response {
    if rel.split('/').any(|part| part == ".." || part.is_empty()) {
        return StatusCode::NOT_FOUND.into_response();
    }
    let path = dir.join(rel);
    let mime = match path.extension().and_then(|e| e.to_str()) {
        Some("html") => "text/html; charset=utf-8",
        Some("js" | "mjs") => "text/javascript",
        Some("css") => "text/css",
        Some("json") => "application/json",
        Some("svg") => "image/svg+xml",
        Some("png") => "image/png",
        _ => "application/octet-stream",
    };
    match tokio::task::spawn_blocking(move || std::fs::read(path)).await {
        Ok(Ok(bytes)) => ([(header::CONTENT_TYPE, mime)], bytes).into_response(),
        _ => StatusCode::NOT_FOUND.into_response(),
    }
}

async fn ws_upgrade(ws: WebSocketUpgrade, State(state): State<AppState>) -> Response {
    ws.on_upgrade(move |socket| session(socket, state))
}

async fn session(socket: WebSocket, state: AppState) {
    let id = state.next_id.fetch_add(1, Ordering::Relaxed);
    let (tx, mut outbox) = unbounded_channel();
    if state.commands.send(Command::Connect { id, tx }).is_err() {
        return;
    }
    let (mut sink, mut stream) = socket.split();
    loop {
        tokio::select! {
            out = outbox.recv() => {
                let Some(msg) = out else { break };
                let text = serde_json::to_string(&msg).expect("message serializes");
                if sink.send(Message::Text(text.into())).await.is_err() {
                    break;
                }
            }
            incoming = stream.next() => match incoming {
                Some(Ok(Message::Text(text))) => match serde_json::from_str::<ClientMsg>(&text) {
                    Ok(msg) => {
                        if state.commands.send(Command::Client { id, msg }).is_err() {
                            break;
                        }
                    }
                    Err(e) => {
                        let frame = CloseFrame { code: close_code::PROTOCOL, reason: close_reason(format!("bad message: {e}")).into() };
                        let _ = sink.send(Message::Close(Some(frame))).await;
                        break;
                    }
                },
                Some(Ok(Message::Binary(_))) => {
                    let frame = CloseFrame { code: close_code::UNSUPPORTED, reason: "binary frames are not supported".into() };
                    let _ = sink.send(Message::Close(Some(frame))).await;
                    break;
                }
                Some(Ok(Message::Ping(_) | Message::Pong(_))) => {}
                Some(Ok(Message::Close(_)) | Err(_)) | None => break,
            }
        }
    }
    let _ = state.commands.send(Command::Disconnect { id });
}

/// Close reasons must fit a 125-byte control frame.
fn close_reason(mut s: String) -> String {
    if s.len() > 120 {
        let mut end = 120;
        while !s.is_char_boundary(end) {
            end -= 1;
        }
        s.truncate(end);
    }
    s
}

struct Session {
    tx: UnboundedSender<ServerMsg>,
    selected: Option<Key>,
}

struct Owner {
    operator: Operator,
    cursor: MergedCursor,
    pending: Option<TupleRecord>,
    exhausted: bool,
    paused: bool,
    speed: f64,
    /// Wall clock and timestamp that pacing is measured from.
    clock: Option<(Instant, u64)>,
    seq: u64,
    sessions: BTreeMap<u64, Session>,
}

impl Owner {
    fn new(program: Arc<Program>, cursor: MergedCursor, config: &ServeConfig) -> Self {
        Self {
            operator: Operator::new(program, config.max_partitions),
            cursor,
            pending: None,
            exhausted: false,
            paused: config.paused,
            speed: config.replay_speed,
            clock: None,
            seq: 0,
            sessions: BTreeMap::new(),
        }
    }

    fn finish(self) -> ServeOutcome {
        ServeOutcome { model: self.operator.model().clone(), operator: self.operator }
    }

    fn run(&mut self, rx: mpsc::Receiver<Command>) {
        loop {
            let cmd = if self.paused || self.exhausted {
                match rx.recv() {
                    Ok(c) => Some(c),
                    Err(_) => return,
                }
            } else {
                match self.wait_for_next() {
                    None => match rx.try_recv() {
                        Ok(c) => Some(c),
                        Err(mpsc::TryRecvError::Empty) => None,
                        Err(mpsc::TryRecvError::Disconnected) => return,
                    },
                    Some(wait) => match rx.recv_timeout(wait) {
                        Ok(c) => Some(c),
                        Err(mpsc::RecvTimeoutError::Timeout) => None,
                        Err(mpsc::RecvTimeoutError::Disconnected) => return,
                    },
                }
            };
            match cmd {
                Some(Command::Shutdown) => return,
                Some(c) => self.handle(c),
                None => self.step(),
            }
        }
    }

    /// How long until the next tuple is due; `None` when it is due now.
    fn wait_for_next(&mut self) -> Option<Duration> {
        if self.speed == 0.0 {
            return None;
        }
        if self.pending.is_none() {
            match self.cursor.next() {
                Some(Ok(r)) => self.pending = Some(r),
                Some(Err(e)) => {
                    self.stop_replay(format!("input: {e}"));
                    return None;
                }
                None => {
                    self.exhausted = true;
                    return None;
                }
            }
        }
        let ts = self.pending.as_ref().expect("pending tuple").ts;
        let (wall, base) = *self.clock.get_or_insert((Instant::now(), ts));
        let due = wall + Duration::from_secs_f64(ts.saturating_sub(base) as f64 / 1000.0 / self.speed);
        due.checked_duration_since(Instant::now()).filter(|d| !d.is_zero())
    }

    fn stop_replay(&mut self, msg: String) {
        self.exhausted = true;
        self.broadcast(&ServerMsg::Error { msg });
    }

    fn broadcast(&self, msg: &ServerMsg) {
        for s in self.sessions.values() {
            let _ = s.tx.send(msg.clone());
        }
    }

    /// Instance a session is looking at: its selection, else the first key.
    fn view_key(&self, s: &Session) -> Option<Key> {
        s.selected.clone().or_else(|| self.operator.keys().first().cloned())
    }

    fn snapshot(&self, key: Option<&Key>) -> ServerMsg {
        let model = self.operator.model();
        let instance = self.operator.instance(key);
        let mut addrs: BTreeSet<CellAddr> = model.cells.iter().map(|c| c.addr).collect();
        for b in &model.bindings {
            addrs.extend(b.region.cells());
        }
        addrs.extend(model.exports.iter().map(|e| e.addr));
        if let Some(inst) = instance {
            addrs.extend(inst.cells().into_iter().map(|(a, _)| a));
        }
        let cells = addrs
            .into_iter()
            .map(|addr| CellView {
                addr: addr.to_string(),
                formula: model.cell(addr).map(|c| c.source.clone()),
                value: WireValue::of(instance, addr),
                export: model.exports.iter().find(|e| e.addr == addr).map(|e| e.name.clone()),
            })
            .collect();
        ServerMsg::Snapshot { instance: key.map(key_json), seq: self.seq, cells }
    }

    fn delta(&self, instance: Option<&EngineInstance>, changes: &ChangeSet) -> Option<ServerMsg> {
        let mut seen = BTreeSet::new();
        let changes: Vec<CellDelta> = changes
            .changed
            .iter()
            .map(|c| c.addr)
            .chain(changes.windows_touched.iter().copied())
            .filter(|a| seen.insert(*a))
            .map(|addr| CellDelta { addr: addr.to_string(), value: WireValue::of(instance, addr) })
            .collect();
        (!changes.is_empty()).then_some(ServerMsg::Delta { seq: self.seq, changes })
    }

    fn keys_msg(&self) -> ServerMsg {
        ServerMsg::Keys { keys: self.operator.keys().iter().map(key_json).collect() }
    }

    fn send(&self, id: u64, msg: ServerMsg) {
        if let Some(s) = self.sessions.get(&id) {
            let _ = s.tx.send(msg);
        }
    }

    fn resnapshot_all(&self) {
        for s in self.sessions.values() {
            let _ = s.tx.send(self.snapshot(self.view_key(s).as_ref()));
        }
    }

    /// Applies the next input tuple, if any.
    fn step(&mut self) {
        let record = match self.pending.take().map(Ok).or_else(|| self.cursor.next()) {
            Some(Ok(r)) => r,
            Some(Err(e)) => return self.stop_replay(format!("input: {e}")),
            None => {
                self.exhausted = true;
                return;
            }
        };
        let before: Vec<Option<Key>> = self.sessions.values().map(|s| self.view_key(s)).collect();
        let keys_before = self.operator.keys().len();
        let outcome = match self.operator.process(&record.stream, &record.values, record.ts) {
            Ok(o) => o,
            Err(e) => return self.stop_replay(format!("input #{}: {e}", record.seq)),
        };
        let Outcome::Applied { key, changes } = outcome else { return };
        self.seq += 1;
        if self.operator.keys().len() != keys_before {
            self.broadcast(&self.keys_msg());
        }
        let instance = self.operator.instance(key.as_ref());
        for (s, old_view) in self.sessions.values().zip(before) {
            let view = self.view_key(s);
            if view != old_view {
                let _ = s.tx.send(self.snapshot(view.as_ref()));
            } else if view == key {
                if let Some(d) = self.delta(instance, &changes) {
                    let _ = s.tx.send(d);
                }
            }
        }
    }

    fn handle(&mut self, cmd: Command) {
        match cmd {
            Command::Connect { id, tx } => {
                let session = Session { tx, selected: None };
                if self.operator.model().partitioned() {
                    let _ = session.tx.send(self.keys_msg());
                }
                let _ = session.tx.send(self.snapshot(self.view_key(&session).as_ref()));
                self.sessions.insert(id, session);
            }
            Command::Disconnect { id } => {
                self.sessions.remove(&id);
            }
            Command::Client { id, msg } => {
                if let Err(msg) = self.client(id, msg) {
                    self.send(id, ServerMsg::Error { msg });
                }
            }
            Command::Shutdown => {}
        }
    }

    fn client(&mut self, id: u64, msg: ClientMsg) -> Result<(), String> {
        let diags =
            |d: Vec<sheetstream_core::Diagnostic>| d.iter().map(|d| d.to_string()).collect::<Vec<_>>().join("; ");
        match msg {
            ClientMsg::SetFormula { addr, formula } => {
                let addr: CellAddr = addr.parse().map_err(|e| format!("bad cell address: {e}"))?;
                self.operator.set_formula(addr, &formula).map_err(diags)?;
                self.seq += 1;
                self.resnapshot_all();
            }
            ClientMsg::MarkExport { addr, name, on } => {
                let addr: CellAddr = addr.parse().map_err(|e| format!("bad cell address: {e}"))?;
                self.operator.set_export(addr, &name, on).map_err(diags)?;
                self.seq += 1;
                self.resnapshot_all();
            }
            ClientMsg::SelectInstance { key } => {
                if !self.operator.model().partitioned() {
                    return Err("model is not partitioned".into());
                }
                let k = key_from_json(&key)
                    .filter(|k| self.operator.keys().contains(k))
                    .ok_or_else(|| format!("no instance with key {key}"))?;
                let snap = self.snapshot(Some(&k));
                if let Some(s) = self.sessions.get_mut(&id) {
                    s.selected = Some(k);
                }
                self.send(id, snap);
            }
            ClientMsg::Control { action: Control::Pause } => self.paused = true,
            ClientMsg::Control { action: Control::Resume } => {
                self.paused = false;
                self.clock = None;
            }
            ClientMsg::Control { action: Control::Step } => {
                self.step();
                self.clock = None;
            }
        }
        Ok(())
    }
}
