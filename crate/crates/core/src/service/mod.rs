//! Experiment service: a lab of event-sourced sessions behind HTTP and
//! WebSocket, with on-disk event logs and headless bot sessions.

pub mod bots;
pub mod content;
pub mod http;
pub mod runtime;

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, RwLock};
use std::time::{SystemTime, UNIX_EPOCH};

use thiserror::Error;
use tokio::sync::watch;

pub use bots::{run_bot_runtime, AdoptionScript, BotSeat};
pub use content::{ControlQuestion, SessionContent, SurveyKind, SurveyQuestion};
pub use runtime::{Action, Actor, ClientView, Payload, Phase, PriceInput, RoundFeedback, SessionEvent, SessionRuntime};

use crate::export::{write_table, Table};
use crate::session::{ConfigErrors, ParticipantId, SessionConfig, SessionError};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("admin credential required")]
    Unauthorized,
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("illegal in current phase: {0}")]
    IllegalPhase(String),
    #[error("invalid request: {0}")]
    Invalid(String),
    #[error("invalid session config: {0}")]
    Config(ConfigErrors),
    #[error("event log replay failed: {0}")]
    Replay(String),
    #[error(transparent)]
    Session(SessionError),
    #[error("io: {0}")]
    Io(#[from] io::Error),
}

impl From<SessionError> for ServiceError {
    fn from(e: SessionError) -> Self {
        match e {
            SessionError::Config(c) => ServiceError::Config(c),
            SessionError::Protocol(m) => ServiceError::IllegalPhase(m),
            SessionError::Market(m) => ServiceError::Invalid(m.to_string()),
            SessionError::Domain(m) => ServiceError::Invalid(m),
            other => ServiceError::Session(other),
        }
    }
}

pub type Result<T, E = ServiceError> = std::result::Result<T, E>;

pub fn now_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

/// Export encodings.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ExportFormat {
    Csv(Table),
    Jsonl,
}

#[derive(Clone, Debug, Default)]
pub struct LabConfig {
    /// Event logs live in `<data_dir>/<session>/events.jsonl`.
    pub data_dir: Option<PathBuf>,
    pub admin_secret: Option<String>,
}

struct Stored {
    runtime: SessionRuntime,
    persisted: usize,
    log: Option<File>,
}

/// One session with its single writer and change notifications.
pub struct SessionHandle {
    inner: Mutex<Stored>,
    notify: watch::Sender<u64>,
}

impl SessionHandle {
    fn new(runtime: SessionRuntime, log: Option<File>) -> Self {
        let seq = runtime.events().len() as u64;
        let persisted = runtime.events().len();
        SessionHandle {
            inner: Mutex::new(Stored { runtime, persisted, log }),
            notify: watch::channel(seq).0,
        }
    }

    /// Runs `f` as the session's writer, then persists and announces any
    /// new events. Events reach disk before the caller sees the result.
    pub fn write<T>(&self, f: impl FnOnce(&mut SessionRuntime) -> Result<T>) -> Result<T> {
        let mut guard = self.inner.lock().expect("session lock poisoned");
        let out = f(&mut guard.runtime);
        let stored = &mut *guard;
        let fresh = &stored.runtime.events()[stored.persisted..];
        if !fresh.is_empty() {
            if let Some(file) = stored.log.as_mut() {
                let mut buf = Vec::new();
                for e in fresh {
                    serde_json::to_writer(&mut buf, e).map_err(io::Error::other)?;
                    buf.push(b'\n');
                }
                file.write_all(&buf)?;
                file.sync_data()?;
            }
            stored.persisted = stored.runtime.events().len();
            self.notify.send_replace(stored.persisted as u64);
        }
        out
    }

    pub fn read<T>(&self, f: impl FnOnce(&SessionRuntime) -> T) -> T {
        let guard = self.inner.lock().expect("session lock poisoned");
        f(&guard.runtime)
    }

    pub fn subscribe(&self) -> watch::Receiver<u64> {
        self.notify.subscribe()
    }
}

#[derive(Default)]
struct Index {
    sessions: HashMap<String, Arc<SessionHandle>>,
    tokens: HashMap<String, (String, ParticipantId)>,
    client_tokens: HashMap<String, String>,
}

/// All sessions served by one process.
pub struct Lab {
    config: LabConfig,
    index: RwLock<Index>,
}

#[derive(Clone, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SessionStatus {
    pub session: String,
    pub treatment: crate::session::Treatment,
    pub participants: u32,
    pub joined: u32,
    pub events: u64,
    pub complete: bool,
}

impl Lab {
    /// Opens a lab, replaying every event log found in the data directory.
    pub fn open(config: LabConfig) -> Result<Self> {
        let lab = Lab {
            config,
            index: RwLock::new(Index::default()),
        };
        if let Some(dir) = lab.config.data_dir.clone() {
            fs::create_dir_all(&dir)?;
            let mut entries: Vec<PathBuf> = fs::read_dir(&dir)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.join("events.jsonl").is_file())
                .collect();
            entries.sort();
            for path in entries {
                let runtime = load_log(&path.join("events.jsonl"))?;
                let file = OpenOptions::new().append(true).open(path.join("events.jsonl"))?;
                lab.insert(runtime, Some(file));
            }
        }
        Ok(lab)
    }

    pub fn in_memory() -> Self {
        Lab::open(LabConfig::default()).expect("no data directory to read")
    }

    pub fn admin_secret(&self) -> Option<&str> {
        self.config.admin_secret.as_deref()
    }

    fn insert(&self, runtime: SessionRuntime, log: Option<File>) -> Arc<SessionHandle> {
        let mut index = self.index.write().expect("lab index poisoned");
        let id = runtime.id().to_string();
        if let Some(t) = runtime.client_token() {
            index.client_tokens.insert(t.to_string(), id.clone());
        }
        for (p, token) in runtime.tokens() {
            index.tokens.insert(token.to_string(), (id.clone(), p));
        }
        let handle = Arc::new(SessionHandle::new(runtime, log));
        index.sessions.insert(id, handle.clone());
        handle
    }

    pub fn session(&self, id: &str) -> Result<Arc<SessionHandle>> {
        self.index
            .read()
            .expect("lab index poisoned")
            .sessions
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(format!("session {id}")))
    }

    pub fn session_ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.index.read().expect("lab index poisoned").sessions.keys().cloned().collect();
        ids.sort();
        ids
    }

    fn participant(&self, token: &str) -> Result<(Arc<SessionHandle>, ParticipantId)> {
        let (id, p) = self
            .index
            .read()
            .expect("lab index poisoned")
            .tokens
            .get(token)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound("participant token".into()))?;
        Ok((self.session(&id)?, p))
    }

    /// Creates a session in its lobby. A repeated `client_token` returns the
    /// session created the first time.
    pub fn create_session(&self, config: SessionConfig, content: Option<SessionContent>, client_token: Option<String>) -> Result<String> {
        if let Some(t) = &client_token {
            if let Some(id) = self.index.read().expect("lab index poisoned").client_tokens.get(t) {
                return Ok(id.clone());
            }
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let runtime = SessionRuntime::create(id.clone(), config, content.unwrap_or_default(), client_token, now_ms())?;
        let log = match &self.config.data_dir {
            Some(dir) => {
                let sdir = dir.join(&id);
                fs::create_dir_all(&sdir)?;
                let mut file = File::create(sdir.join("events.jsonl"))?;
                let mut line = serde_json::to_vec(&runtime.events()[0]).map_err(io::Error::other)?;
                line.push(b'\n');
                file.write_all(&line)?;
                file.sync_data()?;
                Some(file)
            }
            None => None,
        };
        self.insert(runtime, log);
        Ok(id)
    }

    /// Takes the next open seat. Joining again with a label already seated
    /// returns that seat's token.
    pub fn join(&self, session: &str, label: Option<String>) -> Result<(String, ParticipantId, ClientView)> {
        let handle = self.session(session)?;
        let (token, participant, view) = handle.write(|rt| {
            if let Some(l) = &label {
                if let Some(p) = rt.participant_by_label(l) {
                    let token = rt.token_of(p).expect("seated").to_string();
                    return Ok((token, p, rt.view(p)?));
                }
            }
            let token = uuid::Uuid::new_v4().simple().to_string();
            let p = rt.join(token.clone(), label, now_ms())?;
            Ok((token, p, rt.view(p)?))
        })?;
        self.index
            .write()
            .expect("lab index poisoned")
            .tokens
            .insert(token.clone(), (session.to_string(), participant));
        Ok((token, participant, view))
    }

    pub fn submit(&self, token: &str, action: Action, idempotency_key: Option<String>) -> Result<ClientView> {
        let (handle, p) = self.participant(token)?;
        handle.write(|rt| rt.submit(p, action, idempotency_key, now_ms()))
    }

    pub fn view(&self, token: &str) -> Result<ClientView> {
        let (handle, p) = self.participant(token)?;
        handle.read(|rt| rt.view(p))
    }

    pub fn subscribe(&self, token: &str) -> Result<(Arc<SessionHandle>, ParticipantId, watch::Receiver<u64>)> {
        let (handle, p) = self.participant(token)?;
        let rx = handle.subscribe();
        Ok((handle, p, rx))
    }

    pub fn advance(&self, session: &str, participant: ParticipantId) -> Result<ClientView> {
        self.session(session)?.write(|rt| rt.admin_advance(participant, now_ms()))
    }

    pub fn status(&self, session: &str) -> Result<SessionStatus> {
        Ok(self.session(session)?.read(|rt| SessionStatus {
            session: rt.id().to_string(),
            treatment: rt.session().treatment(),
            participants: rt.session().config.participants,
            joined: rt.joined(),
            events: rt.events().len() as u64,
            complete: rt.is_complete(),
        }))
    }

    /// Returns the export body and whether the session is still running.
    pub fn export(&self, session: &str, format: ExportFormat) -> Result<(Vec<u8>, bool)> {
        self.session(session)?.read(|rt| {
            let partial = !rt.is_complete();
            Ok((export_runtime(rt, format)?, partial))
        })
    }

    /// Creates a session and drives it to completion with scripted seats.
    pub fn run_bot_session(&self, config: SessionConfig, content: Option<SessionContent>, roster: &[BotSeat]) -> Result<String> {
        let id = self.create_session(config, content, None)?;
        let handle = self.session(&id)?;
        handle.write(|rt| bots::drive(rt, roster))?;
        let tokens: Vec<(String, ParticipantId)> = handle.read(|rt| rt.tokens().map(|(p, t)| (t.to_string(), p)).collect());
        let mut index = self.index.write().expect("lab index poisoned");
        for (t, p) in tokens {
            index.tokens.insert(t, (id.clone(), p));
        }
        Ok(id)
    }
}

pub fn export_runtime(rt: &SessionRuntime, format: ExportFormat) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    match format {
        ExportFormat::Jsonl => {
            for e in rt.events() {
                serde_json::to_writer(&mut out, e).map_err(io::Error::other)?;
                out.push(b'\n');
            }
        }
        ExportFormat::Csv(table) => {
            write_table(rt.session(), table, &mut out).map_err(|e| ServiceError::Session(SessionError::Csv(e)))?;
        }
    }
    Ok(out)
}

/// Reads and folds one JSON-lines event log.
pub fn load_log(path: &Path) -> Result<SessionRuntime> {
    let reader = BufReader::new(File::open(path)?);
    let mut events = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: SessionEvent = serde_json::from_str(&line)
            .map_err(|err| ServiceError::Replay(format!("{}:{}: {err}", path.display(), i + 1)))?;
        events.push(e);
    }
    SessionRuntime::replay(events)
}
