//! In-memory sessions backed by an append-only JSON-lines journal.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex as StdMutex, RwLock};

use prefse_core::eval::ConditionTable;
use prefse_core::preference::{ElicitationSession, PreferenceError, PreferenceFunction, ResponseEvent};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::sync::Mutex;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("journal I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("journal encoding: {0}")]
    Json(#[from] serde_json::Error),
    #[error("journal line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("unknown session {0}")]
    UnknownSession(String),
    #[error("duplicate session id {0}")]
    DuplicateSession(String),
    #[error(transparent)]
    Session(#[from] PreferenceError),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum JournalEntry {
    Created { session: ElicitationSession },
    Response { session_id: String, event: ResponseEvent },
}

/// Session state plus values derived from it once it completes.
#[derive(Debug)]
pub struct SessionEntry {
    pub session: ElicitationSession,
    pub preferences: Option<PreferenceFunction>,
    pub conditions: Option<Arc<ConditionTable>>,
}

impl SessionEntry {
    fn new(session: ElicitationSession) -> Self {
        Self { session, preferences: None, conditions: None }
    }
}

pub struct SessionStore {
    sessions: RwLock<HashMap<String, Arc<Mutex<SessionEntry>>>>,
    journal: StdMutex<File>,
    path: PathBuf,
}

impl SessionStore {
    /// Opens (or creates) the journal at `path` and replays it. A trailing
    /// line without a newline that does not parse is a torn write and is cut.
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().read(true).append(true).create(true).open(&path)?;
        let mut text = String::new();
        file.read_to_string(&mut text)?;

        let mut sessions: HashMap<String, ElicitationSession> = HashMap::new();
        let complete_len = text.rfind('\n').map_or(0, |i| i + 1);
        let (body, tail) = text.split_at(complete_len);
        for (idx, line) in body.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: JournalEntry = serde_json::from_str(line)
                .map_err(|e| StoreError::Corrupt { line: idx + 1, message: e.to_string() })?;
            replay(&mut sessions, entry).map_err(|e| StoreError::Corrupt { line: idx + 1, message: e.to_string() })?;
        }
        if !tail.is_empty() {
            match serde_json::from_str::<JournalEntry>(tail) {
                Ok(entry) => {
                    replay(&mut sessions, entry)
                        .map_err(|e| StoreError::Corrupt { line: body.lines().count() + 1, message: e.to_string() })?;
                    file.write_all(b"\n")?;
                }
                Err(_) => {
                    log::warn!("dropping torn journal tail of {} bytes", tail.len());
                    file.set_len(complete_len as u64)?;
                    file.seek(SeekFrom::End(0))?;
                }
            }
            file.sync_data()?;
        }
        let sessions = sessions
            .into_iter()
            .map(|(id, s)| (id, Arc::new(Mutex::new(SessionEntry::new(s)))))
            .collect();
        Ok(Self { sessions: RwLock::new(sessions), journal: StdMutex::new(file), path })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    fn append(&self, entry: &JournalEntry) -> Result<(), StoreError> {
        let mut line = serde_json::to_vec(entry)?;
        line.push(b'\n');
        let mut file = self.journal.lock().unwrap_or_else(|e| e.into_inner());
        file.write_all(&line)?;
        file.sync_data()?;
        Ok(())
    }

    /// Journals and registers a new session.
    pub fn insert(&self, session: ElicitationSession) -> Result<(), StoreError> {
        let mut sessions = self.sessions.write().unwrap_or_else(|e| e.into_inner());
        if sessions.contains_key(&session.id) {
            return Err(StoreError::DuplicateSession(session.id));
        }
        self.append(&JournalEntry::Created { session: session.clone() })?;
        sessions.insert(session.id.clone(), Arc::new(Mutex::new(SessionEntry::new(session))));
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<Arc<Mutex<SessionEntry>>> {
        self.sessions.read().unwrap_or_else(|e| e.into_inner()).get(id).cloned()
    }

    pub fn ids(&self) -> Vec<String> {
        let mut ids: Vec<String> = self.sessions.read().unwrap_or_else(|e| e.into_inner()).keys().cloned().collect();
        ids.sort();
        ids
    }

    /// Applies `event` under the session lock. The event reaches the journal
    /// before the in-memory state changes; rejected events are not journaled.
    pub async fn respond(&self, id: &str, event: ResponseEvent) -> Result<ElicitationSession, StoreError> {
        let entry = self.get(id).ok_or_else(|| StoreError::UnknownSession(id.to_string()))?;
        let mut guard = entry.lock().await;
        let mut next = guard.session.clone();
        next.apply_response(event)?;
        self.append(&JournalEntry::Response { session_id: id.to_string(), event })?;
        guard.session = next;
        Ok(guard.session.clone())
    }

    pub async fn snapshot(&self, id: &str) -> Option<ElicitationSession> {
        let entry = self.get(id)?;
        let guard = entry.lock().await;
        Some(guard.session.clone())
    }
}

fn replay(sessions: &mut HashMap<String, ElicitationSession>, entry: JournalEntry) -> Result<(), StoreError> {
    match entry {
        JournalEntry::Created { session } => {
            if sessions.contains_key(&session.id) {
                return Err(StoreError::DuplicateSession(session.id));
            }
            sessions.insert(session.id.clone(), session);
        }
        JournalEntry::Response { session_id, event } => {
            let s = sessions.get_mut(&session_id).ok_or(StoreError::UnknownSession(session_id))?;
            s.apply_response(event)?;
        }
    }
    Ok(())
}
