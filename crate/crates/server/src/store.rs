//! On-disk session and job persistence.

use std::collections::HashMap;
use std::path::{Component, Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{ApiError, ApiResult};
use crate::jobs::JobTicket;
use crate::session::Session;

const SESSION_FILE: &str = "session.json";

/// Writes through a temporary file so readers never see a torn record.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!("tmp-{}", uuid::Uuid::new_v4().simple()));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> ApiResult<T> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| ApiError::internal(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> ApiResult<()> {
    let text = serde_json::to_vec_pretty(value).map_err(ApiError::internal)?;
    write_atomic(path, &text)?;
    Ok(())
}

pub fn parse_id(id: &str) -> ApiResult<String> {
    uuid::Uuid::parse_str(id)
        .map(|u| u.to_string())
        .map_err(|_| ApiError::NotFound(format!("no such id `{id}`")))
}

/// Joins a client-supplied relative path below `root`, refusing anything
/// that could escape it.
pub fn join_relative(root: &Path, rel: &str) -> ApiResult<PathBuf> {
    let rel = Path::new(rel);
    if rel.components().any(|c| !matches!(c, Component::Normal(_))) {
        return Err(ApiError::NotFound(format!("no such file `{}`", rel.display())));
    }
    Ok(root.join(rel))
}

#[derive(Debug)]
pub struct Store {
    root: PathBuf,
    locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

impl Store {
    pub fn open(root: &Path) -> std::io::Result<Self> {
        std::fs::create_dir_all(root.join("sessions"))?;
        std::fs::create_dir_all(root.join("jobs"))?;
        Ok(Self {
            root: root.to_path_buf(),
            locks: Mutex::new(HashMap::new()),
        })
    }

    pub fn session_dir(&self, id: &str) -> PathBuf {
        self.root.join("sessions").join(id)
    }

    fn job_path(&self, id: &str) -> PathBuf {
        self.root.join("jobs").join(format!("{id}.json"))
    }

    fn lock(&self, id: &str) -> Arc<Mutex<()>> {
        let mut locks = self.locks.lock().unwrap_or_else(|e| e.into_inner());
        locks.entry(id.to_string()).or_default().clone()
    }

    pub fn create(&self, session: &Session) -> ApiResult<()> {
        let lock = self.lock(&session.id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.save(session)
    }

    fn save(&self, session: &Session) -> ApiResult<()> {
        session
            .check_invariants()
            .map_err(|e| ApiError::internal(format!("session {}: {e}", session.id)))?;
        write_json(&self.session_dir(&session.id).join(SESSION_FILE), session)
    }

    fn load_unlocked(&self, id: &str) -> ApiResult<Session> {
        let path = self.session_dir(id).join(SESSION_FILE);
        if !path.is_file() {
            return Err(ApiError::NotFound(format!("no session `{id}`")));
        }
        read_json(&path)
    }

    pub fn load(&self, id: &str) -> ApiResult<Session> {
        let id = parse_id(id)?;
        let lock = self.lock(&id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        self.load_unlocked(&id)
    }

    /// Runs `f` on the session under its lock and saves the result when `f`
    /// succeeds.
    pub fn update<T>(&self, id: &str, f: impl FnOnce(&mut Session) -> ApiResult<T>) -> ApiResult<T> {
        let id = parse_id(id)?;
        let lock = self.lock(&id);
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut session = self.load_unlocked(&id)?;
        let out = f(&mut session)?;
        self.save(&session)?;
        Ok(out)
    }

    pub fn session_ids(&self) -> std::io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(self.root.join("sessions"))? {
            let entry = entry?;
            if entry.path().join(SESSION_FILE).is_file() {
                ids.push(entry.file_name().to_string_lossy().to_string());
            }
        }
        Ok(ids)
    }

    pub fn write_file(&self, session: &str, rel: &str, bytes: &[u8]) -> ApiResult<()> {
        write_atomic(&self.session_dir(session).join(rel), bytes)?;
        Ok(())
    }

    pub fn read_file(&self, session: &str, rel: &str) -> ApiResult<Vec<u8>> {
        let path = join_relative(&self.session_dir(session), rel)?;
        std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => ApiError::NotFound(format!("no file `{rel}`")),
            _ => ApiError::internal(e),
        })
    }

    pub fn save_job(&self, ticket: &JobTicket) -> ApiResult<()> {
        write_json(&self.job_path(&ticket.id), ticket)
    }

    pub fn load_job(&self, id: &str) -> ApiResult<JobTicket> {
        let id = parse_id(id)?;
        let path = self.job_path(&id);
        if !path.is_file() {
            return Err(ApiError::NotFound(format!("no job `{id}`")));
        }
        read_json(&path)
    }

    /// Applies `f` to a job ticket. Finished tickets are never changed.
    pub fn update_job(&self, id: &str, f: impl FnOnce(&mut JobTicket)) -> ApiResult<JobTicket> {
        let lock = self.lock(&format!("job:{id}"));
        let _guard = lock.lock().unwrap_or_else(|e| e.into_inner());
        let mut ticket = self.load_job(id)?;
        if ticket.status.is_terminal() {
            return Ok(ticket);
        }
        f(&mut ticket);
        self.save_job(&ticket)?;
        Ok(ticket)
    }

    pub fn job_ids(&self) -> std::io::Result<Vec<String>> {
        let mut ids = Vec::new();
        for entry in std::fs::read_dir(self.root.join("jobs"))? {
            let name = entry?.file_name().to_string_lossy().to_string();
            if let Some(id) = name.strip_suffix(".json") {
                ids.push(id.to_string());
            }
        }
        Ok(ids)
    }
}
