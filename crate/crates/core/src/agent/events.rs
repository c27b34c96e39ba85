use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::BugId;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum EventKind {
    Started {
        port: u16,
    },
    Crash {
        bug: BugId,
    },
    HeapCorrupted {
        death_in_ms: Option<u64>,
    },
    Moved {
        src: PathBuf,
        dst: PathBuf,
        mode: u32,
        digest: String,
    },
    Rejected {
        reason: String,
        src: String,
        dst: String,
    },
    Disconnect,
    WouldExecute {
        path: PathBuf,
        mode: u32,
    },
    ProfileReloaded {
        path: Option<PathBuf>,
        enable_scripting: bool,
    },
    Installer {
        version: String,
        verdict: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub t_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl Event {
    pub fn to_line(&self) -> String {
        serde_json::to_string(self).expect("events serialize")
    }
}

struct Inner {
    events: Vec<Event>,
    file: Option<File>,
}

/// Append-only event log, mirrored to a JSON-lines file when one is configured.
/// Shared across agent restarts.
pub struct EventLog {
    origin: Instant,
    path: Option<PathBuf>,
    inner: Mutex<Inner>,
}

impl EventLog {
    pub fn new(path: Option<&Path>) -> std::io::Result<Self> {
        let file = match path {
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                Some(OpenOptions::new().create(true).append(true).open(p)?)
            }
            None => None,
        };
        Ok(EventLog {
            origin: Instant::now(),
            path: path.map(Path::to_path_buf),
            inner: Mutex::new(Inner {
                events: Vec::new(),
                file,
            }),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn append(&self, kind: EventKind) -> Event {
        let mut inner = self.inner.lock().unwrap();
        let event = Event {
            seq: inner.events.len() as u64,
            t_ms: self.origin.elapsed().as_millis() as u64,
            kind,
        };
        if let Some(file) = inner.file.as_mut() {
            // The in-memory copy stays authoritative if the disk write fails.
            let _ = writeln!(file, "{}", event.to_line());
        }
        inner.events.push(event.clone());
        event
    }

    pub fn snapshot(&self) -> Vec<Event> {
        self.inner.lock().unwrap().events.clone()
    }

    pub fn len(&self) -> usize {
        self.inner.lock().unwrap().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
