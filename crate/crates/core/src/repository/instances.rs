use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use super::{write_atomic, RepoError, Repository};
use crate::instance::{Event, WorkflowInstance};

#[derive(Default)]
struct Stream {
    /// Last committed sequence number, once the log has been scanned.
    last_seq: Option<u64>,
    file: Option<File>,
}

pub(super) struct InstanceStore {
    dir: PathBuf,
    sync: bool,
    streams: Mutex<HashMap<String, Arc<Mutex<Stream>>>>,
}

#[derive(Serialize, Deserialize)]
struct Snapshot {
    seq: u64,
    instance: WorkflowInstance,
}

impl InstanceStore {
    pub(super) fn new(dir: PathBuf, sync: bool) -> Self {
        InstanceStore {
            dir,
            sync,
            streams: Mutex::new(HashMap::new()),
        }
    }

    fn inst_dir(&self, id: &str) -> Result<PathBuf, RepoError> {
        if !crate::ident::is_valid_ident(id) {
            return Err(RepoError::NotFound(format!("instance {id}")));
        }
        Ok(self.dir.join(id))
    }

    fn stream(&self, id: &str) -> Arc<Mutex<Stream>> {
        self.streams.lock().unwrap().entry(id.to_string()).or_default().clone()
    }
}

/// Parsed log plus the byte length of its committed prefix.
struct LogContents {
    events: Vec<Event>,
    committed_len: u64,
}

fn parse_log(instance: &str, bytes: &[u8]) -> Result<LogContents, RepoError> {
    let mut events: Vec<Event> = Vec::new();
    let mut offset = 0usize;
    let mut line_no = 0usize;
    while offset < bytes.len() {
        line_no += 1;
        let Some(nl) = bytes[offset..].iter().position(|&b| b == b'\n') else {
            // torn final write: never committed
            break;
        };
        let line = &bytes[offset..offset + nl];
        let event: Event = serde_json::from_slice(line).map_err(|e| RepoError::CorruptLog {
            instance: instance.to_string(),
            line: line_no,
            reason: e.to_string(),
        })?;
        let expected = events.last().map_or(1, |e| e.seq + 1);
        if event.seq != expected {
            return Err(RepoError::CorruptLog {
                instance: instance.to_string(),
                line: line_no,
                reason: format!("sequence {} where {expected} was expected", event.seq),
            });
        }
        events.push(event);
        offset += nl + 1;
    }
    Ok(LogContents {
        events,
        committed_len: offset as u64,
    })
}

impl Repository {
    fn read_log(&self, id: &str) -> Result<LogContents, RepoError> {
        let path = self.instances.inst_dir(id)?.join("log.jsonl");
        match fs::read(&path) {
            Ok(bytes) => parse_log(id, &bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(RepoError::NotFound(format!("instance {id}"))),
            Err(e) => Err(e.into()),
        }
    }

    /// Appends one event. `event.seq` must be exactly one past the last
    /// committed sequence number (1 for a new instance).
    pub fn append_event(&self, id: &str, event: &Event) -> Result<u64, RepoError> {
        let store = &self.instances;
        let dir = store.inst_dir(id)?;
        let stream = store.stream(id);
        let mut stream = stream.lock().unwrap();
        if stream.last_seq.is_none() {
            let last = match self.read_log(id) {
                Ok(log) => {
                    // drop a torn tail so the next line starts clean
                    let path = dir.join("log.jsonl");
                    let f = OpenOptions::new().write(true).open(&path)?;
                    f.set_len(log.committed_len)?;
                    log.events.last().map_or(0, |e| e.seq)
                }
                Err(RepoError::NotFound(_)) => 0,
                Err(e) => return Err(e),
            };
            stream.last_seq = Some(last);
        }
        let expected = stream.last_seq.expect("scanned above") + 1;
        if event.seq != expected {
            return Err(RepoError::SequenceGap {
                expected,
                got: event.seq,
            });
        }
        if stream.file.is_none() {
            fs::create_dir_all(&dir)?;
            stream.file = Some(OpenOptions::new().create(true).append(true).open(dir.join("log.jsonl"))?);
        }
        let mut line = serde_json::to_vec(event).expect("event serializes");
        line.push(b'\n');
        let file = stream.file.as_mut().expect("opened above");
        if let Err(e) = file.write_all(&line) {
            // the stream state is unknown now; rescan on next append
            stream.file = None;
            stream.last_seq = None;
            return Err(e.into());
        }
        if store.sync {
            file.sync_data()?;
        }
        stream.last_seq = Some(event.seq);
        Ok(event.seq)
    }

    /// Committed events with sequence number greater than `since`.
    pub fn read_events(&self, id: &str, since: u64) -> Result<Vec<Event>, RepoError> {
        let log = self.read_log(id)?;
        Ok(log.events.into_iter().filter(|e| e.seq > since).collect())
    }

    /// Persists a fold of the log; loading starts from the newest snapshot.
    pub fn write_snapshot(&self, inst: &WorkflowInstance) -> Result<(), RepoError> {
        let dir = self.instances.inst_dir(&inst.id)?;
        let snap = Snapshot {
            seq: inst.seq,
            instance: inst.clone(),
        };
        let json = serde_json::to_vec(&snap).expect("snapshot serializes");
        Ok(write_atomic(&dir.join("snapshot.json"), &json, self.instances.sync)?)
    }

    /// Rebuilds an instance from its snapshot (if any) and the log.
    pub fn load_instance(&self, id: &str) -> Result<WorkflowInstance, RepoError> {
        let log = self.read_log(id)?;
        let dir = self.instances.inst_dir(id)?;
        let snapshot = fs::read(dir.join("snapshot.json"))
            .ok()
            .and_then(|b| serde_json::from_slice::<Snapshot>(&b).ok())
            .filter(|s| s.seq as usize <= log.events.len() && s.instance.seq == s.seq);
        let corrupt = |e: crate::instance::ApplyError| RepoError::CorruptLog {
            instance: id.to_string(),
            line: 0,
            reason: e.to_string(),
        };
        match snapshot {
            Some(snap) => {
                let mut inst = snap.instance;
                for e in &log.events[snap.seq as usize..] {
                    inst.apply(e).map_err(corrupt)?;
                }
                Ok(inst)
            }
            None => WorkflowInstance::replay(&log.events).map_err(corrupt),
        }
    }

    /// Fold of the log from genesis, ignoring snapshots.
    pub fn replay_instance(&self, id: &str) -> Result<WorkflowInstance, RepoError> {
        let log = self.read_log(id)?;
        WorkflowInstance::replay(&log.events).map_err(|e| RepoError::CorruptLog {
            instance: id.to_string(),
            line: 0,
            reason: e.to_string(),
        })
    }

    pub fn list_instances(&self) -> Result<Vec<String>, RepoError> {
        let mut ids = Vec::new();
        for entry in fs::read_dir(&self.instances.dir)? {
            let entry = entry?;
            if entry.path().join("log.jsonl").exists() {
                if let Some(id) = entry.file_name().to_str() {
                    ids.push(id.to_string());
                }
            }
        }
        ids.sort();
        Ok(ids)
    }

    pub fn log_path(&self, id: &str) -> Result<PathBuf, RepoError> {
        Ok(self.instances.inst_dir(id)?.join("log.jsonl"))
    }
}
