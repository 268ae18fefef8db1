//! Single dispatch point between the engine and the compute backends.
//!
//! Three backend kinds ship with the gateway: a local executor running real
//! subprocesses, a PBS-like cluster simulator with FIFO slots, and a
//! volunteer-style desktop grid simulator that replicates work units and
//! validates them by quorum. Simulated backends only move when
//! [`Bridge::step`] advances their clock.

mod cluster;
mod grid;
pub mod launcher;
mod local;

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::sync::{Arc, Mutex, RwLock};

use serde::{Deserialize, Serialize};

pub use cluster::ClusterSim;
pub use grid::{GridSim, ReportOutcome, WorkAssignment};
pub use launcher::{InProcessLauncher, LaunchSpec, Launcher, ProcessLauncher, Program, RunningJob};
pub use local::LocalBackend;

use crate::model::BackendSelector;

pub const MAX_REPLICATION: u32 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Local,
    ClusterSim,
    DesktopGridSim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Health {
    #[default]
    Up,
    Down,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "dist", rename_all = "snake_case")]
pub enum WaitDistribution {
    Uniform { lo: u64, hi: u64 },
    Fixed { ms: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChurnModel {
    pub mean_up_ms: f64,
    pub mean_down_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridParams {
    #[serde(default = "default_replication")]
    pub replication: u32,
    #[serde(default = "default_quorum")]
    pub quorum: u32,
    #[serde(default = "default_max_replication")]
    pub max_replication: u32,
    /// Probability that a worker fails to return any result for an assignment.
    #[serde(default)]
    pub p_fail: f64,
    /// Worker ids that report corrupted results.
    #[serde(default)]
    pub corrupt_workers: BTreeSet<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub churn: Option<ChurnModel>,
}

fn default_replication() -> u32 {
    2
}
fn default_quorum() -> u32 {
    2
}
fn default_max_replication() -> u32 {
    MAX_REPLICATION
}

impl Default for GridParams {
    fn default() -> Self {
        GridParams {
            replication: default_replication(),
            quorum: default_quorum(),
            max_replication: default_max_replication(),
            p_fail: 0.0,
            corrupt_workers: BTreeSet::new(),
            churn: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub id: String,
    pub kind: BackendKind,
    #[serde(default)]
    pub tags: BTreeSet<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slots: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub workers: Option<u32>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub queue_wait_ms: Option<WaitDistribution>,
    #[serde(default = "default_speed")]
    pub speed_factor: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_queue: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridParams>,
    #[serde(default)]
    pub health: Health,
}

fn default_speed() -> f64 {
    1.0
}

impl BackendDescriptor {
    pub fn new(id: impl Into<String>, kind: BackendKind) -> Self {
        BackendDescriptor {
            id: id.into(),
            kind,
            tags: BTreeSet::new(),
            slots: None,
            workers: None,
            seed: 0,
            queue_wait_ms: None,
            speed_factor: 1.0,
            max_queue: None,
            grid: None,
            health: Health::Up,
        }
    }

    pub fn local(id: impl Into<String>, slots: u32) -> Self {
        let mut d = BackendDescriptor::new(id, BackendKind::Local);
        d.slots = Some(slots);
        d
    }

    pub fn cluster(id: impl Into<String>, slots: u32, seed: u64) -> Self {
        let mut d = BackendDescriptor::new(id, BackendKind::ClusterSim);
        d.slots = Some(slots);
        d.seed = seed;
        d
    }

    pub fn grid(id: impl Into<String>, workers: u32, seed: u64) -> Self {
        let mut d = BackendDescriptor::new(id, BackendKind::DesktopGridSim);
        d.workers = Some(workers);
        d.seed = seed;
        d.grid = Some(GridParams::default());
        d
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags = tags.into_iter().map(Into::into).collect();
        self
    }

    pub fn validate(&self) -> Result<(), BridgeError> {
        if !crate::ident::is_valid_ident(&self.id) {
            return Err(BridgeError::InvalidDescriptor(format!("invalid backend id {:?}", self.id)));
        }
        match self.kind {
            BackendKind::Local => {
                if self.slots == Some(0) {
                    return Err(BridgeError::InvalidCapacity("slots must be >= 1".into()));
                }
            }
            BackendKind::ClusterSim => match self.slots {
                Some(s) if s >= 1 => {}
                _ => return Err(BridgeError::InvalidCapacity("cluster_sim needs slots >= 1".into())),
            },
            BackendKind::DesktopGridSim => {
                match self.workers {
                    Some(w) if w >= 1 => {}
                    _ => return Err(BridgeError::InvalidCapacity("desktop_grid_sim needs workers >= 1".into())),
                }
                let g = self.grid.clone().unwrap_or_default();
                if g.quorum < 1 || g.replication < g.quorum || g.max_replication < g.replication {
                    return Err(BridgeError::InvalidDescriptor(format!(
                        "need 1 <= quorum ({}) <= replication ({}) <= max_replication ({})",
                        g.quorum, g.replication, g.max_replication
                    )));
                }
                if g.max_replication > MAX_REPLICATION {
                    return Err(BridgeError::InvalidDescriptor(format!(
                        "max_replication is capped at {MAX_REPLICATION}"
                    )));
                }
                if !(0.0..=1.0).contains(&g.p_fail) {
                    return Err(BridgeError::InvalidDescriptor("p_fail must be in [0, 1]".into()));
                }
            }
        }
        if let Some(WaitDistribution::Uniform { lo, hi }) = self.queue_wait_ms {
            if lo > hi {
                return Err(BridgeError::InvalidDescriptor("queue_wait_ms lo > hi".into()));
            }
        }
        if !(self.speed_factor.is_finite() && self.speed_factor > 0.0) {
            return Err(BridgeError::InvalidDescriptor("speed_factor must be positive".into()));
        }
        Ok(())
    }

    pub fn matches(&self, selector: &BackendSelector) -> bool {
        match selector {
            BackendSelector::Id(id) => *id == self.id,
            BackendSelector::Tags(tags) => tags.is_subset(&self.tags),
        }
    }
}

/// Parses a backend registry file: a JSON list of descriptors.
pub fn parse_registry(json: &str) -> Result<Vec<BackendDescriptor>, BridgeError> {
    serde_json::from_str(json).map_err(|e| BridgeError::InvalidDescriptor(e.to_string()))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobHandle {
    pub backend: String,
    pub ticket: String,
    pub submitted_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DispatchRequest {
    /// Engine-side label, carried into traces.
    pub label: String,
    pub sandbox: PathBuf,
    pub program: Program,
    pub args: Vec<String>,
    pub est_runtime_ms: u64,
}

impl Serialize for Program {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Program::Tool(t) => s.serialize_str(&format!("tool:{t}")),
            Program::Path(p) => s.serialize_str(&format!("path:{}", p.display())),
        }
    }
}

impl<'de> Deserialize<'de> for Program {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        if let Some(t) = s.strip_prefix("tool:") {
            Ok(Program::Tool(t.to_string()))
        } else if let Some(p) = s.strip_prefix("path:") {
            Ok(Program::Path(PathBuf::from(p)))
        } else {
            Err(serde::de::Error::custom(format!("bad program {s:?}")))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum PollStatus {
    Queued,
    Running,
    Done { exit_code: i32 },
    Failed { reason: String },
    /// Desktop-grid only: a replica vanished with its worker. Never surfaces
    /// through [`Bridge::poll`].
    Lost,
}

impl PollStatus {
    pub fn is_terminal(&self) -> bool {
        matches!(self, PollStatus::Done { .. } | PollStatus::Failed { .. })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum TraceKind {
    Enqueued { label: String },
    Started,
    Finished { exit_code: i32 },
    Failed { reason: String },
    Canceled,
    Assigned { worker: u32 },
    Reported { worker: u32, hash: String, verdict: String },
    ReplicaFailed { worker: u32 },
    WorkerDown { worker: u32 },
    WorkerUp { worker: u32 },
    ReplicaLost { worker: u32 },
    Extended { replication: u32 },
    Canonical { hash: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub t_ms: u64,
    pub ticket: String,
    #[serde(flatten)]
    pub kind: TraceKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BridgeError {
    #[error("backend id {0} already registered")]
    DuplicateId(String),
    #[error("invalid capacity: {0}")]
    InvalidCapacity(String),
    #[error("invalid backend descriptor: {0}")]
    InvalidDescriptor(String),
    #[error("no registered backend matches the selector")]
    NoMatchingBackend,
    #[error("every matching backend is down")]
    BackendDown,
    #[error("queue of backend {0} is full")]
    QueueFull(String),
    #[error("unknown handle {0}")]
    UnknownHandle(String),
    #[error("job {0} is already terminal")]
    AlreadyTerminal(String),
    #[error("unknown worker {0}")]
    UnknownWorker(u32),
    #[error("unknown backend {0}")]
    UnknownBackend(String),
    #[error("operation not supported by backend {0}")]
    Unsupported(String),
}

/// Behaviour shared by all backend kinds.
pub trait Backend: Send {
    fn descriptor(&self) -> &BackendDescriptor;
    fn descriptor_mut(&mut self) -> &mut BackendDescriptor;
    fn now_ms(&self) -> u64;
    fn submit(&mut self, req: DispatchRequest) -> Result<String, BridgeError>;
    fn poll(&mut self, ticket: &str) -> Result<PollStatus, BridgeError>;
    fn cancel(&mut self, ticket: &str) -> Result<(), BridgeError>;
    fn step(&mut self, dt_ms: u64);
    /// Jobs queued or running.
    fn load(&self) -> usize;
    fn trace(&self) -> &[TraceEvent];
    fn as_grid(&mut self) -> Option<&mut GridSim> {
        None
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendInfo {
    #[serde(flatten)]
    pub descriptor: BackendDescriptor,
    pub load: usize,
}

type Shared = Arc<Mutex<Box<dyn Backend>>>;

pub struct Bridge {
    launcher: Arc<dyn Launcher>,
    backends: RwLock<BTreeMap<String, Shared>>,
}

impl std::fmt::Debug for Bridge {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Bridge")
            .field("backends", &self.backends.read().unwrap().keys().collect::<Vec<_>>())
            .finish()
    }
}

impl Bridge {
    pub fn new(launcher: Arc<dyn Launcher>) -> Self {
        Bridge {
            launcher,
            backends: RwLock::new(BTreeMap::new()),
        }
    }

    pub fn register_backend(&self, desc: BackendDescriptor) -> Result<String, BridgeError> {
        desc.validate()?;
        let mut backends = self.backends.write().unwrap();
        if backends.contains_key(&desc.id) {
            return Err(BridgeError::DuplicateId(desc.id));
        }
        let id = desc.id.clone();
        let backend: Box<dyn Backend> = match desc.kind {
            BackendKind::Local => Box::new(LocalBackend::new(desc, self.launcher.clone())),
            BackendKind::ClusterSim => Box::new(ClusterSim::new(desc, self.launcher.clone())),
            BackendKind::DesktopGridSim => Box::new(GridSim::new(desc, self.launcher.clone())),
        };
        backends.insert(id.clone(), Arc::new(Mutex::new(backend)));
        Ok(id)
    }

    fn get(&self, id: &str) -> Result<Shared, BridgeError> {
        self.backends
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| BridgeError::UnknownBackend(id.to_string()))
    }

    pub fn list(&self) -> Vec<BackendInfo> {
        let backends: Vec<Shared> = self.backends.read().unwrap().values().cloned().collect();
        backends
            .iter()
            .map(|b| {
                let b = b.lock().unwrap();
                BackendInfo {
                    descriptor: b.descriptor().clone(),
                    load: b.load(),
                }
            })
            .collect()
    }

    /// True if some registered backend (healthy or not) matches.
    pub fn resolvable(&self, selector: &BackendSelector) -> bool {
        self.list().iter().any(|b| b.descriptor.matches(selector))
    }

    pub fn set_health(&self, id: &str, health: Health) -> Result<(), BridgeError> {
        self.get(id)?.lock().unwrap().descriptor_mut().health = health;
        Ok(())
    }

    /// Picks the least-loaded healthy backend matching `selector` (ties go
    /// to the lexicographically smallest id) and enqueues the job there.
    pub fn dispatch(&self, req: DispatchRequest, selector: &BackendSelector) -> Result<JobHandle, BridgeError> {
        let candidates: Vec<(String, Shared)> = self
            .backends
            .read()
            .unwrap()
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        let mut matching = 0;
        let mut best: Option<(usize, String, Shared)> = None;
        for (id, backend) in candidates {
            let b = backend.lock().unwrap();
            if !b.descriptor().matches(selector) {
                continue;
            }
            matching += 1;
            if b.descriptor().health == Health::Down {
                continue;
            }
            let load = b.load();
            drop(b);
            if best.as_ref().map_or(true, |(l, _, _)| load < *l) {
                best = Some((load, id, backend));
            }
        }
        let Some((_, id, backend)) = best else {
            return Err(if matching == 0 {
                BridgeError::NoMatchingBackend
            } else {
                BridgeError::BackendDown
            });
        };
        let mut b = backend.lock().unwrap();
        let ticket = b.submit(req)?;
        Ok(JobHandle {
            backend: id,
            ticket,
            submitted_at: b.now_ms(),
        })
    }

    /// Status of a dispatched job. Once a terminal status has been returned
    /// the handle is retired and later polls fail with `UnknownHandle`.
    pub fn poll(&self, handle: &JobHandle) -> Result<PollStatus, BridgeError> {
        let backend = self
            .get(&handle.backend)
            .map_err(|_| BridgeError::UnknownHandle(handle.ticket.clone()))?;
        let status = backend.lock().unwrap().poll(&handle.ticket)?;
        Ok(match status {
            PollStatus::Lost => PollStatus::Running,
            other => other,
        })
    }

    pub fn cancel(&self, handle: &JobHandle) -> Result<(), BridgeError> {
        let backend = self
            .get(&handle.backend)
            .map_err(|_| BridgeError::UnknownHandle(handle.ticket.clone()))?;
        let mut b = backend.lock().unwrap();
        b.cancel(&handle.ticket)
    }

    /// Advances every simulated clock by `dt_ms` and lets local jobs start.
    pub fn step(&self, dt_ms: u64) {
        let backends: Vec<Shared> = self.backends.read().unwrap().values().cloned().collect();
        for b in backends {
            b.lock().unwrap().step(dt_ms);
        }
    }

    pub fn trace(&self, id: &str) -> Result<Vec<TraceEvent>, BridgeError> {
        Ok(self.get(id)?.lock().unwrap().trace().to_vec())
    }

    /// The trace rendered as JSON lines, for byte-level comparison.
    pub fn trace_jsonl(&self, id: &str) -> Result<String, BridgeError> {
        let mut out = String::new();
        for e in self.trace(id)? {
            out.push_str(&serde_json::to_string(&e).expect("trace event serializes"));
            out.push('\n');
        }
        Ok(out)
    }

    /// Runs `f` against a desktop-grid backend.
    pub fn with_grid<R>(&self, id: &str, f: impl FnOnce(&mut GridSim) -> R) -> Result<R, BridgeError> {
        let backend = self.get(id)?;
        let mut b = backend.lock().unwrap();
        let grid = b.as_grid().ok_or_else(|| BridgeError::Unsupported(id.to_string()))?;
        Ok(f(grid))
    }
}

fn draw_wait(dist: Option<WaitDistribution>, rng: &mut impl rand::Rng) -> u64 {
    match dist {
        None => 0,
        Some(WaitDistribution::Fixed { ms }) => ms,
        Some(WaitDistribution::Uniform { lo, hi }) => rng.random_range(lo..=hi),
    }
}

fn scaled_runtime(est_ms: u64, speed: f64) -> u64 {
    ((est_ms as f64) * speed).round().max(0.0) as u64
}
