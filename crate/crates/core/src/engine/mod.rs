//! Runtime orchestration of workflow instances.
//!
//! The engine is pull-driven: nothing happens until [`Engine::tick`] (or
//! [`Engine::tick_all`]) is called. One tick dispatches ready jobs, advances
//! the simulated backends, polls every outstanding handle, stages outputs of
//! finished jobs, plans nodes whose fan-out became known and promotes jobs
//! whose inputs are all present.

mod planner;
mod staging;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, RwLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::bridge::{Bridge, BridgeError, DispatchRequest, JobHandle, PollStatus, Program};
use crate::clock::Clock;
use crate::instance::{
    instance_of_job, is_legal_transition, ArtifactRef, Event, EventKind, InputPlan, InstanceStatus, JobInstance,
    JobState, StagedInput, WorkflowInstance,
};
use crate::model::{ConfigError, ExecutableRef, WorkflowDefinition};
use crate::repository::{RepoError, Repository, SNAPSHOT_EVERY};
use crate::sweep::DEFAULT_MAX_SWEEP_DEPTH;

use planner::{plan_node, PlanOutcome};
use staging::Collected;

pub const DEFAULT_MAX_ATTEMPTS: u32 = 10;

/// Sandbox file name used for inline scripts.
pub const INLINE_SCRIPT: &str = "inline.sh";

/// Exit code recorded when a job failed without a process exit status.
pub const NO_EXIT_CODE: i32 = -1;

#[derive(Debug, Clone)]
pub struct EngineConfig {
    /// Root under which job sandboxes are created.
    pub work_dir: PathBuf,
    /// Simulated milliseconds the bridge advances per tick.
    pub step_ms: u64,
    pub max_sweep_depth: u32,
    pub max_attempts: u32,
}

impl EngineConfig {
    pub fn new(work_dir: impl Into<PathBuf>) -> Self {
        EngineConfig {
            work_dir: work_dir.into(),
            step_ms: 100,
            max_sweep_depth: DEFAULT_MAX_SWEEP_DEPTH,
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub job: String,
    pub from: JobState,
    pub to: JobState,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum EngineError {
    #[error("unknown instance {0}")]
    UnknownInstance(String),
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("workflow definition is incomplete: {0:?}")]
    IncompleteDefinition(Vec<ConfigError>),
    #[error("no registered backend matches the selector of node {node}")]
    UnresolvableBackendSelector { node: String },
    #[error("node {node} is nested {depth} sweeps deep (limit {max})")]
    SweepTooDeep { node: String, depth: u32, max: u32 },
    #[error("instance {0} is already terminal")]
    AlreadyTerminal(String),
    #[error("job {job} is {state:?}, not in error")]
    NotInErrorState { job: String, state: JobState },
    #[error("job {job} reached the attempt limit of {max}")]
    AttemptLimit { job: String, max: u32 },
    #[error(transparent)]
    Repo(#[from] RepoError),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl From<std::io::Error> for EngineError {
    fn from(e: std::io::Error) -> Self {
        EngineError::Io(e.to_string())
    }
}

struct Slot {
    /// Serializes all mutations of one instance.
    writer: Mutex<()>,
    state: RwLock<WorkflowInstance>,
    seq: Mutex<u64>,
    changed: Condvar,
}

impl Slot {
    fn new(inst: WorkflowInstance) -> Self {
        Slot {
            writer: Mutex::new(()),
            seq: Mutex::new(inst.seq),
            state: RwLock::new(inst),
            changed: Condvar::new(),
        }
    }
}

pub struct Engine {
    bridge: Arc<Bridge>,
    repo: Arc<Repository>,
    clock: Arc<dyn Clock>,
    config: EngineConfig,
    slots: RwLock<BTreeMap<String, Arc<Slot>>>,
}

impl std::fmt::Debug for Engine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Engine").field("config", &self.config).finish()
    }
}

/// Holds the writer lock of one instance while events are emitted.
struct Writer<'a> {
    engine: &'a Engine,
    slot: &'a Slot,
    id: String,
    transitions: Vec<Transition>,
}

impl<'a> Writer<'a> {
    fn inst(&self) -> std::sync::RwLockReadGuard<'_, WorkflowInstance> {
        self.slot.state.read().unwrap()
    }

    fn emit(&mut self, kind: EventKind) -> Result<(), EngineError> {
        if let EventKind::Transition { job, from, to, .. } = &kind {
            let current = self.inst().jobs.get(job).map(|j| j.state);
            if current != Some(*from) || !is_legal_transition(*from, *to) {
                return Err(EngineError::Internal(format!(
                    "refusing transition {from:?} -> {to:?} for {job} (currently {current:?})"
                )));
            }
        }
        let seq = self.inst().seq + 1;
        let event = Event {
            seq,
            t_ms: self.engine.clock.now_ms(),
            kind,
        };
        self.engine.repo.append_event(&self.id, &event)?;
        {
            let mut state = self.slot.state.write().unwrap();
            state
                .apply(&event)
                .map_err(|e| EngineError::Internal(format!("committed event does not apply: {e}")))?;
            if seq % SNAPSHOT_EVERY == 0 {
                self.engine.repo.write_snapshot(&state)?;
            }
        }
        if let EventKind::Transition { job, from, to, .. } = event.kind {
            self.transitions.push(Transition { job, from, to });
        }
        *self.slot.seq.lock().unwrap() = seq;
        self.slot.changed.notify_all();
        Ok(())
    }

    fn transition<'w>(&'w mut self, job: &JobInstance, to: JobState) -> TransitionBuilder<'w, 'a> {
        TransitionBuilder {
            writer: self,
            kind: EventKind::Transition {
                job: job.id.clone(),
                from: job.state,
                to,
                attempt: job.attempt,
                handle: None,
                exit_code: None,
                reason: None,
            },
        }
    }
}

struct TransitionBuilder<'w, 'a> {
    writer: &'w mut Writer<'a>,
    kind: EventKind,
}

impl TransitionBuilder<'_, '_> {
    fn handle(mut self, h: JobHandle) -> Self {
        if let EventKind::Transition { handle, .. } = &mut self.kind {
            *handle = Some(h);
        }
        self
    }

    fn exit(mut self, code: i32, why: Option<String>) -> Self {
        if let EventKind::Transition { exit_code, reason, .. } = &mut self.kind {
            *exit_code = Some(code);
            *reason = why;
        }
        self
    }

    fn attempt(mut self, n: u32) -> Self {
        if let EventKind::Transition { attempt, .. } = &mut self.kind {
            *attempt = n;
        }
        self
    }

    fn emit(self) -> Result<(), EngineError> {
        self.writer.emit(self.kind)
    }
}

impl Engine {
    pub fn new(bridge: Arc<Bridge>, repo: Arc<Repository>, clock: Arc<dyn Clock>, config: EngineConfig) -> Self {
        Engine {
            bridge,
            repo,
            clock,
            config,
            slots: RwLock::new(BTreeMap::new()),
        }
    }

    /// Loads every stored instance. Backend handles do not survive a restart,
    /// so jobs that were submitted or running are moved to error and can be
    /// resubmitted.
    pub fn open(
        bridge: Arc<Bridge>,
        repo: Arc<Repository>,
        clock: Arc<dyn Clock>,
        config: EngineConfig,
    ) -> Result<Self, EngineError> {
        let engine = Engine::new(bridge, repo, clock, config);
        for id in engine.repo.list_instances()? {
            let inst = engine.repo.load_instance(&id)?;
            engine.slots.write().unwrap().insert(id, Arc::new(Slot::new(inst)));
        }
        let ids: Vec<String> = engine.slots.read().unwrap().keys().cloned().collect();
        for id in ids {
            let slot = engine.slot(&id)?;
            let _guard = slot.writer.lock().unwrap();
            let mut w = engine.writer(&slot, &id);
            let orphans: Vec<JobInstance> = w
                .inst()
                .jobs
                .values()
                .filter(|j| matches!(j.state, JobState::Submitted | JobState::Running))
                .cloned()
                .collect();
            for job in orphans {
                w.transition(&job, JobState::Error)
                    .exit(NO_EXIT_CODE, Some("backend handle lost on restart".into()))
                    .emit()?;
            }
        }
        Ok(engine)
    }

    pub fn bridge(&self) -> &Arc<Bridge> {
        &self.bridge
    }

    pub fn repository(&self) -> &Arc<Repository> {
        &self.repo
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    fn slot(&self, id: &str) -> Result<Arc<Slot>, EngineError> {
        self.slots
            .read()
            .unwrap()
            .get(id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownInstance(id.to_string()))
    }

    fn writer<'a>(&'a self, slot: &'a Slot, id: &str) -> Writer<'a> {
        Writer {
            engine: self,
            slot,
            id: id.to_string(),
            transitions: Vec::new(),
        }
    }

    /// Creates an instance. Source jobs come back ready; nothing is
    /// dispatched until the first tick.
    pub fn submit_workflow(&self, def: WorkflowDefinition, owner: &str) -> Result<String, EngineError> {
        def.check().map_err(EngineError::IncompleteDefinition)?;
        for (node, cfg) in &def.configs {
            if !self.bridge.resolvable(&cfg.backend_binding) {
                return Err(EngineError::UnresolvableBackendSelector { node: node.clone() });
            }
        }
        for (node, depth) in planner::sweep_depth(&def) {
            if depth > self.config.max_sweep_depth {
                return Err(EngineError::SweepTooDeep {
                    node,
                    depth,
                    max: self.config.max_sweep_depth,
                });
            }
        }
        let id = uuid::Uuid::new_v4().simple().to_string();
        let created = Event {
            seq: 1,
            t_ms: self.clock.now_ms(),
            kind: EventKind::Created {
                instance: id.clone(),
                owner: owner.to_string(),
                definition: Box::new(def),
            },
        };
        self.repo.append_event(&id, &created)?;
        let inst = WorkflowInstance::genesis(&created).map_err(|e| EngineError::Internal(e.to_string()))?;
        let slot = Arc::new(Slot::new(inst));
        self.slots.write().unwrap().insert(id.clone(), slot.clone());
        let _guard = slot.writer.lock().unwrap();
        let mut w = self.writer(&slot, &id);
        self.plan_pending(&mut w)?;
        self.promote(&mut w)?;
        Ok(id)
    }

    /// One scheduler pass over a single instance, advancing the bridge by
    /// the configured step.
    pub fn tick(&self, id: &str) -> Result<Vec<Transition>, EngineError> {
        let mut out = self.dispatch_phase(id)?;
        self.bridge.step(self.config.step_ms);
        out.extend(self.collect_phase(id)?);
        Ok(out)
    }

    /// One scheduler pass over every live instance with a single bridge step.
    pub fn tick_all(&self) -> Result<BTreeMap<String, Vec<Transition>>, EngineError> {
        let ids = self.instance_ids();
        let mut out: BTreeMap<String, Vec<Transition>> = BTreeMap::new();
        for id in &ids {
            let t = self.dispatch_phase(id)?;
            if !t.is_empty() {
                out.entry(id.clone()).or_default().extend(t);
            }
        }
        self.bridge.step(self.config.step_ms);
        for id in &ids {
            let t = self.collect_phase(id)?;
            if !t.is_empty() {
                out.entry(id.clone()).or_default().extend(t);
            }
        }
        Ok(out)
    }

    fn dispatch_phase(&self, id: &str) -> Result<Vec<Transition>, EngineError> {
        let slot = self.slot(id)?;
        let _guard = slot.writer.lock().unwrap();
        let mut w = self.writer(&slot, id);
        if w.inst().status.is_terminal() {
            return Ok(Vec::new());
        }
        self.dispatch_ready(&mut w)?;
        Ok(w.transitions)
    }

    fn collect_phase(&self, id: &str) -> Result<Vec<Transition>, EngineError> {
        let slot = self.slot(id)?;
        let _guard = slot.writer.lock().unwrap();
        let mut w = self.writer(&slot, id);
        if w.inst().status.is_terminal() {
            return Ok(Vec::new());
        }
        self.poll_active(&mut w)?;
        self.plan_pending(&mut w)?;
        self.promote(&mut w)?;
        Ok(w.transitions)
    }

    fn sandbox(&self, job: &JobInstance) -> PathBuf {
        let instance = instance_of_job(&job.id).unwrap_or("orphan");
        let rest = job.id.split_once('.').map_or(job.id.as_str(), |(_, r)| r);
        self.config
            .work_dir
            .join(instance)
            .join(rest)
            .join(format!("a{}", job.attempt))
    }

    fn dispatch_ready(&self, w: &mut Writer<'_>) -> Result<(), EngineError> {
        let (ready, def) = {
            let inst = w.inst();
            if inst.abort_requested {
                return Ok(());
            }
            let ready: Vec<JobInstance> = inst
                .jobs
                .values()
                .filter(|j| j.state == JobState::Ready)
                .cloned()
                .collect();
            (ready, inst.definition.clone())
        };
        for job in ready {
            let cfg = &def.configs[&job.node];
            let sandbox = self.sandbox(&job);
            staging::materialize(&self.repo, &sandbox, &job.inputs)?;
            let (program, args) = match &cfg.executable_ref {
                ExecutableRef::Tool { name } => (Program::Tool(name.clone()), cfg.arguments.clone()),
                ExecutableRef::File { name } => (Program::Path(name.into()), cfg.arguments.clone()),
                ExecutableRef::Inline { .. } => {
                    let mut args = vec![INLINE_SCRIPT.to_string()];
                    args.extend(cfg.arguments.iter().cloned());
                    (Program::Path("/bin/sh".into()), args)
                }
            };
            let req = DispatchRequest {
                label: job.id.clone(),
                sandbox,
                program,
                args,
                est_runtime_ms: cfg.resource_request.est_runtime_ms,
            };
            match self.bridge.dispatch(req, &cfg.backend_binding) {
                Ok(handle) => w.transition(&job, JobState::Submitted).handle(handle).emit()?,
                Err(e @ (BridgeError::BackendDown | BridgeError::QueueFull(_) | BridgeError::NoMatchingBackend)) => {
                    tracing::debug!(job = %job.id, error = %e, "dispatch deferred");
                }
                Err(e) => {
                    tracing::warn!(job = %job.id, error = %e, "dispatch failed");
                }
            }
        }
        Ok(())
    }

    fn poll_active(&self, w: &mut Writer<'_>) -> Result<(), EngineError> {
        let active: Vec<JobInstance> = w
            .inst()
            .jobs
            .values()
            .filter(|j| matches!(j.state, JobState::Submitted | JobState::Running))
            .cloned()
            .collect();
        for mut job in active {
            let handle = job.handle.clone().expect("submitted and running jobs hold a handle");
            match self.bridge.poll(&handle) {
                Ok(PollStatus::Queued) => {}
                Ok(PollStatus::Running | PollStatus::Lost) => {
                    if job.state == JobState::Submitted {
                        w.transition(&job, JobState::Running).emit()?;
                    }
                }
                Ok(PollStatus::Done { exit_code }) => {
                    if job.state == JobState::Submitted {
                        w.transition(&job, JobState::Running).emit()?;
                        job.state = JobState::Running;
                    }
                    self.complete(w, &job, exit_code)?;
                }
                Ok(PollStatus::Failed { reason }) => {
                    self.capture(w, &job)?;
                    w.transition(&job, JobState::Error).exit(NO_EXIT_CODE, Some(reason)).emit()?;
                }
                Err(e) => {
                    self.capture(w, &job)?;
                    w.transition(&job, JobState::Error)
                        .exit(NO_EXIT_CODE, Some(format!("backend lost the job: {e}")))
                        .emit()?;
                }
            }
        }
        Ok(())
    }

    fn capture(&self, w: &mut Writer<'_>, job: &JobInstance) -> Result<(), EngineError> {
        let sandbox = self.sandbox(job);
        let (stdout, stderr) = staging::capture_streams(&self.repo, &w.id, job, &sandbox)?;
        w.emit(EventKind::StreamsCaptured {
            job: job.id.clone(),
            attempt: job.attempt,
            stdout,
            stderr,
        })
    }

    /// Stages the results of a job whose payload exited.
    fn complete(&self, w: &mut Writer<'_>, job: &JobInstance, exit_code: i32) -> Result<(), EngineError> {
        self.capture(w, job)?;
        if exit_code != 0 {
            return w
                .transition(job, JobState::Error)
                .exit(exit_code, Some(format!("payload exited with code {exit_code}")))
                .emit();
        }
        let spec = w
            .inst()
            .definition
            .graph
            .node(&job.node)
            .cloned()
            .ok_or_else(|| EngineError::Internal(format!("job {} has no node", job.id)))?;
        match staging::collect_outputs(&self.repo, &w.id, job, &spec, &self.sandbox(job))? {
            Collected::Missing(port) => w
                .transition(job, JobState::Error)
                .exit(exit_code, Some(format!("missing declared output {port}")))
                .emit(),
            Collected::Ok { outputs, manifests } => {
                w.emit(EventKind::OutputsStaged {
                    job: job.id.clone(),
                    attempt: job.attempt,
                    outputs,
                    manifests,
                })?;
                w.transition(job, JobState::Finished).exit(exit_code, None).emit()
            }
        }
    }

    fn plan_pending(&self, w: &mut Writer<'_>) -> Result<(), EngineError> {
        let order: Vec<String> = {
            let inst = w.inst();
            if inst.abort_requested {
                return Ok(());
            }
            crate::model::validate_graph(&inst.definition.graph)
                .map(|r| r.topo_order)
                .unwrap_or_default()
        };
        for node in order {
            let outcome = {
                let inst = w.inst();
                if inst.plans.contains_key(&node) || inst.plan_failures.contains_key(&node) {
                    continue;
                }
                plan_node(&inst, &node)
            };
            match outcome {
                PlanOutcome::NotYet => {}
                PlanOutcome::Planned { axes, jobs } => w.emit(EventKind::NodePlanned { node, axes, jobs })?,
                PlanOutcome::Failed(reason) => w.emit(EventKind::PlanFailed { node, reason })?,
            }
        }
        Ok(())
    }

    /// init → ready for every job whose inputs all exist.
    fn promote(&self, w: &mut Writer<'_>) -> Result<(), EngineError> {
        let (candidates, def, outputs) = {
            let inst = w.inst();
            if inst.abort_requested {
                return Ok(());
            }
            let candidates: Vec<JobInstance> = inst
                .jobs
                .values()
                .filter(|j| j.state == JobState::Init)
                .filter(|j| j.deps.iter().all(|d| inst.jobs[d].state == JobState::Finished))
                .cloned()
                .collect();
            let outputs: BTreeMap<(String, String), ArtifactRef> = candidates
                .iter()
                .flat_map(|j| j.deps.iter())
                .flat_map(|d| inst.jobs[d].outputs.iter())
                .map(|a| ((a.job.clone(), a.name.clone()), a.clone()))
                .collect();
            (candidates, inst.definition.clone(), outputs)
        };
        for job in candidates {
            let cfg = &def.configs[&job.node];
            let mut inputs = Vec::with_capacity(job.input_plan.len() + 1);
            for plan in &job.input_plan {
                let staged = match plan {
                    InputPlan::Output { file, job: producer, name } => {
                        let art = outputs
                            .get(&(producer.clone(), name.clone()))
                            .ok_or_else(|| EngineError::Internal(format!("{producer} has no output {name}")))?;
                        self.repo.retain_blob(&art.hash)?;
                        StagedInput {
                            file: file.clone(),
                            hash: art.hash.clone(),
                            size: art.size,
                            executable: false,
                        }
                    }
                    InputPlan::DefinitionFile { file, name } => {
                        let bytes = def
                            .files
                            .get(name)
                            .ok_or_else(|| EngineError::Internal(format!("definition lacks file {name}")))?;
                        self.stage_bytes(file, bytes, false)?
                    }
                    InputPlan::Literal { file, value } => self.stage_bytes(file, value.as_bytes(), false)?,
                };
                inputs.push(staged);
            }
            match &cfg.executable_ref {
                ExecutableRef::Tool { .. } => {}
                ExecutableRef::File { name } => {
                    let bytes = def
                        .files
                        .get(name)
                        .ok_or_else(|| EngineError::Internal(format!("definition lacks file {name}")))?;
                    inputs.push(self.stage_bytes(name, bytes, true)?);
                }
                ExecutableRef::Inline { script } => inputs.push(self.stage_bytes(INLINE_SCRIPT, script.as_bytes(), true)?),
            }
            w.emit(EventKind::InputsStaged {
                job: job.id.clone(),
                inputs,
            })?;
            w.transition(&job, JobState::Ready).emit()?;
        }
        Ok(())
    }

    fn stage_bytes(&self, file: &str, bytes: &[u8], executable: bool) -> Result<StagedInput, EngineError> {
        let hash = self.repo.put_blob(bytes)?;
        Ok(StagedInput {
            file: file.to_string(),
            hash,
            size: bytes.len() as u64,
            executable,
        })
    }

    /// Cancels every outstanding job. All non-terminal jobs become aborted
    /// immediately and nothing is dispatched afterwards.
    pub fn abort(&self, id: &str) -> Result<Vec<Transition>, EngineError> {
        let slot = self.slot(id)?;
        let _guard = slot.writer.lock().unwrap();
        let mut w = self.writer(&slot, id);
        if w.inst().status.is_terminal() || w.inst().abort_requested {
            return Err(EngineError::AlreadyTerminal(id.to_string()));
        }
        w.emit(EventKind::AbortRequested)?;
        let live: Vec<JobInstance> = w
            .inst()
            .jobs
            .values()
            .filter(|j| !j.state.is_terminal())
            .cloned()
            .collect();
        for job in live {
            if let Some(handle) = &job.handle {
                if let Err(e) = self.bridge.cancel(handle) {
                    tracing::debug!(job = %job.id, error = %e, "cancel on abort");
                }
            }
            w.transition(&job, JobState::Aborted).emit()?;
        }
        Ok(w.transitions)
    }

    /// Moves a failed job back to ready for another attempt. Returns the new
    /// attempt number.
    pub fn resubmit_failed(&self, job_id: &str) -> Result<u32, EngineError> {
        let id = instance_of_job(job_id).ok_or_else(|| EngineError::UnknownJob(job_id.to_string()))?;
        let slot = self.slot(id).map_err(|_| EngineError::UnknownJob(job_id.to_string()))?;
        let _guard = slot.writer.lock().unwrap();
        let mut w = self.writer(&slot, id);
        let job = w
            .inst()
            .jobs
            .get(job_id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownJob(job_id.to_string()))?;
        if job.state != JobState::Error {
            return Err(EngineError::NotInErrorState {
                job: job_id.to_string(),
                state: job.state,
            });
        }
        if w.inst().abort_requested {
            return Err(EngineError::AlreadyTerminal(id.to_string()));
        }
        if job.attempt >= self.config.max_attempts {
            return Err(EngineError::AttemptLimit {
                job: job_id.to_string(),
                max: self.config.max_attempts,
            });
        }
        let next = job.attempt + 1;
        w.transition(&job, JobState::Ready).attempt(next).emit()?;
        Ok(next)
    }

    pub fn instance_ids(&self) -> Vec<String> {
        self.slots.read().unwrap().keys().cloned().collect()
    }

    /// Consistent snapshot of an instance.
    pub fn get_instance(&self, id: &str) -> Result<WorkflowInstance, EngineError> {
        Ok(self.slot(id)?.state.read().unwrap().clone())
    }

    /// Reads a projection of the instance under its read lock.
    pub fn with_instance<R>(&self, id: &str, f: impl FnOnce(&WorkflowInstance) -> R) -> Result<R, EngineError> {
        let slot = self.slot(id)?;
        let inst = slot.state.read().unwrap();
        Ok(f(&inst))
    }

    pub fn refresh_status(&self, id: &str) -> Result<InstanceStatus, EngineError> {
        self.with_instance(id, |i| i.compute_status())
    }

    pub fn job(&self, job_id: &str) -> Result<JobInstance, EngineError> {
        let id = instance_of_job(job_id).ok_or_else(|| EngineError::UnknownJob(job_id.to_string()))?;
        let slot = self.slot(id).map_err(|_| EngineError::UnknownJob(job_id.to_string()))?;
        let inst = slot.state.read().unwrap();
        inst.jobs
            .get(job_id)
            .cloned()
            .ok_or_else(|| EngineError::UnknownJob(job_id.to_string()))
    }

    pub fn events(&self, id: &str, since: u64) -> Result<Vec<Event>, EngineError> {
        self.slot(id)?;
        Ok(self.repo.read_events(id, since)?)
    }

    pub fn read_artifact(&self, art: &ArtifactRef) -> Result<Vec<u8>, EngineError> {
        Ok(self.repo.get_blob(&art.hash)?)
    }

    /// Blocks until the instance has moved past sequence `since` or the
    /// timeout passes. Returns the current sequence number.
    pub fn wait_for_change(&self, id: &str, since: u64, timeout: Duration) -> Result<u64, EngineError> {
        let slot = self.slot(id)?;
        let seq = slot.seq.lock().unwrap();
        let (seq, _) = slot
            .changed
            .wait_timeout_while(seq, timeout, |s| *s <= since)
            .unwrap();
        Ok(*seq)
    }

    /// Output artifacts of all finished jobs keyed by `<node>[.coord]/<name>`,
    /// for comparing runs.
    pub fn artifact_set(&self, id: &str) -> Result<BTreeMap<String, String>, EngineError> {
        self.with_instance(id, artifact_set)
    }

    /// Ticks until the instance is terminal or `max_ticks` passes have run.
    /// Returns the number of ticks used.
    pub fn run_to_completion(&self, id: &str, max_ticks: usize) -> Result<usize, EngineError> {
        for n in 0..max_ticks {
            if self.refresh_status(id)?.is_terminal() {
                return Ok(n);
            }
            self.tick(id)?;
        }
        Ok(max_ticks)
    }
}

pub fn artifact_set(inst: &WorkflowInstance) -> BTreeMap<String, String> {
    let mut out = BTreeMap::new();
    for job in inst.jobs.values().filter(|j| j.state == JobState::Finished) {
        let local = job.id.split_once('.').map_or(job.id.as_str(), |(_, r)| r);
        for a in &job.outputs {
            out.insert(format!("{local}/{}", a.name), a.hash.clone());
        }
    }
    out
}
