//! Workflow-instance state and the event log it is folded from.
//!
//! Every change to an instance is an [`Event`]. The engine appends the event
//! to the repository log and then applies it to the in-memory instance with
//! [`WorkflowInstance::apply`]; reloading an instance replays the same fold.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::bridge::JobHandle;
use crate::model::{PortKind, WorkflowDefinition};
use crate::sweep::{Coord, GeneratorManifest, SweepAxis};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Init,
    Ready,
    Submitted,
    Running,
    Finished,
    Error,
    Aborted,
}

impl JobState {
    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Finished | JobState::Error | JobState::Aborted)
    }

    pub fn is_active(self) -> bool {
        matches!(self, JobState::Ready | JobState::Submitted | JobState::Running)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Init => "init",
            JobState::Ready => "ready",
            JobState::Submitted => "submitted",
            JobState::Running => "running",
            JobState::Finished => "finished",
            JobState::Error => "error",
            JobState::Aborted => "aborted",
        }
    }
}

/// The only state changes a job may go through.
pub fn is_legal_transition(from: JobState, to: JobState) -> bool {
    use JobState::*;
    matches!(
        (from, to),
        (Init, Ready)
            | (Ready, Submitted)
            | (Submitted, Running)
            | (Submitted, Error)
            | (Running, Finished)
            | (Running, Error)
            | (Init | Ready | Submitted | Running, Aborted)
            | (Error, Ready)
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstanceStatus {
    Submitted,
    Running,
    Finished,
    Error,
    Aborted,
}

impl InstanceStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, InstanceStatus::Finished | InstanceStatus::Error | InstanceStatus::Aborted)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            InstanceStatus::Submitted => "submitted",
            InstanceStatus::Running => "running",
            InstanceStatus::Finished => "finished",
            InstanceStatus::Error => "error",
            InstanceStatus::Aborted => "aborted",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub instance: String,
    pub job: String,
    /// Output port, generator item, or `stdout` / `stderr`.
    pub name: String,
    pub hash: String,
    pub size: u64,
}

/// Where one sandbox input file comes from. Fixed when the job is planned.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "from", rename_all = "snake_case")]
pub enum InputPlan {
    /// Artifact `name` produced by job `job`.
    Output { file: String, job: String, name: String },
    /// A file uploaded with the workflow definition.
    DefinitionFile { file: String, name: String },
    Literal { file: String, value: String },
}

impl InputPlan {
    pub fn file(&self) -> &str {
        match self {
            InputPlan::Output { file, .. } | InputPlan::DefinitionFile { file, .. } | InputPlan::Literal { file, .. } => {
                file
            }
        }
    }
}

/// An input file placed into the sandbox, by content address.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StagedInput {
    pub file: String,
    pub hash: String,
    pub size: u64,
    #[serde(default)]
    pub executable: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlannedJob {
    pub id: String,
    pub coord: Coord,
    pub deps: Vec<String>,
    pub inputs: Vec<InputPlan>,
}

/// A finished attempt kept around after resubmission.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptRecord {
    pub attempt: u32,
    pub backend: Option<String>,
    pub exit_code: Option<i32>,
    pub reason: Option<String>,
    pub stdout_ref: Option<ArtifactRef>,
    pub stderr_ref: Option<ArtifactRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JobInstance {
    pub id: String,
    pub node: String,
    pub coord: Coord,
    pub state: JobState,
    pub backend: Option<String>,
    pub handle: Option<JobHandle>,
    pub attempt: u32,
    pub deps: Vec<String>,
    pub input_plan: Vec<InputPlan>,
    pub inputs: Vec<StagedInput>,
    pub outputs: Vec<ArtifactRef>,
    pub manifests: Vec<GeneratorManifest>,
    pub stdout_ref: Option<ArtifactRef>,
    pub stderr_ref: Option<ArtifactRef>,
    pub exit_code: Option<i32>,
    pub reason: Option<String>,
    pub history: Vec<AttemptRecord>,
}

impl JobInstance {
    pub fn output(&self, name: &str) -> Option<&ArtifactRef> {
        self.outputs.iter().find(|a| a.name == name)
    }

    pub fn manifest(&self, port: &str) -> Option<&GeneratorManifest> {
        self.manifests.iter().find(|m| m.port == port)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodePlan {
    pub axes: Vec<SweepAxis>,
    /// Job ids in enumeration order.
    pub jobs: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    Created {
        instance: String,
        owner: String,
        definition: Box<WorkflowDefinition>,
    },
    NodePlanned {
        node: String,
        axes: Vec<SweepAxis>,
        jobs: Vec<PlannedJob>,
    },
    PlanFailed {
        node: String,
        reason: String,
    },
    InputsStaged {
        job: String,
        inputs: Vec<StagedInput>,
    },
    Transition {
        job: String,
        from: JobState,
        to: JobState,
        attempt: u32,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        handle: Option<JobHandle>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        exit_code: Option<i32>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        reason: Option<String>,
    },
    StreamsCaptured {
        job: String,
        attempt: u32,
        stdout: ArtifactRef,
        stderr: ArtifactRef,
    },
    OutputsStaged {
        job: String,
        attempt: u32,
        outputs: Vec<ArtifactRef>,
        manifests: Vec<GeneratorManifest>,
    },
    AbortRequested,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Event {
    pub seq: u64,
    pub t_ms: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ApplyError {
    #[error("event {seq} out of order (instance at {at})")]
    OutOfOrder { seq: u64, at: u64 },
    #[error("first event must create the instance")]
    NotCreated,
    #[error("instance already created")]
    AlreadyCreated,
    #[error("unknown job {0}")]
    UnknownJob(String),
    #[error("node {0} planned twice")]
    DuplicatePlan(String),
    #[error("job {job}: recorded {from:?} but job is {actual:?}")]
    StateMismatch {
        job: String,
        from: JobState,
        actual: JobState,
    },
    #[error("job {job}: forbidden transition {from:?} -> {to:?}")]
    Forbidden { job: String, from: JobState, to: JobState },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowInstance {
    pub id: String,
    pub owner: String,
    pub definition: WorkflowDefinition,
    pub status: InstanceStatus,
    pub abort_requested: bool,
    /// Sequence number of the last applied event.
    pub seq: u64,
    pub created_at: u64,
    pub updated_at: u64,
    pub plans: BTreeMap<String, NodePlan>,
    pub plan_failures: BTreeMap<String, String>,
    pub jobs: BTreeMap<String, JobInstance>,
}

impl WorkflowInstance {
    /// Folds a complete log from genesis.
    pub fn replay<'a>(events: impl IntoIterator<Item = &'a Event>) -> Result<Self, ApplyError> {
        let mut events = events.into_iter();
        let first = events.next().ok_or(ApplyError::NotCreated)?;
        let mut inst = WorkflowInstance::genesis(first)?;
        for e in events {
            inst.apply(e)?;
        }
        Ok(inst)
    }

    pub fn genesis(event: &Event) -> Result<Self, ApplyError> {
        let EventKind::Created {
            instance,
            owner,
            definition,
        } = &event.kind
        else {
            return Err(ApplyError::NotCreated);
        };
        if event.seq != 1 {
            return Err(ApplyError::OutOfOrder { seq: event.seq, at: 0 });
        }
        Ok(WorkflowInstance {
            id: instance.clone(),
            owner: owner.clone(),
            definition: (**definition).clone(),
            status: InstanceStatus::Submitted,
            abort_requested: false,
            seq: 1,
            created_at: event.t_ms,
            updated_at: event.t_ms,
            plans: BTreeMap::new(),
            plan_failures: BTreeMap::new(),
            jobs: BTreeMap::new(),
        })
    }

    fn job_mut(&mut self, id: &str) -> Result<&mut JobInstance, ApplyError> {
        self.jobs.get_mut(id).ok_or_else(|| ApplyError::UnknownJob(id.to_string()))
    }

    pub fn apply(&mut self, event: &Event) -> Result<(), ApplyError> {
        if event.seq != self.seq + 1 {
            return Err(ApplyError::OutOfOrder {
                seq: event.seq,
                at: self.seq,
            });
        }
        match &event.kind {
            EventKind::Created { .. } => return Err(ApplyError::AlreadyCreated),
            EventKind::NodePlanned { node, axes, jobs } => {
                if self.plans.contains_key(node) {
                    return Err(ApplyError::DuplicatePlan(node.clone()));
                }
                for j in jobs {
                    self.jobs.insert(
                        j.id.clone(),
                        JobInstance {
                            id: j.id.clone(),
                            node: node.clone(),
                            coord: j.coord.clone(),
                            state: JobState::Init,
                            backend: None,
                            handle: None,
                            attempt: 1,
                            deps: j.deps.clone(),
                            input_plan: j.inputs.clone(),
                            inputs: Vec::new(),
                            outputs: Vec::new(),
                            manifests: Vec::new(),
                            stdout_ref: None,
                            stderr_ref: None,
                            exit_code: None,
                            reason: None,
                            history: Vec::new(),
                        },
                    );
                }
                self.plans.insert(
                    node.clone(),
                    NodePlan {
                        axes: axes.clone(),
                        jobs: jobs.iter().map(|j| j.id.clone()).collect(),
                    },
                );
            }
            EventKind::PlanFailed { node, reason } => {
                self.plan_failures.insert(node.clone(), reason.clone());
            }
            EventKind::InputsStaged { job, inputs } => {
                self.job_mut(job)?.inputs = inputs.clone();
            }
            EventKind::Transition {
                job,
                from,
                to,
                attempt,
                handle,
                exit_code,
                reason,
            } => {
                let j = self.job_mut(job)?;
                if j.state != *from {
                    return Err(ApplyError::StateMismatch {
                        job: job.clone(),
                        from: *from,
                        actual: j.state,
                    });
                }
                if !is_legal_transition(*from, *to) {
                    return Err(ApplyError::Forbidden {
                        job: job.clone(),
                        from: *from,
                        to: *to,
                    });
                }
                match to {
                    JobState::Ready if *from == JobState::Error => {
                        j.history.push(AttemptRecord {
                            attempt: j.attempt,
                            backend: j.backend.take(),
                            exit_code: j.exit_code.take(),
                            reason: j.reason.take(),
                            stdout_ref: j.stdout_ref.take(),
                            stderr_ref: j.stderr_ref.take(),
                        });
                        j.outputs.clear();
                        j.manifests.clear();
                        j.attempt = *attempt;
                    }
                    JobState::Submitted => {
                        j.backend = handle.as_ref().map(|h| h.backend.clone());
                        j.handle = handle.clone();
                    }
                    JobState::Finished | JobState::Error | JobState::Aborted => {
                        j.handle = None;
                        j.exit_code = *exit_code;
                        j.reason = reason.clone();
                    }
                    _ => {}
                }
                j.state = *to;
            }
            EventKind::StreamsCaptured {
                job, stdout, stderr, ..
            } => {
                let j = self.job_mut(job)?;
                j.stdout_ref = Some(stdout.clone());
                j.stderr_ref = Some(stderr.clone());
            }
            EventKind::OutputsStaged {
                job, outputs, manifests, ..
            } => {
                let j = self.job_mut(job)?;
                j.outputs = outputs.clone();
                j.manifests = manifests.clone();
            }
            EventKind::AbortRequested => self.abort_requested = true,
        }
        self.seq = event.seq;
        self.updated_at = event.t_ms;
        self.status = self.compute_status();
        Ok(())
    }

    /// Jobs that can never run again without operator action: errored or
    /// aborted, or waiting on such a job.
    pub fn dead_jobs(&self) -> BTreeSet<String> {
        let mut dead = BTreeSet::new();
        // deps always point at jobs planned earlier, so a topological pass
        // over nodes settles everything
        for node in self.node_order() {
            let Some(plan) = self.plans.get(&node) else { continue };
            for id in &plan.jobs {
                let j = &self.jobs[id];
                let is_dead = match j.state {
                    JobState::Error | JobState::Aborted => true,
                    JobState::Init => j.deps.iter().any(|d| dead.contains(d)),
                    _ => false,
                };
                if is_dead {
                    dead.insert(id.clone());
                }
            }
        }
        dead
    }

    fn node_order(&self) -> Vec<String> {
        crate::model::validate_graph(&self.definition.graph)
            .map(|r| r.topo_order)
            .unwrap_or_default()
    }

    /// Unplanned nodes that can never be planned.
    fn dead_nodes(&self, dead_jobs: &BTreeSet<String>) -> BTreeSet<String> {
        let graph = &self.definition.graph;
        let mut dead = BTreeSet::new();
        for node in self.node_order() {
            if self.plans.contains_key(&node) {
                continue;
            }
            if self.plan_failures.contains_key(&node) {
                dead.insert(node);
                continue;
            }
            let Some(spec) = graph.node(&node) else { continue };
            let blocked = spec.input_ports.iter().any(|port| {
                let Some(edge) = graph.incoming(&node, &port.name) else {
                    return false;
                };
                let producer = &edge.from.node;
                if dead.contains(producer) {
                    return true;
                }
                let generator = graph
                    .node(producer)
                    .and_then(|p| p.output_port(&edge.from.port))
                    .is_some_and(|p| p.kind == PortKind::Generator);
                generator
                    && self
                        .plans
                        .get(producer)
                        .is_some_and(|plan| plan.jobs.iter().any(|j| dead_jobs.contains(j)))
            });
            if blocked {
                dead.insert(node);
            }
        }
        dead
    }

    /// No job can make progress without operator action.
    pub fn is_quiescent(&self) -> bool {
        let dead_jobs = self.dead_jobs();
        let jobs_settled = self
            .jobs
            .values()
            .all(|j| j.state.is_terminal() || dead_jobs.contains(&j.id));
        if !jobs_settled {
            return false;
        }
        let dead_nodes = self.dead_nodes(&dead_jobs);
        self.definition
            .graph
            .nodes
            .iter()
            .all(|n| self.plans.contains_key(&n.name) || dead_nodes.contains(&n.name))
    }

    /// The instance status as a pure function of job states and plans.
    pub fn compute_status(&self) -> InstanceStatus {
        let all_terminal = self.jobs.values().all(|j| j.state.is_terminal());
        if self.abort_requested {
            return if all_terminal {
                InstanceStatus::Aborted
            } else {
                InstanceStatus::Running
            };
        }
        let all_planned = self.definition.graph.nodes.iter().all(|n| self.plans.contains_key(&n.name));
        if all_planned && self.jobs.values().all(|j| j.state == JobState::Finished) {
            return InstanceStatus::Finished;
        }
        if self.is_quiescent() {
            return InstanceStatus::Error;
        }
        let dispatched = self
            .jobs
            .values()
            .any(|j| !matches!(j.state, JobState::Init | JobState::Ready) || j.attempt > 1);
        if dispatched {
            InstanceStatus::Running
        } else {
            InstanceStatus::Submitted
        }
    }

    /// Jobs of `node` in enumeration order.
    pub fn node_jobs(&self, node: &str) -> Vec<&JobInstance> {
        self.plans
            .get(node)
            .map(|p| p.jobs.iter().map(|id| &self.jobs[id]).collect())
            .unwrap_or_default()
    }

    pub fn count_in(&self, state: JobState) -> usize {
        self.jobs.values().filter(|j| j.state == state).count()
    }
}

/// Job id: instance, node and coordinates joined by dots. Identifiers never
/// contain dots, so the parts can be recovered.
pub fn job_id(instance: &str, node: &str, coord: &[u32]) -> String {
    let mut id = format!("{instance}.{node}");
    for c in coord {
        id.push('.');
        id.push_str(&c.to_string());
    }
    id
}

/// Instance id part of a job id.
pub fn instance_of_job(job: &str) -> Option<&str> {
    job.split_once('.').map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;

    const ALL: [JobState; 7] = [
        JobState::Init,
        JobState::Ready,
        JobState::Submitted,
        JobState::Running,
        JobState::Finished,
        JobState::Error,
        JobState::Aborted,
    ];

    #[test]
    fn transition_table() {
        let legal: Vec<(JobState, JobState)> = ALL
            .iter()
            .flat_map(|&a| ALL.iter().map(move |&b| (a, b)))
            .filter(|&(a, b)| is_legal_transition(a, b))
            .collect();
        assert_eq!(legal.len(), 11);
        for s in ALL {
            if s == JobState::Error {
                assert!(is_legal_transition(s, JobState::Ready));
            }
            if s.is_terminal() {
                assert!(!is_legal_transition(s, JobState::Aborted));
            }
        }
        assert!(!is_legal_transition(JobState::Finished, JobState::Ready));
        assert!(!is_legal_transition(JobState::Aborted, JobState::Ready));
        assert!(!is_legal_transition(JobState::Ready, JobState::Running));
    }

    #[test]
    fn job_ids() {
        assert_eq!(job_id("abc", "md", &[]), "abc.md");
        assert_eq!(job_id("abc", "md", &[2, 0]), "abc.md.2.0");
        assert_eq!(instance_of_job("abc.md.2.0"), Some("abc"));
    }
}
