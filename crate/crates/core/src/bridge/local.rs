use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use super::launcher::{LaunchSpec, Launcher, RunningJob};
use super::{Backend, BackendDescriptor, BridgeError, DispatchRequest, PollStatus, TraceEvent, TraceKind};

enum LocalState {
    Queued,
    Running(Box<dyn RunningJob>),
    Terminal(PollStatus),
}

struct LocalJob {
    req: DispatchRequest,
    state: LocalState,
}

/// Runs payloads on this machine through the launcher, at most `slots` at a
/// time. Never blocks on a running payload.
pub struct LocalBackend {
    desc: BackendDescriptor,
    launcher: Arc<dyn Launcher>,
    now: u64,
    next_ticket: u64,
    queue: VecDeque<String>,
    jobs: BTreeMap<String, LocalJob>,
    trace: Vec<TraceEvent>,
}

impl LocalBackend {
    pub fn new(desc: BackendDescriptor, launcher: Arc<dyn Launcher>) -> Self {
        LocalBackend {
            desc,
            launcher,
            now: 0,
            next_ticket: 0,
            queue: VecDeque::new(),
            jobs: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    fn slots(&self) -> usize {
        self.desc.slots.unwrap_or(1) as usize
    }

    fn running(&self) -> usize {
        self.jobs
            .values()
            .filter(|j| matches!(j.state, LocalState::Running(_)))
            .count()
    }

    fn record(&mut self, ticket: &str, kind: TraceKind) {
        self.trace.push(TraceEvent {
            t_ms: self.now,
            ticket: ticket.to_string(),
            kind,
        });
    }

    /// Reaps finished children and starts queued jobs on free slots.
    fn pump(&mut self) {
        let tickets: Vec<String> = self.jobs.keys().cloned().collect();
        for ticket in tickets {
            let job = self.jobs.get_mut(&ticket).expect("listed ticket");
            let LocalState::Running(child) = &mut job.state else { continue };
            let outcome = match child.try_wait() {
                Ok(Some(exit_code)) => Some(PollStatus::Done { exit_code }),
                Ok(None) => None,
                Err(e) => Some(PollStatus::Failed {
                    reason: format!("wait failed: {e}"),
                }),
            };
            if let Some(status) = outcome {
                job.state = LocalState::Terminal(status.clone());
                let kind = match status {
                    PollStatus::Done { exit_code } => TraceKind::Finished { exit_code },
                    PollStatus::Failed { reason } => TraceKind::Failed { reason },
                    _ => unreachable!("terminal status"),
                };
                self.record(&ticket, kind);
            }
        }
        while self.running() < self.slots() {
            let Some(ticket) = self.queue.pop_front() else { break };
            let job = self.jobs.get_mut(&ticket).expect("queued ticket");
            let spec = LaunchSpec {
                sandbox: job.req.sandbox.clone(),
                program: job.req.program.clone(),
                args: job.req.args.clone(),
            };
            match self.launcher.launch(&spec) {
                Ok(child) => {
                    job.state = LocalState::Running(child);
                    self.record(&ticket, TraceKind::Started);
                }
                Err(e) => {
                    let reason = format!("launch failed: {e}");
                    job.state = LocalState::Terminal(PollStatus::Failed { reason: reason.clone() });
                    self.record(&ticket, TraceKind::Failed { reason });
                }
            }
        }
    }
}

impl Backend for LocalBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.desc
    }

    fn descriptor_mut(&mut self) -> &mut BackendDescriptor {
        &mut self.desc
    }

    fn now_ms(&self) -> u64 {
        self.now
    }

    fn submit(&mut self, req: DispatchRequest) -> Result<String, BridgeError> {
        if let Some(max) = self.desc.max_queue {
            if self.queue.len() >= max {
                return Err(BridgeError::QueueFull(self.desc.id.clone()));
            }
        }
        let ticket = format!("{}-{:06}", self.desc.id, self.next_ticket);
        self.next_ticket += 1;
        let label = req.label.clone();
        self.jobs.insert(
            ticket.clone(),
            LocalJob {
                req,
                state: LocalState::Queued,
            },
        );
        self.queue.push_back(ticket.clone());
        self.record(&ticket, TraceKind::Enqueued { label });
        self.pump();
        Ok(ticket)
    }

    fn poll(&mut self, ticket: &str) -> Result<PollStatus, BridgeError> {
        if !self.jobs.contains_key(ticket) {
            return Err(BridgeError::UnknownHandle(ticket.to_string()));
        }
        self.pump();
        let status = match &self.jobs[ticket].state {
            LocalState::Queued => PollStatus::Queued,
            LocalState::Running(_) => PollStatus::Running,
            LocalState::Terminal(s) => s.clone(),
        };
        if status.is_terminal() {
            self.jobs.remove(ticket);
        }
        Ok(status)
    }

    fn cancel(&mut self, ticket: &str) -> Result<(), BridgeError> {
        let job = self
            .jobs
            .get_mut(ticket)
            .ok_or_else(|| BridgeError::UnknownHandle(ticket.to_string()))?;
        match &mut job.state {
            LocalState::Terminal(_) => return Err(BridgeError::AlreadyTerminal(ticket.to_string())),
            LocalState::Queued => self.queue.retain(|t| t != ticket),
            LocalState::Running(child) => {
                let _ = child.kill();
            }
        }
        job.state = LocalState::Terminal(PollStatus::Failed {
            reason: "canceled".into(),
        });
        self.record(ticket, TraceKind::Canceled);
        self.pump();
        Ok(())
    }

    fn step(&mut self, dt_ms: u64) {
        self.now += dt_ms;
        self.pump();
    }

    fn load(&self) -> usize {
        self.jobs
            .values()
            .filter(|j| !matches!(j.state, LocalState::Terminal(_)))
            .count()
    }

    fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }
}
