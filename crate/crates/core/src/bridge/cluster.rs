use std::collections::{BTreeMap, VecDeque};
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::launcher::{LaunchSpec, Launcher};
use super::{
    draw_wait, scaled_runtime, Backend, BackendDescriptor, BridgeError, DispatchRequest, PollStatus, TraceEvent,
    TraceKind,
};

#[derive(Debug)]
enum JobState {
    Queued { eligible_at: u64 },
    Running { finish_at: u64 },
    Terminal(PollStatus),
}

#[derive(Debug)]
struct SimJob {
    req: DispatchRequest,
    state: JobState,
}

/// PBS-like batch cluster: strict FIFO queue, at most `slots` jobs running.
/// Each job becomes eligible after a seeded queue-wait draw and runs for its
/// nominal runtime times the speed factor. The payload itself is executed
/// when the simulated run finishes.
pub struct ClusterSim {
    desc: BackendDescriptor,
    launcher: Arc<dyn Launcher>,
    rng: ChaCha8Rng,
    now: u64,
    next_ticket: u64,
    queue: VecDeque<String>,
    running: usize,
    jobs: BTreeMap<String, SimJob>,
    trace: Vec<TraceEvent>,
}

impl ClusterSim {
    pub fn new(desc: BackendDescriptor, launcher: Arc<dyn Launcher>) -> Self {
        ClusterSim {
            rng: ChaCha8Rng::seed_from_u64(desc.seed),
            desc,
            launcher,
            now: 0,
            next_ticket: 0,
            queue: VecDeque::new(),
            running: 0,
            jobs: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    fn slots(&self) -> usize {
        self.desc.slots.unwrap_or(1) as usize
    }

    fn record(&mut self, t_ms: u64, ticket: &str, kind: TraceKind) {
        self.trace.push(TraceEvent {
            t_ms,
            ticket: ticket.to_string(),
            kind,
        });
    }

    /// Earliest pending event: a finish, or the queue head becoming startable.
    fn next_event(&self) -> Option<u64> {
        let finish = self
            .jobs
            .values()
            .filter_map(|j| match j.state {
                JobState::Running { finish_at } => Some(finish_at),
                _ => None,
            })
            .min();
        let start = if self.running < self.slots() {
            self.queue.front().map(|t| match self.jobs[t].state {
                JobState::Queued { eligible_at } => eligible_at.max(self.now),
                _ => unreachable!("queued tickets are in Queued state"),
            })
        } else {
            None
        };
        match (finish, start) {
            (Some(f), Some(s)) => Some(f.min(s)),
            (f, s) => f.or(s),
        }
    }

    fn finish_due(&mut self, t: u64) {
        let due: Vec<String> = self
            .jobs
            .iter()
            .filter(|(_, j)| matches!(j.state, JobState::Running { finish_at } if finish_at <= t))
            .map(|(k, _)| k.clone())
            .collect();
        for ticket in due {
            let req = self.jobs[&ticket].req.clone();
            let spec = LaunchSpec {
                sandbox: req.sandbox.clone(),
                program: req.program.clone(),
                args: req.args.clone(),
            };
            let status = match self.launcher.launch(&spec).and_then(|mut j| j.wait()) {
                Ok(exit_code) => {
                    self.record(t, &ticket, TraceKind::Finished { exit_code });
                    PollStatus::Done { exit_code }
                }
                Err(e) => {
                    let reason = format!("launch failed: {e}");
                    self.record(t, &ticket, TraceKind::Failed { reason: reason.clone() });
                    PollStatus::Failed { reason }
                }
            };
            self.jobs.get_mut(&ticket).expect("due job exists").state = JobState::Terminal(status);
            self.running -= 1;
        }
    }

    fn start_eligible(&mut self, t: u64) {
        while self.running < self.slots() {
            let Some(head) = self.queue.front().cloned() else { break };
            let eligible_at = match self.jobs[&head].state {
                JobState::Queued { eligible_at } => eligible_at,
                _ => unreachable!("queued tickets are in Queued state"),
            };
            if eligible_at > t {
                break;
            }
            self.queue.pop_front();
            let runtime = scaled_runtime(self.jobs[&head].req.est_runtime_ms, self.desc.speed_factor);
            self.jobs.get_mut(&head).expect("head exists").state = JobState::Running { finish_at: t + runtime };
            self.running += 1;
            self.record(t, &head, TraceKind::Started);
        }
    }
}

impl Backend for ClusterSim {
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
        let wait = draw_wait(self.desc.queue_wait_ms, &mut self.rng);
        let label = req.label.clone();
        self.jobs.insert(
            ticket.clone(),
            SimJob {
                req,
                state: JobState::Queued {
                    eligible_at: self.now + wait,
                },
            },
        );
        self.queue.push_back(ticket.clone());
        self.record(self.now, &ticket, TraceKind::Enqueued { label });
        Ok(ticket)
    }

    fn poll(&mut self, ticket: &str) -> Result<PollStatus, BridgeError> {
        let job = self
            .jobs
            .get(ticket)
            .ok_or_else(|| BridgeError::UnknownHandle(ticket.to_string()))?;
        let status = match &job.state {
            JobState::Queued { .. } => PollStatus::Queued,
            JobState::Running { .. } => PollStatus::Running,
            JobState::Terminal(s) => s.clone(),
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
        match job.state {
            JobState::Terminal(_) => return Err(BridgeError::AlreadyTerminal(ticket.to_string())),
            JobState::Queued { .. } => self.queue.retain(|t| t != ticket),
            JobState::Running { .. } => self.running -= 1,
        }
        job.state = JobState::Terminal(PollStatus::Failed {
            reason: "canceled".into(),
        });
        self.record(self.now, ticket, TraceKind::Canceled);
        // a freed slot can be taken right away
        self.start_eligible(self.now);
        Ok(())
    }

    fn step(&mut self, dt_ms: u64) {
        let target = self.now + dt_ms;
        self.start_eligible(self.now);
        while let Some(t) = self.next_event() {
            if t > target {
                break;
            }
            self.now = t;
            self.finish_due(t);
            self.start_eligible(t);
        }
        self.now = target;
    }

    fn load(&self) -> usize {
        self.queue.len() + self.running
    }

    fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }
}
