//! Volunteer-computing style desktop grid.
//!
//! Workers pull work. Each work unit is handed to `replication` distinct
//! workers; once `quorum` of them report the same output hash that hash
//! becomes canonical and disagreeing results are marked invalid. If every
//! replica has reported without agreement one extra replica is requested,
//! up to `max_replication`. Workers may vanish (churn), in which case their
//! pending replica is lost and handed to someone else.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::launcher::{LaunchSpec, Launcher};
use super::{
    scaled_runtime, Backend, BackendDescriptor, BridgeError, DispatchRequest, GridParams, PollStatus, TraceEvent,
    TraceKind,
};
use crate::hash::{hash_tree, sha256_hex};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkAssignment {
    pub ticket: String,
    pub worker: u32,
    pub finish_at: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportOutcome {
    /// Recorded; no quorum yet.
    Pending,
    /// Matches the canonical result.
    Accepted,
    /// Disagrees with the canonical result.
    Invalid,
    /// The replica produced no result and will be reassigned.
    Failed,
}

struct SimWorker {
    id: u32,
    speed: f64,
    corrupt: bool,
    p_fail: f64,
    rng: ChaCha8Rng,
    online: bool,
    next_toggle: Option<u64>,
    current: Option<WorkAssignment>,
}

impl SimWorker {
    fn draw_exp(&mut self, mean: f64) -> u64 {
        let u: f64 = self.rng.random();
        (-mean * (1.0 - u).ln()).round().max(1.0) as u64
    }
}

#[derive(Debug)]
enum UnitStatus {
    Queued,
    Running,
    Terminal(PollStatus),
}

#[derive(Debug)]
struct WorkUnit {
    req: DispatchRequest,
    replication: u32,
    pending: BTreeSet<u32>,
    /// Workers that were given this unit and did not lose it.
    assigned: BTreeSet<u32>,
    results: Vec<(u32, Option<String>)>,
    canonical: Option<String>,
    invalid: BTreeSet<u32>,
    honest: Option<(String, i32)>,
    lost_outstanding: u32,
    status: UnitStatus,
}

impl WorkUnit {
    fn valid_results(&self) -> usize {
        self.results.iter().filter(|(_, h)| h.is_some()).count()
    }

    fn needed(&self) -> usize {
        (self.replication as usize).saturating_sub(self.valid_results() + self.pending.len())
    }

    fn active(&self) -> bool {
        matches!(self.status, UnitStatus::Queued | UnitStatus::Running)
    }
}

pub struct GridSim {
    desc: BackendDescriptor,
    params: GridParams,
    launcher: Arc<dyn Launcher>,
    now: u64,
    next_ticket: u64,
    workers: Vec<SimWorker>,
    units: BTreeMap<String, WorkUnit>,
    trace: Vec<TraceEvent>,
}

impl GridSim {
    pub fn new(desc: BackendDescriptor, launcher: Arc<dyn Launcher>) -> Self {
        let params = desc.grid.clone().unwrap_or_default();
        let n = desc.workers.unwrap_or(1);
        let workers = (0..n)
            .map(|id| {
                let mut rng = ChaCha8Rng::seed_from_u64(desc.seed);
                rng.set_stream(u64::from(id) + 1);
                let speed = (0.5 + rng.random::<f64>()) * desc.speed_factor;
                let mut w = SimWorker {
                    id,
                    speed,
                    corrupt: params.corrupt_workers.contains(&id),
                    p_fail: params.p_fail,
                    rng,
                    online: true,
                    next_toggle: None,
                    current: None,
                };
                if let Some(churn) = params.churn {
                    w.next_toggle = Some(w.draw_exp(churn.mean_up_ms));
                }
                w
            })
            .collect();
        GridSim {
            desc,
            params,
            launcher,
            now: 0,
            next_ticket: 0,
            workers,
            units: BTreeMap::new(),
            trace: Vec::new(),
        }
    }

    fn record(&mut self, ticket: &str, kind: TraceKind) {
        self.trace.push(TraceEvent {
            t_ms: self.now,
            ticket: ticket.to_string(),
            kind,
        });
    }

    fn worker_index(&self, worker: u32) -> Result<usize, BridgeError> {
        let i = worker as usize;
        if i < self.workers.len() {
            Ok(i)
        } else {
            Err(BridgeError::UnknownWorker(worker))
        }
    }

    /// Pull request from `worker`: the oldest unit still needing replicas
    /// that this worker has not already taken.
    pub fn grid_fetch_work(&mut self, worker: u32) -> Result<Option<WorkAssignment>, BridgeError> {
        let wi = self.worker_index(worker)?;
        if !self.workers[wi].online {
            return Ok(None);
        }
        if let Some(current) = &self.workers[wi].current {
            return Ok(Some(current.clone()));
        }
        let Some(ticket) = self
            .units
            .iter()
            .find(|(_, u)| u.active() && u.needed() > 0 && !u.assigned.contains(&worker))
            .map(|(t, _)| t.clone())
        else {
            return Ok(None);
        };
        let unit = self.units.get_mut(&ticket).expect("found unit");
        unit.pending.insert(worker);
        unit.assigned.insert(worker);
        unit.lost_outstanding = unit.lost_outstanding.saturating_sub(1);
        unit.status = UnitStatus::Running;
        let runtime = scaled_runtime(unit.req.est_runtime_ms, self.workers[wi].speed);
        let assignment = WorkAssignment {
            ticket: ticket.clone(),
            worker,
            finish_at: self.now + runtime,
        };
        self.workers[wi].current = Some(assignment.clone());
        self.record(&ticket, TraceKind::Assigned { worker });
        Ok(Some(assignment))
    }

    /// Runs the payload once and caches the honest output digest.
    pub fn honest_result(&mut self, ticket: &str) -> Result<(String, i32), BridgeError> {
        let unit = self
            .units
            .get_mut(ticket)
            .ok_or_else(|| BridgeError::UnknownHandle(ticket.to_string()))?;
        if let Some(h) = &unit.honest {
            return Ok(h.clone());
        }
        let spec = LaunchSpec {
            sandbox: unit.req.sandbox.clone(),
            program: unit.req.program.clone(),
            args: unit.req.args.clone(),
        };
        let result = self
            .launcher
            .launch(&spec)
            .and_then(|mut j| j.wait())
            .and_then(|code| Ok((hash_tree(&spec.sandbox, &code.to_le_bytes())?, code)));
        match result {
            Ok(h) => {
                unit.honest = Some(h.clone());
                Ok(h)
            }
            Err(e) => {
                let reason = format!("launch failed: {e}");
                unit.status = UnitStatus::Terminal(PollStatus::Failed { reason: reason.clone() });
                self.release_pending(ticket);
                self.record(ticket, TraceKind::Failed { reason: reason.clone() });
                Err(BridgeError::Unsupported(reason))
            }
        }
    }

    /// What `worker` would report for its current assignment.
    fn simulated_result(&mut self, wi: usize, ticket: &str) -> Option<String> {
        let fail = {
            let w = &mut self.workers[wi];
            w.p_fail > 0.0 && w.rng.random_bool(w.p_fail)
        };
        if fail {
            return None;
        }
        let (honest, _) = self.honest_result(ticket).ok()?;
        let w = &self.workers[wi];
        if w.corrupt {
            Some(sha256_hex(format!("corrupt:{}:{honest}", w.id).as_bytes()))
        } else {
            Some(honest)
        }
    }

    /// A worker returns the result of its current assignment. `None` means
    /// the replica errored out.
    pub fn grid_report(&mut self, worker: u32, hash: Option<String>) -> Result<ReportOutcome, BridgeError> {
        let wi = self.worker_index(worker)?;
        let assignment = self.workers[wi]
            .current
            .take()
            .ok_or_else(|| BridgeError::UnknownHandle(format!("worker {worker} has no assignment")))?;
        let ticket = assignment.ticket;
        let Some(unit) = self.units.get_mut(&ticket) else {
            return Ok(ReportOutcome::Invalid);
        };
        unit.pending.remove(&worker);
        if !unit.active() {
            return Ok(ReportOutcome::Invalid);
        }
        unit.results.push((worker, hash.clone()));
        let Some(hash) = hash else {
            self.record(&ticket, TraceKind::ReplicaFailed { worker });
            return Ok(ReportOutcome::Failed);
        };

        let agreeing = unit.results.iter().filter(|(_, h)| h.as_deref() == Some(&hash)).count() as u32;
        let outcome = if let Some(canonical) = &unit.canonical {
            if *canonical == hash {
                ReportOutcome::Accepted
            } else {
                unit.invalid.insert(worker);
                ReportOutcome::Invalid
            }
        } else if agreeing >= self.params.quorum {
            unit.canonical = Some(hash.clone());
            for (w, h) in &unit.results {
                if h.as_ref().is_some_and(|h| *h != hash) {
                    unit.invalid.insert(*w);
                }
            }
            ReportOutcome::Accepted
        } else {
            ReportOutcome::Pending
        };
        let verdict = match outcome {
            ReportOutcome::Accepted => "accepted",
            ReportOutcome::Invalid => "invalid",
            ReportOutcome::Pending => "pending",
            ReportOutcome::Failed => "failed",
        };
        self.record(
            &ticket,
            TraceKind::Reported {
                worker,
                hash: hash.clone(),
                verdict: verdict.to_string(),
            },
        );

        let unit = self.units.get_mut(&ticket).expect("unit exists");
        if unit.canonical.is_some() && unit.active() {
            let canonical = unit.canonical.clone().expect("just checked");
            let exit_code = match unit.honest {
                Some((ref h, code)) if *h == canonical => code,
                // canonical agreed on by a quorum that is not the honest run
                _ => 0,
            };
            unit.status = UnitStatus::Terminal(PollStatus::Done { exit_code });
            self.release_pending(&ticket);
            self.record(&ticket, TraceKind::Canonical { hash: canonical });
            self.record(&ticket, TraceKind::Finished { exit_code });
        } else if unit.active() && unit.valid_results() >= unit.replication as usize && unit.pending.is_empty() {
            if unit.replication < self.params.max_replication {
                unit.replication += 1;
                let replication = unit.replication;
                self.record(&ticket, TraceKind::Extended { replication });
            } else {
                let reason = format!("no quorum after {} results", unit.valid_results());
                unit.status = UnitStatus::Terminal(PollStatus::Failed { reason: reason.clone() });
                self.record(&ticket, TraceKind::Failed { reason });
            }
        }
        Ok(outcome)
    }

    /// Drops the outstanding assignments of a finished or canceled unit.
    fn release_pending(&mut self, ticket: &str) {
        for w in &mut self.workers {
            if w.current.as_ref().is_some_and(|a| a.ticket == ticket) {
                w.current = None;
            }
        }
        if let Some(u) = self.units.get_mut(ticket) {
            u.pending.clear();
        }
    }

    pub fn canonical(&self, ticket: &str) -> Option<String> {
        self.units.get(ticket).and_then(|u| u.canonical.clone())
    }

    pub fn invalid_workers(&self, ticket: &str) -> BTreeSet<u32> {
        self.units.get(ticket).map(|u| u.invalid.clone()).unwrap_or_default()
    }

    pub fn replication(&self, ticket: &str) -> Option<u32> {
        self.units.get(ticket).map(|u| u.replication)
    }

    pub fn worker_online(&self, worker: u32) -> Option<bool> {
        self.workers.get(worker as usize).map(|w| w.online)
    }

    fn assign_idle(&mut self) {
        for wi in 0..self.workers.len() {
            if self.workers[wi].online && self.workers[wi].current.is_none() {
                let id = self.workers[wi].id;
                let _ = self.grid_fetch_work(id);
            }
        }
    }

    fn next_event(&self) -> Option<u64> {
        self.workers
            .iter()
            .flat_map(|w| [w.current.as_ref().map(|a| a.finish_at), w.next_toggle])
            .flatten()
            .min()
    }

    fn process_at(&mut self, t: u64) {
        // churn first: a worker leaving at t does not deliver at t
        for wi in 0..self.workers.len() {
            if self.workers[wi].next_toggle != Some(t) {
                continue;
            }
            let churn = self.params.churn.expect("toggle implies churn model");
            let id = self.workers[wi].id;
            if self.workers[wi].online {
                self.workers[wi].online = false;
                self.workers[wi].next_toggle = Some(t + self.workers[wi].draw_exp(churn.mean_down_ms));
                self.record("", TraceKind::WorkerDown { worker: id });
                if let Some(a) = self.workers[wi].current.take() {
                    if let Some(unit) = self.units.get_mut(&a.ticket) {
                        unit.pending.remove(&id);
                        unit.assigned.remove(&id);
                        unit.lost_outstanding += 1;
                    }
                    self.record(&a.ticket, TraceKind::ReplicaLost { worker: id });
                }
            } else {
                self.workers[wi].online = true;
                self.workers[wi].next_toggle = Some(t + self.workers[wi].draw_exp(churn.mean_up_ms));
                self.record("", TraceKind::WorkerUp { worker: id });
            }
        }
        for wi in 0..self.workers.len() {
            let Some(a) = self.workers[wi].current.clone() else { continue };
            if a.finish_at > t {
                continue;
            }
            let result = self.simulated_result(wi, &a.ticket);
            if self.workers[wi].current.is_some() {
                let id = self.workers[wi].id;
                let _ = self.grid_report(id, result);
            }
        }
    }
}

impl Backend for GridSim {
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
            let queued = self.units.values().filter(|u| matches!(u.status, UnitStatus::Queued)).count();
            if queued >= max {
                return Err(BridgeError::QueueFull(self.desc.id.clone()));
            }
        }
        let ticket = format!("{}-{:06}", self.desc.id, self.next_ticket);
        self.next_ticket += 1;
        let label = req.label.clone();
        self.units.insert(
            ticket.clone(),
            WorkUnit {
                req,
                replication: self.params.replication,
                pending: BTreeSet::new(),
                assigned: BTreeSet::new(),
                results: Vec::new(),
                canonical: None,
                invalid: BTreeSet::new(),
                honest: None,
                lost_outstanding: 0,
                status: UnitStatus::Queued,
            },
        );
        self.record(&ticket, TraceKind::Enqueued { label });
        Ok(ticket)
    }

    fn poll(&mut self, ticket: &str) -> Result<PollStatus, BridgeError> {
        let unit = self
            .units
            .get(ticket)
            .ok_or_else(|| BridgeError::UnknownHandle(ticket.to_string()))?;
        let status = match &unit.status {
            UnitStatus::Queued => PollStatus::Queued,
            UnitStatus::Running if unit.lost_outstanding > 0 => PollStatus::Lost,
            UnitStatus::Running => PollStatus::Running,
            UnitStatus::Terminal(s) => s.clone(),
        };
        if status.is_terminal() {
            self.units.remove(ticket);
        }
        Ok(status)
    }

    fn cancel(&mut self, ticket: &str) -> Result<(), BridgeError> {
        let unit = self
            .units
            .get_mut(ticket)
            .ok_or_else(|| BridgeError::UnknownHandle(ticket.to_string()))?;
        if !unit.active() {
            return Err(BridgeError::AlreadyTerminal(ticket.to_string()));
        }
        unit.status = UnitStatus::Terminal(PollStatus::Failed {
            reason: "canceled".into(),
        });
        self.release_pending(ticket);
        self.record(ticket, TraceKind::Canceled);
        Ok(())
    }

    fn step(&mut self, dt_ms: u64) {
        let target = self.now + dt_ms;
        self.assign_idle();
        while let Some(t) = self.next_event() {
            if t > target {
                break;
            }
            self.now = t;
            self.process_at(t);
            self.assign_idle();
        }
        self.now = target;
        self.assign_idle();
    }

    fn load(&self) -> usize {
        self.units.values().filter(|u| u.active()).count()
    }

    fn trace(&self) -> &[TraceEvent] {
        &self.trace
    }

    fn as_grid(&mut self) -> Option<&mut GridSim> {
        Some(self)
    }
}
