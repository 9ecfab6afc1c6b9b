//! Deterministic discrete-event model of a Slurm cluster.
//!
//! Virtual time advances in integer ticks. Each tick first retires running
//! jobs whose run time or time limit has elapsed, then makes one strict
//! FCFS dispatch pass: the queue head starts on the first node (in config
//! order) with room for it, and a head that does not fit blocks everything
//! behind it.

pub mod directives;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use directives::{header_demand, DirectiveError, HeaderDemand};

pub type JobId = u64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum JobState {
    Pending,
    Running,
    Completed,
    Failed,
    Cancelled,
    Timeout,
}

impl JobState {
    pub const ALL: [JobState; 6] = [
        JobState::Pending,
        JobState::Running,
        JobState::Completed,
        JobState::Failed,
        JobState::Cancelled,
        JobState::Timeout,
    ];

    pub fn is_terminal(self) -> bool {
        !matches!(self, JobState::Pending | JobState::Running)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Pending => "PENDING",
            JobState::Running => "RUNNING",
            JobState::Completed => "COMPLETED",
            JobState::Failed => "FAILED",
            JobState::Cancelled => "CANCELLED",
            JobState::Timeout => "TIMEOUT",
        }
    }

    fn can_become(self, next: JobState) -> bool {
        use JobState::*;
        matches!(
            (self, next),
            (Pending, Running) | (Pending, Cancelled) | (Running, Completed | Failed | Cancelled | Timeout)
        )
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    pub name: String,
    pub cpus: u64,
    #[serde(rename = "memMiB")]
    pub mem_mib: u64,
}

impl NodeSpec {
    pub fn new(name: impl Into<String>, cpus: u64, mem_mib: u64) -> Self {
        NodeSpec {
            name: name.into(),
            cpus,
            mem_mib,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demand {
    pub cpus: u64,
    pub mem_mib: u64,
    pub time_limit_ticks: Option<u64>,
}

/// Scripted outcome of a job: how long it runs and how it exits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Behavior {
    pub run_ticks: u64,
    pub exit_code: i32,
}

impl Behavior {
    pub fn new(run_ticks: u64, exit_code: i32) -> Self {
        Behavior { run_ticks, exit_code }
    }
}

impl Default for Behavior {
    fn default() -> Self {
        Behavior::new(1, 0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlurmJobRecord {
    pub job_id: JobId,
    pub script: String,
    pub demand: Demand,
    pub behavior: Behavior,
    pub state: JobState,
    pub submit_tick: u64,
    pub start_tick: Option<u64>,
    pub end_tick: Option<u64>,
    pub node: Option<String>,
}

impl SlurmJobRecord {
    /// Exit code of a job that ran to completion or failure.
    pub fn exit_code(&self) -> Option<i32> {
        matches!(self.state, JobState::Completed | JobState::Failed).then_some(self.behavior.exit_code)
    }

    fn due(&self) -> Option<(u64, JobState)> {
        let start = self.start_tick?;
        let run = self.behavior.run_ticks;
        match self.demand.time_limit_ticks {
            Some(limit) if limit < run => Some((start.saturating_add(limit), JobState::Timeout)),
            _ if self.behavior.exit_code == 0 => Some((start.saturating_add(run), JobState::Completed)),
            _ => Some((start.saturating_add(run), JobState::Failed)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SimEvent {
    pub tick: u64,
    pub job_id: JobId,
    pub from: JobState,
    pub to: JobState,
}

impl fmt::Display for SimEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {} {}->{}", self.tick, self.job_id, self.from, self.to)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("cluster has no nodes")]
    EmptyCluster,
    #[error("demand of {cpus} cpus / {mem_mib} MiB exceeds every node")]
    NeverSchedulable { cpus: u64, mem_mib: u64 },
    #[error("invalid job: {0}")]
    InvalidJob(String),
    #[error("script header asks for {script_cpus} cpus / {script_mem_mib} MiB but demand is {cpus} cpus / {mem_mib} MiB")]
    DemandMismatch {
        script_cpus: u64,
        script_mem_mib: u64,
        cpus: u64,
        mem_mib: u64,
    },
    #[error("bad script header: {0}")]
    BadHeader(#[from] DirectiveError),
    #[error("unknown job {0}")]
    UnknownJob(JobId),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimNode {
    pub spec: NodeSpec,
    /// jobId -> (cpus, memMiB)
    pub allocations: BTreeMap<JobId, (u64, u64)>,
}

impl SimNode {
    pub fn used(&self) -> (u64, u64) {
        self.allocations
            .values()
            .fold((0u64, 0u64), |(c, m), (jc, jm)| (c.saturating_add(*jc), m.saturating_add(*jm)))
    }

    fn fits(&self, demand: &Demand) -> bool {
        let (cpus, mem) = self.used();
        cpus.saturating_add(demand.cpus) <= self.spec.cpus && mem.saturating_add(demand.mem_mib) <= self.spec.mem_mib
    }

    fn could_ever_fit(&self, demand: &Demand) -> bool {
        demand.cpus <= self.spec.cpus && demand.mem_mib <= self.spec.mem_mib
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlurmSim {
    nodes: Vec<SimNode>,
    jobs: BTreeMap<JobId, SlurmJobRecord>,
    queue: VecDeque<JobId>,
    tick: u64,
    next_id: JobId,
    trace: Vec<SimEvent>,
}

impl SlurmSim {
    pub fn new(nodes: Vec<NodeSpec>) -> Result<Self, SimError> {
        if nodes.is_empty() {
            return Err(SimError::EmptyCluster);
        }
        Ok(SlurmSim {
            nodes: nodes
                .into_iter()
                .map(|spec| SimNode {
                    spec,
                    allocations: BTreeMap::new(),
                })
                .collect(),
            jobs: BTreeMap::new(),
            queue: VecDeque::new(),
            tick: 0,
            next_id: 1,
            trace: Vec::new(),
        })
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn nodes(&self) -> &[SimNode] {
        &self.nodes
    }

    /// Queues a job. The script header must describe the same cpus and memory
    /// as `demand`.
    pub fn submit(&mut self, script: &str, demand: Demand, behavior: Behavior) -> Result<JobId, SimError> {
        if demand.cpus == 0 {
            return Err(SimError::InvalidJob("demand needs at least one cpu".into()));
        }
        if behavior.run_ticks == 0 {
            return Err(SimError::InvalidJob("run ticks must be positive".into()));
        }
        if demand.time_limit_ticks == Some(0) {
            return Err(SimError::InvalidJob("time limit must be positive".into()));
        }
        let header = header_demand(script)?;
        if header.cpus != demand.cpus || header.mem_mib != demand.mem_mib {
            return Err(SimError::DemandMismatch {
                script_cpus: header.cpus,
                script_mem_mib: header.mem_mib,
                cpus: demand.cpus,
                mem_mib: demand.mem_mib,
            });
        }
        if !self.nodes.iter().any(|n| n.could_ever_fit(&demand)) {
            return Err(SimError::NeverSchedulable {
                cpus: demand.cpus,
                mem_mib: demand.mem_mib,
            });
        }
        let job_id = self.next_id;
        self.next_id += 1;
        self.jobs.insert(
            job_id,
            SlurmJobRecord {
                job_id,
                script: script.to_string(),
                demand,
                behavior,
                state: JobState::Pending,
                submit_tick: self.tick,
                start_tick: None,
                end_tick: None,
                node: None,
            },
        );
        self.queue.push_back(job_id);
        Ok(job_id)
    }

    /// Advances virtual time by `ticks` and returns the transitions that
    /// happened, ordered by (tick, jobId).
    pub fn step(&mut self, ticks: u64) -> Vec<SimEvent> {
        let mut events = Vec::new();
        for _ in 0..ticks {
            self.tick += 1;
            let mut tick_events = self.retire_due();
            tick_events.extend(self.dispatch());
            tick_events.sort();
            events.extend(tick_events);
        }
        events
    }

    fn retire_due(&mut self) -> Vec<SimEvent> {
        let now = self.tick;
        let due: Vec<(JobId, JobState)> = self
            .jobs
            .values()
            .filter(|j| j.state == JobState::Running)
            .filter_map(|j| j.due().filter(|(at, _)| *at <= now).map(|(_, to)| (j.job_id, to)))
            .collect();
        due.into_iter().map(|(id, to)| self.transition(id, to)).collect()
    }

    fn dispatch(&mut self) -> Vec<SimEvent> {
        let mut events = Vec::new();
        while let Some(&head) = self.queue.front() {
            let demand = self.jobs[&head].demand;
            let Some(node) = self.nodes.iter().position(|n| n.fits(&demand)) else {
                break;
            };
            self.queue.pop_front();
            self.nodes[node].allocations.insert(head, (demand.cpus, demand.mem_mib));
            let node_name = self.nodes[node].spec.name.clone();
            let job = self.jobs.get_mut(&head).expect("queued job exists");
            job.node = Some(node_name);
            events.push(self.transition(head, JobState::Running));
        }
        events
    }

    fn transition(&mut self, job_id: JobId, to: JobState) -> SimEvent {
        let now = self.tick;
        let job = self.jobs.get_mut(&job_id).expect("transition of a known job");
        let from = job.state;
        assert!(from.can_become(to), "illegal transition {from}->{to} for job {job_id}");
        job.state = to;
        match to {
            JobState::Running => job.start_tick = Some(now),
            _ => {
                job.end_tick = Some(now);
                for node in &mut self.nodes {
                    node.allocations.remove(&job_id);
                }
            }
        }
        debug_assert!(self.conserved(), "capacity exceeded at tick {now}");
        let event = SimEvent {
            tick: now,
            job_id,
            from,
            to,
        };
        self.trace.push(event);
        event
    }

    /// Cancels a pending or running job. Terminal jobs are left alone.
    pub fn cancel(&mut self, job_id: JobId) -> Result<JobState, SimError> {
        let state = self.jobs.get(&job_id).ok_or(SimError::UnknownJob(job_id))?.state;
        match state {
            JobState::Pending => {
                self.queue.retain(|&id| id != job_id);
                self.transition(job_id, JobState::Cancelled);
                Ok(JobState::Cancelled)
            }
            JobState::Running => {
                self.transition(job_id, JobState::Cancelled);
                Ok(JobState::Cancelled)
            }
            terminal => Ok(terminal),
        }
    }

    /// Snapshot of a job at the current tick.
    pub fn query(&self, job_id: JobId) -> Result<SlurmJobRecord, SimError> {
        self.jobs.get(&job_id).cloned().ok_or(SimError::UnknownJob(job_id))
    }

    pub fn jobs(&self) -> impl Iterator<Item = &SlurmJobRecord> {
        self.jobs.values()
    }

    /// Every transition so far, in the order it happened. A cancellation
    /// between steps can land after a higher job id of the same tick.
    pub fn trace(&self) -> &[SimEvent] {
        &self.trace
    }

    /// Trace lines ordered by (tick, jobId); transitions of one job within a
    /// tick keep their order.
    pub fn trace_text(&self) -> String {
        let mut events = self.trace.clone();
        events.sort_by_key(|e| (e.tick, e.job_id));
        events.iter().map(|e| format!("{e}\n")).collect()
    }

    pub fn active_jobs(&self) -> usize {
        self.jobs.values().filter(|j| !j.state.is_terminal()).count()
    }

    pub fn is_idle(&self) -> bool {
        self.active_jobs() == 0
    }

    /// Per-node allocations stay within capacity.
    pub fn conserved(&self) -> bool {
        self.nodes.iter().all(|n| {
            let (cpus, mem) = n.used();
            cpus <= n.spec.cpus && mem <= n.spec.mem_mib
        })
    }

    pub fn total_capacity(&self) -> (u64, u64) {
        self.nodes
            .iter()
            .fold((0u64, 0u64), |(c, m), n| (c.saturating_add(n.spec.cpus), m.saturating_add(n.spec.mem_mib)))
    }
}
