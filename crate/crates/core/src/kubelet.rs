//! The virtual node: turns bound pods into simulated Slurm jobs and folds
//! job state changes back into pod status.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::BehaviorTable;
use crate::manifest::{Kind, NodeResource, ObjectMeta, PodPhase, PodResource, Resource, RestartPolicy};
use crate::network::Ipam;
use crate::slurm::{JobId, JobState, SimError, SlurmSim};
use crate::store::{EventType, ObjectKey, Store, Watch, WatchEvent, VIRTUAL_NODE};
use crate::translator::render_script;

/// Attempts beyond the first for `OnFailure` pods.
pub const RESTART_CAP: u32 = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum KubeletError {
    #[error("cannot register a node for an empty cluster")]
    EmptyCluster,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VirtualNode {
    pub name: String,
    pub capacity_cpus: u64,
    pub capacity_mem_mib: u64,
}

/// Stores the virtual node, sized to the whole simulated cluster.
pub fn register_node(store: &mut Store, sim: &SlurmSim) -> Result<VirtualNode, KubeletError> {
    if sim.nodes().is_empty() {
        return Err(KubeletError::EmptyCluster);
    }
    let (cpus, mem) = sim.total_capacity();
    let node = VirtualNode {
        name: VIRTUAL_NODE.to_string(),
        capacity_cpus: cpus,
        capacity_mem_mib: mem,
    };
    store
        .put(Resource::Node(NodeResource {
            meta: ObjectMeta::new("", VIRTUAL_NODE),
            capacity_cpus: cpus,
            capacity_mem_mib: mem,
        }))
        .expect("nodes are not validated");
    Ok(node)
}

/// `namespace/name`, the key used for bindings and address leases.
pub fn pod_key(namespace: &str, name: &str) -> String {
    format!("{namespace}/{name}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PodJobBinding {
    pub pod_key: String,
    /// Current job; `None` when submission failed.
    pub job_id: Option<JobId>,
    pub last_observed: Option<JobState>,
    pub restart_count: u32,
    /// Exact text of the most recently submitted script.
    pub script: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Submit { pod: String, job_id: JobId, attempt: u32 },
    Cancel { pod: String, job_id: JobId },
    Fail { pod: String, reason: String },
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Action::Submit { pod, job_id, attempt: 0 } => write!(f, "submit {pod} job {job_id}"),
            Action::Submit { pod, job_id, attempt } => write!(f, "resubmit {pod} job {job_id} restart {attempt}"),
            Action::Cancel { pod, job_id } => write!(f, "cancel {pod} job {job_id}"),
            Action::Fail { pod, reason } => write!(f, "fail {pod}: {reason}"),
        }
    }
}

/// Pod phase and reason for a job state.
pub fn sync_status(state: JobState, exit_code: Option<i32>) -> (PodPhase, Option<&'static str>) {
    match state {
        JobState::Pending => (PodPhase::Pending, None),
        JobState::Running => (PodPhase::Running, None),
        JobState::Completed if exit_code.unwrap_or(0) == 0 => (PodPhase::Succeeded, None),
        JobState::Completed | JobState::Failed => (PodPhase::Failed, Some("Error")),
        JobState::Timeout => (PodPhase::Failed, Some("DeadlineExceeded")),
        JobState::Cancelled => (PodPhase::Failed, Some("Cancelled")),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestartDecision {
    Resubmit,
    Finalize,
}

pub fn handle_restart_policy(policy: RestartPolicy, state: JobState, restart_count: u32) -> RestartDecision {
    if policy == RestartPolicy::OnFailure && state == JobState::Failed && restart_count < RESTART_CAP {
        RestartDecision::Resubmit
    } else {
        RestartDecision::Finalize
    }
}

/// Mutable engine parts the kubelet drives.
pub struct Backend<'a> {
    pub store: &'a mut Store,
    pub sim: &'a mut SlurmSim,
    pub ipam: &'a mut Ipam,
    pub behaviors: &'a BehaviorTable,
}

#[derive(Debug, Default, Serialize, Deserialize)]
pub struct Kubelet {
    bindings: BTreeMap<String, PodJobBinding>,
    jobs: BTreeMap<JobId, String>,
    last_version: u64,
    trace_cursor: usize,
    log: Vec<String>,
    #[serde(skip)]
    watch: Option<Watch>,
}

impl Kubelet {
    pub fn new() -> Self {
        Kubelet::default()
    }

    /// (Re)subscribes to pod events after the last one processed.
    pub fn attach(&mut self, store: &mut Store) {
        self.watch = Some(
            store
                .watch(Some(Kind::Pod), self.last_version)
                .expect("history is never compacted"),
        );
    }

    pub fn binding(&self, pod_key: &str) -> Option<&PodJobBinding> {
        self.bindings.get(pod_key)
    }

    pub fn bindings(&self) -> impl Iterator<Item = &PodJobBinding> {
        self.bindings.values()
    }

    /// One line per action taken, in order.
    pub fn log(&self) -> &[String] {
        &self.log
    }

    /// Handles queued pod events and new simulator transitions. Returns
    /// whether any input was consumed.
    pub fn pump(&mut self, backend: &mut Backend<'_>) -> bool {
        let events = self.watch.as_ref().map(Watch::drain).unwrap_or_default();
        let mut progressed = !events.is_empty();
        for event in &events {
            self.last_version = event.object.resource_version;
            self.reconcile(event, backend);
        }
        progressed |= self.observe(backend);
        progressed
    }

    fn record(&mut self, action: Action) -> Action {
        self.log.push(action.to_string());
        action
    }

    /// Reacts to one pod event. Re-delivered or status-only events produce
    /// no actions.
    pub fn reconcile(&mut self, event: &WatchEvent, backend: &mut Backend<'_>) -> Vec<Action> {
        let key = &event.object.key;
        if key.kind != Kind::Pod {
            return Vec::new();
        }
        let pkey = pod_key(&key.namespace, &key.name);
        if event.event_type == EventType::Deleted {
            return self.forget(&pkey, backend);
        }
        if self.bindings.contains_key(&pkey) {
            return Vec::new();
        }
        // Level-triggered: act on what is stored now, not on the snapshot.
        let Some(pod) = backend.store.get(key).and_then(|o| o.body.as_pod()).cloned() else {
            return Vec::new();
        };
        if pod.spec.node_name.as_deref() != Some(VIRTUAL_NODE) || pod.status.phase.is_terminal() {
            return Vec::new();
        }
        vec![self.submit_new(pod, pkey, backend)]
    }

    fn forget(&mut self, pkey: &str, backend: &mut Backend<'_>) -> Vec<Action> {
        let Some(binding) = self.bindings.remove(pkey) else {
            return Vec::new();
        };
        let _ = backend.ipam.release(pkey);
        let mut actions = Vec::new();
        if let Some(job_id) = binding.job_id {
            self.jobs.remove(&job_id);
            let live = backend.sim.query(job_id).is_ok_and(|j| !j.state.is_terminal());
            if live {
                backend.sim.cancel(job_id).expect("job exists");
                actions.push(self.record(Action::Cancel {
                    pod: pkey.to_string(),
                    job_id,
                }));
            }
        }
        actions
    }

    fn submit_new(&mut self, mut pod: PodResource, pkey: String, backend: &mut Backend<'_>) -> Action {
        let mut binding = PodJobBinding {
            pod_key: pkey.clone(),
            job_id: None,
            last_observed: None,
            restart_count: 0,
            script: None,
        };
        let outcome = self.try_submit(&pod, &pkey, 0, backend);
        let action = match outcome {
            Ok((job_id, script)) => {
                binding.job_id = Some(job_id);
                binding.last_observed = Some(JobState::Pending);
                binding.script = Some(script);
                self.jobs.insert(job_id, pkey.clone());
                pod.status.phase = PodPhase::Pending;
                pod.status.job_id = Some(job_id);
                Action::Submit {
                    pod: pkey.clone(),
                    job_id,
                    attempt: 0,
                }
            }
            Err(reason) => {
                let _ = backend.ipam.release(&pkey);
                pod.status.phase = PodPhase::Failed;
                pod.status.reason = Some(reason.clone());
                Action::Fail {
                    pod: pkey.clone(),
                    reason,
                }
            }
        };
        self.bindings.insert(pkey, binding);
        write_status(backend.store, pod);
        self.record(action)
    }

    fn try_submit(
        &mut self,
        pod: &PodResource,
        pkey: &str,
        attempt: u32,
        backend: &mut Backend<'_>,
    ) -> Result<(JobId, String), String> {
        let ip = match backend.ipam.address_of(pkey) {
            Some(ip) => ip,
            None => backend.ipam.allocate_any(pkey).map_err(|_| "NoAddress".to_string())?,
        };
        let script = render_script(pod, Some(ip)).map_err(|_| "InvalidAnnotations".to_string())?;
        let text = script.render();
        let behavior = backend.behaviors.lookup(&pod.meta.name, attempt);
        match backend.sim.submit(&text, script.demand(), behavior) {
            Ok(job_id) => Ok((job_id, text)),
            Err(SimError::NeverSchedulable { .. }) => Err("Unschedulable".into()),
            Err(_) => Err("SubmitFailed".into()),
        }
    }

    /// Applies simulator transitions not seen yet.
    fn observe(&mut self, backend: &mut Backend<'_>) -> bool {
        let events: Vec<_> = backend.sim.trace()[self.trace_cursor..].to_vec();
        self.trace_cursor += events.len();
        for event in &events {
            let Some(pkey) = self.jobs.get(&event.job_id).cloned() else {
                continue;
            };
            let binding = self.bindings.get_mut(&pkey).expect("job map and bindings agree");
            if binding.job_id != Some(event.job_id) {
                continue;
            }
            binding.last_observed = Some(event.to);
            let (namespace, name) = pkey.split_once('/').expect("pod keys contain a slash");
            let key = ObjectKey::new(Kind::Pod, namespace, name);
            let Some(mut pod) = backend.store.get(&key).and_then(|o| o.body.as_pod()).cloned() else {
                continue;
            };
            match event.to {
                JobState::Pending => {}
                JobState::Running => {
                    pod.status.phase = PodPhase::Running;
                    pod.status.pod_ip = backend.ipam.address_of(&pkey);
                    write_status(backend.store, pod);
                }
                state => self.finish(pod, pkey, event.job_id, state, backend),
            }
        }
        !events.is_empty()
    }

    fn finish(&mut self, mut pod: PodResource, pkey: String, job_id: JobId, state: JobState, backend: &mut Backend<'_>) {
        self.jobs.remove(&job_id);
        let restarts = self.bindings[&pkey].restart_count;
        let exit_code = backend.sim.query(job_id).ok().and_then(|j| j.exit_code());
        if handle_restart_policy(pod.spec.restart_policy, state, restarts) == RestartDecision::Resubmit {
            let attempt = restarts + 1;
            match self.try_submit(&pod, &pkey, attempt, backend) {
                Ok((new_job, script)) => {
                    let binding = self.bindings.get_mut(&pkey).expect("bound");
                    binding.job_id = Some(new_job);
                    binding.last_observed = Some(JobState::Pending);
                    binding.restart_count = attempt;
                    binding.script = Some(script);
                    self.jobs.insert(new_job, pkey.clone());
                    pod.status.job_id = Some(new_job);
                    pod.status.restart_count = attempt;
                    pod.status.exit_code = exit_code;
                    write_status(backend.store, pod);
                    self.record(Action::Submit {
                        pod: pkey,
                        job_id: new_job,
                        attempt,
                    });
                    return;
                }
                Err(reason) => {
                    let _ = backend.ipam.release(&pkey);
                    pod.status.phase = PodPhase::Failed;
                    pod.status.reason = Some(reason.clone());
                    write_status(backend.store, pod);
                    self.record(Action::Fail { pod: pkey, reason });
                    return;
                }
            }
        }
        let (phase, reason) = sync_status(state, exit_code);
        pod.status.phase = phase;
        pod.status.reason = reason.map(str::to_string);
        pod.status.exit_code = exit_code;
        let _ = backend.ipam.release(&pkey);
        write_status(backend.store, pod);
    }

    /// Violations of the kubelet's bookkeeping invariants at a quiescence
    /// point. Empty when healthy.
    pub fn check_invariants(&self, store: &Store, sim: &SlurmSim, ipam: &Ipam) -> Vec<String> {
        let mut problems = Vec::new();
        for job in sim.jobs().filter(|j| !j.state.is_terminal()) {
            match self.jobs.get(&job.job_id) {
                None => problems.push(format!("job {} has no pod", job.job_id)),
                Some(pkey) => {
                    let (ns, name) = pkey.split_once('/').unwrap_or_default();
                    if store.get(&ObjectKey::new(Kind::Pod, ns, name)).is_none() {
                        problems.push(format!("job {} belongs to deleted pod {pkey}", job.job_id));
                    }
                }
            }
        }
        for object in store.list(Kind::Pod) {
            let Some(pod) = object.body.as_pod() else { continue };
            let pkey = pod_key(&pod.meta.namespace, &pod.meta.name);
            let Some(binding) = self.bindings.get(&pkey) else {
                if pod.spec.node_name.is_some() && !pod.status.phase.is_terminal() {
                    problems.push(format!("pod {pkey} is bound but has no job"));
                }
                continue;
            };
            let live = binding
                .job_id
                .and_then(|id| sim.query(id).ok())
                .filter(|j| !j.state.is_terminal())
                .map(|j| j.state);
            if pod.status.phase.is_terminal() == live.is_some() {
                problems.push(format!("pod {pkey} is {} but its job is {:?}", pod.status.phase, live));
            }
            if let (Some(state), Some(id)) = (binding.last_observed, binding.job_id) {
                let exit_code = sim.query(id).ok().and_then(|j| j.exit_code());
                let (expected, _) = sync_status(state, exit_code);
                let restarting = binding.restart_count > 0 && state == JobState::Pending;
                let retried = handle_restart_policy(pod.spec.restart_policy, state, binding.restart_count)
                    == RestartDecision::Resubmit;
                if pod.status.phase != expected && !restarting && !retried {
                    problems.push(format!("pod {pkey} is {} but job state {state} maps to {expected}", pod.status.phase));
                }
            }
            if live.is_some() != ipam.address_of(&pkey).is_some() {
                problems.push(format!("pod {pkey} address lease does not match job liveness"));
            }
        }
        let mut addresses: Vec<_> = ipam.allocations().into_iter().map(|(_, ip)| ip).collect();
        let total = addresses.len();
        addresses.sort();
        addresses.dedup();
        if addresses.len() != total {
            problems.push("an address is leased twice".into());
        }
        for (pkey, _) in ipam.allocations() {
            if !self.bindings.contains_key(&pkey) {
                problems.push(format!("lease for unknown pod {pkey}"));
            }
        }
        problems
    }
}

fn write_status(store: &mut Store, pod: PodResource) {
    store.put(Resource::Pod(pod)).expect("stored pods stay valid");
}
