//! Wires the store, simulator, address manager, kubelet and workflow
//! controller into one single-writer event loop.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::EngineConfig;
use crate::kubelet::{pod_key, register_node, Backend, Kubelet, KubeletError, VirtualNode};
use crate::manifest::{parse_manifest, Kind, ManifestError, Resource};
use crate::network::{resolve, Ipam, NetworkError, Resolution};
use crate::slurm::{JobId, JobState, SimError, SimEvent, SlurmSim};
use crate::store::{ObjectKey, PutOutcome, PutResult, Store, StoreError, VIRTUAL_NODE};
use crate::workflow::WorkflowController;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Kubelet(#[from] KubeletError),
    #[error("{0} already exists with a different spec; delete it first")]
    Immutable(ObjectKey),
    #[error("pod {0} names node {1:?}; only {VIRTUAL_NODE:?} exists")]
    ForeignNode(ObjectKey, String),
    #[error("pod {0} has not been submitted")]
    NotSubmitted(String),
    #[error("no quiescence within {0} ticks")]
    NonQuiescent(u64),
    #[error("bad engine state: {0}")]
    State(#[from] serde_json::Error),
}

/// Result of applying one manifest document.
#[derive(Debug)]
pub struct ApplyReport {
    pub index: usize,
    /// `kind/name`, when the document got that far.
    pub object: Option<String>,
    pub outcome: Result<PutOutcome, EngineError>,
    pub warnings: Vec<String>,
}

impl ApplyReport {
    /// Human-readable verdict line.
    pub fn verdict(&self) -> String {
        let object = self.object.clone().unwrap_or_else(|| format!("document {}", self.index));
        match &self.outcome {
            Ok(outcome) => {
                let result = match outcome.result {
                    PutResult::Created => "created",
                    PutResult::Updated => "updated",
                    PutResult::Unchanged => "unchanged",
                };
                match &outcome.mutation {
                    Some(m) if outcome.result != PutResult::Unchanged => format!("{object} mutated: {m}"),
                    _ => format!("{object} {result}"),
                }
            }
            Err(EngineError::Store(StoreError::AdmissionRejected { reason, .. })) => {
                format!("{object} rejected: {reason}")
            }
            Err(EngineError::Store(StoreError::ValidationFailed { violations, .. })) => {
                let violations: Vec<_> = violations.iter().map(|v| v.to_string()).collect();
                format!("{object} rejected: {}", violations.join("; "))
            }
            Err(e) => format!("{object} rejected: {e}"),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Engine {
    config: EngineConfig,
    node: VirtualNode,
    store: Store,
    sim: SlurmSim,
    ipam: Ipam,
    kubelet: Kubelet,
    workflows: WorkflowController,
}

impl Engine {
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        if config.cluster_nodes.is_empty() {
            return Err(KubeletError::EmptyCluster.into());
        }
        let mut store = Store::new();
        let sim = SlurmSim::new(config.cluster_nodes.clone())?;
        let ipam = Ipam::new(config.cluster_nodes.iter().map(|n| n.name.as_str()))?;
        let node = register_node(&mut store, &sim)?;
        let mut engine = Engine {
            config,
            node,
            store,
            sim,
            ipam,
            kubelet: Kubelet::new(),
            workflows: WorkflowController::new(),
        };
        engine.attach();
        Ok(engine)
    }

    fn attach(&mut self) {
        self.kubelet.attach(&mut self.store);
        self.workflows.attach(&mut self.store);
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn node(&self) -> &VirtualNode {
        &self.node
    }

    pub fn store(&self) -> &Store {
        &self.store
    }

    pub fn sim(&self) -> &SlurmSim {
        &self.sim
    }

    pub fn ipam(&self) -> &Ipam {
        &self.ipam
    }

    pub fn kubelet(&self) -> &Kubelet {
        &self.kubelet
    }

    pub fn workflows(&self) -> &WorkflowController {
        &self.workflows
    }

    pub fn tick(&self) -> u64 {
        self.sim.tick()
    }

    /// Stores one resource and runs controllers to a fixpoint. Pods and
    /// workflows are immutable once stored, apart from status; re-applying
    /// the same spec is reported as unchanged.
    pub fn apply(&mut self, resource: Resource) -> Result<PutOutcome, EngineError> {
        let key = ObjectKey::of(&resource);
        let resource = match (resource, self.store.get(&key).map(|o| &o.body)) {
            (Resource::Pod(mut pod), existing) => {
                if let Some(node) = pod.spec.node_name.as_deref().filter(|n| *n != VIRTUAL_NODE) {
                    return Err(EngineError::ForeignNode(key, node.to_string()));
                }
                if let Some(Resource::Pod(current)) = existing {
                    pod.spec.node_name = current.spec.node_name.clone();
                    if pod.spec != current.spec || pod.meta != current.meta {
                        return Err(EngineError::Immutable(key));
                    }
                    pod.status = current.status.clone();
                }
                Resource::Pod(pod)
            }
            (Resource::Workflow(mut wf), Some(Resource::Workflow(current))) => {
                if wf.spec != current.spec || wf.meta != current.meta {
                    return Err(EngineError::Immutable(key));
                }
                wf.status = current.status.clone();
                Resource::Workflow(wf)
            }
            (other, _) => other,
        };
        let outcome = self.store.put(resource)?;
        self.settle();
        Ok(outcome)
    }

    /// Applies every document of a manifest stream; failures of one document
    /// do not stop the others.
    pub fn apply_text(&mut self, text: &str) -> Result<Vec<ApplyReport>, EngineError> {
        let docs = parse_manifest(text)?;
        Ok(docs
            .into_iter()
            .map(|doc| {
                let (object, outcome) = match doc.outcome {
                    Ok(resource) => {
                        let object = format!("{}/{}", resource.kind(), resource.meta().name);
                        (Some(object), self.apply(resource))
                    }
                    Err(e) => (None, Err(e.into())),
                };
                ApplyReport {
                    index: doc.index,
                    object,
                    outcome,
                    warnings: doc.warnings,
                }
            })
            .collect())
    }

    pub fn delete(&mut self, key: &ObjectKey) -> Result<u64, EngineError> {
        let version = self.store.delete(key)?;
        self.settle();
        Ok(version)
    }

    /// Cancels a job as an operator would, outside the pod lifecycle.
    pub fn cancel_job(&mut self, job_id: JobId) -> Result<JobState, EngineError> {
        let state = self.sim.cancel(job_id)?;
        self.settle();
        Ok(state)
    }

    /// Binds pods and lets both controllers consume their inputs until
    /// nothing changes.
    pub fn settle(&mut self) {
        loop {
            let bound = !self.store.bind_pending_pods().is_empty();
            let mut backend = Backend {
                store: &mut self.store,
                sim: &mut self.sim,
                ipam: &mut self.ipam,
                behaviors: &self.config.behaviors,
            };
            let kubelet = self.kubelet.pump(&mut backend);
            let workflows = self.workflows.pump(&mut self.store, self.sim.tick());
            if !(bound || kubelet || workflows) {
                break;
            }
        }
    }

    /// Advances `ticks` ticks, settling controllers after each one.
    pub fn step(&mut self, ticks: u64) -> Vec<SimEvent> {
        let mut events = Vec::new();
        for _ in 0..ticks {
            events.extend(self.sim.step(1));
            self.settle();
        }
        events
    }

    /// Steps until the simulator tick reaches `tick`.
    pub fn run_until(&mut self, tick: u64) -> Vec<SimEvent> {
        self.settle();
        let remaining = tick.saturating_sub(self.sim.tick());
        self.step(remaining)
    }

    pub fn is_quiescent(&self) -> bool {
        self.sim.is_idle()
    }

    /// Steps until no job is pending or running, or fails after the
    /// configured number of ticks.
    pub fn run_to_quiescence(&mut self) -> Result<Vec<SimEvent>, EngineError> {
        self.settle();
        let limit = self.config.quiescence_limit;
        let mut events = Vec::new();
        let mut ticks = 0;
        while !self.is_quiescent() {
            if ticks == limit {
                return Err(EngineError::NonQuiescent(limit));
            }
            events.extend(self.step(1));
            ticks += 1;
        }
        Ok(events)
    }

    pub fn resolve(&self, service: &str, namespace: &str) -> Resolution {
        resolve(&self.store, service, namespace)
    }

    /// Exact text of the script most recently submitted for a pod.
    pub fn export_script(&self, namespace: &str, name: &str) -> Result<String, EngineError> {
        let key = pod_key(namespace, name);
        self.kubelet
            .binding(&key)
            .and_then(|b| b.script.clone())
            .ok_or(EngineError::NotSubmitted(key))
    }

    pub fn trace_text(&self) -> String {
        self.sim.trace_text()
    }

    pub fn dump(&self) -> String {
        self.store.dump_json()
    }

    /// Everything that should hold at a quiescence point.
    pub fn check_invariants(&self) -> Vec<String> {
        let mut problems = self.kubelet.check_invariants(&self.store, &self.sim, &self.ipam);
        if !self.sim.conserved() {
            problems.push("node capacity exceeded".into());
        }
        let mut nodes = self
            .store
            .list(Kind::Pod)
            .filter_map(|o| o.body.as_pod())
            .filter_map(|p| p.spec.node_name.clone())
            .collect::<Vec<_>>();
        nodes.sort();
        nodes.dedup();
        if nodes.len() > 1 {
            problems.push(format!("pods bound to several nodes: {nodes:?}"));
        }
        for service in self.store.list(Kind::Service).filter_map(|o| o.body.as_service()) {
            if !service.is_headless() {
                problems.push(format!("service {} is not headless", service.meta.name));
            }
        }
        problems
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("engine state serializes");
        text.push('\n');
        text
    }

    pub fn from_json(text: &str) -> Result<Self, EngineError> {
        let mut engine: Engine = serde_json::from_str(text)?;
        engine.attach();
        Ok(engine)
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_json())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::manifest::PodPhase;
    use crate::slurm::NodeSpec;

    fn engine() -> Engine {
        Engine::new(EngineConfig::new(vec![NodeSpec::new("n0", 4, 8192)])).unwrap()
    }

    const POD: &str = "apiVersion: v1\nkind: Pod\nmetadata: {name: a}\nspec:\n  containers:\n  - {name: c, image: busybox}\n";

    fn phase(e: &Engine, name: &str) -> PodPhase {
        e.store()
            .get(&ObjectKey::new(Kind::Pod, "default", name))
            .and_then(|o| o.body.as_pod())
            .unwrap()
            .status
            .phase
    }

    #[test]
    fn pod_lifecycle() {
        let mut e = engine();
        let reports = e.apply_text(POD).unwrap();
        assert_eq!(reports[0].verdict(), "pod/a created");
        assert_eq!(phase(&e, "a"), PodPhase::Pending);
        e.step(1);
        assert_eq!(phase(&e, "a"), PodPhase::Running);
        e.run_to_quiescence().unwrap();
        assert_eq!(phase(&e, "a"), PodPhase::Succeeded);
        assert_eq!(e.trace_text(), "1 1 PENDING->RUNNING\n2 1 RUNNING->COMPLETED\n");
        assert!(e.check_invariants().is_empty());
        assert_eq!(e.apply_text(POD).unwrap()[0].verdict(), "pod/a unchanged");
    }

    #[test]
    fn save_and_load() {
        let mut e = engine();
        e.apply_text(POD).unwrap();
        e.step(1);
        let mut loaded = Engine::from_json(&e.to_json()).unwrap();
        assert_eq!(loaded.to_json(), e.to_json());
        loaded.run_to_quiescence().unwrap();
        e.run_to_quiescence().unwrap();
        assert_eq!(loaded.to_json(), e.to_json());
        assert_eq!(phase(&loaded, "a"), PodPhase::Succeeded);
    }

    #[test]
    fn empty_engine_is_quiescent() {
        let mut e = engine();
        assert!(e.run_to_quiescence().unwrap().is_empty());
    }
}
