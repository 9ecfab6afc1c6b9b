//! Versioned object store with watches, service admission and the
//! pass-through scheduler.
//!
//! All writes go through `&mut Store`, so they are serialized by
//! construction. Watchers receive events over unbounded channels and never
//! block a writer.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::mpsc::{self, Receiver, Sender};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{
    to_manifest_value, validate_pod, validate_service, Kind, Resource, ServiceResource, ServiceType, Violation, HEADLESS,
};
use crate::workflow::validate_workflow;

/// Name of the single node every pod is bound to.
pub const VIRTUAL_NODE: &str = "hpk-node";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ObjectKey {
    pub kind: Kind,
    pub namespace: String,
    pub name: String,
}

impl ObjectKey {
    pub fn new(kind: Kind, namespace: impl Into<String>, name: impl Into<String>) -> Self {
        ObjectKey {
            kind,
            namespace: namespace.into(),
            name: name.into(),
        }
    }

    pub fn of(resource: &Resource) -> Self {
        let meta = resource.meta();
        ObjectKey::new(resource.kind(), meta.namespace.clone(), meta.name.clone())
    }
}

impl fmt::Display for ObjectKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}/{}", self.kind, self.namespace, self.name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredObject {
    pub key: ObjectKey,
    pub resource_version: u64,
    pub body: Resource,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EventType {
    Added,
    Modified,
    Deleted,
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EventType::Added => "ADDED",
            EventType::Modified => "MODIFIED",
            EventType::Deleted => "DELETED",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WatchEvent {
    pub event_type: EventType,
    pub object: StoredObject,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Allowed,
    Mutated,
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdmissionOutcome {
    pub verdict: Verdict,
    pub object: ServiceResource,
    /// Set for rejections, and describes the rewrite for mutations.
    pub reason: Option<String>,
}

/// Services may not carry a virtual IP. Agnostic manifests are rewritten to
/// headless; explicit requests for a virtual IP, a node port or a load
/// balancer are refused.
pub fn admit_service(service: &ServiceResource) -> AdmissionOutcome {
    let reject = |reason: String| AdmissionOutcome {
        verdict: Verdict::Rejected,
        object: service.clone(),
        reason: Some(reason),
    };
    match service.spec.service_type {
        ServiceType::NodePort | ServiceType::LoadBalancer => {
            return reject(format!(
                "service type {} needs host networking and is not supported",
                service.spec.service_type.as_str()
            ))
        }
        ServiceType::ClusterIP => {}
    }
    match service.spec.cluster_ip.as_deref() {
        Some(HEADLESS) => AdmissionOutcome {
            verdict: Verdict::Allowed,
            object: service.clone(),
            reason: None,
        },
        None | Some("") => {
            let mut object = service.clone();
            object.spec.cluster_ip = Some(HEADLESS.to_string());
            AdmissionOutcome {
                verdict: Verdict::Mutated,
                object,
                reason: Some(format!("clusterIP={HEADLESS}")),
            }
        }
        Some(ip) => reject(format!("virtual service IP {ip} requested; only headless services are supported")),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("{key} rejected by admission: {reason}")]
    AdmissionRejected { key: ObjectKey, reason: String },
    #[error("{key} failed validation: {}", join(violations))]
    ValidationFailed { key: ObjectKey, violations: Vec<Violation> },
    #[error("{0} not found")]
    NotFound(ObjectKey),
    #[error("watch version {0} is older than retained history")]
    VersionCompacted(u64),
}

fn join(violations: &[Violation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PutResult {
    Created,
    Updated,
    Unchanged,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PutOutcome {
    pub key: ObjectKey,
    pub resource_version: u64,
    pub result: PutResult,
    /// Description of an admission rewrite, if one happened.
    pub mutation: Option<String>,
}

/// Stream of watch events, in store version order.
#[derive(Debug)]
pub struct Watch {
    rx: Receiver<WatchEvent>,
}

impl Watch {
    /// Next event if one is already queued.
    pub fn try_next(&self) -> Option<WatchEvent> {
        self.rx.try_recv().ok()
    }

    /// Everything queued right now.
    pub fn drain(&self) -> Vec<WatchEvent> {
        self.rx.try_iter().collect()
    }

    pub fn next_timeout(&self, timeout: Duration) -> Option<WatchEvent> {
        self.rx.recv_timeout(timeout).ok()
    }
}

/// Blocks until the next event; ends once the store is dropped.
impl Iterator for Watch {
    type Item = WatchEvent;

    fn next(&mut self) -> Option<WatchEvent> {
        self.rx.recv().ok()
    }
}

/// Persisted as its event history; current objects are rebuilt by replay.
#[derive(Default)]
pub struct Store {
    version: u64,
    objects: BTreeMap<ObjectKey, StoredObject>,
    history: Vec<WatchEvent>,
    watchers: Vec<(Option<Kind>, Sender<WatchEvent>)>,
}

#[derive(Serialize)]
struct HistoryRef<'a> {
    version: u64,
    history: &'a [WatchEvent],
}

#[derive(Deserialize)]
struct History {
    version: u64,
    history: Vec<WatchEvent>,
}

impl Serialize for Store {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        HistoryRef {
            version: self.version,
            history: &self.history,
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Store {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let History { version, history } = History::deserialize(deserializer)?;
        let mut objects = BTreeMap::new();
        for event in &history {
            if event.object.resource_version > version {
                return Err(serde::de::Error::custom("event newer than store version"));
            }
            match event.event_type {
                EventType::Deleted => objects.remove(&event.object.key),
                _ => objects.insert(event.object.key.clone(), event.object.clone()),
            };
        }
        Ok(Store {
            version,
            objects,
            history,
            watchers: Vec::new(),
        })
    }
}

impl fmt::Debug for Store {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Store")
            .field("version", &self.version)
            .field("objects", &self.objects.len())
            .field("watchers", &self.watchers.len())
            .finish()
    }
}

impl Store {
    pub fn new() -> Self {
        Store::default()
    }

    /// Latest resource version handed out.
    pub fn version(&self) -> u64 {
        self.version
    }

    /// Validates, admits and stores `resource`. Writing a body identical to
    /// the stored one is a no-op that keeps the old version.
    pub fn put(&mut self, resource: Resource) -> Result<PutOutcome, StoreError> {
        let key = ObjectKey::of(&resource);
        let (resource, mutation) = self.check(key.clone(), resource)?;

        let existing = self.objects.get(&key);
        if let Some(existing) = existing {
            if existing.body == resource {
                return Ok(PutOutcome {
                    key,
                    resource_version: existing.resource_version,
                    result: PutResult::Unchanged,
                    mutation,
                });
            }
        }
        let (event_type, result) = match existing {
            Some(_) => (EventType::Modified, PutResult::Updated),
            None => (EventType::Added, PutResult::Created),
        };
        let version = self.commit(event_type, key.clone(), resource);
        Ok(PutOutcome {
            key,
            resource_version: version,
            result,
            mutation,
        })
    }

    fn check(&self, key: ObjectKey, resource: Resource) -> Result<(Resource, Option<String>), StoreError> {
        let invalid = |violations: Vec<Violation>| StoreError::ValidationFailed {
            key: key.clone(),
            violations,
        };
        match resource {
            Resource::Pod(pod) => {
                validate_pod(&pod).map_err(invalid)?;
                Ok((Resource::Pod(pod), None))
            }
            Resource::Service(svc) => {
                validate_service(&svc).map_err(invalid)?;
                let outcome = admit_service(&svc);
                match outcome.verdict {
                    Verdict::Rejected => Err(StoreError::AdmissionRejected {
                        key,
                        reason: outcome.reason.unwrap_or_default(),
                    }),
                    Verdict::Mutated => Ok((Resource::Service(outcome.object), outcome.reason)),
                    Verdict::Allowed => Ok((Resource::Service(outcome.object), None)),
                }
            }
            Resource::Workflow(wf) => {
                validate_workflow(&wf).map_err(|e| {
                    invalid(vec![Violation {
                        path: "spec".into(),
                        message: e.to_string(),
                    }])
                })?;
                Ok((Resource::Workflow(wf), None))
            }
            node @ Resource::Node(_) => Ok((node, None)),
        }
    }

    fn commit(&mut self, event_type: EventType, key: ObjectKey, body: Resource) -> u64 {
        self.version += 1;
        let object = StoredObject {
            key: key.clone(),
            resource_version: self.version,
            body,
        };
        if event_type == EventType::Deleted {
            self.objects.remove(&key);
        } else {
            self.objects.insert(key, object.clone());
        }
        let event = WatchEvent { event_type, object };
        self.watchers.retain(|(kind, tx)| {
            if kind.is_some_and(|k| k != event.object.key.kind) {
                return true;
            }
            tx.send(event.clone()).is_ok()
        });
        self.history.push(event);
        self.version
    }

    pub fn delete(&mut self, key: &ObjectKey) -> Result<u64, StoreError> {
        let existing = self.objects.get(key).ok_or_else(|| StoreError::NotFound(key.clone()))?;
        let body = existing.body.clone();
        Ok(self.commit(EventType::Deleted, key.clone(), body))
    }

    pub fn get(&self, key: &ObjectKey) -> Option<&StoredObject> {
        self.objects.get(key)
    }

    /// Objects of one kind in key order.
    pub fn list(&self, kind: Kind) -> impl Iterator<Item = &StoredObject> {
        self.objects.values().filter(move |o| o.key.kind == kind)
    }

    pub fn objects(&self) -> impl Iterator<Item = &StoredObject> {
        self.objects.values()
    }

    /// Subscribes to events with a version greater than `from_version`,
    /// optionally restricted to one kind. Retained history is unlimited, so
    /// past events are always replayed.
    pub fn watch(&mut self, kind: Option<Kind>, from_version: u64) -> Result<Watch, StoreError> {
        let (tx, rx) = mpsc::channel();
        let start = self.history.partition_point(|e| e.object.resource_version <= from_version);
        for event in &self.history[start..] {
            if kind.is_none_or(|k| k == event.object.key.kind) {
                let _ = tx.send(event.clone());
            }
        }
        self.watchers.push((kind, tx));
        Ok(Watch { rx })
    }

    /// Pass-through scheduler: binds every unbound pod to the virtual node.
    pub fn bind_pending_pods(&mut self) -> Vec<(ObjectKey, String)> {
        let unbound: Vec<_> = self
            .list(Kind::Pod)
            .filter_map(|o| match &o.body {
                Resource::Pod(p) if p.spec.node_name.is_none() => Some(p.clone()),
                _ => None,
            })
            .collect();
        let mut bindings = Vec::with_capacity(unbound.len());
        for mut pod in unbound {
            pod.spec.node_name = Some(VIRTUAL_NODE.to_string());
            let key = self.commit_unchecked(Resource::Pod(pod));
            bindings.push((key, VIRTUAL_NODE.to_string()));
        }
        bindings
    }

    /// Writes an already-validated object (status updates, bindings).
    fn commit_unchecked(&mut self, resource: Resource) -> ObjectKey {
        let key = ObjectKey::of(&resource);
        let event_type = if self.objects.contains_key(&key) {
            EventType::Modified
        } else {
            EventType::Added
        };
        self.commit(event_type, key.clone(), resource);
        key
    }

    /// JSON document mapping kind to its objects, each carrying its
    /// `resourceVersion`. Keys are sorted.
    pub fn dump_json(&self) -> String {
        let mut by_kind: BTreeMap<&str, Vec<serde_json::Value>> = BTreeMap::new();
        for object in self.objects.values() {
            let mut value =
                serde_json::to_value(to_manifest_value(&object.body)).expect("manifest values serialize to JSON");
            if let serde_json::Value::Object(map) = &mut value {
                map.insert("resourceVersion".into(), object.resource_version.into());
            }
            by_kind.entry(object.key.kind.plural()).or_default().push(value);
        }
        let mut text = serde_json::to_string_pretty(&by_kind).expect("JSON values serialize");
        text.push('\n');
        text
    }
}
