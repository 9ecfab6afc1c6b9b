//! Argo-style DAG workflows: validation, `withItems` fan-out, parameter
//! substitution and the controller that turns steps into pods.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::manifest::{
    DagTask, Kind, NodePhase, ObjectMeta, PodPhase, PodResource, PodSpec, PodTemplate, Resource, RestartPolicy,
    StepStatus, TaskStatus, TemplateBody, WorkflowPhase, WorkflowResource, WorkflowSpec, WorkflowStatus,
};
use crate::store::{EventType, ObjectKey, Store, StoreError, Watch};

pub const WORKFLOW_LABEL: &str = "workflows.argoproj.io/workflow";
pub const NODE_NAME_ANNOTATION: &str = "workflows.argoproj.io/node-name";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorkflowError {
    #[error("entrypoint {0:?} is not a template")]
    UnknownEntrypoint(String),
    #[error("duplicate template {0:?}")]
    DuplicateTemplate(String),
    #[error("duplicate task {0:?}")]
    DuplicateTask(String),
    #[error("task {task:?} references unknown template {template:?}")]
    UnknownTemplate { task: String, template: String },
    #[error("task {task:?} uses dag template {template:?}; nested DAGs are not supported")]
    NestedDag { task: String, template: String },
    #[error("task {task:?} depends on unknown task {dependency:?}")]
    UnknownDependency { task: String, dependency: String },
    #[error("task {0:?} depends on itself")]
    SelfDependency(String),
    #[error("dependency cycle through {}", .0.join(", "))]
    CycleDetected(Vec<String>),
    #[error("placeholder {{{{{0}}}}} is not declared")]
    UndeclaredPlaceholder(String),
    #[error("parameter {0:?} is not bound")]
    UnboundParameter(String),
}

const PARAM_PREFIX: &str = "inputs.parameters.";

/// Expressions of every `{{ ... }}` in `text`. An unterminated `{{` yields
/// the remainder of the text.
fn placeholders(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) => {
                out.push(after[..end].trim());
                rest = &after[end + 2..];
            }
            None => {
                out.push(after.trim());
                break;
            }
        }
    }
    out
}

fn template_texts(t: &PodTemplate) -> impl Iterator<Item = &str> {
    t.annotations
        .values()
        .chain(t.labels.values())
        .chain(&t.container.command)
        .chain(&t.container.args)
        .chain(std::iter::once(&t.container.image))
        .map(String::as_str)
}

fn check_template_placeholders(t: &PodTemplate) -> Result<(), WorkflowError> {
    for text in template_texts(t) {
        for expr in placeholders(text) {
            match expr.strip_prefix(PARAM_PREFIX) {
                Some(name) if t.inputs.iter().any(|i| i == name) => {}
                Some(name) => return Err(WorkflowError::UndeclaredPlaceholder(name.to_string())),
                None => return Err(WorkflowError::UndeclaredPlaceholder(expr.to_string())),
            }
        }
    }
    Ok(())
}

fn check_task_arguments(task: &DagTask) -> Result<(), WorkflowError> {
    for arg in &task.arguments {
        for expr in placeholders(&arg.value) {
            if !(expr == "item" && task.with_items.is_some()) {
                return Err(WorkflowError::UndeclaredPlaceholder(expr.to_string()));
            }
        }
    }
    Ok(())
}

/// Checks template references, task dependencies (including cycles) and
/// placeholder declarations.
pub fn validate_workflow(wf: &WorkflowResource) -> Result<(), WorkflowError> {
    validate_spec(&wf.spec)
}

pub fn validate_spec(spec: &WorkflowSpec) -> Result<(), WorkflowError> {
    let mut names = BTreeSet::new();
    for t in &spec.templates {
        if !names.insert(t.name.as_str()) {
            return Err(WorkflowError::DuplicateTemplate(t.name.clone()));
        }
    }
    if spec.template(&spec.entrypoint).is_none() {
        return Err(WorkflowError::UnknownEntrypoint(spec.entrypoint.clone()));
    }
    for t in &spec.templates {
        match &t.body {
            TemplateBody::Container(pt) => check_template_placeholders(pt)?,
            TemplateBody::Dag(tasks) => validate_dag(spec, tasks)?,
        }
    }
    Ok(())
}

fn validate_dag(spec: &WorkflowSpec, tasks: &[DagTask]) -> Result<(), WorkflowError> {
    let mut names = BTreeSet::new();
    for task in tasks {
        if !names.insert(task.name.as_str()) {
            return Err(WorkflowError::DuplicateTask(task.name.clone()));
        }
    }
    for task in tasks {
        match spec.template(&task.template).map(|t| &t.body) {
            None => {
                return Err(WorkflowError::UnknownTemplate {
                    task: task.name.clone(),
                    template: task.template.clone(),
                })
            }
            Some(TemplateBody::Dag(_)) => {
                return Err(WorkflowError::NestedDag {
                    task: task.name.clone(),
                    template: task.template.clone(),
                })
            }
            Some(TemplateBody::Container(_)) => {}
        }
        for dep in &task.dependencies {
            if *dep == task.name {
                return Err(WorkflowError::SelfDependency(task.name.clone()));
            }
            if !names.contains(dep.as_str()) {
                return Err(WorkflowError::UnknownDependency {
                    task: task.name.clone(),
                    dependency: dep.clone(),
                });
            }
        }
        check_task_arguments(task)?;
    }
    topological_order(tasks).map(|_| ())
}

/// Kahn's algorithm, ties broken by declaration order.
pub fn topological_order(tasks: &[DagTask]) -> Result<Vec<usize>, WorkflowError> {
    let index: BTreeMap<&str, usize> = tasks.iter().enumerate().map(|(i, t)| (t.name.as_str(), i)).collect();
    let mut indegree: Vec<usize> = tasks.iter().map(|t| t.dependencies.len()).collect();
    let mut dependents = vec![Vec::new(); tasks.len()];
    for (i, t) in tasks.iter().enumerate() {
        for dep in &t.dependencies {
            if let Some(&d) = index.get(dep.as_str()) {
                dependents[d].push(i);
            }
        }
    }
    let mut ready: VecDeque<usize> = (0..tasks.len()).filter(|&i| indegree[i] == 0).collect();
    let mut order = Vec::with_capacity(tasks.len());
    while let Some(i) = ready.pop_front() {
        order.push(i);
        for &j in &dependents[i] {
            indegree[j] -= 1;
            if indegree[j] == 0 {
                ready.push_back(j);
            }
        }
    }
    if order.len() < tasks.len() {
        let stuck = (0..tasks.len())
            .filter(|i| !order.contains(i))
            .map(|i| tasks[i].name.clone())
            .collect();
        return Err(WorkflowError::CycleDetected(stuck));
    }
    Ok(order)
}

/// One concrete execution of a task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    /// `A` for plain tasks, `A(1:4)` for fan-out items.
    pub name: String,
    pub index: Option<usize>,
    pub item: Option<String>,
    pub bindings: BTreeMap<String, String>,
}

/// One step per `withItems` entry, or a single step without it. An empty
/// item list yields no steps.
pub fn expand_with_items(task: &DagTask) -> Vec<Step> {
    let bind = |item: Option<&str>| -> BTreeMap<String, String> {
        task.arguments
            .iter()
            .map(|p| {
                let value = match item {
                    Some(item) => replace_item(&p.value, item),
                    None => p.value.clone(),
                };
                (p.name.clone(), value)
            })
            .collect()
    };
    match &task.with_items {
        None => vec![Step {
            name: task.name.clone(),
            index: None,
            item: None,
            bindings: bind(None),
        }],
        Some(items) => items
            .iter()
            .enumerate()
            .map(|(i, item)| Step {
                name: format!("{}({i}:{item})", task.name),
                index: Some(i),
                item: Some(item.clone()),
                bindings: bind(Some(item)),
            })
            .collect(),
    }
}

fn replace_item(text: &str, item: &str) -> String {
    let mut out = String::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        let after = &rest[start + 2..];
        match after.find("}}") {
            Some(end) if after[..end].trim() == "item" => {
                out.push_str(&rest[..start]);
                out.push_str(item);
                rest = &after[end + 2..];
            }
            Some(end) => {
                out.push_str(&rest[..start + 2 + end + 2]);
                rest = &after[end + 2..];
            }
            None => break,
        }
    }
    out.push_str(rest);
    out
}

fn substitute(text: &str, declared: &[String], bindings: &BTreeMap<String, String>) -> Result<String, WorkflowError> {
    let mut out = String::new();
    let mut rest = text;
    while let Some(start) = rest.find("{{") {
        out.push_str(&rest[..start]);
        let after = &rest[start + 2..];
        let Some(end) = after.find("}}") else {
            return Err(WorkflowError::UndeclaredPlaceholder(after.trim().to_string()));
        };
        let expr = after[..end].trim();
        let name = expr
            .strip_prefix(PARAM_PREFIX)
            .ok_or_else(|| WorkflowError::UndeclaredPlaceholder(expr.to_string()))?;
        if !declared.iter().any(|d| d == name) {
            return Err(WorkflowError::UndeclaredPlaceholder(name.to_string()));
        }
        let value = bindings
            .get(name)
            .ok_or_else(|| WorkflowError::UnboundParameter(name.to_string()))?;
        out.push_str(value);
        rest = &after[end + 2..];
    }
    out.push_str(rest);
    Ok(out)
}

/// Instantiates a container template. The returned pod carries the
/// template's labels and annotations; the caller names it.
pub fn substitute_parameters(
    template: &PodTemplate,
    bindings: &BTreeMap<String, String>,
) -> Result<PodResource, WorkflowError> {
    if let Some(unbound) = template.inputs.iter().find(|i| !bindings.contains_key(*i)) {
        return Err(WorkflowError::UnboundParameter(unbound.clone()));
    }
    let sub = |text: &String| substitute(text, &template.inputs, bindings);
    let sub_map = |map: &BTreeMap<String, String>| -> Result<BTreeMap<String, String>, WorkflowError> {
        map.iter().map(|(k, v)| Ok((k.clone(), sub(v)?))).collect()
    };
    let mut container = template.container.clone();
    container.image = sub(&container.image)?;
    container.command = container.command.iter().map(sub).collect::<Result<_, _>>()?;
    container.args = container.args.iter().map(sub).collect::<Result<_, _>>()?;
    Ok(PodResource {
        meta: ObjectMeta {
            labels: sub_map(&template.labels)?,
            annotations: sub_map(&template.annotations)?,
            ..Default::default()
        },
        spec: PodSpec {
            containers: vec![container],
            restart_policy: RestartPolicy::Never,
            node_name: None,
            volumes: template.volumes.clone(),
            active_deadline_seconds: None,
        },
        status: Default::default(),
    })
}

fn dns_label(text: &str) -> String {
    let mut out: String = text
        .to_ascii_lowercase()
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '-' })
        .collect();
    while out.contains("--") {
        out = out.replace("--", "-");
    }
    out.trim_matches('-').to_string()
}

/// Name of the pod running `step` of `task` in workflow `workflow`.
pub fn step_pod_name(workflow: &str, task: &str, index: Option<usize>) -> String {
    match index {
        Some(i) => format!("{}-{}-{i}", dns_label(workflow), dns_label(task)),
        None => format!("{}-{}", dns_label(workflow), dns_label(task)),
    }
}

/// Tasks of the entrypoint. A container entrypoint is a one-task DAG.
fn entry_tasks(spec: &WorkflowSpec) -> Vec<DagTask> {
    match spec.template(&spec.entrypoint).map(|t| &t.body) {
        Some(TemplateBody::Dag(tasks)) => tasks.clone(),
        _ => vec![DagTask {
            name: spec.entrypoint.clone(),
            template: spec.entrypoint.clone(),
            ..Default::default()
        }],
    }
}

fn step_phase(pod: Option<&PodResource>) -> (NodePhase, Option<String>) {
    match pod.map(|p| p.status.phase) {
        None => (NodePhase::Failed, Some("pod deleted".into())),
        Some(PodPhase::Pending | PodPhase::Running) => (NodePhase::Running, None),
        Some(PodPhase::Succeeded) => (NodePhase::Succeeded, None),
        Some(PodPhase::Failed) => (
            NodePhase::Failed,
            pod.and_then(|p| p.status.reason.clone()),
        ),
    }
}

/// Drives workflows from store state. It watches pods and workflows and
/// re-evaluates every workflow touched by an event.
#[derive(Debug, Default, Serialize, Deserialize)]
pub struct WorkflowController {
    last_version: u64,
    #[serde(skip)]
    watch: Option<Watch>,
    log: Vec<String>,
}

impl WorkflowController {
    pub fn new() -> Self {
        WorkflowController::default()
    }

    /// (Re)subscribes to the store from the last processed version.
    pub fn attach(&mut self, store: &mut Store) {
        self.watch = Some(store.watch(None, self.last_version).expect("history is never compacted"));
    }

    pub fn log(&self) -> &[String] {
        &self.log
    }

    /// Processes queued events. Returns whether anything was consumed.
    pub fn pump(&mut self, store: &mut Store, tick: u64) -> bool {
        let events = self.watch.as_ref().map(Watch::drain).unwrap_or_default();
        if events.is_empty() {
            return false;
        }
        let mut dirty = BTreeSet::new();
        for event in events {
            self.last_version = event.object.resource_version;
            let key = &event.object.key;
            match (&event.object.body, event.event_type) {
                (Resource::Workflow(_), EventType::Deleted) => {
                    self.collect_pods(store, &key.namespace, &key.name);
                }
                (Resource::Workflow(_), _) => {
                    dirty.insert((key.namespace.clone(), key.name.clone()));
                }
                (Resource::Pod(pod), _) => {
                    if let Some(wf) = pod.meta.labels.get(WORKFLOW_LABEL) {
                        dirty.insert((key.namespace.clone(), wf.clone()));
                    }
                }
                _ => {}
            }
        }
        for (namespace, name) in dirty {
            self.sync(store, &namespace, &name, tick);
        }
        true
    }

    fn collect_pods(&mut self, store: &mut Store, namespace: &str, workflow: &str) {
        let owned: Vec<ObjectKey> = store
            .list(Kind::Pod)
            .filter(|o| o.key.namespace == namespace)
            .filter(|o| {
                o.body
                    .as_pod()
                    .is_some_and(|p| p.meta.labels.get(WORKFLOW_LABEL).map(String::as_str) == Some(workflow))
            })
            .map(|o| o.key.clone())
            .collect();
        for key in owned {
            if store.delete(&key).is_ok() {
                self.log.push(format!("workflow {namespace}/{workflow}: deleted pod {}", key.name));
            }
        }
    }

    /// Advances one workflow as far as current pod states allow.
    pub fn sync(&mut self, store: &mut Store, namespace: &str, name: &str, tick: u64) {
        let key = ObjectKey::new(Kind::Workflow, namespace, name);
        let Some(wf) = store.get(&key).and_then(|o| o.body.as_workflow()).cloned() else {
            return;
        };
        if wf.status.phase.is_terminal() {
            return;
        }
        let mut status = wf.status.clone();
        let tasks = entry_tasks(&wf.spec);
        if status.phase == WorkflowPhase::Pending {
            status.phase = WorkflowPhase::Running;
            status.tasks = tasks
                .iter()
                .map(|t| TaskStatus {
                    name: t.name.clone(),
                    phase: NodePhase::Waiting,
                    steps: Vec::new(),
                    message: None,
                })
                .collect();
            self.log.push(format!("workflow {namespace}/{name}: started"));
        }

        loop {
            let mut changed = false;
            for (i, task) in tasks.iter().enumerate() {
                changed |= self.advance_task(store, &wf, task, i, &mut status, tick);
            }
            if !changed {
                break;
            }
        }

        if status.tasks.iter().all(|t| t.phase.is_terminal()) {
            let ok = status.tasks.iter().all(|t| t.phase == NodePhase::Succeeded);
            status.phase = if ok { WorkflowPhase::Succeeded } else { WorkflowPhase::Failed };
            if !ok {
                status.message = status
                    .tasks
                    .iter()
                    .find(|t| t.phase == NodePhase::Failed)
                    .map(|t| format!("task {} failed", t.name));
            }
            self.log.push(format!("workflow {namespace}/{name}: {}", status.phase));
        }

        if status != wf.status {
            let mut updated = wf;
            updated.status = status;
            store
                .put(Resource::Workflow(updated))
                .expect("stored workflow stays valid");
        }
    }

    fn advance_task(
        &mut self,
        store: &mut Store,
        wf: &WorkflowResource,
        task: &DagTask,
        index: usize,
        status: &mut WorkflowStatus,
        tick: u64,
    ) -> bool {
        match status.tasks[index].phase {
            NodePhase::Waiting => {
                let dep_phases: Vec<NodePhase> = task
                    .dependencies
                    .iter()
                    .filter_map(|d| status.tasks.iter().find(|t| t.name == *d))
                    .map(|t| t.phase)
                    .collect();
                if dep_phases.iter().any(|p| matches!(p, NodePhase::Failed | NodePhase::Skipped)) {
                    let entry = &mut status.tasks[index];
                    entry.phase = NodePhase::Skipped;
                    entry.message = Some("a dependency did not succeed".into());
                    return true;
                }
                if dep_phases.iter().all(|p| *p == NodePhase::Succeeded) {
                    self.start_task(store, wf, task, index, status, tick);
                    return true;
                }
                false
            }
            NodePhase::Running => {
                let entry = &mut status.tasks[index];
                let mut changed = false;
                for step in &mut entry.steps {
                    if step.phase.is_terminal() {
                        continue;
                    }
                    let pod_key = ObjectKey::new(Kind::Pod, wf.meta.namespace.clone(), step.pod.clone());
                    let pod = store.get(&pod_key).and_then(|o| o.body.as_pod());
                    let (phase, message) = step_phase(pod);
                    if phase != step.phase {
                        step.phase = phase;
                        changed = true;
                        if phase.is_terminal() {
                            step.finished_tick = Some(tick);
                            if let Some(message) = message {
                                entry.message.get_or_insert(format!("{}: {message}", step.name));
                            }
                        }
                    }
                }
                if entry.steps.iter().all(|s| s.phase.is_terminal()) {
                    entry.phase = if entry.steps.iter().all(|s| s.phase == NodePhase::Succeeded) {
                        NodePhase::Succeeded
                    } else {
                        NodePhase::Failed
                    };
                    changed = true;
                }
                changed
            }
            _ => false,
        }
    }

    fn start_task(
        &mut self,
        store: &mut Store,
        wf: &WorkflowResource,
        task: &DagTask,
        index: usize,
        status: &mut WorkflowStatus,
        tick: u64,
    ) {
        let entry = &mut status.tasks[index];
        let steps = expand_with_items(task);
        if steps.is_empty() {
            entry.phase = NodePhase::Succeeded;
            entry.message = Some("withItems is empty".into());
            return;
        }
        let Some(TemplateBody::Container(template)) = wf.spec.template(&task.template).map(|t| &t.body) else {
            entry.phase = NodePhase::Failed;
            entry.message = Some(format!("template {} is not a container template", task.template));
            return;
        };
        entry.phase = NodePhase::Running;
        for step in steps {
            let pod_name = step_pod_name(&wf.meta.name, &task.name, step.index);
            let created = substitute_parameters(template, &step.bindings)
                .map_err(|e| e.to_string())
                .and_then(|mut pod| {
                    pod.meta.namespace = wf.meta.namespace.clone();
                    pod.meta.name = pod_name.clone();
                    pod.meta.labels.insert(WORKFLOW_LABEL.into(), wf.meta.name.clone());
                    pod.meta
                        .annotations
                        .insert(NODE_NAME_ANNOTATION.into(), format!("{}.{}", wf.meta.name, step.name));
                    store.put(Resource::Pod(pod)).map_err(|e: StoreError| e.to_string())
                });
            let phase = match created {
                Ok(_) => {
                    self.log.push(format!(
                        "workflow {}/{}: step {} -> pod {pod_name}",
                        wf.meta.namespace, wf.meta.name, step.name
                    ));
                    NodePhase::Running
                }
                Err(message) => {
                    entry.message.get_or_insert(format!("{}: {message}", step.name));
                    NodePhase::Failed
                }
            };
            entry.steps.push(StepStatus {
                name: step.name,
                pod: pod_name,
                phase,
                submitted_tick: tick,
                finished_tick: (phase == NodePhase::Failed).then_some(tick),
            });
        }
        if entry.steps.iter().all(|s| s.phase == NodePhase::Failed) {
            entry.phase = NodePhase::Failed;
        }
    }
}
