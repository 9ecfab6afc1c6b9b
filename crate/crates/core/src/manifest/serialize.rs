use serde_yaml::{Mapping, Value};

use super::*;

/// Renders resources as a multi-document YAML stream in Kubernetes form.
/// Field order is fixed, so output is stable for identical input.
pub fn serialize_manifest(resources: &[Resource]) -> String {
    let mut out = String::new();
    for (i, resource) in resources.iter().enumerate() {
        if i > 0 {
            out.push_str("---\n");
        }
        let text = serde_yaml::to_string(&to_manifest_value(resource)).expect("YAML values always serialize");
        out.push_str(&text);
    }
    out
}

#[derive(Default)]
struct Map(Mapping);

impl Map {
    fn put(&mut self, key: &str, value: impl Into<Value>) -> &mut Self {
        self.0.insert(Value::from(key), value.into());
        self
    }

    fn put_if(&mut self, cond: bool, key: &str, value: impl FnOnce() -> Value) -> &mut Self {
        if cond {
            self.put(key, value());
        }
        self
    }

    fn done(&mut self) -> Value {
        Value::Mapping(std::mem::take(&mut self.0))
    }
}

fn str_list(items: &[String]) -> Value {
    Value::Sequence(items.iter().map(|s| Value::from(s.as_str())).collect())
}

fn str_map(map: &BTreeMap<String, String>) -> Value {
    Value::Mapping(
        map.iter()
            .map(|(k, v)| (Value::from(k.as_str()), Value::from(v.as_str())))
            .collect(),
    )
}

fn meta_value(meta: &ObjectMeta) -> Value {
    Map::default()
        .put("name", meta.name.as_str())
        .put("namespace", meta.namespace.as_str())
        .put_if(!meta.labels.is_empty(), "labels", || str_map(&meta.labels))
        .put_if(!meta.annotations.is_empty(), "annotations", || str_map(&meta.annotations))
        .done()
}

fn resource_list(list: &ResourceList) -> Value {
    Map::default()
        .put_if(list.cpu.is_some(), "cpu", || Value::from(list.cpu.as_ref().unwrap().original()))
        .put_if(list.memory.is_some(), "memory", || {
            Value::from(list.memory.as_ref().unwrap().original())
        })
        .done()
}

fn container_value(c: &ContainerSpec) -> Value {
    let r = &c.resources;
    Map::default()
        .put("name", c.name.as_str())
        .put("image", c.image.as_str())
        .put_if(!c.command.is_empty(), "command", || str_list(&c.command))
        .put_if(!c.args.is_empty(), "args", || str_list(&c.args))
        .put_if(!r.requests.is_empty() || !r.limits.is_empty(), "resources", || {
            Map::default()
                .put_if(!r.requests.is_empty(), "requests", || resource_list(&r.requests))
                .put_if(!r.limits.is_empty(), "limits", || resource_list(&r.limits))
                .done()
        })
        .put_if(!c.volume_mounts.is_empty(), "volumeMounts", || {
            Value::Sequence(
                c.volume_mounts
                    .iter()
                    .map(|m| {
                        Map::default()
                            .put("name", m.name.as_str())
                            .put("mountPath", m.mount_path.as_str())
                            .done()
                    })
                    .collect(),
            )
        })
        .done()
}

fn volumes_value(volumes: &[HostPathVolume]) -> Value {
    Value::Sequence(
        volumes
            .iter()
            .map(|v| {
                Map::default()
                    .put("name", v.name.as_str())
                    .put("hostPath", Map::default().put("path", v.host_path.as_str()).done())
                    .done()
            })
            .collect(),
    )
}

fn pod_value(pod: &PodResource) -> Value {
    let spec = &pod.spec;
    let status = &pod.status;
    Map::default()
        .put("apiVersion", "v1")
        .put("kind", "Pod")
        .put("metadata", meta_value(&pod.meta))
        .put(
            "spec",
            Map::default()
                .put_if(spec.node_name.is_some(), "nodeName", || {
                    Value::from(spec.node_name.clone().unwrap())
                })
                .put("restartPolicy", spec.restart_policy.as_str())
                .put_if(spec.active_deadline_seconds.is_some(), "activeDeadlineSeconds", || {
                    Value::from(spec.active_deadline_seconds.unwrap())
                })
                .put_if(!spec.volumes.is_empty(), "volumes", || volumes_value(&spec.volumes))
                .put(
                    "containers",
                    Value::Sequence(spec.containers.iter().map(container_value).collect()),
                )
                .done(),
        )
        .put_if(*status != PodStatus::default(), "status", || {
            Map::default()
                .put("phase", status.phase.to_string())
                .put_if(status.reason.is_some(), "reason", || Value::from(status.reason.clone().unwrap()))
                .put_if(status.pod_ip.is_some(), "podIP", || {
                    Value::from(status.pod_ip.unwrap().to_string())
                })
                .put_if(status.restart_count > 0, "restartCount", || Value::from(status.restart_count))
                .put_if(status.job_id.is_some(), "jobId", || Value::from(status.job_id.unwrap()))
                .put_if(status.exit_code.is_some(), "exitCode", || Value::from(status.exit_code.unwrap()))
                .done()
        })
        .done()
}

fn service_value(svc: &ServiceResource) -> Value {
    let spec = &svc.spec;
    Map::default()
        .put("apiVersion", "v1")
        .put("kind", "Service")
        .put("metadata", meta_value(&svc.meta))
        .put(
            "spec",
            Map::default()
                .put("type", spec.service_type.as_str())
                .put_if(spec.cluster_ip.is_some(), "clusterIP", || {
                    Value::from(spec.cluster_ip.clone().unwrap())
                })
                .put_if(!spec.selector.is_empty(), "selector", || str_map(&spec.selector))
                .put_if(!spec.ports.is_empty(), "ports", || {
                    Value::Sequence(spec.ports.iter().map(port_value).collect())
                })
                .done(),
        )
        .done()
}

fn port_value(port: &ServicePort) -> Value {
    Map::default()
        .put_if(port.name.is_some(), "name", || Value::from(port.name.clone().unwrap()))
        .put("port", u64::from(port.port))
        .put_if(port.target_port.is_some(), "targetPort", || {
            let target = port.target_port.clone().unwrap();
            match target.parse::<u64>() {
                Ok(n) => Value::from(n),
                Err(_) => Value::from(target),
            }
        })
        .done()
}

fn template_value(t: &Template) -> Value {
    let mut map = Map::default();
    map.put("name", t.name.as_str());
    match &t.body {
        TemplateBody::Dag(tasks) => {
            map.put(
                "dag",
                Map::default()
                    .put("tasks", Value::Sequence(tasks.iter().map(task_value).collect()))
                    .done(),
            );
        }
        TemplateBody::Container(pt) => {
            map.put_if(!pt.labels.is_empty() || !pt.annotations.is_empty(), "metadata", || {
                Map::default()
                    .put_if(!pt.labels.is_empty(), "labels", || str_map(&pt.labels))
                    .put_if(!pt.annotations.is_empty(), "annotations", || str_map(&pt.annotations))
                    .done()
            })
            .put_if(!pt.inputs.is_empty(), "inputs", || {
                Map::default()
                    .put(
                        "parameters",
                        Value::Sequence(
                            pt.inputs
                                .iter()
                                .map(|p| Map::default().put("name", p.as_str()).done())
                                .collect(),
                        ),
                    )
                    .done()
            })
            .put("container", container_value(&pt.container))
            .put_if(!pt.volumes.is_empty(), "volumes", || volumes_value(&pt.volumes));
        }
    }
    map.done()
}

fn task_value(task: &DagTask) -> Value {
    Map::default()
        .put("name", task.name.as_str())
        .put("template", task.template.as_str())
        .put_if(!task.dependencies.is_empty(), "dependencies", || str_list(&task.dependencies))
        .put_if(!task.arguments.is_empty(), "arguments", || {
            Map::default()
                .put(
                    "parameters",
                    Value::Sequence(
                        task.arguments
                            .iter()
                            .map(|p| {
                                Map::default()
                                    .put("name", p.name.as_str())
                                    .put("value", p.value.as_str())
                                    .done()
                            })
                            .collect(),
                    ),
                )
                .done()
        })
        .put_if(task.with_items.is_some(), "withItems", || {
            str_list(task.with_items.as_deref().unwrap())
        })
        .done()
}

fn workflow_value(wf: &WorkflowResource) -> Value {
    Map::default()
        .put("apiVersion", "argoproj.io/v1alpha1")
        .put("kind", "Workflow")
        .put("metadata", meta_value(&wf.meta))
        .put(
            "spec",
            Map::default()
                .put("entrypoint", wf.spec.entrypoint.as_str())
                .put(
                    "templates",
                    Value::Sequence(wf.spec.templates.iter().map(template_value).collect()),
                )
                .done(),
        )
        .put_if(wf.status != WorkflowStatus::default(), "status", || {
            Map::default()
                .put("phase", wf.status.phase.to_string())
                .put_if(wf.status.message.is_some(), "message", || {
                    Value::from(wf.status.message.clone().unwrap())
                })
                .put_if(!wf.status.tasks.is_empty(), "tasks", || {
                    Value::Sequence(wf.status.tasks.iter().map(task_status_value).collect())
                })
                .done()
        })
        .done()
}

fn task_status_value(task: &TaskStatus) -> Value {
    let steps = task
        .steps
        .iter()
        .map(|step| {
            Map::default()
                .put("name", step.name.as_str())
                .put("pod", step.pod.as_str())
                .put("phase", step.phase.to_string())
                .put("submittedTick", step.submitted_tick)
                .put_if(step.finished_tick.is_some(), "finishedTick", || {
                    Value::from(step.finished_tick.unwrap())
                })
                .done()
        })
        .collect();
    Map::default()
        .put("name", task.name.as_str())
        .put("phase", task.phase.to_string())
        .put_if(task.message.is_some(), "message", || Value::from(task.message.clone().unwrap()))
        .put("steps", Value::Sequence(steps))
        .done()
}

fn node_value(node: &NodeResource) -> Value {
    let capacity = Map::default()
        .put("cpu", node.capacity_cpus.to_string())
        .put("memory", format!("{}Mi", node.capacity_mem_mib))
        .done();
    Map::default()
        .put("apiVersion", "v1")
        .put("kind", "Node")
        .put("metadata", Map::default().put("name", node.meta.name.as_str()).done())
        .put("status", Map::default().put("capacity", capacity).done())
        .done()
}

/// Kubernetes-shaped YAML value for one resource.
pub fn to_manifest_value(resource: &Resource) -> Value {
    match resource {
        Resource::Node(n) => node_value(n),
        Resource::Pod(p) => pod_value(p),
        Resource::Service(s) => service_value(s),
        Resource::Workflow(w) => workflow_value(w),
    }
}
