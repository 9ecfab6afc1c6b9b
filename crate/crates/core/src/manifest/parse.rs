use std::collections::BTreeMap;

use serde::Deserialize;
use serde_yaml::{Mapping, Value};

use super::*;
use crate::quantity::{parse_quantity, ResourceKind};

/// One document of a manifest stream. Per-document failures do not abort
/// the rest of the stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ParsedDocument {
    /// Zero-based position of the document in the stream.
    pub index: usize,
    pub outcome: Result<Resource, ManifestError>,
    /// Unknown fields that were ignored.
    pub warnings: Vec<String>,
}

/// Parses a multi-document YAML stream. Empty documents are skipped.
pub fn parse_manifest(text: &str) -> Result<Vec<ParsedDocument>, ManifestError> {
    let mut docs = Vec::new();
    for (index, de) in serde_yaml::Deserializer::from_str(text).enumerate() {
        let value = Value::deserialize(de).map_err(|e| ManifestError::MalformedYaml(e.to_string()))?;
        if value.is_null() {
            continue;
        }
        let mut warnings = Vec::new();
        let outcome = parse_document(&value, &mut warnings);
        docs.push(ParsedDocument {
            index,
            outcome,
            warnings,
        });
    }
    Ok(docs)
}

fn parse_document(value: &Value, warnings: &mut Vec<String>) -> Result<Resource, ManifestError> {
    let mut doc = Obj::root(value)?;
    let kind = doc.req_str("kind")?;
    doc.opt("apiVersion");
    let resource = match kind.as_str() {
        "Pod" => Resource::Pod(parse_pod(&mut doc, warnings)?),
        "Service" => Resource::Service(parse_service(&mut doc, warnings)?),
        "Workflow" => Resource::Workflow(parse_workflow(&mut doc, warnings)?),
        _ => return Err(ManifestError::UnsupportedKind(kind)),
    };
    doc.finish(warnings);
    Ok(resource)
}

/// Cursor over a YAML mapping that remembers which keys were consumed so
/// the rest can be reported as ignored.
struct Obj<'a> {
    map: &'a Mapping,
    path: String,
    seen: Vec<&'static str>,
}

impl<'a> Obj<'a> {
    fn root(value: &'a Value) -> Result<Self, ManifestError> {
        Obj::new(value, String::new())
    }

    fn new(value: &'a Value, path: String) -> Result<Self, ManifestError> {
        match value {
            Value::Mapping(map) => Ok(Obj {
                map,
                path,
                seen: Vec::new(),
            }),
            _ => Err(invalid(&path, "expected a mapping")),
        }
    }

    fn child_path(&self, key: &str) -> String {
        if self.path.is_empty() {
            key.to_string()
        } else {
            format!("{}.{key}", self.path)
        }
    }

    fn opt(&mut self, key: &'static str) -> Option<&'a Value> {
        self.seen.push(key);
        match self.map.get(key) {
            None | Some(Value::Null) => None,
            Some(v) => Some(v),
        }
    }

    fn req(&mut self, key: &'static str) -> Result<&'a Value, ManifestError> {
        let path = self.child_path(key);
        self.opt(key).ok_or(ManifestError::MissingField(path))
    }

    fn str(&mut self, key: &'static str) -> Result<Option<String>, ManifestError> {
        let path = self.child_path(key);
        self.opt(key).map(|v| scalar(v, &path)).transpose()
    }

    fn req_str(&mut self, key: &'static str) -> Result<String, ManifestError> {
        let path = self.child_path(key);
        scalar(self.req(key)?, &path)
    }

    fn obj(&mut self, key: &'static str) -> Result<Option<Obj<'a>>, ManifestError> {
        let path = self.child_path(key);
        self.opt(key).map(|v| Obj::new(v, path)).transpose()
    }

    fn list(&mut self, key: &'static str) -> Result<Vec<(String, &'a Value)>, ManifestError> {
        let path = self.child_path(key);
        match self.opt(key) {
            None => Ok(Vec::new()),
            Some(Value::Sequence(items)) => Ok(items
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("{path}[{i}]"), v))
                .collect()),
            Some(_) => Err(invalid(&path, "expected a list")),
        }
    }

    fn str_list(&mut self, key: &'static str) -> Result<Vec<String>, ManifestError> {
        self.list(key)?.into_iter().map(|(path, v)| scalar(v, &path)).collect()
    }

    fn str_map(&mut self, key: &'static str) -> Result<BTreeMap<String, String>, ManifestError> {
        let path = self.child_path(key);
        match self.opt(key) {
            None => Ok(BTreeMap::new()),
            Some(Value::Mapping(map)) => map
                .iter()
                .map(|(k, v)| {
                    let k = scalar(k, &path)?;
                    let v = scalar(v, &format!("{path}.{k}"))?;
                    Ok((k, v))
                })
                .collect(),
            Some(_) => Err(invalid(&path, "expected a mapping")),
        }
    }

    fn finish(self, warnings: &mut Vec<String>) {
        for key in self.map.keys() {
            let name = match key.as_str() {
                Some(name) => name,
                None => {
                    warnings.push(format!("ignored non-string key under {}", self.display_path()));
                    continue;
                }
            };
            if !self.seen.contains(&name) {
                warnings.push(format!("ignored unknown field {}", self.child_path(name)));
            }
        }
    }

    fn display_path(&self) -> &str {
        if self.path.is_empty() {
            "<root>"
        } else {
            &self.path
        }
    }
}

fn invalid(path: &str, reason: impl Into<String>) -> ManifestError {
    ManifestError::InvalidField {
        path: if path.is_empty() { "<root>".into() } else { path.to_string() },
        reason: reason.into(),
    }
}

fn scalar(value: &Value, path: &str) -> Result<String, ManifestError> {
    match value {
        Value::String(s) => Ok(s.clone()),
        Value::Number(n) => Ok(n.to_string()),
        Value::Bool(b) => Ok(b.to_string()),
        _ => Err(invalid(path, "expected a scalar")),
    }
}

fn parse_u64(value: &Value, path: &str) -> Result<u64, ManifestError> {
    match value {
        Value::Number(n) => n.as_u64().ok_or_else(|| invalid(path, "expected a non-negative integer")),
        Value::String(s) => s
            .parse()
            .map_err(|_| invalid(path, "expected a non-negative integer")),
        _ => Err(invalid(path, "expected a non-negative integer")),
    }
}

fn parse_meta(doc: &mut Obj<'_>, warnings: &mut Vec<String>) -> Result<ObjectMeta, ManifestError> {
    let mut meta = doc
        .obj("metadata")?
        .ok_or_else(|| ManifestError::MissingField("metadata.name".into()))?;
    let name = meta.req_str("name")?;
    let namespace = meta.str("namespace")?.unwrap_or_else(|| DEFAULT_NAMESPACE.to_string());
    let labels = meta.str_map("labels")?;
    let annotations = meta.str_map("annotations")?;
    meta.finish(warnings);
    Ok(ObjectMeta {
        namespace,
        name,
        labels,
        annotations,
    })
}

fn parse_resource_list(
    obj: Option<Obj<'_>>,
    warnings: &mut Vec<String>,
) -> Result<ResourceList, ManifestError> {
    let Some(mut obj) = obj else {
        return Ok(ResourceList::default());
    };
    let mut quantity = |key: &'static str, kind: ResourceKind| -> Result<Option<Quantity>, ManifestError> {
        let path = obj.child_path(key);
        obj.str(key)?
            .map(|text| parse_quantity(&text, kind).map_err(|e| invalid(&path, e.to_string())))
            .transpose()
    };
    let list = ResourceList {
        cpu: quantity("cpu", ResourceKind::Cpu)?,
        memory: quantity("memory", ResourceKind::Memory)?,
    };
    obj.finish(warnings);
    Ok(list)
}

fn parse_container(
    value: &Value,
    path: String,
    default_name: Option<&str>,
    warnings: &mut Vec<String>,
) -> Result<ContainerSpec, ManifestError> {
    let mut c = Obj::new(value, path)?;
    let name = match (c.str("name")?, default_name) {
        (Some(name), _) => name,
        (None, Some(default)) => default.to_string(),
        (None, None) => return Err(ManifestError::MissingField(c.child_path("name"))),
    };
    let image = c.req_str("image")?;
    let command = c.str_list("command")?;
    let args = c.str_list("args")?;
    let resources = match c.obj("resources")? {
        Some(mut r) => {
            let requests = parse_resource_list(r.obj("requests")?, warnings)?;
            let limits = parse_resource_list(r.obj("limits")?, warnings)?;
            r.finish(warnings);
            ResourceRequirements { requests, limits }
        }
        None => ResourceRequirements::default(),
    };
    let mut volume_mounts = Vec::new();
    for (path, v) in c.list("volumeMounts")? {
        let mut m = Obj::new(v, path)?;
        volume_mounts.push(VolumeMount {
            name: m.req_str("name")?,
            mount_path: m.req_str("mountPath")?,
        });
        m.finish(warnings);
    }
    c.finish(warnings);
    Ok(ContainerSpec {
        name,
        image,
        command,
        args,
        resources,
        volume_mounts,
    })
}

fn parse_volumes(obj: &mut Obj<'_>, warnings: &mut Vec<String>) -> Result<Vec<HostPathVolume>, ManifestError> {
    let mut volumes = Vec::new();
    for (path, v) in obj.list("volumes")? {
        let mut vol = Obj::new(v, path)?;
        let name = vol.req_str("name")?;
        let mut host = vol
            .obj("hostPath")?
            .ok_or_else(|| ManifestError::MissingField(vol.child_path("hostPath.path")))?;
        let host_path = host.req_str("path")?;
        host.opt("type");
        host.finish(warnings);
        vol.finish(warnings);
        volumes.push(HostPathVolume { name, host_path });
    }
    Ok(volumes)
}

fn parse_pod(doc: &mut Obj<'_>, warnings: &mut Vec<String>) -> Result<PodResource, ManifestError> {
    let meta = parse_meta(doc, warnings)?;
    doc.opt("status");
    let mut spec = doc
        .obj("spec")?
        .ok_or_else(|| ManifestError::MissingField("spec.containers".into()))?;
    let containers = spec
        .list("containers")?
        .into_iter()
        .map(|(path, v)| parse_container(v, path, None, warnings))
        .collect::<Result<Vec<_>, _>>()?;
    if containers.is_empty() {
        return Err(ManifestError::MissingField("spec.containers".into()));
    }
    let restart_policy = match spec.str("restartPolicy")?.as_deref() {
        None | Some("Never") => RestartPolicy::Never,
        Some("OnFailure") => RestartPolicy::OnFailure,
        Some(other) => {
            return Err(invalid(
                "spec.restartPolicy",
                format!("unsupported restart policy {other:?} (expected Never or OnFailure)"),
            ))
        }
    };
    let node_name = spec.str("nodeName")?.filter(|n| !n.is_empty());
    let volumes = parse_volumes(&mut spec, warnings)?;
    let active_deadline_seconds = spec
        .opt("activeDeadlineSeconds")
        .map(|v| parse_u64(v, "spec.activeDeadlineSeconds"))
        .transpose()?;
    spec.finish(warnings);
    Ok(PodResource {
        meta,
        spec: PodSpec {
            containers,
            restart_policy,
            node_name,
            volumes,
            active_deadline_seconds,
        },
        status: PodStatus::default(),
    })
}

fn parse_service(doc: &mut Obj<'_>, warnings: &mut Vec<String>) -> Result<ServiceResource, ManifestError> {
    let meta = parse_meta(doc, warnings)?;
    doc.opt("status");
    let mut service = ServiceResource {
        meta,
        spec: ServiceSpec::default(),
    };
    let Some(mut spec) = doc.obj("spec")? else {
        return Ok(service);
    };
    service.spec.selector = spec.str_map("selector")?;
    for (path, v) in spec.list("ports")? {
        let mut p = Obj::new(v, path.clone())?;
        let port_path = p.child_path("port");
        let port = u16::try_from(parse_u64(p.req("port")?, &port_path)?)
            .map_err(|_| invalid(&port_path, "port out of range"))?;
        let name = p.str("name")?;
        let target_port = p.str("targetPort")?;
        p.opt("protocol");
        p.finish(warnings);
        service.spec.ports.push(ServicePort {
            name,
            port,
            target_port,
        });
    }
    service.spec.cluster_ip = spec.str("clusterIP")?;
    service.spec.service_type = match spec.str("type")?.as_deref() {
        None | Some("ClusterIP") => ServiceType::ClusterIP,
        Some("NodePort") => ServiceType::NodePort,
        Some("LoadBalancer") => ServiceType::LoadBalancer,
        Some(other) => return Err(invalid("spec.type", format!("unsupported service type {other:?}"))),
    };
    spec.finish(warnings);
    Ok(service)
}

fn parse_workflow(doc: &mut Obj<'_>, warnings: &mut Vec<String>) -> Result<WorkflowResource, ManifestError> {
    let meta = parse_meta(doc, warnings)?;
    doc.opt("status");
    let mut spec = doc
        .obj("spec")?
        .ok_or_else(|| ManifestError::MissingField("spec.entrypoint".into()))?;
    let entrypoint = spec.req_str("entrypoint")?;
    let mut templates = Vec::new();
    for (path, v) in spec.list("templates")? {
        templates.push(parse_template(v, path, warnings)?);
    }
    spec.finish(warnings);
    Ok(WorkflowResource {
        meta,
        spec: WorkflowSpec { entrypoint, templates },
        status: WorkflowStatus::default(),
    })
}

fn parse_template(value: &Value, path: String, warnings: &mut Vec<String>) -> Result<Template, ManifestError> {
    let mut t = Obj::new(value, path)?;
    let name = t.req_str("name")?;
    let dag = t.obj("dag")?;
    let container = t.opt("container");
    let body = match (dag, container) {
        (Some(mut dag), None) => {
            let mut tasks = Vec::new();
            for (path, v) in dag.list("tasks")? {
                tasks.push(parse_task(v, path, warnings)?);
            }
            dag.finish(warnings);
            TemplateBody::Dag(tasks)
        }
        (None, Some(container)) => {
            let container_path = t.child_path("container");
            let container = parse_container(container, container_path, Some("main"), warnings)?;
            let (labels, annotations) = match t.obj("metadata")? {
                Some(mut m) => {
                    let labels = m.str_map("labels")?;
                    let annotations = m.str_map("annotations")?;
                    m.finish(warnings);
                    (labels, annotations)
                }
                None => Default::default(),
            };
            let mut inputs = Vec::new();
            if let Some(mut i) = t.obj("inputs")? {
                for (path, v) in i.list("parameters")? {
                    let mut p = Obj::new(v, path)?;
                    inputs.push(p.req_str("name")?);
                    p.finish(warnings);
                }
                i.finish(warnings);
            }
            let volumes = parse_volumes(&mut t, warnings)?;
            TemplateBody::Container(PodTemplate {
                labels,
                annotations,
                inputs,
                container,
                volumes,
            })
        }
        (Some(_), Some(_)) => return Err(invalid(&t.path, "template has both dag and container")),
        (None, None) => return Err(invalid(&t.path, "template needs a dag or a container")),
    };
    t.finish(warnings);
    Ok(Template { name, body })
}

fn parse_task(value: &Value, path: String, warnings: &mut Vec<String>) -> Result<DagTask, ManifestError> {
    let mut t = Obj::new(value, path)?;
    let name = t.req_str("name")?;
    let template = t.req_str("template")?;
    let dependencies = t.str_list("dependencies")?;
    let mut arguments = Vec::new();
    if let Some(mut args) = t.obj("arguments")? {
        for (path, v) in args.list("parameters")? {
            let mut p = Obj::new(v, path)?;
            arguments.push(Parameter {
                name: p.req_str("name")?,
                value: p.req_str("value")?,
            });
            p.finish(warnings);
        }
        args.finish(warnings);
    }
    let with_items = match t.opt("withItems") {
        None => None,
        Some(_) => Some(t.str_list("withItems")?),
    };
    t.finish(warnings);
    Ok(DagTask {
        name,
        template,
        dependencies,
        arguments,
        with_items,
    })
}
