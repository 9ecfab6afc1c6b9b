//! Tables for `get` and detail views for `describe`.

use std::fmt::Write as _;

use hpk_core::manifest::{Kind, PodResource, Resource, ServiceResource, WorkflowResource};
use hpk_core::network::Resolution;
use hpk_core::store::StoredObject;
use hpk_core::Engine;

const NONE: &str = "<none>";

/// Left-aligned columns separated by three spaces.
pub fn table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    let header: Vec<String> = header.iter().map(|h| h.to_string()).collect();
    for row in std::iter::once(&header).chain(rows) {
        let mut line = String::new();
        for (i, cell) in row.iter().enumerate() {
            if i > 0 {
                line.push_str("   ");
            }
            let _ = write!(line, "{cell:<width$}", width = widths[i]);
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

fn or_none<T: ToString>(value: Option<T>) -> String {
    value.map(|v| v.to_string()).unwrap_or_else(|| NONE.to_string())
}

fn pairs(map: &std::collections::BTreeMap<String, String>) -> String {
    if map.is_empty() {
        return NONE.into();
    }
    map.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(",")
}

fn ports(svc: &ServiceResource) -> String {
    if svc.spec.ports.is_empty() {
        return NONE.into();
    }
    svc.spec.ports.iter().map(|p| p.port.to_string()).collect::<Vec<_>>().join(",")
}

fn steps_done(wf: &WorkflowResource) -> String {
    let steps = wf.status.tasks.iter().flat_map(|t| &t.steps);
    let (done, total) = steps.fold((0, 0), |(d, t), s| (d + s.phase.is_terminal() as usize, t + 1));
    format!("{done}/{total}")
}

fn row(engine: &Engine, object: &StoredObject) -> Vec<String> {
    match &object.body {
        Resource::Node(n) => vec![
            n.meta.name.clone(),
            "Ready".into(),
            n.capacity_cpus.to_string(),
            n.capacity_mem_mib.to_string(),
            engine.config().cluster_nodes.len().to_string(),
        ],
        Resource::Pod(p) => vec![
            p.meta.namespace.clone(),
            p.meta.name.clone(),
            p.status.phase.to_string(),
            or_none(p.status.pod_ip),
            or_none(p.status.job_id),
            p.status.restart_count.to_string(),
        ],
        Resource::Service(s) => vec![
            s.meta.namespace.clone(),
            s.meta.name.clone(),
            or_none(s.spec.cluster_ip.as_deref()),
            ports(s),
            pairs(&s.spec.selector),
        ],
        Resource::Workflow(w) => vec![
            w.meta.namespace.clone(),
            w.meta.name.clone(),
            w.status.phase.to_string(),
            steps_done(w),
        ],
    }
}

fn header(kind: Kind) -> &'static [&'static str] {
    match kind {
        Kind::Node => &["NAME", "STATUS", "CPUS", "MEMORY(MiB)", "BACKING-NODES"],
        Kind::Pod => &["NAMESPACE", "NAME", "PHASE", "IP", "JOB", "RESTARTS"],
        Kind::Service => &["NAMESPACE", "NAME", "CLUSTER-IP", "PORTS", "SELECTOR"],
        Kind::Workflow => &["NAMESPACE", "NAME", "PHASE", "STEPS"],
    }
}

/// Table of `objects`, which the store yields in key order.
pub fn get(engine: &Engine, kind: Kind, objects: &[&StoredObject]) -> String {
    let rows: Vec<_> = objects.iter().map(|o| row(engine, o)).collect();
    table(header(kind), &rows)
}

struct Detail(String);

impl Detail {
    fn field(&mut self, name: &str, value: impl ToString) {
        let _ = writeln!(self.0, "{:<16}{}", format!("{name}:"), value.to_string());
    }

    fn section(&mut self, name: &str, body: &str) {
        let _ = writeln!(self.0, "{name}:");
        for line in body.lines() {
            let _ = writeln!(self.0, "  {line}");
        }
    }
}

pub fn describe(engine: &Engine, object: &StoredObject) -> String {
    let mut d = Detail(String::new());
    match &object.body {
        Resource::Node(n) => {
            d.field("Name", &n.meta.name);
            d.field("CPUs", n.capacity_cpus);
            d.field("Memory(MiB)", n.capacity_mem_mib);
            let rows: Vec<_> = engine
                .sim()
                .nodes()
                .iter()
                .map(|node| {
                    let (cpu, mem) = node.used();
                    vec![
                        node.spec.name.clone(),
                        format!("{cpu}/{}", node.spec.cpus),
                        format!("{mem}/{}", node.spec.mem_mib),
                        node.allocations.len().to_string(),
                    ]
                })
                .collect();
            d.section("Backing nodes", &table(&["NAME", "CPUS", "MEMORY(MiB)", "JOBS"], &rows));
        }
        Resource::Pod(p) => describe_pod(engine, p, &mut d),
        Resource::Service(s) => {
            d.field("Name", &s.meta.name);
            d.field("Namespace", &s.meta.namespace);
            d.field("Type", s.spec.service_type.as_str());
            d.field("ClusterIP", or_none(s.spec.cluster_ip.as_deref()));
            d.field("Selector", pairs(&s.spec.selector));
            d.field("Ports", ports(s));
            match engine.resolve(&s.meta.name, &s.meta.namespace) {
                Resolution::Found(records) => {
                    d.field("DNS", &records.fqdn);
                    let addresses: Vec<_> = records.addresses.iter().map(|a| a.to_string()).collect();
                    d.field("Endpoints", if addresses.is_empty() { NONE.into() } else { addresses.join(",") });
                }
                Resolution::NxDomain => d.field("Endpoints", NONE),
            }
        }
        Resource::Workflow(w) => {
            d.field("Name", &w.meta.name);
            d.field("Namespace", &w.meta.namespace);
            d.field("Entrypoint", &w.spec.entrypoint);
            d.field("Phase", w.status.phase);
            if let Some(m) = &w.status.message {
                d.field("Message", m);
            }
            let rows: Vec<_> = w
                .status
                .tasks
                .iter()
                .flat_map(|t| {
                    let task = std::iter::once(vec![
                        t.name.clone(),
                        String::new(),
                        t.phase.to_string(),
                        t.message.clone().unwrap_or_default(),
                    ]);
                    let steps = t.steps.iter().map(|s| {
                        let ticks = match s.finished_tick {
                            Some(end) => format!("{}..{end}", s.submitted_tick),
                            None => format!("{}..", s.submitted_tick),
                        };
                        vec![format!("  {}", s.name), s.pod.clone(), s.phase.to_string(), ticks]
                    });
                    task.chain(steps)
                })
                .collect();
            d.section("Steps", &table(&["STEP", "POD", "PHASE", "DETAIL"], &rows));
        }
    }
    d.0
}

fn describe_pod(engine: &Engine, p: &PodResource, d: &mut Detail) {
    d.field("Name", &p.meta.name);
    d.field("Namespace", &p.meta.namespace);
    d.field("Node", or_none(p.spec.node_name.as_deref()));
    d.field("Phase", p.status.phase);
    if let Some(reason) = &p.status.reason {
        d.field("Reason", reason);
    }
    d.field("PodIP", or_none(p.status.pod_ip));
    d.field("JobId", or_none(p.status.job_id));
    d.field("RestartCount", p.status.restart_count);
    d.field("RestartPolicy", p.spec.restart_policy.as_str());
    if let Some(code) = p.status.exit_code {
        d.field("ExitCode", code);
    }
    if !p.meta.labels.is_empty() {
        d.field("Labels", pairs(&p.meta.labels));
    }
    let containers: Vec<_> = p
        .spec
        .containers
        .iter()
        .map(|c| vec![c.name.clone(), c.image.clone()])
        .collect();
    d.section("Containers", &table(&["NAME", "IMAGE"], &containers));
    if let Some(job) = p.status.job_id.and_then(|id| engine.sim().query(id).ok()) {
        let mut job_detail = Detail(String::new());
        job_detail.field("State", job.state);
        job_detail.field("Node", or_none(job.node.as_deref()));
        job_detail.field("Submitted", job.submit_tick);
        job_detail.field("Started", or_none(job.start_tick));
        job_detail.field("Ended", or_none(job.end_tick));
        job_detail.field("CPUs", job.demand.cpus);
        job_detail.field("Memory(MiB)", job.demand.mem_mib);
        d.section("Job", &job_detail.0);
    }
}
