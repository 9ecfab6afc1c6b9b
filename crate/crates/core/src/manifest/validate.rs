use std::collections::BTreeSet;
use std::fmt;

use super::*;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: String,
    pub message: String,
}

impl Violation {
    fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Violation {
            path: path.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

fn check_meta(meta: &ObjectMeta, out: &mut Vec<Violation>) {
    if meta.name.is_empty() {
        out.push(Violation::new("metadata.name", "must not be empty"));
    }
    if meta.namespace.is_empty() {
        out.push(Violation::new("metadata.namespace", "must not be empty"));
    }
}

/// Checks pod-level invariants and returns every violation found.
pub fn validate_pod(pod: &PodResource) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    check_meta(&pod.meta, &mut out);
    let spec = &pod.spec;
    if spec.containers.is_empty() {
        out.push(Violation::new("spec.containers", "a pod needs at least one container"));
    }

    let mut volume_names = BTreeSet::new();
    for (i, vol) in spec.volumes.iter().enumerate() {
        if !volume_names.insert(vol.name.as_str()) {
            out.push(Violation::new(format!("spec.volumes[{i}].name"), format!("duplicate volume {:?}", vol.name)));
        }
        if !vol.host_path.starts_with('/') {
            out.push(Violation::new(
                format!("spec.volumes[{i}].hostPath.path"),
                format!("host path {:?} is not absolute", vol.host_path),
            ));
        }
    }

    let mut container_names = BTreeSet::new();
    for (i, c) in spec.containers.iter().enumerate() {
        let path = format!("spec.containers[{i}]");
        if c.name.is_empty() {
            out.push(Violation::new(format!("{path}.name"), "must not be empty"));
        } else if !container_names.insert(c.name.as_str()) {
            out.push(Violation::new(format!("{path}.name"), format!("duplicate container name {:?}", c.name)));
        }
        if c.image.is_empty() {
            out.push(Violation::new(format!("{path}.image"), "must not be empty"));
        }
        let (req, lim) = (&c.resources.requests, &c.resources.limits);
        for (name, request, limit) in [("cpu", &req.cpu, &lim.cpu), ("memory", &req.memory, &lim.memory)] {
            if let (Some(request), Some(limit)) = (request, limit) {
                if request.value() > limit.value() {
                    out.push(Violation::new(
                        format!("{path}.resources.requests.{name}"),
                        format!("request {request} exceeds limit {limit}"),
                    ));
                }
            }
        }
        for (j, mount) in c.volume_mounts.iter().enumerate() {
            if !volume_names.contains(mount.name.as_str()) {
                out.push(Violation::new(
                    format!("{path}.volumeMounts[{j}].name"),
                    format!("volume {:?} is not declared", mount.name),
                ));
            }
        }
    }

    if spec.active_deadline_seconds == Some(0) {
        out.push(Violation::new("spec.activeDeadlineSeconds", "must be positive"));
    }

    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

pub fn validate_service(svc: &ServiceResource) -> Result<(), Vec<Violation>> {
    let mut out = Vec::new();
    check_meta(&svc.meta, &mut out);
    for (i, port) in svc.spec.ports.iter().enumerate() {
        if port.port == 0 {
            out.push(Violation::new(format!("spec.ports[{i}].port"), "must be positive"));
        }
    }
    if out.is_empty() {
        Ok(())
    } else {
        Err(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn container(name: &str) -> ContainerSpec {
        ContainerSpec {
            name: name.into(),
            image: "busybox".into(),
            ..Default::default()
        }
    }

    fn pod(containers: Vec<ContainerSpec>) -> PodResource {
        PodResource {
            meta: ObjectMeta::new("default", "p"),
            spec: PodSpec {
                containers,
                ..Default::default()
            },
            status: Default::default(),
        }
    }

    #[test]
    fn valid_single_container() {
        assert_eq!(validate_pod(&pod(vec![container("main")])), Ok(()));
    }

    #[test]
    fn duplicate_container_names() {
        let errs = validate_pod(&pod(vec![container("a"), container("a")])).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert_eq!(errs[0].path, "spec.containers[1].name");
    }

    #[test]
    fn undeclared_mount() {
        let mut c = container("a");
        c.volume_mounts.push(VolumeMount {
            name: "scratch".into(),
            mount_path: "/s".into(),
        });
        let errs = validate_pod(&pod(vec![c])).unwrap_err();
        assert_eq!(errs.len(), 1);
        assert!(errs[0].message.contains("\"scratch\""), "{}", errs[0]);
    }

    #[test]
    fn accumulates_violations() {
        let mut c = container("");
        c.image.clear();
        c.resources.requests.cpu = Some(Quantity::parse("2", crate::quantity::ResourceKind::Cpu).unwrap());
        c.resources.limits.cpu = Some(Quantity::parse("1", crate::quantity::ResourceKind::Cpu).unwrap());
        let mut p = pod(vec![c]);
        p.spec.volumes.push(HostPathVolume {
            name: "v".into(),
            host_path: "relative/dir".into(),
        });
        p.spec.active_deadline_seconds = Some(0);
        let errs = validate_pod(&p).unwrap_err();
        assert_eq!(errs.len(), 5, "{errs:?}");
    }

    #[test]
    fn empty_pod() {
        assert_eq!(validate_pod(&pod(vec![])).unwrap_err().len(), 1);
    }
}
