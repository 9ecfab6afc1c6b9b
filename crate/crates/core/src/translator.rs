//! Pod to Slurm batch script translation.
//!
//! Every pod becomes one job. A parent container holds the pod IP and each
//! pod container runs as a child inside the parent's network namespace, so
//! a pod needs a single address however many containers it has.

use std::fmt::{self, Write as _};
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::manifest::{ContainerSpec, PodResource};
use crate::slurm::directives::{canonical_flag, parse_mem_mib, parse_time_minutes, split_directive};
use crate::slurm::Demand;

pub const FLAGS_ANNOTATION: &str = "slurm-job.hpk.io/flags";
pub const MPI_FLAGS_ANNOTATION: &str = "slurm-job.hpk.io/mpi-flags";

/// Image run as the parent container. It only sleeps.
pub const PARENT_IMAGE: &str = "docker://busybox:stable";

const MAX_JOB_NAME: usize = 128;
const MIB: u64 = 1 << 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TranslateError {
    #[error("pod has no allocated IP address")]
    UnallocatedIp,
    #[error("annotation {annotation}: {detail}")]
    BadAnnotationSyntax { annotation: String, detail: String },
    #[error("argument {0:?} cannot be quoted for the shell")]
    UnquotableArgument(String),
}

/// One `#SBATCH` header line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Directive {
    pub flag: String,
    pub value: Option<String>,
    /// Verbatim text for pass-through directives.
    raw: Option<String>,
}

impl Directive {
    pub fn new(flag: &str, value: impl fmt::Display) -> Self {
        Directive {
            flag: flag.to_string(),
            value: Some(value.to_string()),
            raw: None,
        }
    }

    fn pass_through(raw: String) -> Self {
        let (flag, value) = split_directive(&raw);
        Directive {
            flag,
            value,
            raw: Some(raw),
        }
    }

    pub fn is_pass_through(&self) -> bool {
        self.raw.is_some()
    }

    /// Long form of the flag, used to detect overrides.
    pub fn canonical(&self) -> &str {
        canonical_flag(&self.flag)
    }
}

impl fmt::Display for Directive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match (&self.raw, &self.value) {
            (Some(raw), _) => f.write_str(raw),
            (None, Some(value)) => write!(f, "{}={}", self.flag, value),
            (None, None) => f.write_str(&self.flag),
        }
    }
}

/// Tokens from the two pass-through annotations, order preserved.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PassThroughFlags {
    pub flags: Vec<String>,
    pub mpi_flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchScript {
    pub job_name: String,
    pub directives: Vec<Directive>,
    /// Comment lines emitted after the header, e.g. override warnings.
    pub notes: Vec<String>,
    pub prologue: Vec<String>,
    pub container_commands: Vec<String>,
    pub epilogue: Vec<String>,
}

impl BatchScript {
    pub fn render(&self) -> String {
        self.to_string()
    }

    /// Resources the header asks for, with later directives overriding
    /// earlier ones. Values that do not parse are ignored here; the
    /// simulator's header check reports them.
    pub fn demand(&self) -> Demand {
        let mut ntasks = 1u64;
        let mut cpus_per_task = 1u64;
        let mut mem_mib = 0u64;
        let mut time = None;
        for d in &self.directives {
            let Some(value) = d.value.as_deref() else { continue };
            match d.canonical() {
                "--ntasks" => ntasks = value.parse().unwrap_or(ntasks),
                "--cpus-per-task" => cpus_per_task = value.parse().unwrap_or(cpus_per_task),
                "--mem" => mem_mib = parse_mem_mib(value).unwrap_or(mem_mib),
                "--time" => time = parse_time_minutes(value).unwrap_or(time),
                _ => {}
            }
        }
        Demand {
            cpus: ntasks.saturating_mul(cpus_per_task),
            mem_mib,
            time_limit_ticks: time,
        }
    }
}

impl fmt::Display for BatchScript {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "#!/bin/bash")?;
        for d in &self.directives {
            writeln!(f, "#SBATCH {d}")?;
        }
        for note in &self.notes {
            writeln!(f, "# {note}")?;
        }
        writeln!(f)?;
        for line in self.prologue.iter().chain(&self.container_commands).chain(&self.epilogue) {
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

/// `<namespace>.<name>`, restricted to `[A-Za-z0-9._-]` and 128 characters.
pub fn job_name(pod: &PodResource) -> String {
    format!("{}.{}", pod.meta.namespace, pod.meta.name)
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '-'
            }
        })
        .take(MAX_JOB_NAME)
        .collect()
}

/// Sum of container requests, rounded up: whole cpus and MiB.
pub fn resources_to_directives(pod: &PodResource) -> Vec<Directive> {
    let containers = &pod.spec.containers;
    let millicores: u64 = containers
        .iter()
        .filter_map(|c| c.resources.requests.cpu.as_ref())
        .fold(0u64, |acc, q| acc.saturating_add(q.value()));
    let memory: Option<u64> = containers
        .iter()
        .filter_map(|c| c.resources.requests.memory.as_ref())
        .map(|q| q.value())
        .reduce(u64::saturating_add);

    let mut out = vec![
        Directive::new("--ntasks", 1),
        Directive::new("--cpus-per-task", millicores.div_ceil(1000).max(1)),
    ];
    if let Some(bytes) = memory {
        out.push(Directive::new("--mem", format!("{}M", bytes.div_ceil(MIB).max(1))));
    }
    if let Some(seconds) = pod.spec.active_deadline_seconds {
        out.push(Directive::new("--time", seconds.div_ceil(60).max(1)));
    }
    out
}

/// Splits on whitespace; double quotes group and are removed.
pub fn tokenize_flags(text: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    let mut in_token = false;
    let mut quoted = false;
    for c in text.chars() {
        match c {
            '"' => {
                quoted = !quoted;
                in_token = true;
            }
            c if c.is_whitespace() && !quoted => {
                if in_token {
                    tokens.push(std::mem::take(&mut current));
                    in_token = false;
                }
            }
            c => {
                current.push(c);
                in_token = true;
            }
        }
    }
    if quoted {
        return Err("unbalanced double quote".into());
    }
    if in_token {
        tokens.push(current);
    }
    Ok(tokens)
}

pub fn annotations_to_flags(pod: &PodResource) -> Result<PassThroughFlags, TranslateError> {
    let read = |annotation: &str| -> Result<Vec<String>, TranslateError> {
        match pod.meta.annotations.get(annotation) {
            None => Ok(Vec::new()),
            Some(text) => tokenize_flags(text).map_err(|detail| TranslateError::BadAnnotationSyntax {
                annotation: annotation.to_string(),
                detail,
            }),
        }
    };
    Ok(PassThroughFlags {
        flags: read(FLAGS_ANNOTATION)?,
        mpi_flags: read(MPI_FLAGS_ANNOTATION)?,
    })
}

// A flag token followed by bare values (`--ntasks 4`) forms one directive.
fn group_flag_tokens(tokens: &[String]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for token in tokens {
        match out.last_mut() {
            Some(last) if !token.starts_with('-') && last.starts_with('-') && !last.contains(['=', ' ']) => {
                last.push(' ');
                last.push_str(token);
            }
            _ => out.push(token.clone()),
        }
    }
    out
}

fn quote(arg: &str) -> Result<String, TranslateError> {
    shlex::try_quote(arg)
        .map(|q| q.into_owned())
        .map_err(|_| TranslateError::UnquotableArgument(arg.to_string()))
}

fn pod_dir(pod: &PodResource) -> String {
    let sanitize = |s: &str| s.replace(['/', ' '], "-");
    format!(".hpk/{}/{}", sanitize(&pod.meta.namespace), sanitize(&pod.meta.name))
}

fn child_command(
    pod: &PodResource,
    container: &ContainerSpec,
    mpi_flags: &[String],
) -> Result<String, TranslateError> {
    let mut line = String::from("nsenter --preserve-credentials --user --net --target \"$PARENT_PID\" -- ");
    if !mpi_flags.is_empty() {
        line.push_str("mpiexec ");
        for flag in mpi_flags {
            line.push_str(&quote(flag)?);
            line.push(' ');
        }
    }
    let verb = if container.command.is_empty() { "run" } else { "exec" };
    write!(line, "apptainer {verb} --fakeroot").unwrap();
    for mount in &container.volume_mounts {
        let volume = pod
            .spec
            .volumes
            .iter()
            .find(|v| v.name == mount.name)
            .expect("validated pods only mount declared volumes");
        write!(line, " --bind {}", quote(&format!("{}:{}", volume.host_path, mount.mount_path))?).unwrap();
    }
    write!(line, " {}", quote(&format!("docker://{}", container.image))?).unwrap();
    for arg in container.command.iter().chain(&container.args) {
        write!(line, " {}", quote(arg)?).unwrap();
    }
    write!(
        line,
        " > \"$POD_DIR/{}.log\" 2>&1 & CHILD_PIDS+=($!)",
        container.name.replace(['/', ' ', '"', '$', '`', '\\'], "-")
    )
    .unwrap();
    Ok(line)
}

/// Renders the batch script for a bound pod with an allocated IP. Output is a
/// pure function of the arguments.
pub fn render_script(pod: &PodResource, pod_ip: Option<Ipv4Addr>) -> Result<BatchScript, TranslateError> {
    let ip = pod_ip.ok_or(TranslateError::UnallocatedIp)?;
    let flags = annotations_to_flags(pod)?;
    let name = job_name(pod);
    let dir = pod_dir(pod);

    let mut directives = vec![Directive::new("--job-name", &name)];
    directives.extend(resources_to_directives(pod));
    directives.push(Directive::new("--output", format!("{dir}/job.out")));
    directives.push(Directive::new("--error", format!("{dir}/job.err")));
    let generated = directives.len();

    let mut notes = Vec::new();
    for raw in group_flag_tokens(&flags.flags) {
        let directive = Directive::pass_through(raw);
        if let Some(previous) = directives[..generated]
            .iter()
            .find(|d| d.canonical() == directive.canonical())
        {
            notes.push(format!("hpk: pass-through {directive} overrides {previous} (last wins)"));
        }
        directives.push(directive);
    }

    let quoted_dir = quote(&dir)?;
    let prologue = vec![
        format!("# pod {}/{} ip {ip}", pod.meta.namespace, pod.meta.name),
        format!("POD_DIR={quoted_dir}"),
        "mkdir -p \"$POD_DIR\"".to_string(),
        ": > \"$POD_DIR/exit-codes\"".to_string(),
        "# parent container: fakeroot, holds the pod network identity".to_string(),
        format!(
            "apptainer exec --fakeroot --net --network flannel --network-args \"IP={ip}\" {PARENT_IMAGE} sleep infinity &"
        ),
        "PARENT_PID=$!".to_string(),
        "CHILD_PIDS=()".to_string(),
    ];

    let container_commands = pod
        .spec
        .containers
        .iter()
        .map(|c| child_command(pod, c, &flags.mpi_flags))
        .collect::<Result<Vec<_>, _>>()?;

    let mut epilogue = vec!["STATUS=0".to_string()];
    for (i, c) in pod.spec.containers.iter().enumerate() {
        epilogue.push(format!(
            "wait \"${{CHILD_PIDS[{i}]}}\"; code=$?; echo {} \"$code\" >> \"$POD_DIR/exit-codes\"; [ \"$code\" -eq 0 ] || STATUS=$code",
            quote(&c.name)?
        ));
    }
    epilogue.push("kill \"$PARENT_PID\"".to_string());
    epilogue.push("exit \"$STATUS\"".to_string());

    Ok(BatchScript {
        job_name: name,
        directives,
        notes,
        prologue,
        container_commands,
        epilogue,
    })
}
