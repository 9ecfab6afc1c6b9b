//! Engine configuration: the simulated cluster and scripted pod behaviors.

use std::path::{Path, PathBuf};

use glob::Pattern;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::slurm::{Behavior, NodeSpec};

pub const DEFAULT_QUIESCENCE_LIMIT: u64 = 10_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("parsing {path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: serde_yaml::Error,
    },
    #[error("cluster config has no nodes")]
    EmptyCluster,
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Scripted outcome for pods whose name matches `pattern` (shell glob).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BehaviorRule {
    pub pattern: String,
    pub run_ticks: u64,
    #[serde(default)]
    pub exit_code: i32,
    /// Exit code per attempt; the last entry repeats. Overrides `exitCode`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exit_codes: Option<Vec<i32>>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
pub struct BehaviorTable {
    #[serde(default)]
    pub default: Behavior,
    #[serde(default)]
    pub rules: Vec<BehaviorRule>,
}

impl BehaviorTable {
    pub fn from_yaml(text: &str) -> Result<Self, serde_yaml::Error> {
        serde_yaml::from_str(text)
    }

    /// Behavior for attempt `attempt` (0-based) of pod `name`. First matching
    /// rule wins.
    pub fn lookup(&self, name: &str, attempt: u32) -> Behavior {
        for rule in &self.rules {
            let matches = Pattern::new(&rule.pattern).map(|p| p.matches(name)).unwrap_or(false);
            if !matches {
                continue;
            }
            let exit_code = match rule.exit_codes.as_deref() {
                Some([]) | None => rule.exit_code,
                Some(codes) => codes[(attempt as usize).min(codes.len() - 1)],
            };
            return Behavior::new(rule.run_ticks, exit_code);
        }
        self.default
    }

    fn check(&self) -> Result<(), ConfigError> {
        if self.default.run_ticks == 0 {
            return Err(ConfigError::Invalid("default runTicks must be at least 1".into()));
        }
        for rule in &self.rules {
            if rule.run_ticks == 0 {
                return Err(ConfigError::Invalid(format!("rule {:?}: runTicks must be at least 1", rule.pattern)));
            }
            Pattern::new(&rule.pattern)
                .map_err(|e| ConfigError::Invalid(format!("rule {:?}: {e}", rule.pattern)))?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    pub cluster_nodes: Vec<NodeSpec>,
    pub behaviors: BehaviorTable,
    pub quiescence_limit: u64,
}

impl EngineConfig {
    pub fn new(cluster_nodes: Vec<NodeSpec>) -> Self {
        EngineConfig {
            cluster_nodes,
            behaviors: BehaviorTable::default(),
            quiescence_limit: DEFAULT_QUIESCENCE_LIMIT,
        }
    }

    pub fn with_behaviors(mut self, behaviors: BehaviorTable) -> Self {
        self.behaviors = behaviors;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.cluster_nodes.is_empty() {
            return Err(ConfigError::EmptyCluster);
        }
        for node in &self.cluster_nodes {
            if node.cpus == 0 {
                return Err(ConfigError::Invalid(format!("node {} has no cpus", node.name)));
            }
        }
        let mut names: Vec<_> = self.cluster_nodes.iter().map(|n| &n.name).collect();
        names.sort();
        names.dedup();
        if names.len() != self.cluster_nodes.len() {
            return Err(ConfigError::Invalid("duplicate node names".into()));
        }
        self.behaviors.check()
    }

    /// Parses a config file. A `behaviors` string is a path relative to the
    /// config file; a mapping is an inline table.
    pub fn from_yaml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let file: ConfigFile = serde_yaml::from_str(text).map_err(|source| ConfigError::Parse {
            path: base_dir.to_path_buf(),
            source,
        })?;
        let behaviors = match file.behaviors {
            None => BehaviorTable::default(),
            Some(BehaviorsRef::Inline(table)) => table,
            Some(BehaviorsRef::Path(rel)) => {
                let path = base_dir.join(rel);
                let text = read(&path)?;
                BehaviorTable::from_yaml(&text).map_err(|source| ConfigError::Parse { path, source })?
            }
        };
        let config = EngineConfig {
            cluster_nodes: file.cluster_nodes,
            behaviors,
            quiescence_limit: file.quiescence_limit.unwrap_or(DEFAULT_QUIESCENCE_LIMIT),
        };
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = read(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_yaml(&text, base).map_err(|e| match e {
            ConfigError::Parse { source, .. } => ConfigError::Parse {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })
    }
}

fn read(path: &Path) -> Result<String, ConfigError> {
    std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum BehaviorsRef {
    Path(PathBuf),
    Inline(BehaviorTable),
}

#[derive(Deserialize)]
#[serde(rename_all = "camelCase", deny_unknown_fields)]
struct ConfigFile {
    #[serde(default)]
    cluster_nodes: Vec<NodeSpec>,
    #[serde(default)]
    behaviors: Option<BehaviorsRef>,
    #[serde(default)]
    quiescence_limit: Option<u64>,
}

/// Parses `NAME:CPUS:MEM_MIB`.
pub fn parse_node_flag(text: &str) -> Result<NodeSpec, ConfigError> {
    let bad = || ConfigError::Invalid(format!("node {text:?} is not NAME:CPUS:MEM_MIB"));
    let mut parts = text.split(':');
    let (Some(name), Some(cpus), Some(mem), None) = (parts.next(), parts.next(), parts.next(), parts.next()) else {
        return Err(bad());
    };
    if name.is_empty() {
        return Err(bad());
    }
    Ok(NodeSpec::new(
        name,
        cpus.parse().map_err(|_| bad())?,
        mem.parse().map_err(|_| bad())?,
    ))
}
