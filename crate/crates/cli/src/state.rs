//! Loading and saving the engine between invocations.

use std::path::{Path, PathBuf};

use hpk_core::config::{parse_node_flag, ConfigError, EngineConfig};
use hpk_core::store::StoreError;
use hpk_core::{Engine, EngineError};
use thiserror::Error;

pub const STATE_DIR_ENV: &str = "HPK_STATE_DIR";
pub const DEFAULT_STATE_DIR: &str = ".hpk-state";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    User(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 for user and validation errors, 2 for engine failures.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) | CliError::Config(_) => 1,
            CliError::Engine(e) => engine_exit_code(e),
            CliError::Io { .. } => 2,
        }
    }
}

pub fn engine_exit_code(e: &EngineError) -> u8 {
    match e {
        EngineError::Store(StoreError::VersionCompacted(_))
        | EngineError::Sim(_)
        | EngineError::Network(_)
        | EngineError::Kubelet(_)
        | EngineError::NonQuiescent(_)
        | EngineError::State(_) => 2,
        EngineError::Store(_)
        | EngineError::Manifest(_)
        | EngineError::Immutable(_)
        | EngineError::ForeignNode(..)
        | EngineError::NotSubmitted(_) => 1,
    }
}

pub fn io_error(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// The environment variable wins over the flag, the flag over the default.
pub fn state_dir(flag: Option<PathBuf>) -> PathBuf {
    match std::env::var_os(STATE_DIR_ENV).filter(|v| !v.is_empty()) {
        Some(dir) => PathBuf::from(dir),
        None => flag.unwrap_or_else(|| PathBuf::from(DEFAULT_STATE_DIR)),
    }
}

pub struct StateDir {
    root: PathBuf,
}

impl StateDir {
    pub fn new(root: PathBuf) -> Self {
        StateDir { root }
    }

    pub fn engine_file(&self) -> PathBuf {
        self.root.join("engine.json")
    }

    pub fn trace_file(&self) -> PathBuf {
        self.root.join("trace.txt")
    }

    pub fn script_file(&self, namespace: &str, name: &str) -> PathBuf {
        self.root.join("scripts").join(format!("{namespace}.{name}.sh"))
    }

    /// Loads saved state, or builds a fresh engine from `--config` and
    /// `--node`. Cluster flags are ignored once state exists.
    pub fn load(&self, config: Option<&Path>, nodes: &[String]) -> Result<Engine, CliError> {
        let path = self.engine_file();
        if path.exists() {
            if config.is_some() || !nodes.is_empty() {
                eprintln!("warning: {} exists; cluster flags ignored", path.display());
            }
            let text = std::fs::read_to_string(&path).map_err(io_error(&path))?;
            return Ok(Engine::from_json(&text)?);
        }
        let mut cfg = match config {
            Some(file) => EngineConfig::from_file(file)?,
            None if nodes.is_empty() => {
                return Err(CliError::User(format!(
                    "no engine state in {}; pass --config FILE or --node NAME:CPUS:MEM",
                    self.root.display()
                )))
            }
            None => EngineConfig::new(Vec::new()),
        };
        for flag in nodes {
            cfg.cluster_nodes.push(parse_node_flag(flag)?);
        }
        cfg.validate()?;
        Ok(Engine::new(cfg)?)
    }

    pub fn save(&self, engine: &Engine) -> Result<(), CliError> {
        std::fs::create_dir_all(&self.root).map_err(io_error(&self.root))?;
        let path = self.engine_file();
        engine.save(&path).map_err(io_error(&path))?;
        let trace = self.trace_file();
        std::fs::write(&trace, engine.trace_text()).map_err(io_error(&trace))
    }

    pub fn write_script(&self, namespace: &str, name: &str, script: &str) -> Result<PathBuf, CliError> {
        let path = self.script_file(namespace, name);
        let dir = path.parent().expect("script path has a parent");
        std::fs::create_dir_all(dir).map_err(io_error(dir))?;
        std::fs::write(&path, script).map_err(io_error(&path))?;
        Ok(path)
    }
}
