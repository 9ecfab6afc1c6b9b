//! Desk-scale engine that runs Kubernetes-style workloads on a simulated
//! Slurm cluster through a single virtual node.

pub mod config;
pub mod engine;
pub mod kubelet;
pub mod manifest;
pub mod network;
pub mod quantity;
pub mod slurm;
pub mod store;
pub mod translator;
pub mod workflow;

pub use config::EngineConfig;
pub use engine::{Engine, EngineError};
