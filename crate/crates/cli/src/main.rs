//! `hpk`: drive the engine from the command line. Each invocation loads the
//! saved engine from the state directory, runs one command and saves it back.

mod render;
mod state;

use std::io::Read as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hpk_core::manifest::{Kind, DEFAULT_NAMESPACE};
use hpk_core::network::Resolution;
use hpk_core::store::{ObjectKey, StoredObject};
use hpk_core::Engine;

use state::{engine_exit_code, io_error, state_dir, CliError, StateDir};

#[derive(Debug, Parser)]
#[command(name = "hpk", version, about = "Kubernetes-style frontend over a simulated Slurm cluster")]
struct Cli {
    /// Directory holding engine.json, trace.txt and exported scripts.
    /// HPK_STATE_DIR takes precedence.
    #[arg(long, global = true, value_name = "DIR")]
    state_dir: Option<PathBuf>,
    /// Cluster config used when no state exists yet.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Extra cluster node, NAME:CPUS:MEM_MIB. Repeatable.
    #[arg(long = "node", global = true, value_name = "NAME:CPUS:MEM")]
    nodes: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Namespace {
    #[arg(short, long)]
    namespace: Option<String>,
}

impl Namespace {
    fn or_default(&self) -> &str {
        self.namespace.as_deref().unwrap_or(DEFAULT_NAMESPACE)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Apply every document of a manifest file ("-" reads stdin).
    Apply {
        #[arg(short = 'f', long = "filename")]
        file: PathBuf,
    },
    /// List objects of a kind, or show one.
    Get {
        kind: String,
        name: Option<String>,
        #[command(flatten)]
        ns: Namespace,
    },
    Describe {
        kind: String,
        name: String,
        #[command(flatten)]
        ns: Namespace,
    },
    Delete {
        kind: String,
        name: String,
        #[command(flatten)]
        ns: Namespace,
    },
    /// Advance the simulated clock and print the resulting trace lines.
    Simulate {
        #[arg(long, value_name = "TICK", conflicts_with = "to_quiescence", required_unless_present = "to_quiescence")]
        until: Option<u64>,
        #[arg(long)]
        to_quiescence: bool,
    },
    /// Print the addresses behind NAME.NAMESPACE, one per line.
    Resolve { target: String },
    /// Write the script submitted for a pod into the state directory.
    ExportScript {
        pod: String,
        #[command(flatten)]
        ns: Namespace,
    },
    /// Print the full job state trace.
    Trace,
    /// Print every stored object as JSON.
    Dump,
}

fn parse_kind(name: &str) -> Result<Kind, CliError> {
    Kind::from_cli_name(name).ok_or_else(|| CliError::User(format!("unknown kind {name:?}")))
}

fn key(kind: Kind, ns: &Namespace, name: &str) -> ObjectKey {
    let namespace = if kind == Kind::Node { "" } else { ns.or_default() };
    ObjectKey::new(kind, namespace, name)
}

fn lookup<'a>(engine: &'a Engine, key: &ObjectKey) -> Result<&'a StoredObject, CliError> {
    engine
        .store()
        .get(key)
        .ok_or_else(|| CliError::User(format!("{}/{} not found", key.kind, key.name)))
}

fn read_input(file: &Path) -> Result<String, CliError> {
    if file == Path::new("-") {
        let mut text = String::new();
        std::io::stdin().read_to_string(&mut text).map_err(io_error(file))?;
        return Ok(text);
    }
    std::fs::read_to_string(file).map_err(|e| CliError::User(format!("{}: {e}", file.display())))
}

fn print_events(events: &[hpk_core::slurm::SimEvent]) {
    for event in events {
        println!("{event}");
    }
}

fn run(cli: Cli) -> Result<u8, CliError> {
    let dir = StateDir::new(state_dir(cli.state_dir));
    let mut engine = dir.load(cli.config.as_deref(), &cli.nodes)?;
    let mut status = 0;
    match cli.command {
        Command::Apply { file } => {
            let text = read_input(&file)?;
            let reports = engine.apply_text(&text)?;
            for report in &reports {
                for warning in &report.warnings {
                    eprintln!("warning: document {}: {warning}", report.index);
                }
                match &report.outcome {
                    Ok(_) => println!("{}", report.verdict()),
                    Err(e) => {
                        eprintln!("{}", report.verdict());
                        status = status.max(engine_exit_code(e));
                    }
                }
            }
        }
        Command::Get { kind, name, ns } => {
            let kind = parse_kind(&kind)?;
            let objects: Vec<&StoredObject> = match &name {
                Some(name) => vec![lookup(&engine, &key(kind, &ns, name))?],
                None => engine
                    .store()
                    .list(kind)
                    .filter(|o| ns.namespace.as_ref().is_none_or(|n| *n == o.key.namespace))
                    .collect(),
            };
            print!("{}", render::get(&engine, kind, &objects));
            return Ok(0);
        }
        Command::Describe { kind, name, ns } => {
            let object = lookup(&engine, &key(parse_kind(&kind)?, &ns, &name))?;
            print!("{}", render::describe(&engine, object));
            return Ok(0);
        }
        Command::Delete { kind, name, ns } => {
            let kind = parse_kind(&kind)?;
            if kind == Kind::Node {
                return Err(CliError::User("the virtual node cannot be deleted".into()));
            }
            let key = key(kind, &ns, &name);
            lookup(&engine, &key)?;
            engine.delete(&key)?;
            println!("{kind}/{name} deleted");
        }
        Command::Simulate { until, to_quiescence } => {
            let result = match until {
                Some(tick) if !to_quiescence => Ok(engine.run_until(tick)),
                _ => engine.run_to_quiescence(),
            };
            match result {
                Ok(events) => {
                    print_events(&events);
                    eprintln!("tick {}: {} events", engine.tick(), events.len());
                }
                Err(e) => {
                    dir.save(&engine)?;
                    return Err(e.into());
                }
            }
        }
        Command::Resolve { target } => {
            let (name, namespace) = target.split_once('.').unwrap_or((&target, DEFAULT_NAMESPACE));
            return match engine.resolve(name, namespace) {
                Resolution::Found(records) => {
                    for address in records.addresses {
                        println!("{address}");
                    }
                    Ok(0)
                }
                Resolution::NxDomain => Err(CliError::User(format!("{name}.{namespace}: NXDOMAIN"))),
            };
        }
        Command::ExportScript { pod, ns } => {
            let namespace = ns.or_default();
            let script = engine.export_script(namespace, &pod)?;
            let path = dir.write_script(namespace, &pod, &script)?;
            println!("{}", path.display());
            return Ok(0);
        }
        Command::Trace => {
            print!("{}", engine.trace_text());
            return Ok(0);
        }
        Command::Dump => {
            print!("{}", engine.dump());
            return Ok(0);
        }
    }
    dir.save(&engine)?;
    Ok(status)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
