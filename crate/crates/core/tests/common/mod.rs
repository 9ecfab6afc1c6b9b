//! Shared fixtures and independent oracles for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use hpk_core::config::{BehaviorTable, EngineConfig};
use hpk_core::manifest::{parse_manifest, PodResource, Resource};
use hpk_core::slurm::NodeSpec;
use hpk_core::Engine;
use num_bigint::BigUint;

pub fn fixtures_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures")
}

pub fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

pub fn fixture(name: &str) -> String {
    std::fs::read_to_string(fixtures_dir().join(name)).unwrap_or_else(|e| panic!("fixture {name}: {e}"))
}

pub fn behaviors() -> BehaviorTable {
    BehaviorTable::from_yaml(&fixture("behaviors.yaml")).unwrap()
}

pub fn engine(nodes: &[(&str, u64, u64)], behaviors: BehaviorTable) -> Engine {
    let nodes = nodes.iter().map(|&(n, c, m)| NodeSpec::new(n, c, m)).collect();
    Engine::new(EngineConfig::new(nodes).with_behaviors(behaviors)).unwrap()
}

/// The two-node cluster from `fixtures/cluster.yaml`.
pub fn fixture_engine() -> Engine {
    let config = EngineConfig::from_file(&fixtures_dir().join("cluster.yaml")).unwrap();
    Engine::new(config).unwrap()
}

/// Pod fixtures used for golden scripts, in file-name order.
pub fn golden_pods() -> Vec<(String, PodResource)> {
    let mut paths: Vec<_> = std::fs::read_dir(fixtures_dir().join("pods"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "yaml"))
        .collect();
    paths.sort();
    paths
        .into_iter()
        .map(|path| {
            let text = std::fs::read_to_string(&path).unwrap();
            let docs = parse_manifest(&text).unwrap();
            let Ok(Resource::Pod(pod)) = docs[0].outcome.clone() else {
                panic!("{} is not a pod", path.display())
            };
            (path.file_stem().unwrap().to_string_lossy().into_owned(), pod)
        })
        .collect()
}

/// Script submitted for `pod` by a fresh engine with room for any fixture.
pub fn submitted_script(pod: &PodResource) -> String {
    let mut e = engine(&[("n0", 64, 1 << 20)], BehaviorTable::default());
    e.apply(Resource::Pod(pod.clone())).unwrap();
    e.export_script(&pod.meta.namespace, &pod.meta.name).unwrap()
}

/// Reference quantity grammar using arbitrary precision arithmetic.
/// Returns millicores for CPU and bytes for memory.
pub fn quantity_oracle(text: &str, cpu: bool) -> Option<u64> {
    let unsigned = text.strip_prefix('+').unwrap_or(text);
    let (negative, unsigned) = match unsigned.strip_prefix('-') {
        Some(rest) if !text.starts_with('+') => (true, rest),
        _ => (false, unsigned),
    };
    let split = unsigned
        .find(|c: char| !c.is_ascii_digit() && c != '.')
        .unwrap_or(unsigned.len());
    let (number, suffix) = unsigned.split_at(split);
    if number.matches('.').count() > 1 || number.replace('.', "").is_empty() {
        return None;
    }
    let (whole, frac) = number.split_once('.').unwrap_or((number, ""));
    let digits = format!("{whole}{frac}");
    let mantissa: BigUint = digits.parse().ok()?;

    let ten = BigUint::from(10u32);
    let two = BigUint::from(2u32);
    let mut num = BigUint::from(if cpu { 1000u32 } else { 1 });
    let mut den = ten.pow(frac.len() as u32);
    let decimal = ["", "k", "M", "G", "T", "P", "E"];
    let binary = ["", "Ki", "Mi", "Gi", "Ti", "Pi", "Ei"];
    if suffix == "m" {
        den *= BigUint::from(1000u32);
    } else if let Some(i) = decimal.iter().position(|s| *s == suffix) {
        num *= ten.pow(3 * i as u32);
    } else if let Some(i) = binary.iter().position(|s| *s == suffix) {
        num *= two.pow(10 * i as u32);
    } else {
        let exp = suffix.strip_prefix(['e', 'E'])?;
        let (sign, magnitude) = match exp.chars().next()? {
            '-' => (-1, &exp[1..]),
            '+' => (1, &exp[1..]),
            _ => (1, exp),
        };
        if magnitude.is_empty() || magnitude.len() > 2 || !magnitude.chars().all(|c| c.is_ascii_digit()) {
            return None;
        }
        let power = ten.pow(magnitude.parse::<u32>().unwrap());
        if sign < 0 {
            den *= power;
        } else {
            num *= power;
        }
    }
    let zero = BigUint::from(0u32);
    if negative && mantissa != zero {
        return None;
    }
    let product = mantissa * num;
    let mut value = &product / &den;
    if &value * &den != product {
        value += 1u32;
    }
    u64::try_from(value).ok()
}

/// Directive values the resource aggregation rules predict, recomputed from
/// the quantity texts with the reference grammar.
pub fn expected_resource_directives(pod: &PodResource) -> BTreeMap<&'static str, String> {
    let mut millicores = 0u64;
    let mut bytes = None::<u64>;
    for c in &pod.spec.containers {
        if let Some(q) = &c.resources.requests.cpu {
            millicores += quantity_oracle(q.original(), true).unwrap();
        }
        if let Some(q) = &c.resources.requests.memory {
            *bytes.get_or_insert(0) += quantity_oracle(q.original(), false).unwrap();
        }
    }
    let mut out = BTreeMap::new();
    out.insert("--ntasks", "1".to_string());
    let cpus = (millicores + 999) / 1000;
    out.insert("--cpus-per-task", cpus.max(1).to_string());
    if let Some(b) = bytes {
        let mib = (b + (1 << 20) - 1) >> 20;
        out.insert("--mem", format!("{}M", mib.max(1)));
    }
    if let Some(s) = pod.spec.active_deadline_seconds {
        out.insert("--time", ((s + 59) / 60).max(1).to_string());
    }
    out
}

/// `#SBATCH --flag=value` header lines as (flag, value) pairs.
pub fn header_pairs(script: &str) -> Vec<(String, String)> {
    script
        .lines()
        .filter_map(|l| l.strip_prefix("#SBATCH "))
        .map(|d| {
            let (flag, value) = d.split_once(['=', ' ']).unwrap_or((d, ""));
            (flag.to_string(), value.to_string())
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct OracleJob {
    pub submit_tick: u64,
    pub cpus: u64,
    pub mem: u64,
    pub run_ticks: u64,
}

/// Brute-force strict FCFS / first-fit start times. At every tick the usage
/// of each node is recomputed from scratch from the intervals of jobs that
/// already started; a job occupies its node during ticks [start, end).
pub fn fcfs_oracle(nodes: &[(u64, u64)], jobs: &[OracleJob]) -> Vec<u64> {
    let mut placed: Vec<Option<(u64, usize)>> = vec![None; jobs.len()];
    let horizon: u64 = jobs.iter().map(|j| j.submit_tick + j.run_ticks).sum::<u64>() + jobs.len() as u64 + 2;
    for t in 1..=horizon {
        loop {
            let Some(head) = (0..jobs.len()).find(|&i| placed[i].is_none() && jobs[i].submit_tick < t) else {
                break;
            };
            let fits = (0..nodes.len()).find(|&n| {
                let (mut cpu, mut mem) = (0, 0);
                for (i, p) in placed.iter().enumerate() {
                    if let Some((start, node)) = *p {
                        if node == n && start <= t && t < start + jobs[i].run_ticks {
                            cpu += jobs[i].cpus;
                            mem += jobs[i].mem;
                        }
                    }
                }
                cpu + jobs[head].cpus <= nodes[n].0 && mem + jobs[head].mem <= nodes[n].1
            });
            match fits {
                Some(n) => placed[head] = Some((t, n)),
                None => break,
            }
        }
    }
    placed.into_iter().map(|p| p.expect("feasible jobs start").0).collect()
}
