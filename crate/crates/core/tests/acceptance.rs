//! Acceptance suite. Prints one pass/fail line per criterion and exits
//! nonzero if any criterion fails.

mod common;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::time::{Duration, Instant};

use hpk_core::config::{BehaviorRule, BehaviorTable};
use hpk_core::kubelet::sync_status;
use hpk_core::manifest::{
    ContainerSpec, Kind, ObjectMeta, PodPhase, PodResource, PodSpec, Resource, ResourceList, RestartPolicy,
    ServiceResource, ServiceSpec, ServiceType, WorkflowPhase, HEADLESS,
};
use hpk_core::network::Resolution;
use hpk_core::quantity::{Quantity, ResourceKind};
use hpk_core::slurm::{Behavior, Demand, JobState, NodeSpec, SlurmSim};
use hpk_core::store::{admit_service, ObjectKey, Store, StoreError, Verdict};
use hpk_core::Engine;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};

use common::*;

type Outcome = Result<(), String>;

fn ensure(cond: bool, message: impl FnOnce() -> String) -> Outcome {
    if cond {
        Ok(())
    } else {
        Err(message())
    }
}

fn pod_of<'a>(e: &'a Engine, namespace: &str, name: &str) -> Option<&'a PodResource> {
    e.store()
        .get(&ObjectKey::new(Kind::Pod, namespace, name))
        .and_then(|o| o.body.as_pod())
}

fn pods(e: &Engine) -> Vec<&PodResource> {
    e.store().list(Kind::Pod).filter_map(|o| o.body.as_pod()).collect()
}

fn make_pod(name: &str, labels: &[(&str, &str)], containers: usize, millicores: u64) -> PodResource {
    let mut meta = ObjectMeta::new("default", name);
    meta.labels = labels.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
    PodResource {
        meta,
        spec: PodSpec {
            containers: (0..containers)
                .map(|i| ContainerSpec {
                    name: format!("c{i}"),
                    image: "busybox:1.36".into(),
                    command: vec!["true".into()],
                    resources: hpk_core::manifest::ResourceRequirements {
                        requests: ResourceList {
                            cpu: (millicores > 0)
                                .then(|| Quantity::parse(&format!("{millicores}m"), ResourceKind::Cpu).unwrap()),
                            memory: None,
                        },
                        limits: ResourceList::default(),
                    },
                    ..Default::default()
                })
                .collect(),
            ..Default::default()
        },
        status: Default::default(),
    }
}

fn rule(pattern: &str, run_ticks: u64, exit_code: i32) -> BehaviorRule {
    BehaviorRule {
        pattern: pattern.into(),
        run_ticks,
        exit_code,
        exit_codes: None,
    }
}

fn run_proptest<S: Strategy>(cases: u32, strategy: S, test: impl Fn(S::Value) -> Outcome) -> Outcome
where
    S::Value: std::fmt::Debug,
{
    let mut runner = TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&strategy, |value| test(value).map_err(TestCaseError::fail))
        .map_err(|e| e.to_string())
}

// 1. The fan-out workflow produces four pods with the swept task counts.
fn fan_out_end_to_end() -> Outcome {
    let started = Instant::now();
    let mut e = fixture_engine();
    let reports = e.apply_text(&fixture("npb-sweep.yaml")).map_err(|e| e.to_string())?;
    ensure(reports.len() == 1 && reports[0].verdict() == "workflow/npb-sweep created", || {
        format!("apply verdicts: {:?}", reports.iter().map(|r| r.verdict()).collect::<Vec<_>>())
    })?;
    e.run_to_quiescence().map_err(|e| e.to_string())?;

    let all = pods(&e);
    ensure(all.len() == 4, || format!("{} pods", all.len()))?;
    let mut counts = Vec::new();
    for pod in &all {
        ensure(pod.status.phase == PodPhase::Succeeded, || format!("{} is {}", pod.meta.name, pod.status.phase))?;
        let script = e.export_script("default", &pod.meta.name).map_err(|e| e.to_string())?;
        let pass: Vec<_> = header_pairs(&script)
            .into_iter()
            .skip_while(|(f, _)| f != "--error")
            .skip(1)
            .filter(|(f, _)| f == "--ntasks")
            .map(|(_, v)| v)
            .collect();
        ensure(pass.len() == 1, || format!("{}: pass-through {:?}", pod.meta.name, pass))?;
        counts.push(pass[0].parse::<u64>().map_err(|e| e.to_string())?);
    }
    counts.sort();
    ensure(counts == [2, 4, 8, 16], || format!("task counts {counts:?}"))?;

    let wf = e
        .store()
        .get(&ObjectKey::new(Kind::Workflow, "default", "npb-sweep"))
        .and_then(|o| o.body.as_workflow())
        .ok_or("workflow missing")?;
    ensure(wf.status.phase == WorkflowPhase::Succeeded, || format!("workflow {}", wf.status.phase))?;

    let first_end = e.sim().jobs().filter_map(|j| j.end_tick).min().unwrap_or(0);
    let submits: Vec<_> = e.sim().jobs().map(|j| j.submit_tick).collect();
    ensure(submits.iter().all(|&t| t < first_end), || {
        format!("submits {submits:?} not all before first completion at {first_end}")
    })?;
    ensure(started.elapsed() < Duration::from_secs(1), || format!("took {:?}", started.elapsed()))
}

fn spark_executors_on(cpus: u64) -> Result<Engine, String> {
    let mut e = engine(&[("node-0", cpus, 65536)], behaviors());
    e.apply_text(&fixture("spark-executors.yaml")).map_err(|e| e.to_string())?;
    while !e.is_quiescent() {
        e.step(1);
        ensure(e.sim().conserved(), || format!("capacity exceeded at tick {}", e.tick()))?;
        ensure(e.tick() < 100, || "no quiescence".into())?;
    }
    Ok(e)
}

// 2. Three one-core executors plus a driver: one wave on 4 cpus, FCFS
//    queueing on 2 cpus.
fn executor_shape() -> Outcome {
    let wide = spark_executors_on(4)?;
    let starts: Vec<_> = wide.sim().jobs().map(|j| j.start_tick).collect();
    ensure(starts.len() == 4 && starts.iter().all(|&s| s == Some(1)), || format!("4 cpus: starts {starts:?}"))?;

    let narrow = spark_executors_on(2)?;
    let jobs: Vec<_> = narrow.sim().jobs().cloned().collect();
    let actual: Vec<u64> = jobs.iter().map(|j| j.start_tick.unwrap_or(0)).collect();
    let oracle = fcfs_oracle(
        &[(2, 65536)],
        &jobs
            .iter()
            .map(|j| OracleJob {
                submit_tick: j.submit_tick,
                cpus: j.demand.cpus,
                mem: j.demand.mem_mib,
                run_ticks: j.behavior.run_ticks,
            })
            .collect::<Vec<_>>(),
    );
    ensure(actual == oracle, || format!("2 cpus: starts {actual:?}, oracle {oracle:?}"))?;
    ensure(actual.windows(2).all(|w| w[0] <= w[1]), || format!("FCFS violated: {actual:?}"))?;
    ensure(actual[2] > actual[0], || "expected queueing on 2 cpus".into())?;
    for pod in pods(&narrow) {
        ensure(pod.status.phase == PodPhase::Succeeded, || format!("{} {}", pod.meta.name, pod.status.phase))?;
    }
    let svc = narrow
        .store()
        .get(&ObjectKey::new(Kind::Service, "default", "tpcds-datagen-driver-svc"))
        .and_then(|o| o.body.as_service())
        .ok_or("driver service missing")?;
    ensure(svc.is_headless(), || "driver service not headless".into())
}

// 3. Job state to pod phase table, exhaustively and through the engine.
fn state_mapping() -> Outcome {
    let table = |state: JobState, exit: Option<i32>| -> (PodPhase, Option<&'static str>) {
        match (state, exit) {
            (JobState::Pending, _) => (PodPhase::Pending, None),
            (JobState::Running, _) => (PodPhase::Running, None),
            (JobState::Completed, _) => (PodPhase::Succeeded, None),
            (JobState::Failed, _) => (PodPhase::Failed, Some("Error")),
            (JobState::Timeout, _) => (PodPhase::Failed, Some("DeadlineExceeded")),
            (JobState::Cancelled, _) => (PodPhase::Failed, Some("Cancelled")),
        }
    };
    for state in JobState::ALL {
        let codes: Vec<Option<i32>> = match state {
            JobState::Completed => vec![Some(0)],
            JobState::Failed => vec![Some(1), Some(2), Some(137), Some(-1)],
            _ => vec![None],
        };
        for exit in codes {
            ensure(sync_status(state, exit) == table(state, exit), || {
                format!("{state} exit {exit:?} maps to {:?}", sync_status(state, exit))
            })?;
        }
    }

    let behaviors = BehaviorTable {
        default: Behavior::new(10, 0),
        rules: vec![rule("ok", 1, 0), rule("bad", 1, 3), rule("slow", 5, 0)],
    };
    let mut e = engine(&[("n0", 5, 8192)], behaviors);
    for name in ["running", "ok", "bad", "slow", "cancel-me"] {
        let mut pod = make_pod(name, &[], 1, 1000);
        if name == "slow" {
            pod.spec.active_deadline_seconds = Some(60);
        }
        e.apply(Resource::Pod(pod)).map_err(|e| e.to_string())?;
    }
    e.apply(Resource::Pod(make_pod("queued", &[], 1, 5000))).map_err(|e| e.to_string())?;
    e.step(2);
    let cancel = pod_of(&e, "default", "cancel-me").and_then(|p| p.status.job_id).ok_or("no job")?;
    e.cancel_job(cancel).map_err(|e| e.to_string())?;

    let mut seen = BTreeSet::new();
    for pod in pods(&e) {
        let job = e.sim().query(pod.status.job_id.ok_or("pod without job")?).map_err(|e| e.to_string())?;
        seen.insert(job.state);
        let expected = table(job.state, job.exit_code());
        let actual = (pod.status.phase, pod.status.reason.as_deref());
        ensure(actual == expected, || format!("{}: job {} gives {actual:?}, want {expected:?}", pod.meta.name, job.state))?;
        if job.state == JobState::Failed {
            ensure(pod.status.exit_code == Some(3), || format!("exit code {:?}", pod.status.exit_code))?;
        }
    }
    ensure(seen.len() == 6, || format!("only reached {seen:?}"))
}

#[derive(Debug, Clone)]
struct GenService {
    name: String,
    cluster_ip: Option<String>,
    service_type: ServiceType,
}

fn gen_service() -> impl Strategy<Value = GenService> {
    let ip = prop_oneof![
        Just(None),
        Just(Some(String::new())),
        Just(Some(HEADLESS.to_string())),
        (1u8..=254, 0u8..=255).prop_map(|(a, b)| Some(format!("10.96.{a}.{b}"))),
    ];
    let service_type = prop_oneof![
        Just(ServiceType::ClusterIP),
        Just(ServiceType::NodePort),
        Just(ServiceType::LoadBalancer)
    ];
    ("[a-d]", ip, service_type).prop_map(|(name, cluster_ip, service_type)| GenService {
        name,
        cluster_ip,
        service_type,
    })
}

// 4. No stored service ever carries a virtual IP.
fn admission_suite() -> Outcome {
    run_proptest(256, prop::collection::vec(gen_service(), 1..20), |services| {
        let mut store = Store::new();
        for g in services {
            let svc = ServiceResource {
                meta: ObjectMeta::new("default", &g.name),
                spec: ServiceSpec {
                    selector: BTreeMap::from([("app".to_string(), g.name.clone())]),
                    ports: vec![hpk_core::manifest::ServicePort {
                        name: None,
                        port: 80,
                        target_port: None,
                    }],
                    cluster_ip: g.cluster_ip.clone(),
                    service_type: g.service_type,
                },
            };
            let outcome = admit_service(&svc);
            let explicit = matches!(g.cluster_ip.as_deref(), Some(ip) if !ip.is_empty() && ip != HEADLESS);
            let expected = if explicit || g.service_type != ServiceType::ClusterIP {
                Verdict::Rejected
            } else if g.cluster_ip.as_deref() == Some(HEADLESS) {
                Verdict::Allowed
            } else {
                Verdict::Mutated
            };
            ensure(outcome.verdict == expected, || format!("{g:?}: {:?}", outcome.verdict))?;
            let put = store.put(Resource::Service(svc.clone()));
            match expected {
                Verdict::Rejected => ensure(matches!(put, Err(StoreError::AdmissionRejected { .. })), || {
                    format!("{g:?} stored: {put:?}")
                })?,
                Verdict::Allowed => {
                    put.map_err(|e| e.to_string())?;
                    let stored = store.get(&ObjectKey::new(Kind::Service, "default", &g.name)).unwrap();
                    ensure(stored.body == Resource::Service(svc.clone()), || "headless service altered".into())?;
                }
                Verdict::Mutated => {
                    put.map_err(|e| e.to_string())?;
                    ensure(outcome.object != svc, || "mutation left service unchanged".into())?;
                }
            }
            for object in store.list(Kind::Service) {
                let s = object.body.as_service().unwrap();
                ensure(s.spec.cluster_ip.as_deref() == Some(HEADLESS), || format!("{} not headless", s.meta.name))?;
            }
        }
        Ok(())
    })
}

// 5. Golden scripts, container coverage and directive re-computation.
fn golden_scripts() -> Outcome {
    let fixtures = golden_pods();
    ensure(fixtures.len() >= 10, || format!("only {} fixtures", fixtures.len()))?;
    for (name, pod) in &fixtures {
        let script = submitted_script(pod);
        let golden = std::fs::read_to_string(golden_dir().join(format!("{name}.sh"))).map_err(|e| e.to_string())?;
        ensure(script == golden, || format!("{name} differs from golden file"))?;
        let children: Vec<_> = script.lines().filter(|l| l.starts_with("nsenter ")).collect();
        ensure(children.len() == pod.spec.containers.len(), || format!("{name}: child count"))?;
        for c in &pod.spec.containers {
            let log = format!("\"$POD_DIR/{}.log\"", c.name);
            ensure(children.iter().filter(|l| l.contains(&log)).count() == 1, || format!("{name}/{}", c.name))?;
        }
        let pairs = header_pairs(&script);
        for (flag, value) in expected_resource_directives(pod) {
            let first = pairs.iter().find(|(f, _)| f == flag).map(|(_, v)| v.clone());
            ensure(first.as_deref() == Some(value.as_str()), || format!("{name}: {flag} is {first:?}, want {value}"))?;
        }
    }
    Ok(())
}

fn corpus_files() -> Vec<String> {
    let mut files: Vec<String> = [
        "services.yaml",
        "rejected-services.yaml",
        "spark-executors.yaml",
        "npb-sweep.yaml",
        "chain-workflow.yaml",
    ]
    .iter()
    .map(|f| fixture(f))
    .collect();
    for (_, pod) in golden_pods() {
        files.push(serde_yaml::to_string(&hpk_core::manifest::to_manifest_value(&Resource::Pod(pod))).unwrap());
    }
    files
}

fn run_corpus() -> Result<(String, String), String> {
    let mut e = fixture_engine();
    for text in corpus_files() {
        e.apply_text(&text).map_err(|e| e.to_string())?;
        e.step(1);
    }
    e.run_to_quiescence().map_err(|e| e.to_string())?;
    let problems = e.check_invariants();
    ensure(problems.is_empty(), || problems.join("; "))?;
    Ok((e.trace_text(), e.dump()))
}

// 6. Identical inputs give byte-identical traces and dumps.
fn determinism() -> Outcome {
    let (trace_a, dump_a) = run_corpus()?;
    let (trace_b, dump_b) = run_corpus()?;
    ensure(!trace_a.is_empty(), || "empty trace".into())?;
    ensure(trace_a == trace_b, || "traces differ".into())?;
    ensure(dump_a == dump_b, || "state dumps differ".into())
}

#[derive(Debug, Clone)]
enum NetOp {
    Apply { id: usize, web: bool, containers: usize },
    Delete(usize),
    Step(u64),
}

fn net_op() -> impl Strategy<Value = NetOp> {
    prop_oneof![
        3 => (0usize..12, any::<bool>(), 1usize..4).prop_map(|(id, web, containers)| NetOp::Apply { id, web, containers }),
        1 => (0usize..12).prop_map(NetOp::Delete),
        2 => (1u64..4).prop_map(NetOp::Step),
    ]
}

fn check_network(e: &Engine) -> Outcome {
    let leased: Vec<Ipv4Addr> = e.ipam().allocations().into_iter().map(|(_, ip)| ip).collect();
    let unique: BTreeSet<_> = leased.iter().collect();
    ensure(unique.len() == leased.len(), || format!("duplicate lease in {leased:?}"))?;
    let running: Vec<_> = pods(e).into_iter().filter(|p| p.status.phase == PodPhase::Running).collect();
    let ips: BTreeSet<_> = running.iter().filter_map(|p| p.status.pod_ip).collect();
    ensure(ips.len() == running.len(), || "two running pods share an address".into())?;
    for pod in &running {
        let script = e.export_script(&pod.meta.namespace, &pod.meta.name).map_err(|e| e.to_string())?;
        let ip = pod.status.pod_ip.unwrap();
        ensure(script.matches("--network-args").count() == 1, || "more than one network identity".into())?;
        ensure(script.contains(&format!("\"IP={ip}\"")), || format!("{} script lacks {ip}", pod.meta.name))?;
        ensure(e.ipam().address_of(&format!("default/{}", pod.meta.name)) == Some(ip), || "lease moved".into())?;
    }
    let mut expected: Vec<Ipv4Addr> = running
        .iter()
        .filter(|p| p.meta.labels.get("app").map(String::as_str) == Some("web"))
        .filter_map(|p| p.status.pod_ip)
        .collect();
    expected.sort();
    match e.resolve("web", "default") {
        Resolution::Found(records) => ensure(records.addresses == expected, || {
            format!("resolve gave {:?}, want {expected:?}", records.addresses)
        }),
        Resolution::NxDomain => Err("web service missing".into()),
    }
}

fn web_service() -> Resource {
    Resource::Service(ServiceResource {
        meta: ObjectMeta::new("default", "web"),
        spec: ServiceSpec {
            selector: BTreeMap::from([("app".to_string(), "web".to_string())]),
            ..Default::default()
        },
    })
}

// 7. Address uniqueness, one address per pod, and fresh resolution.
fn networking() -> Outcome {
    let behaviors = BehaviorTable {
        default: Behavior::new(3, 0),
        rules: vec![rule("p1*", 1, 0), rule("p2*", 6, 1)],
    };
    run_proptest(64, prop::collection::vec(net_op(), 1..40), |ops| {
        let mut e = engine(&[("n0", 4, 4096), ("n1", 4, 4096)], behaviors.clone());
        e.apply(web_service()).map_err(|e| e.to_string())?;
        for op in ops {
            match op {
                NetOp::Apply { id, web, containers } => {
                    let labels: &[(&str, &str)] = if web { &[("app", "web")] } else { &[("app", "batch")] };
                    let _ = e.apply(Resource::Pod(make_pod(&format!("p{id}"), labels, containers, 500)));
                }
                NetOp::Delete(id) => {
                    let _ = e.delete(&ObjectKey::new(Kind::Pod, "default", format!("p{id}")));
                }
                NetOp::Step(n) => {
                    for _ in 0..n {
                        e.step(1);
                        check_network(&e)?;
                    }
                }
            }
            check_network(&e)?;
        }
        Ok(())
    })?;

    // Three selected pods with staggered run times, checked at every tick.
    let behaviors = BehaviorTable {
        default: Behavior::new(1, 0),
        rules: vec![rule("w0", 1, 0), rule("w1", 2, 0), rule("w2", 3, 0)],
    };
    let mut e = engine(&[("n0", 8, 4096)], behaviors);
    e.apply(web_service()).map_err(|e| e.to_string())?;
    for i in 0..3 {
        e.apply(Resource::Pod(make_pod(&format!("w{i}"), &[("app", "web")], 2, 0)))
            .map_err(|e| e.to_string())?;
    }
    e.apply(Resource::Pod(make_pod("other", &[("app", "db")], 1, 0))).map_err(|e| e.to_string())?;
    let mut sizes = Vec::new();
    loop {
        check_network(&e)?;
        if let Resolution::Found(r) = e.resolve("web", "default") {
            sizes.push(r.addresses.len());
        }
        if e.is_quiescent() {
            break;
        }
        e.step(1);
    }
    ensure(sizes == [0, 3, 2, 1, 0], || format!("resolved sizes per tick {sizes:?}"))?;
    ensure(e.resolve("nope", "default") == Resolution::NxDomain, || "unknown service resolved".into())
}

#[derive(Debug, Clone)]
enum SafetyOp {
    Apply(usize),
    Delete(usize),
    Step(u64),
}

#[derive(Debug, Clone)]
struct GenPod {
    millicores: u64,
    containers: usize,
    run_ticks: u64,
    exit_codes: Vec<i32>,
    on_failure: bool,
    deadline: Option<u64>,
}

fn gen_pod() -> impl Strategy<Value = GenPod> {
    (
        0u64..4000,
        1usize..3,
        1u64..6,
        prop::collection::vec(prop_oneof![3 => Just(0), 1 => Just(1), 1 => Just(137)], 1..4),
        any::<bool>(),
        prop::option::weighted(0.2, 30u64..400),
    )
        .prop_map(|(millicores, containers, run_ticks, exit_codes, on_failure, deadline)| GenPod {
            millicores,
            containers,
            run_ticks,
            exit_codes,
            on_failure,
            deadline,
        })
}

fn safety_case() -> impl Strategy<Value = (Vec<GenPod>, Vec<SafetyOp>)> {
    let ops = prop::collection::vec(
        prop_oneof![
            1 => (0usize..100).prop_map(SafetyOp::Delete),
            1 => (1u64..4).prop_map(SafetyOp::Step),
        ],
        40..120,
    );
    let order = Just((0..100).collect::<Vec<usize>>()).prop_shuffle();
    (prop::collection::vec(gen_pod(), 100), order, ops, prop::collection::vec(0usize..220, 100)).prop_map(
        |(pods, order, extra, positions)| {
            let mut ops: Vec<(usize, SafetyOp)> = extra.into_iter().enumerate().map(|(i, op)| (2 * i + 1, op)).collect();
            for (id, pos) in order.into_iter().zip(positions) {
                ops.push((2 * pos, SafetyOp::Apply(id)));
            }
            ops.sort_by_key(|(k, _)| *k);
            (pods, ops.into_iter().map(|(_, op)| op).collect())
        },
    )
}

// 8. Random apply/delete/simulate interleavings leave no orphan jobs and
//    no leaked leases.
fn reconciler_safety() -> Outcome {
    run_proptest(12, safety_case(), |(generated, ops)| {
        let rules = generated
            .iter()
            .enumerate()
            .map(|(i, g)| BehaviorRule {
                pattern: format!("pod-{i}"),
                run_ticks: g.run_ticks,
                exit_code: 0,
                exit_codes: Some(g.exit_codes.clone()),
            })
            .collect();
        let mut e = engine(
            &[("n0", 8, 16384), ("n1", 8, 16384)],
            BehaviorTable {
                default: Behavior::default(),
                rules,
            },
        );
        for op in ops {
            match op {
                SafetyOp::Apply(i) => {
                    let g = &generated[i];
                    let mut pod = make_pod(&format!("pod-{i}"), &[], g.containers, g.millicores / g.containers as u64);
                    if g.on_failure {
                        pod.spec.restart_policy = RestartPolicy::OnFailure;
                    }
                    pod.spec.active_deadline_seconds = g.deadline;
                    e.apply(Resource::Pod(pod)).map_err(|e| e.to_string())?;
                }
                SafetyOp::Delete(i) => {
                    let _ = e.delete(&ObjectKey::new(Kind::Pod, "default", format!("pod-{i}")));
                }
                SafetyOp::Step(n) => {
                    e.step(n);
                }
            }
            let problems = e.check_invariants();
            ensure(problems.is_empty(), || problems.join("; "))?;
        }
        e.run_to_quiescence().map_err(|e| e.to_string())?;
        ensure(e.sim().active_jobs() == 0, || "orphan jobs".into())?;
        ensure(e.ipam().allocations().is_empty(), || format!("leaked {:?}", e.ipam().allocations()))?;
        let problems = e.check_invariants();
        ensure(problems.is_empty(), || problems.join("; "))?;

        let keys: Vec<_> = e.store().list(Kind::Pod).map(|o| o.key.clone()).collect();
        for key in keys {
            e.delete(&key).map_err(|e| e.to_string())?;
        }
        e.run_to_quiescence().map_err(|e| e.to_string())?;
        ensure(e.sim().active_jobs() == 0 && e.ipam().allocations().is_empty(), || "leak after delete".into())
    })
}

#[derive(Debug, Clone)]
struct SimCase {
    nodes: Vec<(u64, u64)>,
    jobs: Vec<(u64, u64, u64, u64)>,
}

fn sim_case() -> impl Strategy<Value = SimCase> {
    (
        prop::collection::vec((1u64..9, 1u64..4096), 1..=2),
        prop::collection::vec((0u64..3, 1u64..9, 1u64..4096, 1u64..7), 0..=6),
    )
        .prop_map(|(nodes, jobs)| {
            let jobs = jobs
                .into_iter()
                .filter(|&(_, c, m, _)| nodes.iter().any(|&(nc, nm)| c <= nc && m <= nm))
                .collect();
            SimCase { nodes, jobs }
        })
}

// 9. Simulator start times equal a brute-force FCFS/first-fit model.
fn oracle_equivalence() -> Outcome {
    run_proptest(512, sim_case(), |case| {
        let specs = case
            .nodes
            .iter()
            .enumerate()
            .map(|(i, &(c, m))| NodeSpec::new(format!("n{i}"), c, m))
            .collect();
        let mut sim = SlurmSim::new(specs).map_err(|e| e.to_string())?;
        let mut oracle_jobs = Vec::new();
        let mut ids = Vec::new();
        for &(gap, cpus, mem, run) in &case.jobs {
            sim.step(gap);
            let script = format!("#!/bin/bash\n#SBATCH --ntasks=1\n#SBATCH --cpus-per-task={cpus}\n#SBATCH --mem={mem}M\n");
            let demand = Demand {
                cpus,
                mem_mib: mem,
                time_limit_ticks: None,
            };
            oracle_jobs.push(OracleJob {
                submit_tick: sim.tick(),
                cpus,
                mem,
                run_ticks: run,
            });
            ids.push(sim.submit(&script, demand, Behavior::new(run, 0)).map_err(|e| e.to_string())?);
        }
        while !sim.is_idle() {
            sim.step(1);
            ensure(sim.conserved(), || "capacity exceeded".into())?;
        }
        let actual: Vec<u64> = ids.iter().map(|&id| sim.query(id).unwrap().start_tick.unwrap()).collect();
        let expected = fcfs_oracle(&case.nodes, &oracle_jobs);
        ensure(actual == expected, || format!("starts {actual:?}, oracle {expected:?}"))
    })
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("fan-out workflow end to end", fan_out_end_to_end),
        ("executor shape and FCFS queueing", executor_shape),
        ("job state to pod phase table", state_mapping),
        ("service admission", admission_suite),
        ("golden scripts", golden_scripts),
        ("determinism", determinism),
        ("networking", networking),
        ("reconciler safety", reconciler_safety),
        ("FCFS oracle equivalence", oracle_equivalence),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        match check() {
            Ok(()) => println!("criterion {} ({name}): pass [{:?}]", i + 1, started.elapsed()),
            Err(message) => {
                failed += 1;
                println!("criterion {} ({name}): FAIL: {message}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} of {} criteria failed", criteria.len());
        std::process::exit(1);
    }
    println!("all {} criteria passed", criteria.len());
}
