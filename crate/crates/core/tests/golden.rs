//! Submitted scripts for the pod fixtures must match the files under
//! `tests/golden/`. Run with `UPDATE_GOLDEN=1` to rewrite them.

mod common;

use common::{expected_resource_directives, golden_dir, golden_pods, header_pairs, submitted_script};

#[test]
fn scripts_match_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let pods = golden_pods();
    assert!(pods.len() >= 10);
    let mut mismatches = Vec::new();
    for (name, pod) in &pods {
        let script = submitted_script(pod);
        let path = golden_dir().join(format!("{name}.sh"));
        if update {
            std::fs::write(&path, &script).unwrap();
            continue;
        }
        let golden = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        if golden != script {
            mismatches.push(format!("{name}:\n--- golden\n{golden}\n--- actual\n{script}"));
        }
    }
    assert!(mismatches.is_empty(), "{}", mismatches.join("\n"));
}

#[test]
fn every_container_runs_once() {
    for (name, pod) in golden_pods() {
        let script = submitted_script(&pod);
        let children: Vec<_> = script.lines().filter(|l| l.starts_with("nsenter ")).collect();
        assert_eq!(children.len(), pod.spec.containers.len(), "{name}");
        for c in &pod.spec.containers {
            let log = format!("\"$POD_DIR/{}.log\"", c.name);
            assert_eq!(children.iter().filter(|l| l.contains(&log)).count(), 1, "{name}/{}", c.name);
        }
        assert_eq!(script.matches("--network-args").count(), 1, "{name}");
        for v in &pod.spec.volumes {
            let mounted = pod.spec.containers.iter().any(|c| c.volume_mounts.iter().any(|m| m.name == v.name));
            if mounted {
                assert!(script.contains(&format!("--bind {}:", v.host_path)), "{name}: {}", v.name);
            }
        }
    }
}

#[test]
fn generated_directives_match_aggregation() {
    for (name, pod) in golden_pods() {
        let script = submitted_script(&pod);
        let expected = expected_resource_directives(&pod);
        let pairs = header_pairs(&script);
        for (flag, value) in &expected {
            let first = pairs.iter().find(|(f, _)| f == flag).map(|(_, v)| v.as_str());
            assert_eq!(first, Some(value.as_str()), "{name} {flag}");
        }
        let generated_mem = pairs.iter().take_while(|(f, _)| f != "--output").any(|(f, _)| f == "--mem");
        assert_eq!(generated_mem, expected.contains_key("--mem"), "{name}");
    }
}

#[test]
fn removing_annotations_only_changes_pass_through() {
    for (name, pod) in golden_pods() {
        if !pod.meta.annotations.contains_key(hpk_core::translator::FLAGS_ANNOTATION) {
            continue;
        }
        let mut bare = pod.clone();
        bare.meta.annotations.remove(hpk_core::translator::FLAGS_ANNOTATION);
        let with = submitted_script(&pod);
        let without = submitted_script(&bare);
        let strip = |s: &str| -> Vec<String> {
            let generated: Vec<_> = header_pairs(s)
                .into_iter()
                .scan(false, |after_error, (f, v)| {
                    let keep = !*after_error;
                    *after_error |= f == "--error";
                    Some(keep.then_some(format!("{f}={v}")))
                })
                .flatten()
                .collect();
            let body = s.lines().filter(|l| !l.starts_with('#')).map(String::from);
            generated.into_iter().chain(body).collect()
        };
        assert_eq!(strip(&with), strip(&without), "{name}");
    }
}

#[test]
fn export_is_repeatable() {
    for (_, pod) in golden_pods() {
        assert_eq!(submitted_script(&pod), submitted_script(&pod));
    }
}
