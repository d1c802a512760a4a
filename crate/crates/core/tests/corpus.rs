//! Replays the checked-in fuzz seeds through the same round trips the fuzz
//! targets assert, so plain `cargo test` covers them.

use std::path::{Path, PathBuf};

use scirp::clustergen::ClusterPool;
use scirp::instance::Instance;
use scirp::mdp::{extract_ss, parse_ss_csv, ss_csv, Policy};
use scirp::setpart::Selection;

fn seeds(target: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fuzz/corpus").join(target);
    let mut out: Vec<_> = std::fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap().to_string_lossy().starts_with("seed_"))
        .map(|p| {
            let bytes = std::fs::read(&p).unwrap();
            (p, bytes)
        })
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds for {target}");
    out
}

fn text(b: &[u8]) -> &str {
    std::str::from_utf8(b).unwrap()
}

#[test]
fn instance_seeds() {
    let mut parsed = 0;
    for (path, bytes) in seeds("instance_json") {
        let Ok(inst) = Instance::from_json(text(&bytes)) else { continue };
        parsed += 1;
        if inst.validate().is_empty() {
            assert_eq!(Instance::from_json(&inst.to_json()).unwrap(), inst, "{path:?}");
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn cluster_pool_seeds() {
    let mut parsed = 0;
    for (path, bytes) in seeds("cluster_pool_jsonl") {
        let (&n, rest) = bytes.split_first().unwrap();
        let n = usize::from(n % 16) + 1;
        let Ok(pool) = ClusterPool::from_jsonl(text(rest), n) else { continue };
        parsed += 1;
        let back = ClusterPool::from_jsonl(&pool.to_jsonl(), n).unwrap();
        assert_eq!(back.clusters, pool.clusters, "{path:?}");
    }
    assert!(parsed >= 1);
}

#[test]
fn selection_seeds() {
    for (path, bytes) in seeds("selection_json") {
        if let Ok(sel) = Selection::from_json(text(&bytes)) {
            assert_eq!(Selection::from_json(&sel.to_json()).unwrap(), sel, "{path:?}");
        }
    }
}

#[test]
fn policy_seeds() {
    let mut parsed = 0;
    for (path, bytes) in seeds("policy_json") {
        let Ok(policy) = Policy::from_json(text(&bytes)) else { continue };
        parsed += 1;
        for t in 0..policy.periods {
            let _ = policy.action(t, policy.omega2_min - 1);
            let _ = policy.action(t, policy.omega2_max() + 1);
        }
        let _ = extract_ss(&policy);
        assert_eq!(Policy::from_json(&policy.to_json()).unwrap().actions, policy.actions, "{path:?}");
    }
    assert_eq!(parsed, 1);
}

#[test]
fn ss_seeds() {
    let mut parsed = 0;
    for (path, bytes) in seeds("ss_csv") {
        let Ok(rules) = parse_ss_csv(text(&bytes)) else { continue };
        parsed += 1;
        assert_eq!(parse_ss_csv(&ss_csv(&rules)).unwrap(), rules, "{path:?}");
    }
    assert_eq!(parsed, 2);
}
