mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use common::*;
use serde_json::{json, Value};

fn escape_job(id: &str, variant: &str, out: &str) -> Value {
    json!({
        "id": id,
        "env_id": "escape_room",
        "policies": ["shapley_negotiator", "shapley_negotiator"],
        "pipeline": {"variant": variant},
        "seeds": [0, 1, 2],
        "output_dir": out
    })
}

fn raid_job(id: &str, out: &str) -> Value {
    json!({
        "id": id,
        "env_id": "raid_battle",
        "policies": ["role_balanced", "greedy_selfish", "role_balanced", "shapley_negotiator"],
        "pipeline": {"variant": "SC"},
        "seeds": [0, 3, 7],
        "output_dir": out
    })
}

fn run(manifest: &Path, extra: &[&str]) -> std::process::Output {
    let mut args = vec!["run", "--manifest", manifest.to_str().unwrap()];
    args.extend_from_slice(extra);
    shapcoop(&args)
}

fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in fs::read_dir(&dir).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.insert(p.strip_prefix(root).unwrap().display().to_string(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[derive(Debug, serde::Deserialize)]
struct AllocRow {
    job: String,
    seed: u64,
    agent: usize,
    realized: f64,
    allocation: f64,
    actual_pct: Option<f64>,
    expected_pct: Option<f64>,
    fallback: bool,
}

#[test]
fn escape_batch_writes_bundles_with_expected_settlements() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(
        dir.path(),
        &json!({"jobs": [escape_job("plain", "LLM_ONLY", "plain"), escape_job("sc", "SC", "sc")]}),
    );
    let out = run(&m, &[]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(stdout(&out).lines().count(), 2);

    let mut trajectories = 0;
    for job in ["plain", "sc"] {
        for seed in [0, 1, 2] {
            let t = dir.path().join(job).join(format!("trajectories/seed-{seed}.jsonl"));
            assert!(t.is_file());
            assert!(dir.path().join(job).join(format!("transcripts/seed-{seed}.jsonl")).is_file());
            trajectories += 1;
        }
    }
    assert_eq!(trajectories, 6);

    let rows: Vec<AllocRow> = csv::Reader::from_path(dir.path().join("sc/allocations.csv"))
        .unwrap()
        .deserialize()
        .map(Result::unwrap)
        .collect();
    assert_eq!(rows.len(), 6);
    for r in &rows {
        assert_eq!(r.job, "sc");
        assert!(!r.fallback);
        assert_eq!(r.allocation, 4.5);
        assert_eq!(r.actual_pct, Some(50.0));
        assert_eq!(r.expected_pct, Some(50.0));
        assert_eq!(r.realized, if r.agent == 0 { -1.0 } else { 10.0 });
    }
    assert_eq!(rows.iter().map(|r| r.seed).collect::<Vec<_>>(), vec![0, 0, 1, 1, 2, 2]);

    let plain: Vec<AllocRow> = csv::Reader::from_path(dir.path().join("plain/allocations.csv"))
        .unwrap()
        .deserialize()
        .map(Result::unwrap)
        .collect();
    for r in &plain {
        // Without negotiation both agents head for the door.
        assert_eq!(r.realized, -1.0);
        assert_eq!(r.allocation, r.realized);
    }

    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("sc/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["variant"], "SC");
    assert_eq!(summary["completed"], 3);
    assert_eq!(summary["mean_collective_outcome"], 9.0);
    let plain_summary: Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("plain/summary.json")).unwrap()).unwrap();
    assert_eq!(plain_summary["mean_collective_outcome"], -2.0);
}

#[test]
fn bundles_do_not_depend_on_parallelism() {
    let dir = tempfile::tempdir().unwrap();
    let mut trees = Vec::new();
    for p in [1, 8] {
        let sub = dir.path().join(format!("p{p}"));
        fs::create_dir_all(&sub).unwrap();
        let m = write_manifest(
            &sub,
            &json!({"parallelism": p, "jobs": [escape_job("sc", "STS", "a"), raid_job("raid", "b")]}),
        );
        assert_eq!(code(&run(&m, &[])), 0);
        let mut tree = read_tree(&sub);
        tree.remove("manifest.json");
        trees.push(tree);
    }
    assert_eq!(trees[0].len(), 18);
    assert_eq!(trees[0], trees[1]);
}

#[test]
fn contributions_csv_round_trips_and_balances() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), &json!({"jobs": [raid_job("raid", "raid")]}));
    assert_eq!(code(&run(&m, &[])), 0);
    let mut rd = csv::Reader::from_path(dir.path().join("raid/contributions.csv")).unwrap();
    let header: Vec<String> = rd.headers().unwrap().iter().map(String::from).collect();
    let records: Vec<csv::StringRecord> = rd.records().map(Result::unwrap).collect();
    assert_eq!(records.len(), 12);

    let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    w.write_record(&header).unwrap();
    for r in &records {
        w.write_record(r).unwrap();
    }
    let rewritten = String::from_utf8(w.into_inner().unwrap()).unwrap();
    assert_eq!(rewritten, fs::read_to_string(dir.path().join("raid/contributions.csv")).unwrap());

    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("raid/summary.json")).unwrap()).unwrap();
    for (i, seed) in ["0", "3", "7"].into_iter().enumerate() {
        let rows: Vec<&csv::StringRecord> = records.iter().filter(|r| &r[1] == seed).collect();
        let phi: f64 = rows.iter().map(|r| r[9].parse::<f64>().unwrap()).sum();
        let total = summary["seeds"][i]["collective_outcome"].as_f64().unwrap();
        assert!((phi - total).abs() < 1e-9, "seed {seed}: {phi} vs {total}");
        let taunts: f64 = rows.iter().map(|r| r[7].parse::<f64>().unwrap()).sum();
        assert_eq!(taunts % 300.0, 0.0);
    }
}

#[test]
fn empty_manifest_is_fine() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), &json!({"jobs": []}));
    assert_eq!(code(&run(&m, &[])), 0);
}

#[test]
fn shared_output_dir_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(
        dir.path(),
        &json!({"jobs": [escape_job("a", "SC", "same"), escape_job("b", "NEG", "./x/../same")]}),
    );
    let out = run(&m, &[]);
    assert_eq!(code(&out), 2);
    assert!(!dir.path().join("same").exists());
}

#[test]
fn duplicate_ids_and_bad_fields_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), &json!({"jobs": [escape_job("a", "SC", "x"), escape_job("a", "SC", "y")]}));
    assert_eq!(code(&run(&m, &[])), 2);
    let m = write_manifest(dir.path(), &json!({"jobs": [], "paralelism": 2}));
    assert_eq!(code(&run(&m, &[])), 2);
    let m = write_manifest(dir.path(), &json!({"jobs": [escape_job("a", "MAYBE", "x")]}));
    assert_eq!(code(&run(&m, &[])), 2);
}

#[test]
fn unknown_policy_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut job = escape_job("a", "SC", "x");
    job["policies"] = json!(["idle", "telepath"]);
    let m = write_manifest(dir.path(), &json!({"jobs": [job]}));
    assert_eq!(code(&run(&m, &[])), 2);
}

#[test]
fn existing_output_needs_force() {
    let dir = tempfile::tempdir().unwrap();
    let m = write_manifest(dir.path(), &json!({"jobs": [escape_job("a", "SC", "out")]}));
    fs::create_dir_all(dir.path().join("out")).unwrap();
    fs::write(dir.path().join("out/stale.txt"), "old").unwrap();

    let out = run(&m, &[]);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("--force"));
    assert!(dir.path().join("out/stale.txt").exists());

    assert_eq!(code(&run(&m, &["--force"])), 0);
    assert!(!dir.path().join("out/stale.txt").exists());
    assert!(dir.path().join("out/summary.json").is_file());
}

#[test]
fn llm_job_without_backend_is_skipped() {
    let dir = tempfile::tempdir().unwrap();
    let mut llm = escape_job("llm", "SC", "llm");
    llm["policies"] = json!(["llm", "llm"]);
    let m = write_manifest(dir.path(), &json!({"jobs": [llm, escape_job("rule", "SC", "rule")]}));
    let out = run(&m, &[]);
    assert_eq!(code(&out), 3);

    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("llm/summary.json")).unwrap()).unwrap();
    assert_eq!(summary["completed"], 0);
    for s in summary["seeds"].as_array().unwrap() {
        assert_eq!(s["status"], "skipped");
    }
    assert!(!dir.path().join("llm/trajectories").exists());
    let rule: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("rule/summary.json")).unwrap()).unwrap();
    assert_eq!(rule["completed"], 3);
}

#[test]
fn unreachable_backend_fails_episodes_with_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let backend = dir.path().join("backend.json");
    fs::write(
        &backend,
        r#"{"base_url": "http://127.0.0.1:9/v1", "model": "m", "api_key_env": null, "max_retries": 0, "timeout_secs": 2}"#,
    )
    .unwrap();
    let mut job = escape_job("llm", "LLM_ONLY", "llm");
    job["policies"] = json!(["llm", "idle"]);
    let m = write_manifest(dir.path(), &json!({"jobs": [job]}));
    let out = run(&m, &["--backend", backend.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    let summary: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("llm/summary.json")).unwrap()).unwrap();
    for s in summary["seeds"].as_array().unwrap() {
        assert_ne!(s["status"], "ok");
    }
}

#[test]
fn example_manifest_parses() {
    // Only loads; runs go to a scratch copy so the repository stays clean.
    let dir = tempfile::tempdir().unwrap();
    let text = fs::read_to_string(data("manifests/example.json")).unwrap();
    let mut v: Value = serde_json::from_str(&text).unwrap();
    for job in v["jobs"].as_array_mut().unwrap() {
        let id = job["id"].as_str().unwrap().to_string();
        job["output_dir"] = json!(id);
    }
    let m = write_manifest(dir.path(), &v);
    let out = run(&m, &[]);
    assert_eq!(code(&out), 0);
    assert_eq!(stdout(&out).lines().count(), 4);
}
