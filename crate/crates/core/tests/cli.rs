mod common;

use std::path::Path;
use std::process::{Command, Output};

use conure::data::{generate_rating_log, write_interactions, RatingLogSpec};
use conure::training::Mode;
use tempfile::TempDir;

use common::setup::tiny_config;

fn conure(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_conure"))
        .args(args)
        .env("CONURE_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = conure(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Tiny synthetic dataset plus a config file, written into `dir`.
fn prepare(dir: &Path, mode: Mode) {
    let spec = "users = 120\ngenres = 3\nitems_per_genre = 8\ntastes = 2\nwindow = 8\nmin_length = 4\n";
    std::fs::write(dir.join("spec.toml"), spec).unwrap();
    ok(&["synth", "--out", s(&dir.join("data")), "--spec", s(&dir.join("spec.toml")), "--seed", "3"]);
    std::fs::write(dir.join("run.toml"), tiny_config(mode, 3).to_toml().unwrap()).unwrap();
}

#[test]
fn lifecycle_through_the_binary() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    prepare(d, Mode::Conure);
    let data = d.join("data");
    let ck = d.join("run.ck");
    ok(&["train", "--data", s(&data), "--checkpoint", s(&ck), "--task", "1", "--config", s(&d.join("run.toml"))]);
    ok(&["prune", "--checkpoint", s(&ck), "--task", "1"]);
    ok(&["retrain", "--data", s(&data), "--checkpoint", s(&ck), "--task", "1", "--history", s(&d.join("h.jsonl"))]);
    ok(&["commit", "--checkpoint", s(&ck), "--task", "1"]);
    std::fs::copy(&ck, d.join("after1.ck")).unwrap();
    ok(&["train", "--data", s(&data), "--checkpoint", s(&ck), "--task", "2"]);
    ok(&["prune", "--checkpoint", s(&ck), "--task", "2", "--ratio", "0.5"]);
    ok(&["retrain", "--data", s(&data), "--checkpoint", s(&ck), "--task", "2"]);
    ok(&["commit", "--checkpoint", s(&ck), "--task", "2"]);

    let first = ok(&["eval", "--data", s(&data), "--checkpoint", s(&ck), "--task", "1"]);
    let second = ok(&["eval", "--data", s(&data), "--checkpoint", s(&ck), "--task", "1"]);
    assert_eq!(first, second);
    assert!(first.starts_with("T1\ttest\t"), "{first}");

    let checkpoints = format!("{},{}", s(&d.join("after1.ck")), s(&ck));
    let audit = ok(&["audit", "--data", s(&data), "--checkpoints", &checkpoints]);
    let row = audit.lines().find(|l| l.starts_with("T1\t")).expect("T1 audited");
    assert!(row.ends_with("true"), "{audit}");

    let capacity = ok(&["capacity", "--checkpoint", s(&ck)]);
    assert!(capacity.contains("owned by T1") && capacity.contains("owned by T2"), "{capacity}");
    ok(&["report", "--data", s(&data), "--checkpoint", s(&ck), "--out", s(&d.join("report.json"))]);
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    assert_eq!(json["tasks"].as_array().unwrap().len(), 2);
    let history = std::fs::read_to_string(d.join("h.jsonl")).unwrap();
    assert!(history.lines().all(|l| serde_json::from_str::<serde_json::Value>(l).is_ok()));
}

#[test]
fn invalid_requests_exit_nonzero() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    prepare(d, Mode::Conure);
    let data = d.join("data");
    let ck = d.join("run.ck");
    ok(&["train", "--data", s(&data), "--checkpoint", s(&ck), "--task", "1", "--config", s(&d.join("run.toml"))]);
    let before = std::fs::read(&ck).unwrap();

    let out = conure(&["prune", "--checkpoint", s(&ck), "--task", "1", "--ratio", "1.0"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error:"));
    assert_eq!(std::fs::read(&ck).unwrap(), before, "a failed command must not touch the checkpoint");

    let out = conure(&["commit", "--checkpoint", s(&ck), "--task", "1"]);
    assert!(!out.status.success(), "commit before retrain must fail");

    let missing = d.join("nowhere.ck");
    let out = conure(&["eval", "--data", s(&data), "--checkpoint", s(&missing), "--task", "1"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("nowhere.ck"));

    assert_eq!(conure(&["prune", "--task", "1"]).status.code(), Some(2));
}

#[test]
fn baseline_modes_refuse_capacity_and_prune() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    prepare(d, Mode::Sinmo);
    let ck = d.join("run.ck");
    ok(&["train", "--data", s(&d.join("data")), "--checkpoint", s(&ck), "--task", "1", "--config", s(&d.join("run.toml"))]);
    assert!(!conure(&["capacity", "--checkpoint", s(&ck)]).status.success());
    assert!(!conure(&["prune", "--checkpoint", s(&ck), "--task", "1", "--ratio", "0.5"]).status.success());
}

#[test]
fn ingest_reads_a_rating_log() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    let log = generate_rating_log(&RatingLogSpec { users: 60, items: 120, ratings: 3000, genres: 6, ..Default::default() })
        .unwrap();
    write_interactions(&d.join("u.data"), &log, "\t").unwrap();
    let out = ok(&["ingest", "--ratings", s(&d.join("u.data")), "--out", s(&d.join("ml"))]);
    assert!(out.starts_with("60 users"), "{out}");
    assert_eq!(out.lines().filter(|l| l.starts_with('T')).count(), 3, "{out}");
    assert!(d.join("ml").read_dir().unwrap().count() > 0);
}

#[test]
fn forgetting_demo_runs() {
    let dir = TempDir::new().unwrap();
    let d = dir.path();
    prepare(d, Mode::Conure);
    let out = ok(&[
        "demo-forgetting", "--data", s(&d.join("data")), "--config", s(&d.join("run.toml")), "--steps", "10",
    ]);
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines.len(), 2, "{out}");
    assert!(lines[0].starts_with("sinmoall"));
    assert!(lines[1].starts_with("conure") && lines[1].ends_with("identical true"), "{out}");
}
