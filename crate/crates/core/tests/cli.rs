use std::path::Path;
use std::process::{Command, Output};

use oblique_fsl::harness::{FeatureStore, StoreClass, StoreLayout};
use serde_json::Value;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_oblique-fsl")).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn json(out: &Output) -> Value {
    serde_json::from_slice(&out.stdout).unwrap_or_else(|e| panic!("{e}: {}", stderr(out)))
}

fn write_synth(path: &Path) {
    let out = cli(&[
        "synth", "--classes", "6", "--per-class", "12", "--dim", "5", "--pyramid", "3", "--separation", "0.6", "--seed", "4",
        "--output", path.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
}

const FAST: &[&str] = &["--ways", "3", "--shots", "1", "--queries", "3", "--episodes", "4", "--iters", "10", "--pyramid", "3"];

fn run_on(path: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["run", "--features", path.to_str().unwrap()];
    args.extend_from_slice(FAST);
    args.extend_from_slice(extra);
    cli(&args)
}

#[test]
fn fresh_synth_store_validates() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.omfs");
    write_synth(&path);
    let out = cli(&["validate", path.to_str().unwrap()]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(String::from_utf8_lossy(&out.stdout).contains("6 classes, 72 records"));
}

#[test]
fn corrupt_stores_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.omfs");
    write_synth(&path);
    let bytes = std::fs::read(&path).unwrap();

    let cut = dir.path().join("cut.omfs");
    std::fs::write(&cut, &bytes[..bytes.len() - 7]).unwrap();
    let out = cli(&["validate", cut.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("unexpected end of file"), "{}", stderr(&out));

    let magic = dir.path().join("magic.omfs");
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"OMFX");
    std::fs::write(&magic, bad).unwrap();
    let out = cli(&["validate", magic.to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    assert!(stderr(&out).contains("bad magic"));

    let out = cli(&["validate", dir.path().join("missing.omfs").to_str().unwrap()]);
    assert_eq!(code(&out), 3);
    let out = run_on(&cut, &[]);
    assert_eq!(code(&out), 3);
}

#[test]
fn inductive_flags_map_onto_config() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.omfs");
    write_synth(&path);
    let out = run_on(&path, &["--tau", "0", "--inductive"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&out);
    assert_eq!(report["config"]["tau"], 0);
    assert_eq!(report["config"]["inductive"], true);
    assert_eq!(report["episodes"], 4);
    assert_eq!(report["per_episode"].as_array().unwrap().len(), 4);
    for key in ["mean_accuracy", "ci95", "seed", "failures"] {
        assert!(report.get(key).is_some(), "{key}");
    }
}

#[test]
fn reports_are_reproducible_and_seed_dependent() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.omfs");
    write_synth(&path);
    let a = run_on(&path, &["--seed", "9"]);
    let b = run_on(&path, &["--seed", "9"]);
    assert_eq!(code(&a), 0, "{}", stderr(&a));
    assert_eq!(a.stdout, b.stdout);
    let file = dir.path().join("report.json");
    let c = run_on(&path, &["--seed", "9", "--output", file.to_str().unwrap()]);
    assert_eq!(code(&c), 0);
    assert!(c.stdout.is_empty());
    assert_eq!(std::fs::read(&file).unwrap(), a.stdout);
    let d = run_on(&path, &["--seed", "10"]);
    assert_ne!(json(&a)["per_episode"], json(&d)["per_episode"]);
}

#[test]
fn raw_stores_go_through_the_pyramid() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("raw.omfs");
    let classes = (0..3)
        .map(|c| StoreClass {
            name: format!("class-{c}"),
            records: (0..6)
                .map(|r| (0..4 * 5 * 5).map(|i| ((i * (c + 2) + r) % 7) as f32 * 0.3 + 0.1).collect())
                .collect(),
        })
        .collect();
    FeatureStore::new(4, StoreLayout::Raw { height: 5, width: 5 }, false, classes)
        .unwrap()
        .save(&path)
        .unwrap();
    assert_eq!(code(&cli(&["validate", path.to_str().unwrap()])), 0);
    let out = run_on(&path, &[]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert_eq!(json(&out)["config"]["p"], 3);

    let mut args = vec!["sweep", "--features", path.to_str().unwrap()];
    args.extend_from_slice(&FAST[..FAST.len() - 2]);
    args.extend_from_slice(&["--pyramid", "1,2", "--tau", "0,1"]);
    let out = cli(&args);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let reports = json(&out);
    let reports = reports.as_array().unwrap();
    assert_eq!(reports.len(), 4);
    assert_eq!((reports[1]["config"]["tau"].clone(), reports[1]["config"]["p"].clone()), (0.into(), 2.into()));

    let out = run_on(&path, &["--pyramid", "6"]);
    assert_eq!(code(&out), 2);
}

#[test]
fn single_point_sweep_matches_run() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.omfs");
    write_synth(&path);
    let run = json(&run_on(&path, &["--tau", "2"]));
    let mut args = vec!["sweep", "--features", path.to_str().unwrap(), "--tau", "2"];
    args.extend_from_slice(FAST);
    let sweep = json(&cli(&args));
    assert_eq!(sweep.as_array().unwrap().len(), 1);
    assert_eq!(sweep[0], run);
}

#[test]
fn flag_errors_exit_2() {
    assert_eq!(code(&cli(&["run"])), 2);
    assert_eq!(code(&cli(&["run", "--synth", "--unknown"])), 2);
    assert_eq!(code(&cli(&["run", "--synth", "--weight-fn", "cubic"])), 2);
    assert_eq!(code(&cli(&["run", "--synth", "--ways", "30", "--episodes", "1"])), 2);
    assert_eq!(code(&cli(&["synth", "--classes", "2"])), 2);
}

#[test]
fn help_lists_every_flag() {
    let out = cli(&["run", "--help"]);
    assert_eq!(code(&out), 0);
    let help = String::from_utf8_lossy(&out.stdout);
    for flag in [
        "--features", "--synth", "--ways", "--shots", "--queries", "--episodes", "--tau", "--pyramid", "--gamma",
        "--alpha", "--lambda", "--lr", "--iters", "--geometry", "--weight-fn", "--anchor-init", "--weight-init",
        "--inductive", "--seed", "--output", "--threads",
    ] {
        assert!(help.contains(flag), "missing {flag}");
    }
    assert!(help.contains("pseudokm") && help.contains("quadratic") && help.contains("exact"));
}

#[test]
fn failing_episodes_abort_with_exit_4() {
    // Two opposite classes: every 2-way support mean is zero, so anchor
    // initialization fails in every episode.
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("opposite.omfs");
    let class = |name: &str, v: f32| StoreClass {
        name: name.into(),
        records: vec![vec![v, 0.0]; 4],
    };
    FeatureStore::new(2, StoreLayout::Pooled { p: 1 }, false, vec![class("east", 1.0), class("west", -1.0)])
        .unwrap()
        .save(&path)
        .unwrap();
    let out = cli(&[
        "run", "--features", path.to_str().unwrap(), "--ways", "2", "--shots", "1", "--queries", "1", "--pyramid", "1",
        "--episodes", "3", "--iters", "2",
    ]);
    assert_eq!(code(&out), 4, "{}", stderr(&out));
    assert!(stderr(&out).contains("3 of 3"), "{}", stderr(&out));
}

#[test]
fn default_synthetic_run_is_separable() {
    let out = cli(&[
        "run", "--synth", "--ways", "5", "--shots", "5", "--queries", "15", "--episodes", "100", "--tau", "14", "--seed",
        "7",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&out);
    assert!(report["mean_accuracy"].as_f64().unwrap() >= 0.99, "{report}");
    assert_eq!(report["failures"], 0);
}
