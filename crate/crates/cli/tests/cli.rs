use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn floorlevel(dir: &Path, args: &[&str], env: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_floorlevel"));
    cmd.current_dir(dir).args(args);
    for (k, _) in std::env::vars().filter(|(k, _)| k.starts_with("FLOORLEVEL_")) {
        cmd.env_remove(k);
    }
    for (k, v) in env {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn ok(out: Output) -> Value {
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    serde_json::from_slice(&out.stdout).expect("json on stdout")
}

fn noiseless_model(dir: &Path) {
    let quiet = [("FLOORLEVEL_NOISELESS", "true")];
    ok(floorlevel(
        dir,
        &[
            "simulate", "--io", "--n", "12", "--out", "io", "--seed", "4",
        ],
        &quiet,
    ));
    ok(floorlevel(
        dir,
        &["train", "io", "--out", "model.json"],
        &[],
    ));
}

#[test]
fn zero_noise_survey_is_exact_with_per_building_heights() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let quiet = [("FLOORLEVEL_NOISELESS", "true")];
    assert_eq!(
        ok(floorlevel(
            d,
            &[
                "simulate",
                "--building",
                "survey",
                "--out",
                "trials",
                "--seed",
                "3"
            ],
            &quiet
        ))["sessions"],
        63
    );
    noiseless_model(d);
    let summary = ok(floorlevel(
        d,
        &[
            "evaluate",
            "trials",
            "--model",
            "model.json",
            "--per-building",
            "--out",
            "report.json",
        ],
        &[],
    ));
    assert_eq!(summary["trials"], 63);
    assert_eq!(summary["exact"], 1.0);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("report.json")).unwrap()).unwrap();
    let sum = ["exact", "within_one", "beyond_one"]
        .iter()
        .map(|k| report[k].as_f64().unwrap())
        .sum::<f64>();
    assert!((sum - 1.0).abs() < 1e-9);
    let csv = std::fs::read_to_string(d.join("report.csv")).unwrap();
    assert_eq!(csv.lines().count(), 64);
}

#[test]
fn ended_outdoors_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(floorlevel(
        d,
        &["simulate", "--building", "uris", "--n", "1", "--out", "out"],
        &[("FLOORLEVEL_END_OUTDOORS", "true")],
    ));
    let session = std::fs::read_dir(d.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let out = floorlevel(d, &["predict", session.to_str().unwrap()], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert_eq!(
        String::from_utf8(out.stdout).unwrap().trim(),
        r#"{"floor":"outdoors"}"#
    );
}

#[test]
fn predict_reports_a_floor() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(floorlevel(
        d,
        &[
            "simulate",
            "--building",
            "mudd",
            "--n",
            "1",
            "--floor",
            "7",
            "--out",
            "out",
            "--seed",
            "2",
        ],
        &[],
    ));
    let session = std::fs::read_dir(d.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let args = [
        "predict",
        session.to_str().unwrap(),
        "--building-type",
        "office",
    ];
    let p = ok(floorlevel(d, &args, &[("FLOORLEVEL_M_HAT_OFFICE", "3.85")]));
    assert_eq!(p["floor"], 7);
    assert_eq!(p["method"], "heuristic");
    assert!((p["m_delta"].as_f64().unwrap() - 23.1).abs() < 0.5);
}

#[test]
fn negative_learning_rate_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), "learning_rate = -1\n").unwrap();
    let out = floorlevel(
        d,
        &["--config", "run.toml", "train", ".", "--out", "m.json"],
        &[],
    );
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), "threshhold = 0.4\n").unwrap();
    let out = floorlevel(d, &["--config", "run.toml", "detect", "x.csv"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("threshhold"));
}

#[test]
fn flags_beat_environment_beats_file() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("run.toml"), "seed = 1\n").unwrap();
    let run = |args: &[&str], env: &[(&str, &str)]| {
        let mut all = vec![
            "--config",
            "run.toml",
            "simulate",
            "--building",
            "noco",
            "--n",
            "2",
        ];
        all.extend_from_slice(args);
        ok(floorlevel(d, &all, env));
    };
    let names = |sub: &str| {
        let mut v: Vec<String> = std::fs::read_dir(d.join(sub))
            .unwrap()
            .map(|e| e.unwrap().file_name().into_string().unwrap())
            .collect();
        v.sort();
        v
    };
    run(&["--out", "file"], &[]);
    run(&["--out", "env"], &[("FLOORLEVEL_SEED", "2")]);
    run(
        &["--out", "flag", "--seed", "1"],
        &[("FLOORLEVEL_SEED", "2")],
    );
    assert_eq!(names("file"), names("flag"));
    assert_ne!(names("file"), names("env"));
}

#[test]
fn missing_path_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = floorlevel(dir.path(), &["predict", "nope.csv"], &[]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.csv"));
}

#[test]
fn classify_then_detect_finds_the_entry() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    noiseless_model(d);
    ok(floorlevel(
        d,
        &[
            "simulate",
            "--building",
            "uris",
            "--n",
            "1",
            "--floor",
            "4",
            "--out",
            "t",
        ],
        &[("FLOORLEVEL_NOISELESS", "true")],
    ));
    let session = std::fs::read_dir(d.join("t"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let out = floorlevel(
        d,
        &[
            "classify",
            session.to_str().unwrap(),
            "--model",
            "model.json",
            "--out",
            "series.csv",
        ],
        &[],
    );
    assert!(out.status.success());
    let out = floorlevel(
        d,
        &[
            "detect",
            "series.csv",
            "--out",
            "tr.csv",
            "--jaccard",
            "j.csv",
        ],
        &[],
    );
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let transitions = std::fs::read_to_string(d.join("tr.csv")).unwrap();
    let rows: Vec<&str> = transitions.lines().collect();
    assert_eq!(rows[0], "index,direction");
    assert_eq!(rows.len(), 2);
    assert!(rows[1].ends_with("into_building"));
    assert!(std::fs::read_to_string(d.join("j.csv"))
        .unwrap()
        .starts_with("window,j1,j2,flagged"));
}

#[test]
fn cluster_recovers_visited_floors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    for f in ["2", "5", "9"] {
        ok(floorlevel(
            d,
            &[
                "simulate",
                "--building",
                "uris",
                "--n",
                "3",
                "--floor",
                f,
                "--out",
                "visits",
                "--seed",
                f,
            ],
            &[],
        ));
    }
    let summary = ok(floorlevel(
        d,
        &[
            "cluster",
            "visits",
            "--building",
            "Uris Hall",
            "--out",
            "clusters.json",
        ],
        &[],
    ));
    assert_eq!(summary["sessions"], 9);
    let reps: Vec<f64> = summary["representatives"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_f64().unwrap())
        .collect();
    let truth = [5.0, 15.8, 29.8];
    assert_eq!(reps.len(), 3);
    for (r, t) in reps.iter().zip(truth) {
        assert!((r - t).abs() < 0.5, "{r} vs {t}");
    }
    // a new visit to floor 5 lands in the middle cluster
    ok(floorlevel(
        d,
        &[
            "simulate",
            "--building",
            "uris",
            "--n",
            "1",
            "--floor",
            "5",
            "--out",
            "new",
            "--seed",
            "99",
        ],
        &[],
    ));
    let session = std::fs::read_dir(d.join("new"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .find(|p| p.extension().is_some_and(|e| e == "csv"))
        .unwrap();
    let p = ok(floorlevel(
        d,
        &[
            "predict",
            session.to_str().unwrap(),
            "--cluster-model",
            "clusters.json",
        ],
        &[],
    ));
    assert_eq!(p["method"], "cluster");
    assert_eq!(p["cluster_index"], 1);
}

#[test]
fn training_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(floorlevel(
        d,
        &["simulate", "--io", "--n", "4", "--out", "io"],
        &[],
    ));
    ok(floorlevel(
        d,
        &["train", "io", "--kind", "logistic", "--out", "a.json"],
        &[],
    ));
    ok(floorlevel(
        d,
        &["train", "io", "--kind", "logistic", "--out", "b.json"],
        &[],
    ));
    assert_eq!(
        std::fs::read(d.join("a.json")).unwrap(),
        std::fs::read(d.join("b.json")).unwrap()
    );
    assert_eq!(
        std::fs::read(d.join("a.history.csv")).unwrap(),
        std::fs::read(d.join("b.history.csv")).unwrap()
    );
}
