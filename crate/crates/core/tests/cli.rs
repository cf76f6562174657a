use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn taskopt(config: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_taskopt"))
        .args(args)
        .arg("--config")
        .arg(config)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, conditions: &[&str]) -> PathBuf {
    let cfg = serde_json::json!({
        "paths": {
            "profiles": "data/profiles.csv",
            "sensors": "data/sensors.csv",
            "tasks": "data/tasks.json",
            "output_dir": "out"
        },
        "cluster": { "k_min": 2, "k_max": 5, "restarts": 3 },
        "nn": { "hidden": [12, 12], "max_epochs": 4, "patience": 2 },
        "study": { "conditions": conditions },
        "seed": 3,
        "synth": {
            "n_subjects": 3,
            "n_tasks": 6,
            "n_clusters": 3,
            "cyclic_clusters": 1,
            "cycle_samples": [12, 16]
        }
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn stage_order_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &["all", "optimized", "cyclic"]);
    let out = taskopt(&cfg, &["cluster"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("taskopt ingest"), "{}", stderr(&out));

    let out = taskopt(&cfg, &["train"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("taskopt select"), "{}", stderr(&out));
}

#[test]
fn invalid_config_lists_every_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("config.json");
    std::fs::write(
        &path,
        r#"{"pca": {"variance_threshold": 2.0}, "cluster": {"k_min": 1}, "nn": {"batch_size": 1}}"#,
    )
    .unwrap();
    let out = taskopt(&path, &["ingest"]);
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    for field in ["pca.variance_threshold", "cluster.k_min", "nn.batch_size"] {
        assert!(err.contains(field), "{err}");
    }
}

#[test]
fn runtime_failure_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &["all"]);
    // no synthetic data written, so the inputs are missing
    let out = taskopt(&cfg, &["ingest"]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
}

#[test]
fn full_pipeline_on_synthetic_data() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &["all", "optimized", "cyclic"]);
    for cmd in ["synth", "ingest", "cluster", "select", "train", "report"] {
        let out = taskopt(&cfg, &[cmd, "--jobs", "2"]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", stderr(&out));
    }
    let out = dir.path().join("out");
    for artifact in [
        "ingest/feature_matrix.json",
        "ingest/ingest_report.json",
        "cluster/pca_model.json",
        "cluster/cluster_model.json",
        "cluster/silhouette.csv",
        "cluster/pca_scatter.svg",
        "cluster/pca_scores.csv",
        "select/task_weights.csv",
        "select/conditions.json",
        "train/fold_results.csv",
        "train/summary.csv",
        "train/checkpoints/optimized_S01.json",
        "train/history/cyclic_S02.csv",
        "report/summary.csv",
        "report/stats.json",
        "report/performance.svg",
        "report/performance.csv",
        "report/traces.csv",
        "run_manifest.json",
    ] {
        assert!(out.join(artifact).is_file(), "missing {artifact}");
    }
    let folds = std::fs::read_to_string(out.join("train/fold_results.csv")).unwrap();
    assert!(folds.starts_with("condition,left_out_subject,rmse_nm_per_kg,r2,n_train,n_val,n_test,seed"));
    assert_eq!(folds.lines().count(), 1 + 3 * 3);
    let stats: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("report/stats.json")).unwrap()).unwrap();
    let rmse = &stats["stats"]["metrics"][0];
    assert_eq!(rmse["anova"]["df"][0], 2);
    assert_eq!(rmse["pairwise"].as_array().unwrap().len(), 3);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("run_manifest.json")).unwrap()).unwrap();
    for stage in ["synth", "ingest", "cluster", "select", "train", "report"] {
        assert!(manifest["stages"][stage]["config_sha256"].is_string(), "{stage}");
    }

    // rerunning a stage with unchanged inputs reproduces its bytes
    let before: Vec<Vec<u8>> = ["cluster/cluster_model.json", "cluster/silhouette.csv", "train/fold_results.csv"]
        .iter()
        .map(|a| std::fs::read(out.join(a)).unwrap())
        .collect();
    for cmd in ["cluster", "train"] {
        assert_eq!(taskopt(&cfg, &[cmd]).status.code(), Some(0));
    }
    let after: Vec<Vec<u8>> = ["cluster/cluster_model.json", "cluster/silhouette.csv", "train/fold_results.csv"]
        .iter()
        .map(|a| std::fs::read(out.join(a)).unwrap())
        .collect();
    assert_eq!(before, after);
}

#[test]
fn single_condition_report_notes_missing_stats() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &["optimized"]);
    for cmd in ["synth", "ingest", "cluster", "select", "train", "report"] {
        let out = taskopt(&cfg, &[cmd]);
        assert_eq!(out.status.code(), Some(0), "{cmd}: {}", stderr(&out));
    }
    let stats: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("out/report/stats.json")).unwrap(),
    )
    .unwrap();
    assert!(stats["stats"].is_null());
    assert!(stats["note"].as_str().unwrap().contains("needs ≥ 2 conditions"));
}
