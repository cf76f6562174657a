//! Every CLI stage in order against a freshly generated dataset.
//!
//! Usage: `cargo run --release --example full_pipeline [work_dir]`

use std::path::PathBuf;

fn main() {
    let work = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("taskopt_demo"));
    std::fs::create_dir_all(&work).expect("create work dir");
    let config = work.join("config.json");
    let body = serde_json::json!({
        "paths": { "profiles": "data/profiles.csv", "sensors": "data/sensors.csv",
                   "tasks": "data/tasks.json", "output_dir": "out" },
        "nn": { "max_epochs": 20 },
        "synth": { "n_subjects": 5 },
        "seed": 0
    });
    std::fs::write(&config, serde_json::to_string_pretty(&body).unwrap()).expect("write config");

    for (cmd, extra) in [
        ("synth", vec![]),
        ("ingest", vec![]),
        ("cluster", vec![]),
        ("select", vec![]),
        ("train", vec!["--jobs", "2"]),
        ("report", vec![]),
    ] {
        let mut args = vec!["taskopt", cmd, "--config", config.to_str().unwrap()];
        args.extend(extra);
        if taskopt::cli::run(args) != std::process::ExitCode::SUCCESS {
            eprintln!("taskopt {cmd} failed");
            return;
        }
        println!("taskopt {cmd}: ok");
    }
    let summary = std::fs::read_to_string(work.join("out/report/summary.csv")).unwrap_or_default();
    println!("{summary}");
}
