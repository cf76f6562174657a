//! Generate a synthetic dataset with planted task clusters and write it to disk.
//!
//! Usage: `cargo run --example synth_dataset [out_dir]`

use std::path::PathBuf;

use taskopt::synth::{self, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let out = std::env::args().nth(1).map(PathBuf::from).unwrap_or_else(|| std::env::temp_dir().join("taskopt_synth"));
    let spec = SynthSpec::default();
    let data = synth::generate(&spec)?;
    std::fs::create_dir_all(&out)?;
    data.write(&out)?;

    println!(
        "{} profiles, {} sensor trials, {} tasks in {} clusters",
        data.profiles.len(),
        data.sensors.len(),
        data.manifest.tasks.len(),
        spec.n_clusters
    );
    if let Some(ratio) = data.ground_truth.separation_ratio {
        println!("between/within cluster separation: {ratio:.1}");
    }
    for t in &data.manifest.tasks {
        println!("  {}  cluster {}  cyclic {}  w {}", t.id.as_str(), data.ground_truth.task_cluster[&t.id], t.cyclic, t.w);
    }
    println!("written to {}", out.display());
    Ok(())
}
