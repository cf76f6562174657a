//! Scan K = 2..=12 with k-means++ and pick the K with the best silhouette.

use taskopt::cluster;
use taskopt::dataset;
use taskopt::pipeline::{self, PcaSettings};
use taskopt::synth::{self, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth::generate(&SynthSpec::default())?;
    let profiles = data
        .profiles
        .iter()
        .map(|p| p.resampled(dataset::DEFAULT_PROFILE_LENGTH))
        .collect::<Result<Vec<_>, _>>()?;
    let matrix = dataset::build_feature_matrix(&profiles)?;
    let projection = pipeline::project(&matrix, &PcaSettings::default())?;

    let scan = cluster::select_k(&projection.scores, 2, 12, 0, cluster::DEFAULT_RESTARTS, cluster::DEFAULT_MAX_ITER)?;
    for (k, s) in &scan.table {
        let mark = if *k == scan.best_k { "  <- best" } else { "" };
        println!("K = {k:>2}  silhouette {s:.3}{mark}");
    }
    println!("cluster sizes at K = {}: {:?}", scan.best_k, scan.model.cluster_sizes());

    let majority = pipeline::task_majority(&scan.model.assignments, matrix.labels.iter().map(|l| l.task.clone()));
    let ari = pipeline::task_partition_ari(&majority, &data.ground_truth.task_cluster);
    println!("task partition ARI vs planted clusters: {ari:.3}");
    Ok(())
}
