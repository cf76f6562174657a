//! Fit PCA on a synthetic feature matrix and keep components up to 70% variance.

use taskopt::dataset;
use taskopt::pca;
use taskopt::synth::{self, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth::generate(&SynthSpec::default())?;
    let profiles = data
        .profiles
        .iter()
        .map(|p| p.resampled(dataset::DEFAULT_PROFILE_LENGTH))
        .collect::<Result<Vec<_>, _>>()?;
    let matrix = dataset::build_feature_matrix(&profiles)?;
    let model = pca::pca_fit(&matrix.rows, true)?;
    let (p, cumulative) = pca::select_components(&model.explained_variance_ratio, 0.70)?;

    let mut running = 0.0;
    for (k, r) in model.explained_variance_ratio.iter().take(8).enumerate() {
        running += r;
        println!("PC{:<2} {:>6.2}%  cumulative {:>6.2}%", k + 1, 100.0 * r, 100.0 * running);
    }
    println!("kept {p} components ({:.1}% of variance, {:?} route)", 100.0 * cumulative, model.route);
    let scores = pca::pca_transform(&model, &matrix.rows, p)?;
    println!("scores: {} x {}", scores.rows(), scores.cols());
    Ok(())
}
