//! Time-normalize a raw cycle to 100 points and build the feature matrix.

use taskopt::dataset::{self, CycleProfile, DEFAULT_PROFILE_LENGTH};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // a 37-sample cycle, as it might come off a treadmill trial
    let raw: Vec<f64> = (0..37).map(|i| (i as f64 / 36.0 * std::f64::consts::TAU).sin()).collect();
    let short = dataset::resample_linear(&raw, 10)?;
    println!("37 samples -> 10: {:?}", short.iter().map(|v| format!("{v:.3}")).collect::<Vec<_>>());

    let profile = CycleProfile {
        subject: "S01".into(),
        task: "normal_walk".into(),
        trial: "trial_01".into(),
        moment: raw.iter().map(|v| 0.8 * v).collect(),
        angle: raw.iter().map(|v| 0.4 * v).collect(),
        velocity: raw.iter().map(|v| 2.0 * v).collect(),
    };
    let fixed = profile.resampled(DEFAULT_PROFILE_LENGTH)?;
    let matrix = dataset::build_feature_matrix(&[fixed])?;
    println!("feature matrix: {} row(s) x {} columns", matrix.n_rows(), matrix.n_cols());
    Ok(())
}
