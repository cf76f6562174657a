//! Leave-one-subject-out comparison of the three training conditions.
//!
//! Usage: `cargo run --release --example loso_study [jobs]`

use taskopt::crossval::{self, FcnnModel, StudyOptions};
use taskopt::dataset;
use taskopt::nn::FcnnConfig;
use taskopt::pipeline::{self, ClusterSettings, PcaSettings};
use taskopt::synth::{self, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let jobs = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(1);
    let data = synth::generate(&SynthSpec {
        n_subjects: 6,
        ..SynthSpec::default()
    })?;
    let profiles = data
        .profiles
        .iter()
        .map(|p| p.resampled(dataset::DEFAULT_PROFILE_LENGTH))
        .collect::<Result<Vec<_>, _>>()?;
    let d = pipeline::discover(&profiles, &data.manifest, &PcaSettings::default(), &ClusterSettings::default(), 0)?;

    let model = FcnnModel {
        config: FcnnConfig {
            max_epochs: 30,
            ..FcnnConfig::default()
        },
    };
    let options = StudyOptions {
        jobs,
        ..StudyOptions::default()
    };
    let study = crossval::run_study(&data.sensors, &d.selection.conditions, &model, &options)?;
    for f in &study.folds {
        let r = &f.result;
        println!("{:<9} {}  RMSE {:.4}  n_test {}", r.condition.as_str(), r.left_out, r.rmse, r.n_test);
    }
    for s in &study.summary {
        println!("{:<9} mean RMSE {:.4} ± {:.4} over {} folds", s.condition.as_str(), s.rmse_mean, s.rmse_std, s.n_folds);
    }
    Ok(())
}
