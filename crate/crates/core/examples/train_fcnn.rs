//! Train the hip-moment network on one subject split and report validation error.

use taskopt::crossval::{self, TRAIN_FRACTION};
use taskopt::nn::{self, Fcnn, FcnnConfig, Standardizer};
use taskopt::synth::{self, SynthSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth::generate(&SynthSpec {
        n_subjects: 4,
        ..SynthSpec::default()
    })?;
    let folds = crossval::loso_folds(&data.sensors)?;
    let fold = &folds[0];
    let (train, val) = crossval::split_train_val(&fold.train_pool, TRAIN_FRACTION, 0)?;
    let mut train = crossval::to_samples(&train);
    let mut val = crossval::to_samples(&val);
    let scaler = Standardizer::fit(&train.x);
    train.x = scaler.apply(&train.x);
    val.x = scaler.apply(&val.x);

    let config = FcnnConfig {
        max_epochs: 40,
        ..FcnnConfig::default()
    };
    let model = Fcnn::seeded(&config)?;
    println!("network {:?} -> {} parameters", model.hidden_widths(), model.parameter_count());
    let outcome = nn::train(model, &train, &val, &config)?;
    for rec in outcome.history.iter().step_by(5) {
        println!("epoch {:>3}  train {:.5}  val {:.5}", rec.epoch, rec.train_mse, rec.val_mse);
    }
    println!(
        "best epoch {} (val RMSE {:.4} Nm/kg), stopped early: {}",
        outcome.best_epoch,
        outcome.best_val_mse.sqrt(),
        outcome.stopped_early
    );
    Ok(())
}
