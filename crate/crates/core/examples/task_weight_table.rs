//! Representativeness scores for a clustered dataset and the resulting
//! training conditions.

use taskopt::dataset;
use taskopt::pipeline::{self, ClusterSettings, PcaSettings};
use taskopt::synth::{self, SynthSpec};
use taskopt::taskselect::Condition;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth::generate(&SynthSpec::default())?;
    let profiles = data
        .profiles
        .iter()
        .map(|p| p.resampled(dataset::DEFAULT_PROFILE_LENGTH))
        .collect::<Result<Vec<_>, _>>()?;
    let d = pipeline::discover(&profiles, &data.manifest, &PcaSettings::default(), &ClusterSettings::default(), 0)?;

    println!("{:>7} {:<8} {:>5} {:>5} {:>5} {:>4} {:>7}", "cluster", "task", "A/B", "A/C", "S/S", "w", "R");
    for row in &d.selection.table {
        println!(
            "{:>7} {:<8} {:>5.3} {:>5.3} {:>5.3} {:>4.1} {:>7.5}",
            row.cluster,
            row.task.as_str(),
            row.a_over_b(),
            row.a_over_c(),
            row.s_over_total(),
            row.w,
            row.r
        );
    }
    for c in [Condition::All, Condition::Optimized, Condition::Cyclic] {
        let set = d.selection.conditions.get(c);
        println!("{:<9} {:>2} tasks: {:?}", c.as_str(), set.tasks.len(), set.tasks.iter().map(|t| t.as_str()).collect::<Vec<_>>());
    }
    Ok(())
}
