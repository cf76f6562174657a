//! One-way ANOVA across conditions followed by Bonferroni-corrected paired t-tests.

use taskopt::stats;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    // per-subject RMSE (Nm/kg) under each condition
    let all = [0.27, 0.31, 0.25, 0.29, 0.33, 0.28, 0.30, 0.26];
    let optimized = [0.29, 0.32, 0.27, 0.30, 0.35, 0.30, 0.31, 0.28];
    let cyclic = [0.41, 0.47, 0.39, 0.44, 0.52, 0.43, 0.45, 0.40];

    let result = stats::compare_conditions("rmse", &[("all", &all), ("optimized", &optimized), ("cyclic", &cyclic)], true)?;
    let a = &result.anova;
    println!("ANOVA F({}, {}) = {:.3}, p = {:.2e}", a.df_between, a.df_within, a.f_stat, a.p_value);
    for pw in &result.pairwise {
        let reduction = pw
            .pct_reduction_mean
            .map(|m| format!("{m:.1}% lower error than {}", pw.pair.1))
            .unwrap_or_default();
        println!(
            "{} vs {}: t({}) = {:.3}, p_adj = {:.2e}  {}",
            pw.pair.0, pw.pair.1, pw.df, pw.t_stat, pw.p_adjusted, reduction
        );
    }
    Ok(())
}
