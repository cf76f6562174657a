//! One-way ANOVA, pairwise t-tests with Bonferroni correction, and percent
//! reduction across matched folds.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{mean, sample_std};

pub const ALPHA: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("need at least 2 groups, got {0}")]
    TooFewGroups(usize),
    #[error("group {index} has {len} values, need at least 2")]
    GroupTooSmall { index: usize, len: usize },
    #[error("paired comparison needs equal lengths, got {0} and {1}")]
    LengthMismatch(usize, usize),
    #[error("baseline entry {0} is zero")]
    ZeroBaseline(usize),
    #[error("empty input")]
    Empty,
    #[error("non-finite value in input")]
    NonFinite,
}

pub type Result<T> = std::result::Result<T, StatsError>;

// ---------------------------------------------------------------------------
// Special functions
// ---------------------------------------------------------------------------

/// ln Γ(x) for x > 0 (Lanczos, g = 7, n = 9).
pub fn ln_gamma(x: f64) -> f64 {
    const G: f64 = 7.0;
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_9,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_1,
        -176.615_029_162_140_6,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_572e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // reflection
        let pi = std::f64::consts::PI;
        return (pi / (pi * x).sin()).ln() - ln_gamma(1.0 - x);
    }
    let x = x - 1.0;
    let mut a = COEF[0];
    let t = x + G + 0.5;
    for (i, c) in COEF.iter().enumerate().skip(1) {
        a += c / (x + i as f64);
    }
    0.5 * (2.0 * std::f64::consts::PI).ln() + (x + 0.5) * t.ln() - t + a.ln()
}

const BETA_TOL: f64 = 1e-12;
const BETA_MAX_ITER: usize = 300;

/// Continued fraction for the incomplete beta (modified Lentz).
fn beta_cf(a: f64, b: f64, x: f64) -> f64 {
    const TINY: f64 = 1e-300;
    let qab = a + b;
    let qap = a + 1.0;
    let qam = a - 1.0;
    let mut c = 1.0;
    let mut d = 1.0 - qab * x / qap;
    if d.abs() < TINY {
        d = TINY;
    }
    d = 1.0 / d;
    let mut h = d;
    for m in 1..=BETA_MAX_ITER {
        let m = m as f64;
        let m2 = 2.0 * m;
        let aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        h *= d * c;
        let aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if d.abs() < TINY {
            d = TINY;
        }
        c = 1.0 + aa / c;
        if c.abs() < TINY {
            c = TINY;
        }
        d = 1.0 / d;
        let del = d * c;
        h *= del;
        if (del - 1.0).abs() < BETA_TOL {
            break;
        }
    }
    h
}

/// Regularized incomplete beta I_x(a, b), a, b > 0, clamped to [0, 1].
pub fn incomplete_beta(x: f64, a: f64, b: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x >= 1.0 {
        return 1.0;
    }
    let ln_front = ln_gamma(a + b) - ln_gamma(a) - ln_gamma(b) + a * x.ln() + b * (1.0 - x).ln();
    let front = ln_front.exp();
    let v = if x < (a + 1.0) / (a + b + 2.0) {
        front * beta_cf(a, b, x) / a
    } else {
        1.0 - front * beta_cf(b, a, 1.0 - x) / b
    };
    v.clamp(0.0, 1.0)
}

/// P(F > f) for an F(d1, d2) variable.
pub fn f_survival(f: f64, d1: f64, d2: f64) -> f64 {
    if f.is_nan() {
        return f64::NAN;
    }
    if f <= 0.0 {
        return 1.0;
    }
    if f.is_infinite() {
        return 0.0;
    }
    incomplete_beta(d2 / (d2 + d1 * f), d2 / 2.0, d1 / 2.0)
}

/// Two-tailed P(|T| > |t|) for Student's t with `df` degrees of freedom.
pub fn t_two_tailed(t: f64, df: f64) -> f64 {
    if t.is_infinite() {
        return 0.0;
    }
    incomplete_beta(df / (df + t * t), df / 2.0, 0.5)
}

// ---------------------------------------------------------------------------
// ANOVA
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaResult {
    pub f_stat: f64,
    pub df_between: usize,
    pub df_within: usize,
    pub p_value: f64,
    /// Set when the within-group variance is zero.
    pub degenerate: bool,
}

impl AnovaResult {
    pub fn significant(&self) -> bool {
        self.p_value < ALPHA
    }
}

fn check_finite(v: &[f64]) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(StatsError::NonFinite)
    }
}

pub fn one_way_anova(groups: &[&[f64]]) -> Result<AnovaResult> {
    if groups.len() < 2 {
        return Err(StatsError::TooFewGroups(groups.len()));
    }
    for (index, g) in groups.iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::GroupTooSmall { index, len: g.len() });
        }
        check_finite(g)?;
    }
    let n: usize = groups.iter().map(|g| g.len()).sum();
    let k = groups.len();
    let grand = groups.iter().flat_map(|g| g.iter()).sum::<f64>() / n as f64;
    let mut ssb = 0.0;
    let mut ssw = 0.0;
    for g in groups {
        let m = mean(g);
        ssb += g.len() as f64 * (m - grand) * (m - grand);
        ssw += g.iter().map(|v| (v - m) * (v - m)).sum::<f64>();
    }
    let df_between = k - 1;
    let df_within = n - k;
    // sums of squares below this are rounding noise relative to the data
    let scale = groups
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| (v - grand) * (v - grand))
        .sum::<f64>()
        .max(grand * grand)
        .max(f64::MIN_POSITIVE);
    let zero = |s: f64| s <= 1e-24 * scale;
    let (f_stat, p_value, degenerate) = match (zero(ssb), zero(ssw)) {
        (true, true) => (0.0, 1.0, true),
        (false, true) => (f64::INFINITY, 0.0, true),
        (true, false) => (0.0, 1.0, false),
        (false, false) => {
            let f = (ssb / df_between as f64) / (ssw / df_within as f64);
            (f, f_survival(f, df_between as f64, df_within as f64), false)
        }
    };
    Ok(AnovaResult {
        f_stat,
        df_between,
        df_within,
        p_value,
        degenerate,
    })
}

// ---------------------------------------------------------------------------
// Pairwise comparisons
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t_stat: f64,
    pub df: f64,
    pub p_value: f64,
    /// Zero variance in the denominator; t is 0 or ±∞ by convention.
    pub degenerate: bool,
}

fn t_from_parts(diff: f64, se: f64, df: f64) -> TTest {
    if se == 0.0 || !se.is_finite() {
        if diff == 0.0 {
            return TTest {
                t_stat: 0.0,
                df,
                p_value: 1.0,
                degenerate: true,
            };
        }
        return TTest {
            t_stat: diff.signum() * f64::INFINITY,
            df,
            p_value: 0.0,
            degenerate: true,
        };
    }
    let t = diff / se;
    TTest {
        t_stat: t,
        df,
        p_value: t_two_tailed(t, df),
        degenerate: false,
    }
}

/// Paired two-tailed t-test on `a − b`.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(StatsError::GroupTooSmall { index: 0, len: a.len() });
    }
    check_finite(a)?;
    check_finite(b)?;
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let n = d.len() as f64;
    let md = mean(&d);
    let sd = sample_std(&d);
    // differences that agree to rounding count as zero-variance
    let sd = if sd <= 1e-12 * md.abs() { 0.0 } else { sd };
    Ok(t_from_parts(md, sd / n.sqrt(), n - 1.0))
}

/// Welch's unequal-variance two-tailed t-test on `mean(a) − mean(b)`.
pub fn welch_t(a: &[f64], b: &[f64]) -> Result<TTest> {
    for (index, g) in [a, b].into_iter().enumerate() {
        if g.len() < 2 {
            return Err(StatsError::GroupTooSmall { index, len: g.len() });
        }
        check_finite(g)?;
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (va, vb) = (sample_std(a).powi(2) / na, sample_std(b).powi(2) / nb);
    let se = (va + vb).sqrt();
    let df = if va + vb > 0.0 {
        (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0))
    } else {
        na + nb - 2.0
    };
    Ok(t_from_parts(mean(a) - mean(b), se, df))
}

pub fn bonferroni(p_raw: f64, m: usize) -> f64 {
    (p_raw * m as f64).min(1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reduction {
    pub mean: f64,
    pub std: f64,
}

/// Per-fold `(baseline − improved) / baseline` in percent, as mean and
/// sample std.
pub fn percent_reduction(baseline: &[f64], improved: &[f64]) -> Result<Reduction> {
    if baseline.len() != improved.len() {
        return Err(StatsError::LengthMismatch(baseline.len(), improved.len()));
    }
    if baseline.is_empty() {
        return Err(StatsError::Empty);
    }
    if let Some(i) = baseline.iter().position(|&b| b == 0.0) {
        return Err(StatsError::ZeroBaseline(i));
    }
    let r: Vec<f64> = baseline
        .iter()
        .zip(improved)
        .map(|(b, i)| 100.0 * (b - i) / b)
        .collect();
    Ok(Reduction {
        mean: mean(&r),
        std: sample_std(&r),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseResult {
    pub pair: (String, String),
    pub t_stat: f64,
    pub df: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    /// `mean(first) − mean(second)`
    pub mean_diff: f64,
    /// Reduction of `first` relative to `second` as the baseline; absent when
    /// a baseline entry is zero or the comparison is unpaired.
    pub pct_reduction_mean: Option<f64>,
    pub pct_reduction_std: Option<f64>,
    pub degenerate: bool,
}

impl PairwiseResult {
    pub fn significant(&self) -> bool {
        self.p_adjusted < ALPHA
    }
}

/// Every unordered pair of named groups, in input order. `m` is the
/// Bonferroni multiplier (usually the number of pairs).
pub fn pairwise_bonferroni(groups: &[(&str, &[f64])], paired: bool, m: usize) -> Result<Vec<PairwiseResult>> {
    let mut out = Vec::new();
    for i in 0..groups.len() {
        for j in i + 1..groups.len() {
            let (na, a) = groups[i];
            let (nb, b) = groups[j];
            let t = if paired { paired_t(a, b)? } else { welch_t(a, b)? };
            let red = if paired { percent_reduction(b, a).ok() } else { None };
            out.push(PairwiseResult {
                pair: (na.to_string(), nb.to_string()),
                t_stat: t.t_stat,
                df: t.df,
                p_raw: t.p_value,
                p_adjusted: bonferroni(t.p_value, m),
                mean_diff: mean(a) - mean(b),
                pct_reduction_mean: red.as_ref().map(|r| r.mean),
                pct_reduction_std: red.as_ref().map(|r| r.std),
                degenerate: t.degenerate,
            });
        }
    }
    Ok(out)
}

/// ANOVA plus post-hoc comparisons for one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub metric: String,
    pub anova: AnovaResult,
    pub pairwise: Vec<PairwiseResult>,
}

pub fn compare_conditions(metric: &str, groups: &[(&str, &[f64])], paired: bool) -> Result<MetricStats> {
    let values: Vec<&[f64]> = groups.iter().map(|(_, v)| *v).collect();
    let anova = one_way_anova(&values)?;
    let m = groups.len() * (groups.len() - 1) / 2;
    let pairwise = pairwise_bonferroni(groups, paired, m)?;
    Ok(MetricStats {
        metric: metric.to_string(),
        anova,
        pairwise,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub alpha: f64,
    pub paired: bool,
    pub metrics: Vec<MetricStats>,
}

impl StatsReport {
    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json + "\n")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ln_gamma_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-12);
        assert!((ln_gamma(5.0) - 24f64.ln()).abs() < 1e-12);
        assert!((ln_gamma(0.5) - std::f64::consts::PI.sqrt().ln()).abs() < 1e-12);
    }

    #[test]
    fn incomplete_beta_closed_forms() {
        // I_x(1, 1) = x; I_x(a, 1) = x^a
        for &x in &[0.1, 0.5, 0.9] {
            assert!((incomplete_beta(x, 1.0, 1.0) - x).abs() < 1e-12);
            assert!((incomplete_beta(x, 3.0, 1.0) - x.powi(3)).abs() < 1e-12);
        }
        assert_eq!(incomplete_beta(0.0, 2.0, 3.0), 0.0);
        assert_eq!(incomplete_beta(1.0, 2.0, 3.0), 1.0);
    }

    #[test]
    fn t_test_reference_value() {
        // t = 2.228 at df = 10 is the two-tailed 5% critical value
        assert!((t_two_tailed(2.228_138_851_986, 10.0) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn anova_hand_example() {
        let r = one_way_anova(&[&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]]).unwrap();
        assert_eq!((r.df_between, r.df_within), (1, 4));
        assert!((r.f_stat - 1.5).abs() < 1e-12);
        assert!(!r.degenerate);
        // two-group ANOVA equals the pooled t-test with t² = F
        let t = 1.5f64.sqrt();
        assert!((r.p_value - t_two_tailed(t, 4.0)).abs() < 1e-12);
    }

    #[test]
    fn anova_identical_groups() {
        let g = [1.0, 2.0, 3.0];
        let r = one_way_anova(&[&g, &g, &g]).unwrap();
        assert_eq!(r.f_stat, 0.0);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn anova_degenerate_within() {
        let r = one_way_anova(&[&[1.0, 1.0], &[1.0, 1.0]]).unwrap();
        assert!(r.degenerate && r.f_stat == 0.0 && r.p_value == 1.0);
        let r = one_way_anova(&[&[1.0, 1.0], &[2.0, 2.0]]).unwrap();
        assert!(r.degenerate && r.f_stat.is_infinite() && r.p_value == 0.0);
    }

    #[test]
    fn anova_errors() {
        assert_eq!(one_way_anova(&[&[1.0, 2.0]]), Err(StatsError::TooFewGroups(1)));
        assert_eq!(
            one_way_anova(&[&[1.0, 2.0], &[3.0]]),
            Err(StatsError::GroupTooSmall { index: 1, len: 1 })
        );
    }

    #[test]
    fn bonferroni_clamps() {
        assert!((bonferroni(0.02, 3) - 0.06).abs() < 1e-15);
        assert_eq!(bonferroni(0.5, 3), 1.0);
    }

    #[test]
    fn paired_degenerate_cases() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let t = paired_t(&a, &a).unwrap();
        assert_eq!((t.t_stat, t.p_value, t.degenerate), (0.0, 1.0, true));
        let b = [0.0, 1.0, 2.0, 3.0];
        let t = paired_t(&a, &b).unwrap();
        assert!(t.t_stat.is_infinite() && t.p_value == 0.0 && t.degenerate);
        assert_eq!(paired_t(&a, &b[..3]), Err(StatsError::LengthMismatch(4, 3)));
    }

    #[test]
    fn percent_reduction_examples() {
        let r = percent_reduction(&[2.0, 2.0], &[1.0, 1.0]).unwrap();
        assert_eq!((r.mean, r.std), (50.0, 0.0));
        let r = percent_reduction(&[0.4, 0.5], &[0.4, 0.5]).unwrap();
        assert_eq!((r.mean, r.std), (0.0, 0.0));
        assert_eq!(percent_reduction(&[1.0, 0.0], &[1.0, 1.0]), Err(StatsError::ZeroBaseline(1)));
    }

    #[test]
    fn pairwise_orders_and_adjusts() {
        let a = [0.30, 0.28, 0.33, 0.29];
        let b = [0.38, 0.40, 0.35, 0.41];
        let c = [0.31, 0.27, 0.32, 0.30];
        let res = pairwise_bonferroni(&[("optimized", &a), ("cyclic", &b), ("all", &c)], true, 3).unwrap();
        assert_eq!(res.len(), 3);
        assert_eq!(res[0].pair, ("optimized".into(), "cyclic".into()));
        for r in &res {
            assert!(r.p_adjusted >= r.p_raw);
            assert!((r.p_adjusted - bonferroni(r.p_raw, 3)).abs() < 1e-15);
        }
        assert!(res[0].pct_reduction_mean.unwrap() > 0.0);
        let welch = pairwise_bonferroni(&[("x", &a), ("y", &b)], false, 1).unwrap();
        assert!(welch[0].pct_reduction_mean.is_none());
    }
}
