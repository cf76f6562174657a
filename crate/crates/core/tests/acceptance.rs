//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any fails.
//!
//! Set `TASKOPT_DATASET_DIR` to a directory holding `profiles.csv`,
//! `sensors.csv` and `tasks.json` in the documented formats to also run the
//! real-data check; it is skipped otherwise.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use taskopt::cluster::{self, adjusted_rand_index, kmeans, silhouette_score};
use taskopt::crossval::{self, FcnnModel, StudyOptions};
use taskopt::dataset::{self, TaskId, TaskManifest};
use taskopt::linalg::{self, Matrix};
use taskopt::nn::{Dropout, Fcnn, FcnnConfig};
use taskopt::pca;
use taskopt::pipeline::{self, ClusterSettings, PcaSettings};
use taskopt::stats;
use taskopt::synth::{self, SynthSpec};
use taskopt::taskselect::{self, Condition};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// Task-weight table
// ---------------------------------------------------------------------------

/// (cluster, task, A/B, A/C, S/11, w, printed R)
const REFERENCE_WEIGHTS: [(usize, &str, f64, f64, f64, f64, f64); 24] = [
    (1, "Lunges", 0.172, 0.470, 1.000, 0.9, 0.07280),
    (1, "Dynamic Walk", 0.128, 0.523, 1.000, 0.9, 0.06011),
    (1, "Tire Run", 0.122, 1.000, 1.000, 0.9, 0.11000),
    (2, "Lift Weight", 0.406, 0.977, 1.000, 0.8, 0.31715),
    (2, "Lunges", 0.165, 0.530, 1.000, 0.9, 0.07880),
    (2, "Ball Toss", 0.151, 0.941, 1.000, 0.8, 0.11365),
    (3, "Stairs Up", 0.438, 0.914, 0.909, 1.0, 0.36387),
    (3, "Normal Walk", 0.298, 0.493, 1.000, 1.0, 0.14672),
    (3, "Incline Walk", 0.182, 1.000, 1.000, 1.0, 0.18182),
    (4, "Jump", 0.906, 0.755, 1.000, 0.9, 0.61547),
    (4, "Curb Down", 0.047, 0.167, 0.273, 0.8, 0.00171),
    (4, "Dynamic Walk", 0.024, 0.045, 0.182, 0.9, 0.00018),
    (5, "Normal Walk", 0.531, 0.233, 0.727, 1.0, 0.08998),
    (5, "Dynamic Walk", 0.406, 0.295, 0.818, 0.9, 0.08838),
    (5, "Stairs Down", 0.031, 0.017, 0.091, 1.0, 0.00005),
    (6, "Stairs Down", 0.528, 0.950, 0.909, 1.0, 0.45581),
    (6, "Walk Backward", 0.287, 0.939, 1.000, 0.9, 0.24268),
    (6, "Dynamic Walk", 0.056, 0.136, 0.364, 0.9, 0.00248),
    (7, "Cutting", 0.686, 0.795, 1.000, 0.8, 0.43672),
    (7, "Curb Down", 0.137, 0.292, 0.455, 0.8, 0.01456),
    (7, "Curb Up", 0.137, 0.292, 0.545, 0.8, 0.01747),
    (8, "Sit to Stand", 0.393, 0.500, 1.000, 0.9, 0.17679),
    (8, "Jump", 0.167, 0.137, 0.727, 0.9, 0.01497),
    (8, "Turn and Step", 0.143, 0.600, 1.000, 0.8, 0.06857),
];

fn weight_table() -> Check {
    let mut worst: f64 = 0.0;
    for &(c, task, ab, ac, s, w, printed) in &REFERENCE_WEIGHTS {
        let r = taskselect::representativeness(ab, ac, s, w);
        let err = (r - printed).abs();
        worst = worst.max(err);
        ensure(err <= 1e-3, || format!("cluster {c} {task}: computed {r:.5}, printed {printed:.5}"))?;
    }
    Ok(format!("24 rows, max |ΔR| = {worst:.2e}"))
}

fn representative_set() -> Check {
    let ids: Vec<TaskId> = REFERENCE_WEIGHTS.iter().map(|r| TaskId::from(r.1)).collect();
    let winners = taskselect::pick_representatives(
        REFERENCE_WEIGHTS.iter().zip(&ids).map(|(r, id)| (r.0, id, r.6)),
    )
    .map_err(|e| e.to_string())?;
    let got: BTreeSet<&str> = winners.values().map(|t| t.as_str()).collect();
    let want: BTreeSet<&str> = [
        "Tire Run",
        "Lift Weight",
        "Stairs Up",
        "Jump",
        "Normal Walk",
        "Stairs Down",
        "Cutting",
        "Sit to Stand",
    ]
    .into_iter()
    .collect();
    ensure(got == want, || format!("got {got:?}"))?;
    Ok(format!("{got:?}"))
}

// ---------------------------------------------------------------------------
// PCA
// ---------------------------------------------------------------------------

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-3.0..3.0)).collect())
}

fn pca_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let mut worst_ortho: f64 = 0.0;
    let mut worst_recon: f64 = 0.0;
    let mut worst_eig: f64 = 0.0;
    for trial in 0..50 {
        let (n, d) = if trial % 5 == 4 { (4, 6) } else { (5, 4) };
        let x = random_matrix(n, d, &mut rng);
        for standardize in [true, false] {
            let model = pca::pca_fit(&x, standardize).map_err(|e| e.to_string())?;
            let p = model.n_components();
            let v = &model.components;
            for a in 0..p {
                for b in 0..p {
                    let want = if a == b { 1.0 } else { 0.0 };
                    worst_ortho = worst_ortho.max((linalg::dot(v.row(a), v.row(b)) - want).abs());
                }
            }
            let r = &model.explained_variance_ratio;
            ensure(r.windows(2).all(|w| w[1] <= w[0] + 1e-15), || format!("ratios not sorted: {r:?}"))?;
            ensure(r.iter().sum::<f64>() <= 1.0 + 1e-12, || format!("ratios sum above 1: {r:?}"))?;

            let z = model.standardize_rows(&x).map_err(|e| e.to_string())?;
            let scores = pca::pca_transform(&model, &x, p).map_err(|e| e.to_string())?;
            let back = model.inverse_transform(&scores).map_err(|e| e.to_string())?;
            for (a, b) in back.as_slice().iter().zip(z.as_slice()) {
                worst_recon = worst_recon.max((a - b).abs());
            }

            // independent eigensolver on the covariance of the standardized rows
            let zn = nalgebra::DMatrix::from_row_slice(n, d, z.as_slice());
            let cov = zn.transpose() * &zn / (n - 1) as f64;
            let eig = nalgebra::SymmetricEigen::new(cov);
            let mut order: Vec<usize> = (0..d).collect();
            order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
            let top = eig.eigenvalues[order[0]];
            for (k, &lambda) in model.explained_variance.iter().enumerate() {
                let oracle = eig.eigenvalues[order[k]];
                worst_eig = worst_eig.max((lambda - oracle).abs() / top);
                let u = eig.eigenvectors.column(order[k]);
                let overlap: f64 = (0..d).map(|j| u[j] * v[(k, j)]).sum();
                worst_eig = worst_eig.max(1.0 - overlap.abs());
            }
        }
    }
    ensure(worst_ortho < 1e-8, || format!("orthonormality error {worst_ortho:.2e}"))?;
    ensure(worst_recon < 1e-8, || format!("reconstruction error {worst_recon:.2e}"))?;
    ensure(worst_eig < 1e-8, || format!("eigen-oracle relative error {worst_eig:.2e}"))?;
    Ok(format!(
        "orthonormality {worst_ortho:.1e}, reconstruction {worst_recon:.1e}, eigen oracle {worst_eig:.1e}"
    ))
}

// ---------------------------------------------------------------------------
// Clustering
// ---------------------------------------------------------------------------

fn brute_force_inertia(points: &Matrix, k: usize) -> f64 {
    let n = points.rows();
    let d = points.cols();
    let mut best = f64::INFINITY;
    let mut labels = vec![0usize; n];
    let total = k.pow(n as u32);
    for code in 0..total {
        let mut c = code;
        for l in labels.iter_mut() {
            *l = c % k;
            c /= k;
        }
        let mut counts = vec![0usize; k];
        let mut sums = vec![vec![0.0; d]; k];
        for (i, &l) in labels.iter().enumerate() {
            counts[l] += 1;
            linalg::axpy(1.0, points.row(i), &mut sums[l]);
        }
        if counts.contains(&0) {
            continue;
        }
        let inertia: f64 = labels
            .iter()
            .enumerate()
            .map(|(i, &l)| {
                let centroid: Vec<f64> = sums[l].iter().map(|s| s / counts[l] as f64).collect();
                linalg::squared_distance(points.row(i), &centroid)
            })
            .sum();
        best = best.min(inertia);
    }
    best
}

fn clustering_suite() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(31);

    for trial in 0..20 {
        let x = random_matrix(60, 3, &mut rng);
        let m = kmeans(&x, 2 + trial % 5, trial as u64, 3, 300).map_err(|e| e.to_string())?;
        let t = &m.inertia_trace;
        ensure(t.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12)), || {
            format!("inertia rose within a run: {t:?}")
        })?;
    }

    // planted blobs: centers 10 apart, unit spread
    let centers = [[0.0, 0.0], [10.0, 0.0], [0.0, 10.0], [10.0, 10.0]];
    let mut rows = Vec::new();
    let mut truth = Vec::new();
    for (g, c) in centers.iter().enumerate() {
        for _ in 0..25 {
            rows.push(vec![c[0] + rng.random_range(-1.0..1.0), c[1] + rng.random_range(-1.0..1.0)]);
            truth.push(g);
        }
    }
    let blobs = Matrix::from_rows(&rows);
    let m = kmeans(&blobs, 4, 5, cluster::DEFAULT_RESTARTS, 300).map_err(|e| e.to_string())?;
    let ari = adjusted_rand_index(&m.assignments, &truth);
    ensure((ari - 1.0).abs() < 1e-12, || format!("planted-blob ARI {ari}"))?;

    let mut worst_gap: f64 = 0.0;
    for trial in 0..12 {
        let n = 5 + trial % 4;
        let k = 2 + trial % 2;
        let x = random_matrix(n, 2, &mut rng);
        let m = kmeans(&x, k, trial as u64, 20, 300).map_err(|e| e.to_string())?;
        let oracle = brute_force_inertia(&x, k);
        let gap = (m.inertia - oracle).abs() / oracle.max(1e-12);
        worst_gap = worst_gap.max(gap);
        ensure(gap < 1e-9, || format!("n={n} k={k}: k-means {} vs exhaustive {oracle}", m.inertia))?;
    }

    let line = Matrix::from_rows(&[[0.0], [0.1], [10.0], [10.1]]);
    let s = silhouette_score(&line, &[0, 0, 1, 1]).map_err(|e| e.to_string())?;
    // hand value: a = 0.1, b ≈ 10.0 for every point
    let hand = [(10.05 - 0.1) / 10.05, (9.95 - 0.1) / 9.95, (9.95 - 0.1) / 9.95, (10.05 - 0.1) / 10.05];
    let hand = hand.iter().sum::<f64>() / 4.0;
    ensure((s - 0.990).abs() < 1e-3 && (s - hand).abs() < 1e-12, || format!("silhouette {s}, hand {hand}"))?;
    Ok(format!("blob ARI {ari:.3}, exhaustive gap {worst_gap:.1e}, silhouette {s:.4}"))
}

// ---------------------------------------------------------------------------
// FCNN gradients
// ---------------------------------------------------------------------------

fn gradient_check() -> Check {
    let config = FcnnConfig {
        input_dim: 5,
        hidden: vec![7, 6, 5],
        output_dim: 1,
        dropout_rate: 0.2,
        seed: 41,
        ..FcnnConfig::default()
    };
    let net = Fcnn::seeded(&config).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let b = 8;
    let x = random_matrix(b, 5, &mut rng);
    let y = random_matrix(b, 1, &mut rng);
    let keep = 1.0 - config.dropout_rate;
    let masks: Vec<Matrix> = config
        .hidden
        .iter()
        .map(|&w| {
            let data = (0..b * w)
                .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            Matrix::from_vec(b, w, data)
        })
        .collect();
    let (_, grads) = net.gradients(&x, &y, Dropout::Fixed(&masks)).map_err(|e| e.to_string())?;
    let analytic: Vec<Vec<f64>> = grads.slices().iter().map(|s| s.to_vec()).collect();
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    for (k, slice) in analytic.iter().enumerate() {
        for (j, &a) in slice.iter().enumerate() {
            let mut plus = net.clone();
            plus.parameters_mut()[k][j] += h;
            let mut minus = net.clone();
            minus.parameters_mut()[k][j] -= h;
            let lp = plus.loss(&x, &y, Dropout::Fixed(&masks)).map_err(|e| e.to_string())?;
            let lm = minus.loss(&x, &y, Dropout::Fixed(&masks)).map_err(|e| e.to_string())?;
            let numeric = (lp - lm) / (2.0 * h);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-6);
            worst = worst.max(rel);
            count += 1;
        }
    }
    ensure(count == net.parameter_count(), || "not every parameter was checked".into())?;
    ensure(worst < 1e-4, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("{count} parameters, max relative error {worst:.2e}"))
}

// ---------------------------------------------------------------------------
// Statistics
// ---------------------------------------------------------------------------

fn stats_suite() -> Check {
    let r = stats::one_way_anova(&[&[1.0, 2.0, 3.0], &[2.0, 3.0, 4.0]]).map_err(|e| e.to_string())?;
    ensure((r.f_stat - 1.5).abs() < 1e-12 && r.df_between == 1 && r.df_within == 4, || format!("{r:?}"))?;
    let g = [1.0, 2.0, 3.0];
    let r = stats::one_way_anova(&[&g, &g, &g]).map_err(|e| e.to_string())?;
    ensure(r.f_stat == 0.0 && r.p_value == 1.0, || format!("identical groups: {r:?}"))?;
    ensure((stats::bonferroni(0.02, 3) - 0.06).abs() < 1e-15, || "bonferroni 0.02×3".into())?;
    ensure(stats::bonferroni(0.4, 3) == 1.0, || "bonferroni clamp".into())?;

    let mut worst: f64 = 0.0;
    for &a in &[0.5, 1.0, 2.5, 7.0, 30.0] {
        for &b in &[0.5, 1.5, 4.0, 12.0] {
            for i in 1..20 {
                let x = i as f64 / 20.0;
                let s = stats::incomplete_beta(x, a, b) + stats::incomplete_beta(1.0 - x, b, a);
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    ensure(worst < 1e-10, || format!("symmetry error {worst:.2e}"))?;
    Ok(format!("F = 1.5 (df 1/4), identical groups F = 0 p = 1, symmetry error {worst:.1e}"))
}

// ---------------------------------------------------------------------------
// End-to-end synthetic study
// ---------------------------------------------------------------------------

fn end_to_end() -> Check {
    let start = Instant::now();
    let spec = SynthSpec::default();
    let data = synth::generate(&spec).map_err(|e| e.to_string())?;
    let profiles: Vec<_> = data
        .profiles
        .iter()
        .map(|p| p.resampled(dataset::DEFAULT_PROFILE_LENGTH))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let seed = 0;
    let d = pipeline::discover(
        &profiles,
        &data.manifest,
        &PcaSettings::default(),
        &ClusterSettings::default(),
        seed,
    )
    .map_err(|e| e.to_string())?;

    let k = d.clustering.best_k;
    ensure(k == spec.n_clusters, || format!("K* = {k}, planted {}", spec.n_clusters))?;
    let majority = pipeline::task_majority(
        &d.clustering.model.assignments,
        d.matrix.labels.iter().map(|l| l.task.clone()),
    );
    let ari = pipeline::task_partition_ari(&majority, &data.ground_truth.task_cluster);
    ensure(ari >= 0.9, || format!("task partition ARI {ari:.3}"))?;

    let reps = &d.selection.representatives;
    let planted: BTreeMap<usize, Vec<&str>> = reps.tasks.iter().fold(BTreeMap::new(), |mut m, t| {
        m.entry(data.ground_truth.task_cluster[t]).or_insert_with(Vec::new).push(t.as_str());
        m
    });
    ensure(
        reps.tasks.len() == spec.n_clusters && planted.len() == spec.n_clusters,
        || format!("representatives by planted cluster: {planted:?}"),
    )?;

    let model = FcnnModel {
        config: FcnnConfig::default(),
    };
    let options = StudyOptions {
        seed,
        ..StudyOptions::default()
    };
    let study = crossval::run_study(&data.sensors, &d.selection.conditions, &model, &options)
        .map_err(|e| e.to_string())?;
    let rmse: BTreeMap<Condition, f64> = study.summary.iter().map(|s| (s.condition, s.rmse_mean)).collect();
    let (all, opt, cyc) = (rmse[&Condition::All], rmse[&Condition::Optimized], rmse[&Condition::Cyclic]);
    let elapsed = start.elapsed();
    let detail = format!(
        "K* = {k}, ARI {ari:.3}, RMSE all {all:.4} / optimized {opt:.4} / cyclic {cyc:.4} Nm/kg, {:.0} s",
        elapsed.as_secs_f64()
    );
    ensure(opt <= 0.95 * cyc, || format!("optimized not ≤ 0.95·cyclic: {detail}"))?;
    ensure(opt <= 1.15 * all, || format!("optimized not ≤ 1.15·all: {detail}"))?;
    ensure(elapsed < Duration::from_secs(600), || format!("too slow: {detail}"))?;
    Ok(detail)
}

// ---------------------------------------------------------------------------
// Real dataset (optional)
// ---------------------------------------------------------------------------

fn dataset_mode(dir: PathBuf) -> Check {
    let manifest = TaskManifest::load(&dir.join("tasks.json")).map_err(|e| e.to_string())?;
    let loaded = dataset::load_profiles(&dir.join("profiles.csv"), &manifest, dataset::DEFAULT_PROFILE_LENGTH)
        .map_err(|e| e.to_string())?;
    let (profiles, exclusion) = dataset::exclude_subjects(loaded.profiles, &manifest, 1);
    let d = pipeline::discover(&profiles, &manifest, &PcaSettings::default(), &ClusterSettings::default(), 0)
        .map_err(|e| e.to_string())?;
    let mut trials = dataset::load_sensor_samples(&dir.join("sensors.csv"), &manifest)
        .map_err(|e| e.to_string())?
        .trials;
    let dropped = exclusion.dropped_subjects();
    trials.retain(|t| !dropped.contains(&t.subject));
    let options = StudyOptions {
        conditions: vec![Condition::Optimized],
        ..StudyOptions::default()
    };
    let study = crossval::run_study(
        &trials,
        &d.selection.conditions,
        &FcnnModel {
            config: FcnnConfig::default(),
        },
        &options,
    )
    .map_err(|e| e.to_string())?;
    let rmse = study.summary[0].rmse_mean;
    let k = d.clustering.best_k;
    let detail = format!("K* = {k}, optimized RMSE {rmse:.3} Nm/kg");
    ensure((7..=9).contains(&k), || format!("K* outside 8 ± 1: {detail}"))?;
    ensure((rmse - 0.30).abs() <= 0.10, || format!("RMSE outside 0.30 ± 0.10: {detail}"))?;
    Ok(detail)
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, Box<dyn Fn() -> Check>)> = vec![
        ("representativeness-table-oracle", Box::new(weight_table)),
        ("representative-set-oracle", Box::new(representative_set)),
        ("pca-property-suite", Box::new(pca_suite)),
        ("clustering-suite", Box::new(clustering_suite)),
        ("fcnn-gradient-check", Box::new(gradient_check)),
        ("statistics-suite", Box::new(stats_suite)),
        ("end-to-end-synthetic-study", Box::new(end_to_end)),
    ];
    let mut failed = 0;
    for (name, check) in &criteria {
        let t = Instant::now();
        match check() {
            Ok(detail) => println!("PASS {name} ({:.2} s): {detail}", t.elapsed().as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name} ({:.2} s): {detail}", t.elapsed().as_secs_f64());
            }
        }
    }
    match std::env::var_os("TASKOPT_DATASET_DIR") {
        Some(dir) => match dataset_mode(PathBuf::from(dir)) {
            Ok(detail) => println!("PASS dataset-mode: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL dataset-mode: {detail}");
            }
        },
        None => println!("SKIP dataset-mode: TASKOPT_DATASET_DIR not set"),
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    }
}
