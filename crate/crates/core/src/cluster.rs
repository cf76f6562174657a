//! k-means in PCA score space, silhouette scoring and selection of K.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{self, Matrix};

pub const DEFAULT_RESTARTS: usize = 10;
pub const DEFAULT_MAX_ITER: usize = 300;

#[derive(Debug, Error)]
pub enum ClusterError {
    #[error("K must be at least 2, got {0}")]
    KTooSmall(usize),
    #[error("K = {k} exceeds the number of points ({n})")]
    KTooLarge { k: usize, n: usize },
    #[error("restarts must be at least 1")]
    NoRestarts,
    #[error("scores contain non-finite values")]
    NonFinite,
    #[error("silhouette needs at least 3 points, got {0}")]
    TooFewPoints(usize),
    #[error("silhouette needs at least 2 clusters")]
    SingleCluster,
    #[error("assignment length {assignments} does not match {points} points")]
    LengthMismatch { assignments: usize, points: usize },
    #[error("empty K range")]
    EmptyRange,
    #[error("K range {lo}..={hi} must lie within [2, {max}]")]
    RangeOutOfBounds { lo: usize, hi: usize, max: usize },
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, ClusterError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Matrix,
    pub assignments: Vec<usize>,
    /// Sum of squared distances to assigned centroids.
    pub inertia: f64,
    pub silhouette: f64,
    pub iterations: usize,
    /// Inertia after every centroid update of the winning restart.
    pub inertia_trace: Vec<f64>,
    /// Index of the winning restart.
    pub restart: usize,
}

impl ClusterModel {
    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &a in &self.assignments {
            sizes[a] += 1;
        }
        sizes
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// Best-inertia k-means over `restarts` k-means++ initializations.
///
/// Restart `r` draws from a ChaCha stream `r` under `seed`, so results do not
/// depend on the order in which restarts are evaluated. Inertia ties go to
/// the lower restart index.
pub fn kmeans(
    scores: &Matrix,
    k: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<ClusterModel> {
    let n = scores.rows();
    if k < 2 {
        return Err(ClusterError::KTooSmall(k));
    }
    if k > n {
        return Err(ClusterError::KTooLarge { k, n });
    }
    if restarts == 0 {
        return Err(ClusterError::NoRestarts);
    }
    if !scores.is_finite() {
        return Err(ClusterError::NonFinite);
    }

    let mut best: Option<ClusterModel> = None;
    for restart in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(restart as u64);
        let init = kmeans_plus_plus(scores, k, &mut rng);
        let mut run = lloyd(scores, init, max_iter.max(1));
        run.restart = restart;
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    let mut model = best.expect("at least one restart");
    model.silhouette = if n >= 3 {
        silhouette_unchecked(scores, &model.assignments)
    } else {
        // every point is a singleton
        0.0
    };
    Ok(model)
}

fn kmeans_plus_plus(x: &Matrix, k: usize, rng: &mut impl Rng) -> Matrix {
    let n = x.rows();
    let mut centroids = Matrix::zeros(k, x.cols());
    let first = rng.random_range(0..n);
    centroids.row_mut(0).copy_from_slice(x.row(first));
    let mut d2: Vec<f64> = x
        .row_iter()
        .map(|r| linalg::squared_distance(r, centroids.row(0)))
        .collect();

    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut target = rng.random::<f64>() * total;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    chosen = i;
                    break;
                }
                target -= w;
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).copy_from_slice(x.row(pick));
        for (i, r) in x.row_iter().enumerate() {
            d2[i] = d2[i].min(linalg::squared_distance(r, centroids.row(c)));
        }
    }
    centroids
}

fn nearest(x: &[f64], centroids: &Matrix) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (c, row) in centroids.row_iter().enumerate() {
        let d = linalg::squared_distance(x, row);
        if d < best.1 {
            best = (c, d);
        }
    }
    best
}

fn assign_all(x: &Matrix, centroids: &Matrix) -> Vec<usize> {
    x.row_iter().map(|r| nearest(r, centroids).0).collect()
}

fn update_means(x: &Matrix, assignments: &[usize], k: usize) -> (Matrix, Vec<usize>) {
    let mut sums = Matrix::zeros(k, x.cols());
    let mut counts = vec![0usize; k];
    for (r, &a) in x.row_iter().zip(assignments) {
        linalg::axpy(1.0, r, sums.row_mut(a));
        counts[a] += 1;
    }
    for (c, &count) in counts.iter().enumerate() {
        if count > 0 {
            sums.row_mut(c).iter_mut().for_each(|v| *v /= count as f64);
        }
    }
    (sums, counts)
}

/// Refills empty clusters with the point farthest from its own centroid,
/// taken from a cluster that keeps at least one member.
fn repair_empty(x: &Matrix, assignments: &mut [usize], k: usize) -> Matrix {
    let (mut centroids, mut counts) = update_means(x, assignments, k);
    while let Some(empty) = counts.iter().position(|&c| c == 0) {
        let donor = assignments
            .iter()
            .enumerate()
            .filter(|(_, &a)| counts[a] > 1)
            .map(|(i, &a)| (i, linalg::squared_distance(x.row(i), centroids.row(a))))
            .fold(None, |acc: Option<(usize, f64)>, (i, d)| match acc {
                Some((_, bd)) if bd >= d => acc,
                _ => Some((i, d)),
            });
        let Some((i, _)) = donor else {
            // k ≤ n guarantees a cluster with two members exists
            unreachable!("no donor point for empty cluster");
        };
        assignments[i] = empty;
        let (c, n) = update_means(x, assignments, k);
        centroids = c;
        counts = n;
    }
    centroids
}

fn inertia(x: &Matrix, centroids: &Matrix, assignments: &[usize]) -> f64 {
    x.row_iter()
        .zip(assignments)
        .map(|(r, &a)| linalg::squared_distance(r, centroids.row(a)))
        .sum()
}

fn lloyd(x: &Matrix, init: Matrix, max_iter: usize) -> ClusterModel {
    let k = init.rows();
    let mut assignments = assign_all(x, &init);
    let mut trace = Vec::new();
    let mut iterations = 0;
    let centroids = loop {
        let centroids = repair_empty(x, &mut assignments, k);
        trace.push(inertia(x, &centroids, &assignments));
        iterations += 1;
        if iterations >= max_iter {
            break centroids;
        }
        let next = assign_all(x, &centroids);
        if next == assignments {
            break centroids;
        }
        assignments = next;
    };
    ClusterModel {
        k,
        inertia: *trace.last().expect("one iteration"),
        centroids,
        assignments,
        silhouette: f64::NAN,
        iterations,
        inertia_trace: trace,
        restart: 0,
    }
}

/// Mean silhouette coefficient. Singleton points contribute 0.
pub fn silhouette_score(scores: &Matrix, assignments: &[usize]) -> Result<f64> {
    let n = scores.rows();
    if assignments.len() != n {
        return Err(ClusterError::LengthMismatch {
            assignments: assignments.len(),
            points: n,
        });
    }
    if n < 3 {
        return Err(ClusterError::TooFewPoints(n));
    }
    let distinct: BTreeSet<usize> = assignments.iter().copied().collect();
    if distinct.len() < 2 {
        return Err(ClusterError::SingleCluster);
    }
    Ok(silhouette_unchecked(scores, assignments))
}

fn silhouette_unchecked(x: &Matrix, assignments: &[usize]) -> f64 {
    let n = x.rows();
    let labels: BTreeMap<usize, usize> = assignments
        .iter()
        .copied()
        .collect::<BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(dense, label)| (label, dense))
        .collect();
    let k = labels.len();
    let dense: Vec<usize> = assignments.iter().map(|a| labels[a]).collect();
    let mut sizes = vec![0usize; k];
    for &a in &dense {
        sizes[a] += 1;
    }

    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[dense[j]] += linalg::distance(x.row(i), x.row(j));
            }
        }
        let own = dense[i];
        if sizes[own] == 1 {
            continue;
        }
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    total / n as f64
}

/// Outcome of a silhouette scan over K.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KSelection {
    pub best_k: usize,
    pub model: ClusterModel,
    /// `(K, silhouette)` for every K scanned, ascending.
    pub table: Vec<(usize, f64)>,
}

/// Scans `k_min..=k_max` and keeps the K with the highest silhouette; ties go
/// to the smaller K.
pub fn select_k(
    scores: &Matrix,
    k_min: usize,
    k_max: usize,
    seed: u64,
    restarts: usize,
    max_iter: usize,
) -> Result<KSelection> {
    if k_min > k_max {
        return Err(ClusterError::EmptyRange);
    }
    let n = scores.rows();
    let upper = n.saturating_sub(1);
    if k_min < 2 || k_max > upper {
        return Err(ClusterError::RangeOutOfBounds {
            lo: k_min,
            hi: k_max,
            max: upper,
        });
    }
    let mut best: Option<ClusterModel> = None;
    let mut table = Vec::new();
    for k in k_min..=k_max {
        let model = kmeans(scores, k, seed, restarts, max_iter)?;
        table.push((k, model.silhouette));
        if best.as_ref().is_none_or(|b| model.silhouette > b.silhouette) {
            best = Some(model);
        }
    }
    let model = best.expect("non-empty range");
    Ok(KSelection {
        best_k: model.k,
        model,
        table,
    })
}

pub fn write_silhouette_csv(path: &Path, table: &[(usize, f64)]) -> Result<()> {
    let mut out = String::from("k,silhouette\n");
    for (k, s) in table {
        out.push_str(&format!("{k},{s}\n"));
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Adjusted Rand index between two labelings of the same points.
pub fn adjusted_rand_index(a: &[usize], b: &[usize]) -> f64 {
    assert_eq!(a.len(), b.len(), "labelings differ in length");
    let n = a.len();
    let mut table: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut rows: BTreeMap<usize, u64> = BTreeMap::new();
    let mut cols: BTreeMap<usize, u64> = BTreeMap::new();
    for (&x, &y) in a.iter().zip(b) {
        *table.entry((x, y)).or_default() += 1;
        *rows.entry(x).or_default() += 1;
        *cols.entry(y).or_default() += 1;
    }
    let c2 = |v: u64| (v * v.saturating_sub(1)) as f64 / 2.0;
    let index: f64 = table.values().map(|&v| c2(v)).sum();
    let sum_a: f64 = rows.values().map(|&v| c2(v)).sum();
    let sum_b: f64 = cols.values().map(|&v| c2(v)).sum();
    let total = c2(n as u64);
    let expected = sum_a * sum_b / total;
    let max = 0.5 * (sum_a + sum_b);
    if max == expected {
        // both labelings trivial (all-in-one or all-singletons)
        return 1.0;
    }
    (index - expected) / (max - expected)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> Matrix {
        Matrix::from_rows(rows)
    }

    #[test]
    fn two_points_fit_exactly() {
        let x = m(&[&[0.0, 1.0], &[5.0, -2.0]]);
        let model = kmeans(&x, 2, 7, 3, 100).unwrap();
        assert_eq!(model.inertia, 0.0);
        assert_ne!(model.assignments[0], model.assignments[1]);
    }

    #[test]
    fn duplicates_are_repaired() {
        let x = m(&[&[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0], &[1.0, 1.0]]);
        let model = kmeans(&x, 2, 1, 2, 100).unwrap();
        assert_eq!(model.inertia, 0.0);
        assert_eq!(model.cluster_sizes().iter().filter(|&&s| s > 0).count(), 2);
    }

    #[test]
    fn argument_errors() {
        let x = m(&[&[0.0], &[1.0], &[2.0]]);
        assert!(matches!(kmeans(&x, 1, 0, 1, 10), Err(ClusterError::KTooSmall(1))));
        assert!(matches!(kmeans(&x, 4, 0, 1, 10), Err(ClusterError::KTooLarge { .. })));
        assert!(matches!(kmeans(&x, 2, 0, 0, 10), Err(ClusterError::NoRestarts)));
        let bad = m(&[&[0.0], &[f64::INFINITY], &[2.0]]);
        assert!(matches!(kmeans(&bad, 2, 0, 1, 10), Err(ClusterError::NonFinite)));
    }

    #[test]
    fn silhouette_hand_value() {
        let x = m(&[&[0.0], &[0.1], &[10.0], &[10.1]]);
        let s = silhouette_score(&x, &[0, 0, 1, 1]).unwrap();
        // per point: 1 - 0.1/10.05, 1 - 0.1/9.95 (twice each)
        let expect = (2.0 * (1.0 - 0.1 / 10.05) + 2.0 * (1.0 - 0.1 / 9.95)) / 4.0;
        assert!((s - expect).abs() < 1e-12);
        assert!((s - 0.990).abs() < 1e-3);
    }

    #[test]
    fn silhouette_overlap_is_negative() {
        let x = m(&[&[0.0], &[0.0], &[1.0], &[1.0]]);
        let s = silhouette_score(&x, &[0, 1, 0, 1]).unwrap();
        assert!((s + 0.5).abs() < 1e-12);
    }

    #[test]
    fn silhouette_singletons_are_zero() {
        let h = 3f64.sqrt() / 2.0;
        let x = m(&[&[0.0, 0.0], &[1.0, 0.0], &[0.5, h]]);
        assert_eq!(silhouette_score(&x, &[0, 1, 2]).unwrap(), 0.0);
    }

    #[test]
    fn silhouette_errors() {
        let x = m(&[&[0.0], &[1.0], &[2.0]]);
        assert!(matches!(silhouette_score(&x, &[0, 0, 0]), Err(ClusterError::SingleCluster)));
        let two = m(&[&[0.0], &[1.0]]);
        assert!(matches!(silhouette_score(&two, &[0, 1]), Err(ClusterError::TooFewPoints(2))));
        assert!(matches!(silhouette_score(&x, &[0, 1]), Err(ClusterError::LengthMismatch { .. })));
    }

    #[test]
    fn select_k_single_value_range() {
        let x = m(&[&[0.0], &[0.2], &[5.0], &[5.1], &[9.0]]);
        let sel = select_k(&x, 3, 3, 0, 4, 100).unwrap();
        assert_eq!(sel.best_k, 3);
        assert_eq!(sel.table.len(), 1);
        assert!(matches!(select_k(&x, 4, 3, 0, 4, 100), Err(ClusterError::EmptyRange)));
        assert!(matches!(
            select_k(&x, 2, 5, 0, 4, 100),
            Err(ClusterError::RangeOutOfBounds { .. })
        ));
    }

    #[test]
    fn ari_relabeling_and_mismatch() {
        assert_eq!(adjusted_rand_index(&[0, 0, 1, 1, 2], &[2, 2, 0, 0, 1]), 1.0);
        assert!(adjusted_rand_index(&[0, 0, 1, 1], &[0, 1, 0, 1]) < 0.0);
    }

    #[test]
    fn kmeans_is_deterministic() {
        let x = m(&[&[0.0, 0.0], &[0.1, 0.3], &[3.0, 3.0], &[3.2, 2.9], &[-4.0, 1.0], &[-4.1, 1.2]]);
        let a = kmeans(&x, 3, 42, 5, 100).unwrap();
        let b = kmeans(&x, 3, 42, 5, 100).unwrap();
        assert_eq!(a, b);
    }
}
