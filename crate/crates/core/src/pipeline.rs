//! In-memory task discovery: feature matrix → PCA → k-means scan → task
//! weights → training conditions.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cluster::{self, ClusterError, KSelection};
use crate::dataset::{self, CycleProfile, DatasetError, FeatureMatrix, TaskId, TaskManifest};
use crate::linalg::Matrix;
use crate::pca::{self, PcaError, PcaModel};
use crate::taskselect::{self, Conditions, RepresentativeSet, SelectError, TaskWeightRow};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Pca(#[from] PcaError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Select(#[from] SelectError),
    #[error("K range {k_min}..={k_max} is empty for {rows} rows")]
    KRange { k_min: usize, k_max: usize, rows: usize },
}

pub type Result<T> = std::result::Result<T, PipelineError>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcaSettings {
    pub standardize: bool,
    pub variance_threshold: f64,
}

impl Default for PcaSettings {
    fn default() -> Self {
        Self {
            standardize: true,
            variance_threshold: 0.70,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClusterSettings {
    pub k_min: usize,
    pub k_max: usize,
    pub restarts: usize,
    pub max_iter: usize,
}

impl Default for ClusterSettings {
    fn default() -> Self {
        Self {
            k_min: 2,
            k_max: 12,
            restarts: cluster::DEFAULT_RESTARTS,
            max_iter: cluster::DEFAULT_MAX_ITER,
        }
    }
}

/// PCA scores of the feature matrix and the components kept.
#[derive(Debug, Clone)]
pub struct Projection {
    pub model: PcaModel,
    pub n_components: usize,
    pub cumulative_ratio: f64,
    pub scores: Matrix,
}

pub fn project(matrix: &FeatureMatrix, settings: &PcaSettings) -> Result<Projection> {
    let model = pca::pca_fit(&matrix.rows, settings.standardize)?;
    let (n_components, cumulative_ratio) =
        pca::select_components(&model.explained_variance_ratio, settings.variance_threshold)?;
    let scores = pca::pca_transform(&model, &matrix.rows, n_components)?;
    Ok(Projection {
        model,
        n_components,
        cumulative_ratio,
        scores,
    })
}

/// Silhouette scan with `k_max` clamped to `n − 1`.
pub fn scan_k(scores: &Matrix, settings: &ClusterSettings, seed: u64) -> Result<KSelection> {
    let rows = scores.rows();
    let k_max = settings.k_max.min(rows.saturating_sub(1));
    if k_max < settings.k_max {
        log::warn!("k_max {} clamped to {k_max} for {rows} rows", settings.k_max);
    }
    if settings.k_min > k_max {
        return Err(PipelineError::KRange {
            k_min: settings.k_min,
            k_max,
            rows,
        });
    }
    Ok(cluster::select_k(
        scores,
        settings.k_min,
        k_max,
        seed,
        settings.restarts,
        settings.max_iter,
    )?)
}

/// Task-weight table, representatives and the three training conditions.
#[derive(Debug, Clone)]
pub struct Selection {
    pub table: Vec<TaskWeightRow>,
    pub representatives: RepresentativeSet,
    pub conditions: Conditions,
}

pub fn select_tasks(matrix: &FeatureMatrix, assignments: &[usize], manifest: &TaskManifest) -> Result<Selection> {
    let s_total = matrix.subjects().len();
    let table = taskselect::task_weight_analysis(assignments, &matrix.labels, &manifest.weights(), s_total)?;
    let winners = taskselect::select_representatives(&table)?;
    let representatives = RepresentativeSet::from_winners(winners);
    let conditions = taskselect::make_conditions(manifest, &representatives.tasks)?;
    Ok(Selection {
        table,
        representatives,
        conditions,
    })
}

/// Every discovery stage run back to back.
#[derive(Debug, Clone)]
pub struct Discovery {
    pub matrix: FeatureMatrix,
    pub projection: Projection,
    pub clustering: KSelection,
    pub selection: Selection,
}

pub fn discover(
    profiles: &[CycleProfile],
    manifest: &TaskManifest,
    pca: &PcaSettings,
    cluster: &ClusterSettings,
    seed: u64,
) -> Result<Discovery> {
    let matrix = dataset::build_feature_matrix(profiles)?;
    let projection = project(&matrix, pca)?;
    let clustering = scan_k(&projection.scores, cluster, seed)?;
    let selection = select_tasks(&matrix, &clustering.model.assignments, manifest)?;
    Ok(Discovery {
        matrix,
        projection,
        clustering,
        selection,
    })
}

/// Majority cluster of each task's rows; ties go to the lower cluster index.
pub fn task_majority(assignments: &[usize], tasks: impl IntoIterator<Item = TaskId>) -> BTreeMap<TaskId, usize> {
    let mut votes: BTreeMap<TaskId, BTreeMap<usize, usize>> = BTreeMap::new();
    for (t, &a) in tasks.into_iter().zip(assignments) {
        *votes.entry(t).or_default().entry(a).or_default() += 1;
    }
    votes
        .into_iter()
        .map(|(t, v)| {
            let best = v
                .iter()
                .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
                .map(|(c, _)| *c)
                .expect("every task has a vote");
            (t, best)
        })
        .collect()
}

/// Adjusted Rand index between a recovered and a reference task→cluster map,
/// over the tasks both contain.
pub fn task_partition_ari(recovered: &BTreeMap<TaskId, usize>, truth: &BTreeMap<TaskId, usize>) -> f64 {
    let (a, b): (Vec<usize>, Vec<usize>) = recovered
        .iter()
        .filter_map(|(t, &c)| truth.get(t).map(|&g| (c, g)))
        .unzip();
    cluster::adjusted_rand_index(&a, &b)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn majority_vote_breaks_ties_low() {
        let tasks = ["a", "a", "a", "b", "b"].map(TaskId::from);
        let m = task_majority(&[1, 1, 0, 2, 0], tasks);
        assert_eq!(m[&TaskId::from("a")], 1);
        assert_eq!(m[&TaskId::from("b")], 0);
    }

    #[test]
    fn relabeled_partition_has_unit_ari() {
        let truth: BTreeMap<TaskId, usize> = [("a", 0), ("b", 0), ("c", 1), ("d", 2)]
            .into_iter()
            .map(|(t, c)| (TaskId::from(t), c))
            .collect();
        let recovered: BTreeMap<TaskId, usize> = truth.iter().map(|(t, c)| (t.clone(), 5 - c)).collect();
        assert!((task_partition_ari(&recovered, &truth) - 1.0).abs() < 1e-12);
    }
}
