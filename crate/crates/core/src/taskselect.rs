//! Task-weight analysis and representative-task selection.
//!
//! For every `(cluster, task)` pair the representativeness score is
//!
//! ```text
//! R = (A / B) · (A / C) · (S / S_total) · w
//! ```
//!
//! where `A` counts the task's rows in the cluster, `B` all rows in the
//! cluster, `C` all rows of the task, `S` the distinct subjects behind the
//! task's rows in the cluster, `S_total` the distinct subjects in the
//! clustered data and `w` the task's collection-difficulty weight. The task
//! with the highest `R` represents its cluster.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{RowLabel, SubjectId, TaskId, TaskManifest};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("no weight for task `{0}`")]
    MissingWeight(TaskId),
    #[error("S_total must be at least 1")]
    ZeroSubjects,
    #[error("{assignments} assignments for {labels} row labels")]
    LengthMismatch { assignments: usize, labels: usize },
    #[error("no task-weight rows to select from")]
    Empty,
    #[error("no representative tasks")]
    NoRepresentatives,
    #[error("representative task `{0}` is not an included task of the manifest")]
    UnknownRepresentative(TaskId),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SelectError>;

/// The representativeness score from its four factors.
#[inline]
pub fn representativeness(a_over_b: f64, a_over_c: f64, s_over_total: f64, w: f64) -> f64 {
    a_over_b * a_over_c * s_over_total * w
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskWeightRow {
    pub cluster: usize,
    pub task: TaskId,
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub s: usize,
    pub s_total: usize,
    pub w: f64,
    pub r: f64,
}

impl TaskWeightRow {
    pub fn a_over_b(&self) -> f64 {
        self.a as f64 / self.b as f64
    }

    pub fn a_over_c(&self) -> f64 {
        self.a as f64 / self.c as f64
    }

    pub fn s_over_total(&self) -> f64 {
        self.s as f64 / self.s_total as f64
    }

    /// Recomputes `R` from the stored counts.
    pub fn recompute(&self) -> f64 {
        representativeness(self.a_over_b(), self.a_over_c(), self.s_over_total(), self.w)
    }
}

/// One row per `(cluster, task)` with at least one member, sorted by cluster
/// and then by descending `R` (task id breaks ties).
pub fn task_weight_analysis(
    assignments: &[usize],
    labels: &[RowLabel],
    weights: &BTreeMap<TaskId, f64>,
    s_total: usize,
) -> Result<Vec<TaskWeightRow>> {
    if s_total == 0 {
        return Err(SelectError::ZeroSubjects);
    }
    if assignments.len() != labels.len() {
        return Err(SelectError::LengthMismatch {
            assignments: assignments.len(),
            labels: labels.len(),
        });
    }

    let mut cluster_sizes: BTreeMap<usize, usize> = BTreeMap::new();
    let mut task_totals: BTreeMap<&TaskId, usize> = BTreeMap::new();
    let mut cells: BTreeMap<(usize, &TaskId), (usize, BTreeSet<&SubjectId>)> = BTreeMap::new();
    for (&cluster, label) in assignments.iter().zip(labels) {
        *cluster_sizes.entry(cluster).or_default() += 1;
        *task_totals.entry(&label.task).or_default() += 1;
        let cell = cells.entry((cluster, &label.task)).or_default();
        cell.0 += 1;
        cell.1.insert(&label.subject);
    }

    let mut rows = Vec::with_capacity(cells.len());
    for ((cluster, task), (a, subjects)) in cells {
        let w = *weights
            .get(task)
            .ok_or_else(|| SelectError::MissingWeight(task.clone()))?;
        let mut row = TaskWeightRow {
            cluster,
            task: task.clone(),
            a,
            b: cluster_sizes[&cluster],
            c: task_totals[task],
            s: subjects.len(),
            s_total,
            w,
            r: 0.0,
        };
        row.r = row.recompute();
        rows.push(row);
    }
    rows.sort_by(|x, y| {
        x.cluster
            .cmp(&y.cluster)
            .then(y.r.total_cmp(&x.r))
            .then(x.task.cmp(&y.task))
    });
    Ok(rows)
}

/// Per-cluster argmax of `R`; equal scores go to the lexicographically
/// smaller task id.
pub fn pick_representatives<'a, I>(entries: I) -> Result<BTreeMap<usize, TaskId>>
where
    I: IntoIterator<Item = (usize, &'a TaskId, f64)>,
{
    let mut best: BTreeMap<usize, (&TaskId, f64)> = BTreeMap::new();
    for (cluster, task, r) in entries {
        match best.get(&cluster) {
            Some(&(t, br)) if br > r || (br == r && t <= task) => {}
            _ => {
                best.insert(cluster, (task, r));
            }
        }
    }
    if best.is_empty() {
        return Err(SelectError::Empty);
    }
    Ok(best.into_iter().map(|(c, (t, _))| (c, t.clone())).collect())
}

pub fn select_representatives(rows: &[TaskWeightRow]) -> Result<BTreeMap<usize, TaskId>> {
    pick_representatives(rows.iter().map(|r| (r.cluster, &r.task, r.r)))
}

/// Deduplicated representative set plus the tasks that won more than one
/// cluster.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepresentativeSet {
    pub per_cluster: BTreeMap<usize, TaskId>,
    pub tasks: BTreeSet<TaskId>,
    pub repeated: BTreeMap<TaskId, Vec<usize>>,
}

impl RepresentativeSet {
    pub fn from_winners(per_cluster: BTreeMap<usize, TaskId>) -> Self {
        let mut by_task: BTreeMap<TaskId, Vec<usize>> = BTreeMap::new();
        for (c, t) in &per_cluster {
            by_task.entry(t.clone()).or_default().push(*c);
        }
        let tasks = by_task.keys().cloned().collect();
        let repeated: BTreeMap<TaskId, Vec<usize>> =
            by_task.into_iter().filter(|(_, cs)| cs.len() > 1).collect();
        for (t, cs) in &repeated {
            info!("task `{t}` represents clusters {cs:?}; kept once in the optimized set");
        }
        Self {
            per_cluster,
            tasks,
            repeated,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Condition {
    All,
    Optimized,
    Cyclic,
}

impl Condition {
    pub const ALL: [Condition; 3] = [Condition::All, Condition::Optimized, Condition::Cyclic];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::All => "all",
            Condition::Optimized => "optimized",
            Condition::Cyclic => "cyclic",
        }
    }
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Condition {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "all" => Ok(Condition::All),
            "optimized" => Ok(Condition::Optimized),
            "cyclic" => Ok(Condition::Cyclic),
            other => Err(format!("unknown condition `{other}` (expected all, optimized or cyclic)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSet {
    pub condition: Condition,
    pub tasks: BTreeSet<TaskId>,
    pub provenance: String,
}

impl TaskSet {
    pub fn contains(&self, task: &TaskId) -> bool {
        self.tasks.contains(task)
    }
}

/// The three training conditions, written to `conditions.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conditions {
    pub all: TaskSet,
    pub optimized: TaskSet,
    pub cyclic: TaskSet,
}

impl Conditions {
    pub fn get(&self, c: Condition) -> &TaskSet {
        match c {
            Condition::All => &self.all,
            Condition::Optimized => &self.optimized,
            Condition::Cyclic => &self.cyclic,
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

pub fn make_conditions(
    manifest: &TaskManifest,
    representatives: &BTreeSet<TaskId>,
) -> Result<Conditions> {
    if representatives.is_empty() {
        return Err(SelectError::NoRepresentatives);
    }
    let all: BTreeSet<TaskId> = manifest.included().map(|t| t.id.clone()).collect();
    if let Some(missing) = representatives.iter().find(|t| !all.contains(*t)) {
        return Err(SelectError::UnknownRepresentative(missing.clone()));
    }
    let cyclic: BTreeSet<TaskId> = manifest
        .included()
        .filter(|t| t.cyclic)
        .map(|t| t.id.clone())
        .collect();
    Ok(Conditions {
        all: TaskSet {
            condition: Condition::All,
            tasks: all,
            provenance: "every task not excluded by the manifest".into(),
        },
        optimized: TaskSet {
            condition: Condition::Optimized,
            tasks: representatives.clone(),
            provenance: "highest-R task of each cluster".into(),
        },
        cyclic: TaskSet {
            condition: Condition::Cyclic,
            tasks: cyclic,
            provenance: "every included task flagged cyclic in the manifest".into(),
        },
    })
}

pub fn write_table_csv(path: &Path, rows: &[TaskWeightRow]) -> Result<()> {
    let mut out = String::from("cluster,task,a_over_b,a_over_c,s_over_total,w,r\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.cluster,
            r.task,
            r.a_over_b(),
            r.a_over_c(),
            r.s_over_total(),
            r.w,
            r.r
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}
