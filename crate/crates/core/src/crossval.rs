//! Leave-one-subject-out cross-validation over training conditions.

use std::collections::BTreeSet;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{SensorTrial, SubjectId, SENSOR_INPUTS};
use crate::linalg::{mean, sample_std, Matrix};
use crate::nn::{self, Checkpoint, EpochRecord, Fcnn, FcnnConfig, NnError, Samples, Standardizer};
use crate::taskselect::{Condition, Conditions};

pub const TRAIN_FRACTION: f64 = 0.8;

#[derive(Debug, Error)]
pub enum CrossvalError {
    #[error("leave-one-subject-out needs at least 2 subjects, found {0}")]
    TooFewSubjects(usize),
    #[error("split needs at least 2 trials, got {0}")]
    TooFewTrials(usize),
    #[error("train fraction {0} must lie in (0, 1)")]
    BadFraction(f64),
    #[error("prediction and truth lengths differ: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("metrics need at least one value")]
    Empty,
    #[error("condition {0} leaves no training data")]
    EmptyCondition(Condition),
    #[error("subject {0} leaked into the training pool")]
    Leakage(SubjectId),
    #[error("fold {condition}/{left_out}: {source}")]
    Fold {
        condition: Condition,
        left_out: SubjectId,
        #[source]
        source: Box<CrossvalError>,
    },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("thread pool: {0}")]
    Pool(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, CrossvalError>;

/// One held-out subject and the trials of everyone else.
#[derive(Debug, Clone)]
pub struct Fold<'a> {
    pub index: usize,
    pub left_out: SubjectId,
    pub train_pool: Vec<&'a SensorTrial>,
    pub test: Vec<&'a SensorTrial>,
}

/// One fold per subject, in subject order.
pub fn loso_folds(trials: &[SensorTrial]) -> Result<Vec<Fold<'_>>> {
    let subjects: BTreeSet<&SubjectId> = trials.iter().map(|t| &t.subject).collect();
    if subjects.len() < 2 {
        return Err(CrossvalError::TooFewSubjects(subjects.len()));
    }
    subjects
        .into_iter()
        .enumerate()
        .map(|(index, s)| {
            let (test, train_pool): (Vec<_>, Vec<_>) = trials.iter().partition(|t| &t.subject == s);
            if train_pool.iter().any(|t| &t.subject == s) {
                return Err(CrossvalError::Leakage(s.clone()));
            }
            Ok(Fold {
                index,
                left_out: s.clone(),
                train_pool,
                test,
            })
        })
        .collect()
}

/// Seeded trial-level split. The training side gets `floor(fraction · n)`
/// trials, capped so validation keeps at least one.
pub fn split_train_val<'a>(
    pool: &[&'a SensorTrial],
    fraction: f64,
    seed: u64,
) -> Result<(Vec<&'a SensorTrial>, Vec<&'a SensorTrial>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(CrossvalError::BadFraction(fraction));
    }
    let n = pool.len();
    if n < 2 {
        return Err(CrossvalError::TooFewTrials(n));
    }
    let mut order: Vec<&SensorTrial> = pool.to_vec();
    order.sort_by(|a, b| a.label().cmp(&b.label()));
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((fraction * n as f64).floor() as usize).clamp(1, n - 1);
    let val = order.split_off(n_train);
    Ok((order, val))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub rmse: f64,
    /// `None` when the truth is constant.
    pub r2: Option<f64>,
}

pub fn metrics(pred: &[f64], truth: &[f64]) -> Result<Metrics> {
    if pred.len() != truth.len() {
        return Err(CrossvalError::LengthMismatch(pred.len(), truth.len()));
    }
    if pred.is_empty() {
        return Err(CrossvalError::Empty);
    }
    let n = pred.len() as f64;
    let sse: f64 = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    let m = mean(truth);
    let sst: f64 = truth.iter().map(|t| (t - m) * (t - m)).sum();
    Ok(Metrics {
        rmse: (sse / n).sqrt(),
        r2: (sst > 0.0).then(|| 1.0 - sse / sst),
    })
}

/// Stacks trial samples into an input matrix and a one-column target.
pub fn to_samples(trials: &[&SensorTrial]) -> Samples {
    let n: usize = trials.iter().map(|t| t.samples.len()).sum();
    let mut x = Vec::with_capacity(n * SENSOR_INPUTS);
    let mut y = Vec::with_capacity(n);
    for t in trials {
        for s in &t.samples {
            x.extend_from_slice(&s.input);
            y.push(s.target);
        }
    }
    Samples::new(Matrix::from_vec(n, SENSOR_INPUTS, x), Matrix::from_vec(n, 1, y))
}

/// Everything a model sees for one (condition, fold) pair.
pub struct FoldData<'a> {
    pub condition: Condition,
    pub left_out: &'a SubjectId,
    pub seed: u64,
    pub train: Samples,
    pub val: Samples,
    pub test: Samples,
}

/// A model family evaluated by the study: fit on train/val, predict test.
pub trait FoldModel: Sync {
    type Artifact: Send;

    fn fit_predict(&self, fold: &FoldData<'_>) -> Result<(Vec<f64>, Self::Artifact)>;
}

/// The FCNN with inputs z-scored on the training split.
#[derive(Debug, Clone)]
pub struct FcnnModel {
    pub config: FcnnConfig,
}

#[derive(Debug, Clone)]
pub struct FcnnArtifact {
    pub checkpoint: Checkpoint,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl FoldModel for FcnnModel {
    type Artifact = FcnnArtifact;

    fn fit_predict(&self, fold: &FoldData<'_>) -> Result<(Vec<f64>, FcnnArtifact)> {
        let config = FcnnConfig {
            seed: fold.seed,
            ..self.config.clone()
        };
        let scaler = Standardizer::fit(&fold.train.x);
        let train = Samples::new(scaler.apply(&fold.train.x), fold.train.y.clone());
        let val = Samples::new(scaler.apply(&fold.val.x), fold.val.y.clone());
        let outcome = nn::train(Fcnn::seeded(&config)?, &train, &val, &config)?;
        let checkpoint = Checkpoint {
            config,
            input_scaler: scaler,
            network: outcome.model,
        };
        let pred = checkpoint.predict(&fold.test.x)?.into_vec();
        Ok((
            pred,
            FcnnArtifact {
                checkpoint,
                history: outcome.history,
                best_epoch: outcome.best_epoch,
                stopped_early: outcome.stopped_early,
            },
        ))
    }
}

/// Returns the test targets unchanged; checks the metric plumbing.
#[derive(Debug, Clone, Copy)]
pub struct OracleModel;

impl FoldModel for OracleModel {
    type Artifact = ();

    fn fit_predict(&self, fold: &FoldData<'_>) -> Result<(Vec<f64>, ())> {
        Ok((fold.test.y.as_slice().to_vec(), ()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub condition: Condition,
    #[serde(rename = "left_out_subject")]
    pub left_out: SubjectId,
    #[serde(rename = "rmse_nm_per_kg")]
    pub rmse: f64,
    pub r2: Option<f64>,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
    pub seed: u64,
}

pub struct FoldOutcome<A> {
    pub result: FoldResult,
    pub predictions: Vec<f64>,
    pub artifact: A,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkippedFold {
    pub condition: Condition,
    pub left_out: SubjectId,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSummary {
    pub condition: Condition,
    pub n_folds: usize,
    pub rmse_mean: f64,
    pub rmse_std: f64,
    pub r2_mean: f64,
    pub r2_std: f64,
}

pub struct Study<A> {
    /// Ordered by condition, then left-out subject.
    pub folds: Vec<FoldOutcome<A>>,
    pub skipped: Vec<SkippedFold>,
    pub summary: Vec<ConditionSummary>,
}

#[derive(Debug, Clone)]
pub struct StudyOptions {
    pub conditions: Vec<Condition>,
    pub seed: u64,
    pub train_fraction: f64,
    /// Worker threads; 1 runs inline.
    pub jobs: usize,
}

impl Default for StudyOptions {
    fn default() -> Self {
        Self {
            conditions: Condition::ALL.to_vec(),
            seed: 0,
            train_fraction: TRAIN_FRACTION,
            jobs: 1,
        }
    }
}

/// Per-condition mean and sample std of the fold metrics.
pub fn summarize(results: &[FoldResult], conditions: &[Condition]) -> Vec<ConditionSummary> {
    conditions
        .iter()
        .map(|&c| {
            let rows: Vec<&FoldResult> = results.iter().filter(|r| r.condition == c).collect();
            let rmse: Vec<f64> = rows.iter().map(|r| r.rmse).collect();
            let r2: Vec<f64> = rows.iter().filter_map(|r| r.r2).collect();
            let stat = |v: &[f64]| {
                if v.is_empty() {
                    (f64::NAN, f64::NAN)
                } else {
                    (mean(v), sample_std(v))
                }
            };
            let (rmse_mean, rmse_std) = stat(&rmse);
            let (r2_mean, r2_std) = stat(&r2);
            ConditionSummary {
                condition: c,
                n_folds: rows.len(),
                rmse_mean,
                rmse_std,
                r2_mean,
                r2_std,
            }
        })
        .collect()
}

enum JobOutcome<A> {
    Done(FoldOutcome<A>),
    Skipped(SkippedFold),
}

/// Trains and evaluates every (condition, fold) pair. Training data are
/// restricted to the condition's tasks; the test set is always the left-out
/// subject's full data.
pub fn run_study<M: FoldModel>(
    trials: &[SensorTrial],
    conditions: &Conditions,
    model: &M,
    options: &StudyOptions,
) -> Result<Study<M::Artifact>> {
    let folds = loso_folds(trials)?;
    for &c in &options.conditions {
        let set = conditions.get(c);
        if !trials.iter().any(|t| set.contains(&t.task)) {
            return Err(CrossvalError::EmptyCondition(c));
        }
    }
    let jobs: Vec<(Condition, &Fold<'_>)> = options
        .conditions
        .iter()
        .flat_map(|&c| folds.iter().map(move |f| (c, f)))
        .collect();

    let run_one = |&(c, fold): &(Condition, &Fold<'_>)| -> Result<JobOutcome<M::Artifact>> {
        let wrap = |e: CrossvalError| CrossvalError::Fold {
            condition: c,
            left_out: fold.left_out.clone(),
            source: Box::new(e),
        };
        let set = conditions.get(c);
        let pool: Vec<&SensorTrial> = fold
            .train_pool
            .iter()
            .copied()
            .filter(|t| set.contains(&t.task))
            .collect();
        let seed = options.seed ^ fold.index as u64;
        let (train, val) = match split_train_val(&pool, options.train_fraction, seed) {
            Ok(s) => s,
            Err(e @ CrossvalError::TooFewTrials(_)) => {
                log::warn!("skipping fold {c}/{}: {e}", fold.left_out);
                return Ok(JobOutcome::Skipped(SkippedFold {
                    condition: c,
                    left_out: fold.left_out.clone(),
                    reason: e.to_string(),
                }));
            }
            Err(e) => return Err(wrap(e)),
        };
        let data = FoldData {
            condition: c,
            left_out: &fold.left_out,
            seed,
            train: to_samples(&train),
            val: to_samples(&val),
            test: to_samples(&fold.test),
        };
        log::info!(
            "fold {c}/{}: {} train, {} val, {} test samples",
            fold.left_out,
            data.train.len(),
            data.val.len(),
            data.test.len()
        );
        let (predictions, artifact) = model.fit_predict(&data).map_err(wrap)?;
        let m = metrics(&predictions, data.test.y.as_slice()).map_err(wrap)?;
        Ok(JobOutcome::Done(FoldOutcome {
            result: FoldResult {
                condition: c,
                left_out: fold.left_out.clone(),
                rmse: m.rmse,
                r2: m.r2,
                n_train: data.train.len(),
                n_val: data.val.len(),
                n_test: data.test.len(),
                seed,
            },
            predictions,
            artifact,
        }))
    };

    let outcomes: Vec<Result<JobOutcome<M::Artifact>>> = if options.jobs <= 1 {
        jobs.iter().map(run_one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(options.jobs)
            .build()
            .map_err(|e| CrossvalError::Pool(e.to_string()))?;
        pool.install(|| jobs.par_iter().map(run_one).collect())
    };

    let mut done = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o? {
            JobOutcome::Done(f) => done.push(f),
            JobOutcome::Skipped(s) => skipped.push(s),
        }
    }
    let results: Vec<FoldResult> = done.iter().map(|f| f.result.clone()).collect();
    let summary = summarize(&results, &options.conditions);
    Ok(Study {
        folds: done,
        skipped,
        summary,
    })
}

pub fn write_fold_results_csv(path: &Path, results: &[FoldResult]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in results {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_fold_results_csv(path: &Path) -> Result<Vec<FoldResult>> {
    let mut r = csv::Reader::from_path(path)?;
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

pub fn write_summary_csv(path: &Path, summary: &[ConditionSummary]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for s in summary {
        w.serialize(s)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{SensorSample, TaskId, TrialId};
    use crate::taskselect::TaskSet;

    fn trial(subject: &str, task: &str, trial: &str, n: usize) -> SensorTrial {
        SensorTrial {
            subject: SubjectId::from(subject),
            task: TaskId::from(task),
            trial: TrialId::from(trial),
            samples: (0..n)
                .map(|i| SensorSample {
                    time: i as f64,
                    input: [i as f64; SENSOR_INPUTS],
                    target: (i as f64).sin(),
                })
                .collect(),
        }
    }

    fn set(c: Condition, tasks: &[&str]) -> TaskSet {
        TaskSet {
            condition: c,
            tasks: tasks.iter().map(|t| TaskId::from(*t)).collect(),
            provenance: String::new(),
        }
    }

    fn conditions() -> Conditions {
        Conditions {
            all: set(Condition::All, &["walk", "jump"]),
            optimized: set(Condition::Optimized, &["jump"]),
            cyclic: set(Condition::Cyclic, &["walk"]),
        }
    }

    fn corpus() -> Vec<SensorTrial> {
        let mut v = Vec::new();
        for s in ["s1", "s2", "s3"] {
            for task in ["walk", "jump"] {
                for k in ["t1", "t2"] {
                    v.push(trial(s, task, k, 4));
                }
            }
        }
        v
    }

    #[test]
    fn folds_hold_out_one_subject() {
        let trials = corpus();
        let folds = loso_folds(&trials).unwrap();
        assert_eq!(folds.len(), 3);
        for f in &folds {
            assert!(f.test.iter().all(|t| t.subject == f.left_out));
            assert!(f.train_pool.iter().all(|t| t.subject != f.left_out));
            assert_eq!(f.test.len() + f.train_pool.len(), trials.len());
        }
        let one: Vec<SensorTrial> = trials.into_iter().filter(|t| t.subject.as_str() == "s1").collect();
        assert!(matches!(loso_folds(&one), Err(CrossvalError::TooFewSubjects(1))));
    }

    #[test]
    fn split_sizes() {
        let trials: Vec<SensorTrial> = (0..10).map(|i| trial("s", "walk", &format!("t{i}"), 2)).collect();
        let refs: Vec<&SensorTrial> = trials.iter().collect();
        let (tr, va) = split_train_val(&refs, 0.8, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (8, 2));
        let (tr2, va2) = split_train_val(&refs, 0.8, 1).unwrap();
        assert_eq!(tr, tr2);
        assert_eq!(va, va2);
        let (tr, va) = split_train_val(&refs[..2], 0.8, 1).unwrap();
        assert_eq!((tr.len(), va.len()), (1, 1));
        assert!(matches!(split_train_val(&refs[..1], 0.8, 1), Err(CrossvalError::TooFewTrials(1))));
    }

    #[test]
    fn metric_examples() {
        let m = metrics(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((m.rmse, m.r2), (0.0, Some(1.0)));
        let m = metrics(&[2.0, 2.0, 2.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(m.r2, Some(0.0));
        let m = metrics(&[0.0, 0.0], &[1.0, -1.0]).unwrap();
        assert_eq!((m.rmse, m.r2), (1.0, Some(0.0)));
        assert_eq!(metrics(&[1.0, 1.0], &[2.0, 2.0]).unwrap().r2, None);
        assert!(matches!(metrics(&[], &[]), Err(CrossvalError::Empty)));
        assert!(matches!(metrics(&[1.0], &[1.0, 2.0]), Err(CrossvalError::LengthMismatch(1, 2))));
    }

    #[test]
    fn oracle_study_is_perfect() {
        let trials = corpus();
        let study = run_study(&trials, &conditions(), &OracleModel, &StudyOptions::default()).unwrap();
        assert_eq!(study.folds.len(), 9);
        let order: Vec<(Condition, &str)> = study
            .folds
            .iter()
            .map(|f| (f.result.condition, f.result.left_out.as_str()))
            .collect();
        let mut sorted = order.clone();
        sorted.sort();
        assert_eq!(order, sorted);
        for f in &study.folds {
            assert_eq!(f.result.rmse, 0.0);
            assert_eq!(f.result.r2, Some(1.0));
            // the test set is never filtered by condition
            assert_eq!(f.result.n_test, 16);
        }
        for s in &study.summary {
            assert_eq!(s.n_folds, 3);
            assert_eq!(s.rmse_mean, 0.0);
        }
    }

    #[test]
    fn too_few_trials_skips_fold() {
        let mut trials = corpus();
        // only s1 keeps more than one jump trial
        trials.retain(|t| !(t.task.as_str() == "jump" && t.subject.as_str() != "s1" && t.trial.as_str() == "t2"));
        trials.retain(|t| !(t.task.as_str() == "jump" && t.subject.as_str() == "s3"));
        let options = StudyOptions {
            conditions: vec![Condition::Optimized],
            ..StudyOptions::default()
        };
        let study = run_study(&trials, &conditions(), &OracleModel, &options).unwrap();
        // leaving out s1 leaves a single jump trial (s2/t1)
        assert_eq!(study.skipped.len(), 1);
        assert_eq!(study.skipped[0].left_out.as_str(), "s1");
        assert_eq!(study.folds.len(), 2);
    }

    #[test]
    fn parallel_matches_serial() {
        let trials = corpus();
        let serial = run_study(&trials, &conditions(), &OracleModel, &StudyOptions::default()).unwrap();
        let parallel = run_study(
            &trials,
            &conditions(),
            &OracleModel,
            &StudyOptions {
                jobs: 3,
                ..StudyOptions::default()
            },
        )
        .unwrap();
        let a: Vec<_> = serial.folds.iter().map(|f| f.result.clone()).collect();
        let b: Vec<_> = parallel.folds.iter().map(|f| f.result.clone()).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn fold_csv_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("folds.csv");
        let rows = vec![
            FoldResult {
                condition: Condition::Optimized,
                left_out: SubjectId::from("s1"),
                rmse: 0.25,
                r2: Some(0.5),
                n_train: 10,
                n_val: 3,
                n_test: 7,
                seed: 4,
            },
            FoldResult {
                condition: Condition::Cyclic,
                left_out: SubjectId::from("s2"),
                rmse: 0.5,
                r2: None,
                n_train: 1,
                n_val: 1,
                n_test: 1,
                seed: 5,
            },
        ];
        write_fold_results_csv(&path, &rows).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("condition,left_out_subject,rmse_nm_per_kg,r2,n_train,n_val,n_test,seed\n"));
        assert_eq!(read_fold_results_csv(&path).unwrap(), rows);
    }
}
