//! Staged command-line pipeline: `ingest → cluster → select → train → report`,
//! plus `synth` to generate a corpus. Each stage writes its artifacts under
//! the output directory and reads the previous stage's artifacts from there.

use std::collections::{BTreeMap, BTreeSet};
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::cluster::{self, ClusterModel};
use crate::crossval::{self, FcnnModel, FoldResult, StudyOptions, TRAIN_FRACTION};
use crate::dataset::{self, ExclusionReport, FeatureMatrix, IngestReport, SensorTrial, TaskManifest};
use crate::nn::{self, FcnnConfig};
use crate::pipeline::{self, ClusterSettings, PcaSettings};
use crate::stats;
use crate::svg;
use crate::synth::{self, SynthSpec};
use crate::taskselect::{self, Condition, Conditions, RepresentativeSet};

/// Best silhouette below this is reported as showing no real cluster structure.
pub const DEGENERATE_SILHOUETTE: f64 = 0.25;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration:\n  - {}", .0.join("\n  - "))]
    Validation(Vec<String>),
    #[error("missing {artifact}; run `taskopt {command}` first")]
    MissingUpstream { artifact: PathBuf, command: &'static str },
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) | CliError::MissingUpstream { .. } => 1,
            CliError::Runtime(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn runtime<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub profiles: PathBuf,
    pub sensors: PathBuf,
    pub tasks: PathBuf,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            profiles: "data/profiles.csv".into(),
            sensors: "data/sensors.csv".into(),
            tasks: "data/tasks.json".into(),
            output_dir: "out".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StudySettings {
    pub conditions: Vec<Condition>,
    /// Subjects with fewer cyclic-task trials are dropped at ingest.
    pub min_cyclic_trials: usize,
    pub train_fraction: f64,
    /// Paired t-tests across folds; `false` switches to Welch.
    pub paired: bool,
    /// Subject whose predictions are exported as traces (first subject when
    /// unset).
    pub trace_subject: Option<String>,
    /// Tasks exported as traces (the optimized set when empty).
    pub trace_tasks: Vec<String>,
}

impl Default for StudySettings {
    fn default() -> Self {
        Self {
            conditions: Condition::ALL.to_vec(),
            min_cyclic_trials: 1,
            train_fraction: TRAIN_FRACTION,
            paired: true,
            trace_subject: None,
            trace_tasks: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub paths: Paths,
    pub profile_length: usize,
    pub pca: PcaSettings,
    pub cluster: ClusterSettings,
    pub nn: FcnnConfig,
    pub study: StudySettings,
    pub seed: u64,
    pub synth: SynthSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            profile_length: dataset::DEFAULT_PROFILE_LENGTH,
            pca: PcaSettings::default(),
            cluster: ClusterSettings::default(),
            nn: FcnnConfig::default(),
            study: StudySettings::default(),
            seed: 0,
            synth: SynthSpec::default(),
        }
    }
}

impl RunConfig {
    /// Reads a JSON config. Relative paths are taken relative to the config
    /// file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(vec![format!("cannot read {}: {e}", path.display())]))?;
        let mut cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Validation(vec![format!("{}: {e}", path.display())]))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.paths.profiles,
            &mut cfg.paths.sensors,
            &mut cfg.paths.tasks,
            &mut cfg.paths.output_dir,
        ] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }

    /// Every violated constraint, one message each.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.profile_length < 2 {
            v.push("profile_length must be at least 2".into());
        }
        let t = self.pca.variance_threshold;
        if !(t > 0.0 && t <= 1.0) {
            v.push(format!("pca.variance_threshold {t} must lie in (0, 1]"));
        }
        let c = &self.cluster;
        if c.k_min < 2 {
            v.push(format!("cluster.k_min {} must be at least 2", c.k_min));
        }
        if c.k_max < c.k_min {
            v.push(format!("cluster.k_max {} is below k_min {}", c.k_max, c.k_min));
        }
        if c.restarts == 0 {
            v.push("cluster.restarts must be at least 1".into());
        }
        if c.max_iter == 0 {
            v.push("cluster.max_iter must be at least 1".into());
        }
        v.extend(self.nn.violations());
        let s = &self.study;
        if s.conditions.is_empty() {
            v.push("study.conditions must name at least one condition".into());
        }
        if s.conditions.iter().collect::<BTreeSet<_>>().len() != s.conditions.len() {
            v.push("study.conditions contains duplicates".into());
        }
        if !(s.train_fraction > 0.0 && s.train_fraction < 1.0) {
            v.push(format!("study.train_fraction {} must lie in (0, 1)", s.train_fraction));
        }
        v.extend(self.synth.violations());
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(CliError::Validation(v))
        }
    }

    fn stage_dir(&self, stage: &str) -> PathBuf {
        self.paths.output_dir.join(stage)
    }
}

// ---------------------------------------------------------------------------
// Artifact bookkeeping
// ---------------------------------------------------------------------------

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| CliError::Validation(vec![format!("output directory {} is not writable: {e}", dir.display())]))
}

fn require(path: PathBuf, command: &'static str) -> Result<PathBuf> {
    if path.is_file() {
        Ok(path)
    } else {
        Err(CliError::MissingUpstream { artifact: path, command })
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(runtime(&format!("writing {}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(runtime("serializing JSON"))?;
    write_text(path, &(text + "\n"))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(runtime(&format!("reading {}", path.display())))?;
    serde_json::from_str(&text).map_err(runtime(&format!("parsing {}", path.display())))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(runtime(&format!("hashing {}", path.display())))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// What one command read and wrote, appended to `run_manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub command: String,
    pub config_sha256: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, String>,
    pub artifacts: Vec<String>,
    pub finished_unix: u64,
}

fn record_stage(cfg: &RunConfig, command: &str, inputs: &[&Path], artifacts: &[PathBuf]) -> Result<()> {
    let manifest_path = cfg.paths.output_dir.join("run_manifest.json");
    let mut stages: BTreeMap<String, StageRecord> = if manifest_path.is_file() {
        read_json::<serde_json::Value>(&manifest_path)?
            .get("stages")
            .cloned()
            .and_then(|v| serde_json::from_value(v).ok())
            .unwrap_or_default()
    } else {
        BTreeMap::new()
    };
    let config_json = serde_json::to_vec(cfg).map_err(runtime("serializing config"))?;
    let mut hashes = BTreeMap::new();
    for p in inputs {
        hashes.insert(p.display().to_string(), sha256_file(p)?);
    }
    let rel = |p: &PathBuf| {
        p.strip_prefix(&cfg.paths.output_dir)
            .unwrap_or(p)
            .display()
            .to_string()
    };
    stages.insert(
        command.to_string(),
        StageRecord {
            command: command.to_string(),
            config_sha256: hex::encode(Sha256::digest(&config_json)),
            seed: cfg.seed,
            inputs: hashes,
            artifacts: artifacts.iter().map(rel).collect(),
            finished_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        },
    );
    write_json(&manifest_path, &json!({ "stages": stages }))
}

// ---------------------------------------------------------------------------
// ingest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IngestSummary {
    pub profiles: IngestReport,
    pub sensors: IngestReport,
    pub exclusion: ExclusionReport,
    pub n_rows: usize,
    pub n_cols: usize,
    pub profile_length: usize,
    pub subjects: Vec<String>,
    pub tasks: Vec<String>,
}

pub fn ingest_paths(cfg: &RunConfig) -> (PathBuf, PathBuf) {
    let dir = cfg.stage_dir("ingest");
    (dir.join("feature_matrix.json"), dir.join("ingest_report.json"))
}

fn load_manifest(cfg: &RunConfig) -> Result<TaskManifest> {
    TaskManifest::load(&cfg.paths.tasks).map_err(runtime("loading task manifest"))
}

pub fn cmd_ingest(cfg: &RunConfig) -> Result<IngestSummary> {
    let manifest = load_manifest(cfg)?;
    let loaded = dataset::load_profiles(&cfg.paths.profiles, &manifest, cfg.profile_length)
        .map_err(runtime("loading profiles"))?;
    let sensors = dataset::load_sensor_samples(&cfg.paths.sensors, &manifest).map_err(runtime("loading sensors"))?;
    let (kept, exclusion) = dataset::exclude_subjects(loaded.profiles, &manifest, cfg.study.min_cyclic_trials);
    if exclusion.empty {
        return Err(CliError::Runtime(format!(
            "every subject has fewer than {} cyclic trials; nothing left to analyze",
            cfg.study.min_cyclic_trials
        )));
    }
    let matrix = dataset::build_feature_matrix(&kept).map_err(runtime("building feature matrix"))?;
    let summary = IngestSummary {
        profiles: loaded.report,
        sensors: sensors.report,
        exclusion,
        n_rows: matrix.n_rows(),
        n_cols: matrix.n_cols(),
        profile_length: matrix.profile_length,
        subjects: matrix.subjects().iter().map(|s| s.to_string()).collect(),
        tasks: matrix
            .labels
            .iter()
            .map(|l| l.task.to_string())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect(),
    };
    let dir = cfg.stage_dir("ingest");
    create_dir(&dir)?;
    let (matrix_path, report_path) = ingest_paths(cfg);
    matrix.save(&matrix_path).map_err(runtime("saving feature matrix"))?;
    write_json(&report_path, &summary)?;
    log::info!(
        "ingest: {} rows × {} columns from {} subjects",
        summary.n_rows,
        summary.n_cols,
        summary.subjects.len()
    );
    record_stage(
        cfg,
        "ingest",
        &[&cfg.paths.profiles, &cfg.paths.sensors, &cfg.paths.tasks],
        &[matrix_path, report_path],
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// cluster
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub route: String,
    pub n_components: usize,
    pub cumulative_ratio: f64,
    pub best_k: usize,
    pub silhouette: f64,
    pub k_range: (usize, usize),
    /// The best silhouette is below [`DEGENERATE_SILHOUETTE`].
    pub degenerate: bool,
}

pub fn cmd_cluster(cfg: &RunConfig) -> Result<ClusterSummary> {
    let (matrix_path, _) = ingest_paths(cfg);
    let matrix_path = require(matrix_path, "ingest")?;
    let matrix = FeatureMatrix::load(&matrix_path).map_err(runtime("loading feature matrix"))?;
    let projection = pipeline::project(&matrix, &cfg.pca).map_err(runtime("PCA"))?;
    let selection = pipeline::scan_k(&projection.scores, &cfg.cluster, cfg.seed).map_err(runtime("clustering"))?;
    let model = &selection.model;
    let summary = ClusterSummary {
        route: format!("{:?}", projection.model.route).to_lowercase(),
        n_components: projection.n_components,
        cumulative_ratio: projection.cumulative_ratio,
        best_k: selection.best_k,
        silhouette: model.silhouette,
        k_range: (
            selection.table.first().map_or(0, |r| r.0),
            selection.table.last().map_or(0, |r| r.0),
        ),
        degenerate: model.silhouette < DEGENERATE_SILHOUETTE,
    };
    if summary.degenerate {
        log::warn!(
            "best silhouette {:.3} is below {DEGENERATE_SILHOUETTE}: the data show no clear cluster structure",
            model.silhouette
        );
    }

    let dir = cfg.stage_dir("cluster");
    create_dir(&dir)?;
    let pca_path = dir.join("pca_model.json");
    let model_path = dir.join("cluster_model.json");
    let sil_path = dir.join("silhouette.csv");
    let ev_path = dir.join("explained_variance.csv");
    let scores_path = dir.join("pca_scores.csv");
    let svg_path = dir.join("pca_scatter.svg");
    let summary_path = dir.join("cluster_summary.json");
    projection.model.save(&pca_path).map_err(runtime("saving PCA model"))?;
    model.save(&model_path).map_err(runtime("saving cluster model"))?;
    cluster::write_silhouette_csv(&sil_path, &selection.table).map_err(runtime("writing silhouette table"))?;

    let mut ev = String::from("component,explained_variance,ratio,cumulative\n");
    let mut cum = 0.0;
    for (i, (v, r)) in projection
        .model
        .explained_variance
        .iter()
        .zip(&projection.model.explained_variance_ratio)
        .enumerate()
    {
        cum += r;
        ev.push_str(&format!("{},{v},{r},{cum}\n", i + 1));
    }
    write_text(&ev_path, &ev)?;

    let p = projection.n_components;
    let mut sc = String::from("subject,task,trial,cluster");
    for j in 0..p {
        sc.push_str(&format!(",pc{}", j + 1));
    }
    sc.push('\n');
    for (i, l) in matrix.labels.iter().enumerate() {
        sc.push_str(&format!("{},{},{},{}", l.subject, l.task, l.trial, model.assignments[i]));
        for v in projection.scores.row(i) {
            sc.push_str(&format!(",{v}"));
        }
        sc.push('\n');
    }
    write_text(&scores_path, &sc)?;

    let points: Vec<(f64, f64, usize)> = (0..matrix.n_rows())
        .map(|i| {
            let r = projection.scores.row(i);
            (r[0], r.get(1).copied().unwrap_or(0.0), model.assignments[i])
        })
        .collect();
    write_text(
        &svg_path,
        &svg::scatter(
            &points,
            &format!("PCA scores, K = {} (silhouette {:.3})", summary.best_k, summary.silhouette),
            "PC1",
            "PC2",
        ),
    )?;
    write_json(&summary_path, &summary)?;
    log::info!(
        "cluster: {p} components ({:.1}% variance), K* = {} with silhouette {:.3}",
        100.0 * summary.cumulative_ratio,
        summary.best_k,
        summary.silhouette
    );
    record_stage(
        cfg,
        "cluster",
        &[&matrix_path],
        &[pca_path, model_path, sil_path, ev_path, scores_path, svg_path, summary_path],
    )?;
    Ok(summary)
}

// ---------------------------------------------------------------------------
// select
// ---------------------------------------------------------------------------

pub fn conditions_path(cfg: &RunConfig) -> PathBuf {
    cfg.stage_dir("select").join("conditions.json")
}

pub fn cmd_select(cfg: &RunConfig) -> Result<Conditions> {
    let (matrix_path, _) = ingest_paths(cfg);
    let matrix_path = require(matrix_path, "ingest")?;
    let model_path = require(cfg.stage_dir("cluster").join("cluster_model.json"), "cluster")?;
    let matrix = FeatureMatrix::load(&matrix_path).map_err(runtime("loading feature matrix"))?;
    let model = ClusterModel::load(&model_path).map_err(runtime("loading cluster model"))?;
    if model.assignments.len() != matrix.n_rows() {
        return Err(CliError::Runtime(format!(
            "cluster model has {} assignments for {} matrix rows; rerun `taskopt cluster`",
            model.assignments.len(),
            matrix.n_rows()
        )));
    }
    let manifest = load_manifest(cfg)?;
    let selection =
        pipeline::select_tasks(&matrix, &model.assignments, &manifest).map_err(runtime("task selection"))?;

    let dir = cfg.stage_dir("select");
    create_dir(&dir)?;
    let table_path = dir.join("task_weights.csv");
    let reps_path = dir.join("representatives.json");
    let cond_path = conditions_path(cfg);
    taskselect::write_table_csv(&table_path, &selection.table).map_err(runtime("writing task-weight table"))?;
    write_json(&reps_path, &selection.representatives)?;
    selection.conditions.save(&cond_path).map_err(runtime("saving conditions"))?;
    log::info!(
        "select: optimized set {:?}",
        selection.representatives.tasks.iter().map(|t| t.as_str()).collect::<Vec<_>>()
    );
    record_stage(
        cfg,
        "select",
        &[&matrix_path, &model_path, &cfg.paths.tasks],
        &[table_path, reps_path, cond_path],
    )?;
    Ok(selection.conditions)
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

fn fold_stem(c: Condition, subject: &str) -> String {
    format!("{c}_{subject}")
}

fn load_training_trials(cfg: &RunConfig) -> Result<Vec<SensorTrial>> {
    let (_, report_path) = ingest_paths(cfg);
    let report_path = require(report_path, "ingest")?;
    let summary: IngestSummary = read_json(&report_path)?;
    let dropped = summary.exclusion.dropped_subjects();
    let manifest = load_manifest(cfg)?;
    let mut trials = dataset::load_sensor_samples(&cfg.paths.sensors, &manifest)
        .map_err(runtime("loading sensors"))?
        .trials;
    trials.retain(|t| !dropped.contains(&t.subject));
    Ok(trials)
}

pub fn cmd_train(cfg: &RunConfig, jobs: usize) -> Result<Vec<FoldResult>> {
    let cond_path = require(conditions_path(cfg), "select")?;
    let conditions = Conditions::load(&cond_path).map_err(runtime("loading conditions"))?;
    let trials = load_training_trials(cfg)?;
    let options = StudyOptions {
        conditions: cfg.study.conditions.clone(),
        seed: cfg.seed,
        train_fraction: cfg.study.train_fraction,
        jobs: jobs.max(1),
    };
    let model = FcnnModel { config: cfg.nn.clone() };
    let study = crossval::run_study(&trials, &conditions, &model, &options).map_err(runtime("training"))?;

    let dir = cfg.stage_dir("train");
    for sub in ["checkpoints", "history", "predictions"] {
        create_dir(&dir.join(sub))?;
    }
    let mut artifacts = Vec::new();
    let by_subject: BTreeMap<&str, Vec<&SensorTrial>> = trials.iter().fold(BTreeMap::new(), |mut m, t| {
        m.entry(t.subject.as_str()).or_insert_with(Vec::new).push(t);
        m
    });
    for fold in &study.folds {
        let r = &fold.result;
        let stem = fold_stem(r.condition, r.left_out.as_str());
        let ckpt = dir.join("checkpoints").join(format!("{stem}.json"));
        fold.artifact.checkpoint.save(&ckpt).map_err(runtime("saving checkpoint"))?;
        let hist = dir.join("history").join(format!("{stem}.csv"));
        nn::write_history_csv(&hist, &fold.artifact.history).map_err(runtime("writing history"))?;
        // predictions follow the same trial order as the test set
        let mut pred = String::from("task,trial,time_s,truth,prediction\n");
        let mut k = 0;
        for t in &by_subject[r.left_out.as_str()] {
            for s in &t.samples {
                pred.push_str(&format!("{},{},{},{},{}\n", t.task, t.trial, s.time, s.target, fold.predictions[k]));
                k += 1;
            }
        }
        let pred_path = dir.join("predictions").join(format!("{stem}.csv"));
        write_text(&pred_path, &pred)?;
        artifacts.extend([ckpt, hist, pred_path]);
    }
    let results: Vec<FoldResult> = study.folds.iter().map(|f| f.result.clone()).collect();
    let folds_path = dir.join("fold_results.csv");
    let summary_path = dir.join("summary.csv");
    let skipped_path = dir.join("skipped_folds.json");
    crossval::write_fold_results_csv(&folds_path, &results).map_err(runtime("writing fold results"))?;
    crossval::write_summary_csv(&summary_path, &study.summary).map_err(runtime("writing summary"))?;
    write_json(&skipped_path, &study.skipped)?;
    for s in &study.summary {
        log::info!(
            "train: {} RMSE {:.3} ± {:.3} Nm/kg, R² {:.3} ± {:.3} over {} folds",
            s.condition,
            s.rmse_mean,
            s.rmse_std,
            s.r2_mean,
            s.r2_std,
            s.n_folds
        );
    }
    artifacts.extend([folds_path, summary_path, skipped_path]);
    record_stage(cfg, "train", &[&cond_path, &cfg.paths.sensors], &artifacts)?;
    Ok(results)
}

// ---------------------------------------------------------------------------
// report
// ---------------------------------------------------------------------------

/// Metric vectors aligned on the subjects present in every condition.
fn aligned(results: &[FoldResult], conditions: &[Condition], metric: fn(&FoldResult) -> Option<f64>) -> Vec<Vec<f64>> {
    let per: Vec<BTreeMap<&str, f64>> = conditions
        .iter()
        .map(|&c| {
            results
                .iter()
                .filter(|r| r.condition == c)
                .filter_map(|r| metric(r).map(|v| (r.left_out.as_str(), v)))
                .collect()
        })
        .collect();
    let common: BTreeSet<&str> = per
        .iter()
        .map(|m| m.keys().copied().collect::<BTreeSet<_>>())
        .reduce(|a, b| a.intersection(&b).copied().collect())
        .unwrap_or_default();
    per.iter()
        .map(|m| common.iter().map(|s| m[s]).collect())
        .collect()
}

fn stats_json(metric: &str, ms: &stats::MetricStats) -> serde_json::Value {
    json!({
        "metric": metric,
        "anova": {
            "f": ms.anova.f_stat,
            "df": [ms.anova.df_between, ms.anova.df_within],
            "p": ms.anova.p_value,
            "degenerate": ms.anova.degenerate,
            "significant": ms.anova.significant(),
        },
        "pairwise": ms.pairwise.iter().map(|p| json!({
            "pair": [p.pair.0, p.pair.1],
            "t": p.t_stat,
            "df": p.df,
            "p_raw": p.p_raw,
            "p_adj": p.p_adjusted,
            "mean_diff": p.mean_diff,
            "pct_reduction_mean": p.pct_reduction_mean,
            "pct_reduction_std": p.pct_reduction_std,
            "degenerate": p.degenerate,
            "significant": p.significant(),
        })).collect::<Vec<_>>(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub summary: Vec<crossval::ConditionSummary>,
    /// `None` with a note when fewer than two conditions were trained.
    pub stats: Option<serde_json::Value>,
    pub note: Option<String>,
}

pub fn cmd_report(cfg: &RunConfig) -> Result<ReportSummary> {
    let folds_path = require(cfg.stage_dir("train").join("fold_results.csv"), "train")?;
    let results = crossval::read_fold_results_csv(&folds_path).map_err(runtime("reading fold results"))?;
    let conditions: Vec<Condition> = cfg
        .study
        .conditions
        .iter()
        .copied()
        .filter(|c| results.iter().any(|r| r.condition == *c))
        .collect();
    let summary = crossval::summarize(&results, &conditions);

    let dir = cfg.stage_dir("report");
    create_dir(&dir)?;
    let mut artifacts = Vec::new();

    let summary_path = dir.join("summary.csv");
    crossval::write_summary_csv(&summary_path, &summary).map_err(runtime("writing summary"))?;
    artifacts.push(summary_path);

    let mut perf = String::from("condition,metric,mean,std,n_folds\n");
    for s in &summary {
        perf.push_str(&format!("{},rmse_nm_per_kg,{},{},{}\n", s.condition, s.rmse_mean, s.rmse_std, s.n_folds));
        perf.push_str(&format!("{},r2,{},{},{}\n", s.condition, s.r2_mean, s.r2_std, s.n_folds));
    }
    let perf_csv = dir.join("performance.csv");
    write_text(&perf_csv, &perf)?;
    let panel = |title: &str, f: fn(&crossval::ConditionSummary) -> (f64, f64)| svg::Panel {
        title: title.to_string(),
        bars: summary
            .iter()
            .map(|s| {
                let (value, error) = f(s);
                svg::Bar {
                    label: s.condition.to_string(),
                    value,
                    error,
                }
            })
            .collect(),
    };
    let perf_svg = dir.join("performance.svg");
    write_text(
        &perf_svg,
        &svg::bar_panels(
            &[
                panel("RMSE (Nm/kg)", |s| (s.rmse_mean, s.rmse_std)),
                panel("R²", |s| (s.r2_mean, s.r2_std)),
            ],
            "Leave-one-subject-out performance by training condition",
        ),
    )?;
    artifacts.extend([perf_csv, perf_svg]);

    let stats_path = dir.join("stats.json");
    let (stats_value, note) = if conditions.len() < 2 {
        let note = format!(
            "statistics omitted: ANOVA needs ≥ 2 conditions, found {}",
            conditions.len()
        );
        log::warn!("{note}");
        (None, Some(note))
    } else {
        let names: Vec<String> = conditions.iter().map(|c| c.to_string()).collect();
        let mut metrics = Vec::new();
        for (label, f) in [
            ("rmse_nm_per_kg", (|r: &FoldResult| Some(r.rmse)) as fn(&FoldResult) -> Option<f64>),
            ("r2", |r: &FoldResult| r.r2),
        ] {
            let vals = aligned(&results, &conditions, f);
            let groups: Vec<(&str, &[f64])> = names.iter().map(|n| n.as_str()).zip(vals.iter().map(|v| v.as_slice())).collect();
            match stats::compare_conditions(label, &groups, cfg.study.paired) {
                Ok(ms) => metrics.push(stats_json(label, &ms)),
                Err(e) => metrics.push(json!({ "metric": label, "error": e.to_string() })),
            }
        }
        (
            Some(json!({
                "alpha": stats::ALPHA,
                "paired": cfg.study.paired,
                "metrics": metrics,
            })),
            None,
        )
    };
    write_json(
        &stats_path,
        &json!({ "stats": stats_value, "note": note }),
    )?;
    artifacts.push(stats_path);

    artifacts.extend(write_traces(cfg, &results, &conditions, &dir)?);
    log::info!("report: written to {}", dir.display());
    record_stage(cfg, "report", &[&folds_path], &artifacts)?;
    Ok(ReportSummary {
        summary,
        stats: stats_value,
        note,
    })
}

/// Predicted-versus-measured moment for the chosen subject and tasks, one
/// row per sample and condition.
fn write_traces(cfg: &RunConfig, results: &[FoldResult], conditions: &[Condition], dir: &Path) -> Result<Vec<PathBuf>> {
    let subject = match &cfg.study.trace_subject {
        Some(s) => s.clone(),
        None => match results.iter().map(|r| r.left_out.as_str()).min() {
            Some(s) => s.to_string(),
            None => return Ok(Vec::new()),
        },
    };
    let tasks: BTreeSet<String> = if cfg.study.trace_tasks.is_empty() {
        let reps_path = cfg.stage_dir("select").join("representatives.json");
        if reps_path.is_file() {
            let reps: RepresentativeSet = read_json(&reps_path)?;
            reps.tasks.iter().map(|t| t.to_string()).collect()
        } else {
            BTreeSet::new()
        }
    } else {
        cfg.study.trace_tasks.iter().cloned().collect()
    };
    let mut out = String::from("condition,subject,task,trial,time_s,truth,prediction\n");
    for &c in conditions {
        let path = cfg
            .stage_dir("train")
            .join("predictions")
            .join(format!("{}.csv", fold_stem(c, &subject)));
        if !path.is_file() {
            continue;
        }
        let mut reader = csv::Reader::from_path(&path).map_err(runtime("reading predictions"))?;
        for rec in reader.records() {
            let rec = rec.map_err(runtime("reading predictions"))?;
            if tasks.is_empty() || tasks.contains(&rec[0]) {
                out.push_str(&format!("{c},{subject},{},{},{},{},{}\n", &rec[0], &rec[1], &rec[2], &rec[3], &rec[4]));
            }
        }
    }
    let path = dir.join("traces.csv");
    write_text(&path, &out)?;
    Ok(vec![path])
}

// ---------------------------------------------------------------------------
// synth
// ---------------------------------------------------------------------------

pub fn cmd_synth(cfg: &RunConfig) -> Result<synth::GroundTruth> {
    let data = synth::generate(&cfg.synth).map_err(|e| match e {
        synth::SynthError::InvalidSpec(m) => CliError::Validation(vec![m]),
        other => CliError::Runtime(format!("generating synthetic data: {other}")),
    })?;
    let write = |res: dataset::Result<()>| res.map_err(runtime("writing synthetic data"));
    for p in [&cfg.paths.profiles, &cfg.paths.sensors, &cfg.paths.tasks] {
        if let Some(dir) = p.parent() {
            create_dir(dir)?;
        }
    }
    write(dataset::write_profiles_csv(&cfg.paths.profiles, &data.profiles))?;
    write(dataset::write_sensors_csv(&cfg.paths.sensors, &data.sensors))?;
    write(data.manifest.save(&cfg.paths.tasks))?;
    let gt_path = cfg
        .paths
        .profiles
        .parent()
        .unwrap_or(Path::new("."))
        .join("ground_truth.json");
    write_json(&gt_path, &data.ground_truth)?;
    create_dir(&cfg.paths.output_dir)?;
    log::info!(
        "synth: {} subjects, {} tasks, {} planted clusters",
        cfg.synth.n_subjects,
        cfg.synth.n_tasks,
        cfg.synth.n_clusters
    );
    record_stage(
        cfg,
        "synth",
        &[],
        &[
            cfg.paths.profiles.clone(),
            cfg.paths.sensors.clone(),
            cfg.paths.tasks.clone(),
            gt_path,
        ],
    )?;
    Ok(data.ground_truth)
}

// ---------------------------------------------------------------------------
// argument parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Parser)]
#[command(name = "taskopt", version, about = "Task discovery and hip-moment model training pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for `train`.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    /// Overrides the configured seed (and the synthetic spec seed for `synth`).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Validate inputs and build the feature matrix.
    Ingest,
    /// PCA, silhouette scan over K and k-means.
    Cluster,
    /// Task-weight table, representatives and training conditions.
    Select,
    /// Leave-one-subject-out training for every condition.
    Train,
    /// Summary tables, statistics, charts and traces.
    Report,
    /// Generate a synthetic corpus at the configured data paths.
    Synth,
}

/// Resolves the effective configuration from parsed arguments.
pub fn resolve_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| CliError::Validation(vec!["--config <config.json> is required".into()]))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        if cli.command == Command::Synth {
            cfg.synth.seed = seed;
        }
    }
    if let Some(out) = &cli.out {
        cfg.paths.output_dir = out.clone();
    }
    if cli.jobs == 0 {
        return Err(CliError::Validation(vec!["--jobs must be at least 1".into()]));
    }
    cfg.validate()?;
    Ok(cfg)
}

pub fn execute(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    match cli.command {
        Command::Ingest => cmd_ingest(&cfg).map(drop),
        Command::Cluster => cmd_cluster(&cfg).map(drop),
        Command::Select => cmd_select(&cfg).map(drop),
        Command::Train => cmd_train(&cfg, cli.jobs).map(drop),
        Command::Report => cmd_report(&cfg).map(drop),
        Command::Synth => cmd_synth(&cfg).map(drop),
    }
}

/// Entry point for the `taskopt` binary.
pub fn run<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .try_init();
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_is_valid() {
        assert!(RunConfig::default().violations().is_empty());
    }

    #[test]
    fn violations_list_every_field() {
        let mut cfg = RunConfig::default();
        cfg.pca.variance_threshold = 1.5;
        cfg.cluster.k_min = 1;
        cfg.nn.dropout_rate = 1.0;
        cfg.study.conditions.clear();
        let v = cfg.violations();
        assert_eq!(v.len(), 4, "{v:?}");
        let msg = CliError::Validation(v).to_string();
        for field in ["pca.variance_threshold", "cluster.k_min", "nn.dropout_rate", "study.conditions"] {
            assert!(msg.contains(field), "{msg}");
        }
    }

    #[test]
    fn unknown_config_keys_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(&p, r#"{"sede": 3}"#).unwrap();
        assert!(matches!(RunConfig::load(&p), Err(CliError::Validation(_))));
        std::fs::write(&p, r#"{"seed": 3, "pca": {"variance_threshold": 0.8}}"#).unwrap();
        let cfg = RunConfig::load(&p).unwrap();
        assert_eq!(cfg.seed, 3);
        assert!(cfg.pca.standardize);
        assert_eq!(cfg.paths.output_dir, dir.path().join("out"));
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Validation(vec![]).exit_code(), 1);
        assert_eq!(
            CliError::MissingUpstream {
                artifact: "x".into(),
                command: "ingest"
            }
            .exit_code(),
            1
        );
        assert_eq!(CliError::Runtime("x".into()).exit_code(), 2);
    }

    #[test]
    fn aligned_keeps_common_subjects() {
        let r = |c, s: &str, v| FoldResult {
            condition: c,
            left_out: s.into(),
            rmse: v,
            r2: Some(v),
            n_train: 1,
            n_val: 1,
            n_test: 1,
            seed: 0,
        };
        let results = vec![
            r(Condition::All, "a", 1.0),
            r(Condition::All, "b", 2.0),
            r(Condition::Cyclic, "b", 3.0),
            r(Condition::Cyclic, "c", 4.0),
        ];
        let v = aligned(&results, &[Condition::All, Condition::Cyclic], |r| Some(r.rmse));
        assert_eq!(v, vec![vec![2.0], vec![3.0]]);
    }
}
