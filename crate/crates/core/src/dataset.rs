//! Ingestion of cycle-averaged profiles and sensor streams.
//!
//! Two long-format CSV files feed the pipeline:
//!
//! * `profiles.csv` holds one cycle-averaged hip moment/angle/velocity triplet
//!   per `(subject, task, trial)`, one sample per row.
//! * `sensors.csv` holds the time series used to train the moment estimator:
//!   hip angle and velocity plus pelvis and thigh IMU channels, with the hip
//!   moment as target.
//!
//! A `tasks.json` manifest says which tasks are cyclic, which are excluded
//! and what collection-difficulty weight each task carries.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::Matrix;

/// Number of network input channels per sensor sample.
pub const SENSOR_INPUTS: usize = 14;

/// Default number of samples a cycle profile is resampled to.
pub const DEFAULT_PROFILE_LENGTH: usize = 100;

pub const PROFILES_HEADER: [&str; 7] = [
    "subject",
    "task",
    "trial",
    "sample_index",
    "hip_moment_nm_per_kg",
    "hip_angle_rad",
    "hip_velocity_rad_s",
];

pub const SENSORS_HEADER: [&str; 19] = [
    "subject",
    "task",
    "trial",
    "time_s",
    "hip_angle_rad",
    "hip_velocity_rad_s",
    "pelvis_ax",
    "pelvis_ay",
    "pelvis_az",
    "pelvis_gx",
    "pelvis_gy",
    "pelvis_gz",
    "thigh_ax",
    "thigh_ay",
    "thigh_az",
    "thigh_gx",
    "thigh_gy",
    "thigh_gz",
    "hip_moment_nm_per_kg",
];

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed row: {reason}")]
    Malformed {
        path: PathBuf,
        line: u64,
        reason: String,
    },
    #[error("{path}:{line}: unknown task id `{task}` (not in manifest)")]
    UnknownTask {
        path: PathBuf,
        line: u64,
        task: String,
    },
    #[error("{path}:{line}: non-finite value in column `{column}`")]
    NonFinite {
        path: PathBuf,
        line: u64,
        column: String,
    },
    #[error("{path}:{line}: time is not strictly increasing within trial {key}")]
    NonMonotonicTime { path: PathBuf, line: u64, key: String },
    #[error("trial {key} has {len} samples; at least 2 are required")]
    TooShort { key: String, len: usize },
    #[error("trial {key}: sample_index is not contiguous from 0 ({detail})")]
    BadSampleIndex { key: String, detail: String },
    #[error("duplicate (subject, task, trial): {0}")]
    Duplicate(String),
    #[error("profile length mismatch: expected {expected}, found {found} for {key}")]
    LengthMismatch {
        expected: usize,
        found: usize,
        key: String,
    },
    #[error("non-finite value in profile {0}")]
    NonFiniteProfile(String),
    #[error("no profiles to assemble")]
    Empty,
    #[error("invalid manifest: {0}")]
    Manifest(String),
    #[error("target length must be at least 2, got {0}")]
    BadTargetLength(usize),
    #[error("JSON error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("CSV error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, DatasetError>;

macro_rules! string_id {
    ($(#[$doc:meta])* $name:ident) => {
        $(#[$doc])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(String);

        impl $name {
            pub fn new(s: impl Into<String>) -> Self {
                Self(s.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }

        impl From<String> for $name {
            fn from(s: String) -> Self {
                Self(s)
            }
        }
    };
}

string_id!(SubjectId);
string_id!(
    /// Task identifier. Whether a task is cyclic is looked up in the
    /// [`TaskManifest`], which is the single source for task typing.
    TaskId
);
string_id!(TrialId);

/// `(subject, task, trial)` key identifying one trial.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct RowLabel {
    pub subject: SubjectId,
    pub task: TaskId,
    pub trial: TrialId,
}

impl fmt::Display for RowLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.subject, self.task, self.trial)
    }
}

// ---------------------------------------------------------------------------
// Task manifest
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskEntry {
    pub id: TaskId,
    pub cyclic: bool,
    /// Collection-difficulty weight in (0, 1].
    pub w: f64,
    #[serde(default)]
    pub excluded: bool,
}

/// Contents of `tasks.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskManifest {
    pub tasks: Vec<TaskEntry>,
}

impl TaskManifest {
    pub fn new(tasks: Vec<TaskEntry>) -> Result<Self> {
        let m = Self { tasks };
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        let m: Self = serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.to_owned(),
            source,
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes");
        write_file(path, text.as_bytes())
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for t in &self.tasks {
            if t.id.as_str().is_empty() {
                return Err(DatasetError::Manifest("empty task id".into()));
            }
            if !seen.insert(&t.id) {
                return Err(DatasetError::Manifest(format!("duplicate task id `{}`", t.id)));
            }
            if !(t.w > 0.0 && t.w <= 1.0) {
                return Err(DatasetError::Manifest(format!(
                    "task `{}` has weight {} outside (0, 1]",
                    t.id, t.w
                )));
            }
        }
        Ok(())
    }

    pub fn get(&self, id: &TaskId) -> Option<&TaskEntry> {
        self.tasks.iter().find(|t| &t.id == id)
    }

    pub fn is_cyclic(&self, id: &TaskId) -> bool {
        self.get(id).is_some_and(|t| t.cyclic)
    }

    pub fn is_excluded(&self, id: &TaskId) -> bool {
        self.get(id).is_some_and(|t| t.excluded)
    }

    /// Every task that is not excluded, in manifest order.
    pub fn included(&self) -> impl Iterator<Item = &TaskEntry> {
        self.tasks.iter().filter(|t| !t.excluded)
    }

    pub fn weights(&self) -> BTreeMap<TaskId, f64> {
        self.included().map(|t| (t.id.clone(), t.w)).collect()
    }

    /// Manifest for the 27-task open locomotion dataset: the seven atypical
    /// non-cyclic tasks are excluded, leaving 8 cyclic and 12 non-cyclic
    /// tasks. Weights follow the published task-weight table where a task
    /// appears there; unpublished weights use the 0.9/0.8 tiers.
    pub fn locomotor_default() -> Self {
        const TASKS: [(&str, bool, f64, bool); 27] = [
            ("normal_walk", true, 1.0, false),
            ("incline_walk", true, 1.0, false),
            ("stairs_up", true, 1.0, false),
            ("stairs_down", true, 1.0, false),
            ("walk_backward", true, 0.9, false),
            ("dynamic_walk", true, 0.9, false),
            ("weighted_walk", true, 0.9, false),
            ("side_shuffle", true, 0.9, false),
            ("tire_run", false, 0.9, false),
            ("lunges", false, 0.9, false),
            ("jump", false, 0.9, false),
            ("sit_to_stand", false, 0.9, false),
            ("squats", false, 0.9, false),
            ("step_ups", false, 0.9, false),
            ("lift_weight", false, 0.8, false),
            ("ball_toss", false, 0.8, false),
            ("curb_up", false, 0.8, false),
            ("curb_down", false, 0.8, false),
            ("cutting", false, 0.8, false),
            ("turn_and_step", false, 0.8, false),
            ("meander", true, 0.8, true),
            ("obstacle_walk", true, 0.8, true),
            ("poses", false, 0.8, true),
            ("push", false, 0.8, true),
            ("start_stop", false, 0.8, true),
            ("tug_of_war", false, 0.8, true),
            ("twister", false, 0.8, true),
        ];
        Self {
            tasks: TASKS
                .iter()
                .map(|&(id, cyclic, w, excluded)| TaskEntry {
                    id: id.into(),
                    cyclic,
                    w,
                    excluded,
                })
                .collect(),
        }
    }
}

// ---------------------------------------------------------------------------
// Profiles
// ---------------------------------------------------------------------------

/// One cycle-averaged moment/angle/velocity triplet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CycleProfile {
    pub subject: SubjectId,
    pub task: TaskId,
    pub trial: TrialId,
    /// Hip moment, Nm/kg.
    pub moment: Vec<f64>,
    /// Hip angle, rad.
    pub angle: Vec<f64>,
    /// Hip angular velocity, rad/s.
    pub velocity: Vec<f64>,
}

impl CycleProfile {
    pub fn len(&self) -> usize {
        self.moment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moment.is_empty()
    }

    pub fn label(&self) -> RowLabel {
        RowLabel {
            subject: self.subject.clone(),
            task: self.task.clone(),
            trial: self.trial.clone(),
        }
    }

    /// Resamples all three signals to `target_length`.
    pub fn resampled(&self, target_length: usize) -> Result<CycleProfile> {
        let key = self.label().to_string();
        let rs = |s: &[f64]| {
            resample_linear(s, target_length).map_err(|e| match e {
                DatasetError::TooShort { len, .. } => DatasetError::TooShort {
                    key: key.clone(),
                    len,
                },
                other => other,
            })
        };
        Ok(CycleProfile {
            subject: self.subject.clone(),
            task: self.task.clone(),
            trial: self.trial.clone(),
            moment: rs(&self.moment)?,
            angle: rs(&self.angle)?,
            velocity: rs(&self.velocity)?,
        })
    }
}

/// Piecewise-linear resampling onto a uniform grid that includes both
/// endpoints. Endpoints are copied exactly and grid points that coincide with
/// source samples return those samples unchanged.
pub fn resample_linear(signal: &[f64], target_length: usize) -> Result<Vec<f64>> {
    if target_length < 2 {
        return Err(DatasetError::BadTargetLength(target_length));
    }
    let n = signal.len();
    if n < 2 {
        return Err(DatasetError::TooShort {
            key: "<signal>".into(),
            len: n,
        });
    }
    let span = target_length - 1;
    let out = (0..target_length)
        .map(|i| {
            let num = i * (n - 1);
            let j = num / span;
            let rem = num % span;
            if rem == 0 {
                signal[j]
            } else {
                let frac = rem as f64 / span as f64;
                signal[j] + (signal[j + 1] - signal[j]) * frac
            }
        })
        .collect();
    Ok(out)
}

/// Counters describing what an ingest pass read and dropped.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub file: String,
    pub rows_read: usize,
    pub rows_dropped_excluded: usize,
    pub trials_loaded: usize,
    pub trials_dropped_excluded: usize,
    /// Rows dropped per excluded task.
    pub excluded_tasks: BTreeMap<TaskId, usize>,
}

#[derive(Debug)]
pub struct LoadedProfiles {
    pub profiles: Vec<CycleProfile>,
    pub report: IngestReport,
}

/// Reads `profiles.csv`, drops excluded tasks and resamples every trial to
/// `target_length`. Profiles come back sorted by `(subject, task, trial)`.
pub fn load_profiles(
    path: &Path,
    manifest: &TaskManifest,
    target_length: usize,
) -> Result<LoadedProfiles> {
    if target_length < 2 {
        return Err(DatasetError::BadTargetLength(target_length));
    }
    let mut reader = open_csv(path, &PROFILES_HEADER)?;
    let mut report = IngestReport {
        file: path.display().to_string(),
        ..Default::default()
    };

    type Sample = (usize, f64, f64, f64);
    let mut trials: BTreeMap<RowLabel, Vec<Sample>> = BTreeMap::new();
    let mut dropped_trials: BTreeSet<RowLabel> = BTreeSet::new();

    let mut record = csv::StringRecord::new();
    loop {
        let has = reader.read_record(&mut record).map_err(|source| DatasetError::Csv {
            path: path.to_owned(),
            source,
        })?;
        if !has {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        report.rows_read += 1;
        let row = RowCtx { path, line, record: &record };
        row.expect_arity(PROFILES_HEADER.len())?;
        let label = row.label(manifest)?;
        if manifest.is_excluded(&label.task) {
            report.rows_dropped_excluded += 1;
            *report.excluded_tasks.entry(label.task.clone()).or_default() += 1;
            dropped_trials.insert(label);
            continue;
        }
        let idx: usize = record[3].parse().map_err(|_| row.malformed(format!(
            "sample_index `{}` is not a non-negative integer",
            &record[3]
        )))?;
        let moment = row.number(4, PROFILES_HEADER[4])?;
        let angle = row.number(5, PROFILES_HEADER[5])?;
        let velocity = row.number(6, PROFILES_HEADER[6])?;
        trials.entry(label).or_default().push((idx, moment, angle, velocity));
    }
    report.trials_dropped_excluded = dropped_trials.len();

    let mut profiles = Vec::with_capacity(trials.len());
    for (label, mut samples) in trials {
        samples.sort_by_key(|s| s.0);
        let key = label.to_string();
        for (expected, s) in samples.iter().enumerate() {
            if s.0 != expected {
                let detail = if s.0 < expected {
                    format!("index {} repeated", s.0)
                } else {
                    format!("index {expected} missing")
                };
                return Err(DatasetError::BadSampleIndex { key, detail });
            }
        }
        if samples.len() < 2 {
            return Err(DatasetError::TooShort {
                key,
                len: samples.len(),
            });
        }
        let raw = CycleProfile {
            subject: label.subject,
            task: label.task,
            trial: label.trial,
            moment: samples.iter().map(|s| s.1).collect(),
            angle: samples.iter().map(|s| s.2).collect(),
            velocity: samples.iter().map(|s| s.3).collect(),
        };
        profiles.push(raw.resampled(target_length)?);
    }
    report.trials_loaded = profiles.len();
    Ok(LoadedProfiles { profiles, report })
}

/// Writes profiles in the long `profiles.csv` layout. Signals may have any
/// length; each trial's samples are numbered from 0.
pub fn write_profiles_csv(path: &Path, profiles: &[CycleProfile]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&PROFILES_HEADER.join(","));
    out.push('\n');
    for p in profiles {
        for i in 0..p.len() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                p.subject, p.task, p.trial, i, p.moment[i], p.angle[i], p.velocity[i]
            ));
        }
    }
    write_file(path, out.as_bytes())
}

// ---------------------------------------------------------------------------
// Feature matrix
// ---------------------------------------------------------------------------

/// Rows of concatenated `moment ‖ angle ‖ velocity` profiles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    pub profile_length: usize,
    pub rows: Matrix,
    pub labels: Vec<RowLabel>,
}

impl FeatureMatrix {
    pub fn n_rows(&self) -> usize {
        self.rows.rows()
    }

    pub fn n_cols(&self) -> usize {
        self.rows.cols()
    }

    /// Splits row `i` back into its profile.
    pub fn unpack_row(&self, i: usize) -> CycleProfile {
        let l = self.profile_length;
        let row = self.rows.row(i);
        let label = &self.labels[i];
        CycleProfile {
            subject: label.subject.clone(),
            task: label.task.clone(),
            trial: label.trial.clone(),
            moment: row[..l].to_vec(),
            angle: row[l..2 * l].to_vec(),
            velocity: row[2 * l..].to_vec(),
        }
    }

    pub fn subjects(&self) -> BTreeSet<SubjectId> {
        self.labels.iter().map(|l| l.subject.clone()).collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = read_to_string(path)?;
        serde_json::from_str(&text).map_err(|source| DatasetError::Json {
            path: path.to_owned(),
            source,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("feature matrix serializes");
        write_file(path, text.as_bytes())
    }
}

/// Assembles the feature matrix with rows sorted by `(subject, task, trial)`.
pub fn build_feature_matrix(profiles: &[CycleProfile]) -> Result<FeatureMatrix> {
    let first = profiles.first().ok_or(DatasetError::Empty)?;
    let l = first.len();
    let mut order: Vec<&CycleProfile> = profiles.iter().collect();
    order.sort_by(|a, b| {
        (&a.subject, &a.task, &a.trial).cmp(&(&b.subject, &b.task, &b.trial))
    });

    let mut data = Vec::with_capacity(profiles.len() * 3 * l);
    let mut labels = Vec::with_capacity(profiles.len());
    for p in order {
        let key = p.label();
        for signal in [&p.moment, &p.angle, &p.velocity] {
            if signal.len() != l {
                return Err(DatasetError::LengthMismatch {
                    expected: l,
                    found: signal.len(),
                    key: key.to_string(),
                });
            }
        }
        if signal_has_non_finite(p) {
            return Err(DatasetError::NonFiniteProfile(key.to_string()));
        }
        if labels.last() == Some(&key) {
            return Err(DatasetError::Duplicate(key.to_string()));
        }
        data.extend_from_slice(&p.moment);
        data.extend_from_slice(&p.angle);
        data.extend_from_slice(&p.velocity);
        labels.push(key);
    }
    Ok(FeatureMatrix {
        profile_length: l,
        rows: Matrix::from_vec(labels.len(), 3 * l, data),
        labels,
    })
}

fn signal_has_non_finite(p: &CycleProfile) -> bool {
    [&p.moment, &p.angle, &p.velocity]
        .iter()
        .any(|s| s.iter().any(|v| !v.is_finite()))
}

// ---------------------------------------------------------------------------
// Subject exclusion
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroppedSubject {
    pub subject: SubjectId,
    pub cyclic_trials: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExclusionReport {
    pub min_cyclic_trials: usize,
    pub dropped: Vec<DroppedSubject>,
    pub kept_subjects: usize,
    /// Set when every subject was dropped.
    pub empty: bool,
}

impl ExclusionReport {
    pub fn dropped_subjects(&self) -> BTreeSet<SubjectId> {
        self.dropped.iter().map(|d| d.subject.clone()).collect()
    }
}

/// Drops subjects with fewer than `min_cyclic_trials` cyclic-task trials.
pub fn exclude_subjects(
    profiles: Vec<CycleProfile>,
    manifest: &TaskManifest,
    min_cyclic_trials: usize,
) -> (Vec<CycleProfile>, ExclusionReport) {
    let mut cyclic_counts: BTreeMap<SubjectId, usize> = BTreeMap::new();
    for p in &profiles {
        let c = cyclic_counts.entry(p.subject.clone()).or_default();
        if manifest.is_cyclic(&p.task) {
            *c += 1;
        }
    }
    let dropped: Vec<DroppedSubject> = cyclic_counts
        .iter()
        .filter(|(_, &n)| n < min_cyclic_trials)
        .map(|(s, &n)| DroppedSubject {
            subject: s.clone(),
            cyclic_trials: n,
            reason: format!("{n} cyclic-task trials, fewer than the required {min_cyclic_trials}"),
        })
        .collect();
    let drop_set: BTreeSet<&SubjectId> = dropped.iter().map(|d| &d.subject).collect();
    let kept: Vec<CycleProfile> = profiles
        .into_iter()
        .filter(|p| !drop_set.contains(&p.subject))
        .collect();
    let kept_subjects = cyclic_counts.len() - dropped.len();
    let report = ExclusionReport {
        min_cyclic_trials,
        dropped,
        kept_subjects,
        empty: kept.is_empty(),
    };
    (kept, report)
}

// ---------------------------------------------------------------------------
// Sensor streams
// ---------------------------------------------------------------------------

/// One time step of network input and target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSample {
    pub time: f64,
    /// Hip angle, hip velocity, pelvis accel xyz, pelvis gyro xyz, thigh
    /// accel xyz, thigh gyro xyz.
    pub input: [f64; SENSOR_INPUTS],
    /// Hip moment, Nm/kg.
    pub target: f64,
}

/// All samples of one trial, in time order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorTrial {
    pub subject: SubjectId,
    pub task: TaskId,
    pub trial: TrialId,
    pub samples: Vec<SensorSample>,
}

impl SensorTrial {
    pub fn label(&self) -> RowLabel {
        RowLabel {
            subject: self.subject.clone(),
            task: self.task.clone(),
            trial: self.trial.clone(),
        }
    }
}

#[derive(Debug)]
pub struct LoadedSensors {
    pub trials: Vec<SensorTrial>,
    pub report: IngestReport,
}

/// Reads `sensors.csv`, dropping excluded tasks. Trials come back sorted by
/// `(subject, task, trial)`; samples keep file order, which must be strictly
/// increasing in time.
pub fn load_sensor_samples(path: &Path, manifest: &TaskManifest) -> Result<LoadedSensors> {
    let mut reader = open_csv(path, &SENSORS_HEADER)?;
    let mut report = IngestReport {
        file: path.display().to_string(),
        ..Default::default()
    };
    let mut trials: BTreeMap<RowLabel, Vec<SensorSample>> = BTreeMap::new();
    let mut dropped_trials: BTreeSet<RowLabel> = BTreeSet::new();

    let mut record = csv::StringRecord::new();
    loop {
        let has = reader.read_record(&mut record).map_err(|source| DatasetError::Csv {
            path: path.to_owned(),
            source,
        })?;
        if !has {
            break;
        }
        let line = record.position().map_or(0, |p| p.line());
        report.rows_read += 1;
        let row = RowCtx { path, line, record: &record };
        row.expect_arity(SENSORS_HEADER.len())?;
        let label = row.label(manifest)?;
        if manifest.is_excluded(&label.task) {
            report.rows_dropped_excluded += 1;
            *report.excluded_tasks.entry(label.task.clone()).or_default() += 1;
            dropped_trials.insert(label);
            continue;
        }
        let time = row.number(3, SENSORS_HEADER[3])?;
        let mut input = [0.0; SENSOR_INPUTS];
        for (k, v) in input.iter_mut().enumerate() {
            *v = row.number(4 + k, SENSORS_HEADER[4 + k])?;
        }
        let target = row.number(18, SENSORS_HEADER[18])?;

        let samples = trials.entry(label).or_default();
        if let Some(prev) = samples.last() {
            if time <= prev.time {
                return Err(DatasetError::NonMonotonicTime {
                    path: path.to_owned(),
                    line,
                    key: format!("({}, {}, {})", &record[0], &record[1], &record[2]),
                });
            }
        }
        samples.push(SensorSample { time, input, target });
    }
    report.trials_dropped_excluded = dropped_trials.len();
    let trials: Vec<SensorTrial> = trials
        .into_iter()
        .map(|(label, samples)| SensorTrial {
            subject: label.subject,
            task: label.task,
            trial: label.trial,
            samples,
        })
        .collect();
    report.trials_loaded = trials.len();
    Ok(LoadedSensors { trials, report })
}

pub fn write_sensors_csv(path: &Path, trials: &[SensorTrial]) -> Result<()> {
    let mut out = String::new();
    out.push_str(&SENSORS_HEADER.join(","));
    out.push('\n');
    for t in trials {
        for s in &t.samples {
            out.push_str(&format!("{},{},{},{}", t.subject, t.task, t.trial, s.time));
            for v in &s.input {
                out.push_str(&format!(",{v}"));
            }
            out.push_str(&format!(",{}\n", s.target));
        }
    }
    write_file(path, out.as_bytes())
}

// ---------------------------------------------------------------------------
// helpers
// ---------------------------------------------------------------------------

struct RowCtx<'a> {
    path: &'a Path,
    line: u64,
    record: &'a csv::StringRecord,
}

impl RowCtx<'_> {
    fn malformed(&self, reason: String) -> DatasetError {
        DatasetError::Malformed {
            path: self.path.to_owned(),
            line: self.line,
            reason,
        }
    }

    fn expect_arity(&self, n: usize) -> Result<()> {
        if self.record.len() != n {
            return Err(self.malformed(format!(
                "expected {n} fields, found {}",
                self.record.len()
            )));
        }
        Ok(())
    }

    fn label(&self, manifest: &TaskManifest) -> Result<RowLabel> {
        for (k, name) in ["subject", "task", "trial"].iter().enumerate() {
            if self.record[k].is_empty() {
                return Err(self.malformed(format!("empty {name} id")));
            }
        }
        let task = TaskId::new(&self.record[1]);
        if manifest.get(&task).is_none() {
            return Err(DatasetError::UnknownTask {
                path: self.path.to_owned(),
                line: self.line,
                task: task.0,
            });
        }
        Ok(RowLabel {
            subject: SubjectId::new(&self.record[0]),
            task,
            trial: TrialId::new(&self.record[2]),
        })
    }

    fn number(&self, k: usize, column: &str) -> Result<f64> {
        let raw = &self.record[k];
        let v: f64 = raw
            .parse()
            .map_err(|_| self.malformed(format!("`{raw}` in column `{column}` is not a number")))?;
        if !v.is_finite() {
            return Err(DatasetError::NonFinite {
                path: self.path.to_owned(),
                line: self.line,
                column: column.to_owned(),
            });
        }
        Ok(v)
    }
}

fn open_csv(path: &Path, header: &[&str]) -> Result<csv::Reader<fs::File>> {
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.to_owned()));
    }
    let file = fs::File::open(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let found = reader
        .headers()
        .map_err(|source| DatasetError::Csv {
            path: path.to_owned(),
            source,
        })?
        .clone();
    if found.iter().ne(header.iter().copied()) {
        return Err(DatasetError::Malformed {
            path: path.to_owned(),
            line: 1,
            reason: format!("header must be `{}`", header.join(",")),
        });
    }
    Ok(reader)
}

fn read_to_string(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(DatasetError::MissingFile(path.to_owned()));
    }
    fs::read_to_string(path).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir).map_err(|source| DatasetError::Io {
                path: dir.to_owned(),
                source,
            })?;
        }
    }
    fs::write(path, bytes).map_err(|source| DatasetError::Io {
        path: path.to_owned(),
        source,
    })
}

/// Groups sensor trials by subject.
pub fn trials_by_subject(trials: &[SensorTrial]) -> HashMap<&SubjectId, Vec<&SensorTrial>> {
    let mut out: HashMap<&SubjectId, Vec<&SensorTrial>> = HashMap::new();
    for t in trials {
        out.entry(&t.subject).or_default().push(t);
    }
    out
}
