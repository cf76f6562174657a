//! Seeded synthetic gait corpus with planted task clusters.
//!
//! Every task belongs to one latent cluster. A cluster fixes the shape of the
//! hip-angle cycle, the cycle duration and the IMU waveforms; tasks, subjects
//! and trials perturb those with small offsets and noise. The hip moment is a
//! fixed smooth function of the 14 sensor inputs plus noise, so a regressor
//! can learn it from the inputs alone.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    self, CycleProfile, DatasetError, SensorSample, SensorTrial, SubjectId, TaskEntry, TaskId,
    TaskManifest, TrialId, SENSOR_INPUTS,
};
use crate::linalg;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid synthetic spec: {0}")]
    InvalidSpec(String),
    #[error("planted clusters overlap: separation ratio {ratio:.2} is below {required}")]
    Overlap { ratio: f64, required: f64 },
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, SynthError>;

/// Minimum ratio of the closest centroid pair to the widest cluster radius.
pub const MIN_SEPARATION: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// rad
    pub angle: f64,
    /// rad/s
    pub velocity: f64,
    /// IMU channel units
    pub imu: f64,
    /// Nm/kg
    pub moment: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            angle: 0.005,
            velocity: 0.03,
            imu: 0.03,
            moment: 0.02,
        }
    }
}

impl NoiseSpec {
    pub fn zero() -> Self {
        Self {
            angle: 0.0,
            velocity: 0.0,
            imu: 0.0,
            moment: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub n_subjects: usize,
    pub n_tasks: usize,
    /// Planted clusters G; task `t` belongs to cluster `t mod G`.
    pub n_clusters: usize,
    pub trials_per_task: usize,
    /// Raw samples per cycle are drawn from this inclusive range.
    pub cycle_samples: (usize, usize),
    /// Profile length used for the separation check.
    pub profile_length: usize,
    /// Tasks in the last this-many clusters are flagged cyclic.
    pub cyclic_clusters: usize,
    pub noise: NoiseSpec,
    /// Std of per-subject additive offsets.
    pub subject_effect: f64,
    /// Std of per-task additive offsets.
    pub task_offset: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            n_subjects: 12,
            n_tasks: 20,
            n_clusters: 8,
            trials_per_task: 2,
            cycle_samples: (24, 36),
            profile_length: dataset::DEFAULT_PROFILE_LENGTH,
            cyclic_clusters: 4,
            noise: NoiseSpec::default(),
            subject_effect: 0.03,
            task_offset: 0.015,
            seed: 7,
        }
    }
}

impl SynthSpec {
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        if self.n_subjects < 2 {
            v.push("synth.n_subjects must be at least 2".into());
        }
        if self.n_clusters == 0 {
            v.push("synth.n_clusters must be positive".into());
        }
        if self.n_tasks < self.n_clusters {
            v.push(format!(
                "synth.n_tasks ({}) must be at least n_clusters ({}) so every cluster owns a task",
                self.n_tasks, self.n_clusters
            ));
        }
        if self.trials_per_task == 0 {
            v.push("synth.trials_per_task must be positive".into());
        }
        if self.cycle_samples.0 < 2 || self.cycle_samples.1 < self.cycle_samples.0 {
            v.push("synth.cycle_samples must be an increasing range starting at 2 or more".into());
        }
        if self.profile_length < 2 {
            v.push("synth.profile_length must be at least 2".into());
        }
        let n = &self.noise;
        if [n.angle, n.velocity, n.imu, n.moment, self.subject_effect, self.task_offset]
            .iter()
            .any(|s| !(s.is_finite() && *s >= 0.0))
        {
            v.push("synth noise and effect stds must be finite and non-negative".into());
        }
        v
    }

    pub fn cluster_of(&self, task_index: usize) -> usize {
        task_index % self.n_clusters
    }

    pub fn task_id(task_index: usize) -> TaskId {
        TaskId::from(format!("task_{task_index:02}"))
    }

    pub fn subject_id(subject_index: usize) -> SubjectId {
        SubjectId::from(format!("S{:02}", subject_index + 1))
    }

    pub fn manifest(&self) -> TaskManifest {
        let tasks = (0..self.n_tasks)
            .map(|t| {
                let cyclic = self.cluster_of(t) + self.cyclic_clusters >= self.n_clusters;
                TaskEntry {
                    id: Self::task_id(t),
                    cyclic,
                    w: if cyclic {
                        1.0
                    } else if t % 2 == 0 {
                        0.9
                    } else {
                        0.8
                    },
                    excluded: false,
                }
            })
            .collect();
        TaskManifest { tasks }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub task_cluster: BTreeMap<TaskId, usize>,
    pub n_clusters: usize,
    /// `None` when there is a single cluster.
    pub separation_ratio: Option<f64>,
    pub seed: u64,
}

impl GroundTruth {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

#[derive(Debug, Clone)]
pub struct SynthData {
    /// Raw (not resampled) per-trial cycles.
    pub profiles: Vec<CycleProfile>,
    pub sensors: Vec<SensorTrial>,
    pub manifest: TaskManifest,
    pub ground_truth: GroundTruth,
}

/// Paths written by [`SynthData::write`].
#[derive(Debug, Clone)]
pub struct SynthFiles {
    pub profiles: PathBuf,
    pub sensors: PathBuf,
    pub tasks: PathBuf,
    pub ground_truth: PathBuf,
}

impl SynthData {
    pub fn write(&self, dir: &Path) -> Result<SynthFiles> {
        std::fs::create_dir_all(dir)?;
        let files = SynthFiles {
            profiles: dir.join("profiles.csv"),
            sensors: dir.join("sensors.csv"),
            tasks: dir.join("tasks.json"),
            ground_truth: dir.join("ground_truth.json"),
        };
        dataset::write_profiles_csv(&files.profiles, &self.profiles)?;
        dataset::write_sensors_csv(&files.sensors, &self.sensors)?;
        self.manifest.save(&files.tasks)?;
        std::fs::write(&files.ground_truth, serde_json::to_string_pretty(&self.ground_truth)? + "\n")?;
        Ok(files)
    }
}

const HARMONICS: usize = 3;
const IMU_CHANNELS: usize = SENSOR_INPUTS - 2;
const TEACHER_UNITS: usize = 10;

/// Waveform family: offset plus a few harmonics of the cycle phase.
#[derive(Debug, Clone)]
struct Wave {
    offset: f64,
    amp: [f64; HARMONICS],
    phase: [f64; HARMONICS],
}

impl Wave {
    fn value(&self, phi: f64, scale: f64) -> f64 {
        self.offset
            + scale
                * (0..HARMONICS)
                    .map(|h| self.amp[h] * (TAU * (h + 1) as f64 * phi + self.phase[h]).sin())
                    .sum::<f64>()
    }

    /// d/dφ of [`Wave::value`].
    fn slope(&self, phi: f64, scale: f64) -> f64 {
        scale
            * (0..HARMONICS)
                .map(|h| {
                    let k = TAU * (h + 1) as f64;
                    self.amp[h] * k * (k * phi + self.phase[h]).cos()
                })
                .sum::<f64>()
    }
}

#[derive(Debug, Clone)]
struct ClusterGen {
    angle: Wave,
    imu: Vec<Wave>,
    /// seconds
    duration: f64,
}

impl ClusterGen {
    fn draw(g: usize, n_clusters: usize, rng: &mut ChaCha8Rng) -> Self {
        let base_phase = TAU * g as f64 / n_clusters as f64;
        let angle = Wave {
            offset: rng.random_range(-0.3..0.5),
            amp: [
                rng.random_range(0.3..0.6),
                rng.random_range(0.05..0.2),
                rng.random_range(0.0..0.08),
            ],
            phase: [
                base_phase + rng.random_range(-0.2..0.2),
                rng.random_range(0.0..TAU),
                rng.random_range(0.0..TAU),
            ],
        };
        let imu = (0..IMU_CHANNELS)
            .map(|_| Wave {
                offset: rng.random_range(-1.0..1.0),
                amp: [
                    rng.random_range(0.2..1.0),
                    rng.random_range(0.0..0.4),
                    rng.random_range(0.0..0.2),
                ],
                phase: [
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.0..TAU),
                    rng.random_range(0.0..TAU),
                ],
            })
            .collect();
        Self {
            angle,
            imu,
            duration: rng.random_range(0.9..1.6),
        }
    }
}

/// Additive offsets shared by all trials of a task or of a subject.
#[derive(Debug, Clone)]
struct Offsets {
    angle: f64,
    amp_scale: f64,
    imu: [f64; IMU_CHANNELS],
    duration_scale: f64,
    moment: f64,
}

impl Offsets {
    fn draw(std: f64, rng: &mut ChaCha8Rng) -> Self {
        let n = |rng: &mut ChaCha8Rng, s: f64| gaussian(rng, s);
        Self {
            angle: n(rng, std),
            amp_scale: 1.0 + n(rng, std),
            imu: std::array::from_fn(|_| n(rng, 3.0 * std)),
            duration_scale: 1.0 + n(rng, std),
            moment: n(rng, std),
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, std: f64) -> f64 {
    if std == 0.0 {
        0.0
    } else {
        Normal::new(0.0, std).expect("std is finite and positive").sample(rng)
    }
}

/// The fixed smooth map from the 14 inputs to the hip moment: a small tanh
/// network plus a linear term.
#[derive(Debug, Clone)]
struct Teacher {
    scale: [f64; SENSOR_INPUTS],
    w1: Vec<[f64; SENSOR_INPUTS]>,
    b1: Vec<f64>,
    w2: Vec<f64>,
    linear: [f64; SENSOR_INPUTS],
}

impl Teacher {
    fn draw(rng: &mut ChaCha8Rng) -> Self {
        let mut scale = [1.0; SENSOR_INPUTS];
        scale[0] = 2.0; // angle, rad
        scale[1] = 0.3; // velocity, rad/s
        let fan = 1.0 / (SENSOR_INPUTS as f64).sqrt();
        Self {
            scale,
            w1: (0..TEACHER_UNITS)
                .map(|_| std::array::from_fn(|_| gaussian(rng, 1.5 * fan)))
                .collect(),
            b1: (0..TEACHER_UNITS).map(|_| gaussian(rng, 0.3)).collect(),
            w2: (0..TEACHER_UNITS).map(|_| gaussian(rng, 0.4)).collect(),
            linear: std::array::from_fn(|_| gaussian(rng, 0.05)),
        }
    }

    fn moment(&self, x: &[f64; SENSOR_INPUTS]) -> f64 {
        let xs: [f64; SENSOR_INPUTS] = std::array::from_fn(|j| x[j] * self.scale[j]);
        let hidden: f64 = self
            .w1
            .iter()
            .zip(&self.b1)
            .zip(&self.w2)
            .map(|((w, b), v)| v * (linalg::dot(w, &xs) + b).tanh())
            .sum();
        hidden + linalg::dot(&self.linear, &xs)
    }
}

/// Generates the corpus in memory. Fails if the planted clusters are not
/// separated by at least [`MIN_SEPARATION`].
pub fn generate(spec: &SynthSpec) -> Result<SynthData> {
    let v = spec.violations();
    if !v.is_empty() {
        return Err(SynthError::InvalidSpec(v.join("; ")));
    }
    // independent streams so changing one count does not reshuffle the rest
    let stream = |k: u64| {
        let mut r = ChaCha8Rng::seed_from_u64(spec.seed);
        r.set_stream(k);
        r
    };
    let mut rng_cluster = stream(1);
    let mut rng_task = stream(2);
    let mut rng_subject = stream(3);
    let mut rng_teacher = stream(4);
    let mut rng_trial = stream(5);

    let clusters: Vec<ClusterGen> = (0..spec.n_clusters)
        .map(|g| ClusterGen::draw(g, spec.n_clusters, &mut rng_cluster))
        .collect();
    let tasks: Vec<Offsets> = (0..spec.n_tasks)
        .map(|_| Offsets::draw(spec.task_offset, &mut rng_task))
        .collect();
    let subjects: Vec<Offsets> = (0..spec.n_subjects)
        .map(|_| Offsets::draw(spec.subject_effect, &mut rng_subject))
        .collect();
    let teacher = Teacher::draw(&mut rng_teacher);
    let noise = &spec.noise;

    let mut profiles = Vec::new();
    let mut sensors = Vec::new();
    for (si, subj) in subjects.iter().enumerate() {
        for (ti, task) in tasks.iter().enumerate() {
            let gen = &clusters[spec.cluster_of(ti)];
            for k in 0..spec.trials_per_task {
                let n = rng_trial.random_range(spec.cycle_samples.0..=spec.cycle_samples.1);
                let duration = gen.duration
                    * task.duration_scale
                    * subj.duration_scale
                    * (1.0 + rng_trial.random_range(-0.03..=0.03));
                let amp = task.amp_scale * subj.amp_scale;
                let offset = task.angle + subj.angle;
                let mut samples = Vec::with_capacity(n);
                let mut profile = CycleProfile {
                    subject: SynthSpec::subject_id(si),
                    task: SynthSpec::task_id(ti),
                    trial: TrialId::from(format!("trial_{:02}", k + 1)),
                    moment: Vec::with_capacity(n),
                    angle: Vec::with_capacity(n),
                    velocity: Vec::with_capacity(n),
                };
                for i in 0..n {
                    let phi = i as f64 / (n - 1) as f64;
                    let time = phi * duration;
                    let angle = gen.angle.value(phi, amp) + offset + gaussian(&mut rng_trial, noise.angle);
                    let velocity = gen.angle.slope(phi, amp) / duration + gaussian(&mut rng_trial, noise.velocity);
                    let mut input = [0.0; SENSOR_INPUTS];
                    input[0] = angle;
                    input[1] = velocity;
                    for c in 0..IMU_CHANNELS {
                        input[2 + c] = gen.imu[c].value(phi, amp)
                            + task.imu[c]
                            + subj.imu[c]
                            + gaussian(&mut rng_trial, noise.imu);
                    }
                    let moment =
                        teacher.moment(&input) + subj.moment + gaussian(&mut rng_trial, noise.moment);
                    samples.push(SensorSample {
                        time,
                        input,
                        target: moment,
                    });
                    profile.moment.push(moment);
                    profile.angle.push(angle);
                    profile.velocity.push(velocity);
                }
                profiles.push(profile);
                sensors.push(SensorTrial {
                    subject: SynthSpec::subject_id(si),
                    task: SynthSpec::task_id(ti),
                    trial: TrialId::from(format!("trial_{:02}", k + 1)),
                    samples,
                });
            }
        }
    }

    let task_cluster: BTreeMap<TaskId, usize> = (0..spec.n_tasks)
        .map(|t| (SynthSpec::task_id(t), spec.cluster_of(t)))
        .collect();
    let separation_ratio = if spec.n_clusters >= 2 {
        let ratio = separation_ratio(&profiles, &task_cluster, spec.n_clusters, spec.profile_length)?;
        if ratio < MIN_SEPARATION {
            return Err(SynthError::Overlap {
                ratio,
                required: MIN_SEPARATION,
            });
        }
        Some(ratio)
    } else {
        None
    };

    Ok(SynthData {
        profiles,
        sensors,
        manifest: spec.manifest(),
        ground_truth: GroundTruth {
            task_cluster,
            n_clusters: spec.n_clusters,
            separation_ratio,
            seed: spec.seed,
        },
    })
}

/// Smallest distance between planted-cluster centroids divided by the
/// largest RMS distance of a cluster's rows to its centroid, measured on the
/// resampled feature rows.
pub fn separation_ratio(
    profiles: &[CycleProfile],
    task_cluster: &BTreeMap<TaskId, usize>,
    n_clusters: usize,
    profile_length: usize,
) -> Result<f64> {
    let resampled = profiles
        .iter()
        .map(|p| p.resampled(profile_length))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let m = dataset::build_feature_matrix(&resampled)?;
    let d = m.n_cols();
    let mut sums = vec![vec![0.0; d]; n_clusters];
    let mut counts = vec![0usize; n_clusters];
    let member: Vec<usize> = m.labels.iter().map(|l| task_cluster[&l.task]).collect();
    for (i, &g) in member.iter().enumerate() {
        linalg::axpy(1.0, m.rows.row(i), &mut sums[g]);
        counts[g] += 1;
    }
    let centroids: Vec<Vec<f64>> = sums
        .into_iter()
        .zip(&counts)
        .map(|(s, &c)| s.into_iter().map(|v| v / c.max(1) as f64).collect())
        .collect();
    let mut sq = vec![0.0; n_clusters];
    for (i, &g) in member.iter().enumerate() {
        sq[g] += linalg::squared_distance(m.rows.row(i), &centroids[g]);
    }
    let radius = sq
        .iter()
        .zip(&counts)
        .map(|(s, &c)| (s / c.max(1) as f64).sqrt())
        .fold(0.0_f64, f64::max);
    let mut min_gap = f64::INFINITY;
    for a in 0..n_clusters {
        for b in a + 1..n_clusters {
            min_gap = min_gap.min(linalg::distance(&centroids[a], &centroids[b]));
        }
    }
    Ok(if radius > 0.0 { min_gap / radius } else { f64::INFINITY })
}
