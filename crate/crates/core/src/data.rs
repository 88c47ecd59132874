//! Task streams: ordered task datasets split into a labeled prefix of `k`
//! tasks and the sequential remainder, presented one stage at a time.

use std::collections::BTreeSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed;

/// Task categories of the Natural Instructions collection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    QG,
    AG,
    CF,
    IAG,
    MM,
    VF,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::QG,
        Category::AG,
        Category::CF,
        Category::IAG,
        Category::MM,
        Category::VF,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::QG => "QG",
            Category::AG => "AG",
            Category::CF => "CF",
            Category::IAG => "IAG",
            Category::MM => "MM",
            Category::VF => "VF",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ();

    fn from_str(s: &str) -> std::result::Result<Self, ()> {
        Category::ALL.into_iter().find(|c| c.as_str() == s).ok_or(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample<T> {
    pub task_id: String,
    pub sample_id: String,
    pub features: Vec<T>,
    pub label: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDataset<T> {
    pub task_id: String,
    pub category: Category,
    pub train: Vec<Sample<T>>,
    pub eval: Vec<Sample<T>>,
}

impl<T: Real> TaskDataset<T> {
    /// Total sample count over both splits.
    pub fn len(&self) -> usize {
        self.train.len() + self.eval.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Distinct labels present in the train split, ascending.
    pub fn train_labels(&self) -> Vec<usize> {
        self.train.iter().map(|s| s.label).collect::<BTreeSet<_>>().into_iter().collect()
    }
}

/// An ordered sequence of tasks. `tasks[..k]` is the labeled prefix used
/// for initialization; the remaining tasks arrive one per stage.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream<T> {
    tasks: Vec<TaskDataset<T>>,
    k: usize,
    dim: usize,
    classes: usize,
}

impl<T: Real> TaskStream<T> {
    /// Validates and assembles a stream. The global class count is one more
    /// than the largest label seen.
    pub fn new(tasks: Vec<TaskDataset<T>>, k: usize) -> Result<Self> {
        let dim = tasks
            .iter()
            .flat_map(|t| t.train.iter().chain(&t.eval))
            .map(|s| s.features.len())
            .next()
            .ok_or_else(|| Error::InvalidSpec("stream has no samples".into()))?;
        let mut classes = 0;
        for t in &tasks {
            if t.train.is_empty() || t.eval.is_empty() {
                return Err(Error::InvalidSpec(format!(
                    "task `{}` needs at least one train and one eval sample",
                    t.task_id
                )));
            }
            for s in t.train.iter().chain(&t.eval) {
                if s.features.len() != dim {
                    return Err(Error::dim(dim, s.features.len()));
                }
                if s.features.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFiniteInput);
                }
                classes = classes.max(s.label + 1);
            }
        }
        if k == 0 || k > tasks.len() {
            return Err(Error::KOutOfRange { k, tasks: tasks.len() });
        }
        Ok(Self { tasks, k, dim, classes })
    }

    pub fn tasks(&self) -> &[TaskDataset<T>] {
        &self.tasks
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Same tasks with a different prefix size.
    pub fn with_k(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.tasks.len() {
            return Err(Error::KOutOfRange { k, tasks: self.tasks.len() });
        }
        Ok(Self { k, ..self.clone() })
    }

    /// The labeled prefix `D_l`.
    pub fn labeled(&self) -> &[TaskDataset<T>] {
        &self.tasks[..self.k]
    }

    /// The sequential remainder `D_u`.
    pub fn unlabeled(&self) -> &[TaskDataset<T>] {
        &self.tasks[self.k..]
    }

    /// Keeps a `fraction` of tasks per category, chosen at random but evenly
    /// across categories (at least one per category present). Presentation
    /// order is preserved; `k` is clamped to the new length.
    pub fn subsample_tasks(&self, fraction: f64, seed: u64) -> Result<Self> {
        if !(fraction > 0.0 && fraction <= 1.0) {
            return Err(Error::InvalidSpec(format!("fraction {fraction} outside (0, 1]")));
        }
        let mut rng = seed::rng(seed);
        let mut keep = vec![false; self.tasks.len()];
        for cat in Category::ALL {
            let mut idx: Vec<usize> = (0..self.tasks.len()).filter(|&i| self.tasks[i].category == cat).collect();
            if idx.is_empty() {
                continue;
            }
            let n = ((idx.len() as f64 * fraction).ceil() as usize).clamp(1, idx.len());
            idx.shuffle(&mut rng);
            for &i in &idx[..n] {
                keep[i] = true;
            }
        }
        let tasks: Vec<_> = self
            .tasks
            .iter()
            .zip(&keep)
            .filter(|(_, &k)| k)
            .map(|(t, _)| t.clone())
            .collect();
        let k = self.k.min(tasks.len());
        Self::new(tasks, k)
    }
}

/// The per-stage task datasets `D_u^t`, in presentation order.
pub fn stage_subsets<T: Real>(stream: &TaskStream<T>) -> Vec<&TaskDataset<T>> {
    stream.unlabeled().iter().collect()
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    task: String,
    category: String,
    split: Split,
    id: String,
    label: usize,
    x: Vec<f64>,
}

/// Reads a JSONL stream file. Tasks appear in order of first occurrence.
pub fn load_stream<T: Real>(path: impl AsRef<Path>, k: usize) -> Result<TaskStream<T>> {
    let file = File::open(path)?;
    read_stream(BufReader::new(file), k)
}

pub fn read_stream<T: Real, R: BufRead>(reader: R, k: usize) -> Result<TaskStream<T>> {
    let mut tasks: Vec<TaskDataset<T>> = Vec::new();
    let mut dim: Option<usize> = None;
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            msg: e.to_string(),
        })?;
        let category = rec.category.parse::<Category>().map_err(|_| Error::UnknownCategory {
            category: rec.category.clone(),
            line: line_no,
        })?;
        match dim {
            None => dim = Some(rec.x.len()),
            Some(d) if d != rec.x.len() => {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    got: rec.x.len(),
                    line: Some(line_no),
                })
            }
            _ => {}
        }
        let task = match tasks.iter().position(|t| t.task_id == rec.task) {
            Some(p) => &mut tasks[p],
            None => {
                tasks.push(TaskDataset {
                    task_id: rec.task.clone(),
                    category,
                    train: Vec::new(),
                    eval: Vec::new(),
                });
                tasks.last_mut().expect("just pushed")
            }
        };
        if task.category != category {
            return Err(Error::Parse {
                line: line_no,
                msg: format!("task `{}` changes category to {}", rec.task, category),
            });
        }
        let sample = Sample {
            task_id: rec.task,
            sample_id: rec.id,
            features: rec.x.into_iter().map(T::lit).collect(),
            label: rec.label,
            split: rec.split,
        };
        match sample.split {
            Split::Train => task.train.push(sample),
            Split::Eval => task.eval.push(sample),
        }
    }
    TaskStream::new(tasks, k)
}

pub fn write_stream<T: Real>(stream: &TaskStream<T>, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_stream_to(stream, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Writes one JSON record per sample; each task's train samples precede
/// its eval samples.
pub fn write_stream_to<T: Real, W: Write>(stream: &TaskStream<T>, w: &mut W) -> Result<()> {
    for task in stream.tasks() {
        for s in task.train.iter().chain(&task.eval) {
            let rec = Record {
                task: s.task_id.clone(),
                category: task.category.as_str().to_string(),
                split: s.split,
                id: s.sample_id.clone(),
                label: s.label,
                x: s.features.iter().map(|v| v.as_f64()).collect(),
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    Ok(())
}

/// Placement of class blobs across tasks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Every (task, class) pair gets its own blob.
    #[default]
    Blobs,
    /// All tasks share one label set and one class geometry, but each task
    /// translates the whole geometry by its own offset, drawn inside the span
    /// of the class centers. Linear boundaries fitted to one task therefore misplace
    /// the classes of the others unless the model knows which task it sees.
    Adversarial,
}

/// Parameters of a synthetic stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    /// Blob separation in units of `noise`.
    pub separation: f64,
    /// Per-coordinate standard deviation inside a blob.
    pub noise: f64,
    pub seed: u64,
    pub layout: Layout,
    /// Length of each task's offset under [`Layout::Adversarial`], in units
    /// of the blob separation.
    pub shift: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            tasks: 10,
            classes_per_task: 4,
            dim: 16,
            train_per_class: 50,
            eval_per_class: 25,
            separation: 10.0,
            noise: 1.0,
            seed: 0,
            layout: Layout::Blobs,
            shift: 1.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("tasks", self.tasks),
            ("classes_per_task", self.classes_per_task),
            ("dim", self.dim),
            ("train_per_class", self.train_per_class),
            ("eval_per_class", self.eval_per_class),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::InvalidSpec(format!("{name} must be >= 1")));
            }
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) {
            return Err(Error::InvalidSpec("separation must be positive".into()));
        }
        if !(self.noise > 0.0 && self.noise.is_finite()) {
            return Err(Error::InvalidSpec("noise must be positive".into()));
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return Err(Error::InvalidSpec("shift must be non-negative".into()));
        }
        Ok(())
    }
}

/// Draws `count` centers whose pairwise distances are all at least `min_dist`.
fn draw_centers(count: usize, dim: usize, min_dist: f64, rng: &mut impl Rng) -> Vec<Vec<f64>> {
    let mut scale = min_dist / (2.0 * dim as f64).sqrt() * 1.5;
    let mut centers: Vec<Vec<f64>> = Vec::with_capacity(count);
    let mut attempts = 0;
    while centers.len() < count {
        let c: Vec<f64> = (0..dim).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect();
        let ok = centers
            .iter()
            .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt() >= min_dist);
        if ok {
            centers.push(c);
        } else {
            attempts += 1;
            if attempts % 200 == 0 {
                scale *= 1.25;
            }
        }
    }
    centers
}

/// Generates a stream of isotropic Gaussian class blobs; categories cycle
/// through [`Category::ALL`].
///
/// With [`Layout::Blobs`] labels are disjoint across tasks: task `t` owns
/// labels `t*C .. (t+1)*C`. With [`Layout::Adversarial`] every task uses
/// labels `0 .. C`.
pub fn synth_stream<T: Real>(spec: &SynthSpec, k: usize) -> Result<TaskStream<T>> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let c = spec.classes_per_task;
    let min_dist = spec.separation * spec.noise;
    let (centers, label_base): (Vec<Vec<f64>>, Vec<usize>) = match spec.layout {
        Layout::Blobs => (
            draw_centers(spec.tasks * c, spec.dim, min_dist, &mut rng),
            (0..spec.tasks).map(|t| t * c).collect(),
        ),
        Layout::Adversarial => {
            let shared = draw_centers(c, spec.dim, min_dist, &mut rng);
            let mean: Vec<f64> = (0..spec.dim)
                .map(|j| shared.iter().map(|m| m[j]).sum::<f64>() / c as f64)
                .collect();
            let mut centers = Vec::with_capacity(spec.tasks * c);
            for _ in 0..spec.tasks {
                let mut dir = vec![0.0; spec.dim];
                for center in &shared {
                    let g: f64 = rng.sample(StandardNormal);
                    for ((d, m), mu) in dir.iter_mut().zip(center).zip(&mean) {
                        *d += g * (m - mu);
                    }
                }
                let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
                for center in &shared {
                    centers.push(center.iter().zip(&dir).map(|(m, d)| m + spec.shift * min_dist * d / norm).collect());
                }
            }
            (centers, vec![0; spec.tasks])
        }
    };
    let mut tasks = Vec::with_capacity(spec.tasks);
    for t in 0..spec.tasks {
        let task_id = format!("t{}", t + 1);
        let mut ds = TaskDataset {
            task_id: task_id.clone(),
            category: Category::ALL[t % Category::ALL.len()],
            train: Vec::new(),
            eval: Vec::new(),
        };
        let mut serial = 0;
        for (split, per_class) in [(Split::Train, spec.train_per_class), (Split::Eval, spec.eval_per_class)] {
            for _ in 0..per_class {
                for class in 0..c {
                    let center = &centers[t * c + class];
                    let features = center
                        .iter()
                        .map(|&m| T::lit(m + spec.noise * rng.sample::<f64, _>(StandardNormal)))
                        .collect();
                    let sample = Sample {
                        task_id: task_id.clone(),
                        sample_id: format!("{task_id}-{serial:04}"),
                        features,
                        label: label_base[t] + class,
                        split,
                    };
                    serial += 1;
                    match split {
                        Split::Train => ds.train.push(sample),
                        Split::Eval => ds.eval.push(sample),
                    }
                }
            }
        }
        tasks.push(ds);
    }
    TaskStream::new(tasks, k)
}
