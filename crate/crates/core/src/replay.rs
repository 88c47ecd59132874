//! Exemplar replay: class-conditional mixture generators, relevance and
//! diversity driven selection, and the bounded per-task buffer.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::conditioning::{maybe_condition, TaskDescriptor};
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::gmm::{fit_em, FitConfig, GaussianComponent, GaussianMixture};
use crate::learner::LabeledRow;
use crate::scalar::{sq_dist, Real};
use crate::seed;

pub const MIN_CAPACITY: usize = 10;
pub const MAX_CAPACITY: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExemplarSource {
    #[serde(rename = "gmm-sampled")]
    GmmSampled,
    #[serde(rename = "reservoir-real")]
    ReservoirReal,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Exemplar<T> {
    pub features: Vec<T>,
    pub label: usize,
    pub source_task: String,
    pub method: ExemplarSource,
    pub score: f64,
}

impl<T: Real> Exemplar<T> {
    pub fn to_row(&self) -> LabeledRow<T> {
        LabeledRow {
            features: self.features.clone(),
            label: self.label,
            source_task: self.source_task.clone(),
        }
    }
}

/// Scores how representative a candidate is of its class.
pub trait RelevanceScorer<T> {
    fn relevance(&self, candidate: &Exemplar<T>) -> Result<f64>;
}

/// Per-class mixtures fitted on one task's train split.
#[derive(Debug, Clone)]
pub struct TaskGenerator<T> {
    pub task_id: String,
    /// `(label, mixture)` pairs in ascending label order.
    pub classes: Vec<(usize, GaussianMixture<T>)>,
    pub descriptor: Option<TaskDescriptor<T>>,
}

impl<T: Real> TaskGenerator<T> {
    pub fn conditioned(&self) -> bool {
        self.descriptor.is_some()
    }

    pub fn mixture(&self, label: usize) -> Option<&GaussianMixture<T>> {
        self.classes.iter().find(|(l, _)| *l == label).map(|(_, g)| g)
    }

    pub fn dim(&self) -> usize {
        self.classes.first().map_or(0, |(_, g)| g.dim())
    }
}

impl<T: Real> RelevanceScorer<T> for TaskGenerator<T> {
    /// Log-density under the candidate's own class mixture.
    fn relevance(&self, candidate: &Exemplar<T>) -> Result<f64> {
        let g = self
            .mixture(candidate.label)
            .ok_or(Error::LabelOutOfRange { label: candidate.label, classes: self.classes.len() })?;
        Ok(g.log_density(&candidate.features)?.as_f64())
    }
}

/// Relevance without a mixture: a unit isotropic Gaussian around each
/// class centroid of the candidate pool.
#[derive(Debug, Clone)]
pub struct CentroidScorer<T> {
    centroids: BTreeMap<usize, Vec<T>>,
}

impl<T: Real> CentroidScorer<T> {
    pub fn from_candidates(candidates: &[Exemplar<T>]) -> Self {
        let mut sums: BTreeMap<usize, (Vec<T>, usize)> = BTreeMap::new();
        for c in candidates {
            let entry = sums
                .entry(c.label)
                .or_insert_with(|| (vec![T::zero(); c.features.len()], 0));
            for (s, &x) in entry.0.iter_mut().zip(&c.features) {
                *s = *s + x;
            }
            entry.1 += 1;
        }
        let centroids = sums
            .into_iter()
            .map(|(l, (s, n))| {
                let nf = T::from_usize(n).expect("count fits in T");
                (l, s.into_iter().map(|v| v / nf).collect())
            })
            .collect();
        Self { centroids }
    }
}

impl<T: Real> RelevanceScorer<T> for CentroidScorer<T> {
    fn relevance(&self, candidate: &Exemplar<T>) -> Result<f64> {
        let c = self
            .centroids
            .get(&candidate.label)
            .ok_or(Error::LabelOutOfRange { label: candidate.label, classes: self.centroids.len() })?;
        Ok(-0.5 * sq_dist(&candidate.features, c).as_f64())
    }
}

/// Fits one mixture per class on the (optionally conditioned) train
/// features. A class with `n` samples gets `min(cfg.n_components, n)`
/// components.
pub fn fit_task_generator<T: Real>(
    task: &TaskDataset<T>,
    desc: Option<&TaskDescriptor<T>>,
    cfg: &FitConfig,
) -> Result<TaskGenerator<T>> {
    let mut by_class: BTreeMap<usize, Vec<Vec<T>>> = BTreeMap::new();
    for s in &task.train {
        by_class.entry(s.label).or_default().push(maybe_condition(&s.features, desc));
    }
    if by_class.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let mut classes = Vec::with_capacity(by_class.len());
    for (label, rows) in by_class {
        let g = if rows.len() == 1 {
            let floor = T::lit(cfg.cov_floor);
            let dim = rows[0].len();
            GaussianMixture::new(vec![GaussianComponent::new(
                T::one(),
                rows[0].clone(),
                vec![floor; dim],
                floor,
            )?])?
        } else {
            let class_cfg = FitConfig {
                n_components: cfg.n_components.min(rows.len()),
                seed: seed::derive(cfg.seed, &task.task_id, label as u64),
                ..cfg.clone()
            };
            fit_em(&rows, &class_cfg)?
        };
        classes.push((label, g));
    }
    Ok(TaskGenerator {
        task_id: task.task_id.clone(),
        classes,
        descriptor: desc.cloned(),
    })
}

/// Draws `m_per_class` exemplars from every class mixture. Each exemplar's
/// initial score is its log-density under its class mixture.
pub fn generate_exemplars<T: Real>(gen: &TaskGenerator<T>, m_per_class: usize, seed: u64) -> Vec<Exemplar<T>> {
    generate_per_class(gen, &vec![m_per_class; gen.classes.len()], seed)
}

fn generate_per_class<T: Real>(gen: &TaskGenerator<T>, counts: &[usize], seed: u64) -> Vec<Exemplar<T>> {
    let mut out = Vec::with_capacity(counts.iter().sum());
    for ((label, g), &m) in gen.classes.iter().zip(counts) {
        if m == 0 {
            continue;
        }
        let (points, _) = g.sample(m, seed::derive(seed, "generate", *label as u64));
        for x in points {
            let score = g.log_density(&x).map(|v| v.as_f64()).unwrap_or(f64::NEG_INFINITY);
            out.push(Exemplar {
                features: x,
                label: *label,
                source_task: gen.task_id.clone(),
                method: ExemplarSource::GmmSampled,
                score,
            });
        }
    }
    out
}

/// Greedy selection trading off relevance against diversity.
///
/// Each step picks the candidate maximizing
/// `alpha * relevance + (1 - alpha) * diversity`, where relevance is the
/// scorer's value min-max normalized over the pool and diversity is the
/// distance to the nearest already-selected candidate divided by the pool
/// diameter. Before anything is selected, diversity is a candidate's
/// distance to its farthest neighbour. Ties go to the lower index. The
/// returned exemplars carry their selection score, in pick order.
pub fn select_exemplars<T: Real, S: RelevanceScorer<T> + ?Sized>(
    candidates: &[Exemplar<T>],
    scorer: &S,
    budget: usize,
    alpha: f64,
) -> Result<Vec<Exemplar<T>>> {
    if candidates.is_empty() {
        return Err(Error::EmptyCandidates);
    }
    if budget == 0 {
        return Err(Error::InvalidConfig("selection budget must be >= 1".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha {alpha} outside [0, 1]")));
    }
    if budget >= candidates.len() {
        return Ok(candidates.to_vec());
    }
    let n = candidates.len();
    let raw: Vec<f64> = candidates.iter().map(|c| scorer.relevance(c)).collect::<Result<_>>()?;
    let lo = raw.iter().copied().filter(|v| v.is_finite()).fold(f64::INFINITY, f64::min);
    let hi = raw.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let relevance: Vec<f64> = raw
        .iter()
        .map(|&v| {
            if !v.is_finite() || hi <= lo {
                if v == f64::INFINITY { 1.0 } else { 0.0 }
            } else {
                (v - lo) / (hi - lo)
            }
        })
        .collect();

    let mut dist = vec![0.0; n * n];
    let mut diameter: f64 = 0.0;
    for i in 0..n {
        for j in (i + 1)..n {
            let d = sq_dist(&candidates[i].features, &candidates[j].features).as_f64().sqrt();
            dist[i * n + j] = d;
            dist[j * n + i] = d;
            diameter = diameter.max(d);
        }
    }
    let scale = if diameter > 0.0 { 1.0 / diameter } else { 0.0 };
    // Before the first pick: eccentricity; afterwards: distance to the
    // nearest selected candidate.
    let mut spread: Vec<f64> = (0..n)
        .map(|i| dist[i * n..(i + 1) * n].iter().copied().fold(0.0, f64::max))
        .collect();

    let mut taken = vec![false; n];
    let mut out = Vec::with_capacity(budget);
    for _ in 0..budget {
        let mut best: Option<(usize, f64)> = None;
        for i in 0..n {
            if taken[i] {
                continue;
            }
            let s = alpha * relevance[i] + (1.0 - alpha) * spread[i] * scale;
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((i, s));
            }
        }
        let (pick, score) = best.expect("budget < candidate count");
        taken[pick] = true;
        let mut ex = candidates[pick].clone();
        ex.score = score;
        out.push(ex);
        let first = out.len() == 1;
        for i in 0..n {
            let d = dist[pick * n + i];
            spread[i] = if first { d } else { spread[i].min(d) };
        }
    }
    Ok(out)
}

/// Algorithm R: a uniform sample of `size` indices from a stream of `len`
/// items, in stream order of the surviving items' slots.
pub fn reservoir_indices(len: usize, size: usize, seed: u64) -> Vec<usize> {
    let mut rng = seed::rng(seed);
    let mut reservoir: Vec<usize> = (0..len.min(size)).collect();
    for i in size..len {
        let j = rng.random_range(0..=i);
        if j < size {
            reservoir[j] = i;
        }
    }
    reservoir
}

/// Real train samples drawn by reservoir sampling, as replay candidates.
pub fn reservoir_candidates<T: Real>(
    task: &TaskDataset<T>,
    desc: Option<&TaskDescriptor<T>>,
    pool: usize,
    seed: u64,
) -> Vec<Exemplar<T>> {
    reservoir_indices(task.train.len(), pool, seed)
        .into_iter()
        .map(|i| {
            let s = &task.train[i];
            Exemplar {
                features: maybe_condition(&s.features, desc),
                label: s.label,
                source_task: task.task_id.clone(),
                method: ExemplarSource::ReservoirReal,
                score: 0.0,
            }
        })
        .collect()
}

/// Splits `budget` over `classes` slots as evenly as possible; earlier slots
/// receive the remainder.
pub fn split_budget(budget: usize, classes: usize) -> Vec<usize> {
    if classes == 0 {
        return Vec::new();
    }
    let base = budget / classes;
    let extra = budget % classes;
    (0..classes).map(|c| base + usize::from(c < extra)).collect()
}

/// Where replay candidates come from.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CandidateSource {
    /// Samples from per-class mixtures.
    Mixture,
    /// Reservoir sample of the task's real train samples.
    Reservoir,
}

/// Everything needed to turn one finished task into buffer entries.
#[derive(Debug, Clone)]
pub struct ExemplarPolicy {
    pub source: CandidateSource,
    pub capacity: usize,
    pub alpha: f64,
    /// Candidates drawn per selected exemplar.
    pub oversample: usize,
    /// Overrides the per-class candidate count for mixture sampling.
    pub m_per_class: Option<usize>,
    pub fit: FitConfig,
}

impl ExemplarPolicy {
    /// Produces at most `capacity` exemplars for `task`, balanced across its
    /// classes.
    pub fn exemplars_for<T: Real>(
        &self,
        task: &TaskDataset<T>,
        desc: Option<&TaskDescriptor<T>>,
        seed: u64,
    ) -> Result<Vec<Exemplar<T>>> {
        let labels = task.train_labels();
        let budgets = split_budget(self.capacity, labels.len());
        let oversample = self.oversample.max(1);
        let mut selected = Vec::with_capacity(self.capacity);
        match self.source {
            CandidateSource::Mixture => {
                let gen = fit_task_generator(task, desc, &self.fit)?;
                let counts: Vec<usize> = budgets
                    .iter()
                    .map(|&b| if b == 0 { 0 } else { self.m_per_class.unwrap_or(b * oversample) })
                    .collect();
                let pool = generate_per_class(&gen, &counts, seed);
                for (label, &b) in labels.iter().zip(&budgets) {
                    let class_pool: Vec<_> = pool.iter().filter(|e| e.label == *label).cloned().collect();
                    if b == 0 || class_pool.is_empty() {
                        continue;
                    }
                    selected.extend(select_exemplars(&class_pool, &gen, b, self.alpha)?);
                }
            }
            CandidateSource::Reservoir => {
                let pool = reservoir_candidates(task, desc, self.capacity * oversample, seed);
                let scorer = CentroidScorer::from_candidates(&pool);
                for (label, &b) in labels.iter().zip(&budgets) {
                    let class_pool: Vec<_> = pool.iter().filter(|e| e.label == *label).cloned().collect();
                    if b == 0 || class_pool.is_empty() {
                        continue;
                    }
                    selected.extend(select_exemplars(&class_pool, &scorer, b, self.alpha)?);
                }
            }
        }
        Ok(selected)
    }
}

/// Per-task exemplar slots, each holding at most `capacity_per_task` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer<T> {
    capacity_per_task: usize,
    slots: Vec<(String, Vec<Exemplar<T>>)>,
}

impl<T: Real> ReplayBuffer<T> {
    pub fn new(capacity_per_task: usize) -> Result<Self> {
        if !(MIN_CAPACITY..=MAX_CAPACITY).contains(&capacity_per_task) {
            return Err(Error::InvalidConfig(format!(
                "buffer capacity {capacity_per_task} outside [{MIN_CAPACITY}, {MAX_CAPACITY}]"
            )));
        }
        Ok(Self {
            capacity_per_task,
            slots: Vec::new(),
        })
    }

    pub fn capacity_per_task(&self) -> usize {
        self.capacity_per_task
    }

    /// Replaces the entries for `task_id` with `selected`.
    pub fn update(&mut self, task_id: &str, selected: Vec<Exemplar<T>>) -> Result<()> {
        if selected.len() > self.capacity_per_task {
            return Err(Error::CapacityExceeded {
                got: selected.len(),
                capacity: self.capacity_per_task,
            });
        }
        match self.slots.iter_mut().find(|(id, _)| id == task_id) {
            Some((_, entries)) => *entries = selected,
            None => self.slots.push((task_id.to_string(), selected)),
        }
        Ok(())
    }

    pub fn get(&self, task_id: &str) -> Option<&[Exemplar<T>]> {
        self.slots.iter().find(|(id, _)| id == task_id).map(|(_, e)| e.as_slice())
    }

    /// Task ids in insertion order.
    pub fn task_ids(&self) -> impl Iterator<Item = &str> {
        self.slots.iter().map(|(id, _)| id.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Exemplar<T>> {
        self.slots.iter().flat_map(|(_, e)| e.iter())
    }

    pub fn total(&self) -> usize {
        self.slots.iter().map(|(_, e)| e.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.total() == 0
    }

    /// One JSON record per exemplar.
    pub fn write_snapshot<W: Write>(&self, w: &mut W) -> Result<()> {
        for ex in self.iter() {
            let rec = ExemplarRecord {
                task: &ex.source_task,
                label: ex.label,
                method: ex.method,
                score: ex.score,
                x: ex.features.iter().map(|v| v.as_f64()).collect(),
            };
            serde_json::to_writer(&mut *w, &rec)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

#[derive(Serialize)]
struct ExemplarRecord<'a> {
    task: &'a str,
    label: usize,
    method: ExemplarSource,
    score: f64,
    x: Vec<f64>,
}

/// Buffered exemplars followed by the stage's (optionally conditioned)
/// train samples, shuffled by `seed`.
pub fn merge_training_set<T: Real>(
    buf: &ReplayBuffer<T>,
    stage: &TaskDataset<T>,
    desc: Option<&TaskDescriptor<T>>,
    seed: u64,
) -> Vec<LabeledRow<T>> {
    let mut rows: Vec<LabeledRow<T>> = buf.iter().map(Exemplar::to_row).collect();
    rows.extend(stage.train.iter().map(|s| LabeledRow {
        features: maybe_condition(&s.features, desc),
        label: s.label,
        source_task: s.task_id.clone(),
    }));
    rows.shuffle(&mut seed::rng(seed));
    rows
}
