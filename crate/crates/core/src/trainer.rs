//! End-to-end continual-learning runs: initialize on the labeled prefix,
//! then for every later task merge replayed exemplars with the new data,
//! train, evaluate on all tasks and refresh the buffer.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::conditioning::{maybe_condition, DescriptorBank, TaskDescriptor, DEFAULT_P_DIM};
use crate::data::{TaskDataset, TaskStream};
use crate::error::{Error, Result};
use crate::gmm::FitConfig;
use crate::learner::{LabeledRow, SoftmaxModel, TrainConfig};
use crate::metrics::AccuracyMatrix;
use crate::replay::{merge_training_set, CandidateSource, ExemplarPolicy, ReplayBuffer};
use crate::scalar::Real;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Strategy {
    /// Train on each stage alone; no replay.
    #[serde(rename = "seq-finetune")]
    SeqFinetune,
    /// Mixture-generated exemplars on descriptor-conditioned features.
    #[serde(rename = "gauss-tin")]
    GaussTin,
    /// Mixture replay on raw features, relevance-only selection.
    #[serde(rename = "no-prompt")]
    GaussTinNoPrompt,
    /// Reservoir-sampled real exemplars with conditioned features.
    #[serde(rename = "no-gmm")]
    GaussTinNoGmm,
    /// One model trained on every task at once.
    #[serde(rename = "joint")]
    Joint,
}

impl Strategy {
    pub const ALL: [Strategy; 5] = [
        Strategy::SeqFinetune,
        Strategy::GaussTin,
        Strategy::GaussTinNoPrompt,
        Strategy::GaussTinNoGmm,
        Strategy::Joint,
    ];

    /// The full method and its two ablations.
    pub const ABLATION: [Strategy; 3] = [Strategy::GaussTin, Strategy::GaussTinNoPrompt, Strategy::GaussTinNoGmm];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::SeqFinetune => "seq-finetune",
            Strategy::GaussTin => "gauss-tin",
            Strategy::GaussTinNoPrompt => "no-prompt",
            Strategy::GaussTinNoGmm => "no-gmm",
            Strategy::Joint => "joint",
        }
    }

    /// Row label used in rendered tables.
    pub fn display_name(self) -> &'static str {
        match self {
            Strategy::SeqFinetune => "Seq-finetune (Lowerbound)",
            Strategy::GaussTin => "Gauss-Tin (Ours)",
            Strategy::GaussTinNoPrompt => "w/o Prompt",
            Strategy::GaussTinNoGmm => "w/o GMM",
            Strategy::Joint => "Joint Training (Upperbound)",
        }
    }

    pub fn uses_replay(self) -> bool {
        matches!(self, Strategy::GaussTin | Strategy::GaussTinNoPrompt | Strategy::GaussTinNoGmm)
    }

    pub fn conditioned(self) -> bool {
        self != Strategy::GaussTinNoPrompt
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Strategy::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown strategy `{s}`")))
    }
}

/// Targets used for post-prefix stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Ground-truth labels.
    #[default]
    True,
    /// Labels predicted by the model before it trains on the stage.
    Pseudo,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Size of the labeled prefix.
    pub k: usize,
    pub gmm: FitConfig,
    pub capacity: usize,
    /// Candidates sampled per class; defaults to `oversample` times the
    /// class's share of the buffer.
    pub m_per_class: Option<usize>,
    /// Relevance weight in exemplar selection.
    pub alpha: f64,
    pub oversample: usize,
    pub train: TrainConfig,
    pub strategy: Strategy,
    pub seed: u64,
    pub repetitions: usize,
    pub p_dim: usize,
    pub descriptor_seed: u64,
    pub label_mode: LabelMode,
    /// Trailing tasks that are only evaluated, never trained on.
    pub held_out_tasks: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            k: 1,
            gmm: FitConfig::default(),
            capacity: 20,
            m_per_class: None,
            alpha: 0.5,
            oversample: 4,
            train: TrainConfig::default(),
            strategy: Strategy::GaussTin,
            seed: 0,
            repetitions: 1,
            p_dim: DEFAULT_P_DIM,
            descriptor_seed: 42,
            label_mode: LabelMode::True,
            held_out_tasks: 0,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.gmm.validate()?;
        self.train.validate()?;
        ReplayBuffer::<f64>::new(self.capacity)?;
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(Error::InvalidConfig(format!("alpha {} outside [0, 1]", self.alpha)));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be >= 1".into()));
        }
        if self.p_dim == 0 {
            return Err(Error::InvalidConfig("p_dim must be >= 1".into()));
        }
        if self.oversample == 0 || self.m_per_class == Some(0) {
            return Err(Error::InvalidConfig("candidate counts must be >= 1".into()));
        }
        Ok(())
    }

    /// Seeds of the individual repetitions.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.repetitions as u64).map(|r| self.seed.wrapping_add(r)).collect()
    }

    fn policy(&self) -> Option<ExemplarPolicy> {
        let (source, alpha) = match self.strategy {
            Strategy::GaussTin => (CandidateSource::Mixture, self.alpha),
            Strategy::GaussTinNoPrompt => (CandidateSource::Mixture, 1.0),
            Strategy::GaussTinNoGmm => (CandidateSource::Reservoir, self.alpha),
            Strategy::SeqFinetune | Strategy::Joint => return None,
        };
        Some(ExemplarPolicy {
            source,
            capacity: self.capacity,
            alpha,
            oversample: self.oversample,
            m_per_class: self.m_per_class,
            fit: FitConfig {
                seed: seed::derive(self.seed, "gmm", 0),
                ..self.gmm.clone()
            },
        })
    }
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct ExperimentRun<T> {
    pub matrix: AccuracyMatrix,
    pub model: SoftmaxModel<T>,
    /// Buffer contents after initialization and after every stage.
    pub snapshots: Vec<(String, ReplayBuffer<T>)>,
}

/// Shared per-run state.
struct Context<'a, T> {
    stream: &'a TaskStream<T>,
    cfg: &'a ExperimentConfig,
    descriptors: Option<DescriptorBank<T>>,
    policy: Option<ExemplarPolicy>,
    trained: usize,
}

impl<'a, T: Real> Context<'a, T> {
    fn new(stream: &'a TaskStream<T>, cfg: &'a ExperimentConfig) -> Result<Self> {
        cfg.validate()?;
        if cfg.k == 0 || cfg.k > stream.len() {
            return Err(Error::KOutOfRange { k: cfg.k, tasks: stream.len() });
        }
        let trained = stream.len().saturating_sub(cfg.held_out_tasks);
        if cfg.k > trained {
            return Err(Error::InvalidConfig(format!(
                "k = {} exceeds the {trained} trainable tasks left after holding out {}",
                cfg.k, cfg.held_out_tasks
            )));
        }
        let descriptors = if cfg.strategy.conditioned() {
            Some(DescriptorBank::build(
                stream.tasks().iter().map(|t| t.task_id.as_str()),
                cfg.p_dim,
                cfg.descriptor_seed,
            )?)
        } else {
            None
        };
        Ok(Self {
            stream,
            cfg,
            descriptors,
            policy: cfg.policy(),
            trained,
        })
    }

    fn desc(&self, task: &TaskDataset<T>) -> Option<&TaskDescriptor<T>> {
        self.descriptors.as_ref().and_then(|b| b.get(&task.task_id))
    }

    fn feature_dim(&self) -> usize {
        self.stream.dim() + if self.descriptors.is_some() { self.cfg.p_dim } else { 0 }
    }

    fn rows(&self, tasks: &[TaskDataset<T>]) -> Vec<LabeledRow<T>> {
        tasks
            .iter()
            .flat_map(|t| {
                let d = self.desc(t);
                t.train.iter().map(move |s| LabeledRow {
                    features: maybe_condition(&s.features, d),
                    label: s.label,
                    source_task: s.task_id.clone(),
                })
            })
            .collect()
    }

    fn train_cfg(&self, stage: usize) -> TrainConfig {
        TrainConfig {
            seed: seed::derive(self.cfg.seed, "train", stage as u64),
            ..self.cfg.train.clone()
        }
    }

    fn evaluate(&self, model: &SoftmaxModel<T>) -> Result<Vec<f64>> {
        self.stream
            .tasks()
            .iter()
            .map(|t| model.accuracy(t, self.desc(t)))
            .collect()
    }

    fn refresh_buffer(&self, buf: &mut ReplayBuffer<T>, index: usize) -> Result<()> {
        if let Some(policy) = &self.policy {
            let task = &self.stream.tasks()[index];
            let exemplars = policy.exemplars_for(task, self.desc(task), seed::derive(self.cfg.seed, "exemplars", index as u64))?;
            buf.update(&task.task_id, exemplars)?;
        }
        Ok(())
    }
}

/// Trains on the concatenated labeled prefix and, for replay strategies,
/// fills one buffer slot per prefix task.
pub fn run_initialization<T: Real>(
    stream: &TaskStream<T>,
    cfg: &ExperimentConfig,
) -> Result<(SoftmaxModel<T>, ReplayBuffer<T>)> {
    let ctx = Context::new(stream, cfg)?;
    initialize(&ctx)
}

fn initialize<T: Real>(ctx: &Context<'_, T>) -> Result<(SoftmaxModel<T>, ReplayBuffer<T>)> {
    let prefix = &ctx.stream.tasks()[..ctx.cfg.k];
    let mut rows = ctx.rows(prefix);
    rows.shuffle(&mut seed::rng(seed::derive(ctx.cfg.seed, "merge", 0)));
    let model = SoftmaxModel::new(ctx.stream.classes(), ctx.feature_dim()).train(&rows, &ctx.train_cfg(0))?;
    let mut buf = ReplayBuffer::new(ctx.cfg.capacity)?;
    for i in 0..ctx.cfg.k {
        ctx.refresh_buffer(&mut buf, i)?;
    }
    Ok((model, buf))
}

/// Runs one experiment and returns its accuracy matrix.
pub fn run_experiment<T: Real>(stream: &TaskStream<T>, cfg: &ExperimentConfig) -> Result<AccuracyMatrix> {
    run_experiment_detailed(stream, cfg).map(|r| r.matrix)
}

pub fn run_experiment_detailed<T: Real>(stream: &TaskStream<T>, cfg: &ExperimentConfig) -> Result<ExperimentRun<T>> {
    let ctx = Context::new(stream, cfg)?;
    let mut matrix = AccuracyMatrix::new(stream.len());

    if cfg.strategy == Strategy::Joint {
        let mut rows = ctx.rows(&stream.tasks()[..ctx.trained]);
        rows.shuffle(&mut seed::rng(seed::derive(cfg.seed, "merge", 0)));
        let train = TrainConfig {
            epochs: cfg.train.epochs * ctx.trained,
            ..ctx.train_cfg(0)
        };
        let model = SoftmaxModel::new(stream.classes(), ctx.feature_dim()).train(&rows, &train)?;
        matrix.push(ctx.trained, ctx.evaluate(&model)?)?;
        return Ok(ExperimentRun {
            matrix,
            model,
            snapshots: Vec::new(),
        });
    }

    let (mut model, mut buf) = initialize(&ctx)?;
    if !cfg.strategy.conditioned() && model.dim() != stream.dim() {
        return Err(Error::dim(stream.dim(), model.dim()));
    }
    matrix.push(cfg.k, ctx.evaluate(&model)?)?;
    let mut snapshots = vec![("init".to_string(), buf.clone())];

    for index in cfg.k..ctx.trained {
        let task = &stream.tasks()[index];
        let desc = ctx.desc(task);
        check_no_future_replay(&buf, &stream.tasks()[..index])?;

        let merge_seed = seed::derive(cfg.seed, "merge", index as u64);
        let mut rows = if cfg.strategy.uses_replay() {
            merge_training_set(&buf, task, desc, merge_seed)
        } else {
            let mut rows = ctx.rows(std::slice::from_ref(task));
            rows.shuffle(&mut seed::rng(merge_seed));
            rows
        };
        if cfg.label_mode == LabelMode::Pseudo {
            for r in rows.iter_mut().filter(|r| r.source_task == task.task_id) {
                r.label = model.predict(&r.features);
            }
        }
        model = model.train(&rows, &ctx.train_cfg(index))?;
        matrix.push(index + 1, ctx.evaluate(&model)?)?;

        ctx.refresh_buffer(&mut buf, index)?;
        snapshots.push((task.task_id.clone(), buf.clone()));
    }
    Ok(ExperimentRun { matrix, model, snapshots })
}

/// Fails if the buffer holds exemplars of a task outside `seen`.
pub fn check_no_future_replay<T: Real>(buf: &ReplayBuffer<T>, seen: &[TaskDataset<T>]) -> Result<()> {
    for ex in buf.iter() {
        if !seen.iter().any(|t| t.task_id == ex.source_task) {
            return Err(Error::FutureReplay(ex.source_task.clone()));
        }
    }
    Ok(())
}
