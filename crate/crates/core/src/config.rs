//! TOML experiment configuration.
//!
//! ```toml
//! [stream]
//! layout = "adversarial"   # or `path = "stream.jsonl"`
//! tasks = 10
//!
//! [buffer]
//! capacity = 20
//!
//! [experiment]
//! k_values = [1, 5, 8, 10]
//! strategies = ["seq-finetune", "gauss-tin", "joint"]
//! repetitions = 5
//! ```
//!
//! Every section and key is optional; unknown keys are rejected.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::conditioning::DEFAULT_P_DIM;
use crate::data::{load_stream, synth_stream, Layout, SynthSpec, TaskStream};
use crate::error::{Error, Result};
use crate::gmm::{FitConfig, InitMethod};
use crate::learner::TrainConfig;
use crate::trainer::{ExperimentConfig, LabelMode, Strategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StreamSection {
    /// JSONL stream file, resolved against the config file's directory.
    /// When absent, a synthetic stream is generated from the keys below.
    pub path: Option<PathBuf>,
    pub tasks: usize,
    pub classes_per_task: usize,
    pub dim: usize,
    pub train_per_class: usize,
    pub eval_per_class: usize,
    pub separation: f64,
    pub noise: f64,
    pub shift: f64,
    pub layout: Layout,
    pub seed: u64,
    /// Draw a fresh synthetic stream for every repetition seed.
    pub per_seed: bool,
}

impl Default for StreamSection {
    fn default() -> Self {
        let s = SynthSpec::default();
        Self {
            path: None,
            tasks: s.tasks,
            classes_per_task: s.classes_per_task,
            dim: s.dim,
            train_per_class: s.train_per_class,
            eval_per_class: s.eval_per_class,
            separation: s.separation,
            noise: s.noise,
            shift: s.shift,
            layout: s.layout,
            seed: s.seed,
            per_seed: false,
        }
    }
}

impl StreamSection {
    pub fn synth_spec(&self) -> SynthSpec {
        SynthSpec {
            tasks: self.tasks,
            classes_per_task: self.classes_per_task,
            dim: self.dim,
            train_per_class: self.train_per_class,
            eval_per_class: self.eval_per_class,
            separation: self.separation,
            noise: self.noise,
            seed: self.seed,
            layout: self.layout,
            shift: self.shift,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GmmSection {
    pub n_components: usize,
    pub max_iterations: usize,
    pub rel_tolerance: f64,
    pub cov_floor: f64,
    pub init: InitMethod,
}

impl Default for GmmSection {
    fn default() -> Self {
        let f = FitConfig::default();
        Self {
            n_components: f.n_components,
            max_iterations: f.max_iterations,
            rel_tolerance: f.rel_tolerance,
            cov_floor: f.cov_floor,
            init: f.init,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BufferSection {
    pub capacity: usize,
    pub alpha: f64,
    pub oversample: usize,
    pub m_per_class: Option<usize>,
}

impl Default for BufferSection {
    fn default() -> Self {
        let e = ExperimentConfig::default();
        Self {
            capacity: e.capacity,
            alpha: e.alpha,
            oversample: e.oversample,
            m_per_class: e.m_per_class,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentSection {
    pub k_values: Vec<usize>,
    pub strategies: Vec<Strategy>,
    pub seed: u64,
    pub repetitions: usize,
    pub p_dim: usize,
    pub descriptor_seed: u64,
    pub label_mode: LabelMode,
    pub held_out_tasks: usize,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            k_values: vec![1, 5, 8, 10],
            strategies: Strategy::ALL.to_vec(),
            seed: 0,
            repetitions: 5,
            p_dim: DEFAULT_P_DIM,
            descriptor_seed: 42,
            label_mode: LabelMode::True,
            held_out_tasks: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Config {
    pub stream: StreamSection,
    pub gmm: GmmSection,
    pub buffer: BufferSection,
    pub train: TrainSection,
    pub experiment: ExperimentSection,
    /// Directory that relative paths resolve against; not part of the file.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl Config {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Config = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let x = &self.experiment;
        if x.k_values.is_empty() || x.strategies.is_empty() {
            return Err(Error::InvalidConfig("k_values and strategies must be non-empty".into()));
        }
        if x.k_values.iter().any(|&k| k == 0 || k > self.stream.tasks && self.stream.path.is_none()) {
            return Err(Error::InvalidConfig(format!("k_values {:?} outside [1, tasks]", x.k_values)));
        }
        if self.stream.path.is_none() {
            self.stream.synth_spec().validate()?;
        }
        for &k in &x.k_values {
            self.experiment_config(k, x.strategies[0], x.seed).validate()?;
        }
        Ok(())
    }

    /// Settings of a single run.
    pub fn experiment_config(&self, k: usize, strategy: Strategy, seed: u64) -> ExperimentConfig {
        ExperimentConfig {
            k,
            gmm: FitConfig {
                n_components: self.gmm.n_components,
                max_iterations: self.gmm.max_iterations,
                rel_tolerance: self.gmm.rel_tolerance,
                cov_floor: self.gmm.cov_floor,
                init: self.gmm.init,
                seed: 0,
            },
            capacity: self.buffer.capacity,
            m_per_class: self.buffer.m_per_class,
            alpha: self.buffer.alpha,
            oversample: self.buffer.oversample,
            train: TrainConfig {
                learning_rate: self.train.learning_rate,
                epochs: self.train.epochs,
                batch_size: self.train.batch_size,
                seed: 0,
            },
            strategy,
            seed,
            repetitions: self.experiment.repetitions,
            p_dim: self.experiment.p_dim,
            descriptor_seed: self.experiment.descriptor_seed,
            label_mode: self.experiment.label_mode,
            held_out_tasks: self.experiment.held_out_tasks,
        }
    }

    /// Repetition seeds.
    pub fn seeds(&self) -> Vec<u64> {
        (0..self.experiment.repetitions as u64)
            .map(|r| self.experiment.seed.wrapping_add(r))
            .collect()
    }

    /// The task stream used by the run with repetition seed `seed`.
    pub fn stream(&self, seed: u64) -> Result<TaskStream<f64>> {
        match &self.stream.path {
            Some(p) => load_stream(self.base_dir.join(p), 1),
            None => {
                let mut spec = self.stream.synth_spec();
                if self.stream.per_seed {
                    spec.seed = spec.seed.wrapping_add(seed);
                }
                synth_stream(&spec, 1)
            }
        }
    }

    /// Hex SHA-256 of the canonical JSON form of the configuration.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&canonical).iter().map(|b| format!("{b:02x}")).collect()
    }
}
