//! Multinomial logistic regression trained by minibatch SGD. Stands in
//! for the incremental task solver.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::conditioning::{maybe_condition, TaskDescriptor};
use crate::data::TaskDataset;
use crate::error::{Error, Result};
use crate::exact_json;
use crate::scalar::{log_sum_exp, Real};
use crate::seed;

/// A training row: features, class id and the task it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRow<T> {
    pub features: Vec<T>,
    pub label: usize,
    pub source_task: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 3,
            batch_size: 32,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig("learning_rate must be non-negative".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Gradient of the mean cross-entropy over a batch.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient<T> {
    /// Row-major `classes x dim`.
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxModel<T> {
    classes: usize,
    dim: usize,
    /// Row-major `classes x dim`.
    weights: Vec<T>,
    bias: Vec<T>,
    step_count: u64,
}

impl<T: Real> SoftmaxModel<T> {
    /// Zero-initialized model.
    pub fn new(classes: usize, dim: usize) -> Self {
        Self {
            classes,
            dim,
            weights: vec![T::zero(); classes * dim],
            bias: vec![T::zero(); classes],
            step_count: 0,
        }
    }

    pub fn from_parts(classes: usize, dim: usize, weights: Vec<T>, bias: Vec<T>) -> Result<Self> {
        if weights.len() != classes * dim {
            return Err(Error::dim(classes * dim, weights.len()));
        }
        if bias.len() != classes {
            return Err(Error::dim(classes, bias.len()));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        Ok(Self {
            classes,
            dim,
            weights,
            bias,
            step_count: 0,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weights_mut(&mut self) -> &mut [T] {
        &mut self.weights
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    pub fn logits(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.dim.max(1))
            .take(self.classes)
            .zip(&self.bias)
            .map(|(w, &b)| w.iter().zip(x).fold(b, |acc, (&wi, &xi)| acc + wi * xi))
            .collect()
    }

    /// Arg-max class; ties go to the lowest class index.
    pub fn predict(&self, x: &[T]) -> usize {
        let logits = self.logits(x);
        let mut best = 0;
        for (c, &l) in logits.iter().enumerate() {
            if l > logits[best] {
                best = c;
            }
        }
        best
    }

    fn check_rows<'a>(&self, rows: impl IntoIterator<Item = &'a LabeledRow<T>>) -> Result<()> {
        for r in rows {
            if r.features.len() != self.dim {
                return Err(Error::dim(self.dim, r.features.len()));
            }
            if r.label >= self.classes {
                return Err(Error::LabelOutOfRange {
                    label: r.label,
                    classes: self.classes,
                });
            }
        }
        Ok(())
    }

    /// Mean cross-entropy over `batch` and its gradient.
    pub fn loss_and_gradient(&self, batch: &[&LabeledRow<T>]) -> (f64, Gradient<T>) {
        let mut grad = Gradient {
            weights: vec![T::zero(); self.weights.len()],
            bias: vec![T::zero(); self.classes],
        };
        if batch.is_empty() {
            return (0.0, grad);
        }
        let mut loss = 0.0;
        for row in batch {
            let logits = self.logits(&row.features);
            let lse = log_sum_exp(&logits);
            loss += (lse - logits[row.label]).as_f64();
            for (c, &l) in logits.iter().enumerate() {
                let mut delta = (l - lse).exp();
                if c == row.label {
                    delta = delta - T::one();
                }
                grad.bias[c] = grad.bias[c] + delta;
                let g = &mut grad.weights[c * self.dim..(c + 1) * self.dim];
                for (gi, &xi) in g.iter_mut().zip(&row.features) {
                    *gi = *gi + delta * xi;
                }
            }
        }
        let inv = T::one() / T::from_usize(batch.len()).expect("batch size fits in T");
        for g in grad.weights.iter_mut().chain(grad.bias.iter_mut()) {
            *g = *g * inv;
        }
        (loss / batch.len() as f64, grad)
    }

    /// Mean cross-entropy over `rows`.
    pub fn loss(&self, rows: &[LabeledRow<T>]) -> f64 {
        let refs: Vec<_> = rows.iter().collect();
        self.loss_and_gradient(&refs).0
    }

    /// Runs `cfg.epochs` passes of minibatch SGD and returns the updated model.
    pub fn train(&self, data: &[LabeledRow<T>], cfg: &TrainConfig) -> Result<Self> {
        self.train_with_history(data, cfg).map(|(m, _)| m)
    }

    /// Like [`train`](Self::train), also returning the mean minibatch loss of
    /// each epoch.
    pub fn train_with_history(&self, data: &[LabeledRow<T>], cfg: &TrainConfig) -> Result<(Self, Vec<f64>)> {
        cfg.validate()?;
        self.check_rows(data)?;
        let mut model = self.clone();
        let lr = T::lit(cfg.learning_rate);
        let mut rng = seed::rng(cfg.seed);
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut history = Vec::with_capacity(cfg.epochs);
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            let mut epoch_loss = 0.0;
            let mut batches = 0;
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&LabeledRow<T>> = chunk.iter().map(|&i| &data[i]).collect();
                let (loss, grad) = model.loss_and_gradient(&batch);
                for (w, g) in model.weights.iter_mut().zip(&grad.weights) {
                    *w = *w - lr * *g;
                }
                for (b, g) in model.bias.iter_mut().zip(&grad.bias) {
                    *b = *b - lr * *g;
                }
                model.step_count += 1;
                epoch_loss += loss;
                batches += 1;
            }
            history.push(if batches > 0 { epoch_loss / batches as f64 } else { 0.0 });
        }
        Ok((model, history))
    }

    /// Fraction of `task`'s eval samples classified correctly. Samples are
    /// conditioned by `desc` first when one is given.
    pub fn accuracy(&self, task: &TaskDataset<T>, desc: Option<&TaskDescriptor<T>>) -> Result<f64> {
        if task.eval.is_empty() {
            return Err(Error::EmptyEval(task.task_id.clone()));
        }
        let mut correct = 0usize;
        for s in &task.eval {
            let z = maybe_condition(&s.features, desc);
            if z.len() != self.dim {
                return Err(Error::dim(self.dim, z.len()));
            }
            if self.predict(&z) == s.label {
                correct += 1;
            }
        }
        Ok(correct as f64 / task.eval.len() as f64)
    }

    /// Checkpoint as `{dim, classes, weights, bias}` with weights row-major.
    pub fn to_json(&self) -> String {
        let doc = CheckpointDoc {
            dim: self.dim,
            classes: self.classes,
            weights: self.weights.iter().map(|v| v.as_f64()).collect(),
            bias: self.bias.iter().map(|v| v.as_f64()).collect(),
        };
        serde_json::to_string(&doc).expect("checkpoint serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let doc: CheckpointDoc = serde_json::from_str(s)?;
        Self::from_parts(
            doc.classes,
            doc.dim,
            doc.weights.into_iter().map(T::lit).collect(),
            doc.bias.into_iter().map(T::lit).collect(),
        )
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    dim: usize,
    classes: usize,
    #[serde(serialize_with = "exact_json::serialize_vec")]
    weights: Vec<f64>,
    #[serde(serialize_with = "exact_json::serialize_vec")]
    bias: Vec<f64>,
}
