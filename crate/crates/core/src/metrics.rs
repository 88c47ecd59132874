//! Backward and forward transfer over an accuracy matrix.
//!
//! Task and model indices are 1-based: model `M_i` has been trained on
//! tasks `1..=i`, and `Acc(M_i, D_j)` is its accuracy on task `j`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-stage accuracies over every task of a stream.
///
/// Row `r` holds the accuracies of model `M_{model_index[r]}` on tasks
/// `1..=T`. When several tasks are learned in one stage (the labeled
/// prefix), intermediate models do not exist and the first recorded model
/// trained on task `j` serves as its `Acc(M_j, D_j)` reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccuracyMatrix {
    tasks: usize,
    model_index: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new(tasks: usize) -> Self {
        Self {
            tasks,
            model_index: Vec::new(),
            rows: Vec::new(),
        }
    }

    /// A full `T x T` matrix where row `i` belongs to model `M_{i+1}`.
    pub fn square(rows: Vec<Vec<f64>>) -> Result<Self> {
        let mut m = Self::new(rows.len());
        for (i, r) in rows.into_iter().enumerate() {
            m.push(i + 1, r)?;
        }
        Ok(m)
    }

    /// Appends the row for model `M_model`.
    pub fn push(&mut self, model: usize, row: Vec<f64>) -> Result<()> {
        if row.len() != self.tasks {
            return Err(Error::dim(self.tasks, row.len()));
        }
        if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::InvalidConfig("accuracy outside [0, 1]".into()));
        }
        if model == 0 || model > self.tasks || self.model_index.last().is_some_and(|&m| m >= model) {
            return Err(Error::Index(format!("model index {model} out of order")));
        }
        self.model_index.push(model);
        self.rows.push(row);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.tasks
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.rows
    }

    pub fn model_indices(&self) -> &[usize] {
        &self.model_index
    }

    /// The model index of the last row, if any.
    pub fn last_model(&self) -> Option<usize> {
        self.model_index.last().copied()
    }

    fn row_of(&self, model: usize) -> Option<&[f64]> {
        self.model_index
            .iter()
            .position(|&m| m == model)
            .map(|r| self.rows[r].as_slice())
    }

    /// `Acc(M_i, D_j)`, both indices 1-based.
    pub fn acc(&self, model: usize, task: usize) -> Result<f64> {
        if task == 0 || task > self.tasks {
            return Err(Error::Index(format!("task {task} outside 1..={}", self.tasks)));
        }
        self.row_of(model)
            .map(|r| r[task - 1])
            .ok_or_else(|| Error::Index(format!("no row for model {model}")))
    }

    /// Accuracy on task `j` of the first model trained on it.
    pub fn reference(&self, task: usize) -> Result<f64> {
        let r = self
            .model_index
            .iter()
            .position(|&m| m >= task)
            .ok_or_else(|| Error::Index(format!("task {task} never trained")))?;
        if task == 0 || task > self.tasks {
            return Err(Error::Index(format!("task {task} outside 1..={}", self.tasks)));
        }
        Ok(self.rows[r][task - 1])
    }
}

/// `BWT_i = 1/(i-1) * sum_{j<i} (Acc(M_i, D_j) - Acc(M_j, D_j))`.
pub fn bwt(r: &AccuracyMatrix, i: usize) -> Result<f64> {
    if i < 2 {
        return Err(Error::Index(format!("BWT needs i >= 2, got {i}")));
    }
    let mut sum = 0.0;
    for j in 1..i {
        sum += r.acc(i, j)? - r.reference(j)?;
    }
    Ok(sum / (i - 1) as f64)
}

/// `FWT_i = 1/(T-i) * sum_{j>i} Acc(M_i, D_j)`.
pub fn fwt(r: &AccuracyMatrix, i: usize, t: usize) -> Result<f64> {
    if i >= t || t > r.tasks() {
        return Err(Error::Index(format!("FWT needs i < T <= {}, got i={i}, T={t}", r.tasks())));
    }
    let mut sum = 0.0;
    for j in (i + 1)..=t {
        sum += r.acc(i, j)?;
    }
    Ok(sum / (t - i) as f64)
}

/// Which scalar a summary cell holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "FWT")]
    Fwt,
    #[serde(rename = "BWT")]
    Bwt,
    /// Mean accuracy of the final model over all tasks.
    #[serde(rename = "ACC")]
    Acc,
}

impl Metric {
    pub const ALL: [Metric; 3] = [Metric::Fwt, Metric::Bwt, Metric::Acc];

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Fwt => "FWT",
            Metric::Bwt => "BWT",
            Metric::Acc => "ACC",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }
}

/// Headline numbers of one run.
///
/// `bwt` is taken at the last model; `fwt` averages `FWT_i` over every
/// recorded model with `i < T` (NaN when there is none); `acc` is the final
/// row's mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub bwt: f64,
    pub fwt: f64,
    pub acc: f64,
}

impl RunMetrics {
    pub fn from_matrix(r: &AccuracyMatrix) -> Result<Self> {
        let last = r.last_model().ok_or_else(|| Error::Index("empty accuracy matrix".into()))?;
        let bwt = if last >= 2 { bwt(r, last)? } else { 0.0 };
        let fwts: Vec<f64> = r
            .model_indices()
            .iter()
            .filter(|&&i| i < r.tasks())
            .map(|&i| fwt(r, i, r.tasks()))
            .collect::<Result<_>>()?;
        let fwt = if fwts.is_empty() {
            f64::NAN
        } else {
            fwts.iter().sum::<f64>() / fwts.len() as f64
        };
        let final_row = r.rows().last().expect("non-empty");
        let acc = final_row.iter().sum::<f64>() / final_row.len() as f64;
        Ok(Self { bwt, fwt, acc })
    }

    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Fwt => self.fwt,
            Metric::Bwt => self.bwt,
            Metric::Acc => self.acc,
        }
    }
}

/// Mean and population standard deviation of one summary cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Cell {
    pub fn from_values(values: &[f64]) -> Self {
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
        Self {
            mean,
            std: var.sqrt(),
            n,
        }
    }
}

/// Aggregates keyed by `(strategy, k, metric)`. Strategy keys are the
/// canonical strategy names.
pub type Summary = BTreeMap<(String, usize, Metric), Cell>;

/// Groups `(strategy, k, value)` observations per metric and reduces each
/// group to its mean and population standard deviation.
pub fn summarize<'a>(runs: impl IntoIterator<Item = (&'a str, usize, &'a RunMetrics)>) -> Summary {
    let mut groups: BTreeMap<(String, usize, Metric), Vec<f64>> = BTreeMap::new();
    for (strategy, k, m) in runs {
        for metric in Metric::ALL {
            groups
                .entry((strategy.to_string(), k, metric))
                .or_default()
                .push(m.get(metric));
        }
    }
    groups.into_iter().map(|(key, v)| (key, Cell::from_values(&v))).collect()
}
