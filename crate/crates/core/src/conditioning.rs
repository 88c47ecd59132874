//! Task descriptors and feature conditioning.
//!
//! Each task gets a fixed unit vector derived from its id. Conditioning
//! appends that vector to a feature vector, so task identity becomes part
//! of the space that mixtures are fitted in and the learner sees.

use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::seed;

pub const DEFAULT_P_DIM: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct TaskDescriptor<T> {
    pub task_id: String,
    /// Unit-norm descriptor vector.
    pub vector: Vec<T>,
    /// Human-readable instruction the vector stands in for.
    pub instruction_text: String,
}

/// Deterministic descriptor for `task_id`: a normalized Gaussian draw seeded
/// from a hash of the id and `seed`.
pub fn make_descriptor<T: Real>(task_id: &str, p_dim: usize, seed: u64) -> Result<TaskDescriptor<T>> {
    if p_dim == 0 {
        return Err(Error::InvalidConfig("descriptor dimension must be >= 1".into()));
    }
    let mut rng = seed::rng(seed::mix64(seed::fnv1a(task_id.as_bytes()) ^ seed::mix64(seed)));
    let raw = loop {
        let v: Vec<f64> = (0..p_dim).map(|_| rng.sample(StandardNormal)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-12 {
            break v.into_iter().map(|x| x / norm).collect::<Vec<_>>();
        }
    };
    Ok(TaskDescriptor {
        task_id: task_id.to_string(),
        vector: raw.into_iter().map(T::lit).collect(),
        instruction_text: format!(
            "Group the samples of task '{task_id}' by similarity, then keep the most representative and diverse ones for replay."
        ),
    })
}

/// `[x ; desc.vector]`.
pub fn condition<T: Real>(x: &[T], desc: &TaskDescriptor<T>) -> Vec<T> {
    let mut z = Vec::with_capacity(x.len() + desc.vector.len());
    z.extend_from_slice(x);
    z.extend_from_slice(&desc.vector);
    z
}

/// Conditions with `desc` when present, otherwise returns `x` unchanged.
pub fn maybe_condition<T: Real>(x: &[T], desc: Option<&TaskDescriptor<T>>) -> Vec<T> {
    match desc {
        Some(d) => condition(x, d),
        None => x.to_vec(),
    }
}

/// Descriptors keyed by task id.
#[derive(Debug, Clone, Default)]
pub struct DescriptorBank<T> {
    by_task: BTreeMap<String, TaskDescriptor<T>>,
}

impl<T: Real> DescriptorBank<T> {
    pub fn build<'a>(task_ids: impl IntoIterator<Item = &'a str>, p_dim: usize, seed: u64) -> Result<Self> {
        let mut by_task = BTreeMap::new();
        for id in task_ids {
            by_task.insert(id.to_string(), make_descriptor(id, p_dim, seed)?);
        }
        Ok(Self { by_task })
    }

    pub fn get(&self, task_id: &str) -> Option<&TaskDescriptor<T>> {
        self.by_task.get(task_id)
    }

    /// JSON object mapping task id to descriptor vector.
    pub fn to_json(&self) -> String {
        let map: BTreeMap<&str, Vec<f64>> = self
            .by_task
            .iter()
            .map(|(k, d)| (k.as_str(), d.vector.iter().map(|v| v.as_f64()).collect()))
            .collect();
        serde_json::to_string_pretty(&map).expect("descriptor bank serializes")
    }
}
