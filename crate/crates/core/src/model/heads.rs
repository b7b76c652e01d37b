//! Task heads. Each maps the fused latent through dense-relu-dense to its
//! registered shape; nonnegative tasks end in softplus.

use super::params::{dense, dense_specs, Bound, ParamSpec};
use crate::error::{Error, Result};
use crate::pipeline::{NormStats, Task};
use crate::tensor::{Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct HeadSpec {
    pub name: String,
    /// Empty for a scalar; `[n]` for a vector; `[r, c]` for a matrix.
    pub shape: Vec<usize>,
    pub nonneg: bool,
}

impl HeadSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// The nine default tasks, in [`Task::ALL`] order, all nonnegative.
pub fn default_registry(n_pft: usize) -> Vec<HeadSpec> {
    Task::ALL
        .iter()
        .map(|&t| HeadSpec {
            name: t.name().to_string(),
            shape: if t.is_flux() { vec![] } else { vec![t.dim(n_pft)] },
            nonneg: true,
        })
        .collect()
}

pub fn head_specs(registry: &[HeadSpec], d: usize, hidden: usize) -> Vec<ParamSpec> {
    registry
        .iter()
        .flat_map(|h| {
            let mut s = dense_specs(&format!("head.{}.l1", h.name), d, hidden);
            s.extend(dense_specs(&format!("head.{}.l2", h.name), hidden, h.numel()));
            s
        })
        .collect()
}

/// Head outputs, `[B × numel]` each, in registry order.
pub struct Bundle<'g, T: Real> {
    pub registry: Vec<HeadSpec>,
    pub outputs: Vec<Var<'g, T>>,
}

impl<'g, T: Real> Bundle<'g, T> {
    pub fn get(&self, name: &str) -> Result<Var<'g, T>> {
        self.registry
            .iter()
            .position(|h| h.name == name)
            .map(|i| self.outputs[i])
            .ok_or_else(|| Error::Contract(format!("no head registered for task '{name}'")))
    }

    /// Output viewed with its registered shape, `[B, ...shape]`.
    pub fn shaped(&self, name: &str) -> Result<Var<'g, T>> {
        let v = self.get(name)?;
        let spec = self.registry.iter().find(|h| h.name == name).expect("found above");
        let mut shape = vec![v.shape()[0]];
        shape.extend_from_slice(&spec.shape);
        v.reshape(&shape)
    }
}

pub fn predict_all<'g, T: Real>(b: &Bound<'g, T>, registry: &[HeadSpec], z: Var<'g, T>) -> Result<Bundle<'g, T>> {
    let outputs = registry
        .iter()
        .map(|h| {
            let hid = dense(b, &format!("head.{}.l1", h.name), z)?.relu();
            let out = dense(b, &format!("head.{}.l2", h.name), hid)?;
            Ok(if h.nonneg { out.softplus() } else { out })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Bundle {
        registry: registry.to_vec(),
        outputs,
    })
}

/// Per-task predictions for a batch, normalized or physical, `[task][sample][component]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Predictions {
    pub values: Vec<Vec<Vec<f64>>>,
}

impl Predictions {
    pub fn from_outputs<T: Real>(outputs: &[Tensor<T>]) -> Self {
        Self {
            values: outputs
                .iter()
                .map(|t| {
                    let b = t.shape()[0];
                    let w = t.numel() / b.max(1);
                    t.data().chunks(w.max(1)).map(|r| r.iter().map(|v| v.as_f64()).collect()).collect()
                })
                .collect(),
        }
    }

    pub fn task(&self, task: Task) -> &[Vec<f64>] {
        &self.values[task.index()]
    }

    pub fn n_samples(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    pub fn extend(&mut self, other: Predictions) {
        if self.values.is_empty() {
            *self = other;
            return;
        }
        for (a, b) in self.values.iter_mut().zip(other.values) {
            a.extend(b);
        }
    }
}

/// Inverse min–max per task component.
pub fn denormalize(pred: &Predictions, stats: &NormStats) -> Result<Predictions> {
    if stats.targets.len() != pred.values.len() {
        return Err(Error::Contract(format!(
            "normalization covers {} tasks, predictions have {}",
            stats.targets.len(),
            pred.values.len()
        )));
    }
    let mut values = Vec::with_capacity(pred.values.len());
    for (task_vals, task_stats) in pred.values.iter().zip(&stats.targets) {
        let mut rows = Vec::with_capacity(task_vals.len());
        for row in task_vals {
            if row.len() != task_stats.len() {
                return Err(Error::Contract("prediction width does not match its statistics".into()));
            }
            rows.push(row.iter().zip(task_stats).map(|(&y, s)| s.invert(y)).collect());
        }
        values.push(rows);
    }
    Ok(Predictions { values })
}
