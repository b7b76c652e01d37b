use serde::{Deserialize, Serialize};

use super::record::{SampleRecord, Task, N_LAYER_FEATS, N_PFT_STATE, N_TRAITS};
use crate::error::{Error, Result};
use crate::sim::forcing::N_VARS;
use crate::sim::N_LAYERS;

/// Min–max scaling of one feature. A constant feature maps to 0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MinMax {
    pub min: f64,
    pub max: f64,
}

impl MinMax {
    pub fn fit(values: impl IntoIterator<Item = f64>) -> Option<Self> {
        let mut it = values.into_iter();
        let first = it.next()?;
        let (min, max) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Some(Self { min, max })
    }

    pub fn range(&self) -> f64 {
        self.max - self.min
    }

    pub fn apply(&self, x: f64) -> f64 {
        if self.max > self.min {
            (x - self.min) / (self.max - self.min)
        } else {
            0.0
        }
    }

    pub fn invert(&self, y: f64) -> f64 {
        self.min + y * (self.max - self.min)
    }
}

/// Fits on `train` and returns the scaled values.
pub fn minmax_fit_apply(train: &[f64]) -> Result<(MinMax, Vec<f64>)> {
    let s = MinMax::fit(train.iter().copied()).ok_or_else(|| Error::Range("no values to fit".into()))?;
    Ok((s, train.iter().map(|&x| s.apply(x)).collect()))
}

/// Scaling for every input feature and target component, fitted on the
/// training split. Forcing is scaled per variable; per-PFT and per-layer
/// groups per (entity, feature). GPP, AR and NPP share one scale with a zero
/// floor so that NPP = GPP − AR survives normalization.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub forcing: Vec<MinMax>,
    pub static_feats: Vec<MinMax>,
    pub pft_traits: Vec<MinMax>,
    pub pft_state: Vec<MinMax>,
    pub layered: Vec<MinMax>,
    /// Per task (in `Task::ALL` order), per component.
    pub targets: Vec<Vec<MinMax>>,
}

fn fit_columns<'a>(recs: &[&'a SampleRecord], width: usize, get: impl Fn(&'a SampleRecord) -> &'a [f64]) -> Vec<MinMax> {
    (0..width)
        .map(|c| MinMax::fit(recs.iter().map(|r| get(r)[c])).expect("non-empty"))
        .collect()
}

impl NormStats {
    pub fn fit(train: &[&SampleRecord]) -> Result<Self> {
        let first = train.first().ok_or_else(|| Error::Range("cannot fit normalization on an empty split".into()))?;
        let n_pft = first.n_pft();
        let forcing = (0..N_VARS)
            .map(|v| {
                MinMax::fit(train.iter().flat_map(|r| r.forcing.iter().skip(v).step_by(N_VARS).copied())).expect("non-empty")
            })
            .collect();
        let mut targets: Vec<Vec<MinMax>> = Task::ALL
            .iter()
            .map(|&t| {
                (0..t.dim(n_pft))
                    .map(|c| MinMax::fit(train.iter().map(|r| r.targets.get(t)[c])).expect("non-empty"))
                    .collect()
            })
            .collect();
        let flux_max = train
            .iter()
            .flat_map(|r| [r.targets.gpp, r.targets.ar, r.targets.npp])
            .fold(f64::MIN_POSITIVE, f64::max);
        for t in [Task::Gpp, Task::Ar, Task::Npp] {
            targets[t.index()] = vec![MinMax { min: 0.0, max: flux_max }];
        }
        Ok(Self {
            forcing,
            static_feats: fit_columns(train, first.static_feats.len(), |r| &r.static_feats),
            pft_traits: fit_columns(train, n_pft * N_TRAITS, |r| &r.pft_traits),
            pft_state: fit_columns(train, n_pft * N_PFT_STATE, |r| &r.pft_state),
            layered: fit_columns(train, N_LAYERS * N_LAYER_FEATS, |r| &r.layered),
            targets,
        })
    }

    pub fn forcing_row(&self, row: &[f64], out: &mut Vec<f64>) {
        out.extend(row.iter().zip(self.forcing.iter().cycle()).map(|(&x, s)| s.apply(x)));
    }

    pub fn target(&self, task: Task, values: &[f64]) -> Vec<f64> {
        values.iter().zip(&self.targets[task.index()]).map(|(&x, s)| s.apply(x)).collect()
    }

    pub fn denormalize_target(&self, task: Task, values: &[f64]) -> Vec<f64> {
        values.iter().zip(&self.targets[task.index()]).map(|(&y, s)| s.invert(y)).collect()
    }
}

pub fn apply_all(stats: &[MinMax], values: &[f64]) -> Vec<f64> {
    values.iter().zip(stats).map(|(&x, s)| s.apply(x)).collect()
}
