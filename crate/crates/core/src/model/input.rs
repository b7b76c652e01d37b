//! Normalized model inputs: per-sample vectors prepared once, then packed
//! into batch tensors for the graph.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pipeline::normalize::{apply_all, NormStats};
use crate::pipeline::record::{static_names, N_LAYER_FEATS, N_PFT_STATE, N_TRAITS};
use crate::pipeline::{SampleRecord, Task};
use crate::sim::forcing::N_VARS;
use crate::sim::N_LAYERS;
use crate::tensor::{Real, Tensor};

/// Features per PFT seen by the PFT branch: traits then state.
pub const PFT_FEATS: usize = N_TRAITS + N_PFT_STATE;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InputDims {
    pub n_months: usize,
    pub n_static: usize,
    pub n_pft: usize,
}

impl InputDims {
    pub fn forcing_len(&self) -> usize {
        self.n_months * N_VARS
    }

    pub fn pft_len(&self) -> usize {
        self.n_pft * PFT_FEATS
    }

    pub fn layered_len(&self) -> usize {
        N_LAYERS * N_LAYER_FEATS
    }
}

/// Which static columns the model sees.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureSelection {
    pub static_names: Vec<String>,
    pub static_keep: Vec<usize>,
}

impl FeatureSelection {
    pub fn new(n_pft: usize, drop: &[String]) -> Result<Self> {
        let names = static_names(n_pft);
        for d in drop {
            if !names.contains(d) {
                return Err(Error::Config(format!("unknown static feature '{d}' in drop_static")));
            }
        }
        let static_keep: Vec<usize> = (0..names.len()).filter(|&i| !drop.contains(&names[i])).collect();
        Ok(Self {
            static_names: static_keep.iter().map(|&i| names[i].clone()).collect(),
            static_keep,
        })
    }
}

/// One sample, normalized, with targets in task order.
#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub id: u64,
    pub lat: f64,
    pub lon: f64,
    pub forcing: Vec<f64>,
    pub static_feats: Vec<f64>,
    pub pft: Vec<f64>,
    pub layered: Vec<f64>,
    pub targets: Vec<Vec<f64>>,
    /// End-of-window state of each state task, in that task's target scale.
    pub initial: Vec<Vec<f64>>,
}

pub fn prepare(rec: &SampleRecord, norm: &NormStats, sel: &FeatureSelection) -> Prepared {
    let n_pft = rec.n_pft();
    let mut forcing = Vec::with_capacity(rec.forcing.len());
    norm.forcing_row(&rec.forcing, &mut forcing);
    let static_all = apply_all(&norm.static_feats, &rec.static_feats);
    let traits = apply_all(&norm.pft_traits, &rec.pft_traits);
    let state = apply_all(&norm.pft_state, &rec.pft_state);
    let mut pft = Vec::with_capacity(n_pft * PFT_FEATS);
    for j in 0..n_pft {
        pft.extend_from_slice(&traits[j * N_TRAITS..(j + 1) * N_TRAITS]);
        pft.extend_from_slice(&state[j * N_PFT_STATE..(j + 1) * N_PFT_STATE]);
    }
    let targets = Task::ALL.iter().map(|&t| norm.target(t, rec.targets.get(t))).collect();
    let initial = Task::STATE
        .iter()
        .map(|&t| norm.target(t, &initial_state(rec, t)))
        .collect();
    Prepared {
        id: rec.id,
        lat: rec.lat,
        lon: rec.lon,
        forcing,
        static_feats: sel.static_keep.iter().map(|&i| static_all[i]).collect(),
        pft,
        layered: apply_all(&norm.layered, &rec.layered),
        targets,
        initial,
    }
}

/// Physical end-of-window value of a state task, from the input groups.
pub fn initial_state(rec: &SampleRecord, task: Task) -> Vec<f64> {
    let n_pft = rec.n_pft();
    match task {
        Task::Deadcrootc | Task::Deadstemc | Task::Tlai => {
            let k = task.index();
            (0..n_pft).map(|j| rec.pft_state[j * N_PFT_STATE + k]).collect()
        }
        Task::Cwdc | Task::Soil3c | Task::Soil4c => {
            let k = task.index() - Task::Cwdc.index();
            (0..N_LAYERS).map(|l| rec.layered[l * N_LAYER_FEATS + k]).collect()
        }
        _ => Vec::new(),
    }
}

/// Batch tensors. Forcing is time-major `[months × B × 5]`.
#[derive(Clone, Debug)]
pub struct InputBatch<T> {
    pub size: usize,
    pub forcing: Tensor<T>,
    pub static_feats: Tensor<T>,
    pub pft: Tensor<T>,
    pub layered: Tensor<T>,
    /// `[B × dim]` per task.
    pub targets: Vec<Tensor<T>>,
    /// `[B × dim]` per state task.
    pub initial: Vec<Tensor<T>>,
}

impl<T: Real> InputBatch<T> {
    pub fn new(samples: &[&Prepared], dims: &InputDims) -> Result<Self> {
        let b = samples.len();
        if b == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let months = dims.n_months;
        for s in samples {
            if s.forcing.len() != months * N_VARS || s.pft.len() != dims.pft_len() || s.static_feats.len() != dims.n_static {
                return Err(Error::Dimension(format!("sample {} does not match the model input sizes", s.id)));
            }
        }
        let mut forcing = Vec::with_capacity(months * b * N_VARS);
        for m in 0..months {
            for s in samples {
                forcing.extend(s.forcing[m * N_VARS..(m + 1) * N_VARS].iter().map(|&v| T::from_f64(v)));
            }
        }
        let cat = |f: &dyn Fn(&Prepared) -> &[f64]| -> Vec<T> { samples.iter().flat_map(|s| f(s).iter().map(|&v| T::from_f64(v))).collect() };
        let targets = Task::ALL
            .iter()
            .map(|&t| Tensor::new(vec![b, t.dim(dims.n_pft)], cat(&|s| &s.targets[t.index()])))
            .collect::<Result<Vec<_>>>()?;
        let initial = Task::STATE
            .iter()
            .map(|&t| Tensor::new(vec![b, t.dim(dims.n_pft)], cat(&|s| &s.initial[t.index()])))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            size: b,
            forcing: Tensor::new(vec![months, b, N_VARS], forcing)?,
            static_feats: Tensor::new(vec![b, dims.n_static], cat(&|s| &s.static_feats))?,
            pft: Tensor::new(vec![b, dims.pft_len()], cat(&|s| &s.pft))?,
            layered: Tensor::new(vec![b, N_LAYERS, N_LAYER_FEATS], cat(&|s| &s.layered))?,
            targets,
            initial,
        })
    }
}
