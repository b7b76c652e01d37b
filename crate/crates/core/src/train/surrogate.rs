//! Trained model: parameters, normalization, config, OOD statistics.
//!
//! File layout: `"PHM1"`, u64 little-endian manifest length, the JSON
//! manifest, then one tensor blob per parameter in manifest order.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::fit::EpochLog;
use crate::error::{Error, Result};
use crate::fsutil::{read_to_vec, write_atomic};
use crate::model::{denormalize, prepare, Architecture, Config, FeatureSelection, InputBatch, InputDims, Precision, Predictions, Prepared, Variant};
use crate::model::Params;
use crate::ood::{feature_names, feature_ranges, OodCheck, OodStats};
use crate::pipeline::{NormStats, SampleRecord};
use crate::tensor::{read_blob_from, write_blob_to, Graph, Real, Tensor};

const MAGIC: &[u8; 4] = b"PHM1";
const FORMAT: &str = "phase-model";
const VERSION: u32 = 1;
/// Samples per inference graph.
const INFER_CHUNK: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct SurrogateModel {
    pub config: Config,
    pub variant: Variant,
    pub dims: InputDims,
    pub features: FeatureSelection,
    pub norm: NormStats,
    pub params: Params<f64>,
    pub ood: Option<OodStats>,
    pub history: Vec<EpochLog>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format: String,
    version: u32,
    variant: Variant,
    config: Config,
    dims: InputDims,
    features: FeatureSelection,
    norm: NormStats,
    ood: Option<OodStats>,
    history: Vec<EpochLog>,
    params: Vec<ParamEntry>,
}

/// Outputs of running the network over a set of samples.
pub struct Inference {
    /// Normalized head outputs.
    pub normalized: Predictions,
    pub latents: Vec<Vec<f64>>,
}

impl SurrogateModel {
    pub fn architecture(&self) -> Architecture {
        Architecture::new(self.config.model.clone(), self.variant, self.dims)
    }

    pub fn prepare(&self, recs: &[&SampleRecord]) -> Result<Vec<Prepared>> {
        recs.iter()
            .map(|r| {
                if r.n_pft() != self.dims.n_pft || r.n_months() != self.dims.n_months {
                    return Err(Error::Dimension(format!(
                        "sample {} has {} PFTs and {} months; the model expects {} and {}",
                        r.id,
                        r.n_pft(),
                        r.n_months(),
                        self.dims.n_pft,
                        self.dims.n_months
                    )));
                }
                Ok(prepare(r, &self.norm, &self.features))
            })
            .collect()
    }

    pub fn infer_prepared(&self, samples: &[Prepared]) -> Result<Inference> {
        match self.config.train.precision {
            Precision::F32 => infer::<f32>(self, samples),
            Precision::F64 => infer::<f64>(self, samples),
        }
    }

    pub fn infer(&self, recs: &[&SampleRecord]) -> Result<Inference> {
        self.infer_prepared(&self.prepare(recs)?)
    }

    /// Physical-unit predictions.
    pub fn predict(&self, recs: &[&SampleRecord]) -> Result<Predictions> {
        denormalize(&self.infer(recs)?.normalized, &self.norm)
    }

    /// First-layer attention of one sample, `[head][query][key]`.
    pub fn attention(&self, rec: &SampleRecord) -> Result<Vec<Vec<Vec<f64>>>> {
        let prepared = self.prepare(&[rec])?;
        let arch = self.architecture();
        let g = Graph::<f64>::new();
        let bound = self.params.bind(&g, false);
        let batch = InputBatch::<f64>::new(&[&prepared[0]], &self.dims)?;
        let fw = arch.forward(&bound, &g, &batch)?;
        let att = fw
            .attention
            .ok_or_else(|| Error::Contract(format!("variant {} has no attention fusion", self.variant)))?
            .value();
        let (h, n) = (att.shape()[1], att.shape()[2]);
        Ok((0..h)
            .map(|hd| (0..n).map(|q| att.data()[(hd * n + q) * n..(hd * n + q + 1) * n].to_vec()).collect())
            .collect())
    }

    pub fn fit_ood(&mut self, train: &[&SampleRecord]) -> Result<()> {
        let inf = self.infer(train)?;
        let ranges: Vec<_> = train.iter().map(|r| feature_ranges(r, &self.features)).collect();
        let names = feature_names(self.dims.n_pft, &self.features);
        self.ood = Some(OodStats::fit(names, &ranges, &inf.latents, &self.config.ood)?);
        Ok(())
    }

    pub fn check_ood(&self, recs: &[&SampleRecord]) -> Result<Vec<OodCheck>> {
        let stats = self.ood.as_ref().ok_or_else(|| Error::Contract("model carries no OOD statistics".into()))?;
        let inf = self.infer(recs)?;
        Ok(recs
            .iter()
            .zip(&inf.latents)
            .map(|(r, z)| stats.check(r.id, &feature_ranges(r, &self.features), z))
            .collect())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let manifest = Manifest {
            format: FORMAT.into(),
            version: VERSION,
            variant: self.variant,
            config: self.config.clone(),
            dims: self.dims,
            features: self.features.clone(),
            norm: self.norm.clone(),
            ood: self.ood.clone(),
            history: self.history.clone(),
            params: self
                .params
                .iter()
                .map(|(n, t)| ParamEntry {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                })
                .collect(),
        };
        let json = serde_json::to_vec(&manifest)?;
        let mut out = Vec::with_capacity(json.len() + 16);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in self.params.iter() {
            match self.config.train.precision {
                Precision::F32 => write_blob_to(&mut out, &t.cast::<f32>()),
                Precision::F64 => write_blob_to(&mut out, t),
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> std::result::Result<Self, String> {
        if bytes.len() < 12 || &bytes[..4] != MAGIC {
            return Err("not a model file (bad magic)".into());
        }
        let len = u64::from_le_bytes(bytes[4..12].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(12..12usize.saturating_add(len)).ok_or("model manifest is truncated")?;
        let m: Manifest = serde_json::from_slice(body).map_err(|e| format!("model manifest: {e}"))?;
        if m.format != FORMAT || m.version != VERSION {
            return Err(format!("unsupported model format {} v{}", m.format, m.version));
        }
        let mut at = 12 + len;
        let mut map = BTreeMap::new();
        for p in &m.params {
            let (blob, used) = read_blob_from(&bytes[at..])?;
            at += used;
            let t: Tensor<f64> = blob.into_real();
            if t.shape() != p.shape.as_slice() {
                return Err(format!("parameter {} has shape {:?}, manifest says {:?}", p.name, t.shape(), p.shape));
            }
            map.insert(p.name.clone(), t);
        }
        if at != bytes.len() {
            return Err("trailing bytes after the last parameter".into());
        }
        let model = Self {
            config: m.config,
            variant: m.variant,
            dims: m.dims,
            features: m.features,
            norm: m.norm,
            params: Params::from_map(map),
            ood: m.ood,
            history: m.history,
        };
        model.params.check(&model.architecture().specs()).map_err(|e| e.to_string())?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = read_to_vec(path)?;
        Self::from_bytes(&bytes).map_err(|m| Error::format(path, m))
    }

    /// Model signature check used before comparing against a dataset.
    pub fn check_dataset(&self, norm_n_pft: usize, n_months: usize) -> Result<()> {
        if norm_n_pft != self.dims.n_pft || n_months != self.dims.n_months {
            return Err(Error::Dimension(format!(
                "dataset has {norm_n_pft} PFTs and {n_months} months; the model expects {} and {}",
                self.dims.n_pft, self.dims.n_months
            )));
        }
        Ok(())
    }
}

fn infer<T: Real>(model: &SurrogateModel, samples: &[Prepared]) -> Result<Inference> {
    let arch = model.architecture();
    let params: Params<T> = model.params.cast();
    let mut normalized = Predictions { values: Vec::new() };
    let mut latents = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(INFER_CHUNK) {
        let refs: Vec<&Prepared> = chunk.iter().collect();
        let batch = InputBatch::<T>::new(&refs, &model.dims)?;
        let g = Graph::<T>::lenient();
        let bound = params.bind(&g, false);
        let fw = arch.forward(&bound, &g, &batch)?;
        let outs: Vec<Tensor<T>> = fw.bundle.outputs.iter().map(|v| v.value()).collect();
        if outs.iter().any(|t| !t.all_finite()) {
            return Err(Error::Range("model produced a non-finite prediction".into()));
        }
        normalized.extend(Predictions::from_outputs(&outs));
        let z = fw.latent.value();
        let d = z.shape()[1];
        latents.extend(z.data().chunks(d).map(|r| r.iter().map(|v| v.as_f64()).collect::<Vec<f64>>()));
    }
    Ok(Inference { normalized, latents })
}
