//! On-disk dataset: `manifest.json` plus `batches/batch_NNNNN.pht`, each a
//! run of f64 blobs (ids, static, forcing, traits, pft state, layered, PFT
//! codes, valid layer counts, flattened targets) for up to `batch_size`
//! samples in (lat, lon) order. Values are stored in physical units; the
//! manifest carries the train-split normalization.

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::clean::{clean, CleanReport};
use super::normalize::NormStats;
use super::record::{target_width, SampleRecord, Targets, N_LAYER_FEATS, N_PFT_STATE, N_TRAITS};
use super::split::{batch_by_latlon, split_shuffle};
use crate::error::{Error, Result};
use crate::fsutil::{read_json, read_to_vec, write_atomic, write_json};
use crate::sim::forcing::N_VARS;
use crate::sim::N_LAYERS;
use crate::tensor::{read_blob_from, write_blob_to, AnyTensor, Tensor};

pub const DEFAULT_BATCH_SIZE: usize = 256;
const FORMAT: &str = "phase-dataset";
const VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Provenance {
    pub world_seed: u64,
    pub n_lat: usize,
    pub n_lon: usize,
    pub resolution_deg: f64,
    pub window_years: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format: String,
    pub version: u32,
    pub n_samples: usize,
    pub n_pft: usize,
    pub n_months: usize,
    pub split_seed: u64,
    pub provenance: Provenance,
    pub train_ids: Vec<u64>,
    pub test_ids: Vec<u64>,
    pub batch_size: usize,
    pub batches: Vec<String>,
    pub norm: NormStats,
    pub clean: CleanReport,
}

/// Records plus their manifest. `records` are in batch order.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub records: Vec<SampleRecord>,
    index: HashMap<u64, usize>,
}

impl Dataset {
    /// Cleans, splits 80:20 with `seed`, fits normalization on the training
    /// split and orders records into (lat, lon) batches.
    pub fn build(records: Vec<SampleRecord>, seed: u64, batch_size: usize, provenance: Provenance) -> Result<Self> {
        let (records, report) = clean(records);
        let first = records.first().ok_or_else(|| Error::Config("no valid samples".into()))?;
        let (n_pft, n_months) = (first.n_pft(), first.n_months());
        for r in &records {
            if r.n_pft() != n_pft || r.n_months() != n_months || r.layered.len() != N_LAYERS * N_LAYER_FEATS {
                return Err(Error::Dimension(format!("sample {} has inconsistent group shapes", r.id)));
            }
        }
        let ids: Vec<u64> = records.iter().map(|r| r.id).collect();
        let (train_ids, test_ids) = split_shuffle(&ids, seed)?;
        let coords: Vec<(f64, f64)> = records.iter().map(|r| (r.lat, r.lon)).collect();
        let batches = batch_by_latlon(&coords, batch_size)?;
        let mut slots: Vec<Option<SampleRecord>> = records.into_iter().map(Some).collect();
        let ordered: Vec<SampleRecord> = batches
            .iter()
            .flatten()
            .map(|&i| slots[i].take().expect("batches partition the samples"))
            .collect();
        let index = build_index(&ordered)?;
        let train: Vec<&SampleRecord> = train_ids.iter().map(|id| &ordered[index[id]]).collect();
        let norm = NormStats::fit(&train)?;
        let manifest = DatasetManifest {
            format: FORMAT.into(),
            version: VERSION,
            n_samples: ordered.len(),
            n_pft,
            n_months,
            split_seed: seed,
            provenance,
            train_ids,
            test_ids,
            batch_size,
            batches: (0..batches.len()).map(|b| format!("batches/batch_{b:05}.pht")).collect(),
            norm,
            clean: report,
        };
        Ok(Self {
            manifest,
            records: ordered,
            index,
        })
    }

    pub fn n_pft(&self) -> usize {
        self.manifest.n_pft
    }

    pub fn get(&self, id: u64) -> Option<&SampleRecord> {
        self.index.get(&id).map(|&i| &self.records[i])
    }

    fn select(&self, ids: &[u64]) -> Vec<&SampleRecord> {
        ids.iter().map(|id| &self.records[self.index[id]]).collect()
    }

    /// Training records in split order.
    pub fn train(&self) -> Vec<&SampleRecord> {
        self.select(&self.manifest.train_ids)
    }

    pub fn test(&self) -> Vec<&SampleRecord> {
        self.select(&self.manifest.test_ids)
    }

    /// Records grouped per batch file.
    pub fn batches(&self) -> impl Iterator<Item = &[SampleRecord]> {
        self.records.chunks(self.manifest.batch_size)
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        for (name, batch) in self.manifest.batches.iter().zip(self.batches()) {
            write_atomic(&dir.join(name), &encode_batch(batch, self.n_pft()))?;
        }
        write_json(&dir.join(MANIFEST), &self.manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let mpath = dir.join(MANIFEST);
        let manifest: DatasetManifest = read_json(&mpath)?;
        if manifest.format != FORMAT || manifest.version != VERSION {
            return Err(Error::format(&mpath, "not a dataset manifest"));
        }
        let mut records = Vec::with_capacity(manifest.n_samples);
        for name in &manifest.batches {
            let path = dir.join(name);
            let bytes = read_to_vec(&path)?;
            let batch = decode_batch(&bytes, manifest.n_pft, manifest.n_months).map_err(|m| Error::format(&path, m))?;
            records.extend(batch);
        }
        if records.len() != manifest.n_samples {
            return Err(Error::format(&mpath, format!("{} samples in batches, manifest says {}", records.len(), manifest.n_samples)));
        }
        let index = build_index(&records)?;
        for id in manifest.train_ids.iter().chain(&manifest.test_ids) {
            if !index.contains_key(id) {
                return Err(Error::format(&mpath, format!("split names unknown sample {id}")));
            }
        }
        Ok(Self {
            manifest,
            records,
            index,
        })
    }
}

fn build_index(records: &[SampleRecord]) -> Result<HashMap<u64, usize>> {
    let mut index = HashMap::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if index.insert(r.id, i).is_some() {
            return Err(Error::Contract(format!("duplicate sample id {}", r.id)));
        }
    }
    Ok(index)
}

fn encode_batch(batch: &[SampleRecord], n_pft: usize) -> Vec<u8> {
    let b = batch.len();
    let gather = |f: &dyn Fn(&SampleRecord) -> Vec<f64>| -> Vec<f64> { batch.iter().flat_map(f).collect() };
    let tensors: Vec<(Vec<usize>, Vec<f64>)> = vec![
        (vec![b, 3], gather(&|r| vec![r.id as f64, r.lat, r.lon])),
        (vec![b, batch.first().map_or(0, |r| r.static_feats.len())], gather(&|r| r.static_feats.clone())),
        (vec![b, batch.first().map_or(0, |r| r.n_months()), N_VARS], gather(&|r| r.forcing.clone())),
        (vec![b, n_pft, N_TRAITS], gather(&|r| r.pft_traits.clone())),
        (vec![b, n_pft, N_PFT_STATE], gather(&|r| r.pft_state.clone())),
        (vec![b, N_LAYERS, N_LAYER_FEATS], gather(&|r| r.layered.clone())),
        (vec![b, n_pft], gather(&|r| r.pft_codes.iter().map(|&c| c as f64).collect())),
        (vec![b], gather(&|r| vec![r.valid_layers as f64])),
        (vec![b, target_width(n_pft)], gather(&|r| r.targets.flatten())),
    ];
    let mut buf = Vec::new();
    for (shape, data) in tensors {
        write_blob_to(&mut buf, &Tensor::new(shape, data).expect("batch shapes are consistent"));
    }
    buf
}

fn decode_batch(bytes: &[u8], n_pft: usize, n_months: usize) -> std::result::Result<Vec<SampleRecord>, String> {
    let mut pos = 0;
    let mut parts = Vec::with_capacity(9);
    for _ in 0..9 {
        let (t, used) = read_blob_from(&bytes[pos..])?;
        pos += used;
        match t {
            AnyTensor::F64(t) => parts.push(t),
            AnyTensor::F32(_) => return Err("batch blobs must be f64".into()),
        }
    }
    if pos != bytes.len() {
        return Err("trailing bytes after batch".into());
    }
    let b = parts[0].shape().first().copied().unwrap_or(0);
    let expect = [
        vec![b, 3],
        vec![b, parts[1].shape().get(1).copied().unwrap_or(0)],
        vec![b, n_months, N_VARS],
        vec![b, n_pft, N_TRAITS],
        vec![b, n_pft, N_PFT_STATE],
        vec![b, N_LAYERS, N_LAYER_FEATS],
        vec![b, n_pft],
        vec![b],
        vec![b, target_width(n_pft)],
    ];
    for (t, e) in parts.iter().zip(&expect) {
        if t.shape() != e.as_slice() {
            return Err(format!("batch tensor has shape {:?}, expected {e:?}", t.shape()));
        }
    }
    let row = |t: &Tensor<f64>, i: usize| -> Vec<f64> {
        let w = t.numel() / b.max(1);
        t.data()[i * w..(i + 1) * w].to_vec()
    };
    Ok((0..b)
        .map(|i| {
            let key = row(&parts[0], i);
            SampleRecord {
                id: key[0] as u64,
                lat: key[1],
                lon: key[2],
                static_feats: row(&parts[1], i),
                forcing: row(&parts[2], i),
                pft_traits: row(&parts[3], i),
                pft_state: row(&parts[4], i),
                layered: row(&parts[5], i),
                pft_codes: row(&parts[6], i).iter().map(|&c| c as i32).collect(),
                valid_layers: parts[7].data()[i] as usize,
                targets: Targets::unflatten(&row(&parts[8], i), n_pft),
            }
        })
        .collect())
}
