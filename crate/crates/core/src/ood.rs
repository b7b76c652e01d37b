//! Out-of-distribution check: a raw-feature envelope around the training
//! data plus a diagonal Mahalanobis-style distance on the fused latent.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{FeatureSelection, OodConfig};
use crate::pipeline::record::{LAYER_FEAT_NAMES, N_LAYER_FEATS, PFT_STATE_NAMES, TRAIT_NAMES};
use crate::pipeline::SampleRecord;
use crate::sim::forcing::{N_VARS, VAR_NAMES};
use crate::sim::N_LAYERS;

const VAR_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodStats {
    pub tau: f64,
    pub quantile: f64,
    pub feature_names: Vec<String>,
    pub env_min: Vec<f64>,
    pub env_max: Vec<f64>,
    pub latent_mean: Vec<f64>,
    pub latent_var: Vec<f64>,
    pub threshold: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodCheck {
    pub id: u64,
    pub flag: bool,
    pub score: f64,
    pub reasons: Vec<String>,
}

pub fn feature_names(n_pft: usize, sel: &FeatureSelection) -> Vec<String> {
    let mut names: Vec<String> = VAR_NAMES.iter().map(|s| s.to_string()).collect();
    names.extend(sel.static_names.iter().cloned());
    for j in 0..n_pft {
        names.extend(TRAIT_NAMES.iter().map(|t| format!("{t}_{j}")));
        names.extend(PFT_STATE_NAMES.iter().map(|t| format!("{t}_{j}")));
    }
    for l in 0..N_LAYERS {
        names.extend(LAYER_FEAT_NAMES.iter().map(|f| format!("{f}_l{l}")));
    }
    names
}

/// Per-feature (low, high) of one sample in physical units. Forcing
/// variables span all months; every other feature is a single value.
pub fn feature_ranges(rec: &SampleRecord, sel: &FeatureSelection) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    for v in 0..N_VARS {
        let vals = rec.forcing.iter().skip(v).step_by(N_VARS);
        let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
        out.push((lo, hi));
    }
    out.extend(sel.static_keep.iter().map(|&i| (rec.static_feats[i], rec.static_feats[i])));
    let n_traits = TRAIT_NAMES.len();
    let n_state = PFT_STATE_NAMES.len();
    for j in 0..rec.n_pft() {
        out.extend(rec.pft_traits[j * n_traits..(j + 1) * n_traits].iter().map(|&x| (x, x)));
        out.extend(rec.pft_state[j * n_state..(j + 1) * n_state].iter().map(|&x| (x, x)));
    }
    debug_assert_eq!(rec.layered.len(), N_LAYERS * N_LAYER_FEATS);
    out.extend(rec.layered.iter().map(|&x| (x, x)));
    out
}

/// Mean squared standardized distance of `z` from the training latent mean.
pub fn latent_score(z: &[f64], mean: &[f64], var: &[f64]) -> f64 {
    let s: f64 = z
        .iter()
        .zip(mean)
        .zip(var)
        .map(|((x, m), v)| (x - m).powi(2) / v.max(VAR_FLOOR))
        .sum();
    s / z.len().max(1) as f64
}

/// Nearest-rank percentile, `q` in [0, 100].
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q / 100.0) * v.len() as f64).ceil() as usize;
    v[rank.clamp(1, v.len()) - 1]
}

impl OodStats {
    /// `ranges[i]` and `latents[i]` describe training sample `i`.
    pub fn fit(names: Vec<String>, ranges: &[Vec<(f64, f64)>], latents: &[Vec<f64>], cfg: &OodConfig) -> Result<Self> {
        if ranges.is_empty() || latents.len() != ranges.len() {
            return Err(Error::Range("OOD statistics need a non-empty training set".into()));
        }
        let nf = names.len();
        let mut env_min = vec![f64::INFINITY; nf];
        let mut env_max = vec![f64::NEG_INFINITY; nf];
        for r in ranges {
            if r.len() != nf {
                return Err(Error::Dimension(format!("{} feature ranges for {nf} names", r.len())));
            }
            for (i, &(lo, hi)) in r.iter().enumerate() {
                env_min[i] = env_min[i].min(lo);
                env_max[i] = env_max[i].max(hi);
            }
        }
        let d = latents[0].len();
        let n = latents.len() as f64;
        let mut mean = vec![0.0; d];
        for z in latents {
            for (m, x) in mean.iter_mut().zip(z) {
                *m += x / n;
            }
        }
        let mut var = vec![0.0; d];
        for z in latents {
            for ((v, x), m) in var.iter_mut().zip(z).zip(&mean) {
                *v += (x - m).powi(2) / n;
            }
        }
        let scores: Vec<f64> = latents.iter().map(|z| latent_score(z, &mean, &var)).collect();
        Ok(Self {
            tau: cfg.tau,
            quantile: cfg.quantile,
            feature_names: names,
            env_min,
            env_max,
            threshold: percentile(&scores, cfg.quantile),
            latent_mean: mean,
            latent_var: var,
        })
    }

    pub fn check(&self, id: u64, ranges: &[(f64, f64)], latent: &[f64]) -> OodCheck {
        let mut reasons = Vec::new();
        for (i, &(lo, hi)) in ranges.iter().enumerate() {
            let (a, b) = (self.env_min[i], self.env_max[i]);
            let slack = self.tau * (b - a);
            if lo < a - slack || hi > b + slack {
                reasons.push(format!("feature {} outside training envelope", self.feature_names[i]));
            }
        }
        let score = latent_score(latent, &self.latent_mean, &self.latent_var);
        if score > self.threshold {
            reasons.push(format!("latent distance {score:.3} above threshold {:.3}", self.threshold));
        }
        OodCheck {
            id,
            flag: !reasons.is_empty(),
            score,
            reasons,
        }
    }
}

/// CSV of check results: id, flag, score, reasons joined by `;`.
pub fn checks_csv(checks: &[OodCheck]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["id", "flag", "score", "reasons"]).map_err(csv_err)?;
    for c in checks {
        w.write_record([c.id.to_string(), c.flag.to_string(), format!("{:e}", c.score), c.reasons.join(";")])
            .map_err(csv_err)?;
    }
    w.into_inner().map_err(|e| Error::Contract(e.to_string()))
}

pub(crate) fn csv_err(e: csv::Error) -> Error {
    Error::Contract(format!("csv: {e}"))
}
