//! Wiring of encoders, fusion and heads for each model variant.

use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, Variant};
use super::encoders::{encode_fc, encode_layered, encode_temporal, fc_specs, layered_specs, temporal_specs};
use super::fusion::{concat_specs, embedding_name, fuse, fuse_concat, fusion_specs, FusionShape};
use super::heads::{default_registry, head_specs, predict_all, Bundle, HeadSpec};
use super::input::{InputBatch, InputDims};
use super::params::{dense, dense_specs, Bound, ParamSpec};
use crate::error::Result;
use crate::pipeline::record::N_LAYER_FEATS;
use crate::pipeline::Task;
use crate::sim::forcing::N_VARS;
use crate::sim::N_LAYERS;
use crate::tensor::{Graph, Real, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Temporal,
    Layered,
    Static,
    Pft,
}

impl Modality {
    pub const ALL: [Modality; 4] = [Modality::Temporal, Modality::Layered, Modality::Static, Modality::Pft];

    pub fn name(self) -> &'static str {
        match self {
            Modality::Temporal => "lstm",
            Modality::Layered => "cnn",
            Modality::Static => "static",
            Modality::Pft => "pft",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub model: ModelConfig,
    pub variant: Variant,
    pub dims: InputDims,
    pub registry: Vec<HeadSpec>,
}

/// Graph outputs of one forward pass.
pub struct Forward<'g, T: Real> {
    /// Fused latent, `[B × d]`.
    pub latent: Var<'g, T>,
    pub bundle: Bundle<'g, T>,
    /// State increments per state task (delta-state baseline only).
    pub deltas: Vec<Var<'g, T>>,
    /// First-layer attention `[B × h × N_g × N_g]` when attention fusion is used.
    pub attention: Option<Var<'g, T>>,
}

impl Architecture {
    pub fn new(model: ModelConfig, variant: Variant, dims: InputDims) -> Self {
        Self {
            model,
            variant,
            registry: default_registry(dims.n_pft),
            dims,
        }
    }

    /// Branches feeding the fusion block; empty for the flat baselines.
    pub fn modalities(&self) -> Vec<Modality> {
        let removed: &[Modality] = match self.variant {
            Variant::NoCnn => &[Modality::Layered],
            Variant::NoFc => &[Modality::Static, Modality::Pft],
            Variant::NoLstm => &[Modality::Temporal],
            Variant::BaselineMlp | Variant::BaselinePinn => &Modality::ALL,
            _ => &[],
        };
        Modality::ALL.into_iter().filter(|m| !removed.contains(m)).collect()
    }

    fn fusion_shape(&self) -> FusionShape {
        FusionShape {
            d: self.model.d_model,
            heads: self.model.heads,
            layers: self.model.layers,
            ff_mult: self.model.ff_mult,
        }
    }

    fn mlp_input_len(&self) -> usize {
        self.dims.forcing_len() + self.dims.n_static + self.dims.pft_len() + self.dims.layered_len()
    }

    pub fn specs(&self) -> Vec<ParamSpec> {
        let m = &self.model;
        let d = m.d_model;
        let mut s = Vec::new();
        let mods = self.modalities();
        for &md in &mods {
            s.extend(match md {
                Modality::Temporal => temporal_specs("enc.lstm", m.lstm_hidden, d),
                Modality::Layered => layered_specs("enc.cnn", N_LAYER_FEATS, m.conv_channels, d),
                Modality::Static => fc_specs("enc.static", self.dims.n_static, m.fc_hidden, d),
                Modality::Pft => fc_specs("enc.pft", self.dims.pft_len(), m.fc_hidden, d),
            });
        }
        match self.variant {
            Variant::BaselineMlp | Variant::BaselinePinn => {
                s.extend(dense_specs("mlp.l1", self.mlp_input_len(), m.fc_hidden));
                s.extend(dense_specs("mlp.l2", m.fc_hidden, d));
            }
            Variant::NoTrans => s.extend(concat_specs(d, mods.len())),
            _ => {
                let names: Vec<&str> = mods.iter().map(|m| m.name()).collect();
                s.extend(fusion_specs(self.fusion_shape(), &names));
            }
        }
        s.extend(head_specs(&self.registry, d, m.head_hidden));
        if self.variant == Variant::BaselinePinn {
            s.extend(head_specs(&delta_registry(self.dims.n_pft), d, m.head_hidden));
        }
        s
    }

    pub fn forward<'g, T: Real>(&self, b: &Bound<'g, T>, g: &'g Graph<T>, x: &InputBatch<T>) -> Result<Forward<'g, T>> {
        let batch = x.size;
        let (latent, attention) = if self.variant.is_baseline() {
            let forcing = g
                .constant(x.forcing.clone())
                .permute(&[1, 0, 2])?
                .reshape(&[batch, self.dims.n_months * N_VARS])?;
            let layered = g.constant(x.layered.clone()).reshape(&[batch, N_LAYERS * N_LAYER_FEATS])?;
            let flat = Var::concat_last(&[forcing, g.constant(x.static_feats.clone()), g.constant(x.pft.clone()), layered])?;
            let h = dense(b, "mlp.l1", flat)?.relu();
            (dense(b, "mlp.l2", h)?.relu(), None)
        } else {
            let mut latents = Vec::new();
            let mut tokens = Vec::new();
            for md in self.modalities() {
                let z = match md {
                    Modality::Temporal => encode_temporal(b, "enc.lstm", g.constant(x.forcing.clone()))?,
                    Modality::Layered => encode_layered(b, "enc.cnn", g.constant(x.layered.clone()))?,
                    Modality::Static => encode_fc(b, "enc.static", g.constant(x.static_feats.clone()))?,
                    Modality::Pft => encode_fc(b, "enc.pft", g.constant(x.pft.clone()))?,
                };
                latents.push(z);
                if let Some(e) = b.try_p(&embedding_name(md.name())) {
                    tokens.push((z, e));
                }
            }
            if self.variant == Variant::NoTrans {
                (fuse_concat(b, self.model.d_model, &latents)?, None)
            } else {
                let f = fuse(b, self.fusion_shape(), &tokens)?;
                (f.pooled, Some(f.attention))
            }
        };
        let bundle = predict_all(b, &self.registry, latent)?;
        let deltas = if self.variant == Variant::BaselinePinn {
            predict_all(b, &delta_registry(self.dims.n_pft), latent)?.outputs
        } else {
            Vec::new()
        };
        Ok(Forward {
            latent,
            bundle,
            deltas,
            attention,
        })
    }
}

/// Unconstrained increment heads for the state tasks.
fn delta_registry(n_pft: usize) -> Vec<HeadSpec> {
    Task::STATE
        .iter()
        .map(|&t| HeadSpec {
            name: format!("delta_{}", t.name()),
            shape: vec![t.dim(n_pft)],
            nonneg: false,
        })
        .collect()
}
