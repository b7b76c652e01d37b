//! Per-modality encoders, each mapping one feature group to a `[B × d]` latent.

use super::params::{dense, dense_specs, Bound, ParamSpec};
use crate::error::{Error, Result};
use crate::sim::forcing::N_VARS;
use crate::sim::N_LAYERS;
use crate::tensor::{Real, Var};

const CONV_KERNEL: usize = 3;

pub fn temporal_specs(prefix: &str, hidden: usize, d: usize) -> Vec<ParamSpec> {
    let mut s = vec![
        ParamSpec::matrix(format!("{prefix}.wx"), N_VARS, 4 * hidden),
        ParamSpec::matrix(format!("{prefix}.wh"), hidden, 4 * hidden),
        ParamSpec::zeros(format!("{prefix}.b"), &[4 * hidden]),
    ];
    s.extend(dense_specs(&format!("{prefix}.proj"), hidden, d));
    s
}

/// Single-layer LSTM over time-major forcing `[T × B × 5]`; the final
/// hidden state is projected to `[B × d]`. Gate order: input, forget,
/// candidate, output.
pub fn encode_temporal<'g, T: Real>(b: &Bound<'g, T>, prefix: &str, forcing: Var<'g, T>) -> Result<Var<'g, T>> {
    let shape = forcing.shape();
    if shape.len() != 3 || shape[2] != N_VARS {
        return Err(Error::Dimension(format!("forcing must be [T × B × {N_VARS}], got {shape:?}")));
    }
    let (steps, batch) = (shape[0], shape[1]);
    if steps == 0 {
        return Err(Error::Contract("forcing sequence is empty".into()));
    }
    let xw = forcing
        .reshape(&[steps * batch, N_VARS])?
        .try_matmul(b.p(&format!("{prefix}.wx")))?
        .add_row(b.p(&format!("{prefix}.b")))?;
    let h = xw.lstm(b.p(&format!("{prefix}.wh")), steps)?;
    dense(b, &format!("{prefix}.proj"), h)
}

pub fn layered_specs(prefix: &str, feats: usize, channels: [usize; 2], d: usize) -> Vec<ParamSpec> {
    let [c1, c2] = channels;
    vec![
        ParamSpec::xavier(format!("{prefix}.conv1.k"), &[CONV_KERNEL, feats, c1], CONV_KERNEL * feats, CONV_KERNEL * c1),
        ParamSpec::zeros(format!("{prefix}.conv1.b"), &[c1]),
        ParamSpec::xavier(format!("{prefix}.conv2.k"), &[CONV_KERNEL, c1, c2], CONV_KERNEL * c1, CONV_KERNEL * c2),
        ParamSpec::zeros(format!("{prefix}.conv2.b"), &[c2]),
    ]
    .into_iter()
    .chain(dense_specs(&format!("{prefix}.proj"), N_LAYERS * c2, d))
    .collect()
}

/// Two same-padded depth convolutions with relu over `[B × 9 × F]`, then
/// flatten and project to `[B × d]`.
pub fn encode_layered<'g, T: Real>(b: &Bound<'g, T>, prefix: &str, layered: Var<'g, T>) -> Result<Var<'g, T>> {
    let shape = layered.shape();
    if shape.len() != 3 || shape[1] != N_LAYERS {
        return Err(Error::Dimension(format!("layered input must be [B × {N_LAYERS} × F], got {shape:?}")));
    }
    let batch = shape[0];
    let x = layered
        .conv1d(b.p(&format!("{prefix}.conv1.k")), 1, 1)?
        .add_row(b.p(&format!("{prefix}.conv1.b")))?
        .relu();
    let x = x
        .conv1d(b.p(&format!("{prefix}.conv2.k")), 1, 1)?
        .add_row(b.p(&format!("{prefix}.conv2.b")))?
        .relu();
    let flat = x.reshape(&[batch, x.shape()[1] * x.shape()[2]])?;
    dense(b, &format!("{prefix}.proj"), flat)
}

pub fn fc_specs(prefix: &str, fan_in: usize, hidden: usize, d: usize) -> Vec<ParamSpec> {
    let mut s = dense_specs(&format!("{prefix}.l1"), fan_in, hidden);
    s.extend(dense_specs(&format!("{prefix}.l2"), hidden, d));
    s
}

/// Two dense layers, relu between, over `[B × F]`. Used for the static
/// group and for the flattened PFT group.
pub fn encode_fc<'g, T: Real>(b: &Bound<'g, T>, prefix: &str, x: Var<'g, T>) -> Result<Var<'g, T>> {
    let w = b.p(&format!("{prefix}.l1.w"));
    let shape = x.shape();
    if shape.len() != 2 || shape[1] != w.shape()[0] {
        return Err(Error::Dimension(format!(
            "{prefix} expects [B × {}], got {shape:?}",
            w.shape()[0]
        )));
    }
    let h = dense(b, &format!("{prefix}.l1"), x)?.relu();
    dense(b, &format!("{prefix}.l2"), h)
}
