//! Self-attention fusion of the branch latents into one `[B × d]` vector.

use super::params::{dense, dense_specs, Bound, ParamSpec};
use crate::error::{Error, Result};
use crate::tensor::{Real, Var};

const LN_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct FusionShape {
    pub d: usize,
    pub heads: usize,
    pub layers: usize,
    pub ff_mult: usize,
}

/// Embedding vector for one modality, so dropping a modality leaves the
/// others' embeddings unchanged.
pub fn embedding_name(modality: &str) -> String {
    format!("fusion.emb.{modality}")
}

pub fn fusion_specs(shape: FusionShape, modalities: &[&str]) -> Vec<ParamSpec> {
    let d = shape.d;
    let mut s: Vec<ParamSpec> = modalities
        .iter()
        .map(|m| ParamSpec::xavier(embedding_name(m), &[d], 1, d))
        .collect();
    for l in 0..shape.layers {
        for p in ["q", "k", "v", "o"] {
            s.extend(dense_specs(&format!("fusion.l{l}.{p}"), d, d));
        }
        s.extend(dense_specs(&format!("fusion.l{l}.ff1"), d, shape.ff_mult * d));
        s.extend(dense_specs(&format!("fusion.l{l}.ff2"), shape.ff_mult * d, d));
        for ln in ["ln1", "ln2"] {
            s.push(ParamSpec::ones(format!("fusion.l{l}.{ln}.g"), &[d]));
            s.push(ParamSpec::zeros(format!("fusion.l{l}.{ln}.b"), &[d]));
        }
    }
    s
}

/// Output of [`fuse`].
pub struct Fused<'g, T: Real> {
    /// Mean-pooled `[B × d]`.
    pub pooled: Var<'g, T>,
    /// Rows before pooling, `[B × N_g × d]`.
    pub rows: Var<'g, T>,
    /// First-layer attention, `[B × h × N_g × N_g]`.
    pub attention: Var<'g, T>,
}

fn check_tokens<T: Real>(tokens: &[(Var<'_, T>, Var<'_, T>)], d: usize) -> Result<usize> {
    if tokens.is_empty() {
        return Err(Error::Contract("fusion needs at least one group".into()));
    }
    let batch = tokens[0].0.shape()[0];
    for (z, e) in tokens {
        if z.shape() != [batch, d] || e.shape() != [d] {
            return Err(Error::Dimension(format!(
                "fusion expects [B × {d}] latents and [{d}] embeddings, got {:?} and {:?}",
                z.shape(),
                e.shape()
            )));
        }
    }
    Ok(batch)
}

/// Stacks `(latent, embedding)` pairs, applies the attention blocks and
/// mean-pools over groups.
pub fn fuse<'g, T: Real>(b: &Bound<'g, T>, shape: FusionShape, tokens: &[(Var<'g, T>, Var<'g, T>)]) -> Result<Fused<'g, T>> {
    let d = shape.d;
    let batch = check_tokens(tokens, d)?;
    let n = tokens.len();
    let h = shape.heads;
    let dh = d / h;
    let parts = tokens
        .iter()
        .map(|(z, e)| z.add_row(*e))
        .collect::<Result<Vec<_>>>()?;
    let mut x = Var::concat_last(&parts)?.reshape(&[batch * n, d])?;

    // [B·N × d] -> [B·h × N × dh]
    let split_heads = |v: Var<'g, T>, perm: &[usize]| -> Result<Var<'g, T>> {
        let v = v.reshape(&[batch, n, h, dh])?.permute(perm)?;
        let s = v.shape();
        v.reshape(&[batch * h, s[2], s[3]])
    };
    let mut first = None;
    for l in 0..shape.layers {
        let p = |name: &str| format!("fusion.l{l}.{name}");
        let q = split_heads(dense(b, &p("q"), x)?, &[0, 2, 1, 3])?;
        let kt = split_heads(dense(b, &p("k"), x)?, &[0, 2, 3, 1])?;
        let v = split_heads(dense(b, &p("v"), x)?, &[0, 2, 1, 3])?;
        let att = q.batch_matmul(kt)?.scale(1.0 / (dh as f64).sqrt()).softmax();
        if first.is_none() {
            first = Some(att.reshape(&[batch, h, n, n])?);
        }
        let o = att
            .batch_matmul(v)?
            .reshape(&[batch, h, n, dh])?
            .permute(&[0, 2, 1, 3])?
            .reshape(&[batch * n, d])?;
        let o = dense(b, &p("o"), o)?;
        x = x.add(o).layer_norm(b.p(&p("ln1.g")), b.p(&p("ln1.b")), LN_EPS)?;
        let ff = dense(b, &p("ff2"), dense(b, &p("ff1"), x)?.relu())?;
        x = x.add(ff).layer_norm(b.p(&p("ln2.g")), b.p(&p("ln2.b")), LN_EPS)?;
    }
    let rows = x.reshape(&[batch, n, d])?;
    Ok(Fused {
        pooled: rows.mean_axis(1)?,
        rows,
        attention: first.expect("at least one layer"),
    })
}

pub fn concat_specs(d: usize, n_groups: usize) -> Vec<ParamSpec> {
    dense_specs("fusion.cat", n_groups * d, d)
}

/// Drop-in replacement without attention: concatenate latents, one dense layer.
pub fn fuse_concat<'g, T: Real>(b: &Bound<'g, T>, d: usize, latents: &[Var<'g, T>]) -> Result<Var<'g, T>> {
    if latents.iter().any(|z| z.shape().len() != 2 || z.shape()[1] != d) {
        return Err(Error::Dimension(format!("concat fusion expects [B × {d}] latents")));
    }
    dense(b, "fusion.cat", Var::concat_last(latents)?)
}
