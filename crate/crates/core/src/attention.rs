//! Feed-forward attention over a hidden sequence:
//! `M = tanh(W_a H)`, `a = softmax(w_aᵀ M)` with padded positions masked out.

use alloc::format;

use rand::Rng;

use crate::encoders::glorot;
use crate::{Error, Graph, ParamId, ParamStore, Real, Result, Var};

#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `[attention_dim, input_dim]`
    pub weight: ParamId,
    /// `[attention_dim]`
    pub vector: ParamId,
    pub input_dim: usize,
    pub attention_dim: usize,
}

impl AttentionParams {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        attention_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if attention_dim == 0 {
            return Err(Error::dim("attention", "attention_dim must be at least 1"));
        }
        let weight = store.insert(
            &format!("{prefix}.weight"),
            glorot(&[attention_dim, input_dim], input_dim, attention_dim, rng),
        )?;
        let vector = store.insert(
            &format!("{prefix}.vector"),
            glorot(&[attention_dim], attention_dim, 1, rng),
        )?;
        Ok(Self {
            weight,
            vector,
            input_dim,
            attention_dim,
        })
    }

    pub fn from_store<T: Real>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let missing = |n: &str| Error::contract(format!("missing parameter {n:?}"));
        let wname = format!("{prefix}.weight");
        let vname = format!("{prefix}.vector");
        let weight = store.id(&wname).ok_or_else(|| missing(&wname))?;
        let vector = store.id(&vname).ok_or_else(|| missing(&vname))?;
        let (attention_dim, input_dim) = store.value(weight).dims2("attention")?;
        if store.value(vector).shape() != [attention_dim] {
            return Err(Error::dim("attention", format!("{vname} must have length {attention_dim}")));
        }
        Ok(Self {
            weight,
            vector,
            input_dim,
            attention_dim,
        })
    }
}

/// Attention probabilities over the rows of `hs: [n, d]`. Only the first
/// `valid_len` rows can receive weight; the rest come out exactly zero.
pub fn attention_weights<T: Real>(
    g: &mut Graph<'_, T>,
    p: &AttentionParams,
    hs: Var,
    valid_len: usize,
) -> Result<Var> {
    let (n, d) = g.value(hs).dims2("attention_weights")?;
    if d != p.input_dim {
        return Err(Error::dim("attention_weights", format!("width {d}, expected {}", p.input_dim)));
    }
    if valid_len > n {
        return Err(Error::dim("attention_weights", format!("valid length {valid_len} of {n}")));
    }
    let w = g.param(p.weight);
    let v = g.param(p.vector);
    let pre = g.matmul_t(hs, w)?;
    let m = g.tanh(pre)?;
    let logits = g.matmul(m, v)?;
    if valid_len == n {
        g.softmax(logits, None)
    } else {
        let mask: alloc::vec::Vec<bool> = (0..n).map(|j| j < valid_len).collect();
        g.softmax(logits, Some(&mask))
    }
}

/// Each hidden vector scaled by its attention weight, `{a_j h_j}`.
pub fn attended_sequence<T: Real>(g: &mut Graph<'_, T>, hs: Var, weights: Var) -> Result<Var> {
    g.scale_rows(hs, weights)
}

/// `Σ_j a_j h_j`.
pub fn attended_sum<T: Real>(g: &mut Graph<'_, T>, hs: Var, weights: Var) -> Result<Var> {
    g.matmul(weights, hs)
}
