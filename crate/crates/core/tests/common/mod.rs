//! Plain-loop reference implementations used as oracles. They read
//! parameters out of a store but share no code with the library kernels.
#![allow(dead_code)]

use mcsm_core::attention::AttentionParams;
use mcsm_core::encoders::{ConvBlockParams, Linear, LstmParams};
use mcsm_core::ParamStore;

pub type Rows = Vec<Vec<f64>>;

fn sig(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

pub fn lstm_step(store: &ParamStore<f64>, p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let hd = p.hidden_dim;
    let pre = |k: usize, r: usize| {
        let w = store.value(p.w[k]).data();
        let u = store.value(p.u[k]).data();
        let mut s = store.value(p.b[k]).data()[r];
        for j in 0..x.len() {
            s += w[r * x.len() + j] * x[j];
        }
        for j in 0..hd {
            s += u[r * hd + j] * h[j];
        }
        s
    };
    let mut h_new = vec![0.0; hd];
    let mut c_new = vec![0.0; hd];
    for r in 0..hd {
        let i = sig(pre(0, r));
        let f = sig(pre(1, r));
        let o = sig(pre(2, r));
        let u = pre(3, r).tanh();
        c_new[r] = u * i + c[r] * f;
        h_new[r] = o * c_new[r].tanh();
    }
    (h_new, c_new)
}

pub fn lstm_sequence(store: &ParamStore<f64>, p: &LstmParams, xs: &Rows) -> Rows {
    let mut h = vec![0.0; p.hidden_dim];
    let mut c = vec![0.0; p.hidden_dim];
    xs.iter()
        .map(|x| {
            (h, c) = lstm_step(store, p, x, &h, &c);
            h.clone()
        })
        .collect()
}

pub fn affine(store: &ParamStore<f64>, p: &Linear, x: &[f64]) -> Vec<f64> {
    let w = store.value(p.weight).data();
    let b = store.value(p.bias).data();
    (0..p.output_dim)
        .map(|r| b[r] + (0..p.input_dim).map(|c| w[r * p.input_dim + c] * x[c]).sum::<f64>())
        .collect()
}

pub fn conv_block(store: &ParamStore<f64>, p: &ConvBlockParams, words: &Rows) -> Rows {
    let mut x = words.clone();
    for layer in &p.layers {
        let shape = store.value(layer.kernel).shape().to_vec();
        let (cout, cin, width) = (shape[0], shape[1], shape[2]);
        let k = store.value(layer.kernel).data();
        let b = store.value(layer.bias).data();
        let conv: Rows = (0..x.len() + 1 - width)
            .map(|t| {
                (0..cout)
                    .map(|o| {
                        let mut s = b[o];
                        for ci in 0..cin {
                            for w in 0..width {
                                s += k[(o * cin + ci) * width + w] * x[t + w][ci];
                            }
                        }
                        s.max(0.0)
                    })
                    .collect()
            })
            .collect();
        x = (0..conv.len() / layer.pool)
            .map(|j| {
                (0..cout)
                    .map(|o| (0..layer.pool).map(|q| conv[j * layer.pool + q][o]).fold(f64::NEG_INFINITY, f64::max))
                    .collect()
            })
            .collect();
    }
    x
}

pub fn attention(store: &ParamStore<f64>, p: &AttentionParams, hs: &Rows, valid: usize) -> Vec<f64> {
    let w = store.value(p.weight).data();
    let v = store.value(p.vector).data();
    let logits: Vec<f64> = hs
        .iter()
        .map(|h| {
            (0..p.attention_dim)
                .map(|a| {
                    let m = (0..p.input_dim).map(|j| w[a * p.input_dim + j] * h[j]).sum::<f64>().tanh();
                    v[a] * m
                })
                .sum()
        })
        .collect();
    let max = logits[..valid].iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits
        .iter()
        .enumerate()
        .map(|(j, &l)| if j < valid { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = exps.iter().sum();
    exps.iter().map(|e| e / total).collect()
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `Σ_j a_j (h_j · q)` over the rows of `hs`.
pub fn weighted_score(a: &[f64], hs: &Rows, q: &[f64]) -> f64 {
    a.iter().zip(hs).map(|(w, h)| w * dot(h, q)).sum()
}

pub fn rows(data: &[f32], dim: usize, count: usize) -> Rows {
    data.chunks(dim)
        .take(count)
        .map(|r| r.iter().map(|&v| v as f64).collect())
        .collect()
}
