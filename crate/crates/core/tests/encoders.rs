mod common;

use mcsm_core::encoders::{
    conv_output_len, encode_text_global, lstm_sequence, lstm_step, min_conv_input_len, project, temporal_conv_block,
    ConvBlockParams, ConvLayerSpec, Linear, LstmParams, GATES,
};
use mcsm_core::{Error, Graph, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_vec(r: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| r.random_range(-1.0..1.0)).collect()
}

fn lstm_store(input: usize, hidden: usize, seed: u64) -> (ParamStore<f64>, LstmParams) {
    let mut store = ParamStore::new();
    let p = LstmParams::init(&mut store, "lstm", input, hidden, &mut rng(seed)).unwrap();
    (store, p)
}

fn fill(store: &mut ParamStore<f64>, p: &LstmParams, f: impl Fn(&str, usize) -> f64) {
    for (k, gate) in GATES.iter().enumerate() {
        for (kind, id) in [("w", p.w[k]), ("u", p.u[k]), ("b", p.b[k])] {
            for (j, v) in store.value_mut(id).data_mut().iter_mut().enumerate() {
                *v = f(&format!("{kind}_{gate}"), j);
            }
        }
    }
}

fn step_values(store: &ParamStore<f64>, p: &LstmParams, x: &[f64], h: &[f64], c: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut g = Graph::new(store);
    let xv = g.constant(Tensor::vector(x.to_vec()).unwrap());
    let hv = g.constant(Tensor::vector(h.to_vec()).unwrap());
    let cv = g.constant(Tensor::vector(c.to_vec()).unwrap());
    let (h, c) = lstm_step(&mut g, p, xv, hv, cv).unwrap();
    (g.value(h).data().to_vec(), g.value(c).data().to_vec())
}

#[test]
fn zero_parameters_are_a_fixpoint() {
    let (mut store, p) = lstm_store(3, 4, 1);
    fill(&mut store, &p, |_, _| 0.0);
    let (h, c) = step_values(&store, &p, &[0.5, -1.0, 2.0], &[0.0; 4], &[0.0; 4]);
    assert_eq!(h, vec![0.0; 4]);
    assert_eq!(c, vec![0.0; 4]);
}

#[test]
fn saturated_forget_gate_keeps_cell() {
    let (mut store, p) = lstm_store(3, 4, 2);
    fill(&mut store, &p, |name, _| match name {
        "b_forget" => 20.0,
        n if n.starts_with("b_") => -20.0,
        _ => 0.0,
    });
    let c_prev = [0.3, -0.7, 0.9, 0.1];
    let (_, c) = step_values(&store, &p, &[1.0, 1.0, 1.0], &[0.2; 4], &c_prev);
    for (a, b) in c.iter().zip(c_prev) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn step_matches_straight_line_oracle() {
    let (store, p) = lstm_store(4, 4, 3);
    let mut r = rng(30);
    let (x, h, c) = (random_vec(&mut r, 4), random_vec(&mut r, 4), random_vec(&mut r, 4));
    let (h1, c1) = step_values(&store, &p, &x, &h, &c);
    let (h2, c2) = common::lstm_step(&store, &p, &x, &h, &c);
    for (a, b) in h1.iter().chain(&c1).zip(h2.iter().chain(&c2)) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn step_rejects_wrong_widths() {
    let (store, p) = lstm_store(3, 4, 4);
    let mut g = Graph::new(&store);
    let x = g.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let h = g.constant(Tensor::zeros(&[4]));
    assert!(matches!(lstm_step(&mut g, &p, x, h, h), Err(Error::Dimension { .. })));
}

fn sequence_values(store: &ParamStore<f64>, p: &LstmParams, rows: usize, data: &[f64]) -> Vec<f64> {
    let mut g = Graph::new(store);
    let seq = g.constant(Tensor::matrix(rows, p.input_dim, data.to_vec()).unwrap());
    let hs = lstm_sequence(&mut g, p, seq).unwrap();
    g.value(hs).data().to_vec()
}

#[test]
fn sequence_is_chained_steps() {
    let (store, p) = lstm_store(3, 5, 5);
    let data = random_vec(&mut rng(50), 9);
    let hs = sequence_values(&store, &p, 3, &data);
    let (mut h, mut c) = (vec![0.0; 5], vec![0.0; 5]);
    for t in 0..3 {
        (h, c) = step_values(&store, &p, &data[t * 3..t * 3 + 3], &h, &c);
        for (a, b) in hs[t * 5..t * 5 + 5].iter().zip(&h) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    let single = sequence_values(&store, &p, 1, &data[..3]);
    let (h1, _) = step_values(&store, &p, &data[..3], &[0.0; 5], &[0.0; 5]);
    for (a, b) in single.iter().zip(&h1) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn zero_weight_sequence_is_zero() {
    let (mut store, p) = lstm_store(2, 3, 6);
    fill(&mut store, &p, |_, _| 0.0);
    assert_eq!(sequence_values(&store, &p, 4, &[1.0; 8]), vec![0.0; 12]);
}

#[test]
fn sequence_order_matters() {
    let (store, p) = lstm_store(2, 3, 7);
    let data = random_vec(&mut rng(70), 8);
    let mut reversed = Vec::new();
    for t in (0..4).rev() {
        reversed.extend_from_slice(&data[t * 2..t * 2 + 2]);
    }
    let a = sequence_values(&store, &p, 4, &data);
    let b = sequence_values(&store, &p, 4, &reversed);
    assert!((a[9..].iter().zip(&b[9..]).map(|(x, y)| (x - y).abs()).sum::<f64>()) > 1e-6);
}

fn conv_store(input: usize, specs: &[ConvLayerSpec], seed: u64) -> (ParamStore<f64>, ConvBlockParams) {
    let mut store = ParamStore::new();
    let p = ConvBlockParams::init(&mut store, "conv", input, specs, &mut rng(seed)).unwrap();
    (store, p)
}

fn conv_values(store: &ParamStore<f64>, p: &ConvBlockParams, rows: usize, data: &[f64]) -> Result<Tensor<f64>, Error> {
    let mut g = Graph::new(store);
    let words = g.constant(Tensor::matrix(rows, p.input_dim, data.to_vec()).unwrap());
    let out = temporal_conv_block(&mut g, p, words)?;
    Ok(g.value(out).clone())
}

#[test]
fn identity_kernel_is_relu() {
    let spec = [ConvLayerSpec { channels: 3, width: 1, pool: 1 }];
    let (mut store, p) = conv_store(3, &spec, 8);
    let kernel = store.value_mut(p.layers[0].kernel).data_mut();
    kernel.iter_mut().for_each(|v| *v = 0.0);
    for c in 0..3 {
        kernel[c * 3 + c] = 1.0;
    }
    let data = [1.0, -2.0, 0.5, -0.1, 3.0, -4.0];
    let out = conv_values(&store, &p, 2, &data).unwrap();
    let relu: Vec<f64> = data.iter().map(|v| v.max(0.0)).collect();
    assert_eq!(out.data(), relu.as_slice());
}

#[test]
fn zero_input_gives_zero_fragments() {
    let spec = [
        ConvLayerSpec { channels: 4, width: 2, pool: 1 },
        ConvLayerSpec { channels: 2, width: 2, pool: 2 },
    ];
    let (store, p) = conv_store(3, &spec, 9);
    let out = conv_values(&store, &p, 7, &[0.0; 21]).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
    assert_eq!(out.shape(), &[2, 2]);
}

#[test]
fn single_layer_matches_nested_loops() {
    let spec = [ConvLayerSpec { channels: 3, width: 2, pool: 2 }];
    let (mut store, p) = conv_store(2, &spec, 10);
    let mut r = rng(100);
    for v in store.value_mut(p.layers[0].bias).data_mut() {
        *v = r.random_range(-0.5..0.5);
    }
    let x = random_vec(&mut r, 16);
    let out = conv_values(&store, &p, 8, &x).unwrap();
    let k = store.value(p.layers[0].kernel).data();
    let b = store.value(p.layers[0].bias).data();
    // Sliding window over 8 rows gives 7 positions; pooling by 2 keeps 3.
    let mut conv = vec![[0.0; 3]; 7];
    for (t, row) in conv.iter_mut().enumerate() {
        for (o, cell) in row.iter_mut().enumerate() {
            let mut s = b[o];
            for ci in 0..2 {
                for w in 0..2 {
                    s += k[(o * 2 + ci) * 2 + w] * x[(t + w) * 2 + ci];
                }
            }
            *cell = s.max(0.0);
        }
    }
    assert_eq!(out.shape(), &[3, 3]);
    for j in 0..3 {
        for o in 0..3 {
            let expected = conv[2 * j][o].max(conv[2 * j + 1][o]);
            assert!((out.data()[j * 3 + o] - expected).abs() < 1e-12);
        }
    }
}

#[test]
fn short_text_is_rejected() {
    let spec = [
        ConvLayerSpec { channels: 2, width: 3, pool: 2 },
        ConvLayerSpec { channels: 2, width: 2, pool: 1 },
    ];
    let (store, p) = conv_store(2, &spec, 11);
    // Layer two needs 2 rows, so layer one must convolve to 4, i.e. 6 words.
    assert_eq!(min_conv_input_len(&spec), 6);
    assert_eq!(
        conv_values(&store, &p, 5, &[0.0; 10]).unwrap_err(),
        Error::TooShort { len: 5, needed: 6 }
    );
    assert!(conv_values(&store, &p, 6, &[0.0; 12]).is_ok());
}

proptest! {
    #[test]
    fn conv_length_formula_holds(
        len in 1usize..30,
        layers in prop::collection::vec((1usize..4, 1usize..4), 1..4),
    ) {
        let specs: Vec<_> = layers
            .iter()
            .map(|&(width, pool)| ConvLayerSpec { channels: 2, width, pool })
            .collect();
        let mut expected = Some(len);
        for s in &specs {
            expected = expected.and_then(|n| {
                let c = n.checked_sub(s.width)? + 1;
                (c / s.pool > 0).then_some(c / s.pool)
            });
        }
        prop_assert_eq!(conv_output_len(len, &specs), expected);
        prop_assert_eq!(expected.is_some(), len >= min_conv_input_len(&specs));
        if let Some(n) = expected {
            let (store, p) = conv_store(2, &specs, 12);
            let out = conv_values(&store, &p, len, &vec![0.1; len * 2]).unwrap();
            prop_assert_eq!(out.shape(), &[n, 2]);
        }
    }

    #[test]
    fn hidden_stays_bounded(data in prop::collection::vec(-20.0f64..20.0, 6..=30), seed in 0u64..100) {
        let rows = data.len() / 3;
        let (store, p) = lstm_store(3, 4, seed);
        for v in sequence_values(&store, &p, rows, &data[..rows * 3]) {
            prop_assert!(v.abs() < 1.0);
        }
    }
}

fn linear_store(input: usize, output: usize) -> (ParamStore<f64>, Linear) {
    let mut store = ParamStore::new();
    let p = Linear::init(&mut store, "proj", input, output, &mut rng(13)).unwrap();
    (store, p)
}

fn project_values(store: &ParamStore<f64>, p: &Linear, h: &[f64]) -> Vec<f64> {
    let mut g = Graph::new(store);
    let hv = g.constant(Tensor::vector(h.to_vec()).unwrap());
    let out = project(&mut g, p, hv).unwrap();
    g.value(out).data().to_vec()
}

#[test]
fn projection_examples() {
    let (mut store, p) = linear_store(2, 2);
    store.value_mut(p.weight).data_mut().copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
    assert_eq!(project_values(&store, &p, &[0.25, -3.0]), [0.25, -3.0]);

    store.value_mut(p.weight).data_mut().copy_from_slice(&[0.0; 4]);
    store.value_mut(p.bias).data_mut().copy_from_slice(&[0.5, 1.5]);
    assert_eq!(project_values(&store, &p, &[9.0, 9.0]), [0.5, 1.5]);

    store.value_mut(p.weight).data_mut().copy_from_slice(&[0.3, -0.2, 1.1, 0.7]);
    store.value_mut(p.bias).data_mut().copy_from_slice(&[0.1, -0.4]);
    let out = project_values(&store, &p, &[2.0, -1.0]);
    let expected = [0.3 * 2.0 + 0.2 + 0.1, 1.1 * 2.0 - 0.7 - 0.4];
    for (a, b) in out.iter().zip(expected) {
        assert!((a - b).abs() < 1e-15);
    }
}

fn text_global(store: &ParamStore<f64>, p: &Linear, rows: usize, words: &[f64], valid: usize) -> Result<Vec<f64>, Error> {
    let mut g = Graph::new(store);
    let w = g.constant(Tensor::matrix(rows, p.input_dim, words.to_vec()).unwrap());
    let out = encode_text_global(&mut g, p, w, valid)?;
    Ok(g.value(out).data().to_vec())
}

#[test]
fn text_global_examples() {
    let (mut store, p) = linear_store(3, 3);
    let eye = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0];
    store.value_mut(p.weight).data_mut().copy_from_slice(&eye);
    assert_eq!(text_global(&store, &p, 1, &[0.5, 1.0, -2.0], 1).unwrap(), [0.5, 1.0, -2.0]);

    let (store, p) = linear_store(3, 2);
    let one = text_global(&store, &p, 1, &[0.2, -0.4, 0.9], 1).unwrap();
    let two = text_global(&store, &p, 2, &[0.2, -0.4, 0.9, 0.2, -0.4, 0.9], 2).unwrap();
    for (a, b) in one.iter().zip(&two) {
        assert!((a - b).abs() < 1e-15);
    }

    let words = random_vec(&mut rng(14), 9);
    let out = text_global(&store, &p, 3, &words, 3).unwrap();
    let mean: Vec<f64> = (0..3).map(|c| (words[c] + words[3 + c] + words[6 + c]) / 3.0).collect();
    let w = store.value(p.weight).data();
    let b = store.value(p.bias).data();
    for r in 0..2 {
        let expected = b[r] + (0..3).map(|c| w[r * 3 + c] * mean[c]).sum::<f64>();
        assert!((out[r] - expected).abs() < 1e-12);
    }

    assert_eq!(text_global(&store, &p, 3, &words, 0), Err(Error::EmptyInput("encode_text_global")));
}

#[test]
fn initialization_follows_glorot_bounds() {
    let (store, p) = lstm_store(16, 32, 15);
    let bound = (6.0f64 / 48.0).sqrt();
    assert!(store.value(p.w[0]).data().iter().all(|v| v.abs() <= bound));
    assert!(store.value(p.b[1]).data().iter().all(|&v| v == 1.0));
    assert!(store.value(p.b[0]).data().iter().all(|&v| v == 0.0));
}
