//! Sequence encoders: LSTM, the temporal convolution block that turns word
//! vectors into text fragments, and affine projections.

use alloc::format;
use alloc::vec::Vec;

use rand::Rng;

use crate::numcore::ops::conv_pool_len;
use crate::{Error, Graph, ParamId, ParamStore, Real, Result, Tensor, Var};

pub const GATES: [&str; 4] = ["input", "forget", "output", "update"];
const INPUT: usize = 0;
const FORGET: usize = 1;
const OUTPUT: usize = 2;
const UPDATE: usize = 3;

/// Kernel count and width of each temporal convolution layer of the
/// full-size text network. Desk-scale runs use much smaller blocks.
pub const REFERENCE_CONV_LAYERS: [(usize, usize); 3] = [(384, 15), (512, 9), (256, 7)];

/// Uniform in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot<T: Real, R: Rng + ?Sized>(
    shape: &[usize],
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Tensor<T> {
    let bound = libm::sqrt(6.0 / (fan_in + fan_out) as f64);
    let mut t = Tensor::zeros(shape);
    for v in t.data_mut() {
        *v = T::of_f64(rng.random_range(-bound..bound));
    }
    t
}

fn lookup<T: Real>(store: &ParamStore<T>, name: &str, shape: &[usize]) -> Result<ParamId> {
    let id = store
        .id(name)
        .ok_or_else(|| Error::contract(format!("missing parameter {name:?}")))?;
    if store.value(id).shape() != shape {
        return Err(Error::dim(
            "parameter",
            format!("{name}: expected {shape:?}, found {:?}", store.value(id).shape()),
        ));
    }
    Ok(id)
}

fn shape_of<T: Real>(store: &ParamStore<T>, name: &str) -> Result<Vec<usize>> {
    store
        .id(name)
        .map(|id| store.value(id).shape().to_vec())
        .ok_or_else(|| Error::contract(format!("missing parameter {name:?}")))
}

/// Per-gate `W` (hidden × input), `U` (hidden × hidden) and bias, gates
/// ordered as [`GATES`].
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams {
    pub w: [ParamId; 4],
    pub u: [ParamId; 4],
    pub b: [ParamId; 4],
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmParams {
    /// Glorot weights, zero biases, forget-gate bias 1.
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        hidden_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if input_dim == 0 || hidden_dim == 0 {
            return Err(Error::dim("lstm", "zero width"));
        }
        let mut w = [ParamId(0); 4];
        let mut u = [ParamId(0); 4];
        let mut b = [ParamId(0); 4];
        for (k, gate) in GATES.iter().enumerate() {
            w[k] = store.insert(
                &format!("{prefix}.w_{gate}"),
                glorot(&[hidden_dim, input_dim], input_dim, hidden_dim, rng),
            )?;
            u[k] = store.insert(
                &format!("{prefix}.u_{gate}"),
                glorot(&[hidden_dim, hidden_dim], hidden_dim, hidden_dim, rng),
            )?;
            let mut bias = Tensor::zeros(&[hidden_dim]);
            if k == FORGET {
                bias.data_mut().iter_mut().for_each(|v| *v = T::one());
            }
            b[k] = store.insert(&format!("{prefix}.b_{gate}"), bias)?;
        }
        Ok(Self {
            w,
            u,
            b,
            input_dim,
            hidden_dim,
        })
    }

    pub fn from_store<T: Real>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let (hidden_dim, input_dim) = match shape_of(store, &format!("{prefix}.w_input"))?[..] {
            [h, i] => (h, i),
            ref s => return Err(Error::dim("lstm", format!("w_input shape {s:?}"))),
        };
        let mut w = [ParamId(0); 4];
        let mut u = [ParamId(0); 4];
        let mut b = [ParamId(0); 4];
        for (k, gate) in GATES.iter().enumerate() {
            w[k] = lookup(store, &format!("{prefix}.w_{gate}"), &[hidden_dim, input_dim])?;
            u[k] = lookup(store, &format!("{prefix}.u_{gate}"), &[hidden_dim, hidden_dim])?;
            b[k] = lookup(store, &format!("{prefix}.b_{gate}"), &[hidden_dim])?;
        }
        Ok(Self {
            w,
            u,
            b,
            input_dim,
            hidden_dim,
        })
    }
}

/// Gate activations and cell/hidden update from per-gate input terms
/// (`W x + b` already applied). `None` state means the zero state.
fn cell_update<T: Real>(
    g: &mut Graph<'_, T>,
    p: &LstmParams,
    input_terms: [Var; 4],
    state: Option<(Var, Var)>,
) -> Result<(Var, Var)> {
    let mut pre = input_terms;
    if let Some((h_prev, _)) = state {
        for k in 0..4 {
            let u = g.param(p.u[k]);
            let uh = g.matmul(u, h_prev)?;
            pre[k] = g.add(pre[k], uh)?;
        }
    }
    let input = g.sigmoid(pre[INPUT])?;
    let forget = g.sigmoid(pre[FORGET])?;
    let output = g.sigmoid(pre[OUTPUT])?;
    let update = g.tanh(pre[UPDATE])?;
    let mut c = g.hadamard(update, input)?;
    if let Some((_, c_prev)) = state {
        let kept = g.hadamard(c_prev, forget)?;
        c = g.add(c, kept)?;
    }
    let tc = g.tanh(c)?;
    let h = g.hadamard(output, tc)?;
    Ok((h, c))
}

/// One LSTM update:
/// `c = u ⊙ i + c_prev ⊙ f`, `h = o ⊙ tanh(c)` with sigmoid gates `i, f, o`
/// and `tanh` candidate `u`.
pub fn lstm_step<T: Real>(
    g: &mut Graph<'_, T>,
    p: &LstmParams,
    x: Var,
    h_prev: Var,
    c_prev: Var,
) -> Result<(Var, Var)> {
    let x_len = g.value(x).len1("lstm_step")?;
    if x_len != p.input_dim
        || g.value(h_prev).shape() != [p.hidden_dim]
        || g.value(c_prev).shape() != [p.hidden_dim]
    {
        return Err(Error::dim(
            "lstm_step",
            format!("input {x_len}, expected {} / hidden {}", p.input_dim, p.hidden_dim),
        ));
    }
    let mut terms = [x; 4];
    for k in 0..4 {
        let w = g.param(p.w[k]);
        let b = g.param(p.b[k]);
        let wx = g.matmul(w, x)?;
        terms[k] = g.add(wx, b)?;
    }
    cell_update(g, p, terms, Some((h_prev, c_prev)))
}

/// Runs the LSTM over the rows of `seq: [n, input]` from the zero state and
/// returns the hidden states as `[n, hidden]`.
pub fn lstm_sequence<T: Real>(g: &mut Graph<'_, T>, p: &LstmParams, seq: Var) -> Result<Var> {
    let (n, width) = g.value(seq).dims2("lstm_sequence")?;
    if width != p.input_dim {
        return Err(Error::dim(
            "lstm_sequence",
            format!("input width {width}, expected {}", p.input_dim),
        ));
    }
    if n == 0 {
        return Err(Error::EmptyInput("lstm_sequence"));
    }
    let mut projected = [seq; 4];
    for k in 0..4 {
        let w = g.param(p.w[k]);
        let b = g.param(p.b[k]);
        let xw = g.matmul_t(seq, w)?;
        projected[k] = g.add_row_bias(xw, b)?;
    }
    let mut state = None;
    let mut hs = Vec::with_capacity(n);
    for t in 0..n {
        let mut terms = projected;
        for k in 0..4 {
            terms[k] = g.row(projected[k], t)?;
        }
        let (h, c) = cell_update(g, p, terms, state)?;
        hs.push(h);
        state = Some((h, c));
    }
    g.stack_rows(&hs)
}

/// LSTM units in series; each unit consumes the previous unit's hidden states.
pub fn lstm_stack<T: Real>(g: &mut Graph<'_, T>, layers: &[LstmParams], seq: Var) -> Result<Var> {
    let mut x = seq;
    for layer in layers {
        x = lstm_sequence(g, layer, x)?;
    }
    Ok(x)
}

/// Kernel count, kernel width and max-pool width of one temporal
/// convolution layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvLayerSpec {
    pub channels: usize,
    pub width: usize,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    /// `[out_channels, in_channels, width]`
    pub kernel: ParamId,
    pub bias: ParamId,
    pub pool: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams {
    pub layers: Vec<ConvLayer>,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl ConvBlockParams {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        specs: &[ConvLayerSpec],
        rng: &mut R,
    ) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::EmptyInput("conv block"));
        }
        let mut layers = Vec::with_capacity(specs.len());
        let mut cin = input_dim;
        for (l, s) in specs.iter().enumerate() {
            if s.channels == 0 || s.width == 0 || s.pool == 0 {
                return Err(Error::dim("conv block", format!("layer {l}: {s:?}")));
            }
            let kernel = store.insert(
                &format!("{prefix}.{l}.kernel"),
                glorot(&[s.channels, cin, s.width], cin * s.width, s.channels * s.width, rng),
            )?;
            let bias = store.insert(&format!("{prefix}.{l}.bias"), Tensor::zeros(&[s.channels]))?;
            layers.push(ConvLayer {
                kernel,
                bias,
                pool: s.pool,
            });
            cin = s.channels;
        }
        Ok(Self {
            layers,
            input_dim,
            output_dim: cin,
        })
    }

    pub fn from_store<T: Real>(store: &ParamStore<T>, prefix: &str, pools: &[usize]) -> Result<Self> {
        let mut layers = Vec::with_capacity(pools.len());
        let mut input_dim = 0;
        let mut cin = 0;
        for (l, &pool) in pools.iter().enumerate() {
            let name = format!("{prefix}.{l}.kernel");
            let (cout, kin, width) = match shape_of(store, &name)?[..] {
                [o, i, w] => (o, i, w),
                ref s => return Err(Error::dim("conv block", format!("{name} shape {s:?}"))),
            };
            if l == 0 {
                input_dim = kin;
            } else if kin != cin {
                return Err(Error::dim("conv block", format!("layer {l} expects {kin} channels, gets {cin}")));
            }
            let kernel = lookup(store, &name, &[cout, kin, width])?;
            let bias = lookup(store, &format!("{prefix}.{l}.bias"), &[cout])?;
            layers.push(ConvLayer { kernel, bias, pool });
            cin = cout;
        }
        if layers.is_empty() {
            return Err(Error::EmptyInput("conv block"));
        }
        Ok(Self {
            layers,
            input_dim,
            output_dim: cin,
        })
    }

    pub fn specs<T: Real>(&self, store: &ParamStore<T>) -> Vec<ConvLayerSpec> {
        self.layers
            .iter()
            .map(|l| {
                let s = store.value(l.kernel).shape();
                ConvLayerSpec {
                    channels: s[0],
                    width: s[2],
                    pool: l.pool,
                }
            })
            .collect()
    }
}

/// Number of fragments a block emits for `len` input words.
pub fn conv_output_len(len: usize, specs: &[ConvLayerSpec]) -> Option<usize> {
    specs
        .iter()
        .try_fold(len, |n, s| conv_pool_len(n, s.width, s.pool))
}

/// Smallest input length for which every layer still has output.
pub fn min_conv_input_len(specs: &[ConvLayerSpec]) -> usize {
    specs
        .iter()
        .rev()
        .fold(1, |need, s| need * s.pool + s.width - 1)
}

/// Convolution, ReLU and temporal max-pooling per layer over `words: [m, k]`;
/// the output rows are the text fragments.
pub fn temporal_conv_block<T: Real>(g: &mut Graph<'_, T>, p: &ConvBlockParams, words: Var) -> Result<Var> {
    let (len, _) = g.value(words).dims2("temporal_conv_block")?;
    let specs = p.specs(g.store());
    if conv_output_len(len, &specs).is_none() {
        return Err(Error::TooShort {
            len,
            needed: min_conv_input_len(&specs),
        });
    }
    let mut x = words;
    for layer in &p.layers {
        let k = g.param(layer.kernel);
        let b = g.param(layer.bias);
        let conv = g.conv1d(x, k, b)?;
        let act = g.relu(conv)?;
        x = g.max_pool1d(act, layer.pool)?;
    }
    Ok(x)
}

/// Affine layer `W h + b` with `W: [out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    pub fn init<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        prefix: &str,
        input_dim: usize,
        output_dim: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.insert(
            &format!("{prefix}.weight"),
            glorot(&[output_dim, input_dim], input_dim, output_dim, rng),
        )?;
        let bias = store.insert(&format!("{prefix}.bias"), Tensor::zeros(&[output_dim]))?;
        Ok(Self {
            weight,
            bias,
            input_dim,
            output_dim,
        })
    }

    pub fn from_store<T: Real>(store: &ParamStore<T>, prefix: &str) -> Result<Self> {
        let name = format!("{prefix}.weight");
        let (output_dim, input_dim) = match shape_of(store, &name)?[..] {
            [o, i] => (o, i),
            ref s => return Err(Error::dim("linear", format!("{name} shape {s:?}"))),
        };
        Ok(Self {
            weight: lookup(store, &name, &[output_dim, input_dim])?,
            bias: lookup(store, &format!("{prefix}.bias"), &[output_dim])?,
            input_dim,
            output_dim,
        })
    }
}

/// `W h + b`, no nonlinearity.
pub fn project<T: Real>(g: &mut Graph<'_, T>, p: &Linear, h: Var) -> Result<Var> {
    let w = g.param(p.weight);
    let b = g.param(p.bias);
    let wh = g.matmul(w, h)?;
    g.add(wh, b)
}

/// [`project`] applied to every row of `hs: [n, in]`.
pub fn project_rows<T: Real>(g: &mut Graph<'_, T>, p: &Linear, hs: Var) -> Result<Var> {
    let w = g.param(p.weight);
    let b = g.param(p.bias);
    let wh = g.matmul_t(hs, w)?;
    g.add_row_bias(wh, b)
}

/// Global text vector: mean of the first `valid_len` word vectors, then
/// projected.
pub fn encode_text_global<T: Real>(
    g: &mut Graph<'_, T>,
    p: &Linear,
    words: Var,
    valid_len: usize,
) -> Result<Var> {
    if valid_len == 0 {
        return Err(Error::EmptyInput("encode_text_global"));
    }
    let mean = g.mean_rows(words, valid_len)?;
    project(g, p, mean)
}
