use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{ops, ParamId, ParamStore, Real, Tensor};
use crate::{Error, Result};

/// Handle to a node recorded on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct Var(usize);

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Param(ParamId),
    Add(Var, Var),
    Sub(Var, Var),
    Hadamard(Var, Var),
    Scale(Var, T),
    Offset(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    Dot(Var, Var),
    MatMul(Var, Var),
    MatMulT(Var, Var),
    AddRowBias(Var, Var),
    Row(Var, usize),
    StackRows(Vec<Var>),
    MeanRows(Var, usize),
    ScaleRows(Var, Var),
    AddN(Vec<Var>),
    Conv1d(Var, Var, Var),
    MaxPool(Var, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// A recorded computation over the parameters of one [`ParamStore`].
///
/// Nodes are appended in evaluation order, so creation order is a
/// topological order and [`Graph::backward`] simply walks it in reverse.
pub struct Graph<'s, T> {
    store: &'s ParamStore<T>,
    nodes: Vec<Node<T>>,
    bound: Vec<Option<Var>>,
}

/// Per-parameter gradients produced by [`Graph::backward`], indexed by
/// [`ParamId`]. Parameters the output does not depend on hold zeros.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    grads: Vec<Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.grads[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.grads[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Tensor<T>)> {
        self.grads.iter().enumerate().map(|(i, g)| (ParamId(i), g))
    }
}

fn add_into<T: Real>(slot: &mut Option<Vec<T>>, len: usize, f: impl FnOnce(&mut [T])) {
    let buf = slot.get_or_insert_with(|| vec![T::zero(); len]);
    f(buf);
}

impl<'s, T: Real> Graph<'s, T> {
    pub fn new(store: &'s ParamStore<T>) -> Self {
        Self {
            store,
            nodes: Vec::new(),
            bound: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'s ParamStore<T> {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Constant)
    }

    pub fn scalar(&mut self, v: T) -> Var {
        self.constant(Tensor::scalar(v))
    }

    /// Binds a parameter. Repeated binds of the same id return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let v = self.push(self.store.value(id).clone(), Op::Param(id));
        self.bound[id.0] = Some(v);
        v
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Sub(a, b)))
    }

    pub fn hadamard(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::hadamard(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Hadamard(a, b)))
    }

    pub fn scale(&mut self, a: Var, k: T) -> Result<Var> {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v * k).collect())
            .map_err(|_| Error::InvalidValue { op: "scale" })?;
        Ok(self.push(out, Op::Scale(a, k)))
    }

    /// Adds a constant to every element.
    pub fn offset(&mut self, a: Var, k: T) -> Result<Var> {
        let x = self.value(a);
        let out = Tensor::new(x.shape().to_vec(), x.data().iter().map(|&v| v + k).collect())
            .map_err(|_| Error::InvalidValue { op: "offset" })?;
        Ok(self.push(out, Op::Offset(a)))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = ops::sigmoid(self.value(a))?;
        Ok(self.push(out, Op::Sigmoid(a)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let out = ops::tanh(self.value(a))?;
        Ok(self.push(out, Op::Tanh(a)))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = ops::relu(self.value(a))?;
        Ok(self.push(out, Op::Relu(a)))
    }

    pub fn softmax(&mut self, a: Var, mask: Option<&[bool]>) -> Result<Var> {
        let out = ops::softmax(self.value(a), mask)?;
        Ok(self.push(out, Op::Softmax(a)))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::dot(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::Dot(a, b)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMul(a, b)))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = ops::matmul_t(self.value(a), self.value(b))?;
        Ok(self.push(out, Op::MatMulT(a, b)))
    }

    pub fn add_row_bias(&mut self, m: Var, b: Var) -> Result<Var> {
        let out = ops::add_row_bias(self.value(m), self.value(b))?;
        Ok(self.push(out, Op::AddRowBias(m, b)))
    }

    pub fn row(&mut self, m: Var, i: usize) -> Result<Var> {
        let x = self.value(m);
        let (r, c) = x.dims2("row")?;
        if i >= r {
            return Err(Error::dim("row", format!("row {i} of {r}")));
        }
        let out = Tensor::from_parts(vec![c], x.row(i).to_vec());
        Ok(self.push(out, Op::Row(m, i)))
    }

    /// Stacks equal-length vectors into a `[n, d]` matrix.
    pub fn stack_rows(&mut self, rows: &[Var]) -> Result<Var> {
        let first = rows.first().ok_or(Error::EmptyInput("stack_rows"))?;
        let d = self.value(*first).len1("stack_rows")?;
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            let x = self.value(r);
            if x.shape() != [d] {
                return Err(Error::dim("stack_rows", format!("{:?} vs [{d}]", x.shape())));
            }
            data.extend_from_slice(x.data());
        }
        let out = Tensor::from_parts(vec![rows.len(), d], data);
        Ok(self.push(out, Op::StackRows(rows.to_vec())))
    }

    /// Mean of the first `count` rows of a matrix.
    pub fn mean_rows(&mut self, m: Var, count: usize) -> Result<Var> {
        let x = self.value(m);
        let (r, c) = x.dims2("mean_rows")?;
        if count == 0 || count > r {
            return Err(Error::dim("mean_rows", format!("{count} of {r} rows")));
        }
        let inv = T::one() / T::of_f64(count as f64);
        let mut out = vec![T::zero(); c];
        for i in 0..count {
            for (o, &v) in out.iter_mut().zip(x.row(i)) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o = *o * inv);
        let out = Tensor::from_parts(vec![c], out);
        Ok(self.push(out, Op::MeanRows(m, count)))
    }

    /// Multiplies row `j` of `m: [n, d]` by `w[j]`.
    pub fn scale_rows(&mut self, m: Var, w: Var) -> Result<Var> {
        let (x, wv) = (self.value(m), self.value(w));
        let (r, c) = x.dims2("scale_rows")?;
        if wv.shape() != [r] {
            return Err(Error::dim("scale_rows", format!("{:?} by {:?}", x.shape(), wv.shape())));
        }
        let data = x
            .data()
            .chunks(c)
            .zip(wv.data())
            .flat_map(|(row, &k)| row.iter().map(move |&v| v * k))
            .collect();
        let out = Tensor::from_parts(vec![r, c], data);
        Ok(self.push(out, Op::ScaleRows(m, w)))
    }

    /// Elementwise sum of equally shaped nodes.
    pub fn add_n(&mut self, xs: &[Var]) -> Result<Var> {
        let first = *xs.first().ok_or(Error::EmptyInput("add_n"))?;
        let shape = self.value(first).shape().to_vec();
        let mut acc = vec![T::zero(); self.value(first).numel()];
        for &x in xs {
            let t = self.value(x);
            if t.shape() != shape.as_slice() {
                return Err(Error::dim("add_n", format!("{:?} vs {shape:?}", t.shape())));
            }
            for (a, &v) in acc.iter_mut().zip(t.data()) {
                *a += v;
            }
        }
        let out = Tensor::new(shape, acc).map_err(|_| Error::InvalidValue { op: "add_n" })?;
        Ok(self.push(out, Op::AddN(xs.to_vec())))
    }

    pub fn conv1d(&mut self, x: Var, kernel: Var, bias: Var) -> Result<Var> {
        let out = ops::conv1d(self.value(x), self.value(kernel), self.value(bias))?;
        Ok(self.push(out, Op::Conv1d(x, kernel, bias)))
    }

    pub fn max_pool1d(&mut self, x: Var, width: usize) -> Result<Var> {
        let (out, arg) = ops::max_pool1d(self.value(x), width)?;
        Ok(self.push(out, Op::MaxPool(x, arg)))
    }

    /// Reverse-mode gradients of the scalar `output` with respect to every
    /// parameter of the store.
    pub fn backward(&self, output: Var) -> Result<Gradients<T>> {
        let out_val = self.value(output);
        if out_val.numel() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar output, got shape {:?}",
                out_val.shape()
            )));
        }
        let mut grads = Gradients {
            grads: (0..self.store.len())
                .map(|i| Tensor::zeros(self.store.value(ParamId(i)).shape()))
                .collect(),
        };
        let mut adj: Vec<Option<Vec<T>>> = vec![None; output.0 + 1];
        adj[output.0] = Some(vec![T::one()]);

        for idx in (0..=output.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = node.value.data();
            let len = |v: Var| self.nodes[v.0].value.numel();
            let val = |v: Var| self.nodes[v.0].value.data();
            match &node.op {
                Op::Constant => {}
                Op::Param(id) => {
                    for (a, &b) in grads.grads[id.0].data_mut().iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::Add(a, b) => {
                    add_into(&mut adj[a.0], g.len(), |d| d.iter_mut().zip(&g).for_each(|(d, &g)| *d += g));
                    add_into(&mut adj[b.0], g.len(), |d| d.iter_mut().zip(&g).for_each(|(d, &g)| *d += g));
                }
                Op::Sub(a, b) => {
                    add_into(&mut adj[a.0], g.len(), |d| d.iter_mut().zip(&g).for_each(|(d, &g)| *d += g));
                    add_into(&mut adj[b.0], g.len(), |d| d.iter_mut().zip(&g).for_each(|(d, &g)| *d -= g));
                }
                Op::Hadamard(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    add_into(&mut adj[a.0], g.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * bv[i];
                        }
                    });
                    add_into(&mut adj[b.0], g.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * av[i];
                        }
                    });
                }
                Op::Scale(a, k) => {
                    add_into(&mut adj[a.0], g.len(), |d| d.iter_mut().zip(&g).for_each(|(d, &g)| *d += g * *k));
                }
                Op::Offset(a) => {
                    add_into(&mut adj[a.0], g.len(), |d| d.iter_mut().zip(&g).for_each(|(d, &g)| *d += g));
                }
                Op::Sigmoid(a) => {
                    add_into(&mut adj[a.0], g.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * y[i] * (T::one() - y[i]);
                        }
                    });
                }
                Op::Tanh(a) => {
                    add_into(&mut adj[a.0], g.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += g[i] * (T::one() - y[i] * y[i]);
                        }
                    });
                }
                Op::Relu(a) => {
                    let x = val(*a);
                    add_into(&mut adj[a.0], g.len(), |d| {
                        for i in 0..d.len() {
                            if x[i] > T::zero() {
                                d[i] += g[i];
                            }
                        }
                    });
                }
                Op::Softmax(a) => {
                    let s: T = g.iter().zip(y).map(|(&g, &y)| g * y).sum();
                    add_into(&mut adj[a.0], g.len(), |d| {
                        for i in 0..d.len() {
                            d[i] += y[i] * (g[i] - s);
                        }
                    });
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let g0 = g[0];
                    add_into(&mut adj[a.0], av.len(), |d| d.iter_mut().zip(bv).for_each(|(d, &b)| *d += g0 * b));
                    add_into(&mut adj[b.0], bv.len(), |d| d.iter_mut().zip(av).for_each(|(d, &a)| *d += g0 * a));
                }
                Op::MatMul(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let (m, k) = (av.len() / inner_dim(&self.nodes[a.0].value), inner_dim(&self.nodes[a.0].value));
                    let n = bv.len() / k;
                    add_into(&mut adj[a.0], av.len(), |d| {
                        for i in 0..m {
                            for p in 0..k {
                                let mut acc = T::zero();
                                for j in 0..n {
                                    acc += g[i * n + j] * bv[p * n + j];
                                }
                                d[i * k + p] += acc;
                            }
                        }
                    });
                    add_into(&mut adj[b.0], bv.len(), |d| {
                        for i in 0..m {
                            for p in 0..k {
                                let a_ip = av[i * k + p];
                                let drow = &mut d[p * n..(p + 1) * n];
                                for (dv, &gv) in drow.iter_mut().zip(&g[i * n..(i + 1) * n]) {
                                    *dv += a_ip * gv;
                                }
                            }
                        }
                    });
                }
                Op::MatMulT(a, b) => {
                    let (av, bv) = (val(*a), val(*b));
                    let k = inner_dim(&self.nodes[a.0].value);
                    let (m, n) = (av.len() / k, bv.len() / k);
                    add_into(&mut adj[a.0], av.len(), |d| {
                        for i in 0..m {
                            let drow = &mut d[i * k..(i + 1) * k];
                            for j in 0..n {
                                let gv = g[i * n + j];
                                for (dv, &b) in drow.iter_mut().zip(&bv[j * k..(j + 1) * k]) {
                                    *dv += gv * b;
                                }
                            }
                        }
                    });
                    add_into(&mut adj[b.0], bv.len(), |d| {
                        for i in 0..m {
                            let arow = &av[i * k..(i + 1) * k];
                            for j in 0..n {
                                let gv = g[i * n + j];
                                for (dv, &a) in d[j * k..(j + 1) * k].iter_mut().zip(arow) {
                                    *dv += gv * a;
                                }
                            }
                        }
                    });
                }
                Op::AddRowBias(m, b) => {
                    let c = len(*b);
                    add_into(&mut adj[m.0], g.len(), |d| d.iter_mut().zip(&g).for_each(|(d, &g)| *d += g));
                    add_into(&mut adj[b.0], c, |d| {
                        for row in g.chunks(c) {
                            d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                        }
                    });
                }
                Op::Row(m, i) => {
                    let c = g.len();
                    add_into(&mut adj[m.0], len(*m), |d| {
                        d[i * c..(i + 1) * c].iter_mut().zip(&g).for_each(|(d, &g)| *d += g);
                    });
                }
                Op::StackRows(rows) => {
                    let c = g.len() / rows.len();
                    for (r, v) in rows.iter().enumerate() {
                        add_into(&mut adj[v.0], c, |d| {
                            d.iter_mut().zip(&g[r * c..(r + 1) * c]).for_each(|(d, &g)| *d += g);
                        });
                    }
                }
                Op::MeanRows(m, count) => {
                    let c = g.len();
                    let inv = T::one() / T::of_f64(*count as f64);
                    add_into(&mut adj[m.0], len(*m), |d| {
                        for r in 0..*count {
                            d[r * c..(r + 1) * c].iter_mut().zip(&g).for_each(|(d, &g)| *d += g * inv);
                        }
                    });
                }
                Op::ScaleRows(m, w) => {
                    let (mv, wv) = (val(*m), val(*w));
                    let c = mv.len() / wv.len();
                    add_into(&mut adj[m.0], mv.len(), |d| {
                        for (r, &k) in wv.iter().enumerate() {
                            for j in r * c..(r + 1) * c {
                                d[j] += g[j] * k;
                            }
                        }
                    });
                    add_into(&mut adj[w.0], wv.len(), |d| {
                        for (r, dv) in d.iter_mut().enumerate() {
                            *dv += (r * c..(r + 1) * c).map(|j| g[j] * mv[j]).sum::<T>();
                        }
                    });
                }
                Op::AddN(xs) => {
                    for x in xs {
                        add_into(&mut adj[x.0], g.len(), |d| d.iter_mut().zip(&g).for_each(|(d, &g)| *d += g));
                    }
                }
                Op::Conv1d(x, kernel, bias) => {
                    let (xv, kv) = (val(*x), val(*kernel));
                    let (cout, cin, width) = match self.nodes[kernel.0].value.shape() {
                        [o, i, w] => (*o, *i, *w),
                        _ => unreachable!("conv kernel rank checked in forward"),
                    };
                    let out_len = g.len() / cout;
                    add_into(&mut adj[bias.0], cout, |d| {
                        for row in g.chunks(cout) {
                            d.iter_mut().zip(row).for_each(|(d, &g)| *d += g);
                        }
                    });
                    add_into(&mut adj[kernel.0], kv.len(), |d| {
                        for t in 0..out_len {
                            for o in 0..cout {
                                let gv = g[t * cout + o];
                                for c in 0..cin {
                                    let base = (o * cin + c) * width;
                                    for j in 0..width {
                                        d[base + j] += gv * xv[(t + j) * cin + c];
                                    }
                                }
                            }
                        }
                    });
                    add_into(&mut adj[x.0], xv.len(), |d| {
                        for t in 0..out_len {
                            for o in 0..cout {
                                let gv = g[t * cout + o];
                                for c in 0..cin {
                                    let base = (o * cin + c) * width;
                                    for j in 0..width {
                                        d[(t + j) * cin + c] += gv * kv[base + j];
                                    }
                                }
                            }
                        }
                    });
                }
                Op::MaxPool(x, arg) => {
                    let ch = inner_dim(&self.nodes[x.0].value);
                    add_into(&mut adj[x.0], len(*x), |d| {
                        for (idx, (&src, &gv)) in arg.iter().zip(&g).enumerate() {
                            d[src * ch + idx % ch] += gv;
                        }
                    });
                }
            }
        }
        Ok(grads)
    }
}

/// Last extent of a tensor; 1-D tensors are treated as a single row.
fn inner_dim<T: Real>(t: &Tensor<T>) -> usize {
    *t.shape().last().unwrap_or(&1)
}
