//! Forward kernels on plain tensors. The graph records these and supplies
//! the matching backward rules.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use super::{Real, Tensor};
use crate::{Error, Result};

fn check_finite<T: Real>(op: &'static str, t: &Tensor<T>) -> Result<()> {
    if t.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidValue { op })
    }
}

fn map<T: Real>(op: &'static str, x: &Tensor<T>, f: impl Fn(T) -> T) -> Result<Tensor<T>> {
    check_finite(op, x)?;
    let out = Tensor::from_parts(x.shape().to_vec(), x.data().iter().map(|&v| f(v)).collect());
    check_finite(op, &out)?;
    Ok(out)
}

#[inline]
pub(crate) fn sigmoid_scalar<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp_libm())
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    map("sigmoid", x, sigmoid_scalar)
}

pub fn tanh<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    map("tanh", x, |v| v.tanh_libm())
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    map("relu", x, |v| if v > T::zero() { v } else { T::zero() })
}

/// Softmax over a vector, restricted to positions where `mask` is true.
/// Masked positions come out as exactly zero.
pub fn softmax<T: Real>(logits: &Tensor<T>, mask: Option<&[bool]>) -> Result<Tensor<T>> {
    let n = logits.len1("softmax")?;
    check_finite("softmax", logits)?;
    if let Some(m) = mask {
        if m.len() != n {
            return Err(Error::dim("softmax", format!("mask length {} vs {n}", m.len())));
        }
    }
    let valid = |i: usize| mask.is_none_or(|m| m[i]);
    let max = (0..n)
        .filter(|&i| valid(i))
        .map(|i| logits.data()[i])
        .fold(None, |acc: Option<T>, v| Some(acc.map_or(v, |a| a.max(v))))
        .ok_or(Error::EmptySupport)?;
    let mut out = vec![T::zero(); n];
    let mut total = T::zero();
    for (i, o) in out.iter_mut().enumerate() {
        if valid(i) {
            *o = (logits.data()[i] - max).exp_libm();
            total += *o;
        }
    }
    for o in &mut out {
        *o = *o / total;
    }
    Ok(Tensor::from_parts(vec![n], out))
}

fn same_shape<T: Real>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn zip<T: Real>(
    op: &'static str,
    a: &Tensor<T>,
    b: &Tensor<T>,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    same_shape(op, a, b)?;
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    let out = Tensor::from_parts(a.shape().to_vec(), data);
    check_finite(op, &out)?;
    Ok(out)
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip("add", a, b, |x, y| x + y)
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip("sub", a, b, |x, y| x - y)
}

pub fn hadamard<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    zip("hadamard", a, b, |x, y| x * y)
}

pub fn dot<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let n = a.len1("dot")?;
    if b.shape() != [n] {
        return Err(Error::dim("dot", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    let s = a.data().iter().zip(b.data()).map(|(&x, &y)| x * y).sum();
    let out = Tensor::scalar(s);
    check_finite("dot", &out)?;
    Ok(out)
}

/// Matrix product. A rank-1 left operand is a row vector, a rank-1 right
/// operand a column vector; the corresponding unit extent is dropped.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k, left_vec) = match a.shape() {
        [k] => (1, *k, true),
        [m, k] => (*m, *k, false),
        s => return Err(Error::dim("matmul", format!("left operand {s:?}"))),
    };
    let (k2, n, right_vec) = match b.shape() {
        [k] => (*k, 1, true),
        [k, n] => (*k, *n, false),
        s => return Err(Error::dim("matmul", format!("right operand {s:?}"))),
    };
    if k != k2 || (left_vec && right_vec) {
        return Err(Error::dim("matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &bd[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    let shape = match (left_vec, right_vec) {
        (true, false) => vec![n],
        (false, true) => vec![m],
        _ => vec![m, n],
    };
    let out = Tensor::from_parts(shape, out);
    check_finite("matmul", &out)?;
    Ok(out)
}

/// `a · bᵀ` for matrices `a: [m, k]`, `b: [n, k]`.
pub fn matmul_t<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2("matmul_t")?;
    let (n, k2) = b.dims2("matmul_t")?;
    if k != k2 {
        return Err(Error::dim("matmul_t", format!("{:?} x {:?}ᵀ", a.shape(), b.shape())));
    }
    let mut out = Vec::with_capacity(m * n);
    for i in 0..m {
        let arow = a.row(i);
        for j in 0..n {
            out.push(arow.iter().zip(b.row(j)).map(|(&x, &y)| x * y).sum());
        }
    }
    let out = Tensor::from_parts(vec![m, n], out);
    check_finite("matmul_t", &out)?;
    Ok(out)
}

/// Adds `bias: [c]` to every row of `m: [r, c]`.
pub fn add_row_bias<T: Real>(m: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = m.dims2("add_row_bias")?;
    if bias.shape() != [c] {
        return Err(Error::dim("add_row_bias", format!("{:?} + {:?}", m.shape(), bias.shape())));
    }
    let data = m
        .data()
        .chunks(c)
        .flat_map(|row| row.iter().zip(bias.data()).map(|(&x, &b)| x + b))
        .collect();
    let out = Tensor::from_parts(m.shape().to_vec(), data);
    check_finite("add_row_bias", &out)?;
    Ok(out)
}

/// Output length of a valid stride-1 convolution followed by non-overlapping
/// max pooling, or `None` when nothing survives.
pub fn conv_pool_len(len: usize, width: usize, pool: usize) -> Option<usize> {
    let conv = len.checked_sub(width)? + 1;
    match conv / pool {
        0 => None,
        n => Some(n),
    }
}

/// Valid 1-D convolution over time with stride 1.
///
/// `input: [len, in_ch]`, `kernel: [out_ch, in_ch, width]`, `bias: [out_ch]`,
/// result `[len - width + 1, out_ch]`.
pub fn conv1d<T: Real>(input: &Tensor<T>, kernel: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (len, cin) = input.dims2("conv1d")?;
    let (cout, kin, width) = match kernel.shape() {
        [o, i, w] => (*o, *i, *w),
        s => return Err(Error::dim("conv1d", format!("kernel shape {s:?}"))),
    };
    if kin != cin || bias.shape() != [cout] {
        return Err(Error::dim(
            "conv1d",
            format!("input {:?}, kernel {:?}, bias {:?}", input.shape(), kernel.shape(), bias.shape()),
        ));
    }
    if len < width {
        return Err(Error::TooShort { len, needed: width });
    }
    let out_len = len - width + 1;
    let (x, k) = (input.data(), kernel.data());
    let mut out = Vec::with_capacity(out_len * cout);
    for t in 0..out_len {
        for o in 0..cout {
            let mut acc = bias.data()[o];
            for c in 0..cin {
                let krow = &k[(o * cin + c) * width..(o * cin + c + 1) * width];
                for (j, &kv) in krow.iter().enumerate() {
                    acc += kv * x[(t + j) * cin + c];
                }
            }
            out.push(acc);
        }
    }
    let out = Tensor::from_parts(vec![out_len, cout], out);
    check_finite("conv1d", &out)?;
    Ok(out)
}

/// Non-overlapping temporal max pooling over rows of `x: [len, ch]`.
/// Returns the pooled tensor and, per output element, the source row.
pub fn max_pool1d<T: Real>(x: &Tensor<T>, width: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let (len, ch) = x.dims2("max_pool1d")?;
    if width == 0 {
        return Err(Error::dim("max_pool1d", "pool width 0"));
    }
    let out_len = len / width;
    if out_len == 0 {
        return Err(Error::TooShort { len, needed: width });
    }
    let mut out = Vec::with_capacity(out_len * ch);
    let mut arg = Vec::with_capacity(out_len * ch);
    for t in 0..out_len {
        for c in 0..ch {
            let mut best = t * width;
            for r in t * width + 1..(t + 1) * width {
                if x.data()[r * ch + c] > x.data()[best * ch + c] {
                    best = r;
                }
            }
            out.push(x.data()[best * ch + c]);
            arg.push(best);
        }
    }
    Ok((Tensor::from_parts(vec![out_len, ch], out), arg))
}
