use serde::{Deserialize, Serialize};

use super::Tensor;
use crate::error::{Error, Result};

/// Boolean array used to mask softmax slices.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoolTensor {
    shape: Vec<usize>,
    data: Vec<bool>,
}

impl BoolTensor {
    pub fn new(shape: Vec<usize>, data: Vec<bool>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(format!(
                "mask shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(BoolTensor { shape, data })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }
}

/// Computes `c = a · b` for row/column-strided operands.
///
/// Strides are in elements. `c` is overwritten.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    (rsa, csa): (usize, usize),
    b: &[f32],
    (rsb, csb): (usize, usize),
    c: &mut [f32],
    (rsc, csc): (usize, usize),
) {
    if m == 0 || n == 0 {
        return;
    }
    let last = |rows: usize, cols: usize, rs: usize, cs: usize| (rows - 1) * rs + (cols - 1) * cs;
    assert!(c.len() > last(m, n, rsc, csc), "gemm: c too small");
    if k == 0 {
        for i in 0..m {
            for j in 0..n {
                c[i * rsc + j * csc] = 0.0;
            }
        }
        return;
    }
    assert!(a.len() > last(m, k, rsa, csa), "gemm: a too small");
    assert!(b.len() > last(k, n, rsb, csb), "gemm: b too small");
    // SAFETY: every index touched by sgemm is bounded by the asserts above,
    // and `c` is exclusively borrowed.
    unsafe {
        matrixmultiply::sgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa as isize,
            csa as isize,
            b.as_ptr(),
            rsb as isize,
            csb as isize,
            0.0,
            c.as_mut_ptr(),
            rsc as isize,
            csc as isize,
        );
    }
}

/// Row-major `[m×k]·[k×n]` on raw slices.
pub(crate) fn matmul_raw(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
    let mut c = vec![0.0; m * n];
    gemm(m, k, n, a, (k, 1), b, (n, 1), &mut c, (n, 1));
    c
}

/// Standard matrix product of two rank-2 tensors.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let [m, k] = a.dims2()?;
    let [k2, n] = b.dims2()?;
    if k != k2 {
        return Err(Error::dim(format!(
            "matmul inner dimensions {:?} · {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Tensor::new(vec![m, n], matmul_raw(a.data(), b.data(), m, k, n))
}

/// Softmax along `axis`, optionally masked.
///
/// `mask` must broadcast to `x` (each mask dimension equals the matching
/// dimension of `x` or is 1). Masked entries come out as exactly zero.
pub fn softmax(x: &Tensor, axis: usize, mask: Option<&BoolTensor>) -> Result<Tensor> {
    let shape = x.shape();
    if axis >= shape.len() {
        return Err(Error::dim(format!("softmax axis {axis} for shape {shape:?}")));
    }
    let mask_strides = match mask {
        Some(m) => Some(broadcast_strides(m.shape(), shape)?),
        None => None,
    };
    let outer: usize = shape[..axis].iter().product();
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let mut out = vec![0.0f32; x.len()];
    let mut keep = vec![true; len];
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            if let (Some(m), Some(strides)) = (mask, &mask_strides) {
                for (t, k) in keep.iter_mut().enumerate() {
                    let flat = base + t * inner;
                    *k = m.data[mask_offset(flat, shape, strides)];
                }
            }
            let max = (0..len)
                .filter(|&t| keep[t])
                .map(|t| x.data()[base + t * inner])
                .fold(f32::NEG_INFINITY, f32::max);
            if max == f32::NEG_INFINITY {
                return Err(Error::DegenerateSlice);
            }
            let mut sum = 0.0f32;
            for t in 0..len {
                if keep[t] {
                    let e = (x.data()[base + t * inner] - max).exp();
                    out[base + t * inner] = e;
                    sum += e;
                }
            }
            for t in 0..len {
                out[base + t * inner] /= sum;
            }
        }
    }
    Tensor::new(shape.to_vec(), out)
}

fn broadcast_strides(mask: &[usize], target: &[usize]) -> Result<Vec<usize>> {
    if mask.len() != target.len()
        || mask.iter().zip(target).any(|(&m, &t)| m != t && m != 1)
    {
        return Err(Error::dim(format!(
            "mask shape {mask:?} does not broadcast to {target:?}"
        )));
    }
    let mut strides = vec![0; mask.len()];
    let mut acc = 1;
    for d in (0..mask.len()).rev() {
        strides[d] = if mask[d] == 1 { 0 } else { acc };
        acc *= mask[d];
    }
    Ok(strides)
}

fn mask_offset(mut flat: usize, shape: &[usize], strides: &[usize]) -> usize {
    let mut off = 0;
    for d in (0..shape.len()).rev() {
        off += (flat % shape[d]) * strides[d];
        flat /= shape[d];
    }
    off
}

/// In-place stable softmax of one slice; entries with `keep == false` become 0.
///
/// Returns `false` when the slice is fully masked.
pub(crate) fn softmax_slice(values: &mut [f32], keep: impl Fn(usize) -> bool) -> bool {
    let max = values
        .iter()
        .enumerate()
        .filter(|&(i, _)| keep(i))
        .map(|(_, &v)| v)
        .fold(f32::NEG_INFINITY, f32::max);
    if max == f32::NEG_INFINITY {
        return false;
    }
    let mut sum = 0.0;
    for (i, v) in values.iter_mut().enumerate() {
        if keep(i) {
            *v = (*v - max).exp();
            sum += *v;
        } else {
            *v = 0.0;
        }
    }
    for v in values.iter_mut() {
        *v /= sum;
    }
    true
}

/// Layer normalization over the last axis.
pub fn layernorm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f32) -> Result<Tensor> {
    let c = x.last_dim();
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(Error::dim(format!(
            "layernorm over {c} channels with gamma {:?}, beta {:?}",
            gamma.shape(),
            beta.shape()
        )));
    }
    let mut out = x.clone();
    for row in out.data_mut().chunks_exact_mut(c) {
        let mean = row.iter().sum::<f32>() / c as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / c as f32;
        let inv = 1.0 / (var + eps).sqrt();
        for ((v, g), b) in row.iter_mut().zip(gamma.data()).zip(beta.data()) {
            *v = (*v - mean) * inv * g + b;
        }
    }
    Ok(out)
}

/// Bilinear sample of an `H×W×C` grid at fractional `(xs, ys)`.
///
/// `xs` indexes the first (H) axis and `ys` the second (W) axis, with cell
/// `(i, j)` sitting at integer coordinate `(i, j)`. Neighbours outside the grid
/// contribute zero. The flag is false when no neighbour carrying nonzero
/// weight lies inside the grid.
pub fn bilinear_sample(src: &Tensor, xs: f64, ys: f64) -> Result<(Vec<f32>, bool)> {
    let [h, w, c] = src.dims3()?;
    let mut out = vec![0.0f32; c];
    let in_bounds = bilinear_accumulate(src.data(), h, w, c, xs, ys, &mut out);
    Ok((out, in_bounds))
}

/// Accumulating form of [`bilinear_sample`]; `out` must be zeroed.
pub(crate) fn bilinear_accumulate(
    data: &[f32],
    h: usize,
    w: usize,
    c: usize,
    xs: f64,
    ys: f64,
    out: &mut [f32],
) -> bool {
    if !xs.is_finite() || !ys.is_finite() {
        return false;
    }
    let x0 = xs.floor();
    let y0 = ys.floor();
    let fx = xs - x0;
    let fy = ys - y0;
    let (x0, y0) = (x0 as i64, y0 as i64);
    let corners = [
        (x0, y0, (1.0 - fx) * (1.0 - fy)),
        (x0, y0 + 1, (1.0 - fx) * fy),
        (x0 + 1, y0, fx * (1.0 - fy)),
        (x0 + 1, y0 + 1, fx * fy),
    ];
    let mut hit = false;
    for (xi, yi, wt) in corners {
        if wt <= 0.0 || xi < 0 || yi < 0 || xi >= h as i64 || yi >= w as i64 {
            continue;
        }
        hit = true;
        let wt = wt as f32;
        let start = (xi as usize * w + yi as usize) * c;
        for (o, v) in out.iter_mut().zip(&data[start..start + c]) {
            *o += wt * v;
        }
    }
    hit
}
