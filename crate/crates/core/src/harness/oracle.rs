//! Scalar reference implementations, written as plain nested loops in `f64`
//! so they share nothing with the production kernels but the data types.

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, RoiMask};
use crate::graph::V2XGraph;
use crate::hmsa::HmsaWeights;
use crate::mswin::BranchWeights;
use crate::numerics::{Dense, Tensor};

/// Column block `[lo, lo + n)` of `x · W + b` for one input vector.
fn affine_cols(x: &[f32], d: &Dense, lo: usize, n: usize) -> Vec<f64> {
    let out = d.output_dim();
    (lo..lo + n)
        .map(|col| {
            let mut s = d.bias.data()[col] as f64;
            for (r, &xv) in x.iter().enumerate() {
                s += xv as f64 * d.weight.data()[r * out + col] as f64;
            }
            s
        })
        .collect()
}

/// Row vector times a square matrix.
fn vec_mat(v: &[f64], m: &Tensor) -> Vec<f64> {
    let n = v.len();
    (0..n)
        .map(|col| (0..n).map(|r| v[r] * m.data()[r * n + col] as f64).sum())
        .collect()
}

fn softmax_masked(logits: &[f64], keep: &[bool]) -> Option<Vec<f64>> {
    let max = logits
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let e: Vec<f64> = logits
        .iter()
        .zip(keep)
        .map(|(&l, &k)| if k { (l - max).exp() } else { 0.0 })
        .collect();
    let s: f64 = e.iter().sum();
    Some(e.into_iter().map(|v| v / s).collect())
}

/// Heterogeneous attention evaluated position by position, head by head.
pub fn hmsa_bruteforce_oracle(
    features: &[FeatureMap],
    masks: &[RoiMask],
    graph: &V2XGraph,
    w: &HmsaWeights,
) -> Result<Vec<Tensor>> {
    if features.len() != graph.len() || masks.len() != graph.len() {
        return Err(Error::dim("oracle inputs do not match the graph"));
    }
    let [h, wd, c] = features[0].dims();
    let heads = w.heads;
    let d = c / heads;
    let nodes = graph.nodes();
    let mut outputs = Vec::with_capacity(nodes.len());
    for (i, node) in nodes.iter().enumerate() {
        let ki = node.kind.index();
        // Sources of edges into node i, in edge order.
        let sources: Vec<(usize, usize)> = graph
            .edges()
            .iter()
            .filter(|e| e.dst == node.id)
            .map(|e| (graph.index_of(e.src).unwrap(), e.kind.index()))
            .collect();
        let mut out = Tensor::zeros(&[h, wd, c]);
        for r in 0..h {
            for col in 0..wd {
                let xi = features[i].data.pixel(r, col);
                let mut concat = vec![0.0f32; c];
                for m in 0..heads {
                    let q = affine_cols(xi, &w.query[ki], m * d, d);
                    let mut logits = Vec::new();
                    let mut msgs = Vec::new();
                    let mut keep = Vec::new();
                    for &(j, phi) in &sources {
                        let xj = features[j].data.pixel(r, col);
                        let kj = nodes[j].kind.index();
                        let key = vec_mat(&affine_cols(xj, &w.key[kj], m * d, d), &w.att[phi][m]);
                        let logit: f64 = key.iter().zip(&q).map(|(a, b)| a * b).sum::<f64>() / (c as f64).sqrt();
                        logits.push(logit);
                        msgs.push(vec_mat(&affine_cols(xj, &w.message[kj], m * d, d), &w.msg[phi][m]));
                        keep.push(masks[j].get(r, col));
                    }
                    let a = softmax_masked(&logits, &keep).ok_or(Error::DegenerateSlice)?;
                    for t in 0..d {
                        concat[m * d + t] = a.iter().zip(&msgs).map(|(aj, mj)| aj * mj[t]).sum::<f64>() as f32;
                    }
                }
                let y = affine_cols(&concat, &w.output[ki], 0, c);
                for (o, v) in out.pixel_mut(r, col).iter_mut().zip(y) {
                    *o = v as f32;
                }
            }
        }
        outputs.push(out);
    }
    Ok(outputs)
}

/// Window attention of one branch, one query position at a time.
///
/// Keys are the in-map cells of the query's window; cells a zero-padded map
/// would add are simply absent.
pub fn windowed_attention_oracle(x: &Tensor, b: &BranchWeights) -> Result<Tensor> {
    let [h, w, c] = x.dims3()?;
    let p = b.window;
    let heads = b.heads;
    let d = c / heads;
    let n = 2 * p - 1;
    let mut out = Tensor::zeros(&[h, w, c]);
    for r in 0..h {
        for col in 0..w {
            let (r0, c0) = (r / p * p, col / p * p);
            let keys: Vec<(usize, usize)> = (r0..(r0 + p).min(h))
                .flat_map(|rr| (c0..(c0 + p).min(w)).map(move |cc| (rr, cc)))
                .collect();
            for m in 0..heads {
                let q = affine_cols(x.pixel(r, col), &b.query, m * d, d);
                let logits: Vec<f64> = keys
                    .iter()
                    .map(|&(rr, cc)| {
                        let k = affine_cols(x.pixel(rr, cc), &b.key, m * d, d);
                        let dot: f64 = q.iter().zip(&k).map(|(a, b)| a * b).sum();
                        let dr = (r as isize - rr as isize + p as isize - 1) as usize;
                        let dc = (col as isize - cc as isize + p as isize - 1) as usize;
                        dot / (d as f64).sqrt() + b.bias.table.data()[dr * n + dc] as f64
                    })
                    .collect();
                let a = softmax_masked(&logits, &vec![true; keys.len()]).ok_or(Error::DegenerateSlice)?;
                let mut acc = vec![0.0f64; d];
                for (aj, &(rr, cc)) in a.iter().zip(&keys) {
                    let v = affine_cols(x.pixel(rr, cc), &b.value, m * d, d);
                    for t in 0..d {
                        acc[t] += aj * v[t];
                    }
                }
                for t in 0..d {
                    out.pixel_mut(r, col)[m * d + t] = acc[t] as f32;
                }
            }
        }
    }
    Ok(out)
}

/// `softmax(q·kᵢ / √d)`-weighted sum of `values`.
pub fn vector_attention(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>]) -> Vec<f64> {
    let scale = (q.len() as f64).sqrt();
    let logits: Vec<f64> = keys
        .iter()
        .map(|k| k.iter().zip(q).map(|(a, b)| a * b).sum::<f64>() / scale)
        .collect();
    let a = softmax_masked(&logits, &vec![true; logits.len()]).unwrap_or_default();
    let dim = values.first().map_or(0, Vec::len);
    (0..dim)
        .map(|t| a.iter().zip(values).map(|(aj, v)| aj * v[t]).sum())
        .collect()
}
