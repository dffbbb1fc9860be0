//! Multi-scale window attention.
//!
//! Each branch runs relative-position-biased self-attention inside
//! non-overlapping `P×P` windows of a single agent's map. Branch outputs are
//! fused with split attention: a global descriptor of the branch sum produces
//! per-branch channel logits, softmaxed across branches.

mod flops;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{gemm, relu, softmax_slice, Dense, SeededRng, Tensor};

pub use flops::{flops_estimate, FlopsFamily, FlopsInput};

/// Branch layout of one MSwin layer.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MswinConfig {
    pub windows: Vec<usize>,
    pub heads: Vec<usize>,
    pub channels: usize,
    /// Split-attention channel reduction.
    pub reduction: usize,
}

impl Default for MswinConfig {
    fn default() -> Self {
        MswinConfig {
            windows: vec![4, 8, 16],
            heads: vec![16, 8, 4],
            channels: 256,
            reduction: 4,
        }
    }
}

impl MswinConfig {
    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if self.windows.is_empty() || self.windows.len() != self.heads.len() {
            return Err(Error::config("need one head count per window size"));
        }
        if self.windows.contains(&0) || self.windows.windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::config("window sizes must be positive and strictly increasing"));
        }
        if let Some(h) = self.heads.iter().find(|&&h| h == 0 || c % h != 0) {
            return Err(Error::config(format!("{h} heads do not divide {c} channels")));
        }
        if self.reduction == 0 || c % self.reduction != 0 {
            return Err(Error::config(format!("reduction {} does not divide {c}", self.reduction)));
        }
        Ok(())
    }
}

/// Learnable `(2P−1)×(2P−1)` relative position bias, shared by all heads of a branch.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeBiasTable {
    pub window: usize,
    pub table: Tensor,
}

impl RelativeBiasTable {
    pub fn zeros(window: usize) -> Self {
        let n = 2 * window - 1;
        RelativeBiasTable {
            window,
            table: Tensor::zeros(&[n, n]),
        }
    }

    pub fn new(window: usize, table: Tensor) -> Result<Self> {
        let n = 2 * window - 1;
        if window == 0 || table.shape() != [n, n] {
            return Err(Error::dim(format!(
                "bias table {:?} does not fit window {window}",
                table.shape()
            )));
        }
        Ok(RelativeBiasTable { window, table })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchWeights {
    pub window: usize,
    pub heads: usize,
    pub query: Dense,
    pub key: Dense,
    pub value: Dense,
    pub bias: RelativeBiasTable,
}

impl BranchWeights {
    pub fn random(channels: usize, window: usize, heads: usize, rng: &mut SeededRng) -> Self {
        BranchWeights {
            window,
            heads,
            query: Dense::random(channels, channels, rng),
            key: Dense::random(channels, channels, rng),
            value: Dense::random(channels, channels, rng),
            bias: RelativeBiasTable::zeros(window),
        }
    }

    pub fn channels(&self) -> usize {
        self.query.input_dim()
    }
}

/// Split-attention fusion parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitAttnWeights {
    /// `C → C/r`, followed by ReLU.
    pub pool: Dense,
    /// One `C/r → C` map per branch.
    pub logits: Vec<Dense>,
}

impl SplitAttnWeights {
    pub fn random(channels: usize, reduction: usize, branches: usize, rng: &mut SeededRng) -> Self {
        let inner = channels / reduction;
        SplitAttnWeights {
            pool: Dense::random(channels, inner, rng),
            logits: (0..branches).map(|_| Dense::random(inner, channels, rng)).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MswinWeights {
    pub branches: Vec<BranchWeights>,
    pub fuse: SplitAttnWeights,
}

impl MswinWeights {
    pub fn random(cfg: &MswinConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let branches = cfg
            .windows
            .iter()
            .zip(&cfg.heads)
            .map(|(&p, &h)| BranchWeights::random(cfg.channels, p, h, rng))
            .collect();
        let fuse = SplitAttnWeights::random(cfg.channels, cfg.reduction, cfg.windows.len(), rng);
        Ok(MswinWeights { branches, fuse })
    }

    pub fn check(&self, cfg: &MswinConfig) -> Result<()> {
        cfg.validate()?;
        let c = cfg.channels;
        let layout_ok = self.branches.len() == cfg.windows.len()
            && self
                .branches
                .iter()
                .zip(cfg.windows.iter().zip(&cfg.heads))
                .all(|(b, (&p, &h))| {
                    b.window == p
                        && b.heads == h
                        && b.bias.window == p
                        && [&b.query, &b.key, &b.value]
                            .iter()
                            .all(|d| d.input_dim() == c && d.output_dim() == c)
                });
        let inner = c / cfg.reduction;
        let fuse_ok = self.fuse.pool.input_dim() == c
            && self.fuse.pool.output_dim() == inner
            && self.fuse.logits.len() == cfg.windows.len()
            && self
                .fuse
                .logits
                .iter()
                .all(|d| d.input_dim() == inner && d.output_dim() == c);
        if !layout_ok || !fuse_ok {
            return Err(Error::dim("MSwin weights do not match the configuration"));
        }
        Ok(())
    }
}

fn padded(n: usize, p: usize) -> usize {
    n.div_ceil(p) * p
}

/// Tiles a map into `P×P` windows, `[windows, P·P, C]`, windows in row-major
/// order. The map is zero-padded on the bottom and right to a multiple of `P`.
pub fn window_partition(x: &Tensor, p: usize) -> Result<Tensor> {
    let [h, w, c] = x.dims3()?;
    if p == 0 {
        return Err(Error::config("window size must be positive"));
    }
    let (hp, wp) = (padded(h, p), padded(w, p));
    let (nh, nw) = (hp / p, wp / p);
    let mut out = vec![0.0f32; hp * wp * c];
    for r in 0..h {
        for col in 0..w {
            let win = (r / p) * nw + col / p;
            let pos = (r % p) * p + col % p;
            let dst = (win * p * p + pos) * c;
            out[dst..dst + c].copy_from_slice(x.pixel(r, col));
        }
    }
    Tensor::new(vec![nh * nw, p * p, c], out)
}

/// Inverse of [`window_partition`]; crops any padding back to `h×w`.
pub fn window_reverse(wins: &Tensor, p: usize, h: usize, w: usize) -> Result<Tensor> {
    let (hp, wp) = (padded(h, p.max(1)), padded(w, p.max(1)));
    let c = wins.last_dim();
    if p == 0 || wins.rank() != 3 || wins.shape()[..2] != [(hp / p) * (wp / p), p * p] {
        return Err(Error::dim(format!(
            "windows {:?} do not tile a {h}×{w} map with P={p}",
            wins.shape()
        )));
    }
    let nw = wp / p;
    let mut out = vec![0.0f32; h * w * c];
    for r in 0..h {
        for col in 0..w {
            let win = (r / p) * nw + col / p;
            let pos = (r % p) * p + col % p;
            let src = (win * p * p + pos) * c;
            out[(r * w + col) * c..(r * w + col + 1) * c].copy_from_slice(&wins.data()[src..src + c]);
        }
    }
    Tensor::new(vec![h, w, c], out)
}

/// Expands the bias table into the `(P·P)×(P·P)` matrix added to window logits.
pub fn relative_bias_lookup(table: &RelativeBiasTable, p: usize) -> Result<Tensor> {
    let n = 2 * p - 1;
    if p == 0 || table.table.shape() != [n, n] {
        return Err(Error::dim(format!("bias table {:?} does not fit P={p}", table.table.shape())));
    }
    let pp = p * p;
    let src = table.table.data();
    Ok(Tensor::from_fn(&[pp, pp], |k| {
        let (a, b) = (k / pp, k % pp);
        let dr = (a / p) as isize - (b / p) as isize + p as isize - 1;
        let dc = (a % p) as isize - (b % p) as isize + p as isize - 1;
        src[dr as usize * n + dc as usize]
    }))
}

/// Windowed multi-head self-attention of one branch.
pub fn branch_attention(x: &Tensor, b: &BranchWeights) -> Result<Tensor> {
    let [h, w, c] = x.dims3()?;
    if b.heads == 0 || c % b.heads != 0 || b.channels() != c {
        return Err(Error::dim(format!(
            "branch with {} heads over {} channels cannot take {c} channels",
            b.heads,
            b.channels()
        )));
    }
    let p = b.window;
    let bias = relative_bias_lookup(&b.bias, p)?;
    let q = window_partition(&b.query.forward(x)?, p)?;
    let k = window_partition(&b.key.forward(x)?, p)?;
    let v = window_partition(&b.value.forward(x)?, p)?;

    // Key validity per window position; padded cells never receive weight.
    let wp = padded(w, p);
    let nw = wp / p;
    let valid = |win: usize, pos: usize| {
        let r = (win / nw) * p + pos / p;
        let col = (win % nw) * p + pos % p;
        r < h && col < w
    };

    let heads = b.heads;
    let d = c / heads;
    let pp = p * p;
    let scale = 1.0 / (d as f32).sqrt();
    let block = pp * c;
    let mut out = vec![0.0f32; q.len()];
    out.par_chunks_mut(block)
        .enumerate()
        .try_for_each(|(win, dst)| -> Result<()> {
            let qw = &q.data()[win * block..(win + 1) * block];
            let kw = &k.data()[win * block..(win + 1) * block];
            let vw = &v.data()[win * block..(win + 1) * block];
            let mut logits = vec![0.0f32; pp * pp];
            for m in 0..heads {
                // Q_m · K_mᵀ, reading K transposed through its strides.
                gemm(pp, d, pp, &qw[m * d..], (c, 1), &kw[m * d..], (1, c), &mut logits, (pp, 1));
                for (row, lrow) in logits.chunks_mut(pp).enumerate() {
                    for (l, bv) in lrow.iter_mut().zip(&bias.data()[row * pp..(row + 1) * pp]) {
                        *l = *l * scale + bv;
                    }
                    if !softmax_slice(lrow, |t| valid(win, t)) {
                        return Err(Error::DegenerateSlice);
                    }
                }
                gemm(pp, pp, d, &logits, (pp, 1), &vw[m * d..], (c, 1), &mut dst[m * d..], (c, 1));
            }
            Ok(())
        })?;
    window_reverse(&Tensor::new(q.shape().to_vec(), out)?, p, h, w)
}

/// Per-branch channel weights `[branches, C]` of split-attention fusion.
pub fn split_attention_weights(branches: &[Tensor], w: &SplitAttnWeights) -> Result<Tensor> {
    let first = branches.first().ok_or_else(|| Error::dim("no branches to fuse"))?;
    let [h, wd, c] = first.dims3()?;
    if branches.iter().any(|b| b.shape() != first.shape()) {
        return Err(Error::dim("branch outputs differ in shape"));
    }
    if w.logits.len() != branches.len() {
        return Err(Error::dim(format!(
            "{} branch logit maps for {} branches",
            w.logits.len(),
            branches.len()
        )));
    }
    let mut pooled = vec![0.0f64; c];
    for b in branches {
        for px in b.data().chunks(c) {
            for (acc, v) in pooled.iter_mut().zip(px) {
                *acc += *v as f64;
            }
        }
    }
    let cells = (h * wd) as f64;
    let pooled = Tensor::new(vec![1, c], pooled.iter().map(|v| (v / cells) as f32).collect())?;
    let squeezed = w.pool.forward(&pooled)?.map(relu);
    let k = branches.len();
    let mut logits = vec![0.0f32; k * c];
    for (j, dense) in w.logits.iter().enumerate() {
        logits[j * c..(j + 1) * c].copy_from_slice(dense.forward(&squeezed)?.data());
    }
    let mut column = vec![0.0f32; k];
    for ch in 0..c {
        for j in 0..k {
            column[j] = logits[j * c + ch];
        }
        softmax_slice(&mut column, |_| true);
        for j in 0..k {
            logits[j * c + ch] = column[j];
        }
    }
    Tensor::new(vec![k, c], logits)
}

/// Channel-wise convex combination of branch outputs.
pub fn split_attention_fuse(branches: &[Tensor], w: &SplitAttnWeights) -> Result<Tensor> {
    let weights = split_attention_weights(branches, w)?;
    let c = weights.shape()[1];
    let mut out = Tensor::zeros(branches[0].shape());
    for (b, wb) in branches.iter().zip(weights.data().chunks(c)) {
        for (o, px) in out.data_mut().chunks_mut(c).zip(b.data().chunks(c)) {
            for ((o, v), a) in o.iter_mut().zip(px).zip(wb) {
                *o += a * v;
            }
        }
    }
    Ok(out)
}

/// All branches on the same input, fused by split attention.
pub fn mswin_forward(x: &Tensor, cfg: &MswinConfig, w: &MswinWeights) -> Result<Tensor> {
    w.check(cfg)?;
    if x.last_dim() != cfg.channels {
        return Err(Error::dim(format!(
            "MSwin over {} channels got {}",
            cfg.channels,
            x.last_dim()
        )));
    }
    let outs = w
        .branches
        .iter()
        .map(|b| branch_attention(x, b))
        .collect::<Result<Vec<_>>>()?;
    split_attention_fuse(&outs, &w.fuse)
}
