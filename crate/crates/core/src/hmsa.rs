//! Heterogeneous multi-agent self-attention.
//!
//! For every grid cell independently, node `i` attends over its incoming
//! neighbours `j`. Query, key and message projections are chosen by node kind;
//! the bilinear attention matrix and the message transform are chosen per
//! head by the edge kind `kind(j) → kind(i)`:
//!
//! ```text
//! logit_m(i, j) = K_m(j) · W_att[φ, m] · Q_m(i)ᵀ / √C
//! msg_m(i, j)   = M_m(j) · W_msg[φ, m]
//! H_i           = Dense_{c_i}( ‖_m Σ_j softmax_j(logit_m) · msg_m(i, j) )
//! ```
//!
//! Neighbours whose ROI mask is false at a cell get zero weight there.

use crate::error::{Error, Result};
use crate::feature::{FeatureMap, RoiMask};
use crate::graph::{AgentKind, EdgeKind, V2XGraph};
use crate::numerics::{gemm, matmul, softmax, softmax_slice, BoolTensor, Dense, SeededRng, Tensor};

/// Learnable parameters of one HMSA layer.
///
/// Node-kind arrays are indexed by [`AgentKind::index`], edge-kind arrays by
/// [`EdgeKind::index`]. Each `C×C` projection produces all heads at once; head
/// `m` owns output columns `m·d .. (m+1)·d` with `d = C / heads`.
#[derive(Debug, Clone, PartialEq)]
pub struct HmsaWeights {
    pub heads: usize,
    pub query: [Dense; 2],
    pub key: [Dense; 2],
    pub message: [Dense; 2],
    pub output: [Dense; 2],
    /// `[edge kind][head]`, each `d×d`.
    pub att: [Vec<Tensor>; 4],
    /// `[edge kind][head]`, each `d×d`.
    pub msg: [Vec<Tensor>; 4],
}

impl HmsaWeights {
    pub fn channels(&self) -> usize {
        self.query[0].input_dim()
    }

    pub fn head_dim(&self) -> usize {
        self.channels() / self.heads
    }

    /// Seeded Gaussian init (std `1/√fan_in`), zero biases.
    pub fn random(channels: usize, heads: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::random_impl(channels, heads, rng, false)
    }

    /// Seeded init with random biases too; used by oracle comparisons.
    pub fn random_with_bias(channels: usize, heads: usize, rng: &mut SeededRng) -> Result<Self> {
        Self::random_impl(channels, heads, rng, true)
    }

    fn random_impl(channels: usize, heads: usize, rng: &mut SeededRng, bias: bool) -> Result<Self> {
        check_heads(channels, heads)?;
        let d = channels / heads;
        let dense = |rng: &mut SeededRng| {
            if bias {
                Dense::random_with_bias(channels, channels, rng)
            } else {
                Dense::random(channels, channels, rng)
            }
        };
        let query = [dense(rng), dense(rng)];
        let key = [dense(rng), dense(rng)];
        let message = [dense(rng), dense(rng)];
        let output = [dense(rng), dense(rng)];
        let std = 1.0 / (d as f64).sqrt();
        let per_edge = |rng: &mut SeededRng| {
            std::array::from_fn::<_, 4, _>(|_| (0..heads).map(|_| rng.normal_tensor(&[d, d], std)).collect())
        };
        let att = per_edge(rng);
        let msg = per_edge(rng);
        Ok(HmsaWeights {
            heads,
            query,
            key,
            message,
            output,
            att,
            msg,
        })
    }

    /// All projections and edge matrices are identities.
    pub fn identity(channels: usize, heads: usize) -> Result<Self> {
        check_heads(channels, heads)?;
        let d = channels / heads;
        let id = || Dense::identity(channels);
        let eyes = || std::array::from_fn::<_, 4, _>(|_| vec![Tensor::eye(d); heads]);
        Ok(HmsaWeights {
            heads,
            query: [id(), id()],
            key: [id(), id()],
            message: [id(), id()],
            output: [id(), id()],
            att: eyes(),
            msg: eyes(),
        })
    }

    /// Copies the vehicle and VV parameters onto every node and edge kind.
    pub fn tied(mut self) -> Self {
        let v = AgentKind::Vehicle.index();
        let i = AgentKind::Infrastructure.index();
        for arr in [&mut self.query, &mut self.key, &mut self.message, &mut self.output] {
            arr[i] = arr[v].clone();
        }
        let vv = EdgeKind::VV.index();
        for e in EdgeKind::ALL {
            self.att[e.index()] = self.att[vv].clone();
            self.msg[e.index()] = self.msg[vv].clone();
        }
        self
    }

    pub fn is_tied(&self) -> bool {
        let same = |a: &[Dense; 2]| a[0] == a[1];
        same(&self.query)
            && same(&self.key)
            && same(&self.message)
            && same(&self.output)
            && self.att.iter().all(|a| *a == self.att[0])
            && self.msg.iter().all(|m| *m == self.msg[0])
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels();
        check_heads(c, self.heads)?;
        let d = c / self.heads;
        let dense_ok = |x: &Dense| x.input_dim() == c && x.output_dim() == c;
        let all_dense = self
            .query
            .iter()
            .chain(&self.key)
            .chain(&self.message)
            .chain(&self.output)
            .all(dense_ok);
        let mats_ok = self
            .att
            .iter()
            .chain(&self.msg)
            .all(|hs| hs.len() == self.heads && hs.iter().all(|t| t.shape() == [d, d]));
        if !all_dense || !mats_ok {
            return Err(Error::dim("inconsistent HMSA weight shapes"));
        }
        Ok(())
    }
}

fn check_heads(channels: usize, heads: usize) -> Result<()> {
    if heads == 0 || channels == 0 || channels % heads != 0 {
        return Err(Error::config(format!("{heads} heads do not divide {channels} channels")));
    }
    Ok(())
}

fn validate_inputs(features: &[FeatureMap], masks: &[RoiMask], graph: &V2XGraph) -> Result<[usize; 3]> {
    if features.is_empty() || features.len() != graph.len() || masks.len() != graph.len() {
        return Err(Error::dim(format!(
            "{} features and {} masks for a {}-node graph",
            features.len(),
            masks.len(),
            graph.len()
        )));
    }
    let dims = features[0].dims();
    for (k, (f, m)) in features.iter().zip(masks).enumerate() {
        if f.dims() != dims {
            return Err(Error::dim(format!("feature {k} has shape {:?}, expected {dims:?}", f.dims())));
        }
        if !m.matches(&f.data) {
            return Err(Error::dim(format!("mask {k} does not match its feature map")));
        }
        if f.agent != graph.nodes()[k].id {
            return Err(Error::dim(format!(
                "feature {k} belongs to agent {}, graph node is {}",
                f.agent,
                graph.nodes()[k].id
            )));
        }
    }
    Ok(dims)
}

/// Multiplies each head slice of a `[n×C]` buffer by its own `d×d` matrix.
fn per_head_transform(x: &[f32], n: usize, c: usize, mats: &[Tensor]) -> Vec<f32> {
    let d = c / mats.len();
    let mut out = vec![0.0f32; n * c];
    for (m, w) in mats.iter().enumerate() {
        gemm(n, d, d, &x[m * d..], (c, 1), w.data(), (d, 1), &mut out[m * d..], (c, 1));
    }
    out
}

struct Projected {
    query: Tensor,
    key: Tensor,
    message: Tensor,
}

/// Runs HMSA and, if `attention` is given, records per-node attention weights
/// as `[cells, heads, neighbours]`.
fn forward_impl(
    features: &[FeatureMap],
    masks: &[RoiMask],
    graph: &V2XGraph,
    w: &HmsaWeights,
    mut attention: Option<&mut Vec<Tensor>>,
) -> Result<Vec<FeatureMap>> {
    let [h, wd, c] = validate_inputs(features, masks, graph)?;
    w.validate()?;
    if c != w.channels() {
        return Err(Error::dim(format!("HMSA weights for {} channels, features have {c}", w.channels())));
    }
    let n = h * wd;
    let heads = w.heads;
    let d = c / heads;
    let scale = 1.0 / (c as f32).sqrt();

    let projected: Vec<Projected> = features
        .iter()
        .zip(graph.nodes())
        .map(|(f, node)| {
            let k = node.kind.index();
            Ok(Projected {
                query: w.query[k].forward(&f.data)?,
                key: w.key[k].forward(&f.data)?,
                message: w.message[k].forward(&f.data)?,
            })
        })
        .collect::<Result<_>>()?;

    // Edge-transformed keys and messages, cached per (source node, edge kind).
    let mut cache: Vec<[Option<(Vec<f32>, Vec<f32>)>; 4]> = (0..graph.len()).map(|_| Default::default()).collect();

    let mut outputs = Vec::with_capacity(graph.len());
    for (i, node) in graph.nodes().iter().enumerate() {
        let neighbours = graph.incoming(i);
        for &(j, phi) in &neighbours {
            if cache[j][phi.index()].is_none() {
                let kw = per_head_transform(projected[j].key.data(), n, c, &w.att[phi.index()]);
                let mw = per_head_transform(projected[j].message.data(), n, c, &w.msg[phi.index()]);
                cache[j][phi.index()] = Some((kw, mw));
            }
        }
        let q = projected[i].query.data();
        let mut agg = vec![0.0f32; n * c];
        let mut weights = vec![0.0f32; neighbours.len()];
        let mut record = attention
            .as_ref()
            .map(|_| vec![0.0f32; n * heads * neighbours.len()]);
        for p in 0..n {
            let (row, col) = (p / wd, p % wd);
            for m in 0..heads {
                let qs = &q[p * c + m * d..p * c + (m + 1) * d];
                for (slot, &(j, phi)) in weights.iter_mut().zip(&neighbours) {
                    let (kw, _) = cache[j][phi.index()].as_ref().unwrap();
                    let ks = &kw[p * c + m * d..p * c + (m + 1) * d];
                    *slot = ks.iter().zip(qs).map(|(a, b)| a * b).sum::<f32>() * scale;
                }
                let ok = softmax_slice(&mut weights, |t| masks[neighbours[t].0].get(row, col));
                if !ok {
                    return Err(Error::DegenerateSlice);
                }
                let out = &mut agg[p * c + m * d..p * c + (m + 1) * d];
                for (&a, &(j, phi)) in weights.iter().zip(&neighbours) {
                    if a == 0.0 {
                        continue;
                    }
                    let (_, mw) = cache[j][phi.index()].as_ref().unwrap();
                    for (o, v) in out.iter_mut().zip(&mw[p * c + m * d..p * c + (m + 1) * d]) {
                        *o += a * v;
                    }
                }
                if let Some(rec) = record.as_mut() {
                    let base = (p * heads + m) * neighbours.len();
                    rec[base..base + neighbours.len()].copy_from_slice(&weights);
                }
            }
        }
        let agg = Tensor::new(vec![h, wd, c], agg)?;
        outputs.push(features[i].with_data(w.output[node.kind.index()].forward(&agg)?));
        if let (Some(store), Some(rec)) = (attention.as_mut(), record) {
            store.push(Tensor::new(vec![n, heads, neighbours.len()], rec)?);
        }
    }
    Ok(outputs)
}

/// Heterogeneous attention across agents; returns one updated map per node.
pub fn hmsa_forward(
    features: &[FeatureMap],
    masks: &[RoiMask],
    graph: &V2XGraph,
    w: &HmsaWeights,
) -> Result<Vec<FeatureMap>> {
    forward_impl(features, masks, graph, w, None)
}

/// Attention weights of every node as `[cells, heads, incoming neighbours]`,
/// neighbours in node order.
pub fn hmsa_attention(
    features: &[FeatureMap],
    masks: &[RoiMask],
    graph: &V2XGraph,
    w: &HmsaWeights,
) -> Result<Vec<Tensor>> {
    let mut store = Vec::new();
    forward_impl(features, masks, graph, w, Some(&mut store))?;
    Ok(store)
}

/// Type-free multi-head attention across agents for tied weights.
///
/// Computed cell by cell as a small sequence attention over the agent stack,
/// independent of the per-head map kernels in [`hmsa_forward`].
pub fn hmsa_homogeneous_check(
    features: &[FeatureMap],
    masks: &[RoiMask],
    graph: &V2XGraph,
    w_tied: &HmsaWeights,
) -> Result<Vec<FeatureMap>> {
    if !w_tied.is_tied() {
        return Err(Error::config("homogeneous check needs tied weights"));
    }
    let [h, wd, c] = validate_inputs(features, masks, graph)?;
    w_tied.validate()?;
    let agents = graph.len();
    let heads = w_tied.heads;
    let d = c / heads;
    let scale = 1.0 / (c as f32).sqrt();
    let (wq, wk, wm, wo) = (&w_tied.query[0], &w_tied.key[0], &w_tied.message[0], &w_tied.output[0]);
    let (att, msg) = (&w_tied.att[0], &w_tied.msg[0]);

    // Adjacency as a [dst, src] mask, intersected per cell with source ROI.
    let mut adjacency = vec![false; agents * agents];
    for i in 0..agents {
        for (j, _) in graph.incoming(i) {
            adjacency[i * agents + j] = true;
        }
    }
    let mut out = vec![vec![0.0f32; h * wd * c]; agents];
    for p in 0..h * wd {
        let (row, col) = (p / wd, p % wd);
        let stack: Vec<f32> = features.iter().flat_map(|f| f.data.pixel(row, col).to_vec()).collect();
        let stack = Tensor::new(vec![agents, c], stack)?;
        let q = wq.forward(&stack)?;
        let k = wk.forward(&stack)?;
        let v = wm.forward(&stack)?;
        let mut fused = Tensor::zeros(&[agents, c]);
        for m in 0..heads {
            let head_cols = |t: &Tensor| -> Result<Tensor> {
                let cols: Vec<f32> = (0..agents).flat_map(|a| t.data()[a * c + m * d..a * c + (m + 1) * d].to_vec()).collect();
                Tensor::new(vec![agents, d], cols)
            };
            let (qh, kh, vh) = (head_cols(&q)?, head_cols(&k)?, head_cols(&v)?);
            // logits[i, j] = (K_j W) · Q_i
            let kw = matmul(&kh, &att[m])?;
            let logits = matmul(&qh, &kw.transpose()?)?.scale(scale);
            let keep: Vec<bool> = (0..agents * agents)
                .map(|ij| adjacency[ij] && masks[ij % agents].get(row, col))
                .collect();
            let weights = softmax(&logits, 1, Some(&BoolTensor::new(vec![agents, agents], keep)?))?;
            let mv = matmul(&vh, &msg[m])?;
            let agg = matmul(&weights, &mv)?;
            for a in 0..agents {
                for t in 0..d {
                    fused.set(&[a, m * d + t], agg.get(&[a, t]));
                }
            }
        }
        let y = wo.forward(&fused)?;
        for a in 0..agents {
            out[a][p * c..(p + 1) * c].copy_from_slice(&y.data()[a * c..(a + 1) * c]);
        }
    }
    features
        .iter()
        .zip(out)
        .map(|(f, data)| Ok(f.with_data(Tensor::new(vec![h, wd, c], data)?)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::feature::AgentId;
    use crate::geometry::Pose2;
    use crate::graph::{build_graph, AgentMeta};

    fn meta(id: u32, kind: AgentKind) -> AgentMeta {
        AgentMeta {
            id: AgentId(id),
            kind,
            pose: Pose2::new(id as f64, 0.0, 0.0),
            capture_time: 0.0,
        }
    }

    fn setup(kinds: &[AgentKind], h: usize, w: usize, c: usize, seed: u64) -> (Vec<FeatureMap>, Vec<RoiMask>, V2XGraph) {
        let agents: Vec<AgentMeta> = kinds.iter().enumerate().map(|(i, &k)| meta(i as u32, k)).collect();
        let graph = build_graph(&agents, AgentId(0), 1e9).unwrap();
        let mut rng = SeededRng::new(seed);
        let feats = graph
            .nodes()
            .iter()
            .map(|n| FeatureMap::new(n.id, 0.0, rng.normal_tensor(&[h, w, c], 1.0)).unwrap())
            .collect();
        let masks = vec![RoiMask::all_true(h, w); graph.len()];
        (feats, masks, graph)
    }

    #[test]
    fn single_node_identity_passthrough() {
        let (f, m, g) = setup(&[AgentKind::Vehicle], 3, 2, 4, 1);
        let w = HmsaWeights::identity(4, 2).unwrap();
        let out = hmsa_forward(&f, &m, &g, &w).unwrap();
        assert!(out[0].data.max_abs_diff(&f[0].data) < 1e-6);
    }

    #[test]
    fn identical_vehicles_are_symmetric() {
        let (mut f, m, g) = setup(&[AgentKind::Vehicle, AgentKind::Vehicle], 2, 2, 4, 2);
        f[1].data = f[0].data.clone();
        let w = HmsaWeights::random_with_bias(4, 2, &mut SeededRng::new(3)).unwrap();
        let out = hmsa_forward(&f, &m, &g, &w).unwrap();
        assert!(out[0].data.max_abs_diff(&out[1].data) < 1e-6);
    }

    #[test]
    fn masked_neighbour_gets_zero_weight() {
        let (f, mut m, g) = setup(&[AgentKind::Vehicle, AgentKind::Infrastructure], 2, 3, 4, 4);
        m[1].set(1, 2, false);
        let w = HmsaWeights::random(4, 2, &mut SeededRng::new(5)).unwrap();
        let att = hmsa_attention(&f, &m, &g, &w).unwrap();
        let p = 5; // cell (1, 2)
        for node in &att {
            for head in 0..2 {
                assert_eq!(node.get(&[p, head, 1]), 0.0);
                assert!((node.get(&[p, head, 0]) - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn fully_masked_cell_is_degenerate() {
        let (f, mut m, g) = setup(&[AgentKind::Vehicle], 2, 2, 4, 6);
        m[0].set(0, 0, false);
        let w = HmsaWeights::random(4, 2, &mut SeededRng::new(7)).unwrap();
        assert!(matches!(hmsa_forward(&f, &m, &g, &w), Err(Error::DegenerateSlice)));
    }

    #[test]
    fn graph_mismatch_is_dimension_error() {
        let (f, m, g) = setup(&[AgentKind::Vehicle, AgentKind::Vehicle], 2, 2, 4, 8);
        let w = HmsaWeights::random(4, 2, &mut SeededRng::new(9)).unwrap();
        assert!(matches!(hmsa_forward(&f[..1], &m[..1], &g, &w), Err(Error::Dimension(_))));
        let w8 = HmsaWeights::random(8, 2, &mut SeededRng::new(9)).unwrap();
        assert!(matches!(hmsa_forward(&f, &m, &g, &w8), Err(Error::Dimension(_))));
    }

    #[test]
    fn untied_weights_rejected_by_reference() {
        let (f, m, g) = setup(&[AgentKind::Vehicle], 2, 2, 4, 10);
        let w = HmsaWeights::random(4, 2, &mut SeededRng::new(11)).unwrap();
        assert!(matches!(hmsa_homogeneous_check(&f, &m, &g, &w), Err(Error::Config(_))));
        assert!(w.clone().tied().is_tied());
    }

    #[test]
    fn zero_attention_matrices_give_uniform_weights() {
        let (f, mut m, g) = setup(&[AgentKind::Vehicle, AgentKind::Vehicle, AgentKind::Infrastructure], 2, 2, 4, 12);
        m[2].set(0, 1, false);
        let mut w = HmsaWeights::random(4, 2, &mut SeededRng::new(13)).unwrap().tied();
        for e in &mut w.att {
            for t in e.iter_mut() {
                *t = Tensor::zeros(&[2, 2]);
            }
        }
        let att = hmsa_attention(&f, &m, &g, &w).unwrap();
        for node in &att {
            for p in 0..4 {
                for head in 0..2 {
                    let expect = if p == 1 { [0.5, 0.5, 0.0] } else { [1.0 / 3.0; 3] };
                    for (j, e) in expect.iter().enumerate() {
                        assert!((node.get(&[p, head, j]) - e).abs() < 1e-6);
                    }
                }
            }
        }
    }
}
