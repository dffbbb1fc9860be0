//! Oracle and invariant checks bundled into one deterministic report.
//!
//! Every check derives its randomness from the master seed and reports only
//! counts and error magnitudes, so two runs with the same seed serialize to
//! identical bytes.

use serde::{Deserialize, Serialize};

use super::metrics::{compute_ap, Detection};
use super::oracle::{hmsa_bruteforce_oracle, windowed_attention_oracle};
use super::pipeline::{run_pipeline, Mode};
use super::scenario::ScenarioConfig;
use super::sensor::visible_union;
use crate::channel::{compress, decompress, discretize_delay, sample_total_delay, transmission_time, ChannelParams};
use crate::error::Result;
use crate::feature::{AgentId, FeatureMap, GridSpec, RoiMask};
use crate::geometry::{rotated_iou, stcm_warp, AffineTransform, BoxBEV, Pose2};
use crate::graph::{build_graph, AgentKind, AgentMeta, EdgeKind, V2XGraph};
use crate::hmsa::{hmsa_forward, hmsa_homogeneous_check, HmsaWeights};
use crate::model::{dpe_apply, dpe_encode, focal_loss, head_forward, smooth_l1, v2xvit_forward, ModelConfig, ModelWeights};
use crate::mswin::{branch_attention, flops_estimate, mswin_forward, BranchWeights, FlopsFamily, FlopsInput, RelativeBiasTable};
use crate::numerics::{layernorm, matmul, Dense, SeededRng, Tensor};

/// Outcome of one named check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelftestReport {
    pub seed: u64,
    pub passed: bool,
    pub checks: Vec<SelftestCheck>,
}

impl SelftestReport {
    pub fn failures(&self) -> impl Iterator<Item = &SelftestCheck> {
        self.checks.iter().filter(|c| !c.passed)
    }
}

type CheckFn = fn(u64) -> Result<(bool, String)>;

const CHECKS: &[(&str, CheckFn)] = &[
    ("hmsa-oracle", hmsa_oracle),
    ("window-oracle", window_oracle),
    ("hmsa-homogeneous", hmsa_homogeneous),
    ("dpe-closed-form", dpe_closed_form),
    ("stcm-lattice", stcm_lattice),
    ("channel-arithmetic", channel_arithmetic),
    ("flops-scaling", flops_scaling),
    ("default-shapes", default_shapes),
    ("metric-examples", metric_examples),
    ("loss-nonnegative", loss_nonnegative),
    ("block-residual", block_residual),
    ("single-agent", single_agent),
    ("noise-free-reduction", noise_free_reduction),
    ("visibility-monotone", visibility_monotone),
    ("pipeline-determinism", pipeline_determinism),
];

/// Runs every check; a check that errors counts as failed.
pub fn run_selftest(seed: u64) -> SelftestReport {
    let checks: Vec<SelftestCheck> = CHECKS
        .iter()
        .enumerate()
        .map(|(k, (name, f))| {
            let (passed, detail) = match f(SeededRng::derive(seed, k as u64).seed()) {
                Ok(r) => r,
                Err(e) => (false, format!("error: {e}")),
            };
            SelftestCheck {
                name: name.to_string(),
                passed,
                detail,
            }
        })
        .collect();
    SelftestReport {
        seed,
        passed: checks.iter().all(|c| c.passed),
        checks,
    }
}

fn ids(n: usize) -> impl Iterator<Item = AgentId> {
    (0..n as u32).map(AgentId)
}

/// A random co-located agent set with at least one vehicle as ego.
fn random_graph(n: usize, rng: &mut SeededRng) -> Result<V2XGraph> {
    let agents: Vec<AgentMeta> = ids(n)
        .map(|id| AgentMeta {
            id,
            kind: if id.0 > 0 && rng.uniform() < 0.5 {
                AgentKind::Infrastructure
            } else {
                AgentKind::Vehicle
            },
            pose: Pose2::new(rng.uniform_range(-5.0, 5.0), rng.uniform_range(-5.0, 5.0), 0.0),
            capture_time: 0.0,
        })
        .collect();
    build_graph(&agents, AgentId(0), 100.0)
}

fn random_inputs(g: &V2XGraph, h: usize, w: usize, c: usize, rng: &mut SeededRng) -> Result<(Vec<FeatureMap>, Vec<RoiMask>)> {
    let mut feats = Vec::new();
    let mut masks = Vec::new();
    for node in g.nodes() {
        feats.push(FeatureMap::new(node.id, 0.0, rng.normal_tensor(&[h, w, c], 1.0))?);
        // Non-ego maps lose a few cells; the ego keeps all so no cell is empty.
        let cells = (0..h * w).map(|_| node.id == g.ego() || rng.uniform() > 0.2).collect();
        masks.push(RoiMask::new(h, w, cells)?);
    }
    Ok((feats, masks))
}

fn small_dims(rng: &mut SeededRng, hi: usize) -> (usize, usize) {
    (1 + (rng.next_u64() % hi as u64) as usize, 1 + (rng.next_u64() % hi as u64) as usize)
}

fn hmsa_oracle(seed: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f32;
    for k in 0..20 {
        let mut rng = SeededRng::derive(seed, k);
        let n = 1 + (rng.next_u64() % 4) as usize;
        let heads = 1 + (rng.next_u64() % 2) as usize;
        let (h, w) = small_dims(&mut rng, 16);
        let g = random_graph(n, &mut rng)?;
        let (feats, masks) = random_inputs(&g, h, w, 8, &mut rng)?;
        let wts = HmsaWeights::random_with_bias(8, heads, &mut rng)?;
        let fast = hmsa_forward(&feats, &masks, &g, &wts)?;
        let slow = hmsa_bruteforce_oracle(&feats, &masks, &g, &wts)?;
        for (f, s) in fast.iter().zip(&slow) {
            worst = worst.max(f.data.max_abs_diff(s));
        }
    }
    Ok((worst <= 1e-5, format!("20 cases, max |Δ| = {worst:.3e}")))
}

fn window_oracle(seed: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f32;
    for k in 0..20 {
        let mut rng = SeededRng::derive(seed, k);
        let p = if k % 2 == 0 { 2 } else { 4 };
        let heads = 1 + (rng.next_u64() % 2) as usize;
        let (h, w) = small_dims(&mut rng, 16);
        let mut b = BranchWeights::random(8, p, heads, &mut rng);
        for d in [&mut b.query, &mut b.key, &mut b.value] {
            *d = Dense::random_with_bias(8, 8, &mut rng);
        }
        b.bias = RelativeBiasTable::new(p, rng.normal_tensor(&[2 * p - 1, 2 * p - 1], 1.0))?;
        let x = rng.normal_tensor(&[h, w, 8], 1.0);
        worst = worst.max(branch_attention(&x, &b)?.max_abs_diff(&windowed_attention_oracle(&x, &b)?));
    }
    Ok((worst <= 1e-5, format!("20 cases, max |Δ| = {worst:.3e}")))
}

fn hmsa_homogeneous(seed: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f32;
    for k in 0..10 {
        let mut rng = SeededRng::derive(seed, k);
        let n = 1 + (rng.next_u64() % 4) as usize;
        let heads = 1 + (rng.next_u64() % 2) as usize;
        let (h, w) = small_dims(&mut rng, 8);
        let g = random_graph(n, &mut rng)?;
        let (feats, masks) = random_inputs(&g, h, w, 8, &mut rng)?;
        let wts = HmsaWeights::random_with_bias(8, heads, &mut rng)?.tied();
        let a = hmsa_forward(&feats, &masks, &g, &wts)?;
        let b = hmsa_homogeneous_check(&feats, &masks, &g, &wts)?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max(x.data.max_abs_diff(&y.data));
        }
    }
    Ok((worst <= 1e-5, format!("10 cases, max |Δ| = {worst:.3e}")))
}

fn dpe_closed_form(_: u64) -> Result<(bool, String)> {
    let mut worst = 0.0f64;
    for c in [4usize, 256] {
        for dt in [0.0, 50.0, 100.0, 400.0] {
            let code = dpe_encode(dt, c);
            for (ch, &v) in code.data().iter().enumerate() {
                let arg = dt / 10000f64.powf(2.0 * ch as f64 / c as f64);
                let expect = if ch % 2 == 0 { arg.sin() } else { arg.cos() };
                worst = worst.max((v as f64 - expect).abs());
            }
        }
    }
    let zero_ok = dpe_encode(0.0, 256)
        .data()
        .iter()
        .enumerate()
        .all(|(ch, &v)| v == if ch % 2 == 0 { 0.0 } else { 1.0 });
    Ok((worst <= 1e-6 && zero_ok, format!("max |Δ| = {worst:.3e}, Δt=0 pattern exact: {zero_ok}")))
}

fn stcm_lattice(seed: u64) -> Result<(bool, String)> {
    let mut rng = SeededRng::new(seed);
    let (h, w, c) = (12, 10, 3);
    let src = FeatureMap::new(AgentId(1), 0.0, rng.normal_tensor(&[h, w, c], 1.0))?;
    let (same, mask) = stcm_warp(&src, &AffineTransform::identity())?;
    let identity_ok = same.data.bit_eq(&src.data) && mask.count() == h * w;

    // Output (i, j) samples source (i + 1, j - 1).
    let (shifted, mask) = stcm_warp(&src, &AffineTransform::translation(1.0, -1.0))?;
    let mut shift_ok = true;
    for i in 0..h {
        for j in 0..w {
            let inside = i + 1 < h && j >= 1;
            shift_ok &= mask.get(i, j) == inside;
            let expect: Vec<f32> = if inside {
                src.data.pixel(i + 1, j - 1).to_vec()
            } else {
                vec![0.0; c]
            };
            shift_ok &= shifted.data.pixel(i, j) == expect.as_slice();
        }
    }

    // An affine field survives warp then inverse warp exactly up to rounding.
    let ramp = Tensor::from_fn(&[h, w, 1], |k| {
        let (i, j) = ((k / w) as f32, (k % w) as f32);
        0.3 * i - 0.7 * j + 1.0
    });
    let ramp = src.with_data(ramp);
    let xf = AffineTransform::rotation(0.3, 0.4, -0.2);
    let (fwd, _) = stcm_warp(&ramp, &xf)?;
    let (back, _) = stcm_warp(&fwd, &xf.inverse())?;
    let mut round_trip = 0.0f32;
    for i in 3..h - 3 {
        for j in 3..w - 3 {
            round_trip = round_trip.max((back.data.get(&[i, j, 0]) - ramp.data.get(&[i, j, 0])).abs());
        }
    }
    Ok((
        identity_ok && shift_ok && round_trip <= 1e-4,
        format!("identity {identity_ok}, shift {shift_ok}, interior round trip {round_trip:.3e}"),
    ))
}

fn channel_arithmetic(seed: u64) -> Result<(bool, String)> {
    let params = ChannelParams::default();
    let bits = params.feature_bits(176, 48, 256 / params.compression_rate);
    let tc = transmission_time(bits, &params)?;
    let mut rng = SeededRng::new(seed);
    let draws = 100_000;
    let mut idle_sum = 0.0;
    let mut grid_ok = true;
    for _ in 0..draws {
        let d = sample_total_delay(bits, &params, &mut rng)?;
        idle_sum += d.idle_ms;
        let steps = d.total_ms / params.frame_period_ms;
        grid_ok &= steps == steps.round() && d.total_ms >= tc;
    }
    let mean = idle_sum / draws as f64;
    let ok = bits == 2_162_688 && (tc - 80.1).abs() <= 0.05 && grid_ok && (mean - 100.0).abs() <= 2.0;
    Ok((
        ok && discretize_delay(tc, 100.0) == 100.0,
        format!("{bits} bits, t_c = {tc:.4} ms, idle mean = {mean:.3} ms, on frame grid: {grid_ok}"),
    ))
}

fn flops_scaling(_: u64) -> Result<(bool, String)> {
    let mut ok = true;
    for fam in [FlopsFamily::Swin, FlopsFamily::MSwin] {
        let per_cell: Vec<f64> = [32usize, 64, 128]
            .iter()
            .map(|&h| {
                let p = FlopsInput { h, ..FlopsInput::default() };
                flops_estimate(fam, &p).map(|f| f / (h * p.w) as f64)
            })
            .collect::<Result<_>>()?;
        ok &= per_cell.iter().all(|&v| v == per_cell[0]);
    }
    // Global attention grows faster than linearly.
    let vit = |h| flops_estimate(FlopsFamily::ViT, &FlopsInput { h, ..FlopsInput::default() });
    ok &= vit(64)? / 64.0 > vit(32)? / 32.0;
    Ok((ok, format!("windowed families linear in HW: {ok}")))
}

fn default_shapes(seed: u64) -> Result<(bool, String)> {
    let cfg = ModelConfig::default();
    let w = ModelWeights::random(&cfg, seed)?;
    let grid = GridSpec::from_range([-140.0, 140.0], [-40.0, 40.0], 0.4, 4, 16)?;
    let mut rng = SeededRng::new(seed);
    let x = FeatureMap::new(AgentId(0), 0.0, rng.normal_tensor(&[grid.rows, grid.cols, cfg.channels], 1.0))?;
    let packed = compress(&x, &w.compressor)?;
    let unpacked = decompress(&packed, &w.compressor)?;
    let g = build_graph(&[meta(0, AgentKind::Vehicle)], AgentId(0), 70.0)?;
    let out = v2xvit_forward(&[x], &[RoiMask::all_true(grid.rows, grid.cols)], &[0.0], &g, &w)?;
    let ok = out.cls.shape() == [176, 48, 2]
        && out.reg.shape() == [176, 48, 14]
        && packed.dims() == [176, 48, 8]
        && unpacked.dims() == [176, 48, 256];
    Ok((
        ok,
        format!(
            "cls {:?}, reg {:?}, compressed {:?}, restored {:?}",
            out.cls.shape(),
            out.reg.shape(),
            packed.dims(),
            unpacked.dims()
        ),
    ))
}

fn meta(id: u32, kind: AgentKind) -> AgentMeta {
    AgentMeta {
        id: AgentId(id),
        kind,
        pose: Pose2::identity(),
        capture_time: 0.0,
    }
}

fn metric_examples(_: u64) -> Result<(bool, String)> {
    let gt = BoxBEV::bev(0.0, 0.0, 2.0, 4.0, 0.0);
    let far = BoxBEV::bev(50.0, 0.0, 2.0, 4.0, 0.0);
    let d = |b: BoxBEV, score| Detection { bbox: b, score };
    let aps = [
        compute_ap(&[d(gt, 0.9)], &[gt], 0.5),
        compute_ap(&[d(gt, 0.9), d(far, 0.8)], &[gt], 0.5),
        compute_ap(&[d(far, 0.9), d(gt, 0.8)], &[gt], 0.5),
    ];
    let unit = BoxBEV::bev(0.0, 0.0, 2.0, 2.0, 0.0);
    let ious = [
        rotated_iou(&unit, &unit),
        rotated_iou(&unit, &BoxBEV::bev(5.0, 0.0, 2.0, 2.0, 0.0)),
        rotated_iou(&unit, &BoxBEV::bev(1.0, 0.0, 2.0, 2.0, 0.0)),
    ];
    let ok = aps.iter().zip([1.0, 1.0, 0.5]).all(|(a, e)| (a - e).abs() <= 1e-9)
        && ious.iter().zip([1.0, 0.0, 1.0 / 3.0]).all(|(a, e)| (a - e).abs() <= 1e-9);
    Ok((ok, format!("AP {aps:?}, IoU {ious:?}")))
}

fn loss_nonnegative(seed: u64) -> Result<(bool, String)> {
    let mut rng = SeededRng::new(seed);
    let mut ok = true;
    for _ in 0..20 {
        let p = rng.uniform_tensor(&[32], 0.01, 0.99);
        let labels = Tensor::from_fn(&[32], |_| if rng.uniform() < 0.5 { 0.0 } else { 1.0 });
        ok &= focal_loss(&p, &labels, 0.25, 2.0)? >= 0.0;
        let a = rng.normal_tensor(&[32], 2.0);
        let b = rng.normal_tensor(&[32], 2.0);
        ok &= smooth_l1(&a, &b)? > 0.0 && smooth_l1(&a, &a)? == 0.0;
    }
    Ok((ok, format!("20 random draws nonnegative: {ok}")))
}

fn small_scene_inputs(cfg: &ModelConfig, n: usize, seed: u64) -> Result<(Vec<FeatureMap>, Vec<RoiMask>, V2XGraph)> {
    let mut rng = SeededRng::new(seed);
    let g = random_graph(n, &mut rng)?;
    let (f, m) = random_inputs(&g, 20, 12, cfg.channels, &mut rng)?;
    Ok((f, m, g))
}

fn block_residual(seed: u64) -> Result<(bool, String)> {
    let cfg = ModelConfig::small();
    let mut w = ModelWeights::random(&cfg, seed)?;
    w.zero_block_outputs();
    let (feats, masks, g) = small_scene_inputs(&cfg, 3, seed)?;
    let delays = [0.0, 100.0, 200.0];
    let out = v2xvit_forward(&feats, &masks, &delays, &g, &w)?;
    let shifted = dpe_apply(&feats[0], 0.0, &w.dpe)?;
    let expect = head_forward(&shifted.data, &w.head)?;
    let ok = out.bit_eq(&expect);
    Ok((ok, format!("zeroed blocks give head(DPE(ego)) bitwise: {ok}")))
}

/// One block for a lone vehicle, with attention over itself written out.
fn lone_block(z: &Tensor, w: &crate::model::LayerWeights, cfg: &ModelConfig) -> Result<Tensor> {
    let [h, wd, c] = z.dims3()?;
    let heads = w.hmsa.heads;
    let d = c / heads;
    let ln = layernorm(z, &w.norm1.gamma, &w.norm1.beta, cfg.ln_eps)?;
    let msg = w.hmsa.message[0].forward(&ln)?.reshape(&[h * wd, c])?;
    let mut concat = Tensor::zeros(&[h * wd, c]);
    for m in 0..heads {
        let block = Tensor::from_fn(&[h * wd, d], |k| msg.data()[(k / d) * c + m * d + k % d]);
        let y = matmul(&block, &w.hmsa.msg[EdgeKind::VV.index()][m])?;
        for (k, &v) in y.data().iter().enumerate() {
            concat.data_mut()[(k / d) * c + m * d + k % d] = v;
        }
    }
    let fused = w.hmsa.output[0].forward(&concat.reshape(&[h, wd, c])?)?;
    let mid = z.add(&mswin_forward(&fused, &cfg.mswin, &w.mswin)?)?;
    let ln2 = layernorm(&mid, &w.norm2.gamma, &w.norm2.beta, cfg.ln_eps)?;
    mid.add(&w.mlp.forward(&ln2)?)
}

fn single_agent(seed: u64) -> Result<(bool, String)> {
    let cfg = ModelConfig::small();
    let w = ModelWeights::random(&cfg, seed)?;
    let (feats, masks, g) = small_scene_inputs(&cfg, 1, seed)?;
    let out = v2xvit_forward(&feats, &masks, &[0.0], &g, &w)?;
    let mut z = dpe_apply(&feats[0], 0.0, &w.dpe)?.data;
    for layer in &w.layers {
        z = lone_block(&z, layer, &cfg)?;
    }
    let expect = head_forward(&z, &w.head)?;
    let diff = out.cls.max_abs_diff(&expect.cls).max(out.reg.max_abs_diff(&expect.reg));
    Ok((diff <= 1e-4, format!("lone-agent forward vs self-attention path: max |Δ| = {diff:.3e}")))
}

fn pipeline_weights(seed: u64) -> Result<ModelWeights> {
    ModelWeights::random(&ModelConfig::small(), seed)
}

fn small_channel(base: ChannelParams) -> ChannelParams {
    ChannelParams {
        compression_rate: ModelConfig::small().compression_rate,
        ..base
    }
}

fn noise_free_reduction(seed: u64) -> Result<(bool, String)> {
    let w = pipeline_weights(seed)?;
    let mut equal = 0;
    for k in 0..5 {
        let mut cfg = ScenarioConfig::synthetic(SeededRng::derive(seed, k).seed(), 3, true, 10);
        cfg.channel = small_channel(ChannelParams::ideal());
        let perfect = run_pipeline(&cfg, &w, Mode::Perfect)?;
        let noisy = run_pipeline(&cfg, &w, Mode::Noisy)?;
        equal += perfect.output.bit_eq(&noisy.output) as usize;
    }
    Ok((equal == 5, format!("{equal}/5 scenarios bitwise equal")))
}

fn visibility_monotone(seed: u64) -> Result<(bool, String)> {
    let mut ok = true;
    let mut gained = 0;
    for k in 0..10 {
        let cfg = ScenarioConfig::synthetic(SeededRng::derive(seed, k).seed(), 4, true, 16);
        let mut prev = 0;
        for n in 1..=cfg.agents.len() {
            let agents: Vec<_> = cfg.agents[..n].iter().collect();
            let count = visible_union(&cfg, &agents).iter().filter(|&&v| v).count();
            ok &= count >= prev;
            gained += (count > prev && n > 1) as usize;
            prev = count;
        }
    }
    Ok((ok, format!("10 scenarios nondecreasing: {ok}, {gained} agent additions revealed boxes")))
}

fn pipeline_determinism(seed: u64) -> Result<(bool, String)> {
    let w = pipeline_weights(seed)?;
    let mut cfg = ScenarioConfig::synthetic(seed, 3, true, 10);
    cfg.channel = small_channel(ChannelParams::default());
    let a = run_pipeline(&cfg, &w, Mode::Noisy)?;
    let b = run_pipeline(&cfg, &w, Mode::Noisy)?;
    let same = a.output.bit_eq(&b.output) && a.links == b.links;
    let on_grid = a.links.iter().all(|l| l.delay.total_ms % 100.0 == 0.0);
    Ok((same && on_grid, format!("rerun bitwise equal: {same}, delays on frame grid: {on_grid}")))
}
