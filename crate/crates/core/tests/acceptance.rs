//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use v2xvit_core::channel::{compress, decompress, discretize_delay, sample_total_delay, transmission_time, ChannelParams};
use v2xvit_core::geometry::{rotated_iou, stcm_warp, AffineTransform};
use v2xvit_core::graph::build_graph;
use v2xvit_core::harness::oracle::{hmsa_bruteforce_oracle, windowed_attention_oracle};
use v2xvit_core::harness::{compute_ap, run_pipeline, run_selftest, visible_union, Detection, Mode, ScenarioConfig};
use v2xvit_core::hmsa::{hmsa_forward, hmsa_homogeneous_check, HmsaWeights};
use v2xvit_core::model::{dpe_encode, v2xvit_forward, ModelConfig, ModelWeights};
use v2xvit_core::mswin::{branch_attention, flops_estimate, BranchWeights, FlopsFamily, FlopsInput, RelativeBiasTable};
use v2xvit_core::{AgentId, AgentKind, AgentMeta, BoxBEV, Dense, FeatureMap, GridSpec, Pose2, RoiMask, SeededRng, Tensor, V2XGraph};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn random_case(rng: &mut SeededRng, max_side: usize) -> Result<(V2XGraph, Vec<FeatureMap>, Vec<RoiMask>, usize), String> {
    let n = 1 + (rng.next_u64() % 4) as usize;
    let h = 1 + (rng.next_u64() % max_side as u64) as usize;
    let w = 1 + (rng.next_u64() % max_side as u64) as usize;
    let heads = 1 + (rng.next_u64() % 2) as usize;
    let agents: Vec<AgentMeta> = (0..n as u32)
        .map(|i| AgentMeta {
            id: AgentId(i),
            kind: if i > 0 && rng.uniform() < 0.5 { AgentKind::Infrastructure } else { AgentKind::Vehicle },
            pose: Pose2::new(rng.uniform_range(-3.0, 3.0), rng.uniform_range(-3.0, 3.0), 0.0),
            capture_time: 0.0,
        })
        .collect();
    let g = build_graph(&agents, AgentId(0), 50.0).map_err(err)?;
    let mut feats = Vec::new();
    let mut masks = Vec::new();
    for node in g.nodes() {
        feats.push(FeatureMap::new(node.id, 0.0, rng.normal_tensor(&[h, w, 8], 1.0)).map_err(err)?);
        let cells = (0..h * w).map(|_| node.id == AgentId(0) || rng.uniform() > 0.25).collect();
        masks.push(RoiMask::new(h, w, cells).map_err(err)?);
    }
    Ok((g, feats, masks, heads))
}

fn hmsa_oracle() -> Outcome {
    let mut worst = 0.0f32;
    for seed in 0..20 {
        let mut rng = SeededRng::new(1000 + seed);
        let (g, feats, masks, heads) = random_case(&mut rng, 16)?;
        let w = HmsaWeights::random_with_bias(8, heads, &mut rng).map_err(err)?;
        let fast = hmsa_forward(&feats, &masks, &g, &w).map_err(err)?;
        let slow = hmsa_bruteforce_oracle(&feats, &masks, &g, &w).map_err(err)?;
        for (f, s) in fast.iter().zip(&slow) {
            worst = worst.max(f.data.max_abs_diff(s));
        }
    }
    ensure(worst <= 1e-5, format!("20 instances, max |Δ| = {worst:.2e} (tol 1e-5)"))
}

fn mswin_oracle() -> Outcome {
    let mut worst = 0.0f32;
    for seed in 0..20u64 {
        let mut rng = SeededRng::new(2000 + seed);
        let p = [2, 4][(seed % 2) as usize];
        let heads = 1 + (rng.next_u64() % 2) as usize;
        let h = 1 + (rng.next_u64() % 16) as usize;
        let w = 1 + (rng.next_u64() % 16) as usize;
        let b = BranchWeights {
            window: p,
            heads,
            query: Dense::random_with_bias(8, 8, &mut rng),
            key: Dense::random_with_bias(8, 8, &mut rng),
            value: Dense::random_with_bias(8, 8, &mut rng),
            bias: RelativeBiasTable::new(p, rng.normal_tensor(&[2 * p - 1, 2 * p - 1], 1.0)).map_err(err)?,
        };
        let x = rng.normal_tensor(&[h, w, 8], 1.0);
        let fast = branch_attention(&x, &b).map_err(err)?;
        let slow = windowed_attention_oracle(&x, &b).map_err(err)?;
        worst = worst.max(fast.max_abs_diff(&slow));
    }
    ensure(worst <= 1e-5, format!("20 instances, max |Δ| = {worst:.2e} (tol 1e-5)"))
}

fn homogeneous() -> Outcome {
    let mut worst = 0.0f32;
    for seed in 0..10 {
        let mut rng = SeededRng::new(3000 + seed);
        let (g, feats, masks, heads) = random_case(&mut rng, 8)?;
        let w = HmsaWeights::random_with_bias(8, heads, &mut rng).map_err(err)?.tied();
        let a = hmsa_forward(&feats, &masks, &g, &w).map_err(err)?;
        let b = hmsa_homogeneous_check(&feats, &masks, &g, &w).map_err(err)?;
        for (x, y) in a.iter().zip(&b) {
            worst = worst.max(x.data.max_abs_diff(&y.data));
        }
    }
    ensure(worst <= 1e-5, format!("10 instances, max |Δ| = {worst:.2e} (tol 1e-5)"))
}

fn dpe() -> Outcome {
    let mut worst = 0.0f64;
    for c in [4usize, 256] {
        for dt in [0.0f64, 50.0, 100.0, 400.0] {
            let code = dpe_encode(dt, c);
            for ch in 0..c {
                let angle = dt / 10000f64.powf(2.0 * ch as f64 / c as f64);
                let direct = if ch % 2 == 0 { angle.sin() } else { angle.cos() };
                worst = worst.max((code.data()[ch] as f64 - direct).abs());
            }
        }
    }
    let zero = dpe_encode(0.0, 256);
    let exact = zero.data().chunks(2).all(|p| p == [0.0, 1.0]);
    ensure(
        worst <= 1e-6 && exact,
        format!("max |Δ| = {worst:.2e} (tol 1e-6), Δt=0 gives (0,1,0,1,…): {exact}"),
    )
}

fn stcm() -> Outcome {
    let mut rng = SeededRng::new(5);
    let (h, w, c) = (12usize, 12usize, 4usize);
    let src = FeatureMap::new(AgentId(1), 0.0, rng.normal_tensor(&[h, w, c], 1.0)).map_err(err)?;

    let (out, mask) = stcm_warp(&src, &AffineTransform::identity()).map_err(err)?;
    let identity = out.data.bit_eq(&src.data) && mask.count() == h * w;

    let mut shifts = true;
    for (di, dj) in [(1isize, 0isize), (-1, 0), (0, 1), (0, -1)] {
        let (out, mask) = stcm_warp(&src, &AffineTransform::translation(di as f64, dj as f64)).map_err(err)?;
        for i in 0..h {
            for j in 0..w {
                let (si, sj) = (i as isize + di, j as isize + dj);
                let inside = (0..h as isize).contains(&si) && (0..w as isize).contains(&sj);
                shifts &= mask.get(i, j) == inside;
                let expect = if inside { src.data.pixel(si as usize, sj as usize).to_vec() } else { vec![0.0; c] };
                shifts &= out.data.pixel(i, j) == expect.as_slice();
            }
        }
    }

    // Round trips: a lattice move of random features, a quarter turn of random
    // features, and a general rotation of an affine ramp.
    let interior = |a: &Tensor, b: &Tensor, margin: usize| {
        let mut m = 0.0f32;
        for i in margin..h - margin {
            for j in margin..w - margin {
                for (x, y) in a.pixel(i, j).iter().zip(b.pixel(i, j)) {
                    m = m.max((x - y).abs());
                }
            }
        }
        m
    };
    let mut round = 0.0f32;
    for xf in [AffineTransform::translation(2.0, -3.0), AffineTransform::rotation(std::f64::consts::FRAC_PI_2, 0.0, 0.0)] {
        let (fwd, _) = stcm_warp(&src, &xf).map_err(err)?;
        let (back, _) = stcm_warp(&fwd, &xf.inverse()).map_err(err)?;
        round = round.max(interior(&back.data, &src.data, 3));
    }
    let ramp = src.with_data(Tensor::from_fn(&[h, w, 1], |k| 0.25 * (k / w) as f32 - 0.5 * (k % w) as f32 + 2.0));
    let xf = AffineTransform::rotation(0.35, 0.6, -0.4);
    let (fwd, _) = stcm_warp(&ramp, &xf).map_err(err)?;
    let (back, _) = stcm_warp(&fwd, &xf.inverse()).map_err(err)?;
    round = round.max(interior(&back.data, &ramp.data, 3));

    ensure(
        identity && shifts && round <= 1e-4,
        format!("identity exact: {identity}, ±1-cell shifts exact: {shifts}, interior round trip {round:.2e} (tol 1e-4)"),
    )
}

fn channel() -> Outcome {
    let params = ChannelParams::default();
    let tc = transmission_time(2_162_688, &params).map_err(err)?;
    let bits = params.feature_bits(176, 48, 8);
    let mut rng = SeededRng::new(6);
    let n = 100_000;
    let mut sum = 0.0;
    let mut grid = true;
    for _ in 0..n {
        let d = sample_total_delay(bits, &params, &mut rng).map_err(err)?;
        sum += d.idle_ms;
        grid &= (d.total_ms / 100.0).fract() == 0.0 && d.total_ms >= tc;
    }
    let mean = sum / n as f64;
    let ok = (tc - 80.1).abs() <= 0.05 && bits == 2_162_688 && grid && (mean - 100.0).abs() <= 2.0 && discretize_delay(80.1, 100.0) == 100.0;
    ensure(ok, format!("t_c = {tc:.3} ms, delays on 100 ms grid and ≥ t_c: {grid}, uniform mean = {mean:.2} ms over 1e5"))
}

fn flops() -> Outcome {
    let a = FlopsInput { h: 48, w: 176, c: 256, heads: 16, window: 4, branches: 3, stripe: 7 };
    let b = FlopsInput { h: 32, w: 32, c: 64, heads: 8, window: 2, branches: 2, stripe: 4 };
    // Hand-evaluated closed forms at the two points.
    let expected: [(FlopsFamily, f64, f64); 5] = [
        (FlopsFamily::ViT, 38_755_368_960.0, 150_994_944.0),
        (FlopsFamily::Axial, 2_699_034_624.0, 20_971_520.0),
        (FlopsFamily::Swin, 2_283_798_528.0, 17_301_504.0),
        (FlopsFamily::CSwin, 5_605_687_296.0, 33_554_432.0),
        (FlopsFamily::MSwin, 934_281_216.0, 4_893_354.666_666_667),
    ];
    let mut ok = true;
    for (fam, ea, eb) in expected {
        ok &= flops_estimate(fam, &a).map_err(err)? == ea && flops_estimate(fam, &b).map_err(err)? == eb;
    }
    let per_cell: Vec<f64> = [32usize, 64, 128]
        .iter()
        .map(|&h| flops_estimate(FlopsFamily::MSwin, &FlopsInput { h, ..a }).map(|f| f / (h * a.w) as f64))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let constant = per_cell.iter().all(|&v| v == per_cell[0]);
    ensure(ok && constant, format!("10 closed forms exact: {ok}, MSwin FLOPs/HW constant over H ∈ {{32,64,128}}: {constant}"))
}

fn shapes() -> Outcome {
    let cfg = ModelConfig::default();
    let w = ModelWeights::random(&cfg, 8).map_err(err)?;
    let grid = GridSpec::from_range([-140.0, 140.0], [-40.0, 40.0], 0.4, 4, 16).map_err(err)?;
    let mut rng = SeededRng::new(8);
    let x = FeatureMap::new(AgentId(0), 0.0, rng.normal_tensor(&[grid.rows, grid.cols, 256], 1.0)).map_err(err)?;
    let small = compress(&x, &w.compressor).map_err(err)?;
    let back = decompress(&small, &w.compressor).map_err(err)?;
    let ego = AgentMeta { id: AgentId(0), kind: AgentKind::Vehicle, pose: Pose2::identity(), capture_time: 0.0 };
    let g = build_graph(&[ego], AgentId(0), 70.0).map_err(err)?;
    let out = v2xvit_forward(&[x], &[RoiMask::all_true(grid.rows, grid.cols)], &[0.0], &g, &w).map_err(err)?;
    let ok = out.cls.shape() == [176, 48, 2]
        && out.reg.shape() == [176, 48, 14]
        && small.dims() == [176, 48, 8]
        && back.dims() == [176, 48, 256];
    ensure(
        ok,
        format!(
            "cls {:?}, reg {:?}, compression 256 → {} → {}",
            out.cls.shape(),
            out.reg.shape(),
            small.dims()[2],
            back.dims()[2]
        ),
    )
}

fn metrics() -> Outcome {
    let gt = BoxBEV::bev(0.0, 0.0, 2.0, 4.0, 0.0);
    let fp = BoxBEV::bev(40.0, 10.0, 2.0, 4.0, 0.0);
    let det = |bbox, score| Detection { bbox, score };
    let aps = [
        compute_ap(&[det(gt, 0.95)], &[gt], 0.5),
        compute_ap(&[det(gt, 0.9), det(fp, 0.8)], &[gt], 0.5),
        compute_ap(&[det(fp, 0.9), det(gt, 0.8)], &[gt], 0.5),
    ];
    let sq = BoxBEV::bev(0.0, 0.0, 2.0, 2.0, 0.0);
    let ious = [
        rotated_iou(&sq, &sq),
        rotated_iou(&sq, &BoxBEV::bev(10.0, 0.0, 2.0, 2.0, 0.0)),
        rotated_iou(&sq, &BoxBEV::bev(1.0, 0.0, 2.0, 2.0, 0.0)),
    ];
    let ok = aps.iter().zip([1.0, 1.0, 0.5]).all(|(a, e)| (a - e).abs() <= 1e-9)
        && ious.iter().zip([1.0, 0.0, 1.0 / 3.0]).all(|(a, e)| (a - e).abs() <= 1e-9);
    ensure(ok, format!("AP {aps:?}, IoU {ious:?}"))
}

fn pipeline_model() -> Result<ModelWeights, String> {
    ModelWeights::random(&ModelConfig::small(), 10).map_err(err)
}

fn noise_free() -> Outcome {
    let w = pipeline_model()?;
    let mut equal = 0;
    let mut fused = 0;
    for seed in 0..5 {
        let mut cfg = ScenarioConfig::synthetic(100 + seed, 4, true, 12);
        cfg.channel = ChannelParams { compression_rate: w.compressor.rate(), ..ChannelParams::ideal() };
        let perfect = run_pipeline(&cfg, &w, Mode::Perfect).map_err(err)?;
        let noisy = run_pipeline(&cfg, &w, Mode::Noisy).map_err(err)?;
        equal += perfect.output.bit_eq(&noisy.output) as usize;
        fused += perfect.graph.len();
    }
    ensure(equal == 5, format!("{equal}/5 scenarios bitwise identical ({fused} agents fused in total)"))
}

fn visibility() -> Outcome {
    let mut ok = true;
    let mut counts = Vec::new();
    for seed in 0..10 {
        let cfg = ScenarioConfig::synthetic(200 + seed, 4, true, 20);
        let mut prev = 0;
        let mut seq = Vec::new();
        for n in 1..=cfg.agents.len() {
            let agents: Vec<_> = cfg.agents[..n].iter().collect();
            let count = visible_union(&cfg, &agents).into_iter().filter(|&v| v).count();
            ok &= count >= prev;
            prev = count;
            seq.push(count);
        }
        counts.push(seq);
    }
    ensure(ok, format!("visible counts per added agent: {counts:?}"))
}

fn determinism() -> Outcome {
    let start = Instant::now();
    let a = run_selftest(42);
    let first = start.elapsed();
    let b = run_selftest(42);
    let second = start.elapsed() - first;
    let slowest = first.max(second);
    let ja = serde_json::to_string(&a).map_err(err)?;
    let jb = serde_json::to_string(&b).map_err(err)?;
    let failed: Vec<&str> = a.failures().map(|c| c.name.as_str()).collect();
    ensure(
        ja == jb && a.passed && slowest < Duration::from_secs(120),
        format!(
            "two runs identical: {}, all {} checks passed: {} {failed:?}, slowest run {:.1} s (limit 120 s)",
            ja == jb,
            a.checks.len(),
            a.passed,
            slowest.as_secs_f64()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome, Option<Duration>); 12] = [
        ("HMSA oracle equivalence", hmsa_oracle, Some(Duration::from_secs(10))),
        ("MSwin branch oracle equivalence", mswin_oracle, Some(Duration::from_secs(10))),
        ("homogeneous reduction", homogeneous, None),
        ("DPE closed form", dpe, None),
        ("STCM warp", stcm, None),
        ("channel arithmetic", channel, None),
        ("FLOPs formulas", flops, None),
        ("shape contract", shapes, None),
        ("metrics examples", metrics, None),
        ("noise-free reduction", noise_free, None),
        ("visibility-union monotonicity", visibility, None),
        ("selftest determinism", determinism, None),
    ];
    let mut failures = 0;
    for (k, (name, check, limit)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut result = check();
        let elapsed = start.elapsed();
        if let (Ok(detail), Some(limit)) = (&result, limit) {
            if elapsed > *limit {
                result = Err(format!("{detail}; took {:.2} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs()));
            }
        }
        let (tag, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        failures += result.is_err() as usize;
        println!("{tag} {:>2} {name}: {detail} [{:.2} s]", k + 1, elapsed.as_secs_f64());
    }
    println!("{} of 12 criteria passed", 12 - failures);
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
