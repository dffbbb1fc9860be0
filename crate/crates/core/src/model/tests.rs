use std::f64::consts::LN_2;

use proptest::prelude::*;

use super::*;
use crate::feature::{AgentId, GridSpec};
use crate::geometry::{BoxBEV, Pose2};
use crate::graph::{build_graph, AgentKind, AgentMeta};

#[test]
fn dpe_zero_delay() {
    let p = dpe_encode(0.0, 6);
    assert_eq!(p.data(), &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]);
}

#[test]
fn dpe_direct_evaluation() {
    let p = dpe_encode(100.0, 4);
    assert_eq!(p.data()[0], 100f64.sin() as f32);
    assert_eq!(p.data()[3], (100.0 / 10000f64.powf(1.5)).cos() as f32);
    assert!(p.bit_eq(&dpe_encode(100.0, 4)));
}

fn fmap(seed: u64, h: usize, w: usize, c: usize) -> FeatureMap {
    FeatureMap::new(AgentId(0), 0.0, SeededRng::new(seed).normal_tensor(&[h, w, c], 1.0)).unwrap()
}

#[test]
fn dpe_apply_cases() {
    let f = fmap(1, 2, 3, 4);
    let zero = DpeWeights {
        projection: Dense::zeros(4, 4),
    };
    assert!(dpe_apply(&f, 300.0, &zero).unwrap().data.bit_eq(&f.data));

    let id = DpeWeights {
        projection: Dense::identity(4),
    };
    let g = dpe_apply(&f, 0.0, &id).unwrap();
    let expect = Tensor::from_fn(&[2, 3, 4], |k| f.data.data()[k] + (k % 2) as f32);
    assert!(g.data.max_abs_diff(&expect) < 1e-6);

    let rnd = DpeWeights {
        projection: Dense::random(4, 4, &mut SeededRng::new(2)),
    };
    let a = dpe_apply(&f, 100.0, &rnd).unwrap();
    let b = dpe_apply(&f, 200.0, &rnd).unwrap();
    assert!(a.data.max_abs_diff(&b.data) > 1e-3);
    assert!(matches!(dpe_apply(&f, -1.0, &rnd), Err(Error::Domain(_))));
    assert!(matches!(dpe_apply(&fmap(3, 2, 2, 8), 0.0, &rnd), Err(Error::Dimension(_))));
}

#[test]
fn smooth_l1_cases() {
    let t = |v: f32| Tensor::new(vec![1], vec![v]).unwrap();
    assert_eq!(smooth_l1(&t(1.0), &t(1.0)).unwrap(), 0.0);
    assert_eq!(smooth_l1(&t(0.5), &t(0.0)).unwrap(), 0.125);
    assert_eq!(smooth_l1(&t(2.0), &t(0.0)).unwrap(), 1.5);
    assert!(smooth_l1(&t(1.0), &Tensor::zeros(&[2])).is_err());
}

#[test]
fn focal_cases() {
    let t = |v: &[f32]| Tensor::new(vec![v.len()], v.to_vec()).unwrap();
    let half = focal_loss(&t(&[0.5]), &t(&[1.0]), 0.25, 2.0).unwrap();
    assert!((half - 0.25 * 0.25 * LN_2).abs() < 1e-12);
    let near = focal_loss(&t(&[0.999_999]), &t(&[1.0]), 0.25, 2.0).unwrap();
    assert!(near < 1e-12);
    // γ = 0, α = 0.5 is half the binary cross-entropy.
    let p = [0.2f32, 0.7, 0.9];
    let y = [1.0f32, 0.0, 1.0];
    let bce: f64 = p
        .iter()
        .zip(&y)
        .map(|(&p, &y)| {
            let p = p as f64;
            if y == 1.0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / 3.0;
    let f = focal_loss(&t(&p), &t(&y), 0.5, 0.0).unwrap();
    assert!((f - 0.5 * bce).abs() < 1e-12);
    assert!(matches!(focal_loss(&t(&[1.0]), &t(&[1.0]), 0.25, 2.0), Err(Error::Domain(_))));
    assert!(matches!(focal_loss(&t(&[0.0]), &t(&[0.0]), 0.25, 2.0), Err(Error::Domain(_))));
}

#[test]
fn box_code_round_trip() {
    let grid = GridSpec {
        rows: 8,
        cols: 4,
        cell_size: 1.6,
    };
    let anchors = AnchorConfig::default();
    let a = anchors.anchor(&grid, 3, 1, 1);
    assert_eq!(a.theta, std::f64::consts::FRAC_PI_2);
    let gt = BoxBEV::new(1.3, -2.1, -0.8, 1.8, 4.4, 1.5, 0.3);
    let back = decode_box(&encode_box(&gt, &a), &a);
    for (x, y) in [
        (back.cx, gt.cx),
        (back.cy, gt.cy),
        (back.cz, gt.cz),
        (back.w, gt.w),
        (back.l, gt.l),
        (back.h, gt.h),
        (back.theta, gt.theta),
    ] {
        assert!((x - y).abs() < 1e-5);
    }
    // A zero code reproduces the anchor.
    assert_eq!(decode_box(&[0.0; 7], &a), a);
}

fn lone_graph() -> V2XGraph {
    let ego = AgentMeta {
        id: AgentId(0),
        kind: AgentKind::Vehicle,
        pose: Pose2::identity(),
        capture_time: 0.0,
    };
    build_graph(&[ego], AgentId(0), 70.0).unwrap()
}

#[test]
fn zeroed_blocks_reduce_to_head_on_dpe_input() {
    let cfg = ModelConfig::small();
    let mut w = ModelWeights::random(&cfg, 4).unwrap();
    w.zero_block_outputs();
    let f = fmap(5, 16, 8, cfg.channels);
    let mask = RoiMask::all_true(16, 8);
    let out = v2xvit_forward(std::slice::from_ref(&f), &[mask], &[100.0], &lone_graph(), &w).unwrap();
    let shifted = dpe_apply(&f, 100.0, &w.dpe).unwrap();
    let expect = head_forward(&shifted.data, &w.head).unwrap();
    assert!(out.cls.max_abs_diff(&expect.cls) < 1e-5);
    assert!(out.reg.max_abs_diff(&expect.reg) < 1e-5);
}

#[test]
fn forward_shapes_and_determinism() {
    let cfg = ModelConfig::small();
    let w = ModelWeights::random(&cfg, 6).unwrap();
    let f = fmap(7, 16, 8, cfg.channels);
    let masks = [RoiMask::all_true(16, 8)];
    let a = v2xvit_forward(std::slice::from_ref(&f), &masks, &[0.0], &lone_graph(), &w).unwrap();
    assert_eq!(a.cls.shape(), [16, 8, 2]);
    assert_eq!(a.reg.shape(), [16, 8, 14]);
    let b = v2xvit_forward(std::slice::from_ref(&f), &masks, &[0.0], &lone_graph(), &w).unwrap();
    assert!(a.bit_eq(&b));
    assert!(v2xvit_forward(std::slice::from_ref(&f), &masks, &[], &lone_graph(), &w).is_err());
}

#[test]
fn weights_round_trip() {
    let cfg = ModelConfig::small();
    let w = ModelWeights::random(&cfg, 8).unwrap();
    let bytes = w.to_bytes().unwrap();
    assert_eq!(ModelWeights::from_bytes(&bytes).unwrap(), w);
    assert!(matches!(ModelWeights::from_bytes(&bytes[..100]), Err(Error::Weights(_))));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.safetensors");
    w.save(&path).unwrap();
    assert_eq!(ModelWeights::load(&path).unwrap(), w);
}

#[test]
fn parameter_names_are_unique() {
    let mut w = ModelWeights::random(&ModelConfig::small(), 9).unwrap();
    let mut names: Vec<String> = w.params_mut().into_iter().map(|(n, _)| n).collect();
    let n = names.len();
    assert!(names.contains(&"layers.0.hmsa.query.vehicle.weight".to_string()));
    assert!(names.contains(&"layers.1.hmsa.att.iv.1".to_string()));
    names.sort();
    names.dedup();
    assert_eq!(names.len(), n);
}

#[test]
fn config_validation() {
    assert!(ModelConfig::default().validate().is_ok());
    let mut c = ModelConfig::default();
    c.hmsa_heads = 7;
    assert!(matches!(c.validate(), Err(Error::Config(_))));
    let mut c = ModelConfig::default();
    c.mswin.channels = 128;
    assert!(c.validate().is_err());
}

proptest! {
    #[test]
    fn losses_nonnegative(v in prop::collection::vec((0.001f32..0.999, any::<bool>(), -5.0f32..5.0), 1..20)) {
        let p = Tensor::new(vec![v.len()], v.iter().map(|x| x.0).collect()).unwrap();
        let y = Tensor::new(vec![v.len()], v.iter().map(|x| if x.1 { 1.0 } else { 0.0 }).collect()).unwrap();
        let r = Tensor::new(vec![v.len()], v.iter().map(|x| x.2).collect()).unwrap();
        prop_assert!(focal_loss(&p, &y, 0.25, 2.0).unwrap() >= 0.0);
        prop_assert!(smooth_l1(&r, &p).unwrap() >= 0.0);
    }
}
