use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::GridSpec;
use crate::geometry::{rotated_iou, BoxBEV};
use crate::model::{decode_box, AnchorConfig, DetectionOutput, BOX_CODE};
use crate::numerics::sigmoid;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    #[serde(rename = "box")]
    pub bbox: BoxBEV,
    pub score: f64,
}

/// Settings for turning head maps into boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decoder {
    pub grid: GridSpec,
    pub anchors: AnchorConfig,
    pub score_thresh: f64,
    pub iou_thresh: f64,
    /// Highest-scoring candidates kept before suppression.
    pub max_candidates: usize,
}

impl Decoder {
    pub fn new(grid: GridSpec, anchors: AnchorConfig) -> Self {
        Decoder {
            grid,
            anchors,
            score_thresh: 0.25,
            iou_thresh: 0.15,
            max_candidates: 500,
        }
    }
}

/// Descending score, then a fixed order on box parameters so ties sort the
/// same way whatever the input order.
fn rank(a: &Detection, b: &Detection) -> Ordering {
    let key = |d: &Detection| [d.bbox.cx, d.bbox.cy, d.bbox.cz, d.bbox.w, d.bbox.l, d.bbox.h, d.bbox.theta];
    b.score
        .total_cmp(&a.score)
        .then_with(|| {
            key(a)
                .iter()
                .zip(key(b))
                .map(|(x, y)| x.total_cmp(&y))
                .find(|o| o.is_ne())
                .unwrap_or(Ordering::Equal)
        })
}

fn may_overlap(a: &BoxBEV, b: &BoxBEV) -> bool {
    let ra = a.w.hypot(a.l) / 2.0;
    let rb = b.w.hypot(b.l) / 2.0;
    (a.cx - b.cx).hypot(a.cy - b.cy) < ra + rb
}

/// Greedy suppression: keep the best box, drop every later one overlapping a
/// kept box by more than `iou_thresh`.
pub fn nms(mut dets: Vec<Detection>, iou_thresh: f64) -> Vec<Detection> {
    dets.sort_by(rank);
    let mut kept: Vec<Detection> = Vec::new();
    for d in dets {
        let suppressed = kept
            .iter()
            .any(|k| may_overlap(&k.bbox, &d.bbox) && rotated_iou(&k.bbox, &d.bbox) > iou_thresh);
        if !suppressed {
            kept.push(d);
        }
    }
    kept
}

/// Decodes every anchor above the score threshold and suppresses duplicates.
pub fn decode_and_nms(out: &DetectionOutput, dec: &Decoder) -> Result<Vec<Detection>> {
    let (h, w) = (dec.grid.rows, dec.grid.cols);
    let a = dec.anchors.count();
    if out.cls.shape() != [h, w, a] || out.reg.shape() != [h, w, BOX_CODE * a] {
        return Err(Error::dim(format!(
            "head maps {:?}/{:?} do not match a {h}×{w} grid with {a} anchors",
            out.cls.shape(),
            out.reg.shape()
        )));
    }
    if !(0.0..=1.0).contains(&dec.score_thresh) || !(0.0..=1.0).contains(&dec.iou_thresh) {
        return Err(Error::config("thresholds must lie in [0, 1]"));
    }
    let mut cands = Vec::new();
    for r in 0..h {
        for c in 0..w {
            for k in 0..a {
                let score = sigmoid(out.cls.get(&[r, c, k])) as f64;
                if score < dec.score_thresh {
                    continue;
                }
                let base = (r * w + c) * BOX_CODE * a + k * BOX_CODE;
                let code = &out.reg.data()[base..base + BOX_CODE];
                if code.iter().any(|v| !v.is_finite() || v.abs() > 20.0) {
                    continue;
                }
                let anchor = dec.anchors.anchor(&dec.grid, r, c, k);
                cands.push(Detection {
                    bbox: decode_box(code, &anchor),
                    score,
                });
            }
        }
    }
    cands.sort_by(rank);
    cands.truncate(dec.max_candidates);
    Ok(nms(cands, dec.iou_thresh))
}

/// One point of a precision-recall curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub recall: f64,
    pub precision: f64,
}

/// Precision and recall after each detection in rank order.
///
/// Each detection claims the unmatched ground truth it overlaps most, if that
/// overlap reaches `iou_thresh`.
pub fn precision_recall(dets: &[Detection], gts: &[BoxBEV], iou_thresh: f64) -> Vec<PrPoint> {
    let mut order: Vec<Detection> = dets.to_vec();
    order.sort_by(rank);
    let mut matched = vec![false; gts.len()];
    let mut tp = 0usize;
    let mut curve = Vec::with_capacity(order.len());
    for (n, d) in order.iter().enumerate() {
        let best = gts
            .iter()
            .enumerate()
            .filter(|&(g, _)| !matched[g])
            .map(|(g, gt)| (g, rotated_iou(&d.bbox, gt)))
            .max_by(|x, y| x.1.total_cmp(&y.1).then(y.0.cmp(&x.0)));
        if let Some((g, iou)) = best {
            if iou >= iou_thresh {
                matched[g] = true;
                tp += 1;
            }
        }
        curve.push(PrPoint {
            recall: if gts.is_empty() { 0.0 } else { tp as f64 / gts.len() as f64 },
            precision: tp as f64 / (n + 1) as f64,
        });
    }
    curve
}

/// All-point interpolated average precision; 0 when there is no ground truth.
pub fn compute_ap(dets: &[Detection], gts: &[BoxBEV], iou_thresh: f64) -> f64 {
    if gts.is_empty() {
        return 0.0;
    }
    let curve = precision_recall(dets, gts, iou_thresh);
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (k, pt) in curve.iter().enumerate() {
        if pt.recall > prev_recall {
            let best = curve[k..].iter().map(|p| p.precision).fold(0.0, f64::max);
            ap += (pt.recall - prev_recall) * best;
            prev_recall = pt.recall;
        }
    }
    ap
}

/// Detection quality of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ap_50: f64,
    pub ap_70: f64,
    pub detections: usize,
    pub ground_truth: usize,
    pub pr_50: Vec<PrPoint>,
    pub pr_70: Vec<PrPoint>,
}

impl EvalReport {
    pub fn new(dets: &[Detection], gts: &[BoxBEV]) -> Self {
        EvalReport {
            ap_50: compute_ap(dets, gts, 0.5),
            ap_70: compute_ap(dets, gts, 0.7),
            detections: dets.len(),
            ground_truth: gts.len(),
            pr_50: precision_recall(dets, gts, 0.5),
            pr_70: precision_recall(dets, gts, 0.7),
        }
    }
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn det(x: f64, score: f64) -> Detection {
        Detection {
            bbox: BoxBEV::bev(x, 0.0, 2.0, 4.0, 0.0),
            score,
        }
    }

    #[test]
    fn ap_examples() {
        let gt = [det(0.0, 1.0).bbox];
        assert_eq!(compute_ap(&[det(0.0, 0.9)], &gt, 0.5), 1.0);
        assert_eq!(compute_ap(&[det(0.0, 0.9), det(50.0, 0.8)], &gt, 0.5), 1.0);
        assert_eq!(compute_ap(&[det(50.0, 0.9), det(0.0, 0.8)], &gt, 0.5), 0.5);
        assert_eq!(compute_ap(&[], &gt, 0.5), 0.0);
        assert_eq!(compute_ap(&[det(0.0, 0.9)], &[], 0.5), 0.0);
    }

    #[test]
    fn duplicate_matches_count_once() {
        let gt = [det(0.0, 1.0).bbox];
        let curve = precision_recall(&[det(0.0, 0.9), det(0.0, 0.8)], &gt, 0.5);
        assert_eq!(curve[1].recall, 1.0);
        assert_eq!(curve[1].precision, 0.5);
    }

    #[test]
    fn nms_examples() {
        let kept = nms(vec![det(0.0, 0.8), det(0.0, 0.9)], 0.5);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].score, 0.9);
        assert_eq!(nms(vec![det(0.0, 0.8), det(20.0, 0.9)], 0.5).len(), 2);
        assert!(nms(Vec::new(), 0.5).is_empty());
    }

    fn arb_dets() -> impl Strategy<Value = Vec<Detection>> {
        // Scores on a coarse lattice so ties are common.
        prop::collection::vec((-10.0f64..10.0, 0u8..5), 0..12)
            .prop_map(|v| v.into_iter().map(|(x, s)| det(x, s as f64 / 4.0)).collect())
    }

    proptest! {
        #[test]
        fn ap_permutation_invariant(dets in arb_dets(), gx in prop::collection::vec(-10.0f64..10.0, 1..5), seed in any::<u64>()) {
            let gts: Vec<BoxBEV> = gx.iter().map(|&x| det(x, 1.0).bbox).collect();
            let mut shuffled = dets.clone();
            let mut rng = crate::numerics::SeededRng::new(seed);
            for i in (1..shuffled.len()).rev() {
                let j = (rng.next_u64() % (i as u64 + 1)) as usize;
                shuffled.swap(i, j);
            }
            prop_assert_eq!(compute_ap(&dets, &gts, 0.5), compute_ap(&shuffled, &gts, 0.5));
        }

        #[test]
        fn ap_nonincreasing_in_threshold(dets in arb_dets(), gx in prop::collection::vec(-10.0f64..10.0, 1..5), t in 0.05f64..0.95, dt in 0.0f64..0.5) {
            let gts: Vec<BoxBEV> = gx.iter().map(|&x| det(x, 1.0).bbox).collect();
            let lo = compute_ap(&dets, &gts, t);
            let hi = compute_ap(&dets, &gts, (t + dt).min(1.0));
            prop_assert!(hi <= lo + 1e-12);
            prop_assert!((0.0..=1.0).contains(&lo));
        }
    }
}
