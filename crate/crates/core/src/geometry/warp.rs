use serde::{Deserialize, Serialize};

use super::Pose2;
use crate::error::Result;
use crate::feature::{FeatureMap, RoiMask};
use crate::numerics::{bilinear_accumulate, Tensor};

/// Sample coordinates this close to a lattice point are snapped onto it.
const LATTICE_SNAP: f64 = 1e-6;

/// 2-D affine map `[xs, ys] = R·[xt, yt] + [dx, dy]` in grid-cell units,
/// taking target-frame coordinates to source-frame coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineTransform {
    pub r11: f64,
    pub r12: f64,
    pub r21: f64,
    pub r22: f64,
    pub dx: f64,
    pub dy: f64,
}

impl AffineTransform {
    pub fn identity() -> Self {
        AffineTransform {
            r11: 1.0,
            r12: 0.0,
            r21: 0.0,
            r22: 1.0,
            dx: 0.0,
            dy: 0.0,
        }
    }

    pub fn translation(dx: f64, dy: f64) -> Self {
        AffineTransform {
            dx,
            dy,
            ..Self::identity()
        }
    }

    /// Rotation by `angle` about the grid centre followed by a translation.
    pub fn rotation(angle: f64, dx: f64, dy: f64) -> Self {
        let (s, c) = angle.sin_cos();
        AffineTransform {
            r11: c,
            r12: -s,
            r21: s,
            r22: c,
            dx,
            dy,
        }
    }

    pub fn apply(&self, x: f64, y: f64) -> (f64, f64) {
        (
            self.r11 * x + self.r12 * y + self.dx,
            self.r21 * x + self.r22 * y + self.dy,
        )
    }

    /// Inverse map; exact for rigid transforms, general 2×2 inverse otherwise.
    pub fn inverse(&self) -> Self {
        let det = self.r11 * self.r22 - self.r12 * self.r21;
        let (i11, i12, i21, i22) = (
            self.r22 / det,
            -self.r12 / det,
            -self.r21 / det,
            self.r11 / det,
        );
        AffineTransform {
            r11: i11,
            r12: i12,
            r21: i21,
            r22: i22,
            dx: -(i11 * self.dx + i12 * self.dy),
            dy: -(i21 * self.dx + i22 * self.dy),
        }
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::identity()
    }
}

/// Transform from the grid of `dst` (target) to the grid of `src` (source).
///
/// A point at grid coordinates `p` relative to `dst` lies at `R·p + t`
/// relative to `src`, with `R = R(yaw_dst - yaw_src)` and
/// `t = R(-yaw_src)·(dst - src) / cell_size`.
pub fn relative_transform(src: &Pose2, dst: &Pose2, cell_size: f64) -> AffineTransform {
    assert!(cell_size > 0.0, "cell_size must be positive");
    let (s, c) = (dst.yaw - src.yaw).sin_cos();
    let (lx, ly) = src.to_local(dst.x, dst.y);
    AffineTransform {
        r11: c,
        r12: -s,
        r21: s,
        r22: c,
        dx: lx / cell_size,
        dy: ly / cell_size,
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < LATTICE_SNAP {
        r
    } else {
        v
    }
}

/// Warps a feature map into the target frame by bilinear sampling.
///
/// Output cell `(i, j)` samples the source at the transformed position of its
/// centre, taken relative to the grid centre. The returned mask is true exactly
/// where the sample touched the source grid; elsewhere features are zero.
pub fn stcm_warp(src: &FeatureMap, xf: &AffineTransform) -> Result<(FeatureMap, RoiMask)> {
    let [h, w, c] = src.data.dims3()?;
    let (hc, wc) = (h as f64 / 2.0, w as f64 / 2.0);
    let mut out = vec![0.0f32; h * w * c];
    let mut mask = Vec::with_capacity(h * w);
    for i in 0..h {
        for j in 0..w {
            let u = i as f64 + 0.5 - hc;
            let v = j as f64 + 0.5 - wc;
            let (us, vs) = xf.apply(u, v);
            let xs = snap(us + hc - 0.5);
            let ys = snap(vs + wc - 0.5);
            let cell = &mut out[(i * w + j) * c..(i * w + j + 1) * c];
            mask.push(bilinear_accumulate(src.data.data(), h, w, c, xs, ys, cell));
        }
    }
    let data = Tensor::new(vec![h, w, c], out)?;
    Ok((src.with_data(data), RoiMask::new(h, w, mask)?))
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use proptest::prelude::*;

    use super::*;
    use crate::feature::AgentId;
    use crate::numerics::SeededRng;

    fn fmap(data: Tensor) -> FeatureMap {
        FeatureMap::new(AgentId(1), 0.0, data).unwrap()
    }

    #[test]
    fn same_pose_is_identity() {
        let p = Pose2::new(4.0, -1.0, 0.3);
        let xf = relative_transform(&p, &p, 0.4);
        assert!((xf.r11 - 1.0).abs() < 1e-15 && xf.r12.abs() < 1e-15);
        assert!(xf.dx.abs() < 1e-12 && xf.dy.abs() < 1e-12);
    }

    #[test]
    fn forward_displacement_in_cells() {
        let xf = relative_transform(&Pose2::identity(), &Pose2::new(2.0, 0.0, 0.0), 0.4);
        assert!((xf.dx - 5.0).abs() < 1e-12);
        assert!(xf.dy.abs() < 1e-12);
    }

    #[test]
    fn quarter_turn_rotation_block() {
        let xf = relative_transform(&Pose2::identity(), &Pose2::new(0.0, 0.0, FRAC_PI_2), 0.4);
        assert!(xf.r11.abs() < 1e-6 && (xf.r12 + 1.0).abs() < 1e-6);
        assert!((xf.r21 - 1.0).abs() < 1e-6 && xf.r22.abs() < 1e-6);
    }

    #[test]
    fn relative_transform_agrees_with_world_mapping() {
        let src = Pose2::new(1.0, 2.0, 0.4);
        let dst = Pose2::new(-3.0, 5.0, -1.1);
        let cell = 0.5;
        let xf = relative_transform(&src, &dst, cell);
        let (px, py) = (1.7, -2.2);
        let (wx, wy) = dst.to_world(px * cell, py * cell);
        let (sx, sy) = src.to_local(wx, wy);
        let (ax, ay) = xf.apply(px, py);
        assert!((ax - sx / cell).abs() < 1e-9 && (ay - sy / cell).abs() < 1e-9);
    }

    #[test]
    fn identity_warp_exact() {
        let src = fmap(SeededRng::new(2).normal_tensor(&[6, 5, 3], 1.0));
        let (out, mask) = stcm_warp(&src, &AffineTransform::identity()).unwrap();
        assert!(out.data.bit_eq(&src.data));
        assert_eq!(mask.count(), 30);
    }

    #[test]
    fn unit_translation_shifts_rows() {
        let src = fmap(SeededRng::new(3).normal_tensor(&[5, 4, 2], 1.0));
        let (out, mask) = stcm_warp(&src, &AffineTransform::translation(1.0, 0.0)).unwrap();
        for i in 0..5 {
            for j in 0..4 {
                if i < 4 {
                    assert!(mask.get(i, j));
                    assert_eq!(out.data.pixel(i, j), src.data.pixel(i + 1, j));
                } else {
                    assert!(!mask.get(i, j));
                    assert!(out.data.pixel(i, j).iter().all(|&v| v == 0.0));
                }
            }
        }
    }

    #[test]
    fn half_cell_translation_blends() {
        let src = fmap(Tensor::new(vec![2, 1, 1], vec![0.0, 2.0]).unwrap());
        let (out, mask) = stcm_warp(&src, &AffineTransform::translation(0.5, 0.0)).unwrap();
        assert_eq!(out.data.get(&[0, 0, 0]), 1.0);
        assert!(mask.get(0, 0));
    }

    #[test]
    fn inverse_composes_to_identity() {
        let xf = AffineTransform::rotation(0.8, 2.5, -1.0);
        let id = xf.inverse();
        let (x, y) = xf.apply(3.0, 4.0);
        let (bx, by) = id.apply(x, y);
        assert!((bx - 3.0).abs() < 1e-12 && (by - 4.0).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn masked_cells_are_zero(seed in any::<u64>(), ang in -3.2f64..3.2, dx in -6.0f64..6.0, dy in -6.0f64..6.0) {
            let src = fmap(SeededRng::new(seed).normal_tensor(&[8, 6, 2], 1.0));
            let (out, mask) = stcm_warp(&src, &AffineTransform::rotation(ang, dx, dy)).unwrap();
            for i in 0..8 {
                for j in 0..6 {
                    if !mask.get(i, j) {
                        prop_assert!(out.data.pixel(i, j).iter().all(|&v| v == 0.0));
                    }
                }
            }
        }
    }
}
