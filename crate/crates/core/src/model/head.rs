use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature::GridSpec;
use crate::geometry::BoxBEV;
use crate::numerics::{Dense, Tensor};

/// Values per anchor in the regression map: `(x, y, z, w, l, h, θ)`.
pub const BOX_CODE: usize = 7;

/// Per-cell anchor prior shared by every cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnchorConfig {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    pub z: f64,
    pub yaws: Vec<f64>,
}

impl Default for AnchorConfig {
    fn default() -> Self {
        AnchorConfig {
            length: 3.9,
            width: 1.6,
            height: 1.56,
            z: -1.0,
            yaws: vec![0.0, FRAC_PI_2],
        }
    }
}

impl AnchorConfig {
    pub fn count(&self) -> usize {
        self.yaws.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.yaws.is_empty() || !(self.length > 0.0 && self.width > 0.0 && self.height > 0.0) {
            return Err(Error::config("anchors need positive size and at least one yaw"));
        }
        Ok(())
    }

    /// Anchor `a` centred on cell `(row, col)` of `grid`.
    pub fn anchor(&self, grid: &GridSpec, row: usize, col: usize, a: usize) -> BoxBEV {
        let (x, y) = grid.cell_center(row, col);
        BoxBEV::new(x, y, self.z, self.width, self.length, self.height, self.yaws[a])
    }
}

fn diagonal(anchor: &BoxBEV) -> f64 {
    anchor.w.hypot(anchor.l)
}

/// Regression target of `gt` relative to `anchor`.
pub fn encode_box(gt: &BoxBEV, anchor: &BoxBEV) -> [f32; BOX_CODE] {
    let d = diagonal(anchor);
    [
        (gt.cx - anchor.cx) / d,
        (gt.cy - anchor.cy) / d,
        (gt.cz - anchor.cz) / anchor.h,
        (gt.w / anchor.w).ln(),
        (gt.l / anchor.l).ln(),
        (gt.h / anchor.h).ln(),
        gt.theta - anchor.theta,
    ]
    .map(|v| v as f32)
}

/// Inverse of [`encode_box`].
pub fn decode_box(code: &[f32], anchor: &BoxBEV) -> BoxBEV {
    let d = diagonal(anchor);
    let v = |i: usize| code[i] as f64;
    BoxBEV::new(
        anchor.cx + v(0) * d,
        anchor.cy + v(1) * d,
        anchor.cz + v(2) * anchor.h,
        anchor.w * v(3).exp(),
        anchor.l * v(4).exp(),
        anchor.h * v(5).exp(),
        anchor.theta + v(6),
    )
}

/// `1×1` classification and regression maps on the ego feature.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadWeights {
    /// `C → anchors`
    pub cls: Dense,
    /// `C → 7·anchors`
    pub reg: Dense,
}

/// Raw head outputs: logits `H×W×A` and box codes `H×W×7A`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    pub cls: Tensor,
    pub reg: Tensor,
}

impl DetectionOutput {
    pub fn anchors(&self) -> usize {
        self.cls.last_dim()
    }

    pub fn bit_eq(&self, other: &DetectionOutput) -> bool {
        self.cls.bit_eq(&other.cls) && self.reg.bit_eq(&other.reg)
    }
}

pub fn head_forward(x: &Tensor, w: &HeadWeights) -> Result<DetectionOutput> {
    if w.reg.output_dim() != BOX_CODE * w.cls.output_dim() {
        return Err(Error::dim("regression head must emit 7 values per anchor"));
    }
    Ok(DetectionOutput {
        cls: w.cls.forward(x)?,
        reg: w.reg.forward(x)?,
    })
}
