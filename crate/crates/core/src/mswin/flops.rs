use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Attention families with closed-form operation counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FlopsFamily {
    ViT,
    Axial,
    Swin,
    CSwin,
    MSwin,
}

impl FlopsFamily {
    pub const ALL: [FlopsFamily; 5] = [
        FlopsFamily::ViT,
        FlopsFamily::Axial,
        FlopsFamily::Swin,
        FlopsFamily::CSwin,
        FlopsFamily::MSwin,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FlopsFamily::ViT => "vit",
            FlopsFamily::Axial => "axial",
            FlopsFamily::Swin => "swin",
            FlopsFamily::CSwin => "cswin",
            FlopsFamily::MSwin => "mswin",
        }
    }
}

impl FromStr for FlopsFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FlopsFamily::ALL
            .into_iter()
            .find(|f| f.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::config(format!("unsupported attention family '{s}'")))
    }
}

/// Sizes entering the complexity formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlopsInput {
    pub h: usize,
    pub w: usize,
    pub c: usize,
    /// Base head count (MSwin).
    pub heads: usize,
    /// Window size (Swin) or base window size (MSwin).
    pub window: usize,
    /// Branch count (MSwin).
    pub branches: usize,
    /// Stripe width (CSwin).
    pub stripe: usize,
}

impl Default for FlopsInput {
    fn default() -> Self {
        FlopsInput {
            h: 48,
            w: 176,
            c: 256,
            heads: 16,
            window: 4,
            branches: 3,
            stripe: 7,
        }
    }
}

/// Leading-order operation count of one attention layer.
pub fn flops_estimate(family: FlopsFamily, p: &FlopsInput) -> Result<f64> {
    if p.h == 0 || p.w == 0 || p.c == 0 {
        return Err(Error::config("map sizes must be positive"));
    }
    let (h, w, c) = (p.h as f64, p.w as f64, p.c as f64);
    let hw = h * w;
    Ok(match family {
        FlopsFamily::ViT => 4.0 * hw * c * c + 2.0 * hw * hw * c,
        FlopsFamily::Axial => hw * c * (4.0 * c + h + w),
        FlopsFamily::Swin => {
            need(p.window, "window")?;
            let pw = p.window as f64;
            4.0 * hw * c * c + 2.0 * pw * pw * hw * c
        }
        FlopsFamily::CSwin => {
            need(p.stripe, "stripe")?;
            let s = p.stripe as f64;
            hw * c * (4.0 * c + s * h + s * w)
        }
        FlopsFamily::MSwin => {
            need(p.window, "window")?;
            need(p.branches, "branches")?;
            need(p.heads, "heads")?;
            let (k, pw, hd) = (p.branches as f64, p.window as f64, p.heads as f64);
            (k.powi(3) * pw * pw * c / 3.0 + 2.0 * k * k * c * c / hd) * hw
        }
    })
}

fn need(v: usize, what: &str) -> Result<()> {
    if v == 0 {
        return Err(Error::config(format!("{what} must be positive")));
    }
    Ok(())
}
