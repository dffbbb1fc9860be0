use crate::error::{Error, Result};
use crate::numerics::Tensor;

fn same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::dim(format!("loss operands {:?} vs {:?}", a.shape(), b.shape())));
    }
    if a.is_empty() {
        return Err(Error::dim("loss over an empty tensor"));
    }
    Ok(())
}

/// Mean smooth-ℓ1 with `β = 1`.
pub fn smooth_l1(pred: &Tensor, target: &Tensor) -> Result<f64> {
    same_shape(pred, target)?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            let x = (p as f64 - t as f64).abs();
            if x < 1.0 {
                0.5 * x * x
            } else {
                x - 0.5
            }
        })
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Mean binary focal loss of probabilities `p` against 0/1 `labels`.
pub fn focal_loss(p: &Tensor, labels: &Tensor, alpha: f64, gamma: f64) -> Result<f64> {
    same_shape(p, labels)?;
    let mut sum = 0.0;
    for (&pi, &yi) in p.data().iter().zip(labels.data()) {
        let pi = pi as f64;
        if !(pi > 0.0 && pi < 1.0) {
            return Err(Error::Domain(format!("probability {pi} outside (0, 1)")));
        }
        sum += if yi == 1.0 {
            -alpha * (1.0 - pi).powf(gamma) * pi.ln()
        } else if yi == 0.0 {
            -(1.0 - alpha) * pi.powf(gamma) * (1.0 - pi).ln()
        } else {
            return Err(Error::Domain(format!("label {yi} is not 0 or 1")));
        };
    }
    Ok(sum / p.len() as f64)
}
