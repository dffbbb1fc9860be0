use crate::error::{Error, Result};
use crate::feature::FeatureMap;
use crate::numerics::{Dense, Tensor};

/// Learnable projection of the sinusoidal delay code.
#[derive(Debug, Clone, PartialEq)]
pub struct DpeWeights {
    pub projection: Dense,
}

/// Sinusoid of the delay: `sin(Δt / 10000^(2c/C))` on even channels, `cos` on odd.
///
/// Evaluated in `f64` and rounded once to `f32`.
pub fn dpe_encode(delta_t_ms: f64, channels: usize) -> Tensor {
    Tensor::from_fn(&[channels], |c| {
        let angle = delta_t_ms / 10000f64.powf(2.0 * c as f64 / channels as f64);
        (if c % 2 == 0 { angle.sin() } else { angle.cos() }) as f32
    })
}

/// Adds the projected delay code to every cell of `f`.
pub fn dpe_apply(f: &FeatureMap, delta_t_ms: f64, w: &DpeWeights) -> Result<FeatureMap> {
    if !(delta_t_ms >= 0.0) {
        return Err(Error::Domain(format!("delay {delta_t_ms} ms must be nonnegative")));
    }
    let [_, _, c] = f.dims();
    if w.projection.input_dim() != c || w.projection.output_dim() != c {
        return Err(Error::dim(format!(
            "DPE projection {}->{} for {c} channels",
            w.projection.input_dim(),
            w.projection.output_dim()
        )));
    }
    let code = dpe_encode(delta_t_ms, c).reshape(&[1, c])?;
    let offset = w.projection.forward(&code)?;
    let mut data = f.data.clone();
    for px in data.data_mut().chunks_mut(c) {
        for (v, o) in px.iter_mut().zip(offset.data()) {
            *v += o;
        }
    }
    Ok(f.with_data(data))
}
