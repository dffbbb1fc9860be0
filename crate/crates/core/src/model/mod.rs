//! The fusion network: delay encoding, stacked HMSA/MSwin/MLP blocks and the
//! anchor head, plus the training losses as plain functions.

mod dpe;
mod head;
mod io;
mod loss;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::CompressorWeights;
use crate::error::{Error, Result};
use crate::feature::{FeatureMap, RoiMask};
use crate::graph::V2XGraph;
use crate::hmsa::{hmsa_forward, HmsaWeights};
use crate::mswin::{mswin_forward, MswinConfig, MswinWeights};
use crate::numerics::{gelu, layernorm, Dense, SeededRng, Tensor};

pub use dpe::{dpe_apply, dpe_encode, DpeWeights};
pub use head::{decode_box, encode_box, head_forward, AnchorConfig, DetectionOutput, HeadWeights, BOX_CODE};
pub use loss::{focal_loss, smooth_l1};

/// Architecture hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub channels: usize,
    pub layers: usize,
    pub hmsa_heads: usize,
    pub mswin: MswinConfig,
    /// Hidden width of the block MLP as a multiple of `channels`.
    pub mlp_ratio: usize,
    pub compression_rate: usize,
    pub ln_eps: f32,
    pub anchors: AnchorConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 256,
            layers: 3,
            hmsa_heads: 8,
            mswin: MswinConfig::default(),
            mlp_ratio: 4,
            compression_rate: 32,
            ln_eps: 1e-5,
            anchors: AnchorConfig::default(),
        }
    }
}

impl ModelConfig {
    /// A narrow configuration for fast experiments and tests.
    pub fn small() -> Self {
        ModelConfig {
            channels: 16,
            layers: 2,
            hmsa_heads: 2,
            mswin: MswinConfig {
                windows: vec![4, 8, 16],
                heads: vec![4, 2, 1],
                channels: 16,
                reduction: 4,
            },
            mlp_ratio: 2,
            compression_rate: 4,
            ln_eps: 1e-5,
            anchors: AnchorConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = self.channels;
        if c == 0 || self.layers == 0 || self.mlp_ratio == 0 {
            return Err(Error::config("channels, layers and mlp ratio must be positive"));
        }
        if self.hmsa_heads == 0 || c % self.hmsa_heads != 0 {
            return Err(Error::config(format!("{} HMSA heads do not divide {c}", self.hmsa_heads)));
        }
        if self.mswin.channels != c {
            return Err(Error::config("MSwin channel count differs from the model's"));
        }
        self.mswin.validate()?;
        let r = self.compression_rate;
        if r == 0 || c % r != 0 {
            return Err(Error::config(format!("compression rate {r} does not divide {c}")));
        }
        if !(self.ln_eps > 0.0) {
            return Err(Error::config("layer-norm epsilon must be positive"));
        }
        self.anchors.validate()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNormWeights {
    pub gamma: Tensor,
    pub beta: Tensor,
}

impl LayerNormWeights {
    pub fn unit(channels: usize) -> Self {
        LayerNormWeights {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpWeights {
    pub fc1: Dense,
    pub fc2: Dense,
}

impl MlpWeights {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.fc2.forward(&self.fc1.forward(x)?.map(gelu))
    }
}

/// One fusion block.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub norm1: LayerNormWeights,
    pub hmsa: HmsaWeights,
    pub mswin: MswinWeights,
    pub norm2: LayerNormWeights,
    pub mlp: MlpWeights,
}

/// Every learnable parameter of the network.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    pub compressor: CompressorWeights,
    pub dpe: DpeWeights,
    pub layers: Vec<LayerWeights>,
    pub head: HeadWeights,
}

impl ModelWeights {
    /// Seeded init: Gaussian dense weights with std `1/√fan_in`, zero biases
    /// and bias tables, unit layer norms.
    pub fn random(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let c = config.channels;
        let mut rng = SeededRng::new(seed);
        let compressor = CompressorWeights::random(c, config.compression_rate, &mut rng)?;
        let dpe = DpeWeights {
            projection: Dense::random(c, c, &mut rng),
        };
        let layers = (0..config.layers)
            .map(|_| {
                Ok(LayerWeights {
                    norm1: LayerNormWeights::unit(c),
                    hmsa: HmsaWeights::random(c, config.hmsa_heads, &mut rng)?,
                    mswin: MswinWeights::random(&config.mswin, &mut rng)?,
                    norm2: LayerNormWeights::unit(c),
                    mlp: MlpWeights {
                        fc1: Dense::random(c, c * config.mlp_ratio, &mut rng),
                        fc2: Dense::random(c * config.mlp_ratio, c, &mut rng),
                    },
                })
            })
            .collect::<Result<_>>()?;
        let a = config.anchors.count();
        let head = HeadWeights {
            cls: Dense::random(c, a, &mut rng),
            reg: Dense::random(c, BOX_CODE * a, &mut rng),
        };
        Ok(ModelWeights {
            config: config.clone(),
            compressor,
            dpe,
            layers,
            head,
        })
    }

    /// Zeroes the last projections of HMSA, every MSwin branch and the MLP,
    /// making each block an identity map.
    pub fn zero_block_outputs(&mut self) {
        let zero = |d: &mut Dense| *d = Dense::zeros(d.input_dim(), d.output_dim());
        for layer in &mut self.layers {
            layer.hmsa.output.iter_mut().for_each(zero);
            layer.mswin.branches.iter_mut().for_each(|b| zero(&mut b.value));
            zero(&mut layer.mlp.fc2);
        }
    }
}

fn norm(f: &FeatureMap, w: &LayerNormWeights, eps: f32) -> Result<FeatureMap> {
    Ok(f.with_data(layernorm(&f.data, &w.gamma, &w.beta, eps)?))
}

/// `z' = z + MSwin(HMSA(LN(z)))`, then `z' + MLP(LN(z'))`, for every agent.
pub fn v2xvit_block(
    z: &[FeatureMap],
    masks: &[RoiMask],
    graph: &V2XGraph,
    w: &LayerWeights,
    cfg: &ModelConfig,
) -> Result<Vec<FeatureMap>> {
    let normed = z.iter().map(|f| norm(f, &w.norm1, cfg.ln_eps)).collect::<Result<Vec<_>>>()?;
    let fused = hmsa_forward(&normed, masks, graph, &w.hmsa)?;
    z.par_iter()
        .zip(fused.par_iter())
        .map(|(zi, hi)| {
            let local = mswin_forward(&hi.data, &cfg.mswin, &w.mswin)?;
            let mid = zi.data.add(&local)?;
            let ln = layernorm(&mid, &w.norm2.gamma, &w.norm2.beta, cfg.ln_eps)?;
            Ok(zi.with_data(mid.add(&w.mlp.forward(&ln)?)?))
        })
        .collect()
}

/// Full fusion forward pass on features already aligned to the ego frame.
///
/// `features`, `masks` and `delays_ms` follow the graph's node order.
pub fn v2xvit_forward(
    features: &[FeatureMap],
    masks: &[RoiMask],
    delays_ms: &[f64],
    graph: &V2XGraph,
    w: &ModelWeights,
) -> Result<DetectionOutput> {
    if delays_ms.len() != features.len() {
        return Err(Error::dim(format!(
            "{} delays for {} feature maps",
            delays_ms.len(),
            features.len()
        )));
    }
    let mut z = features
        .iter()
        .zip(delays_ms)
        .map(|(f, &dt)| dpe_apply(f, dt, &w.dpe))
        .collect::<Result<Vec<_>>>()?;
    for layer in &w.layers {
        z = v2xvit_block(&z, masks, graph, layer, &w.config)?;
    }
    let ego = graph
        .index_of(graph.ego())
        .ok_or_else(|| Error::dim("graph has no ego node"))?;
    head_forward(&z[ego].data, &w.head)
}

#[cfg(test)]
mod tests;
