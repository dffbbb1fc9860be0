//! Weight files: a safetensors container of little-endian `f32` arrays with
//! the model configuration stored as JSON in the header metadata.
//!
//! Parameter names:
//!
//! ```text
//! compressor.{encode,decode}.{weight,bias}
//! dpe.projection.{weight,bias}
//! layers.{l}.norm{1,2}.{gamma,beta}
//! layers.{l}.hmsa.{query,key,message,output}.{vehicle,infrastructure}.{weight,bias}
//! layers.{l}.hmsa.{att,msg}.{vv,vi,iv,ii}.{head}
//! layers.{l}.mswin.branch.{j}.{query,key,value}.{weight,bias}
//! layers.{l}.mswin.branch.{j}.bias_table
//! layers.{l}.mswin.fuse.pool.{weight,bias}
//! layers.{l}.mswin.fuse.logits.{j}.{weight,bias}
//! layers.{l}.mlp.{fc1,fc2}.{weight,bias}
//! head.{cls,reg}.{weight,bias}
//! ```
//!
//! Dense weights are stored `[in, out]`.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use safetensors::tensor::{Dtype, SafeTensors, TensorView};

use super::{ModelConfig, ModelWeights};
use crate::error::{Error, Result};
use crate::graph::{AgentKind, EdgeKind};
use crate::numerics::{Dense, Tensor};

const FORMAT: &str = "v2xvit-weights/1";

fn dense<'a>(out: &mut Vec<(String, &'a mut Tensor)>, name: String, d: &'a mut Dense) {
    out.push((format!("{name}.weight"), &mut d.weight));
    out.push((format!("{name}.bias"), &mut d.bias));
}

impl ModelWeights {
    /// Every parameter tensor with its canonical name.
    pub fn params_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::new();
        dense(&mut out, "compressor.encode".into(), &mut self.compressor.encode);
        dense(&mut out, "compressor.decode".into(), &mut self.compressor.decode);
        dense(&mut out, "dpe.projection".into(), &mut self.dpe.projection);
        for (l, layer) in self.layers.iter_mut().enumerate() {
            let p = format!("layers.{l}");
            out.push((format!("{p}.norm1.gamma"), &mut layer.norm1.gamma));
            out.push((format!("{p}.norm1.beta"), &mut layer.norm1.beta));
            let h = &mut layer.hmsa;
            for (role, arr) in [
                ("query", &mut h.query),
                ("key", &mut h.key),
                ("message", &mut h.message),
                ("output", &mut h.output),
            ] {
                // `AgentKind::ALL` lists kinds in index order.
                for (kind, d) in AgentKind::ALL.iter().zip(arr.iter_mut()) {
                    dense(&mut out, format!("{p}.hmsa.{role}.{}", kind.name()), d);
                }
            }
            for (role, arr) in [("att", &mut h.att), ("msg", &mut h.msg)] {
                for (e, heads) in EdgeKind::ALL.iter().zip(arr.iter_mut()) {
                    for (m, t) in heads.iter_mut().enumerate() {
                        out.push((format!("{p}.hmsa.{role}.{}.{m}", e.name()), t));
                    }
                }
            }
            for (j, b) in layer.mswin.branches.iter_mut().enumerate() {
                let q = format!("{p}.mswin.branch.{j}");
                dense(&mut out, format!("{q}.query"), &mut b.query);
                dense(&mut out, format!("{q}.key"), &mut b.key);
                dense(&mut out, format!("{q}.value"), &mut b.value);
                out.push((format!("{q}.bias_table"), &mut b.bias.table));
            }
            dense(&mut out, format!("{p}.mswin.fuse.pool"), &mut layer.mswin.fuse.pool);
            for (j, d) in layer.mswin.fuse.logits.iter_mut().enumerate() {
                dense(&mut out, format!("{p}.mswin.fuse.logits.{j}"), d);
            }
            out.push((format!("{p}.norm2.gamma"), &mut layer.norm2.gamma));
            out.push((format!("{p}.norm2.beta"), &mut layer.norm2.beta));
            dense(&mut out, format!("{p}.mlp.fc1"), &mut layer.mlp.fc1);
            dense(&mut out, format!("{p}.mlp.fc2"), &mut layer.mlp.fc2);
        }
        dense(&mut out, "head.cls".into(), &mut self.head.cls);
        dense(&mut out, "head.reg".into(), &mut self.head.reg);
        out
    }

    /// Serializes to the safetensors container described in the module docs.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut copy = self.clone();
        let params = copy.params_mut();
        let bytes: BTreeMap<String, (Vec<usize>, Vec<u8>)> = params
            .into_iter()
            .map(|(name, t)| {
                let raw = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
                (name, (t.shape().to_vec(), raw))
            })
            .collect();
        let views = bytes
            .iter()
            .map(|(name, (shape, raw))| {
                TensorView::new(Dtype::F32, shape.clone(), raw)
                    .map(|v| (name.as_str(), v))
                    .map_err(|e| Error::Weights(e.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        let meta = HashMap::from([
            ("format".to_string(), FORMAT.to_string()),
            ("config".to_string(), serde_json::to_string(&self.config)?),
        ]);
        safetensors::tensor::serialize(views, Some(meta)).map_err(|e| Error::Weights(e.to_string()))
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let werr = |e: safetensors::SafeTensorError| Error::Weights(e.to_string());
        let (_, header) = SafeTensors::read_metadata(bytes).map_err(werr)?;
        let meta = header
            .metadata()
            .as_ref()
            .ok_or_else(|| Error::Weights("missing header metadata".into()))?;
        if meta.get("format").map(String::as_str) != Some(FORMAT) {
            return Err(Error::Weights(format!("not a {FORMAT} file")));
        }
        let config: ModelConfig = serde_json::from_str(
            meta.get("config")
                .ok_or_else(|| Error::Weights("missing model config".into()))?,
        )?;
        let file = SafeTensors::deserialize(bytes).map_err(werr)?;
        let mut weights = ModelWeights::random(&config, 0)?;
        let params = weights.params_mut();
        if params.len() != file.len() {
            return Err(Error::Weights(format!(
                "file holds {} tensors, model needs {}",
                file.len(),
                params.len()
            )));
        }
        for (name, slot) in params {
            let view = file.tensor(&name).map_err(werr)?;
            if view.dtype() != Dtype::F32 || view.shape() != slot.shape() {
                return Err(Error::Weights(format!(
                    "{name}: expected f32 {:?}, found {:?} {:?}",
                    slot.shape(),
                    view.dtype(),
                    view.shape()
                )));
            }
            let values: Vec<f32> = view
                .data()
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                .collect();
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::Weights(format!("{name} holds non-finite values")));
            }
            *slot = Tensor::new(slot.shape().to_vec(), values)?;
        }
        Ok(weights)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
