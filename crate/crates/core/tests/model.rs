use v2xvit_core::harness::oracle::windowed_attention_oracle;
use v2xvit_core::model::{ModelConfig, ModelWeights};
use v2xvit_core::mswin::{mswin_forward, MswinConfig, MswinWeights, RelativeBiasTable};
use v2xvit_core::{Dense, SeededRng, Tensor};

fn affine(x: &[f64], d: &Dense) -> Vec<f64> {
    let (n_in, n_out) = (d.input_dim(), d.output_dim());
    (0..n_out)
        .map(|o| d.bias.data()[o] as f64 + (0..n_in).map(|i| x[i] * d.weight.data()[i * n_out + o] as f64).sum::<f64>())
        .collect()
}

/// Branch outputs from the scalar oracle, fused by split attention in `f64`.
fn mswin_reference(x: &Tensor, w: &MswinWeights) -> Vec<f64> {
    let c = x.last_dim();
    let branches: Vec<Tensor> = w.branches.iter().map(|b| windowed_attention_oracle(x, b).unwrap()).collect();
    let cells = x.len() / c;
    let mut mean = vec![0.0f64; c];
    for b in &branches {
        for (k, &v) in b.data().iter().enumerate() {
            mean[k % c] += v as f64 / cells as f64;
        }
    }
    let pooled: Vec<f64> = affine(&mean, &w.fuse.pool).into_iter().map(|v| v.max(0.0)).collect();
    let logits: Vec<Vec<f64>> = w.fuse.logits.iter().map(|d| affine(&pooled, d)).collect();
    let mut out = vec![0.0f64; x.len()];
    for ch in 0..c {
        let m = logits.iter().map(|l| l[ch]).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l[ch] - m).exp()).collect();
        let s: f64 = e.iter().sum();
        for (b, eb) in branches.iter().zip(&e) {
            for cell in 0..cells {
                out[cell * c + ch] += eb / s * b.data()[cell * c + ch] as f64;
            }
        }
    }
    out
}

#[test]
fn multi_scale_attention_matches_composed_reference() {
    // 24 is not a multiple of the largest window, so padding is exercised.
    let cfg = MswinConfig {
        windows: vec![4, 8, 16],
        heads: vec![4, 2, 1],
        channels: 16,
        reduction: 4,
    };
    let mut rng = SeededRng::new(17);
    let mut w = MswinWeights::random(&cfg, &mut rng).unwrap();
    for b in &mut w.branches {
        let p = b.window;
        b.bias = RelativeBiasTable::new(p, rng.normal_tensor(&[2 * p - 1, 2 * p - 1], 0.5)).unwrap();
    }
    let x = rng.normal_tensor(&[32, 24, 16], 1.0);
    let fast = mswin_forward(&x, &cfg, &w).unwrap();
    let slow = mswin_reference(&x, &w);
    let worst = fast
        .data()
        .iter()
        .zip(&slow)
        .map(|(a, b)| (*a as f64 - b).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-5, "max |Δ| = {worst}");
}

#[test]
fn every_parameter_has_a_unique_name() {
    let mut w = ModelWeights::random(&ModelConfig::small(), 0).unwrap();
    let mut names: Vec<String> = w.params_mut().into_iter().map(|(n, _)| n).collect();
    let total = names.len();
    names.sort();
    names.dedup();
    assert_eq!(names.len(), total);
    assert!(names.contains(&"layers.1.hmsa.att.iv.0".to_string()));
    assert!(names.contains(&"layers.0.mswin.branch.2.bias_table".to_string()));
}

#[test]
fn corrupt_weight_bytes_are_rejected() {
    let w = ModelWeights::random(&ModelConfig::small(), 0).unwrap();
    let mut bytes = w.to_bytes().unwrap();
    assert_eq!(ModelWeights::from_bytes(&bytes).unwrap(), w);
    bytes.truncate(bytes.len() / 2);
    assert!(ModelWeights::from_bytes(&bytes).is_err());
}
