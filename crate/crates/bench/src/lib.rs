//! Benchmark fixtures shared by the criterion targets.

use v2xvit_core::graph::{build_graph, AgentKind, AgentMeta};
use v2xvit_core::{AgentId, FeatureMap, Pose2, RoiMask, SeededRng, V2XGraph};

/// `n` co-located agents (ego plus alternating vehicles and roadside units)
/// with random `h×w×c` features and full masks.
pub fn agents(n: usize, h: usize, w: usize, c: usize, seed: u64) -> (V2XGraph, Vec<FeatureMap>, Vec<RoiMask>) {
    let mut rng = SeededRng::new(seed);
    let metas: Vec<AgentMeta> = (0..n as u32)
        .map(|i| AgentMeta {
            id: AgentId(i),
            kind: if i % 2 == 1 { AgentKind::Infrastructure } else { AgentKind::Vehicle },
            pose: Pose2::new(i as f64, 0.0, 0.0),
            capture_time: 0.0,
        })
        .collect();
    let g = build_graph(&metas, AgentId(0), 100.0).expect("agents are in range");
    let feats = g
        .nodes()
        .iter()
        .map(|m| FeatureMap::new(m.id, 0.0, rng.normal_tensor(&[h, w, c], 1.0)).expect("shape"))
        .collect();
    let masks = vec![RoiMask::all_true(h, w); n];
    (g, feats, masks)
}
