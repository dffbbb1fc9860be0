use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::{decode_and_nms, Decoder, Detection, EvalReport};
use super::scenario::ScenarioConfig;
use super::sensor::{render_observation, visible_union, SensorView};
use crate::channel::{compress, decompress, inject_pose_noise, sample_total_delay, DelaySample};
use crate::error::{Error, Result};
use crate::feature::{FeatureMap, RoiMask};
use crate::geometry::{relative_transform, stcm_warp, BoxBEV};
use crate::graph::{build_graph, V2XGraph};
use crate::model::{v2xvit_forward, DetectionOutput, ModelWeights};
use crate::numerics::SeededRng;

/// Evaluation regime.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// No delay, exact poses.
    Perfect,
    /// Sampled link delay and pose noise from the scenario's channel.
    Noisy,
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "perfect" => Ok(Mode::Perfect),
            "noisy" => Ok(Mode::Noisy),
            other => Err(Error::config(format!("unknown mode '{other}' (perfect|noisy)"))),
        }
    }
}

/// Per-agent bookkeeping of one pipeline run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentLink {
    pub id: crate::feature::AgentId,
    pub delay: DelaySample,
    /// Cells that survived the warp.
    pub valid_cells: usize,
}

/// Everything one pipeline run produced.
#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub output: DetectionOutput,
    pub graph: V2XGraph,
    pub links: Vec<AgentLink>,
    /// Ground truth in the ego frame: in range and seen by a connected agent.
    pub ground_truth: Vec<BoxBEV>,
}

impl PipelineRun {
    pub fn evaluate(&self, dec: &Decoder) -> Result<(Vec<Detection>, EvalReport)> {
        let dets = decode_and_nms(&self.output, dec)?;
        let report = EvalReport::new(&dets, &self.ground_truth);
        Ok((dets, report))
    }
}

fn zero_delay() -> DelaySample {
    DelaySample {
        transmission_ms: 0.0,
        idle_ms: 0.0,
        raw_ms: 0.0,
        total_ms: 0.0,
    }
}

/// Simulates sensing, sharing and fusion for the scenario's ego vehicle.
///
/// Each connected agent observes the world at its capture time (`-delay`),
/// projects its view into the ego frame of that instant using the pose it
/// shares, and sends it through the compressor. The ego warps the received
/// map to its current pose, stamps the delay, and runs the fusion network.
pub fn run_pipeline(cfg: &ScenarioConfig, w: &ModelWeights, mode: Mode) -> Result<PipelineRun> {
    cfg.validate()?;
    let c = w.config.channels;
    cfg.channel.validate(c)?;
    if cfg.channel.compression_rate != w.compressor.rate() {
        return Err(Error::config(format!(
            "scenario compression rate {} but weights compress by {}",
            cfg.channel.compression_rate,
            w.compressor.rate()
        )));
    }
    let grid = cfg.grid()?;
    let metas: Vec<_> = cfg.agents.iter().map(|a| a.meta()).collect();
    let graph = build_graph(&metas, cfg.ego, cfg.comm_range)?;
    let ego = *cfg.ego_spec();
    let bits = cfg.channel.feature_bits(grid.rows, grid.cols, w.compressor.reduced_channels());
    let mut rng = SeededRng::new(cfg.seed);

    let mut features: Vec<FeatureMap> = Vec::with_capacity(graph.len());
    let mut masks: Vec<RoiMask> = Vec::with_capacity(graph.len());
    let mut delays = Vec::with_capacity(graph.len());
    let mut links = Vec::with_capacity(graph.len());
    for node in graph.nodes() {
        let agent = cfg.agent(node.id).expect("graph nodes come from the scenario");
        if node.id == cfg.ego {
            let view = SensorView {
                frame: ego.pose,
                dt: 0.0,
            };
            let obs = render_observation(cfg, agent, &grid, &view, c)?;
            features.push(obs.features);
            masks.push(RoiMask::all_true(grid.rows, grid.cols));
            delays.push(0.0);
            links.push(AgentLink {
                id: node.id,
                delay: zero_delay(),
                valid_cells: grid.cells(),
            });
            continue;
        }
        let (delay, shared) = match mode {
            Mode::Perfect => (zero_delay(), agent.pose),
            Mode::Noisy => {
                let delay = sample_total_delay(bits, &cfg.channel, &mut rng)?;
                let dt = -delay.total_ms / 1000.0;
                (delay, inject_pose_noise(&agent.pose_at(dt), &cfg.channel, &mut rng))
            }
        };
        let dt = -delay.total_ms / 1000.0;
        let truth = agent.pose_at(dt);
        let ego_then = ego.pose_at(dt);
        // Content at true world point p lands where the shared pose puts it:
        // rendering in frame truth ∘ shared⁻¹ ∘ ego_then reproduces that.
        let frame = if shared == truth {
            ego_then
        } else {
            truth.compose(&shared.inverse()).compose(&ego_then)
        };
        let obs = render_observation(cfg, agent, &grid, &SensorView { frame, dt }, c)?;
        let received = decompress(&compress(&obs.features, &w.compressor)?, &w.compressor)?;
        let xf = relative_transform(&ego_then, &ego.pose, grid.cell_size);
        let (warped, mask) = stcm_warp(&received, &xf)?;
        links.push(AgentLink {
            id: node.id,
            delay,
            valid_cells: mask.count(),
        });
        features.push(warped);
        masks.push(mask);
        delays.push(delay.total_ms);
    }

    let output = v2xvit_forward(&features, &masks, &delays, &graph, w)?;

    let connected: Vec<_> = graph.nodes().iter().filter_map(|n| cfg.agent(n.id)).collect();
    let seen = visible_union(cfg, &connected);
    let ground_truth = cfg
        .objects
        .iter()
        .zip(seen)
        .filter(|(_, s)| *s)
        .map(|(o, _)| o.bbox.in_frame(&ego.pose))
        .filter(|b| cfg.eval_range.contains(b.cx, b.cy))
        .collect();
    Ok(PipelineRun {
        output,
        graph,
        links,
        ground_truth,
    })
}
