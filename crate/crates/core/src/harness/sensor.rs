//! Synthetic BEV sensor standing in for a LiDAR backbone.
//!
//! Cells covered by an object footprint get a feature vector computed from the
//! cell's position inside the box and the box heading, through a fixed seeded
//! projection and a ReLU. Vehicles cannot see through other objects (2-D ray
//! cast from the sensor to the cell); roadside units are mounted high and are
//! exempt from shadowing. Nothing is sensed beyond the sensing range.

use super::scenario::{AgentSpec, ScenarioConfig};
use crate::error::{Error, Result};
use crate::feature::{FeatureMap, GridSpec, RoiMask};
use crate::geometry::{BoxBEV, Pose2};
use crate::graph::AgentKind;
use crate::numerics::{relu, SeededRng, Tensor};

const SENSOR_SEED: u64 = 0x5e75_0a11;
const DESCRIPTOR: usize = 6;

/// What one agent sees at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: FeatureMap,
    /// Cells inside the sensing disc.
    pub sensed: RoiMask,
    /// Per object: at least one footprint cell was observed.
    pub seen: Vec<bool>,
}

/// Where and when an observation is rendered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorView {
    /// Frame of the output grid.
    pub frame: Pose2,
    /// Time offset from the scenario's reference instant, seconds.
    pub dt: f64,
}

fn projection(channels: usize) -> Tensor {
    let mut rng = SeededRng::new(SENSOR_SEED);
    let mut p = rng.normal_tensor(&[DESCRIPTOR, channels], 1.0 / (DESCRIPTOR as f64).sqrt());
    // Offset the constant row so most channels fire on a footprint.
    for v in &mut p.data_mut()[..channels] {
        *v = v.abs() + 0.25;
    }
    p
}

/// True if the segment from `origin` to `target` crosses any box other than `skip`.
fn shadowed(origin: (f64, f64), target: (f64, f64), boxes: &[BoxBEV], skip: usize) -> bool {
    boxes
        .iter()
        .enumerate()
        .any(|(j, b)| j != skip && b.blocks_segment(origin, target))
}

/// Whether a sensor of `kind` at `origin` observes world point `target` on box `k`.
pub fn point_visible(
    origin: (f64, f64),
    kind: AgentKind,
    target: (f64, f64),
    boxes: &[BoxBEV],
    k: usize,
    range: f64,
) -> bool {
    let d = (target.0 - origin.0).hypot(target.1 - origin.1);
    d <= range && (kind == AgentKind::Infrastructure || !shadowed(origin, target, boxes, k))
}

/// Whether box `k` is hit by the sensor at any of a fixed set of footprint
/// sample points (centre, edge midpoints, corners pulled slightly inward).
pub fn object_visible(origin: (f64, f64), kind: AgentKind, boxes: &[BoxBEV], k: usize, range: f64) -> bool {
    let b = &boxes[k];
    let (hl, hw) = (0.45 * b.l, 0.45 * b.w);
    let samples = [
        (0.0, 0.0),
        (hl, 0.0),
        (-hl, 0.0),
        (0.0, hw),
        (0.0, -hw),
        (hl, hw),
        (hl, -hw),
        (-hl, hw),
        (-hl, -hw),
    ];
    let (s, c) = b.theta.sin_cos();
    samples.iter().any(|&(u, v)| {
        let p = (b.cx + c * u - s * v, b.cy + s * u + c * v);
        point_visible(origin, kind, p, boxes, k, range)
    })
}

/// Renders `agent`'s view of the scene onto `grid` in `view.frame`.
pub fn render_observation(
    scene: &ScenarioConfig,
    agent: &AgentSpec,
    grid: &GridSpec,
    view: &SensorView,
    channels: usize,
) -> Result<Observation> {
    if channels == 0 {
        return Err(Error::config("sensor needs at least one channel"));
    }
    let boxes: Vec<BoxBEV> = scene.objects.iter().map(|o| o.at(view.dt)).collect();
    let pose = agent.pose_at(view.dt);
    let origin = (pose.x, pose.y);
    let range = scene.sensing_range;
    let (h, w) = (grid.rows, grid.cols);
    let proj = projection(channels);

    let mut sensed = vec![false; h * w];
    for r in 0..h {
        for c in 0..w {
            let (x, y) = grid.cell_center(r, c);
            let (wx, wy) = view.frame.to_world(x, y);
            sensed[r * w + c] = (wx - origin.0).hypot(wy - origin.1) <= range;
        }
    }

    let mut data = vec![0.0f32; h * w * channels];
    let mut seen = vec![false; boxes.len()];
    for (k, b) in boxes.iter().enumerate() {
        // Cell range covering the footprint in the output frame.
        let local: Vec<(f64, f64)> = b.corners().iter().map(|&(x, y)| view.frame.to_local(x, y)).collect();
        let span = |f: fn(&(f64, f64)) -> f64, n: usize| {
            let lo = local.iter().map(f).fold(f64::INFINITY, f64::min);
            let hi = local.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
            let to_cell = |v: f64| v / grid.cell_size + n as f64 / 2.0;
            let a = to_cell(lo).floor().max(0.0) as usize;
            let b = (to_cell(hi).ceil().max(0.0) as usize).min(n);
            a..b
        };
        let rows = span(|p| p.0, h);
        let cols = span(|p| p.1, w);
        let heading = b.theta - view.frame.yaw;
        for r in rows {
            for c in cols.clone() {
                let (x, y) = grid.cell_center(r, c);
                let (wx, wy) = view.frame.to_world(x, y);
                if !b.contains(wx, wy) || !point_visible(origin, agent.kind, (wx, wy), &boxes, k, range) {
                    continue;
                }
                seen[k] = true;
                let (u, v) = b.local(wx, wy);
                let phi = [1.0, 2.0 * u / b.l, 2.0 * v / b.w, heading.cos(), heading.sin(), b.h / 2.0];
                let cell = &mut data[(r * w + c) * channels..(r * w + c + 1) * channels];
                for (ch, out) in cell.iter_mut().enumerate() {
                    let z: f64 = phi
                        .iter()
                        .enumerate()
                        .map(|(i, p)| p * proj.data()[i * channels + ch] as f64)
                        .sum();
                    *out = relu(z as f32);
                }
            }
        }
    }
    let features = FeatureMap::new(agent.id, view.dt, Tensor::new(vec![h, w, channels], data)?)?;
    Ok(Observation {
        features,
        sensed: RoiMask::new(h, w, sensed)?,
        seen,
    })
}

/// The agent's own view at the reference instant, in its own frame.
pub fn simulate_observation(scene: &ScenarioConfig, agent: &AgentSpec, channels: usize) -> Result<Observation> {
    let grid = scene.grid()?;
    let view = SensorView {
        frame: agent.pose,
        dt: 0.0,
    };
    render_observation(scene, agent, &grid, &view, channels)
}

/// Objects (by index) observed by at least one of `agents` at the reference instant.
pub fn visible_union(scene: &ScenarioConfig, agents: &[&AgentSpec]) -> Vec<bool> {
    let boxes: Vec<BoxBEV> = scene.objects.iter().map(|o| o.bbox).collect();
    (0..boxes.len())
        .map(|k| {
            agents
                .iter()
                .any(|a| object_visible((a.pose.x, a.pose.y), a.kind, &boxes, k, scene.sensing_range))
        })
        .collect()
}
