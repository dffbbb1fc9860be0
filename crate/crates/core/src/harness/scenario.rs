use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::channel::ChannelParams;
use crate::error::{Error, Result};
use crate::feature::{AgentId, GridSpec};
use crate::geometry::{BoxBEV, Pose2};
use crate::graph::{AgentKind, AgentMeta};
use crate::numerics::SeededRng;

/// A moving object in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectSpec {
    #[serde(rename = "box")]
    pub bbox: BoxBEV,
    /// World-frame velocity, m/s.
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl ObjectSpec {
    /// The box `dt` seconds later (negative `dt` looks into the past).
    pub fn at(&self, dt: f64) -> BoxBEV {
        BoxBEV {
            cx: self.bbox.cx + self.velocity[0] * dt,
            cy: self.bbox.cy + self.velocity[1] * dt,
            ..self.bbox
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentSpec {
    pub id: AgentId,
    pub kind: AgentKind,
    pub pose: Pose2,
    /// World-frame velocity, m/s; infrastructure stays at rest.
    #[serde(default)]
    pub velocity: [f64; 2],
}

impl AgentSpec {
    pub fn pose_at(&self, dt: f64) -> Pose2 {
        self.pose.advanced(self.velocity, dt)
    }

    pub fn meta(&self) -> AgentMeta {
        AgentMeta {
            id: self.id,
            kind: self.kind,
            pose: self.pose,
            capture_time: 0.0,
        }
    }
}

/// Axis-aligned evaluation window around the ego, metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalRange {
    pub x: [f64; 2],
    pub y: [f64; 2],
}

impl Default for EvalRange {
    fn default() -> Self {
        EvalRange {
            x: [-140.0, 140.0],
            y: [-40.0, 40.0],
        }
    }
}

impl EvalRange {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        (self.x[0]..=self.x[1]).contains(&x) && (self.y[0]..=self.y[1]).contains(&y)
    }
}

fn default_voxel() -> f64 {
    0.4
}
fn default_stride() -> usize {
    4
}
fn default_multiple() -> usize {
    16
}
fn default_comm() -> f64 {
    70.0
}
fn default_sensing() -> f64 {
    120.0
}

/// A complete simulated scene. All distances in metres, angles in radians,
/// velocities in m/s, times in milliseconds unless noted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    #[serde(default)]
    pub seed: u64,
    pub ego: AgentId,
    pub agents: Vec<AgentSpec>,
    #[serde(default)]
    pub objects: Vec<ObjectSpec>,
    #[serde(default)]
    pub channel: ChannelParams,
    #[serde(default)]
    pub eval_range: EvalRange,
    #[serde(default = "default_voxel")]
    pub voxel_size: f64,
    /// Backbone downsampling from voxels to feature cells.
    #[serde(default = "default_stride")]
    pub stride: usize,
    /// Grid sides are rounded to a multiple of this (the largest window).
    #[serde(default = "default_multiple")]
    pub grid_multiple: usize,
    #[serde(default = "default_comm")]
    pub comm_range: f64,
    #[serde(default = "default_sensing")]
    pub sensing_range: f64,
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ScenarioConfig =
            serde_json::from_str(text).map_err(|e| Error::config(format!("scenario JSON: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.agents.iter().any(|a| a.id == self.ego && a.kind == AgentKind::Vehicle) {
            return Err(Error::config(format!("ego {} must be a listed vehicle", self.ego)));
        }
        if !(self.comm_range >= 0.0 && self.sensing_range > 0.0) {
            return Err(Error::config("ranges must be positive"));
        }
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        for a in &self.agents {
            if !finite(&[a.pose.x, a.pose.y, a.pose.yaw, a.velocity[0], a.velocity[1]]) {
                return Err(Error::config(format!("agent {} has non-finite state", a.id)));
            }
        }
        for o in &self.objects {
            let b = &o.bbox;
            if !finite(&[b.cx, b.cy, b.cz, b.theta, o.velocity[0], o.velocity[1]]) || !(b.w > 0.0 && b.l > 0.0 && b.h > 0.0) {
                return Err(Error::config("objects need finite state and positive size"));
            }
        }
        self.grid().map(|_| ())
    }

    /// The feature grid implied by the evaluation range.
    pub fn grid(&self) -> Result<GridSpec> {
        GridSpec::from_range(
            self.eval_range.x,
            self.eval_range.y,
            self.voxel_size,
            self.stride,
            self.grid_multiple,
        )
    }

    pub fn ego_spec(&self) -> &AgentSpec {
        self.agents.iter().find(|a| a.id == self.ego).expect("validated ego")
    }

    pub fn agent(&self, id: AgentId) -> Option<&AgentSpec> {
        self.agents.iter().find(|a| a.id == id)
    }

    /// Keeps the ego and the first `n - 1` other agents.
    pub fn with_agent_count(&self, n: usize) -> Self {
        let mut out = self.clone();
        let mut kept = 0;
        out.agents.retain(|a| {
            if a.id == self.ego {
                return true;
            }
            kept += 1;
            kept < n
        });
        out
    }

    /// A seeded highway scene: the ego heading +x at the origin, cars on four
    /// lanes, `vehicles` cooperating cars and optionally one roadside unit.
    pub fn synthetic(seed: u64, vehicles: usize, infrastructure: bool, objects: usize) -> Self {
        let mut rng = SeededRng::new(seed);
        let lanes = [-5.25, -1.75, 1.75, 5.25];
        let mut agents = vec![AgentSpec {
            id: AgentId(0),
            kind: AgentKind::Vehicle,
            pose: Pose2::new(0.0, -1.75, 0.0),
            velocity: [10.0, 0.0],
        }];
        for k in 0..vehicles {
            let x = rng.uniform_range(-55.0, 55.0);
            let lane = lanes[(rng.uniform() * 4.0) as usize % 4];
            let dir = if lane > 0.0 { -1.0 } else { 1.0 };
            let speed = rng.uniform_range(6.0, 14.0);
            agents.push(AgentSpec {
                id: AgentId(k as u32 + 1),
                kind: AgentKind::Vehicle,
                pose: Pose2::new(x, lane, if dir > 0.0 { 0.0 } else { std::f64::consts::PI }),
                velocity: [dir * speed, 0.0],
            });
        }
        if infrastructure {
            agents.push(AgentSpec {
                id: AgentId(100),
                kind: AgentKind::Infrastructure,
                pose: Pose2::new(rng.uniform_range(-30.0, 30.0), 10.0, -std::f64::consts::FRAC_PI_2),
                velocity: [0.0, 0.0],
            });
        }
        let mut objs: Vec<ObjectSpec> = Vec::new();
        let mut attempts = 0;
        while objs.len() < objects && attempts < 50 * (objects + 1) {
            attempts += 1;
            let x = rng.uniform_range(-100.0, 100.0);
            let lane = lanes[(rng.uniform() * 4.0) as usize % 4];
            let dir = if lane > 0.0 { -1.0 } else { 1.0 };
            let bbox = BoxBEV::new(
                x,
                lane + rng.uniform_range(-0.3, 0.3),
                -1.0,
                rng.uniform_range(1.7, 2.1),
                rng.uniform_range(3.9, 4.9),
                1.5,
                if dir > 0.0 { 0.0 } else { std::f64::consts::PI },
            );
            let clear = |cx: f64, cy: f64| (bbox.cx - cx).abs() > 7.0 || (bbox.cy - cy).abs() > 2.5;
            if objs.iter().all(|o| clear(o.bbox.cx, o.bbox.cy)) && agents.iter().all(|a| clear(a.pose.x, a.pose.y)) {
                objs.push(ObjectSpec {
                    bbox,
                    velocity: [dir * rng.uniform_range(5.0, 15.0), 0.0],
                });
            }
        }
        ScenarioConfig {
            seed,
            ego: AgentId(0),
            agents,
            objects: objs,
            channel: ChannelParams::default(),
            eval_range: EvalRange::default(),
            voxel_size: default_voxel(),
            stride: default_stride(),
            grid_multiple: default_multiple(),
            comm_range: default_comm(),
            sensing_range: default_sensing(),
        }
    }
}
