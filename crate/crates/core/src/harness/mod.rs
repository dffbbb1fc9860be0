//! Scenario simulation, evaluation and reference checks.
//!
//! A scenario lists agents and objects in a world frame. The synthetic sensor
//! turns each agent's view into a BEV feature map; the pipeline pushes those
//! maps through the channel model and the fusion network; the metrics module
//! decodes boxes and scores them against the ground truth.

mod metrics;
pub mod oracle;
mod pipeline;
mod scenario;
mod selftest;
mod sensor;
mod sweep;

pub use metrics::{compute_ap, decode_and_nms, nms, precision_recall, Decoder, Detection, EvalReport, PrPoint};
pub use pipeline::{run_pipeline, AgentLink, Mode, PipelineRun};
pub use scenario::{AgentSpec, EvalRange, ObjectSpec, ScenarioConfig};
pub use selftest::{run_selftest, SelftestCheck, SelftestReport};
pub use sensor::{object_visible, point_visible, render_observation, simulate_observation, visible_union, Observation, SensorView};
pub use sweep::{flops_table, run_sweep, FlopsRow, SweepParam, SweepRow, SWEEP_HEADER};
