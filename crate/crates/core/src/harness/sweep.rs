//! One-parameter robustness sweeps and the attention FLOP table.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::Decoder;
use super::pipeline::{run_pipeline, Mode};
use super::scenario::ScenarioConfig;
use crate::channel::CompressorWeights;
use crate::error::{Error, Result};
use crate::model::ModelWeights;
use crate::mswin::{flops_estimate, FlopsFamily, FlopsInput};
use crate::numerics::SeededRng;

/// CSV header of [`SweepRow`].
pub const SWEEP_HEADER: [&str; 9] = [
    "param",
    "value",
    "unit",
    "ap50_all_point",
    "ap70_all_point",
    "mean_delay_ms",
    "mean_ground_truth",
    "mean_agents",
    "scenarios",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepParam {
    /// Fixed raw link delay, ms; pose noise off.
    Delay,
    /// Positional noise std, m; no delay.
    SigmaXy,
    /// Heading noise std, degrees; no delay.
    SigmaHeading,
    /// Channel reduction factor C/C'.
    Compression,
    /// Number of agents including the ego.
    Agents,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Delay => "delay",
            SweepParam::SigmaXy => "sigma-xy",
            SweepParam::SigmaHeading => "sigma-heading",
            SweepParam::Compression => "compression",
            SweepParam::Agents => "agents",
        }
    }

    pub fn unit(self) -> &'static str {
        match self {
            SweepParam::Delay => "ms",
            SweepParam::SigmaXy => "m",
            SweepParam::SigmaHeading => "deg",
            SweepParam::Compression => "ratio",
            SweepParam::Agents => "count",
        }
    }
}

impl fmt::Display for SweepParam {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            SweepParam::Delay,
            SweepParam::SigmaXy,
            SweepParam::SigmaHeading,
            SweepParam::Compression,
            SweepParam::Agents,
        ]
        .into_iter()
        .find(|p| p.name() == s)
        .ok_or_else(|| {
            Error::config(format!(
                "unknown sweep parameter '{s}' (delay|sigma-xy|sigma-heading|compression|agents)"
            ))
        })
    }
}

/// Averages over the scenarios run at one parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub param: SweepParam,
    pub value: f64,
    pub unit: String,
    pub ap_50: f64,
    pub ap_70: f64,
    pub mean_delay_ms: f64,
    pub mean_ground_truth: f64,
    pub mean_agents: f64,
    pub scenarios: usize,
}

impl SweepRow {
    /// Fields in [`SWEEP_HEADER`] order.
    pub fn record(&self) -> Vec<String> {
        vec![
            self.param.name().to_string(),
            self.value.to_string(),
            self.unit.clone(),
            format!("{:.6}", self.ap_50),
            format!("{:.6}", self.ap_70),
            format!("{:.3}", self.mean_delay_ms),
            format!("{:.3}", self.mean_ground_truth),
            format!("{:.3}", self.mean_agents),
            self.scenarios.to_string(),
        ]
    }
}

struct Outcome {
    ap_50: f64,
    ap_70: f64,
    delay_ms: f64,
    ground_truth: usize,
    agents: usize,
}

/// The scenario and weights for one sweep point.
fn configure(base: &ScenarioConfig, w: &ModelWeights, param: SweepParam, value: f64) -> Result<(ScenarioConfig, ModelWeights, Mode)> {
    let mut cfg = base.clone();
    let mut weights = w.clone();
    let ch = &mut cfg.channel;
    let mode = match param {
        SweepParam::Delay => {
            if !(value >= 0.0) {
                return Err(Error::config("delay must be nonnegative"));
            }
            ch.fixed_delay_ms = Some(value);
            ch.sigma_xy = 0.0;
            ch.sigma_heading = 0.0;
            Mode::Noisy
        }
        SweepParam::SigmaXy | SweepParam::SigmaHeading => {
            if !(value >= 0.0) {
                return Err(Error::config("noise std must be nonnegative"));
            }
            ch.fixed_delay_ms = Some(0.0);
            ch.sigma_xy = if param == SweepParam::SigmaXy { value } else { 0.0 };
            ch.sigma_heading = if param == SweepParam::SigmaHeading { value } else { 0.0 };
            Mode::Noisy
        }
        SweepParam::Compression => {
            let rate = value as usize;
            if rate as f64 != value || rate == 0 {
                return Err(Error::config(format!("compression rate {value} must be a positive integer")));
            }
            ch.compression_rate = rate;
            let mut rng = SeededRng::derive(base.seed, rate as u64);
            weights.compressor = CompressorWeights::random(w.config.channels, rate, &mut rng)?;
            Mode::Noisy
        }
        SweepParam::Agents => {
            let n = value as usize;
            if n as f64 != value || n == 0 {
                return Err(Error::config(format!("agent count {value} must be a positive integer")));
            }
            cfg = cfg.with_agent_count(n);
            Mode::Noisy
        }
    };
    Ok((cfg, weights, mode))
}

fn run_point(base: &ScenarioConfig, w: &ModelWeights, param: SweepParam, value: f64, seed: u64) -> Result<Outcome> {
    let (mut cfg, weights, mode) = configure(base, w, param, value)?;
    cfg.seed = seed;
    let run = run_pipeline(&cfg, &weights, mode)?;
    let dec = Decoder::new(cfg.grid()?, weights.config.anchors.clone());
    let (_, report) = run.evaluate(&dec)?;
    let others: Vec<f64> = run
        .links
        .iter()
        .filter(|l| l.id != cfg.ego)
        .map(|l| l.delay.total_ms)
        .collect();
    Ok(Outcome {
        ap_50: report.ap_50,
        ap_70: report.ap_70,
        delay_ms: if others.is_empty() { 0.0 } else { others.iter().sum::<f64>() / others.len() as f64 },
        ground_truth: report.ground_truth,
        agents: run.graph.len(),
    })
}

/// Runs `scenarios` channel realizations of `base` at every value of `param`.
///
/// Realization `s` uses the seed derived from `(seed, s)` at every value, so
/// neighbouring points differ only in the swept parameter. Each run is
/// independent; results do not depend on scheduling.
pub fn run_sweep(
    base: &ScenarioConfig,
    w: &ModelWeights,
    param: SweepParam,
    values: &[f64],
    scenarios: usize,
    seed: u64,
) -> Result<Vec<SweepRow>> {
    if values.is_empty() || scenarios == 0 {
        return Err(Error::config("a sweep needs at least one value and one scenario"));
    }
    let jobs: Vec<(usize, usize)> = (0..values.len())
        .flat_map(|v| (0..scenarios).map(move |s| (v, s)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(v, s)| run_point(base, w, param, values[v], SeededRng::derive(seed, s as u64).seed()))
        .collect::<Result<Vec<_>>>()?;
    Ok(values
        .iter()
        .zip(outcomes.chunks(scenarios))
        .map(|(&value, runs)| {
            let n = runs.len() as f64;
            let mean = |f: fn(&Outcome) -> f64| runs.iter().map(f).sum::<f64>() / n;
            SweepRow {
                param,
                value,
                unit: param.unit().to_string(),
                ap_50: mean(|o| o.ap_50),
                ap_70: mean(|o| o.ap_70),
                mean_delay_ms: mean(|o| o.delay_ms),
                mean_ground_truth: mean(|o| o.ground_truth as f64),
                mean_agents: mean(|o| o.agents as f64),
                scenarios,
            }
        })
        .collect())
}

/// One line of the attention-family comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlopsRow {
    pub family: String,
    pub h: usize,
    pub w: usize,
    pub c: usize,
    pub flops: f64,
    pub gflops: f64,
}

pub fn flops_table(input: &FlopsInput) -> Result<Vec<FlopsRow>> {
    FlopsFamily::ALL
        .iter()
        .map(|&fam| {
            let flops = flops_estimate(fam, input)?;
            Ok(FlopsRow {
                family: fam.name().to_string(),
                h: input.h,
                w: input.w,
                c: input.c,
                flops,
                gflops: flops / 1e9,
            })
        })
        .collect()
}
