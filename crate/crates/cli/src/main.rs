use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use v2xvit_core::harness::{
    flops_table, run_pipeline, run_selftest, run_sweep, AgentLink, Decoder, Detection, Mode, PrPoint, ScenarioConfig,
    SweepParam, SWEEP_HEADER,
};
use v2xvit_core::model::{ModelConfig, ModelWeights};
use v2xvit_core::mswin::{flops_estimate, FlopsFamily, FlopsInput};
use v2xvit_core::Error;

const EXIT_CONFIG: u8 = 2;
const EXIT_INVARIANT: u8 = 3;

#[derive(Parser)]
#[command(name = "v2xvit", version, about = "Cooperative V2X perception simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario end to end and report AP.
    Simulate(SimulateArgs),
    /// Vary one channel or fleet parameter and write AP per value as CSV.
    Sweep(SweepArgs),
    /// Leading-order FLOPs of five attention families as CSV.
    Flops(FlopsArgs),
    /// Oracle and invariant checks; exits 3 if any fails.
    Selftest(SelftestArgs),
    /// Write a seeded random weight file.
    InitWeights(InitArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelSize {
    /// C=256, 3 blocks, 8 HMSA heads, windows 4/8/16.
    Default,
    /// C=16, 2 blocks; fast enough for quick sweeps.
    Small,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Perfect,
    Noisy,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Perfect => Mode::Perfect,
            ModeArg::Noisy => Mode::Noisy,
        }
    }
}

#[derive(Args)]
struct WeightArgs {
    /// Weight file; random weights from --model and --seed when absent.
    #[arg(long)]
    weights: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "default")]
    model: ModelSize,
}

#[derive(Args)]
struct SimulateArgs {
    /// Scenario JSON.
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    weights: WeightArgs,
    #[arg(long, value_enum, default_value = "noisy")]
    mode: ModeArg,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory for metrics.json and detections.json; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    /// delay | sigma-xy | sigma-heading | compression | agents
    #[arg(long)]
    param: String,
    /// Comma-separated parameter values.
    #[arg(long, value_delimiter = ',', required = true)]
    values: Vec<f64>,
    /// Base scenario JSON; a seeded synthetic highway scene when absent.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    weights: WeightArgs,
    /// Channel realizations per value.
    #[arg(long, default_value_t = 4)]
    scenarios: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for sweep.csv; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FlopsArgs {
    #[arg(long, default_value_t = 48)]
    h: usize,
    #[arg(long, default_value_t = 176)]
    w: usize,
    #[arg(long, default_value_t = 256)]
    c: usize,
    /// Base head count of the multi-scale window family.
    #[arg(long, default_value_t = 16)]
    heads: usize,
    #[arg(long, default_value_t = 4)]
    window: usize,
    #[arg(long, default_value_t = 3)]
    branches: usize,
    /// Stripe width of the cross-shaped window family.
    #[arg(long, default_value_t = 7)]
    stripe: usize,
    /// Output directory for flops.csv; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SelftestArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for selftest.json; stdout otherwise.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InitArgs {
    #[arg(long, value_enum, default_value = "default")]
    model: ModelSize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Channel reduction of the compressor; the model's own when absent.
    #[arg(long)]
    compression: Option<usize>,
    /// Output directory; the file is named weights.safetensors.
    #[arg(long)]
    out: PathBuf,
}

fn model_config(size: ModelSize) -> ModelConfig {
    match size {
        ModelSize::Default => ModelConfig::default(),
        ModelSize::Small => ModelConfig::small(),
    }
}

/// Loads the weight file, or draws random weights whose compressor matches
/// the scenario's compression rate.
fn weights_for(args: &WeightArgs, scenario: &ScenarioConfig, seed: u64) -> Result<ModelWeights> {
    if let Some(path) = &args.weights {
        return ModelWeights::load(path).with_context(|| format!("loading {}", path.display()));
    }
    let mut cfg = model_config(args.model);
    cfg.compression_rate = scenario.channel.compression_rate;
    Ok(ModelWeights::random(&cfg, seed)?)
}

fn output(out: Option<&Path>, name: &str, body: &[u8]) -> Result<()> {
    match out {
        Some(dir) => {
            fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
            let path = dir.join(name);
            fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
            eprintln!("wrote {}", path.display());
        }
        None => io::stdout().write_all(body)?,
    }
    Ok(())
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
}

#[derive(Serialize)]
struct Metrics<'a> {
    mode: &'a str,
    seed: u64,
    /// How the precision-recall curve is integrated.
    ap_interpolation: &'a str,
    ap_50: f64,
    ap_70: f64,
    detections: usize,
    ground_truth: usize,
    agents: &'a [AgentLink],
    pr_50: &'a [PrPoint],
    pr_70: &'a [PrPoint],
    runtime_ms: f64,
    /// Leading-order FLOPs of one multi-scale window attention layer on this grid.
    mswin_layer_flops: f64,
}

#[derive(Serialize)]
struct Frame<'a> {
    frame: usize,
    detections: &'a [Detection],
}

fn simulate(args: SimulateArgs) -> Result<ExitCode> {
    let mut scenario = ScenarioConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let weights = weights_for(&args.weights, &scenario, scenario.seed)?;
    let mode: Mode = args.mode.into();
    let start = Instant::now();
    let run = run_pipeline(&scenario, &weights, mode)?;
    let grid = scenario.grid()?;
    let (dets, report) = run.evaluate(&Decoder::new(grid.clone(), weights.config.anchors.clone()))?;
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;
    let mswin = &weights.config.mswin;
    let flops_input = FlopsInput {
        h: grid.rows,
        w: grid.cols,
        c: weights.config.channels,
        heads: mswin.heads[0],
        window: mswin.windows[0],
        branches: mswin.windows.len(),
        ..FlopsInput::default()
    };
    let metrics = Metrics {
        mode: match mode {
            Mode::Perfect => "perfect",
            Mode::Noisy => "noisy",
        },
        seed: scenario.seed,
        ap_interpolation: "all-point",
        ap_50: report.ap_50,
        ap_70: report.ap_70,
        detections: report.detections,
        ground_truth: report.ground_truth,
        agents: &run.links,
        pr_50: &report.pr_50,
        pr_70: &report.pr_70,
        runtime_ms,
        mswin_layer_flops: flops_estimate(FlopsFamily::MSwin, &flops_input)?,
    };
    let mut body = serde_json::to_vec_pretty(&metrics)?;
    body.push(b'\n');
    output(args.out.as_deref(), "metrics.json", &body)?;
    if let Some(dir) = &args.out {
        let frames = [Frame {
            frame: 0,
            detections: &dets,
        }];
        output(Some(dir), "detections.json", &serde_json::to_vec_pretty(&frames)?)?;
    }
    Ok(ExitCode::SUCCESS)
}

fn sweep(args: SweepArgs) -> Result<ExitCode> {
    let param: SweepParam = args.param.parse()?;
    let base = match &args.config {
        Some(path) => ScenarioConfig::load(path)?,
        None => {
            let mut s = ScenarioConfig::synthetic(args.seed, 4, true, 24);
            s.channel.compression_rate = model_config(args.weights.model).compression_rate;
            s
        }
    };
    let weights = weights_for(&args.weights, &base, args.seed)?;
    let mut base = base;
    base.channel.compression_rate = weights.compressor.rate();
    let rows = run_sweep(&base, &weights, param, &args.values, args.scenarios, args.seed)?;
    let body = csv_bytes(&SWEEP_HEADER, rows.iter().map(|r| r.record()))?;
    output(args.out.as_deref(), "sweep.csv", &body)?;
    Ok(ExitCode::SUCCESS)
}

fn flops(args: FlopsArgs) -> Result<ExitCode> {
    let input = FlopsInput {
        h: args.h,
        w: args.w,
        c: args.c,
        heads: args.heads,
        window: args.window,
        branches: args.branches,
        stripe: args.stripe,
    };
    let rows = flops_table(&input)?;
    let body = csv_bytes(
        &["family", "h_cells", "w_cells", "channels", "flops", "gflops"],
        rows.iter().map(|r| {
            vec![
                r.family.clone(),
                r.h.to_string(),
                r.w.to_string(),
                r.c.to_string(),
                format!("{:.0}", r.flops),
                format!("{:.4}", r.gflops),
            ]
        }),
    )?;
    output(args.out.as_deref(), "flops.csv", &body)?;
    Ok(ExitCode::SUCCESS)
}

fn selftest(args: SelftestArgs) -> Result<ExitCode> {
    let report = run_selftest(args.seed);
    for c in &report.checks {
        eprintln!("{} {}: {}", if c.passed { "ok  " } else { "FAIL" }, c.name, c.detail);
    }
    let mut body = serde_json::to_vec_pretty(&report)?;
    body.push(b'\n');
    output(args.out.as_deref(), "selftest.json", &body)?;
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(EXIT_INVARIANT)
    })
}

fn init_weights(args: InitArgs) -> Result<ExitCode> {
    let mut cfg = model_config(args.model);
    if let Some(rate) = args.compression {
        cfg.compression_rate = rate;
    }
    let w = ModelWeights::random(&cfg, args.seed)?;
    fs::create_dir_all(&args.out).with_context(|| format!("creating {}", args.out.display()))?;
    let path = args.out.join("weights.safetensors");
    w.save(&path)?;
    eprintln!("wrote {}", path.display());
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Sweep(a) => sweep(a),
        Command::Flops(a) => flops(a),
        Command::Selftest(a) => selftest(a),
        Command::InitWeights(a) => init_weights(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.downcast_ref::<Error>().is_some_and(Error::is_config);
            ExitCode::from(if config { EXIT_CONFIG } else { 1 })
        }
    }
}
