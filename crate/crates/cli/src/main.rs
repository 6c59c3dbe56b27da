mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use csi_dielectric::preprocess::{Window, DEFAULT_C_DB};

/// Dielectric property estimation from WiFi CSI traces.
///
/// Subcarrier positions are 1-based on the trace grid's index list; position 16 is the
/// default carrier.
#[derive(Debug, Parser)]
#[command(name = "csieps", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Synthesize traces for a material set and write a truth manifest.
    Simulate(SimulateArgs),
    /// Fit per-subcarrier calibration profiles from known materials.
    Calibrate(CalibrateArgs),
    /// Estimate permittivity and conductivity of traces and write a CSV report.
    Estimate(EstimateArgs),
    /// Summarize an estimate report against truth values.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaterialSet {
    /// The 10 ethanol/water mixtures, all used for calibration.
    Mixtures,
    /// Mixtures for calibration plus both liquors as test materials.
    Ethanol,
    /// Mixtures for calibration plus every other reference liquid and air.
    Validation,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario JSON file.
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory for traces and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = MaterialSet::Ethanol)]
    material_set: MaterialSet,
}

#[derive(Debug, Args)]
pub struct Processing {
    /// Averaging window in seconds.
    #[arg(long, value_parser = parse_window, default_value = "10:20")]
    window: Window,
    /// Reference constant of the RSSI/AGC power conversion, dB.
    #[arg(long, default_value_t = DEFAULT_C_DB)]
    c_db: f64,
    /// 1-based subcarrier position.
    #[arg(long, default_value_t = 16, conflicts_with = "all_subcarriers")]
    subcarrier: usize,
    /// Process every subcarrier of the grid.
    #[arg(long)]
    all_subcarriers: bool,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    /// Truth manifest; without --traces its calibration entries are used.
    #[arg(long)]
    manifest: PathBuf,
    /// Trace files or directories of *.jsonl files.
    #[arg(long, num_args = 1..)]
    traces: Vec<PathBuf>,
    /// Directory receiving profile_sc<N>.json files.
    #[arg(long)]
    profile_dir: PathBuf,
    #[command(flatten)]
    processing: Processing,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Directory holding profile_sc<N>.json files.
    #[arg(long)]
    profile_dir: PathBuf,
    /// Trace files or directories of *.jsonl files.
    #[arg(long, num_args = 1..)]
    traces: Vec<PathBuf>,
    /// Truth values for the report; without --traces its test entries are estimated.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// CSV report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Number of full turns added to the transmission phase.
    #[arg(long, default_value_t = 0)]
    wrap_hint: u32,
    #[command(flatten)]
    processing: Processing,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Estimate CSV report.
    #[arg(long)]
    estimates: PathBuf,
    /// Truth values overriding the report's truth columns.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Optional CSV copy of the summary table.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_window(s: &str) -> Result<Window, String> {
    let (a, b) = s.split_once(':').ok_or("expected START:END")?;
    let a: f64 = a.trim().parse().map_err(|e| format!("start: {e}"))?;
    let b: f64 = b.trim().parse().map_err(|e| format!("end: {e}"))?;
    Window::new(a, b).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Simulate(a) => commands::simulate(&a),
        Command::Calibrate(a) => commands::calibrate(&a),
        Command::Estimate(a) => commands::estimate(&a),
        Command::Evaluate(a) => commands::evaluate(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.is::<commands::NotFound>() {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
