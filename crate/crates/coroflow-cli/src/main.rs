//! `coroflow` — synthetic coronary pressure pipeline.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/format error, 3 numeric
//! failure (non-finite loss or a failed gradient check).

mod commands;
mod error;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};

use error::CliError;

#[derive(Parser)]
#[command(
    name = "coroflow",
    version,
    about = "Coronary centerline pressure pipeline"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn parse_triple_usize(s: &str) -> Result<[usize; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!(
            "expected three comma-separated integers, got '{s}'"
        ));
    }
    let mut out = [0usize; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.trim().parse().map_err(|_| format!("bad integer '{p}'"))?;
    }
    Ok(out)
}

fn parse_triple_f64(s: &str) -> Result<[f64; 3], String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("expected three comma-separated numbers, got '{s}'"));
    }
    let mut out = [0.0f64; 3];
    for (o, p) in out.iter_mut().zip(&parts) {
        *o = p.trim().parse().map_err(|_| format!("bad number '{p}'"))?;
    }
    Ok(out)
}

#[derive(clap::Args)]
pub struct SynthArgs {
    /// Number of synthetic cases.
    #[arg(long, default_value_t = 10)]
    cases: usize,
    /// Bifurcation depth below the root segment.
    #[arg(long, default_value_t = 3)]
    depth: usize,
    /// Volume dimensions in voxels.
    #[arg(long, value_parser = parse_triple_usize, default_value = "96,96,96")]
    dims: [usize; 3],
    /// Voxel spacing in mm.
    #[arg(long, value_parser = parse_triple_f64, default_value = "0.5,0.5,0.5")]
    spacing: [f64; 3],
    /// Pressure-averaging radius ε in mm.
    #[arg(long, default_value_t = 5.0)]
    epsilon: f64,
    /// Cubic patch edge in voxels.
    #[arg(long, default_value_t = 28)]
    patch: usize,
    /// Split weights train,val,test (normalized).
    #[arg(long, value_parser = parse_triple_f64, default_value = "0.8,0.1,0.1")]
    ratios: [f64; 3],
    /// Volume noise sigma (intensity units); 0 disables noise.
    #[arg(long, default_value_t = 12.0)]
    noise_sigma: f64,
    /// Centerline vertex spacing in mm (one sample per vertex).
    #[arg(long, default_value_t = 1.5)]
    sample_step: f64,
    /// Also write each case's centerline as ASCII VTP under OUT/vtp/.
    #[arg(long)]
    emit_vtp: bool,
    /// Output dataset directory.
    #[arg(long)]
    out: std::path::PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(clap::Args)]
pub struct ExtractArgs {
    /// NIfTI-1 volume (.nii).
    #[arg(long, required_unless_present = "batch", conflicts_with = "batch")]
    volume: Option<std::path::PathBuf>,
    /// Centerline VTP (sample locations).
    #[arg(long, required_unless_present = "batch", conflicts_with = "batch")]
    centerline: Option<std::path::PathBuf>,
    /// Pressure cloud VTP (pressure_ave_mmhg scalars).
    #[arg(long, required_unless_present = "batch", conflicts_with = "batch")]
    pressure: Option<std::path::PathBuf>,
    /// Case id for single-file mode (defaults to the volume stem).
    #[arg(long)]
    case_id: Option<String>,
    /// JSON case list: [{"id", "volume", "centerline", "pressure"}, ...].
    #[arg(long)]
    batch: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 5.0)]
    epsilon: f64,
    #[arg(long, default_value_t = 28)]
    patch: usize,
    /// Split weights train,val,test (normalized).
    #[arg(long, value_parser = parse_triple_f64)]
    ratios: Option<[f64; 3]>,
    #[arg(long)]
    out: std::path::PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(clap::Args)]
pub struct SplitArgs {
    /// Dataset directory to re-split in place.
    #[arg(long)]
    data: std::path::PathBuf,
    /// Split weights train,val,test (counts or fractions; normalized).
    #[arg(long, value_parser = parse_triple_f64)]
    ratios: [f64; 3],
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(clap::Args)]
pub struct TrainArgs {
    #[arg(long)]
    data: std::path::PathBuf,
    /// Model kind: icd | cnn-mlp.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 15)]
    epochs: usize,
    #[arg(long, default_value_t = 64)]
    batch: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    weight_decay: f64,
    /// Output model file.
    #[arg(long)]
    out: std::path::PathBuf,
    /// Optional CSV loss trace (epoch,train_loss,val_loss).
    #[arg(long)]
    loss_log: Option<std::path::PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(clap::Args)]
pub struct PredictArgs {
    #[arg(long)]
    model: std::path::PathBuf,
    #[arg(long)]
    data: std::path::PathBuf,
    /// Which split to predict: train | val | test.
    #[arg(long, default_value = "test")]
    split: String,
    /// Override the stored reverse-process sample count K.
    #[arg(long)]
    samples: Option<usize>,
    #[arg(long)]
    out: std::path::PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    #[arg(long)]
    preds: std::path::PathBuf,
    /// JSON report output.
    #[arg(long)]
    report: std::path::PathBuf,
    /// Also print the aligned text table.
    #[arg(long)]
    table: bool,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(clap::Args)]
pub struct ExportVisArgs {
    #[arg(long)]
    preds: std::path::PathBuf,
    /// Case id to export.
    #[arg(long)]
    case: String,
    /// Absolute-error thresholds t1,t2,t3 in mmHg (default 0.5σ,1σ,2σ of
    /// the case's label spread).
    #[arg(long, value_parser = parse_triple_f64)]
    thresholds: Option<[f64; 3]>,
    #[arg(long)]
    out: std::path::PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(clap::Args)]
pub struct GradcheckArgs {
    /// Model kind: icd | cnn-mlp.
    #[arg(long)]
    model: String,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic cases and write a patch dataset.
    Synth(SynthArgs),
    /// Build a patch dataset from volume + centerline + pressure files.
    Extract(ExtractArgs),
    /// Reassign case splits and refit label statistics.
    Split(SplitArgs),
    /// Train a model on a dataset.
    Train(TrainArgs),
    /// Predict pressures for one split of a dataset.
    Predict(PredictArgs),
    /// Evaluate a prediction CSV into a case-wise report.
    Eval(EvalArgs),
    /// Export one case's predictions as an error-colored ASCII PLY.
    #[command(name = "export-vis")]
    ExportVis(ExportVisArgs),
    /// Verify model gradients against finite differences (f64).
    Gradcheck(GradcheckArgs),
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Synth(a) => commands::synth(a),
        Command::Extract(a) => commands::extract(a),
        Command::Split(a) => commands::split(a),
        Command::Train(a) => commands::train(a),
        Command::Predict(a) => commands::predict(a),
        Command::Eval(a) => commands::eval(a),
        Command::ExportVis(a) => commands::export_vis(a),
        Command::Gradcheck(a) => commands::gradcheck(a),
    }
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                std::process::exit(0);
            }
            let _ = e.print();
            std::process::exit(1);
        }
    };
    if let Err(e) = run(cli) {
        eprintln!("error: {e}");
        std::process::exit(e.exit_code());
    }
}
