//! `tongue-ema`: command-line driver for the EMA tongue animation pipeline.

mod commands;
mod config;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::error::{CliError, EXIT_MALFORMED};

#[derive(Debug, Parser)]
#[command(name = "tongue-ema", version, about = "Drive a branched tongue rig from EMA coil sweeps")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Project config (JSON). Flags override its values.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Read and validate everything, compute, but write no files.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Solve annotated segments concurrently.
    #[arg(long, global = true)]
    pub parallel: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic project: sweep, annotations, ground truth, rig and scan mesh.
    Synth(SynthArgs),
    /// Head-correct, resample and clean a raw sweep.
    Ingest(IngestArgs),
    /// Register a scan mesh to the rig, compute skin weights and bind struts.
    Bind(BindArgs),
    /// Solve IK for every frame of a clean sweep.
    Solve(SolveArgs),
    /// Cut a pose file into named actions at its annotations.
    Actions(ActionsArgs),
    /// Concatenate library actions into one action.
    Timeline(TimelineArgs),
    /// Skin every stride-th frame of an action into an OBJ sequence.
    Bake(BakeArgs),
    /// Write the per-segment animation JSON of an action.
    Export(ExportArgs),
    /// Summarize a pose file: volumes, joint jumps and fit residuals.
    Report(ReportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Gaussian position noise per axis (mm).
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub outlier_rate: Option<f64>,
    #[arg(long)]
    pub dropout_rate: Option<f64>,
    /// Number of ta cycles.
    #[arg(long)]
    pub repeat: Option<usize>,
    #[arg(long)]
    pub rate: Option<f64>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long = "in", value_name = "CSV")]
    pub input: PathBuf,
    #[arg(long, value_name = "CSV")]
    pub out: PathBuf,
    #[arg(long, value_name = "JSON")]
    pub annotations: Option<PathBuf>,
    /// Where to write annotations remapped to the output rate.
    #[arg(long, value_name = "JSON")]
    pub annotations_out: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    pub report: Option<PathBuf>,
    /// Output sample rate (Hz).
    #[arg(long)]
    pub rate: Option<f64>,
    #[arg(long)]
    pub median_window: Option<usize>,
    /// Speed (mm/s) above which a sample counts as an outlier.
    #[arg(long)]
    pub max_speed: Option<f64>,
}

#[derive(Debug, Args)]
pub struct BindArgs {
    /// Clean sweep supplying the bind frame.
    #[arg(long, value_name = "CSV")]
    pub sweep: PathBuf,
    /// Scan mesh (OBJ, with `# landmark` lines unless the config has a registration).
    #[arg(long, value_name = "OBJ")]
    pub mesh: PathBuf,
    /// Rig-space landmark positions.
    #[arg(long, value_name = "JSON")]
    pub landmarks: Option<PathBuf>,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub bind_frame: Option<usize>,
    /// Also write a weight heatmap CSV for this bone.
    #[arg(long, value_name = "BONE")]
    pub heatmap: Option<String>,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[arg(long = "in", value_name = "CSV")]
    pub input: PathBuf,
    /// Pose file to write.
    #[arg(long, value_name = "BIN")]
    pub out: PathBuf,
    #[arg(long, value_name = "JSON")]
    pub annotations: Option<PathBuf>,
    /// Bound struts from `bind`; otherwise struts are bound from the input sweep.
    #[arg(long, value_name = "JSON")]
    pub struts: Option<PathBuf>,
    /// Full per-frame report.
    #[arg(long, value_name = "JSON")]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub max_iterations: Option<usize>,
    #[arg(long)]
    pub bind_frame: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ActionsArgs {
    #[arg(long, value_name = "BIN")]
    pub poses: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    /// Source name recorded in each action; defaults to the pose file stem.
    #[arg(long)]
    pub sweep_id: Option<String>,
}

#[derive(Debug, Args)]
pub struct TimelineArgs {
    #[arg(long, value_name = "DIR")]
    pub library: PathBuf,
    #[arg(long, value_name = "JSON")]
    pub timeline: PathBuf,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "timeline")]
    pub name: String,
}

#[derive(Debug, Args)]
pub struct SkinInputs {
    /// Action header (`<name>.json`; its `<name>.csv` sits beside it).
    #[arg(long, value_name = "JSON")]
    pub action: PathBuf,
    /// Registered mesh from `bind`.
    #[arg(long, value_name = "OBJ")]
    pub mesh: PathBuf,
    #[arg(long, value_name = "JSON")]
    pub weights: PathBuf,
    /// Keep every n-th frame.
    #[arg(long)]
    pub stride: Option<usize>,
}

#[derive(Debug, Args)]
pub struct BakeArgs {
    #[command(flatten)]
    pub inputs: SkinInputs,
    #[arg(long, value_name = "DIR")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub inputs: SkinInputs,
    #[arg(long, value_name = "JSON")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, value_name = "BIN")]
    pub poses: PathBuf,
    /// Sweep to measure endpoint residuals against.
    #[arg(long, value_name = "CSV")]
    pub sweep: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    pub struts: Option<PathBuf>,
    #[arg(long, value_name = "JSON")]
    pub out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let msg = e.render().to_string();
            let first = msg.lines().next().unwrap_or("bad arguments").trim_start_matches("error: ");
            eprintln!("{}", CliError::usage(first).to_json());
            return ExitCode::from(EXIT_MALFORMED as u8);
        }
    };
    match commands::run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
