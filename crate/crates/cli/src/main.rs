use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use lesionfuse::metrics::SegMode;
use lesionfuse::tim::InspectionMode;

mod commands;

use commands::Failure;

/// Fuse lesion masks, score them and revise DR grades.
#[derive(Debug, Parser)]
#[command(name = "lesionfuse", version)]
struct Cli {
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, value_parser = clap::value_parser!(u16).range(1..))]
    jobs: Option<u16>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fuse per-model predictions into one mask per lesion class.
    Fuse(FuseArgs),
    /// Score predicted class masks against ground truth.
    EvalSeg(EvalSegArgs),
    /// Revise preliminary grades from fused lesion areas.
    GradeRevise(GradeReviseArgs),
    /// Quadratic weighted kappa between two grade files.
    EvalKappa(EvalKappaArgs),
    /// Expand a dataset six-fold with flips and rotations.
    Augment(AugmentArgs),
    /// Write a deterministic synthetic corpus.
    Synth(SynthArgs),
}

#[derive(Debug, Args)]
pub struct FuseArgs {
    /// Built-in recipe (v1, v2, tim) or a JSON recipe file.
    #[arg(long, default_value = "v1")]
    pub recipe: String,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Side of the square grid fused masks are written at.
    #[arg(long, default_value_t = 1024)]
    pub canonical: usize,
    /// Also write `<out>/<id>/overlay.png`.
    #[arg(long)]
    pub emit_overlays: bool,
    /// Directory holding `<id>.png` source images for overlays; defaults to `images/` next to the manifest.
    #[arg(long)]
    pub images: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalSegArgs {
    /// Predicted masks in `<dir>/<id>/class{1,2,3}.png` layout.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground truth in the same layout.
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long, default_value = "aggregate", value_parser = parse_seg_mode)]
    pub seg_mode: SegMode,
    /// Directory for `seg_report.txt` and `seg_report.json`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradeReviseArgs {
    /// Preliminary grades, `image_id,grade`.
    #[arg(long)]
    pub prelim: PathBuf,
    /// Fused masks in `<dir>/<id>/class{1,2,3}.png` layout.
    #[arg(long)]
    pub fused: PathBuf,
    /// TOML thresholds; defaults to the built-in table.
    #[arg(long)]
    pub thresholds: Option<PathBuf>,
    #[arg(long, default_value = "same-index", value_parser = parse_mode)]
    pub mode: InspectionMode,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalKappaArgs {
    #[arg(long)]
    pub assigned: PathBuf,
    #[arg(long)]
    pub reference: PathBuf,
    /// Optional JSON summary path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    /// Dataset CSV, `image_id,path,mask_a,mask_b,grade`.
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 10)]
    pub n_images: usize,
    /// Canonical side; 1536-labelled predictions are written at 3/2 of it.
    #[arg(long, default_value_t = 1024)]
    pub canonical: usize,
    /// Recipes to cover; repeatable. Defaults to all built-ins.
    #[arg(long)]
    pub recipe: Vec<String>,
    #[arg(long)]
    pub out: PathBuf,
}

fn parse_seg_mode(s: &str) -> Result<SegMode, String> {
    s.parse().map_err(|e: lesionfuse::Error| e.to_string())
}

fn parse_mode(s: &str) -> Result<InspectionMode, String> {
    s.parse().map_err(|e: lesionfuse::Error| e.to_string())
}

fn run(cli: Cli) -> Result<(), Failure> {
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.jobs {
        pool = pool.num_threads(n as usize);
    }
    let pool = pool.build().map_err(|e| Failure::Invalid(e.to_string()))?;
    pool.install(|| match cli.command {
        Command::Fuse(a) => commands::fuse(&a),
        Command::EvalSeg(a) => commands::eval_seg(&a),
        Command::GradeRevise(a) => commands::grade_revise(&a),
        Command::EvalKappa(a) => commands::eval_kappa(&a),
        Command::Augment(a) => commands::augment(&a),
        Command::Synth(a) => commands::synth(&a),
    })
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {f}");
            ExitCode::from(f.code())
        }
    }
}
