//! The `sparseflow` command-line tool.

mod commands;
mod config;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};

pub use commands::{load_fixture, write_fixture, LoadedFixture};
pub use config::{ConfigFile, CONFIG_ENV};

use crate::error::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "sparseflow", version, about = "Sparse global matching flow compensation for frame interpolation")]
pub struct Cli {
    /// Worker threads (0 = one per core). Never changes results.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Seed for every random choice.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Suppress informational output.
    #[arg(long, global = true)]
    pub quiet: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Backward- or forward-warp an image by a flow.
    Warp(WarpArgs),
    /// Difference maps D0 and D1 for two frames and intermediate flows.
    Diffmap(DiffmapArgs),
    /// Sparse global matching of the top flaw cells in both directions.
    Match(MatchArgs),
    /// Shift a sparse frame-to-frame flow to time t.
    Shift(ShiftArgs),
    /// Merge sparse compensation into the main intermediate flows.
    Merge(MergeArgs),
    /// Synthesize the intermediate frame.
    Synthesize(SynthesizeArgs),
    /// Image quality and flow error metrics.
    Evaluate(EvaluateArgs),
    /// Motion statistics and hardest-subset selection over a manifest.
    Curate(CurateArgs),
    /// Write a synthetic fixture directory.
    Synth(SynthArgs),
    /// Run the whole compensation pipeline on a fixture directory.
    Run(RunArgs),
    /// Compare flow shifting against the linear baselines.
    CompareReversal(CompareArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum WarpMode {
    Backward,
    Forward,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum BorderArg {
    Clamp,
    Zero,
}

#[derive(Debug, Args)]
pub struct WarpArgs {
    #[arg(long, value_enum)]
    pub mode: WarpMode,
    /// Input PNG.
    #[arg(long)]
    pub input: PathBuf,
    /// Flow (.flo) on the input grid.
    #[arg(long)]
    pub flow: PathBuf,
    /// Output PNG.
    #[arg(long)]
    pub out: PathBuf,
    /// Border handling of backward warping.
    #[arg(long, value_enum, default_value = "clamp")]
    pub border: BorderArg,
    /// Forward warping only: splat weights as a 16-bit heatmap PNG.
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

/// Pipeline parameters shared by several subcommands. Unset values fall
/// back to the config file, then to defaults.
#[derive(Debug, Args, Clone, Default)]
pub struct PipelineArgs {
    /// Intermediate time in [0, 1].
    #[arg(long)]
    pub t: Option<f64>,
    /// Hole threshold on splat weights.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Softmax temperature of the matching.
    #[arg(long)]
    pub temperature: Option<f64>,
    /// Matches below this confidence are dropped before shifting and
    /// ignored by the merge.
    #[arg(long)]
    pub min_confidence: Option<f64>,
    /// Merge logit gain on the flaw score.
    #[arg(long)]
    pub gain: Option<f64>,
    /// Merge logit bias.
    #[arg(long)]
    pub bias: Option<f64>,
    /// Merge neighbourhood size (odd).
    #[arg(long)]
    pub radius: Option<usize>,
}

#[derive(Debug, Args)]
pub struct DiffmapArgs {
    #[arg(long)]
    pub i0: PathBuf,
    #[arg(long)]
    pub i1: PathBuf,
    #[arg(long)]
    pub ft0: PathBuf,
    #[arg(long)]
    pub ft1: PathBuf,
    /// Scale exponent i: maps are built on the grid downscaled by 2^i.
    #[arg(long)]
    pub scale: Option<u8>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Output D0 (FMP1, one channel).
    #[arg(long)]
    pub out_d0: PathBuf,
    /// Output D1 (FMP1, one channel).
    #[arg(long)]
    pub out_d1: PathBuf,
    /// Optional 16-bit heatmap PNG of D0.
    #[arg(long)]
    pub heatmap_d0: Option<PathBuf>,
    /// Optional 16-bit heatmap PNG of D1.
    #[arg(long)]
    pub heatmap_d1: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SelectionArg {
    Topk,
    Random,
}

#[derive(Debug, Args)]
pub struct MatchArgs {
    #[arg(long)]
    pub a0: PathBuf,
    #[arg(long)]
    pub a1: PathBuf,
    #[arg(long)]
    pub d0: PathBuf,
    #[arg(long)]
    pub d1: PathBuf,
    /// Fraction of grid cells to match.
    #[arg(long, conflicts_with = "k")]
    pub sparsity: Option<f64>,
    /// Number of cells to match.
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long, value_enum, default_value = "topk")]
    pub selection: SelectionArg,
    /// Output sparse f_01 (FMP1, five channels).
    #[arg(long)]
    pub out01: PathBuf,
    /// Output sparse f_10 (FMP1, five channels).
    #[arg(long)]
    pub out10: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DirectionArg {
    From0,
    From1,
}

#[derive(Debug, Args)]
pub struct ShiftArgs {
    /// Sparse frame-to-frame flow (FMP1, five channels).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum)]
    pub direction: DirectionArg,
    #[arg(long)]
    pub t: Option<f64>,
    /// Maximum surviving cells (default: the input support size).
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Drop input matches below this confidence first.
    #[arg(long)]
    pub min_confidence: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MergeArgs {
    /// Main F_t0 (.flo), any resolution.
    #[arg(long)]
    pub main0: PathBuf,
    /// Main F_t1 (.flo), any resolution.
    #[arg(long)]
    pub main1: PathBuf,
    /// Sparse compensation for F_t0 (FMP1, five channels).
    #[arg(long)]
    pub comp0: PathBuf,
    /// Sparse compensation for F_t1 (FMP1, five channels).
    #[arg(long)]
    pub comp1: PathBuf,
    #[command(flatten)]
    pub params: PipelineArgs,
    #[arg(long)]
    pub out0: PathBuf,
    #[arg(long)]
    pub out1: PathBuf,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    #[arg(long)]
    pub i0: PathBuf,
    #[arg(long)]
    pub i1: PathBuf,
    #[arg(long)]
    pub ft0: PathBuf,
    #[arg(long)]
    pub ft1: PathBuf,
    #[arg(long)]
    pub t: Option<f64>,
    /// Fusion map (FMP1, one channel); defaults to the constant 1 - t.
    #[arg(long)]
    pub fusion: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Predicted frame (PNG).
    #[arg(long, requires = "gt")]
    pub pred: Option<PathBuf>,
    /// Ground-truth frame (PNG).
    #[arg(long)]
    pub gt: Option<PathBuf>,
    /// Estimated flow (.flo).
    #[arg(long, requires = "gt_flow")]
    pub flow: Option<PathBuf>,
    /// Ground-truth flow (.flo).
    #[arg(long)]
    pub gt_flow: Option<PathBuf>,
    /// CSV report path (default: stdout).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CurateModeArg {
    RankHalf,
    Threshold,
}

#[derive(Debug, Args)]
pub struct CurateArgs {
    /// Tab-separated `id<TAB>flow[<TAB>flow2]` manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Fraction of largest magnitudes examined.
    #[arg(long, default_value_t = crate::curation::DEFAULT_TOP_FRACTION)]
    pub p: f64,
    #[arg(long, value_enum, default_value = "rank-half")]
    pub mode: CurateModeArg,
    /// Magnitude threshold in pixels for threshold mode.
    #[arg(long, default_value_t = 0.0)]
    pub threshold: f64,
    /// Per-triplet CSV (default: stdout).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// CDF points of both statistics as CSV.
    #[arg(long)]
    pub cdf: Option<PathBuf>,
    /// Kept triplets, hardest first, as a manifest.
    #[arg(long)]
    pub subset: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SceneArg {
    MovingSquare,
    Translation,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Fixture directory (created if missing).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "moving-square")]
    pub scene: SceneArg,
    /// Frame size in pixels (square frames).
    #[arg(long, default_value_t = crate::scenes::FIXTURE_SIZE)]
    pub size: usize,
    /// Square side in pixels.
    #[arg(long, default_value_t = crate::scenes::FIXTURE_SQUARE)]
    pub square: usize,
    #[arg(long, default_value_t = crate::scenes::FIXTURE_DISPLACEMENT.0, allow_hyphen_values = true)]
    pub dx: f64,
    #[arg(long, default_value_t = crate::scenes::FIXTURE_DISPLACEMENT.1, allow_hyphen_values = true)]
    pub dy: f64,
    /// Scale exponent of the feature maps.
    #[arg(long, default_value_t = crate::scenes::FIXTURE_SCALE)]
    pub scale: u8,
    /// Write the exact intermediate flows as the initial ones.
    #[arg(long)]
    pub exact: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Fixture directory as written by `synth`.
    #[arg(long)]
    pub fixtures: PathBuf,
    /// Comma-separated sparsity fractions; one report row each.
    #[arg(long, value_delimiter = ',')]
    pub sparsity: Vec<f64>,
    /// Use seeded random sampling instead of top-k.
    #[arg(long)]
    pub random: bool,
    #[command(flatten)]
    pub params: PipelineArgs,
    /// CSV report path (default: stdout).
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Directory for compensated flows and synthesized frames.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub fixtures: PathBuf,
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[command(flatten)]
    pub params: PipelineArgs,
    /// CSV report path (default: stdout).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    if e.is_io() {
        EXIT_IO
    } else {
        EXIT_VALIDATION
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code; diagnostics go to `stderr`.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    match execute(cli, stdout, stderr) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            exit_code(&e)
        }
    }
}

fn execute(cli: Cli, stdout: &mut dyn Write, stderr: &mut dyn Write) -> crate::Result<()> {
    let ctx = commands::Context::resolve(&cli, ConfigFile::from_env()?)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(ctx.threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;
    let (result, out, log) = pool.install(|| commands::dispatch(&cli.command, ctx));
    let _ = stdout.write_all(&out);
    let _ = stderr.write_all(&log);
    result
}
