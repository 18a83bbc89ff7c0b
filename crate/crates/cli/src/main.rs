//! `aliascope`: train small convnets on synthetic data and audit how their
//! predictions react to one-pixel translations, rescalings and crops.

mod commands;
mod manifest;
mod theory;

use std::path::PathBuf;
use std::process::ExitCode;

use aliascope::nn::PoolDescriptor;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "aliascope", version, about = "Audit translation invariance of small CNNs")]
struct Cli {
    /// Seed for every random draw.
    #[arg(long, global = true, env = "ALIASCOPE_SEED", default_value_t = 0)]
    seed: u64,

    /// Worker threads for per-image work (0 uses every core).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic pattern dataset as `<class>/<sample>.pgm`.
    GenData(GenDataArgs),
    /// Train a network with minibatch SGD.
    Train(TrainArgs),
    /// Top-1 accuracy of a model on a dataset.
    Eval(EvalArgs),
    /// Top-1 change probability under a small translation of the embedded image.
    AuditShift(ShiftArgs),
    /// Top-1 change probability when the embedded width grows by one pixel.
    AuditScale(ScaleArgs),
    /// Top-1 change probability between two noisy crops one pixel apart.
    AuditCrop(CropArgs),
    /// Translation audit repeated for several embedding sizes.
    SweepEmbed(SweepArgs),
    /// Correct-class score of one image as its position or width varies.
    Jaggedness(JaggednessArgs),
    /// Readout accuracy and flip rate for each probed layer.
    DepthProfile(DepthArgs),
    /// Per-image shiftability error of one layer's feature maps.
    Shiftability(ShiftabilityArgs),
    /// Per-channel feature sums of one layer as the input moves.
    FeatureTrace(TraceArgs),
    /// Replace pooling layers, keeping every trained weight.
    PoolSwap(PoolSwapArgs),
    /// Chi-squared uniformity test of object positions and sizes per category.
    BiasAudit(BiasArgs),
    /// Run the exact-invariance, pooling-bound and piecewise checks.
    VerifyTheory,
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output directory (must not exist or be empty).
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 8)]
    pub classes: usize,
    #[arg(long, default_value_t = 100)]
    pub per_class: usize,
    /// Square canvas side.
    #[arg(long, default_value_t = 16)]
    pub canvas: usize,
    /// Square pattern side.
    #[arg(long, default_value_t = 6)]
    pub pattern: usize,
    /// Maximum displacement of the pattern from the centre along each axis.
    #[arg(long, default_value_t = 3)]
    pub jitter: usize,
    /// Re-embed every image at a random size in `[N, canvas]` and a random
    /// position (multi-scale set).
    #[arg(long, value_name = "N")]
    pub min_embed: Option<usize>,
    /// Background of the multi-scale set.
    #[arg(long, default_value = "black")]
    pub fill: FillArg,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum Preset {
    /// conv, maxpool 2 stride 2, conv, maxpool 2 stride 2, gap, dense.
    Strided,
    /// The strided preset with every pooling stride set to 1.
    Stride1,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training set directory.
    #[arg(long)]
    pub data: PathBuf,
    /// Network description file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub spec: Option<PathBuf>,
    /// Built-in architecture sized to the data.
    #[arg(long)]
    pub preset: Option<Preset>,
    /// Output model file.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 60)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    /// Multiplier on the uniform `1/sqrt(fan_in)` initialisation range.
    #[arg(long, default_value_t = 1.0)]
    pub init_scale: f64,
    /// Optional per-epoch loss/accuracy CSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Optional per-image prediction CSV.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, ValueEnum)]
pub enum FillArg {
    Black,
    Inpaint,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum PlacementArg {
    /// A valid position drawn per image from the seed.
    Random,
    /// The position given by `--row` and `--col`.
    Fixed,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Axis {
    /// Move down the rows.
    Y,
    /// Move along the columns.
    X,
}

/// Canvas, embedding size, background and position of the embedded image.
#[derive(Args, Debug, Clone)]
pub struct CanvasArgs {
    /// Canvas side; must equal the model input (defaults to it).
    #[arg(long)]
    pub canvas: Option<usize>,
    /// Longest side of the embedded image (defaults to 3/4 of the canvas).
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long, default_value = "black")]
    pub fill: FillArg,
    /// Top row of the embedded image.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub row: isize,
    /// Left column of the embedded image.
    #[arg(long, default_value_t = 0, allow_negative_numbers = true)]
    pub col: isize,
}

/// Embedding flags for audits, which may draw the position per image.
#[derive(Args, Debug, Clone)]
pub struct EmbedArgs {
    #[command(flatten)]
    pub canvas: CanvasArgs,
    /// `fixed` uses `--row` and `--col`.
    #[arg(long, default_value = "random")]
    pub placement: PlacementArg,
}

#[derive(Args, Debug, Clone)]
pub struct DeltaArgs {
    /// Translation in pixels.
    #[arg(long, default_value_t = 1, allow_negative_numbers = true)]
    pub delta: isize,
    #[arg(long, default_value = "y")]
    pub axis: Axis,
}

#[derive(Args, Debug)]
pub struct ShiftArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub delta: DeltaArgs,
    /// Audit CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScaleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct CropArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Images are first resized so their longest side is this long.
    #[arg(long, default_value_t = aliascope::transforms::CropSetup::DEFAULT_LONG_SIDE)]
    pub long_side: usize,
    /// Amplitude of the uniform noise added before cropping, in 0..255 units.
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepMode {
    Translate,
    Scale,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Embedding sizes, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    pub sizes: Vec<usize>,
    #[arg(long, default_value = "translate")]
    pub mode: SweepMode,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub delta: DeltaArgs,
    /// Curve CSV: one row per size.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a gnuplot script plotting the curve.
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

/// One image: a PGM/PPM file with a label, or an entry of a dataset.
#[derive(Args, Debug, Clone)]
pub struct ImageArgs {
    /// Image file (PGM or PPM).
    #[arg(long, conflicts_with = "data", requires = "label")]
    pub image: Option<PathBuf>,
    /// Correct class of `--image`.
    #[arg(long)]
    pub label: Option<usize>,
    /// Dataset directory to take the image from.
    #[arg(long, required_unless_present = "image")]
    pub data: Option<PathBuf>,
    /// Position of the image in the dataset.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum SweepKind {
    Rows,
    Cols,
    Widths,
}

#[derive(Args, Debug)]
pub struct JaggednessArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long, default_value = "rows")]
    pub sweep: SweepKind,
    /// First swept value (default: 0 for positions, half the embedding for widths).
    #[arg(long, allow_negative_numbers = true)]
    pub from: Option<isize>,
    /// Last swept value, inclusive (default: the last valid one).
    #[arg(long, allow_negative_numbers = true)]
    pub to: Option<isize>,
    #[command(flatten)]
    pub canvas: CanvasArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DepthArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Readout training set.
    #[arg(long)]
    pub train: PathBuf,
    /// Evaluation and audit set.
    #[arg(long)]
    pub data: PathBuf,
    /// Layer indices to probe, comma separated (default: every spatial layer).
    #[arg(long, value_delimiter = ',')]
    pub layers: Vec<usize>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch: usize,
    #[command(flatten)]
    pub embed: EmbedArgs,
    #[command(flatten)]
    pub delta: DeltaArgs,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub plot: Option<PathBuf>,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum KernelArg {
    Linear,
    Cubic,
    Sinc,
}

#[derive(Args, Debug)]
pub struct ShiftabilityArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Layer whose activations are tested.
    #[arg(long)]
    pub layer: usize,
    #[arg(long, default_value = "linear")]
    pub kernel: KernelArg,
    /// Half width of the windowed sinc, in samples of the layer's response.
    #[arg(long, default_value_t = 16.0)]
    pub half_width: f64,
    /// Test at most this many images (0 = all).
    #[arg(long, default_value_t = 0)]
    pub limit: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TraceArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub image: ImageArgs,
    #[arg(long)]
    pub layer: usize,
    /// Shifts 0..=N pixels from the start position.
    #[arg(long, default_value_t = 4)]
    pub max_shift: isize,
    #[arg(long, default_value = "y")]
    pub axis: Axis,
    #[command(flatten)]
    pub canvas: CanvasArgs,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PoolSwapArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Pooling layers to replace, as `kind:kernel[:stride]`.
    #[arg(long, default_value = "max:2:2")]
    pub old: PoolDescriptor,
    /// Replacement, as `kind:kernel[:stride]`.
    #[arg(long, default_value = "avg:6:2")]
    pub new: PoolDescriptor,
    /// Train a readout on this layer of the swapped network and save the
    /// resulting classifier instead.
    #[arg(long, requires = "train")]
    pub readout_layer: Option<usize>,
    /// Readout training set.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0.2)]
    pub lr: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct BiasArgs {
    /// CSV with header `category,img_w,img_h,box_x,box_y,box_w,box_h`.
    #[arg(long)]
    pub annotations: PathBuf,
    /// Position bins per axis.
    #[arg(long, default_value_t = 5)]
    pub grid: usize,
    #[arg(long, default_value_t = 10)]
    pub size_bins: usize,
    #[arg(long)]
    pub out: PathBuf,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(e.exit_code() as u8);
        }
    };
    if cli.jobs > 0 {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(cli.jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match commands::dispatch(cli.command, cli.seed, argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
