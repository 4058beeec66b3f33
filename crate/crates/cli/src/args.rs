use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use geogan::losses::RecNorm;
use geogan::models::{NoiseMode, Variant};
use geogan::tilegrid::Season;

#[derive(Debug, Parser)]
#[command(
    name = "geogan",
    version,
    about = "Satellite-to-map translation: datasets, training, evaluation and checks"
)]
pub struct Cli {
    /// Root that relative data paths resolve against
    #[arg(long, global = true, env = "GEOGAN_DATA_ROOT")]
    pub data_root: Option<PathBuf>,

    /// Log filter such as info or debug
    #[arg(long, global = true, default_value = "info")]
    pub log: String,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a paired dataset and manifest from a tile provider
    Dataset(DatasetArgs),
    /// Write a synthetic mock-provider directory
    Fixture(FixtureArgs),
    /// Train a model on a manifest
    Train(TrainArgs),
    /// Similarity metrics of a trained model on a manifest
    Eval(EvalArgs),
    /// Render a grid of generated maps
    Sample(SampleArgs),
    /// Finite-difference check of every loss and architecture
    Gradcheck(GradcheckArgs),
    /// Brief training on MNIST digits with a mode-collapse check
    MnistSanity(MnistArgs),
}

#[derive(Debug, Args)]
pub struct DatasetArgs {
    /// Bounding box as lat_min,lat_max,lon_min,lon_max
    #[arg(long, allow_hyphen_values = true)]
    pub bbox: String,
    /// Web-Mercator zoom level
    #[arg(long, default_value_t = 14)]
    pub zoom: u32,
    /// Tile width and height in pixels
    #[arg(long, default_value_t = 512)]
    pub tile_px: u32,
    /// Comma-separated months out of mar,jun,sep,dec
    #[arg(long, default_value = "mar,jun,sep,dec", value_delimiter = ',')]
    pub seasons: Vec<Season>,
    /// Acquisition year
    #[arg(long, default_value_t = 2019)]
    pub year: i32,
    /// Tile provider; only the file-backed mock is built in
    #[arg(long, default_value = "mock")]
    pub provider: String,
    /// Directory of the mock provider
    #[arg(long)]
    pub provider_dir: PathBuf,
    /// Scenes must have strictly less cloud than this
    #[arg(long, default_value_t = 0.10)]
    pub cloud_threshold: f64,
    /// Days each window extension adds on both sides
    #[arg(long, default_value_t = 15)]
    pub extension_days: i64,
    /// Window extensions tried before giving up on a tile
    #[arg(long, default_value_t = 4)]
    pub max_extensions: u32,
    /// Download threads
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    /// Download with a single thread in a fixed order
    #[arg(long)]
    pub deterministic: bool,
    /// Fetch again even if a file exists
    #[arg(long)]
    pub overwrite: bool,
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FixtureArgs {
    /// Bounding box as lat_min,lat_max,lon_min,lon_max
    #[arg(long, allow_hyphen_values = true)]
    pub bbox: String,
    #[arg(long, default_value_t = 14)]
    pub zoom: u32,
    #[arg(long, default_value_t = 512)]
    pub tile_px: u32,
    /// Width of the written images
    #[arg(long, default_value_t = 64)]
    pub image_px: u32,
    #[arg(long, default_value = "mar,jun,sep,dec", value_delimiter = ',')]
    pub seasons: Vec<Season>,
    #[arg(long, default_value_t = 2019)]
    pub year: i32,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Model, loss and optimiser settings. Unset flags fall back to the config
/// file and then to the built-in defaults shown.
#[derive(Debug, Args, Default, Clone)]
pub struct ModelArgs {
    /// TOML file with any of the settings below
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Architecture (encoder|direct|flow) [default: encoder]
    #[arg(long)]
    pub arch: Option<Variant>,
    /// Training image size [default: 64; 256 for direct]
    #[arg(long)]
    pub image_size: Option<usize>,
    /// Random seed [default: 0]
    #[arg(long)]
    pub seed: Option<u64>,
    /// Single-threaded, bit-reproducible run
    #[arg(long)]
    pub deterministic: bool,
    /// Reconstruction norm (l1|l2) [default: l2]
    #[arg(long)]
    pub rec_norm: Option<RecNorm>,
    /// Adversarial loss weight [default: 1]
    #[arg(long)]
    pub w_gan: Option<f64>,
    /// Reconstruction loss weight [default: 1]
    #[arg(long)]
    pub w_rec: Option<f64>,
    /// Style loss weight [default: 1]
    #[arg(long)]
    pub w_style: Option<f64>,
    /// Noise injection (append|add|none) [default: add]
    #[arg(long)]
    pub noise_mode: Option<NoiseMode>,
    /// Added noise relative to the embedding scale [default: 0.1]
    #[arg(long)]
    pub noise_fraction: Option<f64>,
    /// Noise standard deviation [default: 1]
    #[arg(long)]
    pub noise_std: Option<f64>,
    /// Appended noise length [default: 100]
    #[arg(long)]
    pub noise_dim: Option<usize>,
    /// Give the discriminator its own encoder [default: false]
    #[arg(long)]
    pub separate_disc_encoder: Option<bool>,
    /// Feed raw scale-net outputs to exp in the flow [default: false]
    #[arg(long)]
    pub flow_raw_scale: Option<bool>,
    /// Learning rate [default: 0.0002]
    #[arg(long)]
    pub lr: Option<f64>,
    /// First moment decay [default: 0.5]
    #[arg(long)]
    pub beta1: Option<f64>,
    /// Second moment decay [default: 0.999]
    #[arg(long)]
    pub beta2: Option<f64>,
    /// Batch size [default: 16; 4 above 64 px]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Epochs [default: 14]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Generator updates per discriminator update [default: 1]
    #[arg(long)]
    pub g_steps: Option<usize>,
    /// Steps between checkpoints, 0 for final only [default: 500]
    #[arg(long)]
    pub checkpoint_interval: Option<u64>,
    /// Stop after this many steps [default: none]
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Images in the per-epoch sample grid [default: 9]
    #[arg(long)]
    pub grid_size: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset manifest
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Output directory for losses, checkpoints and grids
    #[arg(long)]
    pub out: PathBuf,
    /// Continue from a training-state checkpoint
    #[arg(long)]
    pub resume: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Training-state or parameter checkpoint
    #[arg(long, required_unless_present = "oracle")]
    pub checkpoint: Option<PathBuf>,
    /// Score the ground truth against itself instead of a model
    #[arg(long)]
    pub oracle: bool,
    /// Write the metrics record here as well as to stdout
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Number of maps, a perfect square
    #[arg(long, default_value_t = 9)]
    pub n: usize,
    /// Output PNG
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Coordinates probed per case
    #[arg(long, default_value_t = 40)]
    pub probes: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct MnistArgs {
    /// MNIST images in IDX format
    #[arg(long, default_value = "mnist/images-idx3-ubyte")]
    pub images: PathBuf,
    /// Digits to train on
    #[arg(long, default_value_t = 2000)]
    pub count: usize,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}
