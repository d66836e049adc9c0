use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Exit code reported when a selftest check fails.
const SELFTEST_FAILED: u8 = 3;

#[derive(Parser)]
#[command(name = "tvpr", version, about = "Multi-level attention place recognition with spatial re-ranking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a randomly initialized weights container.
    InitWeights(InitWeightsArgs),
    /// Generate a synthetic corpus of textured planar scenes.
    Synth(SynthArgs),
    /// Compute a descriptor store for every image in a manifest.
    Extract(ExtractArgs),
    /// Retrieve (and optionally re-rank) references for every query.
    Query(QueryArgs),
    /// Score query results against ground-truth positions or poses.
    Evaluate(EvaluateArgs),
    /// Render attention maps and the key-patch mask of one image.
    Attn(AttnArgs),
    /// Train the aggregation head with a frozen backbone.
    Train(TrainArgs),
    /// Run the built-in oracle checks.
    Selftest(SelftestArgs),
}

#[derive(Args)]
pub struct InitWeightsArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "standard")]
    pub variant: String,
    #[arg(long, default_value_t = 256)]
    pub dim: usize,
    #[arg(long, default_value_t = 6)]
    pub layers: usize,
    #[arg(long, default_value_t = 8)]
    pub heads: usize,
}

#[derive(Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 50)]
    pub scenes: usize,
    #[arg(long, default_value_t = 4)]
    pub views: usize,
    #[arg(long, default_value = "192x144")]
    pub size: String,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value = "640x480")]
    pub size: String,
    /// Key-patch threshold; defaults to the value stored with the model.
    #[arg(long)]
    pub tau: Option<f64>,
    /// Must match the variant the model head was built for.
    #[arg(long)]
    pub variant: Option<String>,
    /// Keep every patch as a key patch.
    #[arg(long)]
    pub store_all_patches: bool,
    /// `stretch` or `crop`.
    #[arg(long, default_value = "stretch")]
    pub resize: String,
}

#[derive(Args)]
pub struct QueryArgs {
    #[arg(long)]
    pub index: PathBuf,
    #[arg(long)]
    pub queries: PathBuf,
    #[arg(long, default_value_t = 100)]
    pub topk: usize,
    #[arg(long)]
    pub rerank: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Inlier reprojection threshold, pixels.
    #[arg(long, default_value_t = 24.0)]
    pub reproj_threshold: f64,
    #[arg(long, default_value_t = 500)]
    pub iterations: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub manifest: Vec<PathBuf>,
    #[arg(long, default_value_t = 25.0)]
    pub radius: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,20")]
    pub n: Vec<usize>,
    /// Report pose recall at (0.25 m, 2°), (0.5 m, 5°), (5 m, 10°) instead.
    #[arg(long)]
    pub pose_tolerances: bool,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args)]
pub struct AttnArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub image: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value = "640x480")]
    pub size: String,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long, default_value = "stretch")]
    pub resize: String,
    /// Also write PNG copies.
    #[arg(long)]
    pub png: bool,
}

#[derive(Args)]
pub struct TrainArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long, default_value = "weak")]
    pub mode: String,
    #[arg(long, default_value_t = 0.1)]
    pub margin: f64,
    #[arg(long, default_value_t = 5)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 16)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 10.0)]
    pub radius_pos: f64,
    #[arg(long, default_value_t = 25.0)]
    pub radius_neg: f64,
    #[arg(long, default_value_t = 5)]
    pub n_neg: usize,
    #[arg(long, default_value = "640x480")]
    pub size: String,
    #[arg(long, default_value = "stretch")]
    pub resize: String,
}

#[derive(Args)]
pub struct SelftestArgs {
    /// Sabotage one check to exercise the failure path.
    #[arg(long, hide = true)]
    pub inject_fault: Option<String>,
}

fn configure_threads() -> tvpr::Result<()> {
    let Ok(raw) = std::env::var("TVPR_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| tvpr::Error::Config(format!("TVPR_THREADS=`{raw}` is not a thread count")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| tvpr::Error::Config(e.to_string()))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = || -> tvpr::Result<bool> {
        configure_threads()?;
        match cli.command {
            Command::InitWeights(a) => commands::init_weights(a),
            Command::Synth(a) => commands::synth(a),
            Command::Extract(a) => commands::extract(a),
            Command::Query(a) => commands::query(a),
            Command::Evaluate(a) => commands::evaluate(a),
            Command::Attn(a) => commands::attn(a),
            Command::Train(a) => commands::train(a),
            Command::Selftest(a) => return commands::selftest(a),
        }
        .map(|()| true)
    };
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(SELFTEST_FAILED),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
