//! `gcl`: annotation, training, retrieval and evaluation pipelines.
//!
//! Exit codes: 0 success, 1 invalid input or configuration, 2 runtime
//! failure, 3 failed gradient check.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(
    name = "gcl",
    version,
    about = "Graded-similarity place recognition pipelines"
)]
struct Cli {
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Grade every pose pair by 2D field-of-view sector overlap.
    #[command(name = "annotate-2d")]
    Annotate2d(Annotate2dArgs),
    /// Grade every pose pair by the IoU of the cloud points both cameras see.
    #[command(name = "annotate-3d")]
    Annotate3d(Annotate3dArgs),
    /// Train the embedding network on graded pairs.
    Train(TrainArgs),
    /// Embed map and query features and rank map images for each query.
    Retrieve(RetrieveArgs),
    /// Score ranked results against ground truth.
    Eval(EvalArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Write a synthetic scenario.
    Synth(SynthArgs),
}

#[derive(Args, Debug)]
pub struct Annotate2dArgs {
    /// Pose CSV (`id,t0,t1,heading_deg`) graded against itself.
    #[arg(required_unless_present_all = ["queries", "maps"], conflicts_with_all = ["queries", "maps"])]
    pub poses: Option<PathBuf>,
    /// Query pose CSV, used together with --maps.
    #[arg(long, requires = "maps")]
    pub queries: Option<PathBuf>,
    /// Map pose CSV, used together with --queries.
    #[arg(long, requires = "queries")]
    pub maps: Option<PathBuf>,
    /// Sector aperture in degrees.
    #[arg(long, default_value_t = 90.0)]
    pub theta: f64,
    /// Sector radius in meters.
    #[arg(long, default_value_t = 50.0)]
    pub radius: f64,
    /// Overlap definition: ioa (intersection over the query sector area) or iou.
    #[arg(long, default_value = "ioa")]
    pub mode: String,
    /// Output graded-pair CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct Annotate3dArgs {
    /// 6DOF pose CSV (`id,x,y,z,qw,qx,qy,qz`), the query set when --maps is given.
    pub poses: PathBuf,
    /// Point cloud, `.xyz` or ASCII `.ply`.
    pub cloud: PathBuf,
    /// Intrinsics file with fx, fy, cx, cy, width, height as key=value lines.
    pub intrinsics: PathBuf,
    /// Map pose CSV; defaults to the query poses.
    #[arg(long)]
    pub maps: Option<PathBuf>,
    /// Output graded-pair CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Graded-pair CSV.
    pub pairs: PathBuf,
    /// Feature store (GDSC) holding an input vector for every id in the pairs.
    pub features: PathBuf,
    /// gcl or cl.
    #[arg(long, default_value = "gcl")]
    pub loss: String,
    /// Batch composition: A, B, C or D.
    #[arg(long, default_value = "A")]
    pub strategy: String,
    #[arg(long, default_value_t = 1)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Initial learning rate; 0.1 for gcl and 0.01 for cl when omitted.
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, default_value_t = 10.0)]
    pub lr_decay: f64,
    /// Pairs between learning-rate decays.
    #[arg(long, default_value_t = 250_000)]
    pub decay_every: u64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    /// Contrastive margin.
    #[arg(long, default_value_t = 0.5)]
    pub margin: f64,
    /// Layer sizes after the input, comma separated (1 to 3 layers).
    #[arg(long, default_value = "64,32", value_delimiter = ',')]
    pub layers: Vec<usize>,
    /// Skip the final L2 normalization.
    #[arg(long)]
    pub no_normalize: bool,
    /// Also write a checkpoint every N batches.
    #[arg(long)]
    pub checkpoint_every: Option<usize>,
    /// Loss trace CSV; defaults to `<out>.trace.csv`.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Output checkpoint (GSIM).
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RetrieveArgs {
    /// Model checkpoint (GSIM).
    pub model: PathBuf,
    /// Map feature store (GDSC).
    pub map_features: PathBuf,
    /// Query feature store (GDSC).
    pub query_features: PathBuf,
    /// Matches kept per query.
    #[arg(long, default_value_t = 10)]
    pub k: usize,
    /// Fit PCA whitening on the map descriptors, keeping this many dimensions.
    #[arg(long)]
    pub whiten: Option<usize>,
    /// Keep whitened descriptors unnormalized.
    #[arg(long, requires = "whiten")]
    pub no_renormalize: bool,
    /// Also save the fitted whitening (GPCA).
    #[arg(long, requires = "whiten")]
    pub whiten_out: Option<PathBuf>,
    /// Output results CSV.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Results CSV from `retrieve`.
    pub results: PathBuf,
    /// geo (distance and angle thresholds on poses) or psi (graded pairs).
    #[arg(long, default_value = "geo")]
    pub criterion: String,
    #[arg(long, default_value = "1,5,10", value_delimiter = ',')]
    pub ks: Vec<usize>,
    #[arg(long)]
    pub query_poses: Option<PathBuf>,
    #[arg(long)]
    pub map_poses: Option<PathBuf>,
    /// Pose file layout: 2d or 6dof.
    #[arg(long, default_value = "2d")]
    pub pose_kind: String,
    /// Graded-pair CSV for the psi criterion.
    #[arg(long)]
    pub pairs: Option<PathBuf>,
    #[arg(long, default_value_t = 25.0)]
    pub max_dist: f64,
    #[arg(long, default_value_t = 40.0)]
    pub max_angle: f64,
    #[arg(long, default_value_t = 0.5)]
    pub min_psi: f64,
    /// Localization tiers as meters:degrees, comma separated.
    #[arg(long, default_value = "0.25:2,0.5:5,5:10", value_delimiter = ',')]
    pub tiers: Vec<String>,
    /// Recall@5 sweep axis: distance or psi.
    #[arg(long, requires = "grid")]
    pub sweep: Option<String>,
    #[arg(long, value_delimiter = ',', requires = "sweep")]
    pub grid: Option<Vec<f64>>,
    /// Sweep curve CSV; defaults to `<out>.sweep.csv`.
    #[arg(long)]
    pub sweep_out: Option<PathBuf>,
    /// Metrics report (key=value lines); printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    /// Layer sizes, input first.
    #[arg(long, default_value = "8,16,6", value_delimiter = ',')]
    pub dims: Vec<usize>,
    #[arg(long, default_value_t = 200)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// city2d or cloud3d.
    #[arg(long)]
    pub scenario: String,
    /// Map images (city2d) or camera poses (cloud3d).
    #[arg(long, default_value_t = 1000)]
    pub n: usize,
    /// Query images (city2d only).
    #[arg(long, default_value_t = 0)]
    pub queries: usize,
    /// Cloud points (cloud3d only).
    #[arg(long, default_value_t = 5000)]
    pub points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

pub enum Outcome {
    Success,
    CheckFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let result = match cli.command {
        Command::Annotate2d(a) => commands::annotate_2d(&a),
        Command::Annotate3d(a) => commands::annotate_3d(&a),
        Command::Train(a) => commands::train(&a),
        Command::Retrieve(a) => commands::retrieve(&a),
        Command::Eval(a) => commands::eval(&a),
        Command::Gradcheck(a) => commands::gradcheck(&a),
        Command::Synth(a) => commands::synth(&a),
    };
    match result {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::CheckFailed) => ExitCode::from(3),
        Err(e) => {
            eprintln!("error: {e:#}");
            let validation = e
                .chain()
                .find_map(|c| c.downcast_ref::<gcl_core::Error>())
                .is_some_and(gcl_core::Error::is_validation);
            ExitCode::from(if validation { 1 } else { 2 })
        }
    }
}
