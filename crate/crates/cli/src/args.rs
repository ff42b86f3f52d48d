//! Command-line surface.

use std::path::PathBuf;

use clap::{ArgGroup, Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cloud-delta", version, about = "Change detection and object extraction between two point cloud maps")]
pub struct Cli {
    /// Worker threads; defaults to one per core.
    #[arg(long, global = true, env = "CLOUD_DELTA_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compute place descriptors along a trajectory.
    Describe(DescribeArgs),
    /// Bring the changed session into the reference frame and merge the maps.
    Align(AlignArgs),
    /// Rank descriptor changes and select changed regions.
    Detect(DetectArgs),
    /// Extract added and removed objects in each selected region.
    Extract(ExtractArgs),
    /// Align, describe, detect and extract in one run.
    Pipeline(PipelineArgs),
    /// Generate a synthetic scene with ground truth.
    Synth(SynthArgs),
}

/// Every pipeline parameter. Unset flags keep the values of `--config`, or
/// the defaults for the chosen radius.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// JSON parameter file, or a report whose parameters are reused.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Region sampling radius in meters [default: 4.5].
    #[arg(long)]
    pub radius: Option<f64>,
    /// Descriptor radial bins [default: 8].
    #[arg(long)]
    pub radial_bins: Option<usize>,
    /// Descriptor height bins [default: 8].
    #[arg(long)]
    pub height_bins: Option<usize>,
    /// Descriptor half-height in meters [default: 4.0].
    #[arg(long)]
    pub height_extent: Option<f64>,

    /// Keep the K highest-scoring regions.
    #[arg(long, value_name = "K", conflicts_with = "threshold")]
    pub top_k: Option<usize>,
    /// Keep regions scoring at least mean + LAMBDA * std [default: 2.0].
    #[arg(long, value_name = "LAMBDA")]
    pub threshold: Option<f64>,
    /// Minimum distance between region centers [default: 2 * radius].
    #[arg(long)]
    pub nms_radius: Option<f64>,
    /// Maximum distance between paired centers [default: 2 * radius].
    #[arg(long)]
    pub pairing_max: Option<f64>,

    /// Occupancy voxel edge in meters [default: 0.65].
    #[arg(long)]
    pub voxel_size: Option<f64>,
    /// Points needed for a voxel to count as occupied [default: 1].
    #[arg(long)]
    pub min_points: Option<u32>,
    /// Outlier filter neighbor count [default: 10].
    #[arg(long)]
    pub sor_k: Option<usize>,
    /// Outlier filter band in standard deviations [default: 1.0].
    #[arg(long)]
    pub sor_lambda: Option<f64>,
    /// Voxel edge for volume estimates [default: 0.25].
    #[arg(long)]
    pub volume_resolution: Option<f64>,

    /// ICP iteration cap [default: 100].
    #[arg(long)]
    pub icp_max_iterations: Option<usize>,
    /// ICP convergence threshold in meters [default: 1e-5].
    #[arg(long)]
    pub icp_eps: Option<f64>,
    /// Initial ICP correspondence distance [default: 2.0].
    #[arg(long)]
    pub icp_max_corr_dist: Option<f64>,
    /// Final ICP correspondence distance; 0 disables annealing [default: 0.1].
    #[arg(long)]
    pub icp_min_corr_dist: Option<f64>,
    /// ICP source thinning voxel; 0 disables thinning [default: radius / 18].
    #[arg(long)]
    pub icp_source_voxel: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DescribeArgs {
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub trajectory: PathBuf,
    /// Output descriptor file; `.csv` selects CSV, anything else binary.
    #[arg(long, short)]
    pub out: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("alignment").required(true).args(["transform", "icp"])))]
pub struct AlignArgs {
    #[arg(long)]
    pub map_t: PathBuf,
    #[arg(long)]
    pub map_t1: PathBuf,
    /// Known transform taking the changed session into the reference frame.
    #[arg(long)]
    pub transform: Option<PathBuf>,
    /// Estimate the transform with ICP.
    #[arg(long)]
    pub icp: bool,
    /// Where to write the transform.
    #[arg(long)]
    pub transform_out: Option<PathBuf>,
    /// Where to write the merged map; `.xyz` selects text, anything else binary PLY.
    #[arg(long)]
    pub merged_out: Option<PathBuf>,
    /// Timing fragment for a later `extract`.
    #[arg(long)]
    pub fragment_out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct DetectArgs {
    #[arg(long)]
    pub q_t: PathBuf,
    #[arg(long)]
    pub q_t1: PathBuf,
    #[arg(long)]
    pub traj_t: PathBuf,
    #[arg(long)]
    pub traj_t1: PathBuf,
    /// Transform taking the changed session into the reference frame [default: identity].
    #[arg(long)]
    pub transform: Option<PathBuf>,
    #[arg(long)]
    pub regions_out: PathBuf,
    /// Per-step scores as `j,nn_i,distance`.
    #[arg(long)]
    pub scores_out: Option<PathBuf>,
    /// Timing fragment for a later `extract`.
    #[arg(long)]
    pub fragment_out: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ExtractArgs {
    #[arg(long)]
    pub map_t: PathBuf,
    #[arg(long)]
    pub map_t1: PathBuf,
    /// Regions written by `detect`.
    #[arg(long)]
    pub regions: PathBuf,
    /// Transform taking the changed session into the reference frame [default: identity].
    #[arg(long)]
    pub transform: Option<PathBuf>,
    /// Timing fragments written by `align` and `detect`.
    #[arg(long = "fragment")]
    pub fragments: Vec<PathBuf>,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write the per-region timing and volume table as CSV.
    #[arg(long)]
    pub table_csv: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("source").required(true).args(["synth", "map_t"])))]
pub struct PipelineArgs {
    /// Generate the inputs from a scene description and score the result.
    #[arg(long, value_name = "SCENE_JSON", conflicts_with_all = ["map_t1", "traj_t", "traj_t1", "transform"])]
    pub synth: Option<PathBuf>,
    #[arg(long, requires_all = ["map_t1", "traj_t", "traj_t1"])]
    pub map_t: Option<PathBuf>,
    #[arg(long)]
    pub map_t1: Option<PathBuf>,
    #[arg(long)]
    pub traj_t: Option<PathBuf>,
    #[arg(long)]
    pub traj_t1: Option<PathBuf>,
    /// Precomputed descriptors of the reference session.
    #[arg(long, requires = "q_t1")]
    pub q_t: Option<PathBuf>,
    /// Precomputed descriptors of the changed session.
    #[arg(long, requires = "q_t")]
    pub q_t1: Option<PathBuf>,
    /// Known transform taking the changed session into the reference frame.
    #[arg(long, conflicts_with = "icp")]
    pub transform: Option<PathBuf>,
    /// Estimate the transform with ICP. Synthetic runs otherwise use the true transform.
    #[arg(long)]
    pub icp: bool,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Also write the per-region timing and volume table as CSV.
    #[arg(long)]
    pub table_csv: Option<PathBuf>,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("scene").required(true).args(["spec", "preset"])))]
pub struct SynthArgs {
    /// Scene description JSON.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Built-in scene.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
pub enum Preset {
    /// Unchanged tunnel.
    Null,
    /// 60 m tunnel with three added boxes.
    Standard,
    /// 200 m tunnel with three added boxes.
    Scaled,
}
