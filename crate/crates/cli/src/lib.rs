//! Command-line front end for the demonstration-to-policy pipeline.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

mod commands;
pub mod plot;

/// Exit code for malformed command lines.
pub const EXIT_USAGE: i32 = 1;
/// Exit code for unreadable or invalid input data.
pub const EXIT_DATA: i32 = 2;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data(_) => EXIT_DATA,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) => f.write_str(m),
        }
    }
}

/// A data error that names `path` unless the message already does.
pub(crate) fn data_at(path: &Path, e: impl std::fmt::Display) -> CliError {
    let shown = path.display().to_string();
    let msg = e.to_string();
    if msg.contains(&shown) {
        CliError::Data(msg)
    } else {
        CliError::Data(format!("{shown}: {msg}"))
    }
}

pub(crate) fn data(e: impl std::fmt::Display) -> CliError {
    CliError::Data(e.to_string())
}

#[derive(Debug, Parser)]
#[command(
    name = "h2s2r",
    version,
    about = "Demonstration processing, planar RL training and replay baselines"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Demonstration utilities.
    #[command(subcommand)]
    Demo(DemoCommand),
    /// Depth alignment.
    #[command(subcommand)]
    Icp(IcpCommand),
    /// Hand-to-robot retargeting.
    #[command(subcommand)]
    Retarget(RetargetCommand),
    /// Train a PPO policy; writes checkpoint.json, metrics.csv and metrics.svg.
    Train(TrainArgs),
    /// Evaluate a checkpoint with the mean action.
    Eval(EvalArgs),
    /// Replay a joint trajectory open loop.
    Replay(ReplayArgs),
    /// Object-aware replay of an end-effector trajectory.
    OaReplay(OaReplayArgs),
    /// Run an ablation study over seeds; writes ablation.csv and ablation.svg.
    Ablate(AblateArgs),
    /// Write a task's built-in assets and a matching env config to a directory.
    Assets(AssetsArgs),
    /// Plot a column of a metrics CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Subcommand)]
pub enum DemoCommand {
    /// Detect the pre-manipulation timestep; prints {"tau", "pose"} JSON.
    Premanip(PremanipArgs),
}

#[derive(Debug, Args)]
pub struct PremanipArgs {
    /// Demonstration JSONL file.
    #[arg(long)]
    pub demo: PathBuf,
    /// Speed threshold for motion onset, m/s.
    #[arg(long, default_value_t = h2s2r_core::trajectory::DEFAULT_V_MIN)]
    pub v_min: f64,
    /// Frames to step back from motion onset.
    #[arg(long, default_value_t = h2s2r_core::trajectory::DEFAULT_T_OFFSET)]
    pub t_offset: usize,
}

#[derive(Debug, Subcommand)]
pub enum IcpCommand {
    /// Register a model cloud onto a masked depth frame; prints {"pose", "rmse", ...} JSON.
    Align(IcpAlignArgs),
}

#[derive(Debug, Args)]
pub struct IcpAlignArgs {
    /// 16-bit PGM depth image in millimeters.
    #[arg(long)]
    pub depth: PathBuf,
    /// 8-bit PGM mask; nonzero pixels are kept.
    #[arg(long)]
    pub mask: PathBuf,
    /// Camera intrinsics JSON {"fx","fy","cx","cy"}.
    #[arg(long)]
    pub intrinsics: PathBuf,
    /// Model point cloud (XYZ text) to register onto the depth cloud.
    #[arg(long)]
    pub model: PathBuf,
    /// Connected-component radius in meters.
    #[arg(long, default_value_t = h2s2r_core::pointcloud::DEFAULT_COMPONENT_RADIUS)]
    pub radius: f64,
    /// Maximum ICP iterations.
    #[arg(long, default_value_t = 50)]
    pub max_iters: usize,
    /// Stop once RMSE improves by less than this, meters.
    #[arg(long, default_value_t = 1e-9)]
    pub tol: f64,
    /// Optional output XYZ of the filtered depth cloud.
    #[arg(long)]
    pub out_cloud: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum RetargetCommand {
    /// Solve the pre-manipulation arm and hand configuration for one frame; prints JSON.
    Premanip(RetargetPremanipArgs),
    /// Retarget a hand sequence to a joint trajectory JSONL.
    Traj(RetargetTrajArgs),
}

#[derive(Debug, Args)]
pub struct ChainArgs {
    /// Kinematic chain JSON; the built-in 7+16 joint reference chain when absent.
    #[arg(long)]
    pub chain: Option<PathBuf>,
    /// IK seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct RetargetPremanipArgs {
    /// Hand observation JSONL file.
    #[arg(long)]
    pub hand: PathBuf,
    /// Frame to solve; detected from --demo when absent.
    #[arg(long, conflicts_with = "demo")]
    pub frame: Option<usize>,
    /// Demonstration JSONL used to detect the pre-manipulation frame.
    #[arg(long)]
    pub demo: Option<PathBuf>,
    /// Speed threshold for motion onset, m/s (with --demo).
    #[arg(long, default_value_t = h2s2r_core::trajectory::DEFAULT_V_MIN)]
    pub v_min: f64,
    /// Frames to step back from motion onset (with --demo).
    #[arg(long, default_value_t = h2s2r_core::trajectory::DEFAULT_T_OFFSET)]
    pub t_offset: usize,
    #[command(flatten)]
    pub chain: ChainArgs,
}

#[derive(Debug, Args)]
pub struct RetargetTrajArgs {
    /// Hand observation JSONL file.
    #[arg(long)]
    pub hand: PathBuf,
    /// Output joint trajectory JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Largest per-joint jump between kept frames, radians.
    #[arg(long, default_value_t = h2s2r_core::kinematics::DEFAULT_JUMP_THRESH)]
    pub jump_thresh: f64,
    /// Frame rate of the hand sequence, Hz.
    #[arg(long, default_value_t = h2s2r_core::trajectory::DEFAULT_RATE_HZ)]
    pub rate_hz: f64,
    /// Retime the result to the chain's joint velocity limits.
    #[arg(long)]
    pub retime: bool,
    #[command(flatten)]
    pub chain: ChainArgs,
}

/// Environment selection shared by the simulation commands. Flags override
/// the TOML file, which overrides the task defaults.
#[derive(Debug, Args, Clone)]
pub struct EnvArgs {
    /// Environment config TOML.
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    /// Task: push or pivot.
    #[arg(long)]
    pub task: Option<String>,
    /// Initial yaw noise bound, degrees.
    #[arg(long)]
    pub theta_max: Option<f64>,
    /// Initial translation noise bound, meters.
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Initialization mode: premanip, default_rest, overhead or premanip_far.
    #[arg(long)]
    pub init_mode: Option<String>,
    /// Reward target mode: dense, fixed, interpolated or downsampled.
    #[arg(long)]
    pub target_mode: Option<String>,
    /// Disable domain randomization.
    #[arg(long)]
    pub no_randomization: bool,
}

#[derive(Debug, Args, Clone)]
pub struct TrainFlags {
    /// Training config TOML.
    #[arg(long)]
    pub train_config: Option<PathBuf>,
    /// Run seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Environment steps to collect.
    #[arg(long)]
    pub total_steps: Option<u64>,
    /// Parallel environments.
    #[arg(long)]
    pub n_envs: Option<usize>,
    /// Adam learning rate.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Rollout length per update.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Actor hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub actor_hidden: Option<Vec<usize>>,
    /// Critic hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub critic_hidden: Option<Vec<usize>>,
    /// Observation history length.
    #[arg(long)]
    pub history: Option<usize>,
    /// Reward mode: obj or obj_plus_hand.
    #[arg(long)]
    pub reward_mode: Option<String>,
    /// Policy mode: full or residual.
    #[arg(long)]
    pub policy_mode: Option<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Print a progress line every this many updates (0 disables).
    #[arg(long, default_value_t = 0)]
    pub log_every: usize,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Checkpoint JSON.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Environment config TOML; the checkpoint's own env config when absent.
    #[arg(long)]
    pub env_config: Option<PathBuf>,
    /// Initial yaw noise bound, degrees.
    #[arg(long)]
    pub theta_max: Option<f64>,
    /// Initial translation noise bound, meters.
    #[arg(long)]
    pub t_max: Option<f64>,
    /// Number of episodes.
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Evaluation seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-episode CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[command(flatten)]
    pub env: EnvArgs,
    /// Joint trajectory JSONL; the env's retargeted demonstration when absent.
    #[arg(long)]
    pub traj: Option<PathBuf>,
    /// Number of episodes.
    #[arg(long, default_value_t = 100)]
    pub episodes: usize,
    /// Episode seed.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-episode CSV output.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OaReplayArgs {
    #[command(flatten)]
    pub replay: ReplayArgs,
    /// End-effector pose JSONL aligned with the trajectory; computed by FK when absent.
    #[arg(long)]
    pub ee: Option<PathBuf>,
    /// Demonstration initial object pose as JSON [x,y,z,qw,qx,qy,qz]; the env's when absent.
    #[arg(long)]
    pub demo_init: Option<String>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Study: reward, init or handtrack.
    pub study: String,
    /// Number of seeds, 0..n.
    #[arg(long, default_value_t = 3)]
    pub seeds: u64,
    #[command(flatten)]
    pub env: EnvArgs,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Column plotted in ablation.svg.
    #[arg(long, default_value = "mean_track_return")]
    pub plot_column: String,
}

#[derive(Debug, Args)]
pub struct AssetsArgs {
    /// Task: push or pivot.
    #[arg(long)]
    pub task: String,
    /// Output directory.
    #[arg(long)]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    /// Input CSV with a header row.
    #[arg(long)]
    pub csv: PathBuf,
    /// Column for the x axis.
    #[arg(long, default_value = "update")]
    pub x: String,
    /// Column for the y axis.
    #[arg(long, default_value = "mean_reward")]
    pub y: String,
    /// Output SVG.
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` and runs the command. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => EXIT_USAGE,
            };
        }
    };
    configure_threads();
    match commands::dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}

/// Caps the rayon pool at `H2S2R_THREADS` when set.
fn configure_threads() {
    if let Some(n) = std::env::var("H2S2R_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        if n > 0 {
            // a pool that already exists keeps its size
            let _ = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build_global();
        }
    }
}
