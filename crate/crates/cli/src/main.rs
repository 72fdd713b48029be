//! `hierseg` command-line driver.
//!
//! Exit codes: 0 success, 2 config error, 3 input format error, 4 internal
//! error. Logs go to stderr; results go to files under `--out`.

mod stages;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use hierseg::pipeline::PipelineConfig;
use hierseg::Error;
use log::error;

#[derive(Parser)]
#[command(
    name = "hierseg",
    version,
    about = "Hierarchical mask-guided point cloud segmentation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the top view of a scene.
    Render(Common),
    /// Assign points to instances from top-view masks and plan part views.
    Instances(Common),
    /// Render part views and back-project their masks into observations.
    Parts(Common),
    /// Fuse observations into labels and strip outliers.
    Fuse(Common),
    /// Score labels against ground truth.
    Eval(Common),
    /// Generate a synthetic scene package with oracle masks.
    Synth(Common),
    /// Compare majority vote, vote + DBSCAN, and Bayesian fusion.
    Ablate(Common),
    /// Run every stage end to end.
    Pipeline(Common),
}

#[derive(Args, Clone)]
pub struct Common {
    /// JSON pipeline config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene package directory.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Seed for scene generation and mask corruption.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of CPUs.
    #[arg(long)]
    threads: Option<usize>,
    /// Derive masks from ground truth instead of reading mask files.
    #[arg(long)]
    oracle_masks: bool,
}

impl Common {
    fn load_config(&self) -> hierseg::Result<PipelineConfig> {
        let mut config = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.scene.seed = seed;
            config.corruption.seed = seed;
        }
        config.validate()?;
        Ok(config)
    }

    fn scene(&self) -> hierseg::Result<&PathBuf> {
        self.scene
            .as_ref()
            .ok_or_else(|| Error::InvalidConfig("--scene is required for this command".into()))
    }
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::InvalidConfig(_) => 2,
        _ if e.is_input_format() => 3,
        _ => 4,
    }
}

fn run(cli: Cli) -> hierseg::Result<()> {
    let (name, args) = match &cli.command {
        Command::Render(a) => ("render", a),
        Command::Instances(a) => ("instances", a),
        Command::Parts(a) => ("parts", a),
        Command::Fuse(a) => ("fuse", a),
        Command::Eval(a) => ("eval", a),
        Command::Synth(a) => ("synth", a),
        Command::Ablate(a) => ("ablate", a),
        Command::Pipeline(a) => ("pipeline", a),
    };
    let config = args.load_config()?;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))?;
    }
    std::fs::create_dir_all(&args.out).map_err(|e| Error::from(e).at_path(&args.out))?;

    if name == "synth" {
        return stages::synth(&config, &args.out);
    }
    let ctx = stages::Context::open(args.scene()?, &args.out, config, args.oracle_masks)?;
    match name {
        "render" => ctx.render(),
        "instances" => ctx.instances().map(drop),
        "parts" => ctx.parts_from_files().map(drop),
        "fuse" => ctx.fuse_from_files().map(drop),
        "eval" => ctx.eval_from_files(),
        "ablate" => ctx.ablate(),
        "pipeline" => ctx.pipeline(),
        _ => unreachable!("all subcommands handled"),
    }?;
    ctx.write_manifest(name)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
