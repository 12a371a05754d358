use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde::Serialize;

use keyview::commands::{self, EpisodeOptions, PreprocessInputs};
use keyview::config::Config;
use keyview::episode::Policy;
use keyview::synth::SynthParams;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;
const EXIT_MISS: u8 = 3;

#[derive(Parser)]
#[command(name = "keyview", version, about = "Keyframe selection and BEV pose grounding for scene videos")]
struct Cli {
    /// JSON or TOML file overriding configuration defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a ground-aligned BEV bundle from a trajectory and depth maps or points.
    Preprocess {
        #[arg(long)]
        trajectory: PathBuf,
        /// Directory with intrinsics.json and <frame_id>.bin depth maps.
        #[arg(long)]
        depth: Option<PathBuf>,
        /// Raw little-endian f32 xyz point file, used when no depth maps exist.
        #[arg(long)]
        points: Option<PathBuf>,
        #[arg(long)]
        scores: Option<PathBuf>,
    },
    /// Select keyframes from a bundle.
    Select {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Overrides the configured keyframe budget.
        #[arg(long)]
        k: Option<usize>,
    },
    /// Retrieve the frame closest to a BEV camera `[x, y, r]`.
    Query {
        #[arg(long)]
        bundle: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        camera: String,
    },
    /// Run scripted pose-query episodes and log trajectories with rewards.
    Episode {
        #[arg(long)]
        bundle: PathBuf,
        /// oracle, random or no-tool.
        #[arg(long)]
        policy: Policy,
        #[arg(long, default_value_t = 1)]
        episodes: usize,
        /// Episodes per question; groups of two or more get advantages.
        #[arg(long, default_value_t = 1)]
        group: usize,
    },
    /// Re-score an episode log under the current configuration.
    Reward {
        #[arg(long)]
        log: PathBuf,
    },
    /// Write a synthetic room scene with ground truth.
    Synth {
        #[arg(long, default_value_t = SynthParams::default().frames)]
        frames: usize,
        #[arg(long, default_value_t = SynthParams::default().width)]
        width: usize,
        #[arg(long, default_value_t = SynthParams::default().height)]
        height: usize,
        #[arg(long, default_value_t = SynthParams::default().boxes)]
        boxes: usize,
        /// Apply a random rotation to the whole scene.
        #[arg(long)]
        rotate_world: bool,
    },
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable output"));
}

fn load_config(path: Option<&Path>) -> keyview::Result<Config> {
    match path {
        Some(p) => Config::load(p),
        None => Ok(Config::default().resolved()),
    }
}

fn run(cli: Cli) -> keyview::Result<u8> {
    let mut cfg = load_config(cli.config.as_deref())?;
    let out = cli.out.as_path();
    match cli.command {
        Command::Preprocess { trajectory, depth, points, scores } => {
            let inputs = PreprocessInputs { trajectory, depth, points, scores };
            let summary = commands::preprocess(&inputs, &cfg, out)?;
            for w in &summary.warnings {
                eprintln!("warning: {w}");
            }
            print_json(&summary);
        }
        Command::Select { bundle, scores, k } => {
            if let Some(k) = k {
                cfg.k = k;
                cfg.validate()?;
            }
            print_json(&commands::select(&bundle, scores.as_deref(), &cfg, out)?);
        }
        Command::Query { bundle, camera } => {
            let camera = match commands::parse_camera(&camera) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return Ok(EXIT_USAGE);
                }
            };
            let result = commands::query(&bundle, &camera, &cfg)?;
            print_json(&result);
            if result.frame_id.is_none() {
                return Ok(EXIT_MISS);
            }
        }
        Command::Episode { bundle, policy, episodes, group } => {
            let opts = EpisodeOptions { policy, episodes, group_size: group, seed: cli.seed };
            print_json(&commands::episode(&bundle, &opts, &cfg, out)?);
        }
        Command::Reward { log } => print_json(&commands::reward(&log, &cfg, out)?),
        Command::Synth { frames, width, height, boxes, rotate_world } => {
            let params = SynthParams { frames, width, height, boxes, rotate_world, seed: cli.seed, ..Default::default() };
            print_json(&commands::synth(&params, out)?);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(EXIT_FAILURE)
        }
    }
}
