//! `occlusynth`: catalog extraction, scene synthesis, checking, evaluation,
//! density export, pick planning and visualisation.

mod commands;
mod error;
mod render;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use occlusynth::ingest::ForegroundConfig;
use occlusynth::metrics::RegionPolicy;
use occlusynth::planner::{PlanOptions, DEFAULT_EDGE_THRESHOLD, DEFAULT_OCC_THRESHOLD};

use crate::commands::SynthArgs;
use crate::error::CliError;

#[derive(Parser)]
#[command(name = "occlusynth", version, about = "Synthetic occlusion datasets, metrics and pick planning")]
struct Cli {
    /// Worker threads for parallel commands.
    #[arg(long, global = true, env = "OCCLUSYNTH_JOBS")]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Region {
    /// Both instances' boxes grown by --margin.
    Bbox,
    /// The whole canvas.
    Image,
}

#[derive(Subcommand)]
enum Command {
    /// Extract foreground masks from an instance-image catalog.
    Extract {
        #[arg(long)]
        catalog: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = ForegroundConfig::default().threshold)]
        fg_threshold: u8,
        #[arg(long, default_value_t = ForegroundConfig::default().min_area)]
        min_area: u64,
    },
    /// Synthesize a dataset of stacked scenes.
    Synth {
        /// TOML scene config; built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Catalog root, overriding the config.
        #[arg(long)]
        catalog: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n_scenes: u64,
        /// Master seed, overriding the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Check every annotation invariant of a dataset.
    Check { dataset: PathBuf },
    /// Score predictions against ground truth.
    Eval {
        #[arg(long)]
        gt: PathBuf,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long, value_enum, default_value = "bbox")]
        region: Region,
        #[arg(long, default_value_t = 8)]
        margin: u32,
        /// Report JSON path.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rasterize a scene's density map to a 16-bit PNG.
    Density {
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Plan a pick order for an instance of a class.
    Plan {
        #[arg(long)]
        annotation: PathBuf,
        #[arg(long)]
        target_class: String,
        #[arg(long, default_value_t = DEFAULT_OCC_THRESHOLD)]
        occ_threshold: f64,
        #[arg(long, default_value_t = DEFAULT_EDGE_THRESHOLD)]
        edge_threshold: f64,
        /// Only clear the target's direct occluders.
        #[arg(long)]
        direct_only: bool,
        /// Write the plan here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a scene's composite and mask overlays.
    Viz {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        scene_id: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<bool, CliError> {
    if let Some(j) = cli.jobs {
        if j == 0 {
            return Err(CliError::Validation("--jobs must be positive".into()));
        }
        // Fails only if a pool already exists, which cannot happen here.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(j).build_global();
    }
    match cli.command {
        Command::Extract { catalog, out, fg_threshold, min_area } => {
            let fg = ForegroundConfig { threshold: fg_threshold, min_area };
            commands::extract(&catalog, &out, fg)?;
        }
        Command::Synth { config, catalog, out, n_scenes, seed } => commands::synth(SynthArgs {
            config,
            catalog,
            out,
            n_scenes,
            seed,
            jobs: cli.jobs.unwrap_or_else(rayon::current_num_threads),
        })?,
        Command::Check { dataset } => return commands::check(&dataset),
        Command::Eval { gt, pred, region, margin, out } => {
            let region = match region {
                Region::Bbox => RegionPolicy::BBox { margin },
                Region::Image => RegionPolicy::FullImage,
            };
            commands::eval(&gt, &pred, region, out.as_deref())?;
        }
        Command::Density { annotation, out } => commands::density(&annotation, &out)?,
        Command::Plan { annotation, target_class, occ_threshold, edge_threshold, direct_only, out } => {
            let opts = PlanOptions { occ_threshold, edge_threshold, direct_only };
            commands::plan(&annotation, &target_class, opts, out.as_deref())?;
        }
        Command::Viz { dataset, scene_id, out } => commands::viz(&dataset, scene_id, &out)?,
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
