use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use gscoop::{Pooling, Precision, SplatConfig, VoxelGrid};
use gscoop_cli::export::{counts_csv, voxels_csv};
use gscoop_cli::run::{cmd_run, pretty_summary};
use gscoop_cli::train::cmd_train;
use gscoop_cli::{parse_modes, ExperimentConfig, Overrides};

#[derive(Parser)]
#[command(name = "gscoop", version, about = "Collaborative semantic occupancy with Gaussian messages")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate scenes, run the selected modes and write reports and grids.
    Run(Common),
    /// Train fusion weights and the naive calibration.
    Train(Common),
    /// Dump a VOXG grid as CSV.
    Export {
        grid: PathBuf,
        /// Per-class counts instead of the voxel listing.
        #[arg(long)]
        counts: bool,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    /// TOML experiment config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated list of single, zero_shot, naive, learned.
    #[arg(long)]
    modes: Option<String>,
    /// Gaussians per agent.
    #[arg(long)]
    gaussians: Option<usize>,
    #[arg(long)]
    precision: Option<Precision>,
    /// Per-message byte budget.
    #[arg(long)]
    budget_bytes: Option<u64>,
    /// Fusion neighborhood radius, metres.
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    pooling: Option<Pooling>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of generated scenes.
    #[arg(long)]
    scenes: Option<usize>,
    /// Scene spec TOML instead of generated scenes.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// FPRM fusion parameters for the learned mode.
    #[arg(long)]
    params: Option<PathBuf>,
    /// Calibration TOML for the naive mode.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Training steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Process scenes one at a time.
    #[arg(long)]
    serial: bool,
    /// Write accepted GMSG messages.
    #[arg(long)]
    dump_messages: bool,
}

impl Common {
    fn config(self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(p) => ExperimentConfig::load(p)?,
            None => ExperimentConfig::default(),
        };
        cfg.apply(&Overrides {
            modes: self.modes.as_deref().map(parse_modes).transpose()?,
            gaussians: self.gaussians,
            precision: self.precision,
            budget_bytes: self.budget_bytes,
            rho: self.rho,
            pooling: self.pooling,
            seed: self.seed,
            scenes: self.scenes,
            scene_file: self.scene,
            out: self.out,
            params: self.params,
            calibration: self.calibration,
            steps: self.steps,
            serial: self.serial,
            dump_messages: self.dump_messages,
        });
        Ok(cfg)
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run(common) => {
            let cfg = common.config()?;
            let outcome = cmd_run(&cfg)?;
            print!("{}", pretty_summary(&outcome));
            println!("wrote {}", cfg.out.display());
        }
        Command::Train(common) => {
            let cfg = common.config()?;
            let result = cmd_train(&cfg, |line| eprintln!("{line}"))?;
            println!("{:<10} {:>12} {:>12}", "mode", "train mIoU", "holdout mIoU");
            for (m, tr, ho) in &result.comparison {
                let f = |v: &Option<f64>| v.map_or("-".to_string(), |x| format!("{x:.4}"));
                println!("{:<10} {:>12} {:>12}", m.name(), f(tr), f(ho));
            }
            println!("wrote {}", cfg.out.display());
        }
        Command::Export { grid, counts, out } => {
            let bytes = fs::read(&grid).with_context(|| format!("reading {}", grid.display()))?;
            let g = VoxelGrid::from_voxg_bytes(&bytes)?;
            let text = if counts {
                counts_csv(&g, SplatConfig::default().min_contribution)
            } else {
                voxels_csv(&g)
            };
            match out {
                Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
        }
    }
    Ok(())
}
