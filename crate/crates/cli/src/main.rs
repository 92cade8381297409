//! LED-array diffraction tomography from the command line: simulate
//! measurement stacks, reconstruct refractive-index volumes, and analyze
//! k-space coverage and reconstruction quality.
//!
//! Exit codes: 0 success, 1 usage error, 2 config/data error, 3 numerical
//! failure.

mod analyze;
mod errors;
mod io;
mod plots;
mod reconstruct;
mod simulate;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use dptomo_core::config::RunConfig;
use dptomo_core::forward::ForwardModel;
use errors::CliError;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "dptomo", version, about = "Desk-scale diffraction tomography toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a measurement stack from a config (phantom, model, noise).
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output run directory.
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Also write PNG previews.
        #[arg(long)]
        plots: bool,
    },
    /// Reconstruct a refractive-index volume from a simulated or measured
    /// stack.
    Reconstruct {
        #[arg(long)]
        config: PathBuf,
        /// Run directory holding images.dpt and wavevectors.dpt.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        #[arg(long)]
        plots: bool,
    },
    /// Inspect geometry coverage or finished reconstructions.
    Analyze {
        #[command(subcommand)]
        what: AnalyzeCommand,
    },
}

#[derive(Subcommand)]
enum AnalyzeCommand {
    /// Synthesize the 3D transfer function and export its support.
    TransferFunction {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plots: bool,
    },
    /// Tabulate space-bandwidth product over a 3x3 aperture grid.
    Sbp {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// RMSE/SSIM and an error histogram between a reconstruction and truth.
    Metrics {
        /// Reconstruction tensor or its run directory.
        #[arg(long)]
        data: PathBuf,
        /// Ground-truth tensor or its run directory.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        plots: bool,
    },
    /// Axial refractive-index line profiles through a reconstruction.
    Traces {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Lateral position of the trace (defaults to the volume center).
        #[arg(long)]
        x: Option<usize>,
        #[arg(long)]
        y: Option<usize>,
        #[arg(long)]
        plots: bool,
    },
}

#[derive(Args)]
struct Overrides {
    /// Override the config's RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the forward model.
    #[arg(long)]
    model: Option<ModelArg>,
    /// Override the prior family.
    #[arg(long)]
    prior: Option<PriorArg>,
    /// Total-variation weight.
    #[arg(long)]
    lambda_tv: Option<f64>,
    /// Positivity-penalty weight.
    #[arg(long)]
    lambda_pos: Option<f64>,
    /// LEDs per stochastic batch.
    #[arg(long)]
    batch_leds: Option<usize>,
    /// Lateral patch extent in pixels.
    #[arg(long)]
    patch: Option<usize>,
    /// Iteration count.
    #[arg(long)]
    iters: Option<usize>,
    /// Fit complex fields instead of intensities.
    #[arg(long)]
    phase_sensitive: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModelArg {
    Born,
    Rytov,
    Multislice,
}

impl From<ModelArg> for ForwardModel {
    fn from(m: ModelArg) -> Self {
        match m {
            ModelArg::Born => ForwardModel::Born,
            ModelArg::Rytov => ForwardModel::Rytov,
            ModelArg::Multislice => ForwardModel::Multislice,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorArg {
    None,
    Dip,
    Tv,
    Positivity,
}

fn load_config(path: &PathBuf, overrides: &Overrides) -> Result<RunConfig, CliError> {
    let mut config = RunConfig::from_path(path)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(model) = overrides.model {
        config.model = model.into();
    }
    if overrides.phase_sensitive {
        config.phase_sensitive = true;
    }
    if let Some(prior) = overrides.prior {
        match prior {
            PriorArg::None => {
                config.prior.use_dip = false;
                config.prior.lambda_tv = 0.0;
                config.prior.lambda_pos = 0.0;
            }
            PriorArg::Dip => config.prior.use_dip = true,
            PriorArg::Tv => config.prior.use_dip = false,
            PriorArg::Positivity => config.prior.use_dip = false,
        }
    }
    if let Some(v) = overrides.lambda_tv {
        config.prior.lambda_tv = v;
    }
    if let Some(v) = overrides.lambda_pos {
        config.prior.lambda_pos = v;
    }
    match overrides.prior {
        Some(PriorArg::Tv) if config.prior.lambda_tv == 0.0 => {
            return Err(CliError::Data(
                "--prior tv needs a weight: pass --lambda-tv or set prior.lambda_tv".into(),
            ));
        }
        Some(PriorArg::Positivity) if config.prior.lambda_pos == 0.0 => {
            return Err(CliError::Data(
                "--prior positivity needs a weight: pass --lambda-pos or set prior.lambda_pos"
                    .into(),
            ));
        }
        _ => {}
    }
    if let Some(n) = overrides.batch_leds {
        config.optimizer.batch_leds = Some(n);
    }
    if let Some(extent) = overrides.patch {
        config.optimizer.patch = Some(extent);
    }
    if let Some(iters) = overrides.iters {
        config.optimizer.iterations = iters;
    }
    config.validate()?;
    Ok(config)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Simulate { config, out, overrides, plots } => {
            let config = load_config(&config, &overrides)?;
            simulate::run(&config, &out, plots)
        }
        Command::Reconstruct { config, data, out, overrides, plots } => {
            let config = load_config(&config, &overrides)?;
            reconstruct::run(&config, &data, &out, plots)
        }
        Command::Analyze { what } => match what {
            AnalyzeCommand::TransferFunction { config, out, plots } => {
                let config = RunConfig::from_path(&config)?;
                analyze::transfer_function(&config, &out, plots)
            }
            AnalyzeCommand::Sbp { config, out } => {
                let config = RunConfig::from_path(&config)?;
                analyze::sbp(&config, &out)
            }
            AnalyzeCommand::Metrics { data, truth, out, plots } => {
                analyze::metrics(&data, &truth, &out, plots)
            }
            AnalyzeCommand::Traces { data, truth, out, x, y, plots } => {
                analyze::traces(&data, truth.as_deref(), &out, x, y, plots)
            }
        },
    }
}

fn main() -> ExitCode {
    dptomo_core::parallel::init_threads_from_env();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
