use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use snnkit::learning::{Estimator, LossMode};
use snnkit_cli::commands::{self, BenchArgs, Common, LandscapeArgs};
use snnkit_cli::CliResult;

#[derive(Parser)]
#[command(name = "snnkit", version, about = "Spiking network training, analysis and benchmarking")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory (overrides `run.output_dir` and SNNKIT_OUT).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl CommonArgs {
    fn common(&self) -> Common {
        Common {
            config: self.config.clone(),
            out: self.out.clone(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Offline,
    Online,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a Randman spike raster and export it.
    RandmanGen {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Train the configured network.
    Train {
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Loss and efficiency metrics of a parameter file.
    Eval {
        #[command(flatten)]
        common: CommonArgs,
        /// Params file; default `<out>/params.bin`.
        #[arg(long)]
        params: Option<PathBuf>,
        /// Use the first N samples; default all.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Cosine similarity between two gradient estimators.
    CompareGrads {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long, default_value = "bptt")]
        a: Estimator,
        #[arg(long, default_value = "rtrl")]
        b: Estimator,
        /// Loss accumulation; default from the config.
        #[arg(long, value_enum)]
        loss: Option<LossArg>,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Use the first N samples; default `run.batch_size`.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Filter-normalized loss landscape plus checkpoint trajectories.
    Landscape {
        #[command(flatten)]
        common: CommonArgs,
        #[arg(long)]
        params: Option<PathBuf>,
        /// Checkpoint root; default `<out>/checkpoints`.
        #[arg(long)]
        checkpoints: Option<PathBuf>,
        /// Points per axis (odd).
        #[arg(long, default_value_t = 25)]
        resolution: usize,
        #[arg(long, default_value_t = 1.0)]
        range: f64,
        /// Direction seed; default `run.seed`.
        #[arg(long)]
        dir_seed: Option<u64>,
        /// Use the principal components of the first trajectory.
        #[arg(long)]
        pca: bool,
        /// Worker threads (also SNNKIT_THREADS); default 1.
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Time offline BPTT forward+backward passes.
    Bench {
        #[arg(long, default_value_t = 3)]
        layers: usize,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 500)]
        time: usize,
        #[arg(long, default_value_t = 64)]
        batch: usize,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write `bench.json` here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::RandmanGen { common } => commands::randman_gen(&common.common()),
        Command::Train { common } => commands::train(&common.common()),
        Command::Eval { common, params, samples } => commands::eval(&common.common(), params.as_deref(), samples),
        Command::CompareGrads {
            common,
            a,
            b,
            loss,
            params,
            samples,
        } => {
            let loss = loss.map(|l| match l {
                LossArg::Offline => LossMode::Offline,
                LossArg::Online => LossMode::Online,
            });
            commands::compare(&common.common(), a, b, loss, params.as_deref(), samples)
        }
        Command::Landscape {
            common,
            params,
            checkpoints,
            resolution,
            range,
            dir_seed,
            pca,
            threads,
            samples,
        } => commands::landscape(
            &common.common(),
            &LandscapeArgs {
                params,
                checkpoints,
                resolution,
                range,
                dir_seed,
                pca,
                threads,
                samples,
            },
        ),
        Command::Bench {
            layers,
            width,
            time,
            batch,
            repeats,
            seed,
            out,
        } => {
            let args = BenchArgs {
                layers,
                width,
                time,
                batch,
                repeats,
                seed,
                ..BenchArgs::default()
            };
            commands::bench(&args, out.as_deref()).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
