use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use mmsivae::fusion::FusionMethod;
use mmsivae::interpret::{CovariatePolicy, FillPolicy};
use mmsivae::pipeline::{
    cmd_evaluate, cmd_interpret, cmd_score, cmd_synth, cmd_train, InterpretOverrides,
    ScoreOverrides, TrainOverrides,
};

/// Multimodal soft-introspective VAE normative modeling.
#[derive(Parser)]
#[command(name = "mmsivae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fusion {
    Poe,
    Moe,
    Mopoe,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fill {
    Zeros,
    ReferenceMeans,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic multimodal dataset.
    Synth {
        /// SynthSpec file (TOML, or JSON by extension).
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Train on the reference cohort of a dataset.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        learning_rate: Option<f64>,
        #[arg(long)]
        latent_dim: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        fusion: Option<Fusion>,
    },
    /// Fit reference statistics and score every subject.
    Score {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        p_level: Option<f64>,
        #[arg(long)]
        shrinkage: Option<f64>,
        /// Score a posterior draw with this seed instead of the posterior mean.
        #[arg(long)]
        sample_seed: Option<u64>,
    },
    /// Likelihood ratios, EMD and cohort summaries from a deviation report.
    Evaluate {
        #[arg(long)]
        report: PathBuf,
        /// Dataset directory providing the labels.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        p_levels: Option<Vec<f64>>,
    },
    /// Select deviating latent dimensions and build regional effect maps.
    Interpret {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        report: PathBuf,
        /// Defaults to reference_stats.json next to the report.
        #[arg(long)]
        reference_stats: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        threshold: Option<f64>,
        #[arg(long, value_enum)]
        fill: Option<Fill>,
        #[arg(long)]
        keep_covariates: bool,
        #[arg(long)]
        q: Option<f64>,
    },
}

fn run(cli: Cli) -> mmsivae::Result<Vec<PathBuf>> {
    match cli.command {
        Command::Synth { spec, out, seed } => cmd_synth(spec.as_deref(), &out, seed),
        Command::Train {
            data,
            out,
            config,
            epochs,
            batch_size,
            learning_rate,
            latent_dim,
            seed,
            fusion,
        } => {
            let overrides = TrainOverrides {
                epochs,
                batch_size,
                learning_rate,
                latent_dim,
                seed,
                fusion: fusion.map(|f| match f {
                    Fusion::Poe => FusionMethod::Poe,
                    Fusion::Moe => FusionMethod::Moe,
                    Fusion::Mopoe => FusionMethod::Mopoe,
                }),
            };
            cmd_train(&data, &out, config.as_deref(), &overrides)
        }
        Command::Score {
            checkpoint,
            data,
            out,
            config,
            p_level,
            shrinkage,
            sample_seed,
        } => {
            let overrides = ScoreOverrides {
                p_level,
                shrinkage,
                sample_seed,
            };
            cmd_score(&checkpoint, &data, &out, config.as_deref(), &overrides)
        }
        Command::Evaluate {
            report,
            data,
            out,
            config,
            p_levels,
        } => cmd_evaluate(&report, &data, &out, config.as_deref(), p_levels),
        Command::Interpret {
            checkpoint,
            report,
            reference_stats,
            data,
            out,
            config,
            threshold,
            fill,
            keep_covariates,
            q,
        } => {
            let overrides = InterpretOverrides {
                threshold,
                fill: fill.map(|f| match f {
                    Fill::Zeros => FillPolicy::Zeros,
                    Fill::ReferenceMeans => FillPolicy::ReferenceMeans,
                }),
                covariates: keep_covariates.then_some(CovariatePolicy::Keep),
                q,
            };
            cmd_interpret(
                &checkpoint,
                &report,
                reference_stats.as_deref(),
                &data,
                &out,
                config.as_deref(),
                &overrides,
            )
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
