use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use changepoint::corpus::{BoundaryDistribution, LengthDistribution, SynthParams};
use changepoint::ensemble::Rounding;
use changepoint::pipeline::{
    cmd_ensemble, cmd_prepare, cmd_run, cmd_score, cmd_synth, PipelineConfig, PipelineError, RunOptions, ScoreOptions,
};

/// Locate where human-written text turns into machine-generated text.
#[derive(Parser)]
#[command(name = "changepoint", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic labeled corpus.
    Synth(SynthArgs),
    /// Split training data into folds, cross-label it with the decoder and
    /// write encoder training files.
    Prepare {
        #[arg(long)]
        config: PathBuf,
        /// Training JSONL; overrides `paths.train`.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Output directory; overrides `paths.work_dir`.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run the configured stages and write final predictions.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long)]
        work_dir: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Reuse stage outputs already in the work directory.
        #[arg(long)]
        resume: bool,
    },
    /// Score predictions against gold labels.
    Score {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        #[arg(long)]
        report_dir: Option<PathBuf>,
        /// Failure file from `run`; those ids are not scored.
        #[arg(long)]
        exclude: Option<PathBuf>,
        /// Worst instances listed in the table.
        #[arg(long, default_value_t = 10)]
        top: usize,
    },
    /// Average existing prediction files.
    Ensemble {
        #[arg(long = "predictions", required = true, num_args = 1..)]
        predictions: Vec<PathBuf>,
        /// Corpus the predictions refer to, for word counts.
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = RoundingArg::HalfAwayFromZero)]
        rounding: RoundingArg,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    count: usize,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, default_value_t = LengthDistribution::default().min_words)]
    min_words: usize,
    #[arg(long, default_value_t = LengthDistribution::default().max_words)]
    max_words: usize,
    /// Put every boundary at this word index (clamped to the text length).
    #[arg(long, conflicts_with = "boundary_range")]
    fixed_boundary: Option<usize>,
    /// Relative boundary range as `lo,hi`, both in [0, 1].
    #[arg(long, value_delimiter = ',', num_args = 2)]
    boundary_range: Option<Vec<f64>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum RoundingArg {
    HalfAwayFromZero,
    Floor,
    HalfEven,
}

impl From<RoundingArg> for Rounding {
    fn from(r: RoundingArg) -> Self {
        match r {
            RoundingArg::HalfAwayFromZero => Rounding::HalfAwayFromZero,
            RoundingArg::Floor => Rounding::Floor,
            RoundingArg::HalfEven => Rounding::HalfEven,
        }
    }
}

fn run(cli: Cli) -> Result<(), PipelineError> {
    match cli.command {
        Command::Synth(a) => {
            if a.count == 0 {
                return Err(PipelineError::Input("--count must be at least 1".into()));
            }
            let mut params = SynthParams::new(a.seed, a.count);
            params.length = LengthDistribution {
                min_words: a.min_words,
                max_words: a.max_words,
            };
            params.boundary = match (a.fixed_boundary, a.boundary_range) {
                (Some(index), _) => BoundaryDistribution::Fixed { index },
                (None, Some(r)) => BoundaryDistribution::RelativeRange { lo: r[0], hi: r[1] },
                (None, None) => BoundaryDistribution::Uniform,
            };
            let stats = cmd_synth(&params, &a.output)?;
            println!("wrote {} instances to {}", stats.instance_count, a.output.display());
        }
        Command::Prepare { config, train, out_dir } => {
            let config = PipelineConfig::load(&config)?;
            let s = cmd_prepare(&config, train.as_deref(), out_dir.as_deref())?;
            println!(
                "folds {:?}, {} decoder predictions, {} failures, written to {}",
                s.fold_sizes,
                s.decoder_predictions,
                s.failures,
                s.out_dir.display()
            );
            for (kind, rows) in s.training_rows {
                println!("  {}: {rows} rows", kind.file_name());
            }
        }
        Command::Run { config, input, work_dir, output, resume } => {
            let config = PipelineConfig::load(&config)?;
            let s = cmd_run(&config, &RunOptions { input, work_dir, output, resume })?;
            println!("{} predictions written to {}", s.predictions, s.output.display());
            if s.failures > 0 {
                println!("{} failures listed in {}", s.failures, s.work_dir.join("failures.jsonl").display());
            }
        }
        Command::Score { predictions, gold, report_dir, exclude, top } => {
            let (_, table) = cmd_score(&ScoreOptions { predictions, gold, report_dir, exclude, top })?;
            print!("{table}");
        }
        Command::Ensemble { predictions, corpus, output, rounding } => {
            let n = cmd_ensemble(&predictions, &corpus, rounding.into(), &output)?;
            println!("{n} predictions written to {}", output.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let PipelineError::Ids { ids, .. } = &e {
                for id in ids {
                    eprintln!("  {id}");
                }
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
