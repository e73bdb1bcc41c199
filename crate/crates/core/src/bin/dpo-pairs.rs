use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use dpo_pairs::pipeline::{
    cmd_evt, cmd_gen, cmd_pairs, cmd_stats, cmd_sweep, cmd_train, ErrorKind, EvtArgs, GenArgs,
    PairsArgs, PipelineError, StatsArgs, StrategyKind, SweepArgs, SweepMode, TrainArgs,
};
use dpo_pairs::stats::Anchor;

/// Preference-pair construction, extreme-value analysis and a toy DPO trainer.
#[derive(Parser)]
#[command(name = "dpo-pairs", version)]
struct Cli {
    /// Worker threads (default: available parallelism); results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic scored-sample JSONL corpus.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        prompts: Option<usize>,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-prompt reward statistics, anchor selections and histograms.
    Stats {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Use the 11-anchor set (adds mu-4s, mu-3s, mu+3s, mu+4s).
        #[arg(long)]
        extended: bool,
        #[arg(long, default_value_t = 20)]
        bins: usize,
    },
    /// Build a preference dataset with one pair per prompt.
    Pairs {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        strategy: Strategy,
        /// Chosen anchor, e.g. max, mu+2s.
        #[arg(long)]
        chosen: Option<Anchor>,
        /// Rejected anchor, e.g. min, mu-2s.
        #[arg(long)]
        rejected: Option<Anchor>,
        /// Candidate budget (default: smallest prompt's sample count).
        #[arg(long)]
        n: Option<usize>,
        /// Rejected pool for the scalable strategy (default 5).
        #[arg(long)]
        pool: Option<usize>,
    },
    /// Train the toy policy on a preference dataset; writes the loss trace CSV.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        pairs: Option<PathBuf>,
        /// Scored samples the pairs were built from (candidate enumeration).
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        beta: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        trace_every: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        feature_scale: Option<f64>,
    },
    /// Extreme-value predictions against Monte Carlo (or a top-k curve with --samples).
    Evt {
        #[arg(long, default_value_t = 0.0)]
        mu: f64,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, value_delimiter = ',', default_values_t = [2, 5, 20, 100, 1000, 10000])]
        n: Vec<u64>,
        #[arg(long, default_value_t = 100_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        samples: Option<PathBuf>,
        #[arg(long, default_value_t = 3)]
        k: usize,
    },
    /// Run a config-driven sweep and write its CSV report.
    Sweep {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Strategy {
    Anchor,
    Conventional,
    Scalable,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Sweep,
    Grid21,
    Scaling,
    Overfit,
}

fn run(command: Command) -> Result<String, PipelineError> {
    let log = &mut std::io::stderr();
    match command {
        Command::Gen {
            config,
            prompts,
            samples,
            seed,
            out,
        } => cmd_gen(
            GenArgs {
                config,
                prompts,
                samples,
                seed,
                out,
            },
            log,
        ),
        Command::Stats {
            input,
            out,
            extended,
            bins,
        } => cmd_stats(
            StatsArgs {
                input,
                out,
                extended,
                bins,
            },
            log,
        ),
        Command::Pairs {
            input,
            out,
            strategy,
            chosen,
            rejected,
            n,
            pool,
        } => {
            let strategy = match strategy {
                Strategy::Anchor => StrategyKind::Anchor,
                Strategy::Conventional => StrategyKind::Conventional,
                Strategy::Scalable => StrategyKind::Scalable,
            };
            cmd_pairs(
                PairsArgs {
                    input,
                    out,
                    strategy,
                    chosen,
                    rejected,
                    n,
                    pool,
                },
                log,
            )
        }
        Command::Train {
            config,
            pairs,
            samples,
            out,
            beta,
            lr,
            steps,
            batch_size,
            trace_every,
            seed,
            feature_scale,
        } => cmd_train(
            TrainArgs {
                config,
                pairs,
                samples,
                out,
                beta,
                learning_rate: lr,
                steps,
                batch_size,
                trace_every,
                seed,
                reward_feature_scale: feature_scale,
            },
            log,
        ),
        Command::Evt {
            mu,
            sigma,
            n,
            trials,
            seed,
            out,
            samples,
            k,
        } => cmd_evt(
            EvtArgs {
                mu,
                sigma,
                n,
                trials,
                seed,
                out,
                samples,
                k,
            },
            log,
        ),
        Command::Sweep {
            config,
            out,
            seed,
            mode,
        } => cmd_sweep(
            SweepArgs {
                config,
                out,
                seed,
                mode: mode.map(|m| match m {
                    Mode::Sweep => SweepMode::Sweep,
                    Mode::Grid21 => SweepMode::Grid21,
                    Mode::Scaling => SweepMode::Scaling,
                    Mode::Overfit => SweepMode::Overfit,
                }),
            },
            log,
        ),
    }
}

fn fail(e: &PipelineError) -> ExitCode {
    let line = e.message.replace('\n', " ");
    eprintln!("error[{}]: {line}", e.kind);
    ExitCode::from(e.kind.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { ErrorKind::Usage.exit_code() as u8 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = cli.threads {
        if t == 0 {
            return fail(&PipelineError::usage("--threads must be positive"));
        }
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => return fail(&PipelineError::usage(e)),
    };
    match pool.install(|| run(cli.command)) {
        Ok(summary) => {
            if !summary.is_empty() {
                println!("{summary}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(&e),
    }
}
