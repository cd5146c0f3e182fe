use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use tracing_subscriber::EnvFilter;

use hatequad::config::PipelineConfig;
use hatequad::error::Error;
use hatequad::pipeline::{self, InferPaths, SweepOutputs, TrainLayout, DEFAULT_TAU_GRID};

#[derive(Parser)]
#[command(name = "hatequad", version, about = "Hate-speech quadruplet extraction pipeline")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct GlobalArgs {
    /// TOML configuration file; built-in defaults otherwise.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for reproducible mock backends.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Extract quadruplets directly instead of triplets.
    #[arg(long, global = true)]
    no_tr: bool,
    /// Zero-shot prompts without retrieved examples.
    #[arg(long, global = true)]
    no_srag: bool,
    /// A single generation per sample instead of voting.
    #[arg(long, global = true)]
    no_mav: bool,
    /// (infer) Record every round's votes for later threshold sweeps.
    #[arg(long, global = true, value_name = "PATH")]
    record_votes: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Rewrite quadruplet annotations as triplets.
    Transform {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        /// Write the rule-violation report here (JSON).
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Embed sample texts into a vector file.
    Embed {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
    /// Build the retrieval index over the training corpus.
    Index {
        /// Defaults to `data.train`.
        #[arg(long)]
        samples: Option<PathBuf>,
        /// Precomputed vectors; texts are embedded when omitted.
        #[arg(long)]
        vectors: Option<PathBuf>,
        /// Defaults to `data.index`.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Build fine-tuning pairs with a retrieved example in each prompt.
    PrepTrain {
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long, value_enum, default_value_t = TrainLayout::PromptCompletion)]
        layout: TrainLayout,
    },
    /// Extract quadruplets for every test sample.
    Infer {
        /// Defaults to `data.test`.
        #[arg(long)]
        test: Option<PathBuf>,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        train: Option<PathBuf>,
        #[arg(long)]
        index: Option<PathBuf>,
        #[arg(long)]
        test_vectors: Option<PathBuf>,
        /// Per-sample audit trail (JSONL).
        #[arg(long)]
        audit: Option<PathBuf>,
        /// Overrides `mav.k`.
        #[arg(long)]
        k: Option<usize>,
        /// Overrides `mav.tau`.
        #[arg(long)]
        tau: Option<u32>,
    },
    /// Score predictions against gold annotations.
    Eval {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Write the report as JSON.
        #[arg(long)]
        report: Option<PathBuf>,
        /// Write per-sample TP/FP/FN counts (JSONL).
        #[arg(long, value_name = "PATH")]
        per_sample: Option<PathBuf>,
    },
    /// Re-score a recorded vote stream at several thresholds.
    Sweep {
        #[arg(long)]
        votes: PathBuf,
        #[arg(long)]
        gold: PathBuf,
        /// Comma-separated, strictly increasing.
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_TAU_GRID)]
        taus: Vec<u32>,
        /// CSV output; printed to stdout when omitted.
        #[arg(long)]
        csv: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long)]
        predictions_dir: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

fn load_config(g: &GlobalArgs) -> Result<PipelineConfig, Error> {
    let mut cfg = match &g.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if g.seed.is_some() {
        cfg.seed = g.seed;
    }
    cfg.ablation.tr &= !g.no_tr;
    cfg.ablation.srag &= !g.no_srag;
    cfg.ablation.mav &= !g.no_mav;
    Ok(cfg)
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string(value).expect("serializable summary"));
}

fn run(cli: Cli) -> Result<(), Error> {
    let mut cfg = load_config(&cli.global)?;
    if cli.global.record_votes.is_some() && !matches!(cli.command, Command::Infer { .. }) {
        return Err(Error::Usage("--record-votes only applies to infer".into()));
    }
    match cli.command {
        Command::Transform { input, output, report } => {
            print_json(&pipeline::transform(&cfg, &input, &output, report.as_deref())?);
        }
        Command::Embed { input, output } => {
            let n = pipeline::embed(&cfg, &input, &output)?;
            print_json(&serde_json::json!({ "vectors": n }));
        }
        Command::Index { samples, vectors, output } => {
            let samples = pipeline::resolve_path(samples, &cfg.data.train, "training corpus")?;
            let output = pipeline::resolve_path(output, &cfg.data.index, "index")?;
            print_json(&pipeline::index(&cfg, &samples, vectors.as_deref(), &output)?);
        }
        Command::PrepTrain {
            train,
            index,
            output,
            layout,
        } => {
            let train = pipeline::resolve_path(train, &cfg.data.train, "training corpus")?;
            let index = pipeline::resolve_path(index, &cfg.data.index, "index")?;
            let n = pipeline::prep_train(&cfg, &train, &index, &output, layout)?;
            print_json(&serde_json::json!({ "pairs": n }));
        }
        Command::Infer {
            test,
            output,
            train,
            index,
            test_vectors,
            audit,
            k,
            tau,
        } => {
            if let Some(k) = k {
                cfg.mav.k = k;
            }
            if let Some(tau) = tau {
                cfg.mav.tau = tau;
            }
            let paths = InferPaths {
                test: pipeline::resolve_path(test, &cfg.data.test, "test set")?,
                output,
                train,
                index,
                test_vectors,
                audit,
                record_votes: cli.global.record_votes,
            };
            print_json(&pipeline::infer(&cfg, &paths)?);
        }
        Command::Eval {
            predictions,
            gold,
            report,
            per_sample,
        } => {
            let r = pipeline::eval(&cfg, &predictions, &gold, report.as_deref(), per_sample.as_deref())?;
            print!("{}", r.table());
        }
        Command::Sweep {
            votes,
            gold,
            taus,
            csv,
            json,
            predictions_dir,
        } => {
            let print_csv = csv.is_none();
            let outputs = SweepOutputs {
                csv,
                json,
                predictions_dir,
            };
            let result = pipeline::sweep(&cfg, &votes, &gold, &taus, &outputs)?;
            if print_csv {
                print!("{}", result.to_csv());
            }
        }
        Command::Config => {
            cfg.validate()?;
            print!("{}", cfg.to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(EnvFilter::try_from_default_env().unwrap_or_else(|_| EnvFilter::new("info")))
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
