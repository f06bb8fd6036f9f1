use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use ctxparse_core::config::RunConfig;
use ctxparse_core::pipeline::{self, PipelineError};

#[derive(Parser)]
#[command(name = "ctxparse", version, about = "Context-dependent text-to-SQL parser")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train the parser; `--out` sets the training log.
    Train(Common),
    /// Decode the evaluation split and score it; `--out` sets the prediction file.
    Evaluate(Common),
    /// Train the reranker on mined beams; `--out` sets the reranker checkpoint.
    RerankTrain(Common),
    /// Dump the relation matrix of every turn of one interaction.
    Link(Common),
    /// Dump decay weights and attention maps of one interaction.
    ExportAttention(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Parser checkpoint, overriding the config.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Index into the evaluation split, for `link` and `export-attention`.
    #[arg(long, default_value_t = 0)]
    interaction: usize,
}

impl Common {
    fn load(&self) -> Result<RunConfig, PipelineError> {
        let mut cfg = RunConfig::load(&self.config)?;
        if let Some(c) = &self.checkpoint {
            cfg.checkpoint = c.clone();
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        Ok(cfg)
    }
}

fn run(command: Command) -> anyhow::Result<()> {
    match command {
        Command::Train(args) => {
            let mut cfg = args.load()?;
            if let Some(out) = args.out {
                cfg.log = out;
            }
            let records = pipeline::train(&cfg).context("training failed")?;
            if let Some(last) = records.last() {
                println!("epoch {} loss {:.6}", last.epoch, last.loss);
            }
            println!("checkpoint {}", cfg.checkpoint.display());
        }
        Command::Evaluate(args) => {
            let mut cfg = args.load()?;
            if let Some(out) = args.out {
                cfg.predictions = out;
            }
            let report = pipeline::evaluate(&cfg).context("evaluation failed")?;
            print!("{report}");
        }
        Command::RerankTrain(args) => {
            let mut cfg = args.load()?;
            if let Some(out) = args.out {
                cfg.rerank.checkpoint = out;
            }
            let losses = pipeline::rerank_train(&cfg).context("reranker training failed")?;
            if let Some(last) = losses.last() {
                println!("epoch {} loss {last:.6}", losses.len());
            }
            println!("reranker {}", cfg.rerank.checkpoint.display());
        }
        Command::Link(args) => {
            let cfg = args.load()?;
            let text = pipeline::link(&cfg, args.interaction).context("link failed")?;
            emit(text, args.out)?;
        }
        Command::ExportAttention(args) => {
            let cfg = args.load()?;
            let text = pipeline::export_attention(&cfg, args.interaction).context("attention export failed")?;
            emit(text, args.out)?;
        }
    }
    Ok(())
}

fn emit(text: String, out: Option<PathBuf>) -> Result<(), PipelineError> {
    match out {
        Some(path) => std::fs::write(&path, text).map_err(|source| PipelineError::Io {
            path: path.display().to_string(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<PipelineError>().map_or(1, PipelineError::exit_code);
            ExitCode::from(code as u8)
        }
    }
}
