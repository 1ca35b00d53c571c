use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use nast::pipeline::{self, ArmSelection, RunConfig};

#[derive(Parser)]
#[command(name = "nast", version, about = "Negation-aware selective training on a desk-scale dual encoder")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Run configuration (JSON or flat key = value).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Restrict training, evaluation and reporting to one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Restrict to one arm, or both.
    #[arg(long, global = true)]
    arm: Option<ArmSelection>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Generate the synthetic corpus and its manifest.
    GenData,
    /// Build the polarity-paired MCQ benchmark from the test split.
    GenBenchmark,
    /// Align the base model on summary captions.
    Pretrain,
    /// Causal tracing on probe pairs; writes the alpha file.
    Trace,
    /// Fine-tune adapters per arm and seed.
    Train,
    /// Retrieval, claim accuracy, MCQ gap and update concentration.
    Eval,
    /// Consolidated comparison across arms and seeds.
    Report,
    /// Every phase in order.
    All,
}

fn run(cli: &Cli) -> nast::Result<()> {
    let config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let arms = cli.arm.unwrap_or(config.arms).arms();
    let seeds = cli.seed.map_or_else(|| config.seeds.clone(), |s| vec![s]);
    let run = config.run_dir();
    match cli.command {
        Command::GenData => {
            let m = pipeline::cmd_gen_data(&config)?;
            println!("{} studies, {} patients", m.n_studies, m.n_patients);
        }
        Command::GenBenchmark => {
            let s = pipeline::cmd_gen_benchmark(&config)?;
            println!("{} MCQ pairs ({} eligible)", s.n_pairs, s.n_eligible);
        }
        Command::Pretrain => pipeline::cmd_pretrain(&config)?,
        Command::Trace => {
            let a = pipeline::cmd_trace(&config)?;
            println!("alpha {:?}", a.alpha);
        }
        Command::Train => pipeline::cmd_train(&config, &arms, &seeds)?,
        Command::Eval => {
            pipeline::cmd_eval(&config, &arms, &seeds)?;
        }
        Command::Report => {
            let r = pipeline::cmd_report(&config, &arms, &seeds)?;
            print!("{}", r.to_markdown());
        }
        Command::All => {
            let r = pipeline::run_all(&config, &arms, &seeds)?;
            print!("{}", r.to_markdown());
        }
    }
    println!("run directory: {}", run.root().display());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
