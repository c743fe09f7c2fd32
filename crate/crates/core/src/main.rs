use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mupfl::fl::{partition_report, run_training, Algorithm, RunConfig, RunOptions};

#[derive(Parser)]
#[command(name = "mupfl", version, about = "Personalized federated learning simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train for the configured number of rounds and write metrics.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        algorithm: Option<Algorithm>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        /// Write per-round client similarity matrices.
        #[arg(long)]
        dump_similarity: bool,
        /// Write per-round client activation maps.
        #[arg(long)]
        dump_maps: bool,
        /// Continue from a checkpoint written by an earlier run.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Print per-client class histograms of the configured partition.
    PartitionReport {
        #[arg(long)]
        config: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> mupfl::Result<()> {
    match cli.command {
        Command::Run {
            config,
            seed,
            algorithm,
            out,
            dump_similarity,
            dump_maps,
            resume,
        } => {
            let mut cfg = RunConfig::from_file(&config)?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(a) = algorithm {
                cfg.algorithm = a;
            }
            let opts = RunOptions {
                out_dir: out,
                dump_similarity,
                dump_maps,
                resume,
            };
            let summary = run_training(&cfg, &opts)?;
            println!(
                "{} rounds: global acc {:.4}, mean client acc {:.4}, tail acc {:.4} -> {}",
                summary.rounds,
                summary.final_global_acc,
                summary.final_mean_client_acc,
                summary.final_tail_acc,
                opts.out_dir.display()
            );
        }
        Command::PartitionReport { config } => {
            print!("{}", partition_report(&RunConfig::from_file(&config)?)?);
        }
    }
    Ok(())
}
