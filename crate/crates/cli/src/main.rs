use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use cimle_cli::commands::{EvalArgs, InterpolateArgs, SampleArgs, TrainArgs};
use cimle_cli::{commands, CliError, Task};

#[derive(Parser)]
#[command(
    name = "cimle",
    version,
    about = "Conditional implicit maximum likelihood estimation"
)]
struct Cli {
    /// Worker threads (default: available cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a generator from a config file.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw samples for one layout.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long, default_value_t = 0)]
        layout_index: usize,
        #[arg(long, default_value_t = 9)]
        count: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "samples")]
        out: PathBuf,
    },
    /// Render frames along a straight line between two latents.
    Interpolate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        layout: PathBuf,
        #[arg(long, default_value_t = 0)]
        layout_index: usize,
        #[arg(long)]
        seed_a: u64,
        #[arg(long)]
        seed_b: u64,
        #[arg(long, default_value_t = 8)]
        steps: usize,
        #[arg(long, default_value = "frames")]
        out: PathBuf,
    },
    /// Diversity and (GMM task) mode coverage of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long, value_parser = parse_task)]
        task: Option<Task>,
        #[arg(long, default_value_t = 40)]
        pairs: usize,
        #[arg(long, default_value_t = 100)]
        inputs: usize,
        #[arg(long)]
        epsilon: Option<f64>,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "eval")]
        out: PathBuf,
    },
    /// Per-category colour rarity of a dataset, as CSV.
    RebalanceStats {
        #[arg(long)]
        dataset: PathBuf,
        /// Output file (default: stdout).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the synthetic dataset a config describes.
    GenData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "data")]
        out: PathBuf,
    },
}

fn parse_task(s: &str) -> Result<Task, String> {
    s.parse()
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Train { config, seed, out } => {
            let summary = commands::cmd_train(&TrainArgs { config, seed, out })?;
            println!(
                "trained {} epochs; outputs in {}",
                summary.epochs,
                summary.out_dir.display()
            );
        }
        Command::Sample {
            checkpoint,
            layout,
            layout_index,
            count,
            seed,
            out,
        } => {
            let files = commands::cmd_sample(&SampleArgs {
                checkpoint,
                layout,
                layout_index,
                count,
                seed,
                out,
            })?;
            println!("wrote {} files", files.len());
        }
        Command::Interpolate {
            checkpoint,
            layout,
            layout_index,
            seed_a,
            seed_b,
            steps,
            out,
        } => {
            let files = commands::cmd_interpolate(&InterpolateArgs {
                checkpoint,
                layout,
                layout_index,
                seed_a,
                seed_b,
                steps,
                out,
            })?;
            println!("wrote {} files", files.len());
        }
        Command::Eval {
            checkpoint,
            dataset,
            task,
            pairs,
            inputs,
            epsilon,
            samples,
            seed,
            out,
        } => {
            let defaults = EvalArgs::default();
            let summary = commands::cmd_eval(&EvalArgs {
                checkpoint,
                dataset,
                task,
                pairs,
                inputs,
                epsilon,
                samples,
                seed: seed.unwrap_or(defaults.seed),
                out,
            })?;
            println!("diversity {}", summary.diversity);
            if let Some(cov) = summary.coverage {
                println!("coverage {}", cov.iter().sum::<f64>() / cov.len().max(1) as f64);
            }
        }
        Command::RebalanceStats { dataset, out } => {
            let csv = commands::cmd_rebalance_stats(&dataset)?;
            match out {
                Some(path) => std::fs::write(path, csv)?,
                None => {
                    let mut out = std::io::stdout().lock();
                    match out.write_all(csv.as_bytes()).and_then(|()| out.flush()) {
                        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => return Err(e.into()),
                        _ => {}
                    }
                }
            }
        }
        Command::GenData { config, seed, out } => {
            let path = commands::cmd_gen_data(&config, seed, &out)?;
            println!("wrote {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("CIMLE_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            log::warn!("could not size the worker pool: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
