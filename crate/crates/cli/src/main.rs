use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use nlmv::{configure_threads, run, Invocation, Task, EXIT_SCHEMA};

/// Mean–variance portfolio selection with ambiguous long and short premia.
#[derive(Parser, Debug)]
#[command(name = "nlmv", version)]
struct Cli {
    task: Task,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Overrides `numerics.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `numerics.paths`.
    #[arg(long)]
    paths: Option<usize>,
    /// Output directory; defaults to `output.dir`, then `nlmv-out`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if e.use_stderr() => {
            let _ = e.print();
            return ExitCode::from(EXIT_SCHEMA as u8);
        }
        Err(e) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("nlmv: {msg}");
        return ExitCode::from(EXIT_SCHEMA as u8);
    }
    let inv = Invocation { task: cli.task, config: cli.config, seed: cli.seed, paths: cli.paths, out: cli.out };
    ExitCode::from(run(&inv) as u8)
}
