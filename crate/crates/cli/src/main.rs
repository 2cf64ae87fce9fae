use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use cpm_infer::experiments::Experiment;
use cpm_infer::{execute, Invocation, THREADS_ENV};

#[derive(Debug, Parser)]
#[command(
    name = "cpm-infer",
    version,
    about = "Run covariate-to-parameter map inference experiments"
)]
struct Cli {
    /// One of: verify, stability, linearize, lan, bvm, contract.
    experiment: String,
    /// Experiment configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `out_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Global seed; overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads.
    #[arg(long, env = THREADS_ENV)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            if code == 1 {
                eprintln!("valid experiments: {}", Experiment::valid_names());
            }
            return ExitCode::from(code);
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(1);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot start {n} worker threads: {e}");
            return ExitCode::from(1);
        }
    }
    let inv = Invocation {
        experiment: cli.experiment,
        config: cli.config,
        out: cli.out,
        seed: cli.seed,
    };
    match execute(&inv) {
        Ok((dir, summary)) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&summary).unwrap_or_default()
            );
            eprintln!("artifacts written to {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
