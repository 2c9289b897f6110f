use std::process::ExitCode;

use cdcov_cli::{execute, Command};
use clap::Parser;

#[derive(Debug, Parser)]
#[command(name = "cdcov", version, about = "Compression-decompression covariance estimation and benchmarks")]
struct Cli {
    /// Worker thread cap (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(t) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            eprintln!("error: cannot configure thread pool: {e}");
            return ExitCode::from(1);
        }
    }
    let threads = rayon::current_num_threads();
    match execute(cli.command, threads) {
        Ok(manifest) => {
            for a in &manifest.artifacts {
                log::info!("wrote {a}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
