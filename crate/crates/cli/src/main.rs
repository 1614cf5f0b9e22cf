use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use linlab_cli::{execute, load_config, Experiment, Overrides, EXIT_CONFIG};

/// Numerical experiments on linearizations of planar hyperbolic fixed points.
#[derive(Debug, Parser)]
#[command(name = "linlab", version)]
struct Cli {
    #[arg(value_enum)]
    experiment: Experiment,
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the CSV tables and summary.json.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_CONFIG as u8 } else { 0 });
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be positive");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    }
    let overrides = Overrides { experiment: Some(cli.experiment), seed: cli.seed, out: cli.out };
    let cfg = match load_config(cli.config.as_deref(), &overrides) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(EXIT_CONFIG as u8);
        }
    };
    for note in &cfg.notes {
        eprintln!("note: {note}");
    }
    match execute(&cfg) {
        Ok((bundle, written)) => {
            println!("{}", serde_json::to_string_pretty(&bundle.summary).unwrap_or_default());
            for p in written {
                eprintln!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
