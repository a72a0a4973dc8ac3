use clap::Parser;
use raylight_cli::{run_pipeline, Command, ExperimentConfig, RunOptions};
use std::path::PathBuf;
use std::process::ExitCode;

/// Nonlinear transport experiments: forward solves, GO probes, identities
/// and inversions. Exit status: 0 ok, 2 config error, 3 solver failure,
/// 4 threshold not met.
#[derive(Parser, Debug)]
#[command(name = "raylight", version)]
struct Args {
    command: Command,
    /// JSON experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for all randomness (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads, 0 for all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

fn main() -> ExitCode {
    let args = match Args::try_parse() {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = ExperimentConfig::load(&args.config)
        .and_then(|cfg| run_pipeline(cfg, args.command, &RunOptions { out: args.out, seed: args.seed, threads: args.threads }));
    match result {
        Ok(summary) => {
            for c in &summary.checks {
                println!("{}: {:.4e} ok", c.name, c.value);
            }
            println!("{} artifacts in {}", summary.artifacts.len(), summary.out.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("raylight {}: {e}", args.command);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
