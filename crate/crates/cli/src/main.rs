use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use decoupling_lab_cli::config::{build, parse_lines};
use decoupling_lab_cli::{run, CliError, RunOptions};

/// Numerical laboratory for decoupling and multilinear estimates.
///
/// Settings come from `--config FILE` (one `key=value` per line) and are
/// overridden by `key=value` arguments and by the flags below.
#[derive(Parser, Debug)]
#[command(name = "decoupling-lab", version)]
struct Args {
    /// extend, ratio, sweep, kakeya, multiscale, compare, verify or fit.
    command: Option<String>,
    /// Extra `key=value` settings.
    settings: Vec<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, env = "DECOUPLING_LAB_WORKERS")]
    workers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, short)]
    verbose: bool,
}

fn main() -> ExitCode {
    let args = Args::parse();
    match execute(args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn execute(args: Args) -> Result<(), CliError> {
    let (mut raw, mut errors) = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_lines(&text)
        }
        None => Default::default(),
    };
    let mut settings = args.settings.clone();
    if let Some(c) = &args.command {
        if c.contains('=') {
            settings.insert(0, c.clone());
        } else {
            raw.insert("command".into(), c.clone());
        }
    }
    for s in &settings {
        match s.split_once('=') {
            Some((k, v)) => {
                raw.insert(k.trim().into(), v.trim().into());
            }
            None => errors.push(format!("argument {s:?}: expected key=value")),
        }
    }
    if let Some(seed) = args.seed {
        raw.insert("seed".into(), seed.to_string());
    }
    if let Some(out) = &args.out {
        raw.insert("output_path".into(), out.display().to_string());
    }
    let config = build(&raw, errors).map_err(CliError::Config)?;
    let opts = RunOptions {
        workers: args.workers,
        verbose: args.verbose,
    };
    let manifest = run(&config, &opts)?;
    if args.verbose {
        for o in &manifest.outputs {
            eprintln!("{}  {}", o.sha256, o.file);
        }
    }
    Ok(())
}
