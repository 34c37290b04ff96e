use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sticky_averaging::harness::{error_json, plot_file, run, ExperimentConfig, PlotSpec};
use sticky_averaging::Error;

/// Runs averaging experiments and plots their tables.
#[derive(Debug, Parser)]
#[command(name = "sticky-avg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Output directory (overrides `output.dir`).
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads (overrides `workers`).
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Render a CSV table as SVG.
    Plot {
        csv: PathBuf,
        /// TOML plot spec.
        #[arg(long)]
        spec: PathBuf,
        /// Output file; defaults to the CSV path with an `.svg` extension.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

const EXIT_FAILED_ASSERTION: u8 = 1;
const EXIT_ERROR: u8 = 2;

fn report_error(err: &Error, dir: Option<&Path>) -> ExitCode {
    let json = error_json(err);
    if let Some(dir) = dir {
        if fs::create_dir_all(dir).is_ok() {
            let _ = fs::write(dir.join("error.json"), format!("{json}\n"));
        }
    }
    eprintln!("{json}");
    ExitCode::from(EXIT_ERROR)
}

fn run_command(config: &Path, out: Option<PathBuf>, workers: Option<usize>) -> ExitCode {
    let mut cfg = match ExperimentConfig::load(config) {
        Ok(c) => c,
        Err(e) => return report_error(&e, out.as_deref()),
    };
    if let Some(dir) = out {
        cfg.output.dir = dir;
    }
    if let Some(n) = workers {
        cfg.workers = n;
    }
    match run(&cfg) {
        Ok(report) => {
            for a in &report.assertions {
                println!("[{}] {}: {:.4e} ({})", if a.passed { "PASS" } else { "FAIL" }, a.name, a.value, a.condition);
            }
            println!("artifacts written to {}", report.out_dir.display());
            if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILED_ASSERTION)
            }
        }
        Err(e) => report_error(&e, Some(&cfg.output.dir)),
    }
}

fn plot_command(csv: &Path, spec: &Path, out: Option<PathBuf>) -> ExitCode {
    let result = fs::read_to_string(spec)
        .map_err(Error::from)
        .and_then(|text| PlotSpec::from_toml(&text))
        .and_then(|spec| plot_file(csv, &spec));
    match result {
        Ok(outcome) => {
            for w in &outcome.warnings {
                eprintln!("warning: {w}");
            }
            for (series, slope) in &outcome.slopes {
                println!("{series}: slope {slope}");
            }
            let target = out.unwrap_or_else(|| csv.with_extension("svg"));
            match fs::write(&target, outcome.svg) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => report_error(&e.into(), None),
            }
        }
        Err(e) => report_error(&e, None),
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run { config, out, workers } => run_command(&config, out, workers),
        Command::Plot { csv, spec, out } => plot_command(&csv, &spec, out),
    }
}
