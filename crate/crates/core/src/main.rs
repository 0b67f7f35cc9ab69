//! `modcl`: generate task streams, run continual-learning experiments,
//! and compare finished runs.
//!
//! Exit codes: 0 on success, 2 for configuration problems (bad flags, bad
//! config file, failed validation), 3 for runtime failures (I/O, training).

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use modcl::config::ExperimentConfig;
use modcl::error::Error;
use modcl::report::write_report;
use modcl::runner::run_experiment;
use modcl::streams::{build_stream_with_ways, generate_all, write_stream_dir, Scale, StreamKind, DEFAULT_WAYS};

#[derive(Parser)]
#[command(
    name = "modcl",
    version,
    about = "Continual-learning benchmark: modular networks with task-driven path search"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Synthesize a task stream and write it to a directory.
    GenStream {
        /// Stream kind: S-, S+, Sin, Sout, Spl, Slong.
        #[arg(long)]
        kind: String,
        /// Data sizes: paper or desk.
        #[arg(long, default_value = "desk")]
        scale: String,
        #[arg(long)]
        seed: u64,
        /// Classes per task.
        #[arg(long, default_value_t = DEFAULT_WAYS)]
        ways: usize,
        /// Output directory for the manifest and per-task CSV files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run one experiment from a JSON configuration file.
    Run {
        /// Path to the configuration file.
        #[arg(long)]
        config: PathBuf,
    },
    /// Merge finished runs into a comparison table and chart.
    Report {
        /// Directory receiving report.csv and chart.svg.
        #[arg(long)]
        out: PathBuf,
        /// Run directories to compare (each holds a summary.json).
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
}

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

fn fail(code: u8, err: &Error) -> ExitCode {
    eprintln!("modcl: {err}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    match Cli::parse().cmd {
        Cmd::GenStream { kind, scale, seed, ways, out } => {
            let kind = match StreamKind::parse(&kind) {
                Ok(k) => k,
                Err(e) => return fail(EXIT_CONFIG, &e),
            };
            let scale = match Scale::parse(&scale) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_CONFIG, &e),
            };
            let stream = match build_stream_with_ways(kind, scale, seed, ways) {
                Ok(s) => s,
                Err(e) => return fail(EXIT_CONFIG, &e),
            };
            let datasets = generate_all(&stream);
            if let Err(e) = write_stream_dir(&out, &stream, &datasets) {
                return fail(EXIT_RUNTIME, &e);
            }
            println!(
                "wrote {} tasks ({}, {:?}, seed {}) to {}",
                stream.tasks.len(),
                kind.token(),
                scale,
                seed,
                out.display()
            );
            ExitCode::SUCCESS
        }
        Cmd::Run { config } => {
            let text = match std::fs::read_to_string(&config) {
                Ok(t) => t,
                Err(e) => return fail(EXIT_CONFIG, &Error::Io(e)),
            };
            let cfg = match ExperimentConfig::from_json(&text) {
                Ok(c) => c,
                Err(e) => return fail(EXIT_CONFIG, &e),
            };
            // Validate up front so every problem is reported before any work.
            if let Err(e) = cfg.resolve() {
                return fail(EXIT_CONFIG, &e);
            }
            match run_experiment(&cfg) {
                Ok(report) => {
                    let s = &report.summary;
                    println!(
                        "{} on {} ({} tasks): accuracy {:.4}, forgetting {:.4}, written to {}",
                        s.learner,
                        s.stream,
                        s.tasks,
                        s.avg_accuracy,
                        s.forgetting,
                        report.out_dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => fail(EXIT_RUNTIME, &e),
            }
        }
        Cmd::Report { out, runs } => match write_report(&out, &runs) {
            Ok(artifacts) => {
                println!(
                    "compared {} runs: {} and {}",
                    artifacts.rows.len(),
                    artifacts.csv_path.display(),
                    artifacts.svg_path.display()
                );
                ExitCode::SUCCESS
            }
            Err(e) => fail(EXIT_RUNTIME, &e),
        },
    }
}
