use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use tee_core::pipeline::ExperimentConfig;
use tee_core::selftest::run_selftest;
use tee_lab::config_file::emit_config;
use tee_lab::report_io::{deltas_csv, emit_csv, emit_json};
use tee_lab::run_dir::{self, load_config, write_text, RunDir};
use tee_lab::{LabError, LabResult};

#[derive(Parser)]
#[command(name = "tee-lab", version, about = "False-friend mixture-of-experts testbed")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the benchmark and write it with a config snapshot.
    Synth {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline into a run directory.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Recompute all metrics from a run's decision log and compare with its report.
    Eval {
        #[arg(long)]
        run: PathBuf,
    },
    /// Emit a run's report as JSON (stdout or --out file) or CSV tables (directory).
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, value_enum, default_value = "json")]
        format: Format,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-metric deltas (b - a) between two runs on the same benchmark.
    Ab {
        #[arg(long = "run-a")]
        run_a: PathBuf,
        #[arg(long = "run-b")]
        run_b: PathBuf,
    },
    /// Run the numeric invariant suite.
    Selftest {
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Print the default config file.
    DefaultConfig,
}

fn report(run: &Path, format: Format, out: Option<PathBuf>) -> LabResult<()> {
    let metrics = RunDir::new(run).metrics()?;
    match format {
        Format::Json => {
            let text = emit_json(&metrics);
            match out {
                Some(p) => write_text(&p, &text)?,
                None => print!("{text}"),
            }
        }
        Format::Csv => {
            let dir = out.unwrap_or_else(|| run.join("csv"));
            std::fs::create_dir_all(&dir).map_err(|e| LabError::io(&dir, e))?;
            for (name, text) in emit_csv(&metrics) {
                let p = dir.join(name);
                write_text(&p, &text)?;
                println!("{}", p.display());
            }
        }
    }
    Ok(())
}

fn execute(cmd: Command) -> LabResult<bool> {
    match cmd {
        Command::Synth { config, out } => {
            let cfg = load_config(&config)?;
            let ds = run_dir::synth(&cfg, &out)?;
            let sizes: Vec<usize> = ds.splits.iter().map(Vec::len).collect();
            println!("benchmark {} (train {}, val {}, test {})", ds.benchmark_hash, sizes[0], sizes[1], sizes[2]);
        }
        Command::Run { config, out } => {
            let cfg = load_config(&config)?;
            let result = run_dir::run(&cfg, &out)?;
            println!(
                "run complete: {} queries, benchmark {}, config {}",
                result.log.len(),
                result.report.meta.benchmark_hash,
                result.report.meta.config_hash
            );
        }
        Command::Eval { run } => {
            let replay = run_dir::eval(&run)?;
            println!("replay ok: {} queries, all metrics identical", replay.queries);
        }
        Command::Report { run, format, out } => report(&run, format, out)?,
        Command::Ab { run_a, run_b } => print!("{}", deltas_csv(&run_dir::ab(&run_a, &run_b)?)),
        Command::Selftest { config } => {
            let cfg = match config {
                Some(p) => load_config(&p)?,
                None => ExperimentConfig::default(),
            };
            let checks = run_selftest(&cfg)?;
            for c in &checks {
                println!("{} {} ({})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
            }
            return Ok(checks.iter().all(|c| c.passed));
        }
        Command::DefaultConfig => print!("{}", emit_config(&ExperimentConfig::default())),
    }
    Ok(true)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match execute(cli.command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
