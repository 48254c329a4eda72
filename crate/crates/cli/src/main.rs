use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use histfit::benchdata::{generate, write_histogram_file, DatasetSpec, Family};
use histfit::harness::{
    emit_table, parse_csv, render_markdown, run, uncertainty_demo, ExperimentConfig, HarnessError, TableFormat,
};

#[derive(Parser)]
#[command(
    name = "histfit",
    version,
    about = "Private histogram measurement and nonnegative fitting experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic benchmark histogram as CSV.
    GenData {
        #[arg(long)]
        family: String,
        #[arg(long, default_value_t = 0)]
        k: u32,
        #[arg(long, default_value_t = 1)]
        dims: u8,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a Monte-Carlo experiment described by a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value = "csv")]
        format: TableFormat,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Per-cell versus total error on the difficult dataset.
    DemoUncertainty {
        #[arg(long, default_value_t = 100)]
        d: usize,
        #[arg(long, default_value_t = 1.0)]
        eps: f64,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Render a results CSV as markdown tables.
    Report {
        #[arg(long)]
        results: PathBuf,
        #[arg(long, default_value = "md")]
        format: TableFormat,
    },
}

enum Failure {
    Config(String),
    Io(String),
    Unconverged(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_io() {
            Failure::Io(e.to_string())
        } else {
            Failure::Config(e.to_string())
        }
    }
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn execute(cmd: Command) -> Result<(), Failure> {
    match cmd {
        Command::GenData { family, k, dims, out } => {
            let family = Family::from_name(&family, k).map_err(|e| Failure::Config(e.to_string()))?;
            let h = generate(&DatasetSpec::new(family, dims)).map_err(|e| Failure::Config(e.to_string()))?;
            write_histogram_file(&out, &h).map_err(|e| Failure::Io(e.to_string()))
        }
        Command::Run {
            config,
            out,
            format,
            threads,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let report = run(&cfg, threads)?;
            write(&out, &emit_table(&report, format))?;
            let failed = report.failed_algorithms();
            if failed.is_empty() {
                Ok(())
            } else {
                let names: Vec<String> = failed.iter().map(|a| a.to_string()).collect();
                Err(Failure::Unconverged(format!(
                    "no usable trial for: {}",
                    names.join(", ")
                )))
            }
        }
        Command::DemoUncertainty { d, eps, trials, seed } => {
            print!("{}", uncertainty_demo(d, eps, trials, seed)?.render());
            Ok(())
        }
        Command::Report { results, format } => {
            let text =
                std::fs::read_to_string(&results).map_err(|e| Failure::Io(format!("{}: {e}", results.display())))?;
            let rows = parse_csv(&text)?;
            match format {
                TableFormat::Md => print!("{}", render_markdown(&rows)),
                TableFormat::Csv => print!("{text}"),
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Io(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Unconverged(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}
