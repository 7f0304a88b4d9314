use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use probequot::activation::Dtype;
use probequot::config::ExperimentConfig;
use probequot::convert::{convert, Direction};
use probequot::experiments;
use probequot::ingest::{ingest_bank_and_transfer, load_inputs, write_outcome, IngestConfig};

#[derive(Parser)]
#[command(
    name = "probequot",
    version,
    about = "Affine-invariant probing and quotient-transfer experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a named experiment over a seed sweep.
    Run {
        experiment: String,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated seed list.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Experiment parameter override, `key=value` (repeatable).
        #[arg(long = "param")]
        params: Vec<String>,
        /// Exit nonzero when any acceptance envelope is violated.
        #[arg(long)]
        check: bool,
    },
    /// Zero-target-label transfer on activation files: train a bank on the
    /// source, align on paired states, score target concepts.
    IngestTransfer {
        /// Directory of `<concept>.apqt` labelled source files.
        #[arg(long)]
        source_dir: PathBuf,
        /// Directory holding `source.apqt` and `target.apqt` with paired rows.
        #[arg(long)]
        paired: PathBuf,
        /// Directory of `<concept>.apqt` labelled target evaluation files.
        #[arg(long)]
        target: PathBuf,
        /// Report CSV; a JSON summary is written next to it.
        #[arg(long)]
        out: PathBuf,
        /// JSON ingest configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Comma-separated bank concepts (default: all).
        #[arg(long, value_delimiter = ',')]
        bank: Option<Vec<String>>,
        #[arg(long)]
        gamma: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
        /// Assert that evaluation rows are disjoint from the paired rows.
        #[arg(long)]
        evaluation_disjoint: bool,
    },
    /// Convert between CSV and activation files (direction from extensions).
    /// CSV has a header row; a `label` column becomes the label block.
    Convert {
        input: PathBuf,
        output: PathBuf,
        /// Payload precision when writing an activation file.
        #[arg(long, value_enum, default_value = "f64")]
        dtype: DtypeArg,
    },
    /// List experiment names.
    List,
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum DtypeArg {
    F32,
    F64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

fn execute(cmd: Command) -> probequot::Result<ExitCode> {
    match cmd {
        Command::List => {
            for n in experiments::names() {
                println!("{n}");
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::IngestTransfer {
            source_dir,
            paired,
            target,
            out,
            config,
            bank,
            gamma,
            seed,
            evaluation_disjoint,
        } => {
            let mut cfg: IngestConfig = match config {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| probequot::HarnessError::io(&p, e))?;
                    serde_json::from_str(&text)?
                }
                None => IngestConfig::default(),
            };
            if let Some(b) = bank {
                cfg.bank = b;
            }
            if let Some(g) = gamma {
                cfg.gamma = g;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.evaluation_disjoint |= evaluation_disjoint;
            let inputs = load_inputs(&source_dir, &paired, &target)?;
            let outcome = ingest_bank_and_transfer(&inputs, &cfg)?;
            let summary = write_outcome(&out, &outcome, inputs.paired_source.nrows(), &cfg)?;
            print!("{}", outcome.report.to_csv());
            println!("k_eff: {}", outcome.k_eff);
            if let Some(r) = &outcome.report.silent_failure_rate {
                match (r.ci_low, r.ci_high) {
                    (Some(lo), Some(hi)) => println!("silent-failure rate: {:.4} [{lo:.4}, {hi:.4}]", r.value),
                    _ => println!("silent-failure rate: {:.4}", r.value),
                }
            }
            println!(
                "evaluation disjoint from paired rows: {}",
                if outcome.evaluation_disjoint {
                    "asserted by caller"
                } else {
                    "not asserted"
                }
            );
            println!("report: {}  summary: {}", out.display(), summary.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Convert { input, output, dtype } => {
            let dtype = match dtype {
                DtypeArg::F32 => Dtype::F32,
                DtypeArg::F64 => Dtype::F64,
            };
            let (dir, rows, cols) = convert(&input, &output, dtype)?;
            let what = match dir {
                Direction::CsvToActivation => "csv -> activation file",
                Direction::ActivationToCsv => "activation file -> csv",
            };
            println!("{what}: {rows}x{cols} written to {}", output.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Run {
            experiment,
            config,
            seeds,
            out,
            params,
            check,
        } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::from_json_file(p)?,
                None => ExperimentConfig::new(&experiment),
            };
            cfg.experiment = experiment;
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            for p in &params {
                cfg.apply_override(p)?;
            }
            let rep = experiments::run(&cfg)?;
            let dir = rep.write(&cfg.output_dir)?;
            print!("{}", rep.markdown);
            for c in &rep.checks {
                println!("{c}");
            }
            println!("artifacts: {}", dir.display());
            if check && !rep.all_passed() {
                return Ok(ExitCode::from(1));
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}
