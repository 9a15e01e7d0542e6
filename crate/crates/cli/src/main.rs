use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kdlab::experiment::{cmd_compare, cmd_gen_data, cmd_run, ExperimentConfig, TEACHER_ROW};
use kdlab::Error;

/// Teacher-student distillation experiments on synthetic fundus-like images.
#[derive(Debug, Parser)]
#[command(name = "kdlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate target, source and unlabeled dataset files.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train the teacher and every configured preset under k-fold CV.
    Run {
        #[command(flatten)]
        common: Common,
        /// Directory holding the dataset files (defaults to --out).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Number of folds trained concurrently.
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Merge run directories into summary.csv and summary.txt.
    Compare {
        /// Run directories produced by `run`.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Key-value config file; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config's base seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl Common {
    fn load(&self) -> kdlab::Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Config(_) => 2,
        Error::Io { .. } => 3,
        Error::BadMagic { .. }
        | Error::UnsupportedVersion { .. }
        | Error::Truncated(_)
        | Error::Checksum { .. }
        | Error::SpecMismatch(_) => 4,
        _ => 1,
    }
}

fn execute(cli: Cli) -> kdlab::Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = common.load()?;
            for (name, sum) in cmd_gen_data(&cfg, &common.out)? {
                println!("{name} {sum:016x}");
            }
        }
        Command::Run { common, data, workers } => {
            let mut cfg = common.load()?;
            if let Some(w) = workers {
                cfg.workers = w;
            }
            let data = data.unwrap_or_else(|| common.out.clone());
            let report = cmd_run(&cfg, &data, &common.out)?;
            let rows = std::iter::once(TEACHER_ROW.to_string()).chain(cfg.presets.iter().map(|p| p.name().into()));
            for name in rows {
                if let Some((acc, auc)) = report.mean(&name) {
                    println!("{name:<16} accuracy {:6.2}%  auc {:6.2}%", acc * 100.0, auc * 100.0);
                }
            }
        }
        Command::Compare { runs, out } => {
            let cmp = cmd_compare(&runs, &out)?;
            print!("{}", cmp.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            match &err {
                Error::Config(problems) => {
                    eprintln!("error: invalid configuration");
                    for p in problems {
                        eprintln!("  {p}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(exit_code(&err))
        }
    }
}
