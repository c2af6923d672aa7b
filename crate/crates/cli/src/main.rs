use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ksd_core::exec::{configure_threads, Exec};
use ksd_core::harness::{
    self, ExperimentConfig, HarnessError, Method, TutorInputs, TutorKind, TutorOutputs,
};
use ksd_core::simulator::Scenario;

/// Knowledge-structure discovery experiments on simulated learners.
#[derive(Debug, Parser)]
#[command(name = "ksd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample simulators and write one dataset per simulator and scenario.
    Gen {
        #[command(flatten)]
        common: Common,
        /// Restrict to one scenario.
        #[arg(long)]
        scenario: Option<Scenario>,
    },
    /// Fit a discovery method on datasets and export relation matrices.
    Discover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        method: Method,
        #[arg(long = "dataset", required = true)]
        datasets: Vec<PathBuf>,
    },
    /// Threshold search and F1 report over matrices and their datasets.
    EvalKs {
        #[command(flatten)]
        common: Common,
        #[arg(long = "matrix", required = true)]
        matrices: Vec<PathBuf>,
        #[arg(long = "dataset", required = true)]
        datasets: Vec<PathBuf>,
    },
    /// Evaluate tutors on fresh simulated learners.
    EvalTutor {
        #[command(flatten)]
        common: Common,
        /// Tutors to run; defaults to the configured list.
        #[arg(long = "tutor")]
        tutors: Vec<TutorKind>,
        #[arg(long = "dataset", required = true)]
        datasets: Vec<PathBuf>,
        #[arg(long = "matrix")]
        matrices: Vec<PathBuf>,
        #[arg(long = "params")]
        params: Vec<PathBuf>,
        /// Also write per-learner step logs under OUT/logs.
        #[arg(long)]
        logs: bool,
    },
    /// Full pipeline: gen, discover, eval-ks, eval-tutor.
    Repro {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Flat `key = value` config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set pkt.epochs=500`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Use a single replicate seed instead of the configured list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads; 1 runs sequentially.
    #[arg(long)]
    jobs: Option<usize>,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| HarnessError::Io {
                    path: path.clone(),
                    source,
                })?;
                ExperimentConfig::parse(&text)?
            }
            None => ExperimentConfig::default(),
        };
        for o in &self.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| HarnessError::Usage(format!("--set expects KEY=VALUE, got `{o}`")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn exec(&self) -> Exec {
        match self.jobs {
            Some(1) => Exec::Sequential,
            Some(n) => {
                configure_threads(n);
                Exec::default()
            }
            None => Exec::default(),
        }
    }
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Gen { common, scenario } => {
            let mut cfg = common.config()?;
            if let Some(s) = scenario {
                cfg.scenarios = vec![s];
            }
            for g in harness::generate(&cfg, &common.out, common.exec())? {
                println!("{}", g.path.display());
            }
        }
        Command::Discover {
            common,
            method,
            datasets,
        } => {
            let cfg = common.config()?;
            for a in harness::discover(&datasets, method, &cfg.pkt, &common.out, common.exec())? {
                println!("{}", a.matrix_path.display());
            }
        }
        Command::EvalKs {
            common,
            matrices,
            datasets,
        } => {
            let report = common.out.join("ks_report.csv");
            let rows = harness::eval_ks(&matrices, &datasets, Some(&report))?;
            print!("{}", harness::ks_report(&rows));
        }
        Command::EvalTutor {
            common,
            tutors,
            datasets,
            matrices,
            params,
            logs,
        } => {
            let mut cfg = common.config()?;
            if !tutors.is_empty() {
                cfg.tutors = tutors;
            }
            let out: &Path = &common.out;
            let (report, steps, log_dir) = (
                out.join("tutor_report.csv"),
                out.join("tutor_steps.csv"),
                out.join("logs"),
            );
            let inputs = TutorInputs {
                datasets,
                matrices,
                params,
            };
            let outputs = TutorOutputs {
                report: Some(&report),
                steps: Some(&steps),
                learner_logs: logs.then_some(log_dir.as_path()),
            };
            let rows = harness::eval_tutor(&cfg, &inputs, outputs, common.exec())?;
            print!("{}", harness::tutor_report(&rows));
        }
        Command::Repro { common } => {
            let cfg = common.config()?;
            let outcome = harness::repro(&cfg, &common.out, common.exec())?;
            print!("{}", harness::ks_report(&outcome.ks_rows));
            print!("{}", harness::tutor_report(&outcome.tutor_rows));
            println!("config hash {}", outcome.manifest.config_hash);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
