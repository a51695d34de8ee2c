use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use scmm::config::RunConfig;
use scmm::experiments::{self, ExperimentKind};
use scmm::Error;

#[derive(Parser, Debug)]
#[command(
    name = "scmm",
    version,
    about = "Switched-capacitor matrix multiplier simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment and write report.json plus CSV artifacts.
    Run {
        /// Experiment name; falls back to `experiment` in the config file.
        experiment: Option<String>,
        #[command(flatten)]
        overrides: Overrides,
        /// Output directory [default: out/<experiment>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// List experiment names with one-line descriptions.
    ListExperiments,
    /// Print the fully resolved configuration as TOML.
    PrintConfig {
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Args, Debug)]
struct Overrides {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads for Monte Carlo and per-row parallelism.
    #[arg(long)]
    threads: Option<usize>,
    /// Matched-filter SNR points in dB, comma separated.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    snr_db: Option<Vec<f64>>,
    /// Matched-filter trials per SNR point.
    #[arg(long)]
    trials: Option<usize>,
    /// Monte Carlo trials for noise statistics.
    #[arg(long)]
    noise_trials: Option<usize>,
    /// Disable kT/C noise injection.
    #[arg(long)]
    no_noise: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig, Failure> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::load(path).map_err(Failure::config)?,
            None => RunConfig::default(),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.threads {
            cfg.threads = Some(t);
        }
        if let Some(list) = &self.snr_db {
            cfg.matched_filter.snr_db = list.clone();
        }
        if let Some(t) = self.trials {
            cfg.matched_filter.trials = t;
        }
        if let Some(t) = self.noise_trials {
            cfg.noise.trials = t;
        }
        if self.no_noise {
            cfg.noise.enabled = false;
        }
        cfg.validate().map_err(Failure::config)?;
        Ok(cfg)
    }
}

struct Failure {
    code: u8,
    record: serde_json::Value,
}

impl Failure {
    fn config(e: Error) -> Self {
        let path = match &e {
            Error::Io { path, .. } | Error::MalformedFile { path, .. } => Some(path.clone()),
            _ => None,
        };
        Failure {
            code: 2,
            record: json!({ "kind": "config", "message": e.to_string(), "path": path }),
        }
    }

    fn experiment(name: &str, e: Error) -> Self {
        if matches!(e, Error::InvalidConfig(_)) {
            return Failure {
                code: 2,
                record: json!({ "kind": "config", "experiment": name, "message": e.to_string() }),
            };
        }
        Failure {
            code: 1,
            record: json!({ "kind": "experiment", "experiment": name, "message": e.to_string() }),
        }
    }

    fn usage(message: String) -> Self {
        Failure {
            code: 2,
            record: json!({ "kind": "usage", "message": message }),
        }
    }
}

fn run(experiment: Option<&str>, overrides: &Overrides, out: Option<&Path>) -> Result<(), Failure> {
    let mut cfg = overrides.resolve()?;
    let name = experiment
        .map(str::to_string)
        .or_else(|| cfg.experiment.clone())
        .ok_or_else(|| {
            Failure::usage(format!(
                "no experiment given; valid names: {}",
                ExperimentKind::names().join(", ")
            ))
        })?;
    let kind: ExperimentKind =
        name.parse()
            .map_err(|e: experiments::UnknownExperiment| Failure {
                code: 2,
                record: json!({
                    "kind": "unknown_experiment",
                    "message": e.to_string(),
                    "valid": ExperimentKind::names(),
                }),
            })?;
    cfg.experiment = Some(kind.name().to_string());
    if let Some(n) = cfg.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::usage(format!("cannot start thread pool: {e}")))?;
    }
    let out_dir = out
        .map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(kind.name()));
    cfg.output_dir = Some(out_dir.clone());
    let report =
        experiments::run(kind, &cfg, &out_dir).map_err(|e| Failure::experiment(kind.name(), e))?;
    println!("{}", out_dir.join("report.json").display());
    for a in &report.artifacts {
        println!("{}", out_dir.join(a).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let f = Failure::usage(e.render().to_string().trim_end().to_string());
            eprintln!("{}", f.record);
            return ExitCode::from(f.code);
        }
    };
    let result = match &cli.command {
        Command::Run {
            experiment,
            overrides,
            out,
        } => run(experiment.as_deref(), overrides, out.as_deref()),
        Command::ListExperiments => {
            for k in ExperimentKind::ALL {
                println!("{}\t{}", k.name(), k.description());
            }
            Ok(())
        }
        Command::PrintConfig { overrides } => overrides
            .resolve()
            .map(|cfg| print!("{}", cfg.to_toml_string())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("{}", f.record);
            ExitCode::from(f.code)
        }
    }
}
