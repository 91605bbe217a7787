//! Command-line front end.

use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::diagnose::diagnose;
use crate::error::{Error, Result};
use crate::estimators::{estimate, Dataset, Method};
use crate::experiment::{
    consistency_sweep, run_experiment, sweep_csv, write_outputs, ExperimentConfig,
};
use crate::io::{read_trajectory, write_file, write_trajectory};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "hypoest",
    version,
    about = "Simulate and estimate hypoelliptic diffusions"
)]
struct Cli {
    /// Overrides the seed in the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulates one observed trajectory.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; receives trajectory.csv and its sidecar.
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimates parameters from a trajectory CSV.
    Estimate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        method: Method,
        #[arg(long)]
        config: PathBuf,
        /// Result JSON; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs a replication study.
    Replicate {
        #[arg(long)]
        config: PathBuf,
        /// Defaults to `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Checks hypoellipticity, partials, one-step moments and det order.
    Diagnose {
        #[arg(long)]
        config: PathBuf,
    },
    /// Error table over the config's (N, Δ) grid.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// CSV output; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Failure with its exit code.
struct Failure(i32, Error);

fn usage(e: Error) -> Failure {
    Failure(EXIT_USAGE, e)
}

fn runtime(e: Error) -> Failure {
    Failure(EXIT_RUNTIME, e)
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => EXIT_OK,
        Err(Failure(code, e)) => {
            eprintln!("error: {e}");
            code
        }
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = ExperimentConfig::load(path).map_err(|e| match e {
        Error::Config { key, msg } => usage(Error::Config {
            key,
            msg: format!("{msg} (in {})", path.display()),
        }),
        other => usage(other),
    })?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn emit(out: Option<&Path>, body: &str) -> Result<()> {
    match out {
        Some(p) => write_file(p, body.as_bytes()),
        None => std::io::stdout()
            .write_all(body.as_bytes())
            .map_err(|e| Error::io("<stdout>", e)),
    }
}

fn dispatch(cli: Cli) -> std::result::Result<(), Failure> {
    let seed = cli.seed;
    match cli.command {
        Command::Simulate { config, out } => {
            let cfg = load_config(&config, seed)?;
            let model = cfg.model.build();
            let t = cfg
                .observe(model.as_ref(), cfg.fine_delta, cfg.fine_n, cfg.stride, 0)
                .map_err(runtime)?;
            let path = out.join("trajectory.csv");
            write_trajectory(&path, &t).map_err(runtime)?;
            println!("{}", path.display());
        }
        Command::Estimate {
            data,
            method,
            config,
            out,
        } => {
            let cfg = load_config(&config, seed)?;
            let t = read_trajectory(&data).map_err(usage)?;
            let model = cfg.model.build();
            let ds = Dataset::new(&t, model.as_ref()).map_err(runtime)?;
            let (theta0, sigma2_0) = cfg.start_point(model.as_ref(), 0);
            let (theta, sigma2) = cfg.truth();
            let res = estimate(
                method,
                &ds,
                &theta0,
                sigma2_0,
                &cfg.optim,
                Some((&theta, sigma2)),
            )
            .map_err(runtime)?;
            let body = serde_json::to_string_pretty(&res).map_err(|e| runtime(e.into()))? + "\n";
            emit(out.as_deref(), &body).map_err(runtime)?;
        }
        Command::Replicate { config, out } => {
            let cfg = load_config(&config, seed)?;
            let dir = out.or_else(|| cfg.output_dir.clone()).ok_or_else(|| {
                usage(Error::Config {
                    key: "output_dir".into(),
                    msg: "no --out given and no output_dir in config".into(),
                })
            })?;
            let summary = run_experiment(&cfg).map_err(runtime)?;
            write_outputs(&summary, &dir).map_err(runtime)?;
            print!("{}", crate::experiment::table_csv(&summary));
        }
        Command::Diagnose { config } => {
            let cfg = load_config(&config, seed)?;
            let report = diagnose(&cfg).map_err(runtime)?;
            let mut v = serde_json::to_value(&report).map_err(|e| runtime(e.into()))?;
            v["ok"] = report.ok().into();
            let body = serde_json::to_string_pretty(&v).map_err(|e| runtime(e.into()))? + "\n";
            emit(None, &body).map_err(runtime)?;
        }
        Command::Sweep { config, out } => {
            let cfg = load_config(&config, seed)?;
            let sweep = cfg.sweep.clone().ok_or_else(|| {
                usage(Error::Config {
                    key: "sweep".into(),
                    msg: "config has no sweep section".into(),
                })
            })?;
            let rows = consistency_sweep(&cfg, sweep.method, &sweep.grid, sweep.replications)
                .map_err(runtime)?;
            emit(out.as_deref(), &sweep_csv(&rows)).map_err(runtime)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_one() {
        assert_eq!(run(["hypoest"]), EXIT_USAGE);
        assert_eq!(run(["hypoest", "simulate", "--bogus"]), EXIT_USAGE);
        assert_eq!(
            run(["hypoest", "diagnose", "--config", "/nonexistent/cfg.json"]),
            EXIT_USAGE
        );
        assert_eq!(run(["hypoest", "--help"]), EXIT_OK);
    }

    #[test]
    fn method_names_parse() {
        let cli = Cli::try_parse_from([
            "hypoest",
            "estimate",
            "--data",
            "a.csv",
            "--method",
            "explicit-sigma",
            "--config",
            "c.json",
        ])
        .unwrap();
        assert!(matches!(
            cli.command,
            Command::Estimate {
                method: Method::ExplicitSigma,
                ..
            }
        ));
        assert!(Cli::try_parse_from([
            "hypoest", "estimate", "--data", "a.csv", "--method", "mle", "--config", "c.json",
        ])
        .is_err());
    }
}
