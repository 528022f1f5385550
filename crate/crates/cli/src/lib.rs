//! Experiment orchestration for `burgers-lab`: configuration, checks and reports.

use std::path::{Path, PathBuf};

use serde::Serialize;
use thiserror::Error;

pub mod checks;
pub mod config;
pub mod counterexample;

pub use config::{parse_args, ExperimentConfig};

pub const COMMANDS: &[&str] = &[
    "counterexample",
    "varadhan",
    "laplace",
    "rh-shock",
    "periodic-orbits",
    "sync",
    "bounds",
    "value-gradient",
    "viscous-solve",
    "inviscid-solve",
    "periodic-find",
];

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("{stage}: {source}")]
    Numeric {
        stage: &'static str,
        #[source]
        source: burgers_core::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 3,
        }
    }
}

/// Attach a stage name to core errors.
pub(crate) trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError>;
}

impl<T> Stage<T> for burgers_core::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Numeric { stage, source })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Pass,
    Fail,
    /// The check ran but its hypotheses did not hold, so nothing was asserted.
    Informative,
}

impl Status {
    pub fn from_bool(ok: bool) -> Self {
        if ok {
            Status::Pass
        } else {
            Status::Fail
        }
    }

    pub fn exit_code(self) -> i32 {
        match self {
            Status::Pass => 0,
            Status::Fail | Status::Informative => 1,
        }
    }
}

/// A CSV file produced by a check.
#[derive(Debug, Clone)]
pub struct Artifact {
    pub name: String,
    pub bytes: Vec<u8>,
}

#[derive(Debug, Clone)]
pub struct Outcome {
    pub command: String,
    pub status: Status,
    pub result: serde_json::Value,
    pub artifacts: Vec<Artifact>,
}

#[derive(Serialize)]
struct Header {
    timestamp_unix: u64,
}

#[derive(Serialize)]
struct Report<'a> {
    header: Header,
    command: &'a str,
    status: Status,
    config: &'a ExperimentConfig,
    result: &'a serde_json::Value,
}

/// Run a command by name.
pub fn run_named_check(name: &str, cfg: &ExperimentConfig) -> Result<Outcome, CliError> {
    let (status, result, artifacts) = match name {
        "counterexample" => {
            let r = counterexample::run_counterexample(cfg)?;
            let status = r.status;
            (status, serde_json::to_value(&r)?, r.artifacts()?)
        }
        "varadhan" => checks::varadhan(cfg)?,
        "laplace" => checks::laplace(cfg)?,
        "rh-shock" => checks::rh_shock(cfg)?,
        "periodic-orbits" => checks::periodic_orbits(cfg)?,
        "sync" => checks::sync(cfg)?,
        "bounds" => checks::bounds(cfg)?,
        "value-gradient" => checks::value_gradient(cfg)?,
        "viscous-solve" => checks::viscous_solve(cfg)?,
        "inviscid-solve" => checks::inviscid_solve(cfg)?,
        "periodic-find" => checks::periodic_find(cfg)?,
        other => {
            return Err(CliError::Usage(format!(
                "unknown command '{other}'; expected one of {}",
                COMMANDS.join(", ")
            )))
        }
    };
    Ok(Outcome {
        command: name.to_string(),
        status,
        result,
        artifacts,
    })
}

/// JSON report body; `timestamp_unix` is the only field that varies between identical runs.
pub fn report_json(outcome: &Outcome, cfg: &ExperimentConfig, timestamp_unix: u64) -> Result<String, CliError> {
    let report = Report {
        header: Header { timestamp_unix },
        command: &outcome.command,
        status: outcome.status,
        config: cfg,
        result: &outcome.result,
    };
    Ok(serde_json::to_string_pretty(&report)? + "\n")
}

/// Write `<command>.json` and the CSV artifacts under `dir`.
pub fn write_outcome(outcome: &Outcome, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>, CliError> {
    std::fs::create_dir_all(dir)?;
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut written = Vec::new();
    let json = dir.join(format!("{}.json", outcome.command));
    std::fs::write(&json, report_json(outcome, cfg, stamp)?)?;
    written.push(json);
    for a in &outcome.artifacts {
        let p = dir.join(format!("{}_{}.csv", outcome.command, a.name));
        std::fs::write(&p, &a.bytes)?;
        written.push(p);
    }
    Ok(written)
}

/// Full command-line entry point; returns the process exit status.
pub fn run(args: &[String]) -> i32 {
    let cfg = match parse_args(args) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            eprintln!("usage: burgers-lab <command> [--config FILE] [--key value ...]");
            eprintln!("commands: {}", COMMANDS.join(", "));
            return e.exit_code();
        }
    };
    let outcome = match run_named_check(&cfg.command, &cfg) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{e}");
            return e.exit_code();
        }
    };
    match write_outcome(&outcome, &cfg, &cfg.out) {
        Ok(paths) => {
            for p in paths {
                println!("{}", p.display());
            }
            println!("status: {:?}", outcome.status);
            outcome.status.exit_code()
        }
        Err(e) => {
            eprintln!("{e}");
            e.exit_code()
        }
    }
}
