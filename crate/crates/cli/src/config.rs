//! Flat `key = value` experiment configuration.

use std::f64::consts::PI;
use std::fmt::Display;
use std::path::PathBuf;
use std::str::FromStr;

use serde::Serialize;

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub command: String,
    /// Grid points on the circle.
    pub grid: usize,
    /// Viscosities, in the order used by sweeps.
    pub eps: Vec<f64>,
    /// Time horizon of a single solve or minimization.
    pub t: f64,
    /// Evaluation point.
    pub x: f64,
    /// Path-space level for minimization (`2^level` segments).
    pub level: u32,
    /// Levels compared by the Varadhan check.
    pub levels: Vec<u32>,
    pub restarts: usize,
    pub seed: u64,
    /// `forced` or `zero`.
    pub potential: String,
    /// Initial cost: `zero`, `one-minus-cos` or `periodic`.
    pub phi: String,
    /// Start field of the inviscid relaxation: `zero` or `sin`.
    pub start: String,
    pub relax_periods: usize,
    /// Periods compared by the counterexample pipeline.
    pub periods: usize,
    /// Backward-flow samples for the attractor classification.
    pub samples: usize,
    /// Backward-flow horizon.
    pub horizon: f64,
    /// Verdict margin per period.
    pub margin: f64,
    pub cfl: f64,
    /// Step of the linear viscous solver.
    pub dt: f64,
    pub mc_paths: usize,
    pub q_seeds: usize,
    pub p_seeds: usize,
    /// Spacing of the value-gradient central difference.
    pub dx: f64,
    /// Random pairs in the log-stability check.
    pub pairs: usize,
    pub tol_el: f64,
    pub tol_hypothesis: f64,
    pub tol_fixed_point: f64,
    pub tol_varadhan: f64,
    pub tol_sync: f64,
    pub tol_class: f64,
    pub tol_gradient: f64,
    pub out: PathBuf,
}

impl ExperimentConfig {
    /// Defaults, with per-command adjustments.
    pub fn new(command: &str) -> Self {
        let mut cfg = Self::base(command);
        match command {
            "laplace" => {
                cfg.level = 2;
                cfg.eps = vec![0.4, 0.2, 0.1];
            }
            "periodic-find" | "bounds" => cfg.eps = vec![0.5, 0.2],
            "inviscid-solve" => cfg.start = "sin".into(),
            _ => {}
        }
        cfg
    }

    fn base(command: &str) -> Self {
        Self {
            command: command.to_string(),
            grid: 256,
            eps: vec![0.4, 0.2, 0.1, 0.05],
            t: 1.0,
            x: 1.0,
            level: 8,
            levels: vec![8],
            restarts: 16,
            seed: 1,
            potential: "forced".into(),
            phi: "one-minus-cos".into(),
            start: "zero".into(),
            relax_periods: 50,
            periods: 3,
            samples: 32,
            horizon: 40.0 * PI,
            margin: 1.0,
            cfl: 0.9,
            dt: 1e-2,
            mc_paths: 200_000,
            q_seeds: 64,
            p_seeds: 64,
            dx: 1e-3,
            pairs: 10,
            tol_el: 1e-3,
            tol_hypothesis: 0.05,
            tol_fixed_point: 1e-6,
            tol_varadhan: 0.1,
            tol_sync: 1e-3,
            tol_class: 1e-2,
            tol_gradient: 1e-3,
            out: PathBuf::from("out"),
        }
    }

    /// Apply `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (no, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Usage(format!("line {}: expected key = value", no + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let key = key.replace('-', "_");
        match key.as_str() {
            "grid" => self.grid = parse(&key, value)?,
            "eps" => self.eps = parse_list(&key, value, parse_real)?,
            "t" => self.t = parse_real(&key, value)?,
            "x" => self.x = parse_real(&key, value)?,
            "level" => self.level = parse(&key, value)?,
            "levels" => self.levels = parse_list(&key, value, parse)?,
            "restarts" => self.restarts = parse(&key, value)?,
            "seed" => self.seed = parse(&key, value)?,
            "potential" => self.potential = value.to_string(),
            "phi" => self.phi = value.to_string(),
            "start" => self.start = value.to_string(),
            "relax_periods" => self.relax_periods = parse(&key, value)?,
            "periods" => self.periods = parse(&key, value)?,
            "samples" => self.samples = parse(&key, value)?,
            "horizon" => self.horizon = parse_real(&key, value)?,
            "margin" => self.margin = parse_real(&key, value)?,
            "cfl" => self.cfl = parse_real(&key, value)?,
            "dt" => self.dt = parse_real(&key, value)?,
            "mc_paths" => self.mc_paths = parse(&key, value)?,
            "q_seeds" => self.q_seeds = parse(&key, value)?,
            "p_seeds" => self.p_seeds = parse(&key, value)?,
            "dx" => self.dx = parse_real(&key, value)?,
            "pairs" => self.pairs = parse(&key, value)?,
            "tol_el" => self.tol_el = parse_real(&key, value)?,
            "tol_hypothesis" => self.tol_hypothesis = parse_real(&key, value)?,
            "tol_fixed_point" => self.tol_fixed_point = parse_real(&key, value)?,
            "tol_varadhan" => self.tol_varadhan = parse_real(&key, value)?,
            "tol_sync" => self.tol_sync = parse_real(&key, value)?,
            "tol_class" => self.tol_class = parse_real(&key, value)?,
            "tol_gradient" => self.tol_gradient = parse_real(&key, value)?,
            "out" => self.out = PathBuf::from(value),
            _ => return Err(CliError::Usage(format!("unknown key '{key}'"))),
        }
        Ok(())
    }

    /// Range checks on every field.
    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |what: &str| Err(CliError::Usage(what.to_string()));
        if !(8..=4096).contains(&self.grid) {
            return bad("grid must lie in [8, 4096]");
        }
        if self.eps.is_empty() || self.eps.iter().any(|e| !(0.05..=1.0).contains(e)) {
            return bad("eps values must lie in [0.05, 1]");
        }
        if !(self.t > 0.0 && self.t <= 1000.0) {
            return bad("t must lie in (0, 1000]");
        }
        if !self.x.is_finite() {
            return bad("x must be finite");
        }
        if self.level > 12 || self.levels.is_empty() || self.levels.iter().any(|l| *l > 12) {
            return bad("levels must lie in [0, 12]");
        }
        if !(1..=1024).contains(&self.restarts) {
            return bad("restarts must lie in [1, 1024]");
        }
        if !matches!(self.potential.as_str(), "forced" | "zero") {
            return bad("potential must be 'forced' or 'zero'");
        }
        if !matches!(self.phi.as_str(), "zero" | "one-minus-cos" | "periodic") {
            return bad("phi must be 'zero', 'one-minus-cos' or 'periodic'");
        }
        if !matches!(self.start.as_str(), "zero" | "sin") {
            return bad("start must be 'zero' or 'sin'");
        }
        if !(1..=10_000).contains(&self.relax_periods) {
            return bad("relax_periods must lie in [1, 10000]");
        }
        if !(1..=20).contains(&self.periods) {
            return bad("periods must lie in [1, 20]");
        }
        if !(1..=4096).contains(&self.samples) {
            return bad("samples must lie in [1, 4096]");
        }
        if !(self.horizon >= 2.0 * PI && self.horizon <= 1e4) {
            return bad("horizon must lie in [2π, 10000]");
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return bad("margin must be nonnegative");
        }
        if !(self.cfl > 0.0 && self.cfl < 1.0) {
            return bad("cfl must lie in (0, 1)");
        }
        if !(self.dt > 0.0 && self.dt <= 0.5) {
            return bad("dt must lie in (0, 0.5]");
        }
        if !(1..=100_000_000).contains(&self.mc_paths) {
            return bad("mc_paths must lie in [1, 1e8]");
        }
        if !(2..=1024).contains(&self.q_seeds) || !(2..=1024).contains(&self.p_seeds) {
            return bad("q_seeds and p_seeds must lie in [2, 1024]");
        }
        if !(self.dx > 0.0 && self.dx < 0.5) {
            return bad("dx must lie in (0, 0.5)");
        }
        if !(1..=1000).contains(&self.pairs) {
            return bad("pairs must lie in [1, 1000]");
        }
        let tols = [
            self.tol_el,
            self.tol_hypothesis,
            self.tol_fixed_point,
            self.tol_varadhan,
            self.tol_sync,
            self.tol_class,
            self.tol_gradient,
        ];
        if tols.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError>
where
    T::Err: Display,
{
    value
        .parse()
        .map_err(|e| CliError::Usage(format!("{key}: cannot parse '{value}': {e}")))
}

/// A real, optionally written as a multiple of π (`40pi`, `pi`).
fn parse_real(key: &str, value: &str) -> Result<f64, CliError> {
    let v = value.trim();
    if let Some(head) = v.strip_suffix("pi") {
        let head = head.trim().trim_end_matches('*');
        let k = if head.is_empty() { 1.0 } else { parse::<f64>(key, head)? };
        return Ok(k * PI);
    }
    parse(key, v)
}

fn parse_list<T>(
    key: &str,
    value: &str,
    item: impl Fn(&str, &str) -> Result<T, CliError>,
) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| item(key, s))
        .collect()
}

/// `<command> [--config FILE] [--key value | --key=value ...]`.
pub fn parse_args(args: &[String]) -> Result<ExperimentConfig, CliError> {
    let Some(command) = args.first() else {
        return Err(CliError::Usage("missing command".into()));
    };
    if command.starts_with("--") {
        return Err(CliError::Usage("the command comes first".into()));
    }
    let mut file = None;
    let mut overrides = Vec::new();
    let mut rest = args[1..].iter();
    while let Some(arg) = rest.next() {
        let Some(flag) = arg.strip_prefix("--") else {
            return Err(CliError::Usage(format!("unexpected argument '{arg}'")));
        };
        let (key, value) = match flag.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = rest
                    .next()
                    .ok_or_else(|| CliError::Usage(format!("--{flag} needs a value")))?;
                (flag.to_string(), v.clone())
            }
        };
        if key == "config" {
            file = Some(value);
        } else {
            overrides.push((key, value));
        }
    }
    let mut cfg = ExperimentConfig::new(command);
    if let Some(path) = file {
        let text = std::fs::read_to_string(&path)
            .map_err(|e| CliError::Usage(format!("cannot read config {path}: {e}")))?;
        cfg.apply_text(&text)?;
    }
    for (k, v) in overrides {
        cfg.set(&k, &v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}
