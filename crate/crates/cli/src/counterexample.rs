//! The end-to-end comparison between the surviving Euler–Lagrange trajectory
//! of the inviscid periodic solution and the action minimizer at the same endpoint.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use burgers_core::action::{action_eval, minimize_action_warm, PiecewisePath};
use burgers_core::field::{InitialCost, PeriodicField, Potential, SpatialGrid, Trajectory};
use burgers_core::inviscid::{attractor_classification, backward_flow, Branch};
use burgers_core::io::{write_fields, write_trajectory};
use burgers_core::lagrangian::{integrate_el, PhasePoint, DEFAULT_DT};
use burgers_core::periodic::{inviscid_periodic, potential_of};
use serde::Serialize;

use crate::{Artifact, CliError, ExperimentConfig, Stage, Status};

/// Where the backward flows of the periodic solution actually settle.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MeasuredOrbit {
    /// Position at `t = 0` modulo 2π.
    pub q: f64,
    /// `u(0, q)`.
    pub p: f64,
    /// Forward advance per period in units of 2π.
    pub winding: i64,
}

/// The boundary-slope hypothesis under which the comparison path is admissible.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct Hypothesis {
    pub point: f64,
    pub phi_slope: f64,
    pub required: f64,
    pub tolerance: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct PeriodRow {
    pub n: usize,
    pub t: f64,
    pub surviving_action: f64,
    pub surviving_el_residual: f64,
    pub comparison_action: f64,
    pub comparison_el_residual: f64,
    pub minimizer_action: f64,
    pub minimizer_el_residual: f64,
    /// Surviving minus minimizer action.
    pub gap: f64,
    /// Surviving minus comparison action.
    pub comparison_gap: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CounterexampleReport {
    pub relaxation_residual: f64,
    pub branch: Branch,
    /// Largest late-time distance of the backward flows from the reported branch.
    pub branch_deviation: f64,
    /// `(0, 0)` for TypeA, `(π, −2)` for TypeB.
    pub reference_point: PhasePoint,
    pub measured_orbit: MeasuredOrbit,
    pub hypothesis: Hypothesis,
    pub rows: Vec<PeriodRow>,
    /// Least-squares slope of the comparison gap against `n`.
    pub comparison_gap_slope: f64,
    pub margin: f64,
    pub verdict: bool,
    pub status: Status,
    #[serde(skip)]
    pub u0: PeriodicField,
    #[serde(skip)]
    pub phi: PeriodicField,
    #[serde(skip)]
    pub surviving_first: Trajectory,
    #[serde(skip)]
    pub minimizer_first: PiecewisePath,
}

impl CounterexampleReport {
    pub fn artifacts(&self) -> Result<Vec<Artifact>, CliError> {
        let mut fields = Vec::new();
        write_fields(&mut fields, &[("u0", &self.u0), ("phi", &self.phi)]).stage("csv")?;
        let mut surv = Vec::new();
        write_trajectory(&mut surv, &self.surviving_first).stage("csv")?;
        let mut min = Vec::new();
        write_trajectory(&mut min, &self.minimizer_first.to_trajectory(8).stage("csv")?).stage("csv")?;
        Ok(vec![
            Artifact { name: "fields".into(), bytes: fields },
            Artifact { name: "surviving".into(), bytes: surv },
            Artifact { name: "minimizer".into(), bytes: min },
        ])
    }
}

pub(crate) fn start_field(cfg: &ExperimentConfig, grid: SpatialGrid) -> PeriodicField {
    match cfg.start.as_str() {
        "sin" => PeriodicField::from_fn(grid, f64::sin),
        _ => PeriodicField::zeros(grid),
    }
}

fn measure_orbit(run: &burgers_core::inviscid::InviscidRun, horizon: f64) -> Result<MeasuredOrbit, CliError> {
    let periods = (horizon / TAU).floor().max(2.0) as usize;
    let z = backward_flow(run, 0.0, 0.0, periods as f64 * TAU).stage("backward_flow")?;
    let per = (z.len() - 1) / periods;
    let q = z.positions();
    let last = q[periods * per];
    let prev = q[(periods - 1) * per];
    let qm = last.rem_euclid(TAU);
    Ok(MeasuredOrbit {
        q: qm,
        p: run.sample(0.0, qm),
        winding: ((prev - last) / TAU).round() as i64,
    })
}

fn comparison_path(branch: Branch, t: f64) -> Result<Trajectory, CliError> {
    let samples = ((t / DEFAULT_DT).ceil() as usize).max(8);
    let times: Vec<f64> = (0..=samples).map(|k| t * k as f64 / samples as f64).collect();
    let (q, v): (Vec<f64>, Vec<f64>) = match branch {
        Branch::TypeA => times.iter().map(|_| (0.0, 0.0)).unzip(),
        Branch::TypeB => times
            .iter()
            .map(|&s| if s <= FRAC_PI_2 { (PI - 2.0 * s, -2.0) } else { (0.0, 0.0) })
            .unzip(),
    };
    Trajectory::new(times, q, v).stage("comparison_path")
}

fn slope_fit(ns: &[f64], ys: &[f64]) -> f64 {
    let m = ns.len() as f64;
    if ns.len() < 2 {
        return f64::NAN;
    }
    let (mx, my) = (ns.iter().sum::<f64>() / m, ys.iter().sum::<f64>() / m);
    let sxy: f64 = ns.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = ns.iter().map(|x| (x - mx) * (x - mx)).sum();
    sxy / sxx
}

pub fn run_counterexample(cfg: &ExperimentConfig) -> Result<CounterexampleReport, CliError> {
    let grid = SpatialGrid::new(cfg.grid).stage("grid")?;
    let pot = Potential::by_name(&cfg.potential).stage("potential")?;
    let sol = inviscid_periodic(grid, &pot, cfg.relax_periods, &start_field(cfg, grid)).stage("inviscid_periodic")?;
    let u0 = sol.u0.clone();
    let phi_field = potential_of(&u0);
    let phi = InitialCost::from_fields(&phi_field, &u0);
    let run = sol.as_run().stage("inviscid_periodic")?;
    let class = attractor_classification(&run, cfg.samples, cfg.horizon).stage("attractor_classification")?;
    let measured_orbit = measure_orbit(&run, cfg.horizon)?;
    let (reference_point, required) = match class.branch {
        Branch::TypeA => (PhasePoint::new(0.0, 0.0), 0.0),
        Branch::TypeB => (PhasePoint::new(PI, -2.0), -2.0),
    };
    let phi_slope = phi.slope(reference_point.q);
    let hypothesis = Hypothesis {
        point: reference_point.q,
        phi_slope,
        required,
        tolerance: cfg.tol_hypothesis,
        holds: (phi_slope - required).abs() < cfg.tol_hypothesis,
    };

    let mut rows = Vec::new();
    let mut surviving_first = None;
    let mut minimizer_first = None;
    for n in 1..=cfg.periods {
        let (t, start) = match class.branch {
            Branch::TypeA => (TAU * n as f64, PhasePoint::new(-TAU * n as f64, 0.0)),
            Branch::TypeB => ((2 * n + 1) as f64 * PI, PhasePoint::new(PI, -2.0)),
        };
        let surviving = integrate_el(start, 0.0, t, DEFAULT_DT, &pot).stage("integrate_el")?;
        let s = action_eval(&surviving, &phi, &pot).stage("action_eval")?;
        let comparison = comparison_path(class.branch, t)?;
        let c = action_eval(&comparison, &phi, &pot).stage("action_eval")?;
        let x = surviving.last().1;
        let m = 1usize << cfg.level;
        let warm_q: Vec<f64> = (0..=m)
            .map(|k| comparison.position_at(t * k as f64 / m as f64))
            .collect();
        let warm = PiecewisePath::from_positions(t, cfg.level, &warm_q).stage("minimize_action")?;
        let min = minimize_action_warm(t, x, cfg.level, &phi, &pot, &[warm], cfg.restarts, cfg.seed)
            .stage("minimize_action")?;
        rows.push(PeriodRow {
            n,
            t,
            surviving_action: s.value,
            surviving_el_residual: s.el_residual,
            comparison_action: c.value,
            comparison_el_residual: c.el_residual,
            minimizer_action: min.report.value,
            minimizer_el_residual: min.report.el_residual,
            gap: s.value - min.report.value,
            comparison_gap: s.value - c.value,
        });
        if n == 1 {
            surviving_first = Some(surviving);
            minimizer_first = Some(min.best);
        }
    }
    let verdict = rows.iter().all(|r| {
        r.minimizer_action + cfg.margin * (r.n as f64) < r.surviving_action && r.surviving_el_residual < cfg.tol_el
    });
    let status = if !hypothesis.holds {
        Status::Informative
    } else {
        Status::from_bool(verdict)
    };
    let ns: Vec<f64> = rows.iter().map(|r| r.n as f64).collect();
    let gaps: Vec<f64> = rows.iter().map(|r| r.comparison_gap).collect();
    Ok(CounterexampleReport {
        relaxation_residual: sol.periodicity_residual,
        branch: class.branch,
        branch_deviation: class.max_deviation,
        reference_point,
        measured_orbit,
        hypothesis,
        comparison_gap_slope: slope_fit(&ns, &gaps),
        rows,
        margin: cfg.margin,
        verdict,
        status,
        u0,
        phi: phi_field,
        surviving_first: surviving_first.expect("at least one period"),
        minimizer_first: minimizer_first.expect("at least one period"),
    })
}
