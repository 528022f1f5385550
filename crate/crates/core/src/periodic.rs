//! Space-time periodic solutions.
//!
//! For `ε > 0` the periodic solution comes from the principal eigenfunction of
//! the period operator `T: U(0) ↦ U(2π)` of the linear equation. For `ε = 0` it
//! is found by letting the entropy solution relax over many periods.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::{PeriodicField, Potential, SpatialGrid};
use crate::inviscid::{solve_inviscid_on, InviscidRun, DEFAULT_CFL, DEFAULT_OUT_DT};
use crate::viscous::{build_propagator, solve_viscous, uniform_steps, PropagatorMatrix, DEFAULT_DT};

/// Periodicity floor for viscous solutions.
pub const VISCOUS_FLOOR: f64 = 1e-6;

/// Periodicity floor for inviscid solutions (finite-volume accuracy).
pub const INVISCID_FLOOR: f64 = 1e-2;

/// Half-width, in cells, of the mollifier used for weak-topology comparisons.
pub const MOLLIFIER_WIDTH: usize = 4;

/// Smallest viscosity the period operator is built for.
pub const MIN_EPS: f64 = 0.05;

/// Period operator of `U_t = (ε/2)U_xx − VU/ε` over `[0, 2π]`.
///
/// `V` includes its `x`-independent part `cos(sin t)`, which scales the
/// eigenvalue by `exp(−2πJ₀(1)/ε)` and leaves the eigenfunction unchanged.
pub fn build_period_operator(
    eps: f64,
    grid: SpatialGrid,
    pot: &Potential,
    n_steps: usize,
) -> Result<PropagatorMatrix> {
    build_propagator(pot, eps, 0.0, TAU, grid, n_steps)
}

/// Steps used by [`build_period_operator`] so that it matches `solve_viscous` at step `dt`.
pub fn period_steps(dt: f64) -> usize {
    uniform_steps(TAU, dt).0
}

/// Dominant eigenpair of a matrix with positive entries, from power iteration.
#[derive(Debug, Clone, Serialize)]
pub struct MatrixEigen {
    pub lambda: f64,
    /// Sup-normalized, so the largest component is 1.
    pub vector: Vec<f64>,
    pub iterations: usize,
    /// `‖Av − λv‖_∞ / λ`.
    pub residual: f64,
    pub history: Vec<f64>,
}

/// Power iteration with sup-normalization from `start`.
pub fn power_iteration(
    a: &DMatrix<f64>,
    start: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<MatrixEigen> {
    let n = a.nrows();
    if a.ncols() != n || start.len() != n || n == 0 {
        return Err(invalid("power iteration needs a square matrix and a matching start"));
    }
    let mut v = DVector::from_column_slice(start);
    let top = v.amax();
    if !(top > 0.0) {
        return Err(invalid("start vector must be nonzero"));
    }
    v /= top;
    let mut history = Vec::new();
    for it in 1..=max_iter {
        let w = a * &v;
        let lambda = w.amax();
        if !(lambda > 0.0) || !lambda.is_finite() {
            return Err(Error::NumericRange {
                time: 0.0,
                detail: format!("power iteration produced {lambda}"),
            });
        }
        let residual = (&w - &v * lambda).amax() / lambda;
        history.push(residual);
        v = w / lambda;
        if residual < tol {
            return Ok(MatrixEigen {
                lambda,
                vector: v.as_slice().to_vec(),
                iterations: it,
                residual,
                history,
            });
        }
    }
    Err(Error::Convergence {
        iterations: max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
        history,
    })
}

/// Principal eigenpair of a period operator.
#[derive(Debug, Clone, Serialize)]
pub struct EigenPair {
    /// Eigenvalue of the operator as built, potential constant included.
    pub lambda: f64,
    pub log_lambda: f64,
    /// Strictly positive, max 1.
    pub phi_eig: PeriodicField,
    pub iterations: usize,
    pub residual: f64,
    pub history: Vec<f64>,
}

impl EigenPair {
    /// Eigenvalue of the operator without the `cos(sin t)` part of the potential.
    pub fn log_lambda_without_constant(&self, eps: f64, pot: &Potential) -> f64 {
        if pot.is_forced() {
            self.log_lambda + TAU * bessel_j0_one() / eps
        } else {
            self.log_lambda
        }
    }
}

fn bessel_j0_one() -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..30 {
        term *= -0.25 / (k * k) as f64;
        sum += term;
    }
    sum
}

/// Power iteration on the period operator from a given positive start.
pub fn principal_eigenpair_from(
    op: &PropagatorMatrix,
    start: &PeriodicField,
    tol: f64,
    max_iter: usize,
) -> Result<EigenPair> {
    if !op.is_strictly_positive() {
        return Err(invalid("period operator is not strictly positive"));
    }
    if start.min() <= 0.0 {
        return Err(invalid("start must be strictly positive"));
    }
    let e = power_iteration(&op.value_map(), start.values(), tol, max_iter)?;
    let log_lambda = e.lambda.ln() + op.log_scale;
    let phi_eig = PeriodicField::new(op.grid, e.vector)?;
    if phi_eig.min() <= 0.0 {
        return Err(Error::NumericRange {
            time: TAU,
            detail: "eigenfunction lost positivity".into(),
        });
    }
    Ok(EigenPair {
        lambda: log_lambda.exp(),
        log_lambda,
        phi_eig,
        iterations: e.iterations,
        residual: e.residual,
        history: e.history,
    })
}

/// Power iteration from the constant function.
pub fn principal_eigenpair(op: &PropagatorMatrix, tol: f64, max_iter: usize) -> Result<EigenPair> {
    principal_eigenpair_from(op, &PeriodicField::constant(op.grid, 1.0), tol, max_iter)
}

/// Initial data of the periodic viscous solution.
#[derive(Debug, Clone, Serialize)]
pub struct ViscousPeriodicData {
    pub eps: f64,
    pub eigen: EigenPair,
    /// `−ε log φ_eig`, shifted to mean zero.
    pub phi_field: PeriodicField,
    /// `−ε (log φ_eig)'` by centered differences.
    pub u0: PeriodicField,
    /// Step of the linear solver the operator was built with.
    pub dt: f64,
}

/// `(φ^ε, u^ε(0))` from the principal eigenfunction, with the operator built at step `dt`.
pub fn periodic_initial_data(
    eps: f64,
    grid: SpatialGrid,
    pot: &Potential,
    dt: f64,
) -> Result<ViscousPeriodicData> {
    if !(MIN_EPS..=1.0).contains(&eps) {
        return Err(invalid(format!("eps must lie in [{MIN_EPS}, 1], got {eps}")));
    }
    let op = build_period_operator(eps, grid, pot, period_steps(dt))?;
    let eigen = principal_eigenpair(&op, 1e-12, 5000)?;
    let logs = eigen.phi_eig.map(f64::ln);
    let raw = logs.scaled(-eps);
    let phi_field = raw.map(|v| v - raw.mean());
    let u0 = logs.derivative().scaled(-eps);
    Ok(ViscousPeriodicData {
        eps,
        eigen,
        phi_field,
        u0,
        dt: uniform_steps(TAU, dt).1,
    })
}

/// `(φ^ε, u^ε(0))` at the default step of the linear solver.
pub fn periodic_initial_condition(
    eps: f64,
    grid: SpatialGrid,
    pot: &Potential,
) -> Result<(PeriodicField, PeriodicField)> {
    let d = periodic_initial_data(eps, grid, pot, DEFAULT_DT)?;
    Ok((d.phi_field, d.u0))
}

/// One period of a space-time periodic solution.
#[derive(Debug, Clone, Serialize)]
pub struct PeriodicSolution {
    /// Zero for the inviscid solution.
    pub eps: f64,
    pub u0: PeriodicField,
    pub times: Vec<f64>,
    pub slices: Vec<PeriodicField>,
    /// Sup distance between `u(2π)` and `u(0)` for viscous, L¹ for inviscid.
    pub periodicity_residual: f64,
    /// Per-period residuals during relaxation; empty for viscous solutions.
    pub residual_history: Vec<f64>,
}

impl PeriodicSolution {
    /// The stored period as a periodic inviscid run.
    pub fn as_run(&self) -> Result<InviscidRun> {
        InviscidRun::periodic_from(self.times.clone(), self.slices.clone())
    }

    pub fn max_abs_mean(&self) -> f64 {
        self.slices.iter().map(|s| s.mean().abs()).fold(0.0, f64::max)
    }
}

/// The periodic viscous solution over one period, run with the operator's own step.
pub fn viscous_periodic(eps: f64, grid: SpatialGrid, pot: &Potential, dt: f64) -> Result<(ViscousPeriodicData, PeriodicSolution)> {
    let data = periodic_initial_data(eps, grid, pot, dt)?;
    let run = solve_viscous(eps, &data.phi_field, pot, TAU, grid, dt)?;
    let residual = run.last_u().sub(&run.u[0]).sup_norm();
    let sol = PeriodicSolution {
        eps,
        u0: run.u[0].clone(),
        times: run.times.clone(),
        slices: run.u.clone(),
        periodicity_residual: residual,
        residual_history: Vec::new(),
    };
    Ok((data, sol))
}

/// Relax the entropy solution from `u_init` for `n_relax_periods` periods and keep the last one.
///
/// Fails with a convergence error when, over the last quarter of the
/// relaxation, the residual neither reaches the floor nor decreases.
pub fn inviscid_periodic(
    grid: SpatialGrid,
    pot: &Potential,
    n_relax_periods: usize,
    u_init: &PeriodicField,
) -> Result<PeriodicSolution> {
    if n_relax_periods == 0 {
        return Err(invalid("need at least one relaxation period"));
    }
    if u_init.grid() != grid {
        return Err(invalid("initial field lives on a different grid"));
    }
    if !u_init.is_mean_zero(1e-9) {
        return Err(invalid("initial field must have mean zero"));
    }
    let mut u = u_init.clone();
    let mut history = Vec::with_capacity(n_relax_periods);
    let mut last_run = None;
    for k in 0..n_relax_periods {
        let t0 = k as f64 * TAU;
        let run = solve_inviscid_on(&u, pot, t0, t0 + TAU, DEFAULT_CFL, DEFAULT_OUT_DT)?;
        let next = run.last().clone();
        history.push(next.sub(&u).l1_norm());
        u = next;
        last_run = Some(run);
    }
    let run = last_run.expect("at least one period");
    let residual = *history.last().expect("at least one period");
    let tail = &history[history.len() - history.len().div_ceil(4)..];
    if residual > INVISCID_FLOOR && residual >= tail[0] && tail.len() > 1 {
        return Err(Error::Convergence {
            iterations: n_relax_periods,
            residual,
            history,
        });
    }
    let times = run.times.iter().map(|t| t - run.t_start()).collect();
    Ok(PeriodicSolution {
        eps: 0.0,
        u0: run.slices[0].clone(),
        times,
        slices: run.slices,
        periodicity_residual: residual,
        residual_history: history,
    })
}

/// `φ` with `φ' = u0`, mean zero.
pub fn potential_of(u0: &PeriodicField) -> PeriodicField {
    u0.antiderivative()
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceRow {
    pub eps: f64,
    /// Normalized L² distance between mollified `u^ε(0)` and mollified inviscid `u(0)`.
    pub u_distance: f64,
    /// `sup |φ^ε − φ|`.
    pub phi_distance: f64,
    /// Log of the eigenvalue without the potential constant.
    pub log_lambda: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceTable {
    pub rows: Vec<ConvergenceRow>,
    pub mollifier_width: usize,
    pub inviscid: PeriodicSolution,
}

/// Distances between the viscous periodic data and the inviscid periodic data along `eps_list`.
pub fn viscosity_convergence(
    eps_list: &[f64],
    grid: SpatialGrid,
    pot: &Potential,
    n_relax_periods: usize,
) -> Result<ConvergenceTable> {
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("eps list must be decreasing"));
    }
    let inviscid = inviscid_periodic(grid, pot, n_relax_periods, &PeriodicField::zeros(grid))?;
    let u_ref = inviscid.u0.mollify(MOLLIFIER_WIDTH);
    let phi_ref = potential_of(&inviscid.u0);
    let rows = eps_list
        .par_iter()
        .map(|&eps| {
            let d = periodic_initial_data(eps, grid, pot, DEFAULT_DT)?;
            Ok(ConvergenceRow {
                eps,
                u_distance: crate::field::l2_norm(&d.u0.mollify(MOLLIFIER_WIDTH).sub(&u_ref)),
                phi_distance: d.phi_field.sub(&phi_ref).sup_norm(),
                log_lambda: d.eigen.log_lambda_without_constant(eps, pot),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ConvergenceTable {
        rows,
        mollifier_width: MOLLIFIER_WIDTH,
        inviscid,
    })
}

/// Eigenfunctions reached from two different positive starts, compared up to scale.
pub fn eigen_uniqueness_gap(op: &PropagatorMatrix, tol: f64, max_iter: usize) -> Result<f64> {
    let a = principal_eigenpair(op, tol, max_iter)?;
    let start = PeriodicField::from_fn(op.grid, |x| 1.5 + (3.0 * x).cos() + 0.3 * x.sin());
    let b = principal_eigenpair_from(op, &start, tol, max_iter)?;
    Ok(a.phi_eig.sub(&b.phi_eig).sup_norm())
}
