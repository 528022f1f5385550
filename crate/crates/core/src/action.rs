//! The action `A(ξ) = ½∫ξ̇² + ∫V(s, ξ(s)) ds + φ(ξ(0))` on sampled and piecewise-linear paths.
//!
//! Minimization works in breakpoint coordinates `q_0..q_{m-1}` with the endpoint
//! `q_m = x` held fixed. This is the same feasible set as slopes with the last
//! slope eliminated. The descent direction is preconditioned by the kinetic
//! Hessian. A Newton step is taken whenever the full tridiagonal Hessian is
//! positive definite.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::{integrate_samples, simpson_weights, InitialCost, Potential, Trajectory};
use crate::viscous::{solve_viscous, Welford, DEFAULT_DT};
use crate::{PeriodicField, SpatialGrid};

/// Simpson nodes per segment when an action is reported.
pub const REPORT_NODES: usize = 64;

/// Simpson nodes per segment inside the optimizer.
pub const OPT_NODES: usize = 4;

/// Gradient norm at which a minimization counts as converged.
pub const GRAD_TOL: f64 = 1e-8;

pub const MAX_ITER: usize = 10_000;

const ARMIJO_C: f64 = 1e-4;

/// A path in `S_n`: `2^n` constant slopes on equal subintervals of `[0, t_end]`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PiecewisePath {
    pub t_end: f64,
    pub level: u32,
    pub start: f64,
    pub slopes: Vec<f64>,
}

impl PiecewisePath {
    pub fn new(t_end: f64, level: u32, start: f64, slopes: Vec<f64>) -> Result<Self> {
        if !(t_end > 0.0) {
            return Err(invalid("path needs t_end > 0"));
        }
        if slopes.len() != 1usize << level {
            return Err(invalid(format!(
                "level {level} needs {} slopes, got {}",
                1usize << level,
                slopes.len()
            )));
        }
        if !start.is_finite() || slopes.iter().any(|s| !s.is_finite()) {
            return Err(invalid("path data must be finite"));
        }
        Ok(Self {
            t_end,
            level,
            start,
            slopes,
        })
    }

    /// Path through the given breakpoint positions (`2^level + 1` of them).
    pub fn from_positions(t_end: f64, level: u32, q: &[f64]) -> Result<Self> {
        let m = 1usize << level;
        if q.len() != m + 1 {
            return Err(invalid("wrong number of breakpoints"));
        }
        let h = t_end / m as f64;
        Self::new(t_end, level, q[0], q.windows(2).map(|w| (w[1] - w[0]) / h).collect())
    }

    pub fn segments(&self) -> usize {
        self.slopes.len()
    }

    pub fn step(&self) -> f64 {
        self.t_end / self.segments() as f64
    }

    /// Breakpoint positions `ξ(jh)`, `j = 0..=2^n`.
    pub fn positions(&self) -> Vec<f64> {
        let h = self.step();
        let mut q = Vec::with_capacity(self.segments() + 1);
        q.push(self.start);
        for s in &self.slopes {
            q.push(q[q.len() - 1] + h * s);
        }
        q
    }

    /// `start + (t_end/2^n)·Σ slopes`.
    pub fn endpoint(&self) -> f64 {
        self.start + self.step() * self.slopes.iter().sum::<f64>()
    }

    /// The same path in `S_{n+1}`.
    pub fn refine(&self) -> Self {
        Self {
            t_end: self.t_end,
            level: self.level + 1,
            start: self.start,
            slopes: self.slopes.iter().flat_map(|&s| [s, s]).collect(),
        }
    }

    /// Samples with `per_segment` points per segment; velocities are one-sided at breakpoints.
    pub fn to_trajectory(&self, per_segment: usize) -> Result<Trajectory> {
        let per = per_segment.max(1);
        let h = self.step();
        let q = self.positions();
        let mut times = Vec::new();
        let mut pos = Vec::new();
        let mut vel = Vec::new();
        for j in 0..self.segments() {
            for i in 0..per {
                let tau = i as f64 / per as f64;
                times.push((j as f64 + tau) * h);
                pos.push(q[j] + tau * (q[j + 1] - q[j]));
                vel.push(self.slopes[j]);
            }
        }
        times.push(self.t_end);
        pos.push(q[self.segments()]);
        vel.push(self.slopes[self.segments() - 1]);
        Trajectory::new(times, pos, vel)
    }

    /// Velocity at `t_end` extrapolated from the last two segment midpoints.
    pub fn terminal_velocity(&self) -> f64 {
        let m = self.segments();
        if m == 1 {
            return self.slopes[0];
        }
        1.5 * self.slopes[m - 1] - 0.5 * self.slopes[m - 2]
    }

    /// Velocity at 0 extrapolated from the first two segment midpoints.
    pub fn initial_velocity(&self) -> f64 {
        if self.segments() == 1 {
            return self.slopes[0];
        }
        1.5 * self.slopes[0] - 0.5 * self.slopes[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ActionReport {
    pub value: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub boundary: f64,
    pub el_residual: f64,
}

/// Anything the action can be evaluated on.
pub enum PathRef<'a> {
    Piecewise(&'a PiecewisePath),
    Sampled(&'a Trajectory),
}

impl<'a> From<&'a PiecewisePath> for PathRef<'a> {
    fn from(p: &'a PiecewisePath) -> Self {
        PathRef::Piecewise(p)
    }
}

impl<'a> From<&'a Trajectory> for PathRef<'a> {
    fn from(t: &'a Trajectory) -> Self {
        PathRef::Sampled(t)
    }
}

/// Per-segment quadrature in breakpoint coordinates.
struct SegmentQuad {
    taus: Vec<f64>,
    weights: Vec<f64>,
}

impl SegmentQuad {
    fn new(nodes: usize, h: f64) -> Self {
        let m = nodes.max(2) + nodes % 2;
        Self {
            taus: (0..=m).map(|i| i as f64 / m as f64).collect(),
            weights: simpson_weights(m, h / m as f64),
        }
    }
}

/// Action pieces, the gradient in breakpoint coordinates, and optionally the
/// tridiagonal Hessian (diag, off-diag), all with a free endpoint.
struct Evaluation {
    kinetic: f64,
    potential: f64,
    boundary: f64,
    grad: Vec<f64>,
    diag: Vec<f64>,
    off: Vec<f64>,
}

impl Evaluation {
    fn value(&self) -> f64 {
        self.kinetic + self.potential + self.boundary
    }
}

fn evaluate(
    q: &[f64],
    h: f64,
    quad: &SegmentQuad,
    phi: &InitialCost,
    pot: &Potential,
    hessian: bool,
) -> Evaluation {
    let m = q.len() - 1;
    let mut grad = vec![0.0; m + 1];
    let (mut diag, mut off) = if hessian {
        (vec![0.0; m + 1], vec![0.0; m])
    } else {
        (Vec::new(), Vec::new())
    };
    let mut kinetic = 0.0;
    let mut potential = 0.0;
    for j in 0..m {
        let lam = (q[j + 1] - q[j]) / h;
        kinetic += 0.5 * h * lam * lam;
        grad[j] -= lam;
        grad[j + 1] += lam;
        let t0 = j as f64 * h;
        for (&tau, &w) in quad.taus.iter().zip(&quad.weights) {
            let xi = q[j] + tau * (q[j + 1] - q[j]);
            let (v, vx, vxx) = pot.jet(t0 + tau * h, xi);
            potential += w * v;
            grad[j] += w * vx * (1.0 - tau);
            grad[j + 1] += w * vx * tau;
            if hessian {
                diag[j] += w * vxx * (1.0 - tau) * (1.0 - tau);
                diag[j + 1] += w * vxx * tau * tau;
                off[j] += w * vxx * tau * (1.0 - tau);
            }
        }
        if hessian {
            diag[j] += 1.0 / h;
            diag[j + 1] += 1.0 / h;
            off[j] -= 1.0 / h;
        }
    }
    grad[0] += phi.slope(q[0]);
    if hessian {
        diag[0] += phi.curvature(q[0]);
    }
    Evaluation {
        kinetic,
        potential,
        boundary: phi.value(q[0]),
        grad,
        diag,
        off,
    }
}

/// Solve a symmetric tridiagonal system; `None` unless every pivot is positive.
fn solve_tridiagonal_pd(diag: &[f64], off: &[f64], rhs: &[f64]) -> Option<Vec<f64>> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    let mut piv = diag[0];
    if !(piv > 0.0) {
        return None;
    }
    c[0] = if n > 1 { off[0] / piv } else { 0.0 };
    d[0] = rhs[0] / piv;
    for i in 1..n {
        piv = diag[i] - off[i - 1] * c[i - 1];
        if !(piv > 0.0) {
            return None;
        }
        if i < n - 1 {
            c[i] = off[i] / piv;
        }
        d[i] = (rhs[i] - off[i - 1] * d[i - 1]) / piv;
    }
    for i in (0..n - 1).rev() {
        d[i] -= c[i] * d[i + 1];
    }
    Some(d)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Discrete Euler–Lagrange defect of a piecewise path: the largest interior
/// `|(λ_j − λ_{j−1})/h − V_x(jh, ξ_j)|` plus the boundary defect
/// `|ξ̇(0) − φ'(ξ(0))|`, with `ξ̇(0)` extrapolated to second order.
pub fn el_residual_piecewise(path: &PiecewisePath, pot: &Potential, phi: &InitialCost) -> f64 {
    let h = path.step();
    let q = path.positions();
    let interior = (1..path.segments())
        .map(|j| {
            let acc = (path.slopes[j] - path.slopes[j - 1]) / h;
            (acc - pot.gradient(j as f64 * h, q[j])).abs()
        })
        .fold(0.0, f64::max);
    interior + (path.initial_velocity() - phi.slope(q[0])).abs()
}

/// Largest `|Δ²q/dt² − V_x(t,q)|` over interior samples plus `|q̇(0) − φ'(q(0))|`.
pub fn el_residual(
    traj: &Trajectory,
    pot: &Potential,
    phi_prime: &dyn Fn(f64) -> f64,
) -> Result<f64> {
    if traj.len() < 8 {
        return Err(invalid("el_residual needs at least 8 samples"));
    }
    let (t, q) = (traj.times(), traj.positions());
    let mut interior = 0.0_f64;
    for k in 1..q.len() - 1 {
        let (h0, h1) = (t[k] - t[k - 1], t[k + 1] - t[k]);
        let acc = 2.0 * ((q[k + 1] - q[k]) / h1 - (q[k] - q[k - 1]) / h0) / (h0 + h1);
        interior = interior.max((acc - pot.gradient(t[k], q[k])).abs());
    }
    let (_, q0, v0) = traj.first();
    Ok(interior + (v0 - phi_prime(q0)).abs())
}

/// Evaluate the action on a piecewise or sampled path.
pub fn action_eval<'a>(
    path: impl Into<PathRef<'a>>,
    phi: &InitialCost,
    pot: &Potential,
) -> Result<ActionReport> {
    match path.into() {
        PathRef::Piecewise(p) => {
            let q = p.positions();
            let e = evaluate(&q, p.step(), &SegmentQuad::new(REPORT_NODES, p.step()), phi, pot, false);
            Ok(ActionReport {
                value: e.value(),
                kinetic: e.kinetic,
                potential: e.potential,
                boundary: e.boundary,
                el_residual: el_residual_piecewise(p, pot, phi),
            })
        }
        PathRef::Sampled(tr) => {
            let (t, q, v) = (tr.times(), tr.positions(), tr.velocities());
            let kin: Vec<f64> = v.iter().map(|x| 0.5 * x * x).collect();
            let pv: Vec<f64> = t.iter().zip(q).map(|(&s, &x)| pot.value(s, x)).collect();
            let (kinetic, potential) = match tr.uniform_step() {
                Some(h) => (integrate_samples(&kin, h), integrate_samples(&pv, h)),
                None => (trapezoid(t, &kin), trapezoid(t, &pv)),
            };
            let boundary = phi.value(q[0]);
            let el = if tr.len() >= 8 {
                el_residual(tr, pot, &|x| phi.slope(x))?
            } else {
                f64::NAN
            };
            Ok(ActionReport {
                value: kinetic + potential + boundary,
                kinetic,
                potential,
                boundary,
                el_residual: el,
            })
        }
    }
}

fn trapezoid(t: &[f64], f: &[f64]) -> f64 {
    t.windows(2)
        .zip(f.windows(2))
        .map(|(tw, fw)| 0.5 * (tw[1] - tw[0]) * (fw[0] + fw[1]))
        .sum()
}

/// Gradient of the action in slope coordinates, with a free endpoint.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SlopeGradient {
    pub d_slopes: Vec<f64>,
    pub d_start: f64,
}

/// `∂A/∂λ_j` and `∂A/∂start`, exact up to the Simpson rule on each segment.
pub fn action_gradient(path: &PiecewisePath, phi: &InitialCost, pot: &Potential) -> SlopeGradient {
    let q = path.positions();
    let h = path.step();
    let e = evaluate(&q, h, &SegmentQuad::new(REPORT_NODES, h), phi, pot, false);
    // q_k = start + h·Σ_{j<k} λ_j
    let m = path.segments();
    let mut tail = 0.0;
    let mut d_slopes = vec![0.0; m];
    for j in (0..m).rev() {
        tail += e.grad[j + 1];
        d_slopes[j] = h * tail;
    }
    SlopeGradient {
        d_slopes,
        d_start: e.grad.iter().sum(),
    }
}

/// Outcome of one minimization run.
#[derive(Debug, Clone, Serialize)]
pub struct RunOutcome {
    pub seed: u64,
    pub value: f64,
    pub grad_norm: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Minimum {
    pub best: PiecewisePath,
    pub report: ActionReport,
    pub grad_norm: f64,
    pub runs: Vec<RunOutcome>,
}

/// Local minimization from given breakpoints; the last breakpoint stays fixed.
pub fn minimize_from(
    t: f64,
    level: u32,
    init: &[f64],
    phi: &InitialCost,
    pot: &Potential,
) -> Result<(PiecewisePath, RunOutcome)> {
    descend(t, level, init, phi, pot, OPT_NODES)
}

/// Re-minimize with the reporting quadrature, so values at different levels are comparable.
pub fn polish(path: &PiecewisePath, phi: &InitialCost, pot: &Potential) -> Result<(PiecewisePath, RunOutcome)> {
    descend(path.t_end, path.level, &path.positions(), phi, pot, REPORT_NODES)
}

fn descend(
    t: f64,
    level: u32,
    init: &[f64],
    phi: &InitialCost,
    pot: &Potential,
    nodes: usize,
) -> Result<(PiecewisePath, RunOutcome)> {
    let m = 1usize << level;
    if init.len() != m + 1 {
        return Err(invalid("initial breakpoints have the wrong length"));
    }
    let h = t / m as f64;
    let quad = SegmentQuad::new(nodes, h);
    let mut q = init.to_vec();
    let eval = |q: &[f64], hess: bool| evaluate(q, h, &quad, phi, pot, hess);
    let kin_diag: Vec<f64> = (0..m).map(|i| if i == 0 { 1.0 / h } else { 2.0 / h }).collect();
    let kin_off = vec![-1.0 / h; m - 1];
    let mut e = eval(&q, true);
    let mut iterations = 0;
    let mut converged = false;
    let mut gnorm = norm(&e.grad[..m]);
    while iterations < MAX_ITER {
        if gnorm < GRAD_TOL {
            converged = true;
            break;
        }
        iterations += 1;
        let g = &e.grad[..m];
        let neg: Vec<f64> = g.iter().map(|v| -v).collect();
        let newton = solve_tridiagonal_pd(&e.diag[..m], &e.off[..m - 1], &neg);
        let is_newton = newton.is_some();
        let dir = match newton {
            Some(d) => d,
            None => solve_tridiagonal_pd(&kin_diag, &kin_off, &neg).expect("kinetic part is positive definite"),
        };
        let slope: f64 = g.iter().zip(&dir).map(|(a, b)| a * b).sum();
        let a0 = e.value();
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..60 {
            let trial: Vec<f64> = q[..m]
                .iter()
                .zip(&dir)
                .map(|(x, d)| x + alpha * d)
                .chain(std::iter::once(q[m]))
                .collect();
            let te = eval(&trial, true);
            let local = is_newton && gnorm < 1e-6 && alpha == 1.0;
            if local || te.value() <= a0 + ARMIJO_C * alpha * slope {
                accepted = Some((trial, te));
                break;
            }
            alpha *= 0.5;
        }
        match accepted {
            Some((nq, ne)) => {
                q = nq;
                e = ne;
                gnorm = norm(&e.grad[..m]);
            }
            None => break,
        }
    }
    let path = PiecewisePath::from_positions(t, level, &q)?;
    Ok((
        path,
        RunOutcome {
            seed: 0,
            value: e.value(),
            grad_norm: gnorm,
            iterations,
            converged,
        },
    ))
}

/// Random breakpoints ending at `x`: slopes uniform in `[−3, 3]`, start uniform in `[0, 2π)`,
/// then a linear shift onto the endpoint.
fn random_start(t: f64, x: f64, level: u32, seed: u64) -> Vec<f64> {
    let m = 1usize << level;
    let h = t / m as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut q = vec![rng.random_range(0.0..std::f64::consts::TAU)];
    for _ in 0..m {
        let s: f64 = rng.random_range(-3.0..3.0);
        q.push(q[q.len() - 1] + h * s);
    }
    let miss = x - q[m];
    q.iter_mut()
        .enumerate()
        .for_each(|(k, v)| *v += miss * k as f64 / m as f64);
    q
}

/// Lowest-action path in `S_n` ending at `x` at time `t`, over `restarts` random starts
/// seeded `seed, seed+1, …`.
pub fn minimize_action(
    t: f64,
    x: f64,
    level: u32,
    phi: &InitialCost,
    pot: &Potential,
    restarts: usize,
    seed: u64,
) -> Result<Minimum> {
    if !(t > 0.0) {
        return Err(invalid("minimization needs t > 0"));
    }
    if restarts == 0 {
        return Err(invalid("need at least one restart"));
    }
    let results: Vec<(PiecewisePath, RunOutcome)> = (0..restarts as u64)
        .into_par_iter()
        .map(|r| {
            let s = seed.wrapping_add(r);
            minimize_from(t, level, &random_start(t, x, level, s), phi, pot).map(|(p, mut o)| {
                o.seed = s;
                (p, o)
            })
        })
        .collect::<Result<_>>()?;
    select_best(results, phi, pot)
}

fn select_best(
    results: Vec<(PiecewisePath, RunOutcome)>,
    phi: &InitialCost,
    pot: &Potential,
) -> Result<Minimum> {
    let runs: Vec<RunOutcome> = results.iter().map(|r| r.1.clone()).collect();
    let best = results
        .into_iter()
        .filter(|r| r.1.converged)
        .min_by(|a, b| a.1.value.total_cmp(&b.1.value));
    match best {
        Some((path, outcome)) => {
            let (path, outcome) = match polish(&path, phi, pot)? {
                (p, o) if o.converged => (p, o),
                _ => (path, outcome),
            };
            let report = action_eval(&path, phi, pot)?;
            Ok(Minimum {
                best: path,
                report,
                grad_norm: outcome.grad_norm,
                runs,
            })
        }
        None => Err(Error::Optimization(format!(
            "no restart converged; gradient norms {:?}",
            runs.iter().map(|r| r.grad_norm).collect::<Vec<_>>()
        ))),
    }
}

/// Minimization warm-started from `paths` (each shifted linearly onto `x`) plus random restarts.
#[allow(clippy::too_many_arguments)]
pub fn minimize_action_warm(
    t: f64,
    x: f64,
    level: u32,
    phi: &InitialCost,
    pot: &Potential,
    warm: &[PiecewisePath],
    restarts: usize,
    seed: u64,
) -> Result<Minimum> {
    let m = 1usize << level;
    let mut starts: Vec<(u64, Vec<f64>)> = warm
        .iter()
        .map(|p| {
            let mut w = p.clone();
            while w.level < level {
                w = w.refine();
            }
            let mut q = w.positions();
            let miss = x - q[m];
            q.iter_mut()
                .enumerate()
                .for_each(|(k, v)| *v += miss * k as f64 / m as f64);
            (u64::MAX, q)
        })
        .collect();
    starts.extend((0..restarts as u64).map(|r| {
        let s = seed.wrapping_add(r);
        (s, random_start(t, x, level, s))
    }));
    let results: Vec<(PiecewisePath, RunOutcome)> = starts
        .into_par_iter()
        .map(|(s, q)| {
            minimize_from(t, level, &q, phi, pot).map(|(p, mut o)| {
                o.seed = s;
                (p, o)
            })
        })
        .collect::<Result<_>>()?;
    select_best(results, phi, pot)
}

/// `(2^n / 2t)·Σ x_j²`.
pub fn fenchel_legendre(xs: &[f64], n: u32, t: f64) -> Result<f64> {
    let m = 1usize << n;
    if xs.len() != m {
        return Err(invalid(format!("expected {m} increments, got {}", xs.len())));
    }
    if !(t > 0.0) {
        return Err(invalid("t must be positive"));
    }
    Ok(m as f64 / (2.0 * t) * xs.iter().map(|x| x * x).sum::<f64>())
}

/// `Σλ_j x_j − (t/2^{n+1})Σλ_j²` evaluated at its maximizer `λ = 2^n x / t`.
pub fn fenchel_legendre_sup(xs: &[f64], n: u32, t: f64) -> Result<f64> {
    let m = 1usize << n;
    if xs.len() != m {
        return Err(invalid(format!("expected {m} increments, got {}", xs.len())));
    }
    let lam: Vec<f64> = xs.iter().map(|x| m as f64 * x / t).collect();
    let linear: f64 = lam.iter().zip(xs).map(|(l, x)| l * x).sum();
    let quad: f64 = t / (2.0 * m as f64) * lam.iter().map(|l| l * l).sum::<f64>();
    Ok(linear - quad)
}

/// Empirical `P(|Z| > ρ)` for `Z ~ N(0, εt/2^n)` against the bound `exp(−2^n ρ²/(2εt))`.
pub fn gaussian_tail_check(n: u32, t: f64, eps: f64, rho: f64, samples: usize, seed: u64) -> Result<(f64, f64)> {
    let var = eps * t / (1u64 << n) as f64;
    let dist = Normal::new(0.0, var.sqrt()).map_err(|e| invalid(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hits = (0..samples)
        .filter(|_| dist.sample(&mut rng).abs() > rho)
        .count();
    Ok((hits as f64 / samples as f64, (-rho * rho / (2.0 * var)).exp()))
}

#[derive(Debug, Clone, Serialize)]
pub struct LaplaceRow {
    pub eps: f64,
    /// `−ε log` of the discrete-path expectation.
    pub estimate: f64,
    pub std_error: f64,
    /// Minimal action over `S_n` paths ending at `x`.
    pub inf_action: f64,
    pub gap: f64,
    pub precision_warning: bool,
}

#[derive(Debug, Clone, Copy, Serialize)]
pub struct McParams {
    pub paths: usize,
    pub seed: u64,
    pub restarts: usize,
}

impl Default for McParams {
    fn default() -> Self {
        Self {
            paths: 200_000,
            seed: 7,
            restarts: 16,
        }
    }
}

/// Monte-Carlo `−ε log E[exp(−(φ(Y_t) + ∫V(t−s, Y_s)ds)/ε)]` over piecewise-linear
/// Gaussian walks `Y` from `x` with `2^n` increments of variance `εt/2^n`.
#[allow(clippy::too_many_arguments)]
pub fn discrete_path_log_expectation(
    t: f64,
    x: f64,
    n: u32,
    eps: f64,
    phi: &InitialCost,
    pot: &Potential,
    paths: usize,
    seed: u64,
) -> Result<(f64, f64, bool)> {
    let m = 1usize << n;
    let h = t / m as f64;
    let sd = (eps * h).sqrt();
    let quad = SegmentQuad::new(4, h);
    let block = 4096;
    let blocks = paths.div_ceil(block);
    let logs: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64));
            let count = block.min(paths - b * block);
            (0..count)
                .map(|_| {
                    let mut y = x;
                    let mut integral = 0.0;
                    for j in 0..m {
                        let z: f64 = rand_distr::StandardNormal.sample(&mut rng);
                        let y1 = y + sd * z;
                        let s0 = j as f64 * h;
                        for (&tau, &w) in quad.taus.iter().zip(&quad.weights) {
                            integral += w * pot.value(t - (s0 + tau * h), y + tau * (y1 - y));
                        }
                        y = y1;
                    }
                    -(phi.value(y) + integral) / eps
                })
                .collect()
        })
        .collect();
    let all: Vec<f64> = logs.into_iter().flatten().collect();
    let top = all.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w = Welford::default();
    for l in &all {
        w.push((l - top).exp());
    }
    let rel = w.std_error() / w.mean;
    let estimate = -eps * (top + w.mean.ln());
    Ok((estimate, eps * rel, rel > 0.1))
}

/// Gap between the discrete-path Monte-Carlo value and the minimal action over `S_n`, per `ε`.
pub fn laplace_limit_check(
    t: f64,
    x: f64,
    n: u32,
    eps_list: &[f64],
    phi: &InitialCost,
    pot: &Potential,
    mc: McParams,
) -> Result<Vec<LaplaceRow>> {
    if n > 4 {
        return Err(invalid("Monte-Carlo Laplace check is limited to n ≤ 4"));
    }
    if eps_list.windows(2).any(|w| !(w[1] < w[0])) || eps_list.iter().any(|e| !(*e > 0.0)) {
        return Err(invalid("eps list must be positive and decreasing"));
    }
    let min = minimize_action(t, x, n, phi, pot, mc.restarts, mc.seed)?;
    eps_list
        .iter()
        .map(|&eps| {
            let (estimate, std_error, warn) =
                discrete_path_log_expectation(t, x, n, eps, phi, pot, mc.paths, mc.seed)?;
            Ok(LaplaceRow {
                eps,
                estimate,
                std_error,
                inf_action: min.report.value,
                gap: (estimate - min.report.value).abs(),
                precision_warning: warn,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct VaradhanRow {
    pub eps: f64,
    /// `−ε log U^ε(t,x)` from the deterministic linear solver.
    pub value: f64,
    /// `(level, min action over S_level, |value − min|)`.
    pub gaps: Vec<(u32, f64, f64)>,
}

/// Compare `−ε log U^ε(t,x)` with the minimal action over `S_n` for each `ε` and level.
#[allow(clippy::too_many_arguments)]
pub fn varadhan_check(
    t: f64,
    x: f64,
    eps_list: &[f64],
    phi: &InitialCost,
    pot: &Potential,
    levels: &[u32],
    grid: SpatialGrid,
    restarts: usize,
    seed: u64,
) -> Result<Vec<VaradhanRow>> {
    if eps_list.iter().any(|&e| e < 0.05) {
        return Err(invalid("varadhan check needs eps ≥ 0.05"));
    }
    let mut minima: Vec<(u32, f64)> = Vec::new();
    let mut warm: Vec<PiecewisePath> = Vec::new();
    let mut sorted = levels.to_vec();
    sorted.sort_unstable();
    for &n in &sorted {
        let m = minimize_action_warm(t, x, n, phi, pot, &warm, restarts, seed)?;
        minima.push((n, m.report.value));
        warm = vec![m.best];
    }
    let phi_field = PeriodicField::from_fn(grid, |y| phi.value(y));
    eps_list
        .par_iter()
        .map(|&eps| {
            let run = solve_viscous(eps, &phi_field, pot, t, grid, DEFAULT_DT)?;
            let value = run.last_value().interpolate(x);
            Ok(VaradhanRow {
                eps,
                value,
                gaps: levels
                    .iter()
                    .map(|l| {
                        let a = minima.iter().find(|(n, _)| n == l).unwrap().1;
                        (*l, a, (value - a).abs())
                    })
                    .collect(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ValueGradient {
    /// Central difference of the minimal action in `x`.
    pub lhs: f64,
    /// Terminal velocity of the minimizer at `x`.
    pub rhs: f64,
    pub values: [f64; 3],
    /// Restarts reached distinct paths with equal minimal action.
    pub ambiguous: bool,
}

/// `∂_x min A(t, x)` against the terminal velocity of the minimizing path.
#[allow(clippy::too_many_arguments)]
pub fn value_gradient_identity(
    t: f64,
    x: f64,
    dx: f64,
    level: u32,
    phi: &InitialCost,
    pot: &Potential,
    restarts: usize,
    seed: u64,
) -> Result<ValueGradient> {
    if !(dx > 0.0) {
        return Err(invalid("dx must be positive"));
    }
    let centre = minimize_action(t, x, level, phi, pot, restarts, seed)?;
    let best_q = centre.best.positions();
    let ambiguous = {
        let m = 1usize << level;
        let mut distinct = false;
        // Re-run the converged restarts to compare their paths with the best one.
        for r in centre.runs.iter().filter(|r| r.converged) {
            if (r.value - centre.report.value).abs() < 1e-7 {
                let (p, _) = minimize_from(t, level, &random_start(t, x, level, r.seed), phi, pot)?;
                let q = p.positions();
                if (0..=m).any(|k| (q[k] - best_q[k]).abs() > 1e-3) {
                    distinct = true;
                }
            }
        }
        distinct
    };
    let warm = [centre.best.clone()];
    let plus = minimize_action_warm(t, x + dx, level, phi, pot, &warm, 0, seed)?;
    let minus = minimize_action_warm(t, x - dx, level, phi, pot, &warm, 0, seed)?;
    Ok(ValueGradient {
        lhs: (plus.report.value - minus.report.value) / (2.0 * dx),
        rhs: centre.best.terminal_velocity(),
        values: [minus.report.value, centre.report.value, plus.report.value],
        ambiguous,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    #[test]
    fn trivial_actions() {
        let zero = PiecewisePath::new(TAU, 3, 0.0, vec![0.0; 8]).unwrap();
        let r = action_eval(&zero, &InitialCost::zero(), &Potential::forced()).unwrap();
        assert!(r.value.abs() < 1e-12);
        let r = action_eval(&zero, &InitialCost::constant(2.5), &Potential::zero()).unwrap();
        assert_abs_diff_eq!(r.value, 2.5);
        assert_abs_diff_eq!(r.value, r.kinetic + r.potential + r.boundary, epsilon = 1e-12);
    }

    #[test]
    fn fenchel_legendre_examples() {
        assert_eq!(fenchel_legendre(&[0.0, 0.0], 1, 1.0).unwrap(), 0.0);
        assert_eq!(fenchel_legendre(&[1.0, 1.0], 1, 1.0).unwrap(), 2.0);
        assert!(fenchel_legendre(&[1.0], 1, 1.0).is_err());
    }

    #[test]
    fn free_particle_minimizer() {
        let m = minimize_action(1.0, 1.0, 3, &InitialCost::zero(), &Potential::zero(), 4, 1).unwrap();
        assert!(m.best.slopes.iter().all(|s| s.abs() < 1e-8));
        assert_abs_diff_eq!(m.report.value, 0.0, epsilon = 1e-12);
        // Quadratic initial cost: the start balances the boundary condition ξ̇(0) = ξ(0).
        let quad = InitialCost::new(|y| 0.5 * y * y, |y| y);
        let m = minimize_action(1.0, 1.0, 3, &quad, &Potential::zero(), 4, 1).unwrap();
        assert!(m.best.slopes.iter().all(|s| (s - 0.5).abs() < 1e-8));
        assert_abs_diff_eq!(m.best.start, 0.5, epsilon = 1e-8);
        assert_abs_diff_eq!(m.report.value, 0.25, epsilon = 1e-10);
    }

    #[test]
    fn tridiagonal_solver() {
        let d = [2.0, 2.0, 2.0];
        let o = [-1.0, -1.0];
        let x = solve_tridiagonal_pd(&d, &o, &[1.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(x[0], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(x[1], 1.0, epsilon = 1e-14);
        assert!(solve_tridiagonal_pd(&[1.0, -1.0], &[0.0], &[1.0, 1.0]).is_none());
    }

    #[test]
    fn zero_path_gradient_is_boundary_only() {
        let p = PiecewisePath::new(1.0, 2, 0.4, vec![0.0; 4]).unwrap();
        let g = action_gradient(&p, &InitialCost::one_minus_cos(), &Potential::zero());
        assert!(g.d_slopes.iter().all(|v| v.abs() < 1e-15));
        assert_abs_diff_eq!(g.d_start, 0.4f64.sin(), epsilon = 1e-15);
    }

    #[test]
    fn el_residual_detects_perturbation() {
        let pot = Potential::forced();
        let times: Vec<f64> = (0..=4000).map(|k| TAU * k as f64 / 4000.0).collect();
        let q: Vec<f64> = times.iter().map(|t| t - t.sin()).collect();
        let v: Vec<f64> = times.iter().map(|t| 1.0 - t.cos()).collect();
        let tr = Trajectory::new(times.clone(), q, v.clone()).unwrap();
        assert!(el_residual(&tr, &pot, &|_| 0.0).unwrap() < 1e-6);
        let bent: Vec<f64> = times.iter().map(|t| t - t.sin() + 0.05 * (3.0 * t).sin()).collect();
        let tr = Trajectory::new(times, bent, v).unwrap();
        assert!(el_residual(&tr, &pot, &|_| 0.0).unwrap() > 0.1);
        let line: Vec<f64> = (0..20).map(|k| 0.1 * k as f64).collect();
        let tr = Trajectory::new(line.clone(), line.iter().map(|t| 2.0 * t).collect(), vec![2.0; 20]).unwrap();
        assert!(el_residual(&tr, &Potential::zero(), &|_| 2.0).unwrap() < 1e-12);
    }

    #[test]
    fn tail_probability_is_below_bound() {
        let (emp, bound) = gaussian_tail_check(2, 1.0, 0.5, 0.6, 200_000, 3).unwrap();
        assert!(emp < bound, "{emp} vs {bound}");
        assert!(emp > 0.0);
    }

    #[test]
    fn piecewise_path_endpoint_and_refinement() {
        let p = PiecewisePath::new(2.0, 2, 0.5, vec![1.0, -1.0, 2.0, 0.0]).unwrap();
        assert_abs_diff_eq!(p.endpoint(), 0.5 + 0.5 * 2.0);
        let r = p.refine();
        assert_eq!(r.positions()[2], p.positions()[1]);
        let (a, b) = (
            action_eval(&p, &InitialCost::zero(), &Potential::forced()).unwrap().value,
            action_eval(&r, &InitialCost::zero(), &Potential::forced()).unwrap().value,
        );
        assert_abs_diff_eq!(a, b, epsilon = 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn fenchel_legendre_equals_its_supremum(xs in proptest::collection::vec(-3.0..3.0f64, 8), t in 0.1..5.0f64) {
            let a = fenchel_legendre(&xs, 3, t).unwrap();
            let b = fenchel_legendre_sup(&xs, 3, t).unwrap();
            prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        }
    }
}
