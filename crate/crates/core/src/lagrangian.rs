//! Euler–Lagrange trajectories `q̈ = V_x(t, q)`, shooting, and the period map.

use std::f64::consts::TAU;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Result};
use crate::field::{centered_mod, wrap, Potential, Trajectory};

/// Default RK4 step.
pub const DEFAULT_DT: f64 = 1e-3;

/// Step used while a scan is still searching; converged points are re-polished at [`DEFAULT_DT`].
pub const COARSE_DT: f64 = TAU / 512.0;

/// Fixed points closer than this in `(q mod 2π, p)` are merged.
pub const DEDUP_RADIUS: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PhasePoint {
    pub q: f64,
    pub p: f64,
}

impl PhasePoint {
    pub fn new(q: f64, p: f64) -> Self {
        Self { q, p }
    }

    /// The same state seen by the time-reversed flow, `(q, −p)`.
    pub fn time_reversed(&self) -> Self {
        Self { q: self.q, p: -self.p }
    }
}

#[inline]
fn rk4(pot: &Potential, t: f64, q: f64, p: f64, h: f64) -> (f64, f64) {
    let a1 = pot.gradient(t, q);
    let (q2, p2) = (q + 0.5 * h * p, p + 0.5 * h * a1);
    let a2 = pot.gradient(t + 0.5 * h, q2);
    let (q3, p3) = (q + 0.5 * h * p2, p + 0.5 * h * a2);
    let a3 = pot.gradient(t + 0.5 * h, q3);
    let (q4, p4) = (q + h * p3, p + h * a3);
    let a4 = pot.gradient(t + h, q4);
    (
        q + h / 6.0 * (p + 2.0 * p2 + 2.0 * p3 + p4),
        p + h / 6.0 * (a1 + 2.0 * a2 + 2.0 * a3 + a4),
    )
}

fn step_count(span: f64, dt: f64) -> (usize, f64) {
    let steps = (span.abs() / dt - 1e-9).ceil().max(1.0) as usize;
    (steps, span / steps as f64)
}

/// RK4 solution of `q̈ = V_x(t,q)` with `(q, q̇)(t0) = start`, sampled at every step.
///
/// `t1 < t0` integrates backward; the returned samples are always in increasing time.
pub fn integrate_el(
    start: PhasePoint,
    t0: f64,
    t1: f64,
    dt: f64,
    pot: &Potential,
) -> Result<Trajectory> {
    if !(dt > 0.0) || t1 == t0 {
        return Err(invalid("integrate_el needs dt > 0 and t1 ≠ t0"));
    }
    let (steps, h) = step_count(t1 - t0, dt);
    let mut times = Vec::with_capacity(steps + 1);
    let mut qs = Vec::with_capacity(steps + 1);
    let mut ps = Vec::with_capacity(steps + 1);
    let (mut q, mut p) = (start.q, start.p);
    times.push(t0);
    qs.push(q);
    ps.push(p);
    for k in 0..steps {
        (q, p) = rk4(pot, t0 + k as f64 * h, q, p, h);
        times.push(if k + 1 == steps { t1 } else { t0 + (k + 1) as f64 * h });
        qs.push(q);
        ps.push(p);
    }
    if h < 0.0 {
        times.reverse();
        qs.reverse();
        ps.reverse();
    }
    Trajectory::new(times, qs, ps)
}

/// Endpoint of the flow from `t0` to `t1`.
pub fn flow(start: PhasePoint, t0: f64, t1: f64, dt: f64, pot: &Potential) -> PhasePoint {
    let (steps, h) = step_count(t1 - t0, dt);
    let (mut q, mut p) = (start.q, start.p);
    for k in 0..steps {
        (q, p) = rk4(pot, t0 + k as f64 * h, q, p, h);
    }
    PhasePoint { q, p }
}

/// Endpoint of the flow together with its Jacobian, from the variational equation.
pub fn flow_with_jacobian(
    start: PhasePoint,
    t0: f64,
    t1: f64,
    dt: f64,
    pot: &Potential,
) -> (PhasePoint, Matrix2<f64>) {
    let (steps, h) = step_count(t1 - t0, dt);
    // State: q, p, and the columns (δq, δp) of the Jacobian.
    let f = |t: f64, y: &[f64; 6]| -> [f64; 6] {
        let (_, vx, vxx) = pot.jet(t, y[0]);
        [y[1], vx, y[3], vxx * y[2], y[5], vxx * y[4]]
    };
    let mut y = [start.q, start.p, 1.0, 0.0, 0.0, 1.0];
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let k1 = f(t, &y);
        let y2: [f64; 6] = std::array::from_fn(|i| y[i] + 0.5 * h * k1[i]);
        let k2 = f(t + 0.5 * h, &y2);
        let y3: [f64; 6] = std::array::from_fn(|i| y[i] + 0.5 * h * k2[i]);
        let k3 = f(t + 0.5 * h, &y3);
        let y4: [f64; 6] = std::array::from_fn(|i| y[i] + h * k3[i]);
        let k4 = f(t + h, &y4);
        y = std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]));
    }
    (
        PhasePoint { q: y[0], p: y[1] },
        Matrix2::new(y[2], y[4], y[3], y[5]),
    )
}

/// One period of the flow, `t ∈ [0, 2π]`; `q` stays on the universal cover.
pub fn poincare_map(point: PhasePoint, pot: &Potential) -> PhasePoint {
    flow(point, 0.0, TAU, DEFAULT_DT, pot)
}

/// Solutions of the two-point problem found by [`shoot_bvp`].
#[derive(Debug, Clone, Serialize)]
pub struct ShootResult {
    pub trajectories: Vec<Trajectory>,
    /// Final `|ξ(t) − x|` (mod 2π) for every seed, converged or not.
    pub seed_residuals: Vec<f64>,
}

/// Newton on `q0 ↦ ξ(t; q0, φ'(q0)) − x` (mod 2π) for every seed.
///
/// Converged paths are shifted by a multiple of 2π so that `ξ(t) = x` on the cover.
pub fn shoot_bvp(
    t: f64,
    x: f64,
    phi_prime: &(dyn Fn(f64) -> f64 + Sync),
    pot: &Potential,
    seeds: &[f64],
) -> Result<ShootResult> {
    if !(t > 0.0) {
        return Err(invalid("shooting needs t > 0"));
    }
    if seeds.is_empty() {
        return Err(invalid("shooting needs at least one seed"));
    }
    let (_, dt) = step_count(t, DEFAULT_DT.min(t / 100.0));
    let g = |q0: f64| {
        let end = flow(PhasePoint::new(q0, phi_prime(q0)), 0.0, t, dt, pot);
        centered_mod(end.q - x)
    };
    let outcomes: Vec<(f64, f64, bool)> = seeds
        .par_iter()
        .map(|&seed| {
            let mut q0 = seed;
            let mut r = g(q0);
            for _ in 0..60 {
                if r.abs() < 1e-11 {
                    break;
                }
                let h = 1e-6;
                let d = (g(q0 + h) - g(q0 - h)) / (2.0 * h);
                if d == 0.0 || !d.is_finite() {
                    break;
                }
                let mut step = -r / d;
                if step.abs() > 0.5 {
                    step = 0.5 * step.signum();
                }
                q0 += step;
                r = g(q0);
            }
            (q0, r.abs(), r.abs() < 1e-9)
        })
        .collect();
    let mut found: Vec<f64> = Vec::new();
    for &(q0, _, ok) in &outcomes {
        if ok && !found.iter().any(|&f| centered_mod(f - q0).abs() < 1e-6) {
            found.push(q0);
        }
    }
    let trajectories = found
        .into_iter()
        .map(|q0| {
            let tr = integrate_el(PhasePoint::new(q0, phi_prime(q0)), 0.0, t, dt, pot)?;
            let shift = tr.last().1 - x;
            let k = (shift / TAU).round() * TAU;
            Trajectory::new(
                tr.times().to_vec(),
                tr.positions().iter().map(|q| q - k).collect(),
                tr.velocities().to_vec(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ShootResult {
        trajectories,
        seed_residuals: outcomes.iter().map(|o| o.1).collect(),
    })
}

/// Largest `|Δ²q/dt² − V_x(t, q)|` over interior samples of a uniformly sampled path.
pub fn second_order_residual(traj: &Trajectory, pot: &Potential) -> Option<f64> {
    let h = traj.uniform_step()?;
    let (t, q) = (traj.times(), traj.positions());
    Some(
        (1..q.len() - 1)
            .map(|k| ((q[k + 1] - 2.0 * q[k] + q[k - 1]) / (h * h) - pot.gradient(t[k], q[k])).abs())
            .fold(0.0, f64::max),
    )
}

/// A fixed point of the `periods`-fold period map modulo 2π.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoincareFixedPoint {
    /// `q` reduced to `[0, 2π)`.
    pub point: PhasePoint,
    /// Advance of `q` per application of the map, in units of 2π.
    pub winding: i64,
    pub residual: f64,
    /// Determinant of the map's Jacobian (1 for an area-preserving map).
    pub jacobian_det: f64,
    /// Trace of the map's Jacobian; `|trace| > 2` means hyperbolic.
    pub jacobian_trace: f64,
}

impl PoincareFixedPoint {
    pub fn is_hyperbolic(&self) -> bool {
        self.jacobian_trace.abs() > 2.0
    }

    pub fn time_reversed(&self) -> PhasePoint {
        self.point.time_reversed()
    }
}

/// Parameters of a fixed-point scan.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct ScanConfig {
    pub q_seeds: usize,
    pub p_min: f64,
    pub p_max: f64,
    pub p_seeds: usize,
    pub periods: usize,
    pub tol: f64,
}

impl Default for ScanConfig {
    fn default() -> Self {
        Self {
            q_seeds: 64,
            p_min: -4.0,
            p_max: 4.0,
            p_seeds: 64,
            periods: 1,
            tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScanResult {
    pub fixed_points: Vec<PoincareFixedPoint>,
    /// Converged points with `det(J − I) ≈ 0`: a continuum of fixed points, as for free flow.
    pub degenerate_family: bool,
    /// Newton runs abandoned on a singular Jacobian.
    pub singular_seeds: usize,
    pub newton_runs: usize,
}

fn map_residual(
    z: PhasePoint,
    w: i64,
    span: f64,
    dt: f64,
    pot: &Potential,
) -> (Vector2<f64>, Matrix2<f64>) {
    let (end, j) = flow_with_jacobian(z, 0.0, span, dt, pot);
    let f = Vector2::new(end.q - z.q - TAU * w as f64, end.p - z.p);
    (f, j - Matrix2::identity())
}

enum NewtonOutcome {
    Converged(PhasePoint),
    Singular,
    Failed,
}

fn newton_fixed_point(
    seed: PhasePoint,
    w: i64,
    span: f64,
    dt: f64,
    pot: &Potential,
    p_window: (f64, f64),
    target: f64,
) -> NewtonOutcome {
    let mut z = seed;
    for it in 0..40 {
        let (f, a) = map_residual(z, w, span, dt, pot);
        if f.norm() < target {
            return NewtonOutcome::Converged(z);
        }
        // Runs still far from a root this late are wandering between basins.
        if it >= 15 && f.norm() > 1e-3 {
            return NewtonOutcome::Failed;
        }
        let step = match a.try_inverse() {
            Some(inv) if a.determinant().abs() > 1e-12 => -(inv * f),
            _ => match a.pseudo_inverse(1e-10) {
                Ok(pinv) if pinv.norm() > 0.0 => -(pinv * f),
                _ => return NewtonOutcome::Singular,
            },
        };
        let norm = step.norm();
        let step = if norm > 1.0 { step / norm } else { step };
        z = PhasePoint::new(z.q + step[0], z.p + step[1]);
        if z.p < p_window.0 || z.p > p_window.1 {
            return NewtonOutcome::Failed;
        }
    }
    NewtonOutcome::Failed
}

/// Newton scan for fixed points of the `periods`-fold period map over a seed grid and all
/// windings `|w| ≤ 3·periods`.
pub fn find_periodic_orbits(pot: &Potential, cfg: &ScanConfig) -> Result<ScanResult> {
    if cfg.q_seeds == 0 || cfg.p_seeds == 0 {
        return Err(invalid("seed grid is empty"));
    }
    if !(1..=4).contains(&cfg.periods) {
        return Err(invalid("periods must lie in 1..=4"));
    }
    if !(cfg.p_max > cfg.p_min) {
        return Err(invalid("empty velocity range"));
    }
    let span = TAU * cfg.periods as f64;
    let wmax = 3 * cfg.periods as i64;
    let window = (cfg.p_min - 2.0, cfg.p_max + 2.0);
    let mut jobs = Vec::new();
    for i in 0..cfg.q_seeds {
        for j in 0..cfg.p_seeds {
            let q = TAU * i as f64 / cfg.q_seeds as f64;
            let p = if cfg.p_seeds == 1 {
                0.5 * (cfg.p_min + cfg.p_max)
            } else {
                cfg.p_min + (cfg.p_max - cfg.p_min) * j as f64 / (cfg.p_seeds - 1) as f64
            };
            for w in -wmax..=wmax {
                jobs.push((PhasePoint::new(q, p), w));
            }
        }
    }
    let outcomes: Vec<(NewtonOutcome, i64)> = jobs
        .par_iter()
        .map(|&(z, w)| (newton_fixed_point(z, w, span, COARSE_DT, pot, window, 1e-9), w))
        .collect();
    let singular_seeds = outcomes
        .iter()
        .filter(|(o, _)| matches!(o, NewtonOutcome::Singular))
        .count();
    let mut coarse: Vec<(PhasePoint, i64)> = Vec::new();
    for (o, w) in &outcomes {
        if let NewtonOutcome::Converged(z) = o {
            let z = PhasePoint::new(wrap(z.q), z.p);
            let dup = coarse.iter().any(|(c, cw)| {
                *cw == *w && centered_mod(c.q - z.q).abs() < 1e-3 && (c.p - z.p).abs() < 1e-3
            });
            if !dup {
                coarse.push((z, *w));
            }
        }
    }
    let mut degenerate = false;
    let mut fixed_points: Vec<PoincareFixedPoint> = Vec::new();
    for (z, w) in coarse {
        let polished = match newton_fixed_point(z, w, span, DEFAULT_DT, pot, window, 1e-11) {
            NewtonOutcome::Converged(p) => p,
            _ => z,
        };
        let (f, a) = map_residual(polished, w, span, DEFAULT_DT, pot);
        let j = a + Matrix2::identity();
        if a.determinant().abs() < 1e-8 {
            degenerate = true;
        }
        let fp = PoincareFixedPoint {
            point: PhasePoint::new(wrap(polished.q), polished.p),
            winding: w,
            residual: f.norm(),
            jacobian_det: j.determinant(),
            jacobian_trace: j.trace(),
        };
        if fp.residual >= cfg.tol || fp.point.p < cfg.p_min - 1e-9 || fp.point.p > cfg.p_max + 1e-9 {
            continue;
        }
        let dup = fixed_points.iter().any(|o| {
            o.winding == w
                && centered_mod(o.point.q - fp.point.q).abs() < DEDUP_RADIUS
                && (o.point.p - fp.point.p).abs() < DEDUP_RADIUS
        });
        if !dup {
            fixed_points.push(fp);
        }
    }
    fixed_points.sort_by(|a, b| {
        a.winding
            .cmp(&b.winding)
            .then(a.point.q.total_cmp(&b.point.q))
            .then(a.point.p.total_cmp(&b.point.p))
    });
    Ok(ScanResult {
        fixed_points,
        degenerate_family: degenerate,
        singular_seeds,
        newton_runs: jobs.len(),
    })
}
