//! Entropy solutions of `u_t + (u²/2)_x = V_x` and the measurements made on them.
//!
//! The solver is a Godunov finite-volume scheme with the source added by
//! Strang splitting. Shocks are found by post-processing the cell averages.
//! Characteristics, backward flows, synchronization and the attractor
//! classification all read the run through bilinear space-time interpolation.

use std::f64::consts::{PI, TAU};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::{
    centered_mod, dist_to_lattice, interp_periodic, wrap, PeriodicField, Potential, SpatialGrid,
    Trajectory,
};

/// Default spacing of stored slices.
pub const DEFAULT_OUT_DT: f64 = TAU / 256.0;

/// Default Courant number.
pub const DEFAULT_CFL: f64 = 0.9;

/// Largest `k` tried when looking for synchronization.
pub const MAX_SYNC_K: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    FiniteVolume,
    FrontTracking,
}

/// Stored slices of an inviscid solution.
#[derive(Debug, Clone, Serialize)]
pub struct InviscidRun {
    pub times: Vec<f64>,
    pub slices: Vec<PeriodicField>,
    pub scheme: Scheme,
    /// Slices cover exactly one time period `2π` and repeat.
    pub periodic: bool,
}

impl InviscidRun {
    /// Periodic run from slices over one period, first and last slice inclusive.
    pub fn periodic_from(times: Vec<f64>, slices: Vec<PeriodicField>) -> Result<Self> {
        if times.len() < 2 || times.len() != slices.len() {
            return Err(invalid("periodic run needs matching times and slices"));
        }
        let span = times[times.len() - 1] - times[0];
        if (span - TAU).abs() > 1e-9 {
            return Err(invalid(format!("periodic run spans {span}, not 2π")));
        }
        Ok(Self {
            times,
            slices,
            scheme: Scheme::FiniteVolume,
            periodic: true,
        })
    }

    pub fn grid(&self) -> SpatialGrid {
        self.slices[0].grid()
    }

    pub fn out_dt(&self) -> f64 {
        (self.times[self.times.len() - 1] - self.times[0]) / (self.times.len() - 1) as f64
    }

    pub fn t_start(&self) -> f64 {
        self.times[0]
    }

    pub fn t_end(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    pub fn last(&self) -> &PeriodicField {
        &self.slices[self.slices.len() - 1]
    }

    /// Bilinear interpolation; periodic runs wrap `t` into their period, others clamp.
    pub fn sample(&self, t: f64, x: f64) -> f64 {
        let t0 = self.t_start();
        let h = self.out_dt();
        let last = self.times.len() - 1;
        let tau = if self.periodic {
            (t - t0).rem_euclid(TAU)
        } else {
            (t - t0).clamp(0.0, self.t_end() - t0)
        };
        let s = tau / h;
        let k = (s.floor() as usize).min(last - 1);
        let w = s - k as f64;
        let dx = self.grid().dx();
        let a = interp_periodic(self.slices[k].values(), dx, x);
        let b = interp_periodic(self.slices[k + 1].values(), dx, x);
        a * (1.0 - w) + b * w
    }
}

#[inline]
fn godunov_flux(ul: f64, ur: f64) -> f64 {
    let a = ul.max(0.0);
    let b = ur.min(0.0);
    0.5 * (a * a).max(b * b)
}

/// One Strang step: half source, Godunov transport, half source.
#[derive(Debug, Clone)]
pub struct GodunovStepper {
    dx: f64,
    nodes: Vec<f64>,
    flux: Vec<f64>,
}

impl GodunovStepper {
    pub fn new(grid: SpatialGrid) -> Self {
        Self {
            dx: grid.dx(),
            nodes: grid.nodes(),
            flux: vec![0.0; grid.n_points()],
        }
    }

    fn source(&self, u: &mut [f64], pot: &Potential, t_mid: f64, h: f64) {
        for (v, &x) in u.iter_mut().zip(&self.nodes) {
            *v += h * pot.gradient(t_mid, x);
        }
    }

    /// Transport only.
    pub fn transport(&mut self, u: &mut [f64], dt: f64) {
        let n = u.len();
        for j in 0..n {
            self.flux[j] = godunov_flux(u[j], u[(j + 1) % n]);
        }
        let r = dt / self.dx;
        let last = self.flux[n - 1];
        for j in (1..n).rev() {
            u[j] -= r * (self.flux[j] - self.flux[j - 1]);
        }
        u[0] -= r * (self.flux[0] - last);
    }

    pub fn step(&mut self, u: &mut [f64], pot: &Potential, t: f64, dt: f64) {
        self.source(u, pot, t + 0.25 * dt, 0.5 * dt);
        self.transport(u, dt);
        self.source(u, pot, t + 0.75 * dt, 0.5 * dt);
    }
}

/// `6π K2 + √(6 K1 + 6π K2)` for the mean-free part of the forcing.
pub fn l2_bound(pot: &Potential) -> f64 {
    let (k1, k2) = pot.drift_constants();
    6.0 * PI * k2 + (6.0 * k1 + 6.0 * PI * k2).sqrt()
}

/// Entropy solution from `u0` at `t0` to `t1`, slices every `out_dt` (adjusted to divide the span).
///
/// Fails with a divergence error once `max|u|` exceeds ten times the larger of
/// the L² bound and `sup|u0|`.
pub fn solve_inviscid_on(
    u0: &PeriodicField,
    pot: &Potential,
    t0: f64,
    t1: f64,
    cfl: f64,
    out_dt: f64,
) -> Result<InviscidRun> {
    if !(cfl > 0.0 && cfl < 1.0) {
        return Err(invalid(format!("cfl must lie in (0,1), got {cfl}")));
    }
    if !(t1 > t0) {
        return Err(invalid(format!("empty interval [{t0}, {t1}]")));
    }
    if !(out_dt > 0.0) {
        return Err(invalid("output spacing must be positive"));
    }
    let grid = u0.grid();
    let dx = grid.dx();
    let limit = 10.0 * l2_bound(pot).max(u0.sup_norm()).max(1.0);
    let k2 = pot.bounds().sup_grad;
    let n_out = ((t1 - t0) / out_dt - 1e-9).ceil().max(1.0) as usize;
    let h_out = (t1 - t0) / n_out as f64;
    let mut stepper = GodunovStepper::new(grid);
    let mut u = u0.values().to_vec();
    let mut times = vec![t0];
    let mut slices = vec![u0.clone()];
    for k in 0..n_out {
        let ta = t0 + k as f64 * h_out;
        let umax = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let speed = umax + h_out * k2;
        let sub = ((h_out * speed) / (cfl * dx)).ceil().max(1.0) as usize;
        let dt = h_out / sub as f64;
        for m in 0..sub {
            stepper.step(&mut u, pot, ta + m as f64 * dt, dt);
        }
        let t = t0 + (k + 1) as f64 * h_out;
        let max_abs = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(max_abs <= limit) {
            return Err(Error::Divergence {
                time: t,
                max_abs,
                limit,
            });
        }
        times.push(t);
        slices.push(PeriodicField::new(grid, u.clone())?);
    }
    Ok(InviscidRun {
        times,
        slices,
        scheme: Scheme::FiniteVolume,
        periodic: false,
    })
}

/// Entropy solution on `[0, t_end]` with the default slice spacing.
pub fn solve_inviscid(
    u0: &PeriodicField,
    pot: &Potential,
    t_end: f64,
    grid: SpatialGrid,
    cfl: f64,
) -> Result<InviscidRun> {
    if u0.grid() != grid {
        return Err(invalid("initial field lives on a different grid"));
    }
    solve_inviscid_on(u0, pot, 0.0, t_end, cfl, DEFAULT_OUT_DT)
}

/// Speed of an admissible jump, the mean of its traces.
pub fn shock_speed(u_left: f64, u_right: f64) -> Result<f64> {
    if u_left < u_right {
        return Err(Error::InadmissibleJump {
            left: u_left,
            right: u_right,
        });
    }
    Ok(0.5 * (u_left + u_right))
}

/// `sup φ'' + t·Kxx`.
pub fn derivative_upper_bound(phi_xx_sup: f64, pot: &Potential, t: f64) -> f64 {
    phi_xx_sup + t * pot.bounds().sup_second
}

/// Largest forward difference quotient `(u_{j+1} − u_j)/Δx`.
pub fn max_upward_slope(u: &PeriodicField) -> f64 {
    let v = u.values();
    let n = v.len();
    let dx = u.grid().dx();
    (0..n)
        .map(|j| (v[(j + 1) % n] - v[j]) / dx)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// A discontinuity found in one slice.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShockSite {
    pub position: f64,
    pub left: f64,
    pub right: f64,
}

/// Jumps steeper than `threshold` per cell, located by equal area.
pub fn detect_shocks(u: &PeriodicField, threshold: f64) -> Vec<ShockSite> {
    let v = u.values();
    let n = v.len();
    let dx = u.grid().dx();
    let steep: Vec<bool> = (0..n).map(|j| v[(j + 1) % n] - v[j] < -threshold).collect();
    if steep.iter().all(|&s| s) {
        return Vec::new();
    }
    let start = (0..n).find(|&j| !steep[j]).unwrap();
    let mut sites = Vec::new();
    let mut j = 0;
    while j < n {
        let a = (start + j) % n;
        if !steep[a] {
            j += 1;
            continue;
        }
        let mut len = 0;
        while len < n && steep[(a + len) % n] {
            len += 1;
        }
        j += len;
        // Steep jumps a..a+len-1 connect nodes a..a+len; one cell of margin on each side.
        let l = a as isize - 1;
        let r = (a + len) as isize + 1;
        let idx = |k: isize| v[k.rem_euclid(n as isize) as usize];
        let left = idx(l) + (idx(l) - idx(l - 1)) * 0.5;
        let right = idx(r) - (idx(r + 1) - idx(r)) * 0.5;
        let width = (r - l + 1) as f64 * dx;
        let e0 = l as f64 * dx - 0.5 * dx;
        let total: f64 = (l..=r).map(idx).sum::<f64>() * dx;
        let pos = if left > right {
            e0 + ((total - right * width) / (left - right)).clamp(0.0, width)
        } else {
            e0 + 0.5 * width
        };
        // Traces: linear extrapolation from the two cells beyond the margin.
        let lt = idx(l) + (idx(l) - idx(l - 1)) * ((pos - l as f64 * dx) / dx);
        let rt = idx(r) + (idx(r) - idx(r + 1)) * ((r as f64 * dx - pos) / dx);
        sites.push(ShockSite {
            position: wrap(pos),
            left: lt,
            right: rt,
        });
    }
    sites
}

/// A shock followed across slices.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShockRecord {
    pub birth: f64,
    pub times: Vec<f64>,
    /// Unwrapped positions.
    pub positions: Vec<f64>,
    pub left: Vec<f64>,
    pub right: Vec<f64>,
}

impl ShockRecord {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn death(&self) -> f64 {
        self.times[self.times.len() - 1]
    }

    /// Measured `dθ/dt` at sample `k` by centered (one-sided at the ends) differences.
    pub fn measured_speed(&self, k: usize) -> Option<f64> {
        let m = self.len();
        if m < 2 {
            return None;
        }
        let (a, b) = if k == 0 {
            (0, 1)
        } else if k == m - 1 {
            (m - 2, m - 1)
        } else {
            (k - 1, k + 1)
        };
        Some((self.positions[b] - self.positions[a]) / (self.times[b] - self.times[a]))
    }

    /// Mean of the traces at sample `k`.
    pub fn rh_speed(&self, k: usize) -> f64 {
        0.5 * (self.left[k] + self.right[k])
    }

    /// Position at time `t` if the record is alive then.
    pub fn position_at(&self, t: f64) -> Option<f64> {
        if t < self.times[0] - 1e-12 || t > self.death() + 1e-12 {
            return None;
        }
        if self.len() == 1 {
            return Some(self.positions[0]);
        }
        let k = self
            .times
            .partition_point(|&s| s <= t)
            .clamp(1, self.len() - 1);
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = ((t - t0) / (t1 - t0)).clamp(0.0, 1.0);
        Some(self.positions[k - 1] * (1.0 - w) + self.positions[k] * w)
    }

    /// Largest `|measured speed − mean of traces|`.
    pub fn max_rh_deviation(&self) -> Option<f64> {
        (0..self.len())
            .filter_map(|k| self.measured_speed(k).map(|s| (s - self.rh_speed(k)).abs()))
            .reduce(f64::max)
    }
}

/// Default detection threshold: `5·max(upward slope, 1)·Δx` over the run.
pub fn default_shock_threshold(run: &InviscidRun) -> f64 {
    let c = run
        .slices
        .iter()
        .map(max_upward_slope)
        .fold(1.0_f64, f64::max);
    5.0 * c * run.grid().dx()
}

/// Detect shocks in every slice and link them into records by nearest position.
pub fn track_shocks(run: &InviscidRun, threshold: f64) -> Vec<ShockRecord> {
    let dx = run.grid().dx();
    let h = run.out_dt();
    let mut done: Vec<ShockRecord> = Vec::new();
    let mut open: Vec<ShockRecord> = Vec::new();
    for (t, slice) in run.times.iter().zip(&run.slices) {
        let sites = detect_shocks(slice, threshold);
        let mut claimed = vec![false; sites.len()];
        let mut next_open = Vec::new();
        for mut rec in open.drain(..) {
            let last = *rec.positions.last().unwrap();
            let lp = 0.5 * (rec.left.last().unwrap() + rec.right.last().unwrap());
            let guess = last + lp * h;
            let reach = 4.0 * dx + 0.5 * h * (rec.left.last().unwrap() - rec.right.last().unwrap()).abs();
            let best = sites
                .iter()
                .enumerate()
                .filter(|(i, _)| !claimed[*i])
                .map(|(i, s)| (i, centered_mod(s.position - guess)))
                .filter(|(_, d)| d.abs() <= reach)
                .min_by(|a, b| a.1.abs().total_cmp(&b.1.abs()));
            match best {
                Some((i, d)) => {
                    claimed[i] = true;
                    rec.times.push(*t);
                    rec.positions.push(guess + d);
                    rec.left.push(sites[i].left);
                    rec.right.push(sites[i].right);
                    next_open.push(rec);
                }
                None => done.push(rec),
            }
        }
        for (i, s) in sites.iter().enumerate() {
            if !claimed[i] {
                next_open.push(ShockRecord {
                    birth: *t,
                    times: vec![*t],
                    positions: vec![s.position],
                    left: vec![s.left],
                    right: vec![s.right],
                });
            }
        }
        open = next_open;
    }
    done.extend(open);
    done.sort_by(|a, b| a.birth.total_cmp(&b.birth));
    done
}

/// A forward characteristic and the time it met a shock, if it did.
#[derive(Debug, Clone, Serialize)]
pub struct Characteristic {
    pub trajectory: Trajectory,
    pub absorbed_at: Option<f64>,
}

fn rk4_flow(f: impl Fn(f64, f64) -> f64, t: f64, y: f64, h: f64) -> f64 {
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, y + 0.5 * h * k1);
    let k3 = f(t + 0.5 * h, y + 0.5 * h * k2);
    let k4 = f(t + h, y + h * k3);
    y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// RK4 for `dθ/dt = u(t,θ)` from `x0` at the run's start; stops when a tracked shock is met.
pub fn forward_characteristic(
    run: &InviscidRun,
    x0: f64,
    shocks: &[ShockRecord],
) -> Result<Characteristic> {
    let dx = run.grid().dx();
    let h = run.out_dt() / 4.0;
    let steps = ((run.t_end() - run.t_start()) / h).round() as usize;
    let t0 = run.t_start();
    let mut times = vec![t0];
    let mut pos = vec![x0];
    let mut vel = vec![run.sample(t0, x0)];
    let mut absorbed_at = None;
    let mut y = x0;
    for k in 0..steps {
        let t = t0 + k as f64 * h;
        let y_new = rk4_flow(|s, q| run.sample(s, q), t, y, h);
        let t_new = t + h;
        times.push(t_new);
        pos.push(y_new);
        vel.push(run.sample(t_new, y_new));
        let hit = shocks.iter().any(|s| {
            let (Some(a), Some(b)) = (s.position_at(t), s.position_at(t_new)) else {
                return false;
            };
            let before = centered_mod(y - a);
            let after = centered_mod(y_new - b);
            after.abs() < 1.5 * dx || (before.signum() != after.signum() && before.abs() < PI / 2.0)
        });
        y = y_new;
        if hit {
            absorbed_at = Some(t_new);
            break;
        }
    }
    Ok(Characteristic {
        trajectory: Trajectory::new(times, pos, vel)?,
        absorbed_at,
    })
}

/// Default step of backward flows.
pub const BACKWARD_DS: f64 = TAU / 512.0;

/// RK4 for `dθ̃/ds = −u(t_start − s, θ̃)` on `[0, horizon]`.
pub fn backward_flow(run: &InviscidRun, t_start: f64, x: f64, horizon: f64) -> Result<Trajectory> {
    backward_flow_with_step(run, t_start, x, horizon, BACKWARD_DS)
}

pub fn backward_flow_with_step(
    run: &InviscidRun,
    t_start: f64,
    x: f64,
    horizon: f64,
    ds: f64,
) -> Result<Trajectory> {
    if !(horizon > 0.0) {
        return Err(invalid("backward flow needs a positive horizon"));
    }
    let steps = (horizon / ds - 1e-9).ceil().max(1.0) as usize;
    let h = horizon / steps as f64;
    let f = |s: f64, q: f64| -run.sample(t_start - s, q);
    let mut times = Vec::with_capacity(steps + 1);
    let mut pos = Vec::with_capacity(steps + 1);
    let mut vel = Vec::with_capacity(steps + 1);
    let mut y = x;
    for k in 0..=steps {
        let s = k as f64 * h;
        times.push(s);
        pos.push(y);
        vel.push(f(s, y));
        if k < steps {
            y = rk4_flow(f, s, y, h);
        }
    }
    Trajectory::new(times, pos, vel)
}

/// `dist(k(Z(x) − Z(y)), 2πℤ)` along backward flows, sampled at whole periods.
pub fn sync_measure(run: &InviscidRun, x: f64, y: f64, k: usize, horizon: f64) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(invalid("k must be positive"));
    }
    let periods = (horizon / TAU + 1e-9).floor() as usize;
    if periods == 0 {
        return Err(invalid("sync horizon shorter than one period"));
    }
    let span = periods as f64 * TAU;
    let zx = backward_flow(run, 0.0, x, span)?;
    let zy = backward_flow(run, 0.0, y, span)?;
    let per = (zx.len() - 1) / periods;
    Ok((0..=periods)
        .map(|m| dist_to_lattice(k as f64 * (zx.positions()[m * per] - zy.positions()[m * per])))
        .collect())
}

/// Smallest `k ≤ 8` whose measure ends below `tol`, with the sequence it produced.
pub fn smallest_sync_k(
    run: &InviscidRun,
    x: f64,
    y: f64,
    horizon: f64,
    tol: f64,
) -> Result<Option<(usize, Vec<f64>)>> {
    for k in 1..=MAX_SYNC_K {
        let seq = sync_measure(run, x, y, k, horizon)?;
        if *seq.last().unwrap() < tol {
            return Ok(Some((k, seq)));
        }
    }
    Ok(None)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Branch {
    /// Backward flows track `−s + sin s` modulo 2π.
    TypeA,
    /// Backward flows track `π + s + sin s` modulo 2π.
    TypeB,
}

#[derive(Debug, Clone, Serialize)]
pub struct Classification {
    pub branch: Branch,
    pub max_deviation: f64,
    /// Per sample: (deviation from TypeA, deviation from TypeB).
    pub deviations: Vec<(f64, f64)>,
}

/// Late-time deviations of one backward flow from both branches.
pub fn branch_deviations(traj: &Trajectory, tail_from: f64) -> (f64, f64) {
    let mut a = 0.0_f64;
    let mut b = 0.0_f64;
    for (&s, &q) in traj.times().iter().zip(traj.positions()) {
        if s + 1e-12 < tail_from {
            continue;
        }
        a = a.max(dist_to_lattice(q + s - s.sin()));
        b = b.max(dist_to_lattice(q - PI - s - s.sin()));
    }
    (a, b)
}

/// Classify the long-time behaviour of backward flows started at `2πi/samples`.
pub fn attractor_classification(
    run: &InviscidRun,
    samples: usize,
    horizon: f64,
) -> Result<Classification> {
    if samples == 0 {
        return Err(invalid("need at least one sample"));
    }
    let tail_from = 0.75 * horizon;
    let deviations: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let x = TAU * i as f64 / samples as f64;
            backward_flow(run, 0.0, x, horizon).map(|t| branch_deviations(&t, tail_from))
        })
        .collect::<Result<_>>()?;
    let a_count = deviations.iter().filter(|(a, b)| a <= b).count();
    let branch = if a_count == samples {
        Branch::TypeA
    } else if a_count == 0 {
        Branch::TypeB
    } else {
        return Err(Error::Ambiguous(format!(
            "{a_count} of {samples} samples favour TypeA; raise the horizon"
        )));
    };
    let max_deviation = deviations
        .iter()
        .map(|&(a, b)| if branch == Branch::TypeA { a } else { b })
        .fold(0.0, f64::max);
    Ok(Classification {
        branch,
        max_deviation,
        deviations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn grid(n: usize) -> SpatialGrid {
        SpatialGrid::new(n).unwrap()
    }

    #[test]
    fn shock_speed_examples() {
        assert_eq!(shock_speed(1.0, -1.0).unwrap(), 0.0);
        assert_eq!(shock_speed(2.0, 0.0).unwrap(), 1.0);
        assert_eq!(shock_speed(3.0, 1.0).unwrap(), 2.0);
        assert!(matches!(
            shock_speed(0.0, 1.0),
            Err(Error::InadmissibleJump { .. })
        ));
    }

    #[test]
    fn derivative_bound_examples() {
        let p = Potential::forced();
        assert_eq!(derivative_upper_bound(0.0, &p, 3.0), 3.0);
        assert_abs_diff_eq!(derivative_upper_bound(1.0, &p, TAU), 1.0 + TAU);
    }

    #[test]
    fn zero_stays_zero() {
        let g = grid(64);
        let run = solve_inviscid(&PeriodicField::zeros(g), &Potential::zero(), 1.0, g, 0.9).unwrap();
        assert!(run.slices.iter().all(|s| s.sup_norm() == 0.0));
        assert!(track_shocks(&run, 0.1).is_empty());
    }

    #[test]
    fn rejects_bad_cfl() {
        let g = grid(16);
        assert!(solve_inviscid(&PeriodicField::zeros(g), &Potential::zero(), 1.0, g, 1.2).is_err());
    }

    #[test]
    fn riemann_shock_is_stationary() {
        let g = grid(128);
        let u0 = PeriodicField::from_fn(g, |x| if x < PI { 1.0 } else { -1.0 });
        let run = solve_inviscid(&u0, &Potential::zero(), 0.5, g, 0.9).unwrap();
        let sites = detect_shocks(run.last(), 0.2);
        let mid = sites
            .iter()
            .find(|s| (s.position - PI).abs() < 0.5)
            .expect("shock near π");
        assert!((mid.position - PI).abs() < 2.0 * g.dx());
    }

    #[test]
    fn constant_velocity_characteristic() {
        let g = grid(64);
        let u0 = PeriodicField::constant(g, 1.0);
        let run = solve_inviscid(&u0, &Potential::zero(), 2.0, g, 0.9).unwrap();
        let c = forward_characteristic(&run, 0.5, &[]).unwrap();
        let (t, q, _) = c.trajectory.last();
        assert_abs_diff_eq!(q, 0.5 + t, epsilon = 1e-10);
        assert!(c.absorbed_at.is_none());
    }

    #[test]
    fn synthetic_type_a_run() {
        let g = grid(32);
        let times: Vec<f64> = (0..=256).map(|k| TAU * k as f64 / 256.0).collect();
        let slices = times
            .iter()
            .map(|&t| PeriodicField::constant(g, 1.0 - t.cos()))
            .collect();
        let run = InviscidRun::periodic_from(times, slices).unwrap();
        let c = attractor_classification(&run, 1, 8.0 * PI).unwrap();
        assert_eq!(c.branch, Branch::TypeA);
        assert!(c.max_deviation < 1e-3, "{}", c.max_deviation);
    }

    #[test]
    fn sync_trivial_cases() {
        let g = grid(32);
        let times: Vec<f64> = (0..=64).map(|k| TAU * k as f64 / 64.0).collect();
        let slices = times.iter().map(|_| PeriodicField::zeros(g)).collect();
        let run = InviscidRun::periodic_from(times, slices).unwrap();
        let s = sync_measure(&run, 1.0, 1.0, 1, 3.0 * TAU).unwrap();
        assert!(s.iter().all(|&v| v == 0.0));
        let s = sync_measure(&run, 0.3, 2.0, 2, 3.0 * TAU).unwrap();
        let expected = dist_to_lattice(2.0 * (0.3 - 2.0));
        assert!(s.iter().all(|&v| (v - expected).abs() < 1e-12));
        let b = backward_flow(&run, 0.0, 1.2, 5.0).unwrap();
        assert!(b.positions().iter().all(|&q| q == 1.2));
    }

    #[test]
    fn backward_flow_constant_speed() {
        let g = grid(32);
        let times: Vec<f64> = (0..=64).map(|k| TAU * k as f64 / 64.0).collect();
        let slices = times.iter().map(|_| PeriodicField::constant(g, 0.7)).collect();
        let run = InviscidRun::periodic_from(times, slices).unwrap();
        let b = backward_flow(&run, 0.0, 1.0, 4.0).unwrap();
        let (s, q, _) = b.last();
        assert_abs_diff_eq!(q, 1.0 - 0.7 * s, epsilon = 1e-10);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn godunov_flux_is_consistent(u in -5.0..5.0f64) {
            prop_assert!((godunov_flux(u, u) - 0.5 * u * u).abs() < 1e-14);
        }

        #[test]
        fn transport_conserves_mass(vals in proptest::collection::vec(-3.0..3.0f64, 32)) {
            let g = SpatialGrid::new(32).unwrap();
            let mut st = GodunovStepper::new(g);
            let mut u = vals.clone();
            let before: f64 = u.iter().sum();
            let dt = 0.9 * g.dx() / 3.0;
            st.step(&mut u, &Potential::forced(), 0.3, dt);
            let after: f64 = u.iter().sum();
            prop_assert!(((after - before) * g.dx()).abs() < 1e-12);
        }
    }
}
