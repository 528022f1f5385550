//! Viscous solvers.
//!
//! The log-transform `u = −ε (log U)_x` turns the viscous equation into the
//! linear problem `U_t = (ε/2) U_xx − (1/ε) V U`, solved here by Strang
//! splitting: a half-step potential factor, an exact step of the discrete heat
//! semigroup, and a second half-step factor. The heat step is a circulant
//! convolution with the lattice heat kernel `e^{−2s} I_k(2s)`, which is
//! positive, so `U` stays strictly positive at any step size.
//!
//! `U` is rescaled by its maximum after every step; the accumulated scale is
//! kept in log form so `−ε log U` remains available at small `ε`.

use std::io::{Read, Write};

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::field::{centered_derivative, InitialCost, PeriodicField, Potential, SpatialGrid};

/// Kernel entries below this (log, relative to a unit mass) are dropped.
const KERNEL_LOG_CUTOFF: f64 = -46.0;

/// Default step for the log-transform solver.
pub const DEFAULT_DT: f64 = 1e-2;

/// Paths per Monte-Carlo block; block `b` is seeded with `seed + b`.
pub const MC_BLOCK: usize = 4096;

const PROP_MAGIC: &[u8; 4] = b"PROP";
const PROP_VERSION: u32 = 1;

/// Log of `e^{−2s} I_m(2s)` by summing the Bessel series in log space.
fn log_lattice_heat(m: usize, s: f64, log_m_factorial: f64) -> f64 {
    let ls = s.ln();
    let mut lt = m as f64 * ls - log_m_factorial - 2.0 * s;
    let mut best = lt;
    let mut acc = 1.0;
    let mut i = 0usize;
    loop {
        let next = lt + 2.0 * ls - ((i + 1) as f64).ln() - ((i + m + 1) as f64).ln();
        i += 1;
        lt = next;
        if lt > best {
            acc = acc * (best - lt).exp() + 1.0;
            best = lt;
        } else {
            acc += (lt - best).exp();
        }
        let ratio = s * s / ((i + 1) as f64 * (i + m + 1) as f64);
        if ratio < 1.0 && lt < best - 40.0 {
            break;
        }
    }
    best + acc.ln()
}

/// Periodic heat kernel of the discrete Laplacian on `n` nodes for `s = τ(ε/2)/Δx²`,
/// as `(offset, weight)` pairs; weights sum to one.
pub(crate) fn heat_kernel(n: usize, s: f64) -> Vec<(usize, f64)> {
    if s <= 0.0 {
        return vec![(0, 1.0)];
    }
    let mut weights = vec![0.0; n];
    let mut log_fact = 0.0;
    let mut m = 0usize;
    loop {
        if m > 0 {
            log_fact += (m as f64).ln();
        }
        let lp = log_lattice_heat(m, s, log_fact);
        if lp < KERNEL_LOG_CUTOFF && m as f64 > 2.0 * s {
            break;
        }
        let p = lp.exp();
        weights[m % n] += p;
        if m > 0 {
            weights[(n - m % n) % n] += p;
        }
        m += 1;
    }
    let total: f64 = weights.iter().sum();
    weights
        .into_iter()
        .enumerate()
        .filter(|(_, w)| *w > 0.0)
        .map(|(k, w)| (k, w / total))
        .collect()
}

/// out_i = Σ_k w_k x_{i−k}
fn circulant_apply(kernel: &[(usize, f64)], x: &[f64], out: &mut [f64]) {
    let n = x.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    for &(k, w) in kernel {
        let (head, tail) = out.split_at_mut(k);
        for (o, xv) in tail.iter_mut().zip(&x[..n - k]) {
            *o += w * xv;
        }
        for (o, xv) in head.iter_mut().zip(&x[n - k..]) {
            *o += w * xv;
        }
    }
}

/// One Strang step of the linear equation on a fixed grid and step size.
#[derive(Debug, Clone)]
pub struct StrangStepper {
    eps: f64,
    dt: f64,
    kernel: Vec<(usize, f64)>,
    nodes: Vec<f64>,
}

impl StrangStepper {
    pub fn new(grid: SpatialGrid, eps: f64, dt: f64) -> Result<Self> {
        if !(eps > 0.0) || !eps.is_finite() {
            return Err(invalid(format!("viscosity must be positive, got {eps}")));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(invalid(format!("time step must be positive, got {dt}")));
        }
        let dx = grid.dx();
        let s = dt * 0.5 * eps / (dx * dx);
        Ok(Self {
            eps,
            dt,
            kernel: heat_kernel(grid.n_points(), s),
            nodes: grid.nodes(),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Half-step potential factors `exp(−dt·V(t + dt/2, x)/(2ε))`.
    fn factors(&self, pot: &Potential, t: f64) -> Vec<f64> {
        let tm = t + 0.5 * self.dt;
        let c = -0.5 * self.dt / self.eps;
        self.nodes
            .iter()
            .map(|&x| (c * pot.value(tm, x)).exp())
            .collect()
    }

    /// Advance `u` from `t` to `t + dt`; `scratch` must have the grid length.
    pub fn step(&self, pot: &Potential, t: f64, u: &mut [f64], scratch: &mut [f64]) {
        let d = self.factors(pot, t);
        u.iter_mut().zip(&d).for_each(|(v, f)| *v *= f);
        circulant_apply(&self.kernel, u, scratch);
        u.iter_mut()
            .zip(scratch.iter().zip(&d))
            .for_each(|(v, (s, f))| *v = s * f);
    }
}

/// Step count and uniform step covering `[0, span]` with steps no larger than `dt`.
pub fn uniform_steps(span: f64, dt: f64) -> (usize, f64) {
    let steps = ((span / dt) - 1e-9).ceil().max(1.0) as usize;
    (steps, span / steps as f64)
}

fn rescale(u: &mut [f64]) -> f64 {
    let m = u.iter().cloned().fold(0.0_f64, f64::max);
    u.iter_mut().for_each(|v| *v /= m);
    m.ln()
}

/// Kernel of the linear evolution from `t0` to `t1`, stored as a density:
/// `U(t1, x_i) ≈ Σ_j P_ij U(t0, x_j) Δx` with `P_ij = entries_ij · e^{log_scale}`.
#[derive(Debug, Clone, PartialEq)]
pub struct PropagatorMatrix {
    pub eps: f64,
    pub t0: f64,
    pub t1: f64,
    pub grid: SpatialGrid,
    pub entries: DMatrix<f64>,
    pub log_scale: f64,
}

impl PropagatorMatrix {
    pub fn n(&self) -> usize {
        self.grid.n_points()
    }

    /// Unscaled entry `P_ij`.
    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.entries[(i, j)] * self.log_scale.exp()
    }

    pub fn min_entry(&self) -> f64 {
        self.entries.min() * self.log_scale.exp()
    }

    pub fn is_strictly_positive(&self) -> bool {
        self.entries.iter().all(|&v| v > 0.0)
    }

    /// `Σ_j P_ij Δx`.
    pub fn row_mass(&self, i: usize) -> f64 {
        self.entries.row(i).sum() * self.grid.dx() * self.log_scale.exp()
    }

    /// Apply to sampled data; returns values up to the factor `e^{log_scale}`.
    pub fn apply_scaled(&self, u: &[f64]) -> (Vec<f64>, f64) {
        let v = nalgebra::DVector::from_column_slice(u);
        let out = &self.entries * v * self.grid.dx();
        (out.as_slice().to_vec(), self.log_scale)
    }

    /// The matrix `P·Δx` acting on node values, rescaled to unit max.
    pub fn value_map(&self) -> DMatrix<f64> {
        &self.entries * self.grid.dx()
    }

    /// Propagator over `[earlier.t0, later.t1]`.
    pub fn compose(later: &Self, earlier: &Self) -> Result<Self> {
        if later.grid != earlier.grid || later.eps != earlier.eps {
            return Err(invalid("propagators differ in grid or viscosity"));
        }
        if (later.t0 - earlier.t1).abs() > 1e-12 {
            return Err(invalid("propagator intervals are not adjacent"));
        }
        let mut entries = &later.entries * &earlier.entries * later.grid.dx();
        let m = entries.max();
        entries /= m;
        Ok(Self {
            eps: later.eps,
            t0: earlier.t0,
            t1: later.t1,
            grid: later.grid,
            entries,
            log_scale: later.log_scale + earlier.log_scale + m.ln(),
        })
    }

    /// Little-endian dump: 16-byte header (`PROP`, format version, `n`), then
    /// `eps, t0, t1, log_scale` and the row-major entries.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        let n = self.n();
        w.write_all(PROP_MAGIC)?;
        w.write_all(&PROP_VERSION.to_le_bytes())?;
        w.write_all(&(n as u64).to_le_bytes())?;
        for v in [self.eps, self.t0, self.t1, self.log_scale] {
            w.write_all(&v.to_le_bytes())?;
        }
        for i in 0..n {
            for j in 0..n {
                w.write_all(&self.entries[(i, j)].to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut header = [0u8; 16];
        r.read_exact(&mut header)?;
        if &header[..4] != PROP_MAGIC {
            return Err(Error::Format("missing PROP magic".into()));
        }
        let version = u32::from_le_bytes(header[4..8].try_into().unwrap());
        if version != PROP_VERSION {
            return Err(Error::Format(format!("unsupported version {version}")));
        }
        let n = u64::from_le_bytes(header[8..16].try_into().unwrap()) as usize;
        let grid = SpatialGrid::new(n).map_err(|e| Error::Format(e.to_string()))?;
        let mut read_f64 = || -> Result<f64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(f64::from_le_bytes(b))
        };
        let eps = read_f64()?;
        let t0 = read_f64()?;
        let t1 = read_f64()?;
        let log_scale = read_f64()?;
        let mut data = Vec::with_capacity(n * n);
        for _ in 0..n * n {
            data.push(read_f64()?);
        }
        Ok(Self {
            eps,
            t0,
            t1,
            grid,
            entries: DMatrix::from_row_slice(n, n, &data),
            log_scale,
        })
    }
}

/// Propagator of `U_t = (ε/2)U_xx − (1/ε)VU` from `t0` to `t1` in `n_steps` Strang steps.
pub fn build_propagator(
    pot: &Potential,
    eps: f64,
    t0: f64,
    t1: f64,
    grid: SpatialGrid,
    n_steps: usize,
) -> Result<PropagatorMatrix> {
    if !(eps > 0.0) {
        return Err(invalid(format!("viscosity must be positive, got {eps}")));
    }
    if !(t1 > t0) {
        return Err(invalid(format!("empty interval [{t0}, {t1}]")));
    }
    if n_steps == 0 {
        return Err(invalid("propagator needs at least one step"));
    }
    let n = grid.n_points();
    let dt = (t1 - t0) / n_steps as f64;
    let stepper = StrangStepper::new(grid, eps, dt)?;
    // Row-major; row i holds the coefficients of U(x_i) in terms of U(t0, ·).
    let mut a = vec![0.0; n * n];
    for i in 0..n {
        a[i * n + i] = 1.0;
    }
    let mut next = vec![0.0; n * n];
    let mut log_scale = 0.0;
    for k in 0..n_steps {
        let d = stepper.factors(pot, t0 + k as f64 * dt);
        for (row, di) in a.chunks_mut(n).zip(&d) {
            row.iter_mut().for_each(|v| *v *= di);
        }
        next.iter_mut().for_each(|v| *v = 0.0);
        for &(off, w) in &stepper.kernel {
            for i in 0..n {
                let src = (i + n - off) % n;
                let (dst_row, src_row) = (i * n, src * n);
                for j in 0..n {
                    next[dst_row + j] += w * a[src_row + j];
                }
            }
        }
        for (row, di) in next.chunks_mut(n).zip(&d) {
            row.iter_mut().for_each(|v| *v *= di);
        }
        std::mem::swap(&mut a, &mut next);
        log_scale += rescale(&mut a);
        if let Some(bad) = a.iter().find(|v| !v.is_finite()) {
            return Err(Error::NumericRange {
                time: t0 + (k + 1) as f64 * dt,
                detail: format!("propagator entry {bad}"),
            });
        }
    }
    // Values map -> density.
    let dx = grid.dx();
    Ok(PropagatorMatrix {
        eps,
        t0,
        t1,
        grid,
        entries: DMatrix::from_row_slice(n, n, &a),
        log_scale: log_scale - dx.ln(),
    })
}

/// Output of the log-transform solver.
#[derive(Debug, Clone, Serialize)]
pub struct ViscousRun {
    pub eps: f64,
    pub times: Vec<f64>,
    /// `u(t_k, ·)`
    pub u: Vec<PeriodicField>,
    /// `U(t_k, ·) · e^{−log_scales[k]}`, max-normalized.
    pub big_u: Vec<PeriodicField>,
    pub log_scales: Vec<f64>,
}

impl ViscousRun {
    /// `−ε log U(t_k, ·)`.
    pub fn value_field(&self, k: usize) -> PeriodicField {
        let ls = self.log_scales[k];
        self.big_u[k].map(|v| -self.eps * (v.ln() + ls))
    }

    pub fn last_u(&self) -> &PeriodicField {
        self.u.last().expect("run has at least one slice")
    }

    pub fn last_value(&self) -> PeriodicField {
        self.value_field(self.times.len() - 1)
    }
}

/// Evolve the linear equation from scaled data and assemble a run.
pub fn evolve_linear(
    eps: f64,
    big_u0: &PeriodicField,
    log_scale0: f64,
    pot: &Potential,
    t0: f64,
    t_end: f64,
    dt: f64,
) -> Result<ViscousRun> {
    let grid = big_u0.grid();
    let dx = grid.dx();
    let mut times = vec![t0];
    let mut u_slices = Vec::new();
    let mut big = Vec::new();
    let mut scales = vec![log_scale0];
    let mut cur = big_u0.values().to_vec();
    let slice = |vals: &[f64], time: f64| -> Result<PeriodicField> {
        if let Some(v) = vals.iter().find(|v| !(**v >= f64::MIN_POSITIVE) || !v.is_finite()) {
            return Err(Error::NumericRange {
                time,
                detail: format!("U left the representable range ({v:e}); raise eps"),
            });
        }
        let logs: Vec<f64> = vals.iter().map(|v| v.ln()).collect();
        let du = centered_derivative(&logs, dx);
        PeriodicField::new(grid, du.into_iter().map(|d| -eps * d).collect())
    };
    u_slices.push(slice(&cur, t0)?);
    big.push(big_u0.clone());
    if t_end > t0 {
        let (steps, h) = uniform_steps(t_end - t0, dt);
        let stepper = StrangStepper::new(grid, eps, h)?;
        let mut scratch = vec![0.0; cur.len()];
        let mut ls = log_scale0;
        for k in 0..steps {
            let t = t0 + k as f64 * h;
            stepper.step(pot, t, &mut cur, &mut scratch);
            let time = t0 + (k + 1) as f64 * h;
            let m = cur.iter().cloned().fold(0.0_f64, f64::max);
            if !(m > 0.0) || !m.is_finite() {
                return Err(Error::NumericRange {
                    time,
                    detail: "U lost all mass".into(),
                });
            }
            ls += rescale(&mut cur);
            u_slices.push(slice(&cur, time)?);
            big.push(PeriodicField::new(grid, cur.clone())?);
            times.push(time);
            scales.push(ls);
        }
    }
    Ok(ViscousRun {
        eps,
        times,
        u: u_slices,
        big_u: big,
        log_scales: scales,
    })
}

/// Scaled initial data `exp(−(φ − min φ)/ε)` and its log-scale `−min φ/ε`.
pub fn hopf_initial(eps: f64, phi: &PeriodicField) -> Result<(PeriodicField, f64)> {
    if !(eps > 0.0) {
        return Err(invalid(format!("viscosity must be positive, got {eps}")));
    }
    let lo = phi.min();
    let vals: Vec<f64> = phi.values().iter().map(|p| (-(p - lo) / eps).exp()).collect();
    if let Some(v) = vals.iter().find(|v| !(**v >= f64::MIN_POSITIVE)) {
        return Err(Error::NumericRange {
            time: 0.0,
            detail: format!("initial exp(−φ/ε) underflows ({v:e})"),
        });
    }
    Ok((PeriodicField::new(phi.grid(), vals)?, -lo / eps))
}

/// Viscous solution from the potential `φ` of the initial data (`u(0) = φ'`).
pub fn solve_viscous(
    eps: f64,
    phi: &PeriodicField,
    pot: &Potential,
    t_end: f64,
    grid: SpatialGrid,
    dt: f64,
) -> Result<ViscousRun> {
    if phi.grid() != grid {
        return Err(invalid("initial field lives on a different grid"));
    }
    if !(t_end >= 0.0) {
        return Err(invalid(format!("final time must be nonnegative, got {t_end}")));
    }
    let (u0, ls) = hopf_initial(eps, phi)?;
    evolve_linear(eps, &u0, ls, pot, 0.0, t_end, dt)
}

fn direct_rhs(u: &[f64], eps: f64, pot: &Potential, t: f64, dx: f64, out: &mut [f64]) {
    let n = u.len();
    for j in 0..n {
        let jm = (j + n - 1) % n;
        let jp = (j + 1) % n;
        let f_right = 0.25 * (u[j] * u[j] + u[jp] * u[jp]);
        let f_left = 0.25 * (u[jm] * u[jm] + u[j] * u[j]);
        let diff = 0.5 * eps * (u[jp] - 2.0 * u[j] + u[jm]) / (dx * dx);
        out[j] = -(f_right - f_left) / dx + diff + pot.gradient(t, j as f64 * dx);
    }
}

/// Largest step admitted by `direct_viscous_step`: `min(Δx / max|u|, Δx²/ε)`.
pub fn direct_admissible_dt(u: &PeriodicField, eps: f64) -> f64 {
    let dx = u.grid().dx();
    let m = u.sup_norm();
    let adv = if m > 0.0 { dx / m } else { f64::INFINITY };
    adv.min(dx * dx / eps)
}

/// One SSP-RK2 step of the conservative central scheme.
pub fn direct_viscous_step(
    u: &PeriodicField,
    eps: f64,
    pot: &Potential,
    t: f64,
    dt: f64,
) -> Result<PeriodicField> {
    if !(eps > 0.0) {
        return Err(invalid(format!("viscosity must be positive, got {eps}")));
    }
    let admissible = direct_admissible_dt(u, eps);
    if !(dt > 0.0) || dt > admissible {
        return Err(Error::StepSize {
            requested: dt,
            admissible,
        });
    }
    let dx = u.grid().dx();
    let u0 = u.values();
    let n = u0.len();
    let mut k = vec![0.0; n];
    direct_rhs(u0, eps, pot, t, dx, &mut k);
    let u1: Vec<f64> = u0.iter().zip(&k).map(|(a, b)| a + dt * b).collect();
    direct_rhs(&u1, eps, pot, t + dt, dx, &mut k);
    let out: Vec<f64> = u0
        .iter()
        .zip(u1.iter().zip(&k))
        .map(|(a, (b, kb))| 0.5 * a + 0.5 * (b + dt * kb))
        .collect();
    PeriodicField::new(u.grid(), out)
}

/// Direct solve to `t_end`, each step at `safety` times the admissible step.
pub fn solve_viscous_direct(
    eps: f64,
    u0: &PeriodicField,
    pot: &Potential,
    t_end: f64,
    safety: f64,
) -> Result<PeriodicField> {
    let mut u = u0.clone();
    let mut t = 0.0;
    while t < t_end - 1e-14 {
        let dt = (safety * direct_admissible_dt(&u, eps)).min(t_end - t);
        u = direct_viscous_step(&u, eps, pot, t, dt)?;
        t += dt;
    }
    Ok(u)
}

/// Monte-Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct McEstimate {
    pub estimate: f64,
    pub std_error: f64,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Welford {
    pub n: f64,
    pub mean: f64,
    pub m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1.0;
        let d = x - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (x - self.mean);
    }

    pub fn merge(self, o: Self) -> Self {
        if self.n == 0.0 {
            return o;
        }
        if o.n == 0.0 {
            return self;
        }
        let n = self.n + o.n;
        let d = o.mean - self.mean;
        Self {
            n,
            mean: self.mean + d * o.n / n,
            m2: self.m2 + o.m2 + d * d * self.n * o.n / n,
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n < 2.0 {
            0.0
        } else {
            (self.m2 / (self.n - 1.0) / self.n).sqrt()
        }
    }
}

/// Monte-Carlo estimate of
/// `U(t,x) = E[exp(−(φ(x+√ε w_t) + ∫₀ᵗ V(t−s, x+√ε w_s) ds)/ε)]`.
#[allow(clippy::too_many_arguments)]
pub fn feynman_kac_estimate(
    eps: f64,
    phi: &InitialCost,
    pot: &Potential,
    t: f64,
    x: f64,
    n_paths: usize,
    n_steps: usize,
    seed: u64,
) -> Result<McEstimate> {
    if !(eps > 0.0) || !(t > 0.0) {
        return Err(invalid("feynman-kac needs eps > 0 and t > 0"));
    }
    if n_paths == 0 || n_steps == 0 {
        return Err(invalid("feynman-kac needs paths and steps"));
    }
    let h = t / n_steps as f64;
    let sd = (eps * h).sqrt();
    let blocks = n_paths.div_ceil(MC_BLOCK);
    let stats: Vec<Welford> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(b as u64));
            let count = MC_BLOCK.min(n_paths - b * MC_BLOCK);
            let mut w = Welford::default();
            for _ in 0..count {
                let mut pos = x;
                let mut integral = 0.5 * pot.value(t, pos);
                for k in 1..=n_steps {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    pos += sd * z;
                    let weight = if k == n_steps { 0.5 } else { 1.0 };
                    integral += weight * pot.value(t - k as f64 * h, pos);
                }
                integral *= h;
                w.push((-(phi.value(pos) + integral) / eps).exp());
            }
            w
        })
        .collect();
    let total = stats.into_iter().fold(Welford::default(), Welford::merge);
    Ok(McEstimate {
        estimate: total.mean,
        std_error: total.std_error(),
        n_paths,
    })
}

/// `sup_x |ε log U(t,x; φ_a) − ε log U(t,x; φ_b)|` at the default step.
pub fn log_stability_gap(
    eps: f64,
    phi_a: &PeriodicField,
    phi_b: &PeriodicField,
    pot: &Potential,
    t: f64,
    grid: SpatialGrid,
) -> Result<f64> {
    let a = solve_viscous(eps, phi_a, pot, t, grid, DEFAULT_DT)?;
    let b = solve_viscous(eps, phi_b, pot, t, grid, DEFAULT_DT)?;
    Ok(a.last_value().sub(&b.last_value()).sup_norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{PI, TAU};

    #[test]
    fn kernel_matches_modified_bessel_series() {
        // e^{-2}·I_0(2) and e^{-2}·I_1(2) from the direct series.
        let i0: f64 = (0..30).map(|k| 1.0 / factorial(k).powi(2)).sum();
        let i1: f64 = (0..30).map(|k| 1.0 / (factorial(k) * factorial(k + 1))).sum();
        assert_abs_diff_eq!(log_lattice_heat(0, 1.0, 0.0).exp(), (-2.0f64).exp() * i0, epsilon = 1e-14);
        assert_abs_diff_eq!(log_lattice_heat(1, 1.0, 0.0).exp(), (-2.0f64).exp() * i1, epsilon = 1e-14);
    }

    fn factorial(k: usize) -> f64 {
        (1..=k).map(|v| v as f64).product()
    }

    #[test]
    fn kernel_is_normalized_and_symmetric() {
        for &s in &[0.01, 0.7, 12.0, 900.0] {
            let k = heat_kernel(32, s);
            let total: f64 = k.iter().map(|(_, w)| w).sum();
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-14);
            let mut full = vec![0.0; 32];
            k.iter().for_each(|&(o, w)| full[o] = w);
            for o in 1..32 {
                assert_abs_diff_eq!(full[o], full[32 - o], epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn heat_step_damps_fourier_modes_exactly() {
        // exp(τ(ε/2)L) multiplies mode m by exp(−τ(ε/2)·4 sin²(πm/n)/Δx²).
        let grid = SpatialGrid::new(64).unwrap();
        let (eps, dt) = (0.5, 0.3);
        let st = StrangStepper::new(grid, eps, dt).unwrap();
        let mut u: Vec<f64> = grid.nodes().iter().map(|x| (3.0 * x).cos()).collect();
        let mut scratch = vec![0.0; 64];
        st.step(&Potential::zero(), 0.0, &mut u, &mut scratch);
        let dx = grid.dx();
        let lam = 4.0 * (PI * 3.0 / 64.0).sin().powi(2) / (dx * dx);
        let damp = (-dt * 0.5 * eps * lam).exp();
        for (x, v) in grid.nodes().iter().zip(&u) {
            assert_abs_diff_eq!(*v, damp * (3.0 * x).cos(), epsilon = 1e-13);
        }
    }

    #[test]
    fn zero_data_stays_zero() {
        let grid = SpatialGrid::new(32).unwrap();
        let run = solve_viscous(0.3, &PeriodicField::zeros(grid), &Potential::zero(), 1.0, grid, 0.1)
            .unwrap();
        assert!(run.u.iter().all(|s| s.sup_norm() < 1e-15));
    }

    #[test]
    fn propagator_mass_without_potential() {
        let grid = SpatialGrid::new(32).unwrap();
        let p = build_propagator(&Potential::zero(), 0.7, 0.0, 1.0, grid, 10).unwrap();
        for i in 0..32 {
            assert_abs_diff_eq!(p.row_mass(i), 1.0, epsilon = 1e-12);
        }
        assert!(p.is_strictly_positive());
    }

    #[test]
    fn propagator_rejects_bad_parameters() {
        let grid = SpatialGrid::new(16).unwrap();
        assert!(build_propagator(&Potential::forced(), 0.0, 0.0, 1.0, grid, 4).is_err());
        assert!(build_propagator(&Potential::forced(), 0.5, 1.0, 1.0, grid, 4).is_err());
    }

    #[test]
    fn propagator_round_trip_is_bit_exact() {
        let grid = SpatialGrid::new(16).unwrap();
        let p = build_propagator(&Potential::forced(), 0.5, 0.0, 1.0, grid, 8).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(&buf[..4], b"PROP");
        let q = PropagatorMatrix::read_from(buf.as_slice()).unwrap();
        assert_eq!(p, q);
        assert!(PropagatorMatrix::read_from(&buf[..20]).is_err());
    }

    #[test]
    fn direct_step_preserves_constants_and_checks_cfl() {
        let grid = SpatialGrid::new(32).unwrap();
        let u = PeriodicField::constant(grid, 0.8);
        let v = direct_viscous_step(&u, 0.2, &Potential::zero(), 0.0, 0.01).unwrap();
        assert!(v.sub(&u).sup_norm() < 1e-15);
        match direct_viscous_step(&u, 0.2, &Potential::zero(), 0.0, 1.0) {
            Err(Error::StepSize { admissible, .. }) => {
                assert_abs_diff_eq!(admissible, direct_admissible_dt(&u, 0.2))
            }
            other => panic!("expected step-size error, got {other:?}"),
        }
    }

    #[test]
    fn direct_step_conserves_mass() {
        let grid = SpatialGrid::new(64).unwrap();
        let u = PeriodicField::from_fn(grid, |x| x.sin() + 0.3 * (2.0 * x).cos());
        let dt = 0.5 * direct_admissible_dt(&u, 0.3);
        let v = direct_viscous_step(&u, 0.3, &Potential::forced(), 0.4, dt).unwrap();
        let before: f64 = u.values().iter().sum();
        let after: f64 = v.values().iter().sum();
        assert!(((after - before) * grid.dx()).abs() < 1e-12);
    }

    #[test]
    fn direct_step_richardson() {
        let grid = SpatialGrid::new(64).unwrap();
        let pot = Potential::forced();
        let u = PeriodicField::from_fn(grid, |x| 0.5 * x.sin());
        let errs: Vec<f64> = [4e-3, 2e-3]
            .iter()
            .map(|&dt| {
                let one = direct_viscous_step(&u, 0.5, &pot, 0.0, dt).unwrap();
                let half = direct_viscous_step(&u, 0.5, &pot, 0.0, dt / 2.0).unwrap();
                let two = direct_viscous_step(&half, 0.5, &pot, dt / 2.0, dt / 2.0).unwrap();
                one.sub(&two).sup_norm()
            })
            .collect();
        // Local discrepancy is third order for a second-order scheme; at least O(dt²).
        assert!(errs[0] / errs[1] > 3.5, "ratio {}", errs[0] / errs[1]);
    }

    #[test]
    fn feynman_kac_trivial_cases() {
        let zero = feynman_kac_estimate(0.4, &InitialCost::zero(), &Potential::zero(), 1.0, 0.3, 500, 10, 1)
            .unwrap();
        assert_eq!(zero.estimate, 1.0);
        assert_eq!(zero.std_error, 0.0);
        let c = 0.7;
        let est = feynman_kac_estimate(0.4, &InitialCost::zero(), &Potential::constant(c), 2.0, 0.3, 300, 16, 5)
            .unwrap();
        assert_abs_diff_eq!(est.estimate, (-c * 2.0 / 0.4f64).exp(), epsilon = 1e-14);
        assert!(est.std_error < 1e-14);
    }

    #[test]
    fn feynman_kac_is_deterministic() {
        let pot = Potential::forced();
        let a = feynman_kac_estimate(0.5, &InitialCost::zero(), &pot, 1.0, 0.0, 5000, 20, 9).unwrap();
        let b = feynman_kac_estimate(0.5, &InitialCost::zero(), &pot, 1.0, 0.0, 5000, 20, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn stability_gap_shifts() {
        let grid = SpatialGrid::new(32).unwrap();
        let pot = Potential::forced();
        let a = PeriodicField::from_fn(grid, |x| 0.3 * x.cos());
        assert_eq!(log_stability_gap(0.5, &a, &a, &pot, 1.0, grid).unwrap(), 0.0);
        let b = a.map(|v| v + 0.25);
        assert_abs_diff_eq!(log_stability_gap(0.5, &a, &b, &pot, 1.0, grid).unwrap(), 0.25, epsilon = 1e-12);
    }

    #[test]
    fn uniform_steps_cover_span() {
        let (n, h) = uniform_steps(TAU, 0.01);
        assert_eq!(n, 629);
        assert_abs_diff_eq!(n as f64 * h, TAU, epsilon = 1e-12);
        assert_eq!(uniform_steps(1.0, 0.1).0, 10);
    }
}
