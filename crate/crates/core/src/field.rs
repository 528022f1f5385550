//! Grids, periodic fields, potentials, quadrature and norms on the circle.
//!
//! Every other module samples functions on a [`SpatialGrid`] of the circle
//! `[0, 2π)` and evaluates the forcing through a [`Potential`]. Positions of
//! paths are kept on the universal cover (plain reals) and only reduced
//! modulo `2π` where a comparison needs it.

use std::f64::consts::{PI, TAU};
use std::fmt;
use std::sync::Arc;

use serde::Serialize;

use crate::error::{invalid, Error, Result};

/// Length of the circle.
pub const PERIOD: f64 = TAU;

/// Smallest admissible number of grid points.
pub const MIN_POINTS: usize = 8;

/// Default tolerance for analytic identities.
pub const IDENTITY_TOL: f64 = 1e-9;

/// Reduce `x` to `[0, 2π)`.
pub fn wrap(x: f64) -> f64 {
    let r = x.rem_euclid(PERIOD);
    if r >= PERIOD {
        0.0
    } else {
        r
    }
}

/// Distance from `x` to the nearest integer multiple of `2π`.
pub fn dist_to_lattice(x: f64) -> f64 {
    let r = wrap(x);
    r.min(PERIOD - r)
}

/// Signed representative of `x` modulo `2π` in `[-π, π)`.
pub fn centered_mod(x: f64) -> f64 {
    wrap(x + PI) - PI
}

/// Uniform grid on the circle: nodes `x_j = j·2π/n`, node `n` identified with node 0.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct SpatialGrid {
    n_points: usize,
}

impl SpatialGrid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < MIN_POINTS {
            return Err(invalid(format!(
                "grid needs at least {MIN_POINTS} points, got {n_points}"
            )));
        }
        Ok(Self { n_points })
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn period(&self) -> f64 {
        PERIOD
    }

    pub fn dx(&self) -> f64 {
        PERIOD / self.n_points as f64
    }

    pub fn node(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n_points).map(|j| self.node(j)).collect()
    }

    /// Index of the node nearest to `x` (any real, reduced mod 2π).
    pub fn nearest_index(&self, x: f64) -> usize {
        let k = (wrap(x) / self.dx()).round() as usize;
        k % self.n_points
    }
}

/// A sampled 2π-periodic function of space.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PeriodicField {
    grid: SpatialGrid,
    values: Vec<f64>,
}

impl PeriodicField {
    pub fn new(grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.n_points() {
            return Err(invalid(format!(
                "field has {} values for a grid of {} points",
                values.len(),
                grid.n_points()
            )));
        }
        if let Some(j) = values.iter().position(|v| !v.is_finite()) {
            return Err(invalid(format!("field value at node {j} is not finite")));
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.nodes().into_iter().map(f).collect();
        Self { grid, values }
    }

    pub fn constant(grid: SpatialGrid, c: f64) -> Self {
        Self {
            grid,
            values: vec![c; grid.n_points()],
        }
    }

    pub fn zeros(grid: SpatialGrid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn grid(&self) -> SpatialGrid {
        self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mean over the circle, `(1/2π)∫f`, by the periodic trapezoid rule.
    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `|Σ values·Δx| < tol`.
    pub fn is_mean_zero(&self, tol: f64) -> bool {
        (self.values.iter().sum::<f64>() * self.grid.dx()).abs() < tol
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> Self {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Self {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Self {
        assert_eq!(self.grid, other.grid, "fields live on different grids");
        Self {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Unnormalized L¹ norm `∫|f| dx`.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.grid.dx()
    }

    pub fn l2_norm(&self) -> f64 {
        l2_norm(self)
    }

    /// Periodic linear interpolation at any real `x`.
    pub fn interpolate(&self, x: f64) -> f64 {
        interp_periodic(&self.values, self.grid.dx(), x)
    }

    /// Centered-difference derivative.
    pub fn derivative(&self) -> Self {
        Self {
            grid: self.grid,
            values: centered_derivative(&self.values, self.grid.dx()),
        }
    }

    /// Cumulative trapezoid antiderivative, shifted to mean zero.
    ///
    /// The field should itself be mean-zero, otherwise the antiderivative
    /// is not periodic.
    pub fn antiderivative(&self) -> Self {
        let n = self.values.len();
        let dx = self.grid.dx();
        let mut out = vec![0.0; n];
        for j in 1..n {
            out[j] = out[j - 1] + 0.5 * dx * (self.values[j - 1] + self.values[j]);
        }
        let mean = out.iter().sum::<f64>() / n as f64;
        out.iter_mut().for_each(|v| *v -= mean);
        Self {
            grid: self.grid,
            values: out,
        }
    }

    /// Convolution with a normalized triangular kernel of half-width `width` cells.
    pub fn mollify(&self, width: usize) -> Self {
        if width == 0 {
            return self.clone();
        }
        let n = self.values.len() as isize;
        let w = width as isize;
        let weights: Vec<f64> = (-w..=w).map(|k| (w + 1 - k.abs()) as f64).collect();
        let total: f64 = weights.iter().sum();
        let values = (0..n)
            .map(|j| {
                (-w..=w)
                    .zip(&weights)
                    .map(|(k, wk)| wk * self.values[(j + k).rem_euclid(n) as usize])
                    .sum::<f64>()
                    / total
            })
            .collect();
        Self {
            grid: self.grid,
            values,
        }
    }
}

/// Normalized L² norm `((1/2π)∫f²)^{1/2}` by the periodic trapezoid rule.
pub fn l2_norm(f: &PeriodicField) -> f64 {
    (f.values.iter().map(|v| v * v).sum::<f64>() / f.values.len() as f64).sqrt()
}

pub(crate) fn interp_periodic(values: &[f64], dx: f64, x: f64) -> f64 {
    let n = values.len();
    let s = wrap(x) / dx;
    let j = (s.floor() as usize).min(n - 1);
    let frac = s - j as f64;
    let a = values[j];
    let b = values[(j + 1) % n];
    a + frac * (b - a)
}

pub(crate) fn centered_derivative(values: &[f64], dx: f64) -> Vec<f64> {
    let n = values.len();
    (0..n)
        .map(|j| (values[(j + 1) % n] - values[(j + n - 1) % n]) / (2.0 * dx))
        .collect()
}

/// Composite Simpson rule for `∫_a^b f` with `n` subintervals (rounded up to even).
pub fn quadrature(f: impl Fn(f64) -> f64, a: f64, b: f64, n: usize) -> Result<f64> {
    if !(a < b) {
        return Err(invalid(format!("quadrature needs a < b, got [{a}, {b}]")));
    }
    if n < 2 {
        return Err(invalid("quadrature needs at least 2 subintervals"));
    }
    let n = n + n % 2;
    let h = (b - a) / n as f64;
    let mut sum = 0.0;
    for i in 0..=n {
        let s = if i == n { b } else { a + i as f64 * h };
        let v = f(s);
        if !v.is_finite() {
            return Err(Error::NonFiniteIntegrand { abscissa: s });
        }
        let w = if i == 0 || i == n {
            1.0
        } else if i % 2 == 1 {
            4.0
        } else {
            2.0
        };
        sum += w * v;
    }
    Ok(sum * h / 3.0)
}

/// Simpson weights (already multiplied by `h/3`) for `m` (even) subintervals of length `h`.
pub(crate) fn simpson_weights(m: usize, h: f64) -> Vec<f64> {
    debug_assert!(m.is_multiple_of(2));
    (0..=m)
        .map(|i| {
            let w = if i == 0 || i == m {
                1.0
            } else if i % 2 == 1 {
                4.0
            } else {
                2.0
            };
            w * h / 3.0
        })
        .collect()
}

/// Integral of uniformly spaced samples: Simpson when the interval count is
/// even, otherwise Simpson on all but the last interval plus a trapezoid.
pub(crate) fn integrate_samples(values: &[f64], h: f64) -> f64 {
    let m = values.len() - 1;
    if m == 0 {
        return 0.0;
    }
    if m == 1 {
        return 0.5 * h * (values[0] + values[1]);
    }
    let even = m - m % 2;
    let w = simpson_weights(even, h);
    let mut sum: f64 = values[..=even].iter().zip(&w).map(|(v, w)| v * w).sum();
    if even < m {
        sum += 0.5 * h * (values[m - 1] + values[m]);
    }
    sum
}

type Fn2 = dyn Fn(f64, f64) -> f64 + Send + Sync;
type Fn1 = dyn Fn(f64) -> f64 + Send + Sync;

/// Sup-norm constants of a potential.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PotentialBounds {
    /// `K1 = sup|V|`
    pub sup_abs: f64,
    /// `K2 = sup|V_x|`
    pub sup_grad: f64,
    /// `Kxx = sup|V_xx|`
    pub sup_second: f64,
}

#[derive(Clone)]
enum PotentialKind {
    Forced,
    Custom {
        name: String,
        value: Arc<Fn2>,
        gradient: Arc<Fn2>,
        second: Arc<Fn2>,
    },
}

/// A smooth potential `V(t, x)`, 2π-periodic in both arguments.
///
/// The default forcing is `V(t,x) = cos(sin t) − cos(x + sin t)`.
#[derive(Clone)]
pub struct Potential {
    kind: PotentialKind,
    bounds: PotentialBounds,
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Potential")
            .field("name", &self.name())
            .field("bounds", &self.bounds)
            .finish()
    }
}

impl Potential {
    pub fn forced() -> Self {
        Self {
            kind: PotentialKind::Forced,
            bounds: PotentialBounds {
                sup_abs: 2.0,
                sup_grad: 1.0,
                sup_second: 1.0,
            },
        }
    }

    pub fn custom(
        name: impl Into<String>,
        value: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        gradient: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        second: impl Fn(f64, f64) -> f64 + Send + Sync + 'static,
        bounds: PotentialBounds,
    ) -> Self {
        Self {
            kind: PotentialKind::Custom {
                name: name.into(),
                value: Arc::new(value),
                gradient: Arc::new(gradient),
                second: Arc::new(second),
            },
            bounds,
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        let name = if c == 0.0 {
            "zero".to_string()
        } else {
            format!("constant({c})")
        };
        Self::custom(
            name,
            move |_, _| c,
            |_, _| 0.0,
            |_, _| 0.0,
            PotentialBounds {
                sup_abs: c.abs(),
                sup_grad: 0.0,
                sup_second: 0.0,
            },
        )
    }

    /// Look a potential up by its configuration name.
    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "forced" => Ok(Self::forced()),
            "zero" => Ok(Self::zero()),
            other => Err(invalid(format!("unknown potential '{other}'"))),
        }
    }

    pub fn name(&self) -> String {
        match &self.kind {
            PotentialKind::Forced => "forced".to_string(),
            PotentialKind::Custom { name, .. } => name.clone(),
        }
    }

    pub fn is_forced(&self) -> bool {
        matches!(self.kind, PotentialKind::Forced)
    }

    pub fn bounds(&self) -> PotentialBounds {
        self.bounds
    }

    /// `(K1, K2)` of the part of `V` that actually drives `u = v_x`.
    ///
    /// For the default forcing the spatially constant term `cos(sin t)` is
    /// dropped, leaving `−cos(x + sin t)` with `K1 = K2 = 1`.
    pub fn drift_constants(&self) -> (f64, f64) {
        match self.kind {
            PotentialKind::Forced => (1.0, 1.0),
            PotentialKind::Custom { .. } => (self.bounds.sup_abs, self.bounds.sup_grad),
        }
    }

    #[inline]
    pub fn value(&self, t: f64, x: f64) -> f64 {
        match &self.kind {
            PotentialKind::Forced => (t.sin()).cos() - (x + t.sin()).cos(),
            PotentialKind::Custom { value, .. } => value(t, x),
        }
    }

    #[inline]
    pub fn gradient(&self, t: f64, x: f64) -> f64 {
        match &self.kind {
            PotentialKind::Forced => (x + t.sin()).sin(),
            PotentialKind::Custom { gradient, .. } => gradient(t, x),
        }
    }

    #[inline]
    pub fn second(&self, t: f64, x: f64) -> f64 {
        match &self.kind {
            PotentialKind::Forced => (x + t.sin()).cos(),
            PotentialKind::Custom { second, .. } => second(t, x),
        }
    }

    /// `(V, V_x, V_xx)` in one call; shares the trig evaluations for the default forcing.
    #[inline]
    pub fn jet(&self, t: f64, x: f64) -> (f64, f64, f64) {
        match &self.kind {
            PotentialKind::Forced => {
                let st = t.sin();
                let (s, c) = (x + st).sin_cos();
                (st.cos() - c, s, c)
            }
            PotentialKind::Custom {
                value,
                gradient,
                second,
                ..
            } => (value(t, x), gradient(t, x), second(t, x)),
        }
    }
}

pub fn eval_potential(pot: &Potential, t: f64, x: f64) -> f64 {
    pot.value(t, x)
}

pub fn eval_potential_gradient(pot: &Potential, t: f64, x: f64) -> f64 {
    pot.gradient(t, x)
}

/// Initial cost `φ` of a path together with its slope `φ'`.
#[derive(Clone)]
pub struct InitialCost {
    value: Arc<Fn1>,
    slope: Arc<Fn1>,
    sup_second: Option<f64>,
}

impl fmt::Debug for InitialCost {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InitialCost")
            .field("sup_second", &self.sup_second)
            .finish_non_exhaustive()
    }
}

impl InitialCost {
    pub fn new(
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        slope: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            value: Arc::new(value),
            slope: Arc::new(slope),
            sup_second: None,
        }
    }

    pub fn zero() -> Self {
        Self::constant(0.0)
    }

    pub fn constant(c: f64) -> Self {
        let mut cost = Self::new(move |_| c, |_| 0.0);
        cost.sup_second = Some(0.0);
        cost
    }

    /// `φ(x) = 1 − cos x`.
    pub fn one_minus_cos() -> Self {
        let mut cost = Self::new(|x: f64| 1.0 - x.cos(), |x: f64| x.sin());
        cost.sup_second = Some(1.0);
        cost
    }

    pub fn with_sup_second(mut self, sup: f64) -> Self {
        self.sup_second = Some(sup);
        self
    }

    /// C¹ periodic cubic Hermite interpolant through `phi` with node slopes `slope`.
    ///
    /// `slope` is normally the initial velocity field `u(0,·) = φ'`; the
    /// interpolant's derivative is exact for its own values, so gradients
    /// stay consistent with function values.
    pub fn from_fields(phi: &PeriodicField, slope: &PeriodicField) -> Self {
        assert_eq!(phi.grid(), slope.grid());
        let dx = phi.grid().dx();
        let p = Arc::new(phi.values().to_vec());
        let m = Arc::new(slope.values().to_vec());
        let (p2, m2) = (p.clone(), m.clone());
        Self {
            value: Arc::new(move |x| hermite(&p, &m, dx, x).0),
            slope: Arc::new(move |x| hermite(&p2, &m2, dx, x).1),
            sup_second: None,
        }
    }

    #[inline]
    pub fn value(&self, x: f64) -> f64 {
        (self.value)(x)
    }

    #[inline]
    pub fn slope(&self, x: f64) -> f64 {
        (self.slope)(x)
    }

    /// `φ''` by a central difference of the slope.
    pub fn curvature(&self, x: f64) -> f64 {
        let h = 1e-5;
        (self.slope(x + h) - self.slope(x - h)) / (2.0 * h)
    }

    pub fn sup_second(&self) -> Option<f64> {
        self.sup_second
    }
}

fn hermite(p: &[f64], m: &[f64], dx: f64, x: f64) -> (f64, f64) {
    let n = p.len();
    let s = wrap(x) / dx;
    let j = (s.floor() as usize).min(n - 1);
    let tau = s - j as f64;
    let k = (j + 1) % n;
    let (p0, p1, m0, m1) = (p[j], p[k], m[j] * dx, m[k] * dx);
    let t2 = tau * tau;
    let t3 = t2 * tau;
    let value = (2.0 * t3 - 3.0 * t2 + 1.0) * p0
        + (t3 - 2.0 * t2 + tau) * m0
        + (-2.0 * t3 + 3.0 * t2) * p1
        + (t3 - t2) * m1;
    let deriv = ((6.0 * t2 - 6.0 * tau) * p0
        + (3.0 * t2 - 4.0 * tau + 1.0) * m0
        + (-6.0 * t2 + 6.0 * tau) * p1
        + (3.0 * t2 - 2.0 * tau) * m1)
        / dx;
    (value, deriv)
}

/// A time-sampled path: positions on the universal cover and velocities.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    times: Vec<f64>,
    positions: Vec<f64>,
    velocities: Vec<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, positions: Vec<f64>, velocities: Vec<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(invalid("trajectory needs at least two samples"));
        }
        if positions.len() != times.len() || velocities.len() != times.len() {
            return Err(invalid("trajectory sequences differ in length"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("trajectory times must be strictly increasing"));
        }
        Ok(Self {
            times,
            positions,
            velocities,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn velocities(&self) -> &[f64] {
        &self.velocities
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn first(&self) -> (f64, f64, f64) {
        (self.times[0], self.positions[0], self.velocities[0])
    }

    pub fn last(&self) -> (f64, f64, f64) {
        let k = self.len() - 1;
        (self.times[k], self.positions[k], self.velocities[k])
    }

    /// Uniform step, if the samples are uniformly spaced to relative 1e-9.
    pub fn uniform_step(&self) -> Option<f64> {
        let h = (self.times[self.len() - 1] - self.times[0]) / (self.len() - 1) as f64;
        let uniform = self
            .times
            .windows(2)
            .all(|w| ((w[1] - w[0]) - h).abs() <= 1e-9 * h.abs().max(1.0));
        uniform.then_some(h)
    }

    /// Linear interpolation of the position at time `t` (clamped to the sampled range).
    pub fn position_at(&self, t: f64) -> f64 {
        let k = match self.times.binary_search_by(|s| s.partial_cmp(&t).unwrap()) {
            Ok(k) => return self.positions[k],
            Err(k) => k,
        };
        if k == 0 {
            return self.positions[0];
        }
        if k >= self.len() {
            return self.positions[self.len() - 1];
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        self.positions[k - 1] * (1.0 - w) + self.positions[k] * w
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn potential_reference_values() {
        let v = Potential::forced();
        assert_eq!(eval_potential(&v, 0.0, 0.0), 0.0);
        assert_abs_diff_eq!(eval_potential(&v, 0.0, PI), 2.0, epsilon = 1e-15);
        let expected = 1.0_f64.cos() - (PI / 2.0 + 1.0).cos();
        assert_abs_diff_eq!(eval_potential(&v, PI / 2.0, PI / 2.0), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(expected, 1.3817732906760363, epsilon = 1e-12);
        assert_abs_diff_eq!(eval_potential_gradient(&v, 0.0, PI / 2.0), 1.0, epsilon = 1e-15);
        assert_eq!(eval_potential_gradient(&v, 0.0, 0.0), 0.0);
    }

    #[test]
    fn grid_rejects_small() {
        assert!(SpatialGrid::new(7).is_err());
        assert!(SpatialGrid::new(8).is_ok());
    }

    #[test]
    fn l2_norm_examples() {
        let g = SpatialGrid::new(256).unwrap();
        assert_eq!(l2_norm(&PeriodicField::zeros(g)), 0.0);
        assert_abs_diff_eq!(l2_norm(&PeriodicField::constant(g, -3.5)), 3.5, epsilon = 1e-14);
        let s = PeriodicField::from_fn(g, f64::sin);
        assert_abs_diff_eq!(l2_norm(&s), 0.5_f64.sqrt(), epsilon = 1e-10);
    }

    /// Power series for the Bessel function J0.
    fn bessel_j0(x: f64) -> f64 {
        let mut term = 1.0;
        let mut sum = 1.0;
        for k in 1..40 {
            term *= -(x * x / 4.0) / (k as f64 * k as f64);
            sum += term;
        }
        sum
    }

    #[test]
    fn quadrature_examples() {
        assert_abs_diff_eq!(quadrature(|_| 1.0, 0.0, TAU, 100).unwrap(), TAU, epsilon = 1e-12);
        let j0 = bessel_j0(1.0);
        assert_abs_diff_eq!(j0, 0.7651976866, epsilon = 1e-10);
        let q = quadrature(|s| s.sin().cos(), 0.0, TAU, 100_000).unwrap();
        assert_abs_diff_eq!(q, TAU * j0, epsilon = 1e-10);
        assert_abs_diff_eq!(q, 4.80790, epsilon = 5e-5);
        let q = quadrature(|s| 0.5 * (1.0 - s.cos()).powi(2), 0.0, TAU, 100_000).unwrap();
        assert_abs_diff_eq!(q, 1.5 * PI, epsilon = 1e-10);
    }

    #[test]
    fn quadrature_errors() {
        assert!(quadrature(|_| 1.0, 1.0, 0.0, 10).is_err());
        assert!(quadrature(|_| 1.0, 0.0, 1.0, 1).is_err());
        match quadrature(|s| 1.0 / (s - 0.5), 0.0, 1.0, 2) {
            Err(Error::NonFiniteIntegrand { abscissa }) => assert_eq!(abscissa, 0.5),
            other => panic!("expected evaluation error, got {other:?}"),
        }
    }

    #[test]
    fn antiderivative_recovers_cosine() {
        let g = SpatialGrid::new(512).unwrap();
        let u = PeriodicField::from_fn(g, f64::sin);
        let phi = u.antiderivative();
        let exact = PeriodicField::from_fn(g, |x| -x.cos());
        assert!(phi.sub(&exact).sup_norm() < 1e-4);
        assert!(phi.mean().abs() < 1e-14);
    }

    #[test]
    fn hermite_cost_is_consistent() {
        let g = SpatialGrid::new(64).unwrap();
        let phi = PeriodicField::from_fn(g, |x| -x.cos());
        let u = PeriodicField::from_fn(g, f64::sin);
        let c = InitialCost::from_fields(&phi, &u);
        for &x in &[0.1, 1.3, 3.0, 5.9, -2.0] {
            let h = 1e-6;
            let fd = (c.value(x + h) - c.value(x - h)) / (2.0 * h);
            assert_abs_diff_eq!(fd, c.slope(x), epsilon = 1e-7);
            assert_abs_diff_eq!(c.value(x), -x.cos(), epsilon = 1e-5);
        }
    }

    #[test]
    fn lattice_distance() {
        assert_abs_diff_eq!(dist_to_lattice(TAU + 0.1), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(dist_to_lattice(-0.1), 0.1, epsilon = 1e-12);
        assert_abs_diff_eq!(centered_mod(3.0 * PI), -PI, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn forced_potential_is_doubly_periodic(t in -50.0..50.0f64, x in -50.0..50.0f64) {
            let v = Potential::forced();
            prop_assert!((v.value(t, x) - v.value(t + TAU, x + TAU)).abs() < 1e-12);
            prop_assert!((v.value(t, x) - v.value(t, x + TAU)).abs() < 1e-12);
        }

        #[test]
        fn gradient_matches_central_difference(t in -10.0..10.0f64, x in -10.0..10.0f64) {
            let v = Potential::forced();
            let h = 1e-5;
            let fd = (v.value(t, x + h) - v.value(t, x - h)) / (2.0 * h);
            prop_assert!((fd - v.gradient(t, x)).abs() < 1e-8);
            let fd2 = (v.gradient(t, x + h) - v.gradient(t, x - h)) / (2.0 * h);
            prop_assert!((fd2 - v.second(t, x)).abs() < 1e-8);
        }

        #[test]
        fn l2_norm_is_a_norm(
            a in proptest::collection::vec(-5.0..5.0f64, 16),
            b in proptest::collection::vec(-5.0..5.0f64, 16),
            c in -4.0..4.0f64,
        ) {
            let g = SpatialGrid::new(16).unwrap();
            let fa = PeriodicField::new(g, a).unwrap();
            let fb = PeriodicField::new(g, b).unwrap();
            prop_assert!((l2_norm(&fa.scaled(c)) - c.abs() * l2_norm(&fa)).abs() < 1e-12);
            prop_assert!(l2_norm(&fa.add(&fb)) <= l2_norm(&fa) + l2_norm(&fb) + 1e-12);
        }
    }
}
