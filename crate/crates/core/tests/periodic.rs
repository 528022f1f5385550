use std::f64::consts::TAU;

use burgers_core::field::{PeriodicField, Potential, PotentialBounds, SpatialGrid};
use burgers_core::periodic::*;
use burgers_core::viscous::{build_propagator, PropagatorMatrix};

#[test]
fn heat_period_operator_preserves_constants() {
    let g = SpatialGrid::new(64).unwrap();
    let op = build_period_operator(0.5, g, &Potential::zero(), 200).unwrap();
    for i in 0..64 {
        assert!((op.row_mass(i) - 1.0).abs() < 1e-10);
    }
    let e = principal_eigenpair(&op, 1e-12, 500).unwrap();
    assert!((e.lambda - 1.0).abs() < 1e-10);
    assert!(e.phi_eig.values().iter().all(|v| (v - 1.0).abs() < 1e-10));
}

#[test]
fn period_operator_is_positive_and_composes() {
    let g = SpatialGrid::new(128).unwrap();
    let pot = Potential::forced();
    let op = build_period_operator(0.2, g, &pot, 628).unwrap();
    assert!(op.is_strictly_positive() && op.min_entry() > 0.0);
    let first = build_propagator(&pot, 0.2, 0.0, TAU / 2.0, g, 314).unwrap();
    let second = build_propagator(&pot, 0.2, TAU / 2.0, TAU, g, 314).unwrap();
    let both = PropagatorMatrix::compose(&second, &first).unwrap();
    let mut worst = 0.0_f64;
    for i in 0..128 {
        for j in 0..128 {
            let (a, b) = (both.entry(i, j), op.entry(i, j));
            worst = worst.max((a - b).abs() / b);
        }
    }
    assert!(worst < 1e-6, "relative difference {worst}");
    let e = principal_eigenpair(&op, 1e-10, 500).unwrap();
    assert!(e.residual < 1e-10 && e.phi_eig.min() > 0.0);
    assert!(eigen_uniqueness_gap(&op, 1e-13, 2000).unwrap() < 1e-8);
}

#[test]
fn eigenvalue_within_exponential_bounds() {
    let g = SpatialGrid::new(128).unwrap();
    let pot = Potential::forced();
    for eps in [0.5, 0.2] {
        let op = build_period_operator(eps, g, &pot, 628).unwrap();
        let e = principal_eigenpair(&op, 1e-10, 500).unwrap();
        let l = e.log_lambda_without_constant(eps, &pot);
        assert!(l.abs() <= TAU / eps, "eps={eps}: log λ = {l}");
    }
}

#[test]
fn unforced_periodic_data_vanish() {
    let g = SpatialGrid::new(64).unwrap();
    let (phi, u0) = periodic_initial_condition(0.5, g, &Potential::zero()).unwrap();
    assert!(phi.sup_norm() < 1e-9 && u0.sup_norm() < 1e-9);
}

#[test]
fn viscous_periodic_solution_returns_after_one_period() {
    let g = SpatialGrid::new(128).unwrap();
    let pot = Potential::forced();
    let mut fields = Vec::new();
    for eps in [0.5, 0.2] {
        let (data, sol) = viscous_periodic(eps, g, &pot, 1e-2).unwrap();
        assert!(sol.periodicity_residual < VISCOUS_FLOOR, "eps={eps}: {}", sol.periodicity_residual);
        assert!(data.u0.mean().abs() < 1e-12);
        assert!(sol.max_abs_mean() < 1e-10);
        fields.push(data.u0);
    }
    assert!(fields[0].sub(&fields[1]).sup_norm() > 1e-3);
}

#[test]
fn unforced_relaxation_decays_to_zero() {
    let g = SpatialGrid::new(128).unwrap();
    let sin = PeriodicField::from_fn(g, f64::sin);
    let sol = inviscid_periodic(g, &Potential::zero(), 20, &sin).unwrap();
    assert!(sol.u0.sup_norm() < 0.05, "sup {}", sol.u0.sup_norm());
    assert!(sol.periodicity_residual < INVISCID_FLOOR);
}

#[test]
fn forced_relaxation_is_unique() {
    let g = SpatialGrid::new(256).unwrap();
    let pot = Potential::forced();
    let a = inviscid_periodic(g, &pot, 50, &PeriodicField::zeros(g)).unwrap();
    let b = inviscid_periodic(g, &pot, 50, &PeriodicField::from_fn(g, f64::sin)).unwrap();
    assert!(a.periodicity_residual < INVISCID_FLOOR);
    assert!(a.max_abs_mean() < 1e-10);
    let d = a.u0.sub(&b.u0).l1_norm();
    assert!(d < 2.0 * g.dx(), "L1 distance {d}");
    // The residual has settled over the last quarter of the relaxation.
    let h = &a.residual_history;
    assert!(h[h.len() - 1] <= h[3 * h.len() / 4] + 1e-12);
}

#[test]
fn relaxation_rejects_nonzero_mean() {
    let g = SpatialGrid::new(64).unwrap();
    let one = PeriodicField::constant(g, 1.0);
    assert!(inviscid_periodic(g, &Potential::forced(), 2, &one).is_err());
}

#[test]
fn viscous_data_approach_inviscid_data() {
    let g = SpatialGrid::new(256).unwrap();
    let table = viscosity_convergence(&[0.4, 0.2, 0.1], g, &Potential::forced(), 50).unwrap();
    let d: Vec<f64> = table.rows.iter().map(|r| r.u_distance).collect();
    let p: Vec<f64> = table.rows.iter().map(|r| r.phi_distance).collect();
    assert!(d.windows(2).all(|w| w[1] < w[0]), "{d:?}");
    assert!(d[2] <= 0.7 * d[0], "{d:?}");
    assert!(p.windows(2).all(|w| w[1] < w[0]), "{p:?}");
}

#[test]
fn unforced_convergence_table_is_zero() {
    let g = SpatialGrid::new(64).unwrap();
    let table = viscosity_convergence(&[0.5, 0.2], g, &Potential::zero(), 4).unwrap();
    assert!(table.rows.iter().all(|r| r.u_distance < 1e-9 && r.phi_distance < 1e-9));
}

#[test]
fn constant_part_of_forcing_only_shifts_eigenvalue() {
    let g = SpatialGrid::new(64).unwrap();
    let eps = 0.5;
    let bare = Potential::custom(
        "bare",
        |t: f64, x: f64| -(x + t.sin()).cos(),
        |t: f64, x: f64| (x + t.sin()).sin(),
        |t: f64, x: f64| (x + t.sin()).cos(),
        PotentialBounds {
            sup_abs: 1.0,
            sup_grad: 1.0,
            sup_second: 1.0,
        },
    );
    let forced = Potential::forced();
    let full = principal_eigenpair(&build_period_operator(eps, g, &forced, 628).unwrap(), 1e-12, 2000).unwrap();
    let without = principal_eigenpair(&build_period_operator(eps, g, &bare, 628).unwrap(), 1e-12, 2000).unwrap();
    let a = full.phi_eig.scaled(1.0 / full.phi_eig.max());
    let b = without.phi_eig.scaled(1.0 / without.phi_eig.max());
    assert!(a.sub(&b).sup_norm() < 1e-9);
    let shift = full.log_lambda_without_constant(eps, &forced) - without.log_lambda;
    assert!(shift.abs() < 1e-4, "log λ shift {shift}");
}
