use std::f64::consts::{PI, TAU};

use burgers_core::field::Potential;
use burgers_core::lagrangian::*;

fn max_error(start: PhasePoint, exact: impl Fn(f64) -> f64) -> f64 {
    let tr = integrate_el(start, 0.0, 4.0 * PI, 1e-3, &Potential::forced()).unwrap();
    tr.times()
        .iter()
        .zip(tr.positions())
        .map(|(&t, &q)| (q - exact(t)).abs())
        .fold(0.0, f64::max)
}

#[test]
fn reference_trajectories() {
    assert!(max_error(PhasePoint::new(0.0, 0.0), |t| t - t.sin()) < 1e-8);
    assert!(max_error(PhasePoint::new(PI, -2.0), |t| PI - t - t.sin()) < 1e-8);
}

#[test]
fn reference_fixed_points_of_the_period_map() {
    let pot = Potential::forced();
    let a = poincare_map(PhasePoint::new(0.0, 0.0), &pot);
    assert!((a.q - TAU).abs() < 1e-9 && a.p.abs() < 1e-9);
    let b = poincare_map(PhasePoint::new(PI, -2.0), &pot);
    assert!((b.q + PI).abs() < 1e-9 && (b.p + 2.0).abs() < 1e-9);
}

#[test]
fn shooting_free_particle_is_constant() {
    let r = shoot_bvp(1.5, 0.8, &|_| 0.0, &Potential::zero(), &[0.0, 1.0, 3.0]).unwrap();
    assert_eq!(r.trajectories.len(), 1);
    assert!(r.trajectories[0].positions().iter().all(|q| (q - 0.8).abs() < 1e-9));
}

#[test]
fn shooting_recovers_reference_orbit() {
    let pot = Potential::forced();
    let r = shoot_bvp(TAU, 0.0, &|_| 0.0, &pot, &[0.05]).unwrap();
    assert_eq!(r.trajectories.len(), 1);
    let tr = &r.trajectories[0];
    for (&s, &q) in tr.times().iter().zip(tr.positions()) {
        assert!((q - (-TAU + s - s.sin())).abs() < 1e-6, "s={s} q={q}");
    }
    assert!(second_order_residual(tr, &pot).unwrap() < 1e-6);
}

#[test]
fn shooting_is_unique_before_focusing() {
    let pot = Potential::forced();
    let seeds: Vec<f64> = (0..16).map(|i| TAU * i as f64 / 16.0).collect();
    let r = shoot_bvp(0.1, 1.0, &|q: f64| 0.5 * q.sin(), &pot, &seeds).unwrap();
    assert_eq!(r.trajectories.len(), 1);
    for tr in &r.trajectories {
        let (_, q0, p0) = tr.first();
        assert!((p0 - 0.5 * q0.sin()).abs() < 1e-9);
        assert!(second_order_residual(tr, &pot).unwrap() < 1e-6);
    }
}

#[test]
fn coarse_and_fine_scans_agree() {
    let pot = Potential::forced();
    let base = ScanConfig {
        q_seeds: 12,
        p_seeds: 12,
        ..ScanConfig::default()
    };
    let fine = find_periodic_orbits(&pot, &base).unwrap();
    let coarse = find_periodic_orbits(&pot, &ScanConfig { tol: 1e-3, ..base }).unwrap();
    assert_eq!(fine.fixed_points.len(), coarse.fixed_points.len());
    for (a, b) in fine.fixed_points.iter().zip(&coarse.fixed_points) {
        assert_eq!(a.winding, b.winding);
        assert!((a.point.q - b.point.q).abs() < 1e-6 && (a.point.p - b.point.p).abs() < 1e-6);
    }
    for fp in &fine.fixed_points {
        assert!(fp.jacobian_det > 0.0);
        assert!((fp.jacobian_det - 1.0).abs() < 1e-6);
    }
    assert!(!fine.degenerate_family);
}
