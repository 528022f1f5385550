use std::f64::consts::{FRAC_PI_2, PI};

use burgers_core::field::{PeriodicField, Potential, SpatialGrid};
use burgers_core::inviscid::*;

fn sine_run(t_end: f64) -> InviscidRun {
    let g = SpatialGrid::new(256).unwrap();
    let u0 = PeriodicField::from_fn(g, f64::sin);
    solve_inviscid(&u0, &Potential::zero(), t_end, g, 0.9).unwrap()
}

#[test]
fn sine_data_breaks_at_unit_time() {
    let run = sine_run(2.0);
    let thr = 5.0 * run.grid().dx();
    let at = |t: f64| {
        let k = (t / run.out_dt()).round() as usize;
        detect_shocks(&run.slices[k], thr)
    };
    assert!(at(0.5).is_empty());
    let late = at(1.5);
    assert_eq!(late.len(), 1);
    assert!((late[0].position - PI).abs() < 2.0 * run.grid().dx());
    // A per-cell drop of 0.3 means a slope of about −12, reached at t = 1 − 1/12 on the smooth branch.
    let records = track_shocks(&run, 0.3);
    let main = records.iter().max_by_key(|r| r.len()).unwrap();
    assert!((main.birth - 1.0).abs() < 0.1, "birth at {}", main.birth);
}

#[test]
fn sine_shock_is_stationary_and_symmetric() {
    let run = sine_run(2.0);
    let records = track_shocks(&run, default_shock_threshold(&run));
    let dx = run.grid().dx();
    for rec in &records {
        for k in 0..rec.len() {
            if rec.times[k] < 1.2 {
                continue;
            }
            assert!((rec.positions[k].rem_euclid(2.0 * PI) - PI).abs() < 2.0 * dx);
            assert!((rec.left[k] + rec.right[k]).abs() < 0.05);
        }
        if let Some(d) = rec.max_rh_deviation() {
            assert!(d <= 2.0 * dx / run.out_dt(), "deviation {d}");
        }
    }
}

#[test]
fn characteristic_matches_straight_line_before_breaking() {
    let run = sine_run(0.8);
    let c = forward_characteristic(&run, FRAC_PI_2, &[]).unwrap();
    for (&t, &q) in c.trajectory.times().iter().zip(c.trajectory.positions()) {
        assert!((q - (FRAC_PI_2 + t)).abs() < 5e-3, "t={t} q={q}");
    }
}

#[test]
fn absorbed_set_only_grows() {
    let run = sine_run(3.0);
    let shocks = track_shocks(&run, default_shock_threshold(&run));
    let starts: Vec<f64> = (0..64).map(|i| 2.0 * PI * (i as f64 + 0.5) / 64.0).collect();
    let absorbed: Vec<Option<f64>> = starts
        .iter()
        .map(|&x| forward_characteristic(&run, x, &shocks).unwrap().absorbed_at)
        .collect();
    // The absorbed count is a nondecreasing function of time, and some start is absorbed.
    let mut last = 0;
    for k in 0..run.times.len() {
        let t = run.times[k];
        let count = absorbed.iter().filter(|a| a.is_some_and(|s| s <= t)).count();
        assert!(count >= last);
        last = count;
    }
    assert!(last > 0);
    // Characteristics starting next to π move toward it and die first.
    let near = absorbed[31].unwrap();
    let far = absorbed[0].unwrap_or(f64::INFINITY);
    assert!(near <= far);
}

#[test]
fn upward_slopes_respect_derivative_bound() {
    let run = sine_run(3.0);
    let dx = run.grid().dx();
    for (t, u) in run.times.iter().zip(&run.slices) {
        let c = derivative_upper_bound(1.0, &Potential::zero(), *t);
        assert!(max_upward_slope(u) <= c + 5.0 / dx * 1e-3 + 1e-9);
    }
    let pot = Potential::forced();
    let g = run.grid();
    let forced = solve_inviscid(&PeriodicField::from_fn(g, f64::sin), &pot, 6.0, g, 0.9).unwrap();
    for (t, u) in forced.times.iter().zip(&forced.slices) {
        let c = derivative_upper_bound(1.0, &pot, *t);
        assert!(max_upward_slope(u) <= c + 1e-6);
    }
}

#[test]
fn mass_and_entropy_budget() {
    let g = SpatialGrid::new(256).unwrap();
    let pot = Potential::forced();
    let mut u: Vec<f64> = g.nodes().iter().map(|x| x.sin() + 0.5 * (2.0 * x).cos()).collect();
    let mut st = GodunovStepper::new(g);
    let dx = g.dx();
    let mut t = 0.0;
    let mass0: f64 = u.iter().sum::<f64>() * dx;
    for _ in 0..400 {
        let umax = u.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let dt = 0.9 * dx / (umax + 0.1);
        let energy: f64 = u.iter().map(|v| 0.5 * v * v).sum::<f64>() * dx;
        let work: f64 = u
            .iter()
            .zip(g.nodes())
            .map(|(v, x)| v * pot.gradient(t + 0.5 * dt, x))
            .sum::<f64>()
            * dx;
        st.step(&mut u, &pot, t, dt);
        t += dt;
        let after: f64 = u.iter().map(|v| 0.5 * v * v).sum::<f64>() * dx;
        assert!(after <= energy + dt * work + 10.0 * dt * dt, "entropy grew at t={t}");
    }
    let mass1: f64 = u.iter().sum::<f64>() * dx;
    assert!((mass1 - mass0).abs() < 1e-10 * t.max(1.0));
}

#[test]
fn short_smooth_run_has_no_shocks() {
    let run = sine_run(0.3);
    assert!(track_shocks(&run, default_shock_threshold(&run)).is_empty());
}
