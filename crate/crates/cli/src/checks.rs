//! Named checks. Each returns its status, a JSON result and CSV artifacts.

use std::f64::consts::{PI, TAU};

use burgers_core::action::{laplace_limit_check, value_gradient_identity, varadhan_check, McParams};
use burgers_core::field::{dist_to_lattice, l2_norm, InitialCost, PeriodicField, Potential, SpatialGrid};
use burgers_core::inviscid::{
    attractor_classification, default_shock_threshold, derivative_upper_bound, l2_bound, max_upward_slope,
    smallest_sync_k, solve_inviscid, solve_inviscid_on, sync_measure, track_shocks, InviscidRun, DEFAULT_OUT_DT,
};
use burgers_core::io::{write_fields, write_fixed_points, write_shocks, write_slices};
use burgers_core::lagrangian::{find_periodic_orbits, ScanConfig};
use burgers_core::periodic::{
    inviscid_periodic, potential_of, viscous_periodic, PeriodicSolution, INVISCID_FLOOR, MOLLIFIER_WIDTH,
    VISCOUS_FLOOR,
};
use burgers_core::viscous::{log_stability_gap, solve_viscous};
use burgers_core::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use crate::counterexample::start_field;
use crate::{Artifact, CliError, ExperimentConfig, Stage, Status};

pub type CheckResult = Result<(Status, Value, Vec<Artifact>), CliError>;

fn grid_of(cfg: &ExperimentConfig) -> Result<SpatialGrid, CliError> {
    SpatialGrid::new(cfg.grid).stage("grid")
}

fn potential_of_cfg(cfg: &ExperimentConfig) -> Result<Potential, CliError> {
    Potential::by_name(&cfg.potential).stage("potential")
}

fn relaxed(cfg: &ExperimentConfig, grid: SpatialGrid, pot: &Potential) -> Result<PeriodicSolution, CliError> {
    inviscid_periodic(grid, pot, cfg.relax_periods, &start_field(cfg, grid)).stage("inviscid_periodic")
}

/// The configured initial cost and its samples on the grid.
fn initial_cost(
    cfg: &ExperimentConfig,
    grid: SpatialGrid,
    pot: &Potential,
) -> Result<(InitialCost, PeriodicField), CliError> {
    Ok(match cfg.phi.as_str() {
        "zero" => (InitialCost::zero(), PeriodicField::zeros(grid)),
        "periodic" => {
            let sol = relaxed(cfg, grid, pot)?;
            let phi = potential_of(&sol.u0);
            (InitialCost::from_fields(&phi, &sol.u0), phi)
        }
        _ => {
            let c = InitialCost::one_minus_cos();
            let f = PeriodicField::from_fn(grid, |x| c.value(x));
            (c, f)
        }
    })
}

fn csv(name: &str, write: impl FnOnce(&mut Vec<u8>) -> burgers_core::Result<()>) -> Result<Artifact, CliError> {
    let mut bytes = Vec::new();
    write(&mut bytes).stage("csv")?;
    Ok(Artifact {
        name: name.to_string(),
        bytes,
    })
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

pub fn varadhan(cfg: &ExperimentConfig) -> CheckResult {
    let grid = grid_of(cfg)?;
    let pot = potential_of_cfg(cfg)?;
    let (phi, _) = initial_cost(cfg, grid, &pot)?;
    let rows = varadhan_check(cfg.t, cfg.x, &cfg.eps, &phi, &pot, &cfg.levels, grid, cfg.restarts, cfg.seed)
        .stage("varadhan_check")?;
    let top = *cfg.levels.iter().max().expect("validated nonempty");
    let gaps: Vec<f64> = rows
        .iter()
        .map(|r| r.gaps.iter().find(|g| g.0 == top).expect("level present").2)
        .collect();
    let ok = strictly_decreasing(&gaps) && gaps.last().is_some_and(|g| *g < cfg.tol_varadhan);
    Ok((
        Status::from_bool(ok),
        json!({ "rows": rows, "finest_level": top, "gaps": gaps, "tolerance": cfg.tol_varadhan }),
        Vec::new(),
    ))
}

pub fn laplace(cfg: &ExperimentConfig) -> CheckResult {
    let grid = grid_of(cfg)?;
    let pot = potential_of_cfg(cfg)?;
    let (phi, _) = initial_cost(cfg, grid, &pot)?;
    if cfg.level > 4 {
        return Err(CliError::Usage("laplace needs level ≤ 4".into()));
    }
    let mc = McParams {
        paths: cfg.mc_paths,
        seed: cfg.seed,
        restarts: cfg.restarts,
    };
    let rows = laplace_limit_check(cfg.t, cfg.x, cfg.level, &cfg.eps, &phi, &pot, mc).stage("laplace_limit_check")?;
    let gaps: Vec<f64> = rows.iter().map(|r| r.gap).collect();
    Ok((
        Status::from_bool(strictly_decreasing(&gaps)),
        json!({ "rows": rows, "gaps": gaps }),
        Vec::new(),
    ))
}

#[derive(Serialize)]
struct ShockSummary {
    birth: f64,
    samples: usize,
    max_rh_deviation: Option<f64>,
}

fn shock_summary(run: &InviscidRun) -> (Vec<ShockSummary>, Vec<burgers_core::inviscid::ShockRecord>) {
    let records = track_shocks(run, default_shock_threshold(run));
    let summary = records
        .iter()
        .map(|r| ShockSummary {
            birth: r.birth,
            samples: r.len(),
            max_rh_deviation: r.max_rh_deviation(),
        })
        .collect();
    (summary, records)
}

/// Length of the unforced `sin x` breaking run.
pub const BREAKING_SPAN: f64 = 3.0;

pub fn rh_shock(cfg: &ExperimentConfig) -> CheckResult {
    let grid = grid_of(cfg)?;
    let pot = potential_of_cfg(cfg)?;
    let breaking = solve_inviscid(
        &PeriodicField::from_fn(grid, f64::sin),
        &Potential::zero(),
        BREAKING_SPAN,
        grid,
        cfg.cfl,
    )
    .stage("solve_inviscid")?;
    let periodic = relaxed(cfg, grid, &pot)?.as_run().stage("inviscid_periodic")?;
    let (a, ra) = shock_summary(&breaking);
    let (b, rb) = shock_summary(&periodic);
    let bound = 2.0 * grid.dx() / DEFAULT_OUT_DT;
    let within = |s: &[ShockSummary]| s.iter().all(|r| r.max_rh_deviation.is_none_or(|d| d <= bound));
    let ok = !a.is_empty() && !b.is_empty() && within(&a) && within(&b);
    Ok((
        Status::from_bool(ok),
        json!({ "bound": bound, "breaking": a, "periodic": b }),
        vec![
            csv("breaking_shocks", |w| write_shocks(w, &ra))?,
            csv("periodic_shocks", |w| write_shocks(w, &rb))?,
        ],
    ))
}

pub fn periodic_orbits(cfg: &ExperimentConfig) -> CheckResult {
    let pot = potential_of_cfg(cfg)?;
    let scan = ScanConfig {
        q_seeds: cfg.q_seeds,
        p_seeds: cfg.p_seeds,
        ..ScanConfig::default()
    };
    let r = find_periodic_orbits(&pot, &scan).stage("find_periodic_orbits")?;
    let near = |q: f64, p: f64, w: i64| {
        r.fixed_points.iter().any(|f| {
            f.winding == w
                && dist_to_lattice(f.point.q - q) < cfg.tol_fixed_point
                && (f.point.p - p).abs() < cfg.tol_fixed_point
        })
    };
    let ok = r.fixed_points.len() == 2 && near(0.0, 0.0, 1) && near(PI, -2.0, -1);
    let pts = r.fixed_points.clone();
    Ok((
        Status::from_bool(ok),
        json!({
            "count": r.fixed_points.len(),
            "expected": [{"q": 0.0, "p": 0.0, "winding": 1}, {"q": PI, "p": -2.0, "winding": -1}],
            "scan": r,
        }),
        vec![csv("fixed_points", |w| write_fixed_points(w, &pts))?],
    ))
}

/// Deterministic pairs of distinct points on the circle.
fn point_pairs(n: usize, seed: u64) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| (rng.random_range(0.0..TAU), rng.random_range(0.0..TAU)))
        .collect()
}

#[derive(Serialize)]
struct SyncRow {
    x: f64,
    y: f64,
    k1_final: f64,
    smallest_k: Option<usize>,
}

pub fn sync(cfg: &ExperimentConfig) -> CheckResult {
    let grid = grid_of(cfg)?;
    let pot = potential_of_cfg(cfg)?;
    let run = relaxed(cfg, grid, &pot)?.as_run().stage("inviscid_periodic")?;
    let (class_ok, class) = match attractor_classification(&run, cfg.samples, cfg.horizon) {
        Ok(c) => (c.max_deviation < cfg.tol_class, serde_json::to_value(&c)?),
        Err(Error::Ambiguous(msg)) => (false, json!({ "ambiguous": msg })),
        Err(e) => return Err(CliError::Numeric { stage: "attractor_classification", source: e }),
    };
    let mut rows = Vec::new();
    for (x, y) in point_pairs(cfg.pairs, cfg.seed) {
        let seq = sync_measure(&run, x, y, 1, cfg.horizon).stage("sync_measure")?;
        let k = smallest_sync_k(&run, x, y, cfg.horizon, cfg.tol_sync).stage("sync_measure")?;
        rows.push(SyncRow {
            x,
            y,
            k1_final: *seq.last().expect("at least one period"),
            smallest_k: k.map(|(k, _)| k),
        });
    }
    let sync_ok = rows.iter().all(|r| r.k1_final < cfg.tol_sync);
    Ok((
        Status::from_bool(class_ok && sync_ok),
        json!({
            "classification": class,
            "classification_ok": class_ok,
            "classification_tolerance": cfg.tol_class,
            "sync": rows,
            "sync_ok": sync_ok,
            "sync_tolerance": cfg.tol_sync,
        }),
        Vec::new(),
    ))
}

#[derive(Serialize)]
struct RunBounds {
    label: String,
    max_l2: f64,
    max_slope_excess: Option<f64>,
}

/// Random trigonometric polynomial with mean zero.
fn random_cost(grid: SpatialGrid, rng: &mut ChaCha8Rng) -> PeriodicField {
    let c: Vec<(f64, f64)> = (1..=3)
        .map(|_| (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect();
    PeriodicField::from_fn(grid, |x| {
        c.iter()
            .enumerate()
            .map(|(k, (a, b))| {
                let m = (k + 1) as f64;
                a * (m * x).cos() + b * (m * x).sin()
            })
            .sum()
    })
}

pub fn bounds(cfg: &ExperimentConfig) -> CheckResult {
    let grid = grid_of(cfg)?;
    let pot = potential_of_cfg(cfg)?;
    let l2 = l2_bound(&pot);
    let mut runs = Vec::new();
    for (label, u0) in [
        ("relax-zero", PeriodicField::zeros(grid)),
        ("relax-sin", PeriodicField::from_fn(grid, f64::sin)),
    ] {
        let phi_xx = u0.derivative().max();
        let run = solve_inviscid_on(&u0, &pot, 0.0, cfg.relax_periods as f64 * TAU, cfg.cfl, DEFAULT_OUT_DT)
            .stage("solve_inviscid")?;
        let max_l2 = run.slices.iter().map(l2_norm).fold(0.0, f64::max);
        let excess = run
            .times
            .iter()
            .zip(&run.slices)
            .map(|(&t, u)| max_upward_slope(u) - derivative_upper_bound(phi_xx, &pot, t))
            .fold(f64::NEG_INFINITY, f64::max);
        runs.push(RunBounds {
            label: label.into(),
            max_l2,
            max_slope_excess: Some(excess),
        });
    }
    for &eps in &cfg.eps {
        let (_, sol) = viscous_periodic(eps, grid, &pot, cfg.dt).stage("viscous_periodic")?;
        runs.push(RunBounds {
            label: format!("viscous-periodic-{eps}"),
            max_l2: sol.slices.iter().map(l2_norm).fold(0.0, f64::max),
            max_slope_excess: None,
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut pairs = Vec::new();
    for i in 0..cfg.pairs {
        let (a, b) = (random_cost(grid, &mut rng), random_cost(grid, &mut rng));
        let eps = cfg.eps[i % cfg.eps.len()];
        let gap = log_stability_gap(eps, &a, &b, &pot, cfg.t, grid).stage("log_stability_gap")?;
        let allowed = a.sub(&b).sup_norm();
        pairs.push(json!({ "eps": eps, "gap": gap, "sup_difference": allowed, "holds": gap <= allowed + 1e-6 }));
    }
    let l2_ok = runs.iter().all(|r| r.max_l2 <= l2);
    let slope_ok = runs.iter().all(|r| r.max_slope_excess.is_none_or(|e| e <= 1e-6));
    let pairs_ok = pairs.iter().all(|p| p["holds"] == json!(true));
    Ok((
        Status::from_bool(l2_ok && slope_ok && pairs_ok),
        json!({
            "l2_bound": l2,
            "runs": runs,
            "l2_ok": l2_ok,
            "slope_ok": slope_ok,
            "log_stability": pairs,
            "log_stability_ok": pairs_ok,
        }),
        Vec::new(),
    ))
}

pub fn value_gradient(cfg: &ExperimentConfig) -> CheckResult {
    let grid = grid_of(cfg)?;
    let pot = potential_of_cfg(cfg)?;
    let (phi, _) = initial_cost(cfg, grid, &pot)?;
    let r = value_gradient_identity(cfg.t, cfg.x, cfg.dx, cfg.level, &phi, &pot, cfg.restarts, cfg.seed)
        .stage("value_gradient_identity")?;
    let status = if r.ambiguous {
        Status::Informative
    } else {
        Status::from_bool((r.lhs - r.rhs).abs() < cfg.tol_gradient)
    };
    Ok((status, json!({ "identity": r, "difference": (r.lhs - r.rhs).abs(), "tolerance": cfg.tol_gradient }), Vec::new()))
}

/// Every `stride`-th slice, always including the last.
fn thin<T: Clone>(times: &[f64], items: &[T], keep: usize) -> (Vec<f64>, Vec<T>) {
    let stride = times.len().div_ceil(keep.max(1)).max(1);
    let mut idx: Vec<usize> = (0..times.len()).step_by(stride).collect();
    if idx.last() != Some(&(times.len() - 1)) {
        idx.push(times.len() - 1);
    }
    (idx.iter().map(|&k| times[k]).collect(), idx.iter().map(|&k| items[k].clone()).collect())
}

pub fn viscous_solve(cfg: &ExperimentConfig) -> CheckResult {
    let grid = grid_of(cfg)?;
    let pot = potential_of_cfg(cfg)?;
    let (_, phi) = initial_cost(cfg, grid, &pot)?;
    let eps = cfg.eps[0];
    let run = solve_viscous(eps, &phi, &pot, cfg.t, grid, cfg.dt).stage("solve_viscous")?;
    let (times, slices) = thin(&run.times, &run.u, 128);
    let last = run.last_u();
    Ok((
        Status::Pass,
        json!({ "eps": eps, "t": cfg.t, "final_mean": last.mean(), "final_sup": last.sup_norm(), "final_l2": l2_norm(last) }),
        vec![csv("slices", |w| write_slices(w, &times, &slices))?],
    ))
}

pub fn inviscid_solve(cfg: &ExperimentConfig) -> CheckResult {
    let grid = grid_of(cfg)?;
    let pot = potential_of_cfg(cfg)?;
    let u0 = start_field(cfg, grid);
    let run = solve_inviscid(&u0, &pot, cfg.t, grid, cfg.cfl).stage("solve_inviscid")?;
    let (summary, records) = shock_summary(&run);
    let (times, slices) = thin(&run.times, &run.slices, 128);
    Ok((
        Status::Pass,
        json!({ "t": cfg.t, "final_sup": run.last().sup_norm(), "shocks": summary }),
        vec![
            csv("slices", |w| write_slices(w, &times, &slices))?,
            csv("shocks", |w| write_shocks(w, &records))?,
        ],
    ))
}

pub fn periodic_find(cfg: &ExperimentConfig) -> CheckResult {
    let grid = grid_of(cfg)?;
    let pot = potential_of_cfg(cfg)?;
    let inviscid = relaxed(cfg, grid, &pot)?;
    let u_ref = inviscid.u0.mollify(MOLLIFIER_WIDTH);
    let phi_ref = potential_of(&inviscid.u0);
    let mut rows = Vec::new();
    let mut fields = Vec::new();
    for &eps in &cfg.eps {
        let (data, sol) = viscous_periodic(eps, grid, &pot, cfg.dt).stage("viscous_periodic")?;
        rows.push(json!({
            "eps": eps,
            "lambda": data.eigen.lambda,
            "log_lambda": data.eigen.log_lambda,
            "log_lambda_without_constant": data.eigen.log_lambda_without_constant(eps, &pot),
            "eigen_residual": data.eigen.residual,
            "eigen_iterations": data.eigen.iterations,
            "periodicity_residual": sol.periodicity_residual,
            "u_distance": l2_norm(&data.u0.mollify(MOLLIFIER_WIDTH).sub(&u_ref)),
            "phi_distance": data.phi_field.sub(&phi_ref).sup_norm(),
        }));
        fields.push((format!("u0_eps_{eps}"), data.u0));
    }
    let viscous_ok = rows
        .iter()
        .all(|r| r["periodicity_residual"].as_f64().is_some_and(|v| v < VISCOUS_FLOOR));
    let inviscid_ok = inviscid.periodicity_residual < INVISCID_FLOOR;
    let mut columns: Vec<(&str, &PeriodicField)> = fields.iter().map(|(n, f)| (n.as_str(), f)).collect();
    columns.push(("u0_inviscid", &inviscid.u0));
    let artifact = csv("fields", |w| write_fields(w, &columns))?;
    Ok((
        Status::from_bool(viscous_ok && inviscid_ok),
        json!({
            "viscous": rows,
            "inviscid_residual": inviscid.periodicity_residual,
            "inviscid_history": inviscid.residual_history,
            "mollifier_width": MOLLIFIER_WIDTH,
        }),
        vec![artifact],
    ))
}
