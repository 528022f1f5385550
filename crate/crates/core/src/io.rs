//! Plot-ready CSV output.

use std::io::Write;

use serde::Serialize;

use crate::error::{invalid, Result};
use crate::field::{PeriodicField, Trajectory};
use crate::inviscid::ShockRecord;
use crate::lagrangian::PoincareFixedPoint;

#[derive(Serialize)]
struct SliceRow {
    t: f64,
    x: f64,
    u: f64,
}

/// `t,x,u` for every node of every slice.
pub fn write_slices(w: impl Write, times: &[f64], slices: &[PeriodicField]) -> Result<()> {
    if times.len() != slices.len() {
        return Err(invalid("times and slices differ in length"));
    }
    let mut out = csv::Writer::from_writer(w);
    for (&t, s) in times.iter().zip(slices) {
        for (x, &u) in s.grid().nodes().into_iter().zip(s.values()) {
            out.serialize(SliceRow { t, x, u })?;
        }
    }
    out.flush()?;
    Ok(())
}

/// `x` followed by one column per named field; all fields share a grid.
pub fn write_fields(w: impl Write, columns: &[(&str, &PeriodicField)]) -> Result<()> {
    let Some((_, first)) = columns.first() else {
        return Err(invalid("no fields to write"));
    };
    let grid = first.grid();
    if columns.iter().any(|(_, f)| f.grid() != grid) {
        return Err(invalid("fields live on different grids"));
    }
    let mut out = csv::Writer::from_writer(w);
    out.write_record(std::iter::once("x").chain(columns.iter().map(|(n, _)| *n)))?;
    for (j, x) in grid.nodes().into_iter().enumerate() {
        let row: Vec<String> = std::iter::once(x)
            .chain(columns.iter().map(|(_, f)| f.values()[j]))
            .map(|v| v.to_string())
            .collect();
        out.write_record(&row)?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ShockRow {
    shock: usize,
    t: f64,
    position: f64,
    left: f64,
    right: f64,
}

/// One row per shock per slice; positions are unwrapped.
pub fn write_shocks(w: impl Write, records: &[ShockRecord]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for (shock, r) in records.iter().enumerate() {
        for k in 0..r.len() {
            out.serialize(ShockRow {
                shock,
                t: r.times[k],
                position: r.positions[k],
                left: r.left[k],
                right: r.right[k],
            })?;
        }
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct FixedPointRow {
    q: f64,
    p: f64,
    winding: i64,
    residual: f64,
    jacobian_det: f64,
    jacobian_trace: f64,
}

pub fn write_fixed_points(w: impl Write, points: &[PoincareFixedPoint]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for fp in points {
        out.serialize(FixedPointRow {
            q: fp.point.q,
            p: fp.point.p,
            winding: fp.winding,
            residual: fp.residual,
            jacobian_det: fp.jacobian_det,
            jacobian_trace: fp.jacobian_trace,
        })?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct TrajectoryRow {
    t: f64,
    q: f64,
    v: f64,
}

pub fn write_trajectory(w: impl Write, traj: &Trajectory) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for ((&t, &q), &v) in traj.times().iter().zip(traj.positions()).zip(traj.velocities()) {
        out.serialize(TrajectoryRow { t, q, v })?;
    }
    out.flush()?;
    Ok(())
}
