//! Numerical laboratory for the forced Burgers equation on the circle
//!
//! `u_t + (u²/2)_x = (ε/2) u_xx + V_x`, with `V(t,x) = cos(sin t) − cos(x + sin t)`
//! as the default forcing.
//!
//! The crate covers viscous solvers (log-transform and direct), entropy
//! solutions of the inviscid equation, Euler–Lagrange trajectories and their
//! period map, the action functional on piecewise-linear path spaces, and
//! periodic solutions for both regimes.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod error;
pub mod field;
pub mod inviscid;
pub mod io;
pub mod lagrangian;
pub mod periodic;
pub mod viscous;

pub use error::{Error, Result};
pub use field::{
    eval_potential, eval_potential_gradient, l2_norm, quadrature, InitialCost, PeriodicField,
    Potential, PotentialBounds, SpatialGrid, Trajectory,
};
