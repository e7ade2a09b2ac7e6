//! Numerical laboratory for two-weight fractional Poincaré inequalities and
//! generalized logarithmic Sobolev inequalities on finite weighted spaces.
//!
//! A finite space carries a positive measure and a reflexive "unit ball"
//! relation `U`. Given weights `W <= W_+`, the crate
//!
//! - certifies the admissibility conditions on `(W, W_+)` ([`weights`]),
//! - evaluates the Poincaré, fractional seminorm and Orlicz functionals
//!   ([`functionals`]),
//! - computes the optimal constant at `p = 2`, lower bounds at general `p`,
//!   and a constructive upper bound built from the transition kernel and
//!   Lyapunov-function chain ([`constants`]),
//! - generates the standard worked scenarios ([`scenarios`]).
//!
//! Data-parallel loops go through [`par`], which uses rayon when the
//! `parallel` feature is enabled and falls back to sequential iteration
//! otherwise. Reductions are always performed sequentially in point order so
//! results are bit-identical across thread counts.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod constants;
pub mod error;
pub mod functionals;
pub mod geometry;
pub mod par;
pub mod report;
pub mod scenarios;
pub mod selftest;
pub mod space;
pub mod weights;

pub use error::{Error, Result};
pub use space::{GrowthFit, Relation, Space};
pub use weights::{AdmissibilityCertificate, AdmissibilityParams, WeightPair};

/// Relative slack applied to inequality checks at analytic boundary cases.
pub const REL_SLACK: f64 = 1e-12;

/// `lhs <= rhs` up to [`REL_SLACK`] times the local scale.
#[inline]
pub(crate) fn leq_slack(lhs: f64, rhs: f64) -> bool {
    lhs <= rhs + REL_SLACK * lhs.abs().max(rhs.abs())
}
