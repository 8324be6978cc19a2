//! Shared numeric tolerances.
//!
//! Every comparison against a tolerance in this crate goes through the
//! [`TOL`] record so the thresholds are declared exactly once.

/// Tolerance record used across the crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// Relative residual accepted for small dense linear solves.
    pub residual_rel: f64,
    /// Absolute tolerance when comparing rates (jobs per unit time).
    pub rate_abs: f64,
    /// Relative tolerance for deciding that two queue lengths are tied.
    pub tie_rel: f64,
    /// Two events closer than this (in time units) are processed together.
    pub event_merge: f64,
    /// Threshold on `||(R^T)^n||_inf` for declaring the network open.
    pub open_power: f64,
    /// Drift vectors with max-norm below this are treated as a fixed point.
    pub stall_drift: f64,
    /// Slack allowed on time-sharing rates before a phase is infeasible.
    pub feasibility: f64,
}

pub const TOL: Tolerances = Tolerances {
    residual_rel: 1e-9,
    rate_abs: 1e-9,
    tie_rel: 1e-9,
    event_merge: 1e-12,
    open_power: 1e-12,
    stall_drift: 1e-9,
    feasibility: 1e-9,
};

impl Tolerances {
    /// Absolute length tolerance for a configuration whose largest queue is `scale`.
    pub fn length(&self, scale: f64) -> f64 {
        self.tie_rel * (1.0 + scale.abs())
    }
}
