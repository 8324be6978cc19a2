//! Exact event-driven integration of the fluid model
//!
//! ```text
//! X_j(t) = X_j(0) + lambda_j t - mu_j T_j(t) + sum_i r_ij mu_i T_i(t)
//! ```
//!
//! Under LQ and LDQ scheduling the time-sharing rates `Tdot` are piecewise
//! constant, so `X` is piecewise affine. Each phase is solved in closed form
//! and the next event time is computed from the affine dynamics directly;
//! there is no time stepping.

mod ldq;
mod lq;
mod sliding;

use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::network::{DerivedQuantities, GroupId, NetworkSpec, QueueId};
use crate::numeric::TOL;

pub use ldq::{dominating_sets, dominating_sets_with_tol, solve_phase_ldq, solve_phase_lq_sliding};
pub use lq::{resolve_jump, solve_phase_lq, JumpResolution};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum FluidError {
    #[error("phase system is singular in state {state}")]
    SingularPhase { state: String },
    #[error("no feasible sub-state of {state}: {detail}")]
    NoFeasibleSubstate { state: String, detail: String },
    #[error("{events} phase changes at t = {t} without the max queue length decreasing")]
    PhaseLoopGuard { t: f64, events: usize },
    #[error("queue {queue} fell to {value:e} at t = {t}")]
    NegativeLevel { queue: QueueId, value: f64, t: f64 },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("tie structure has {0} orderings, too many to regularize")]
    TooManyOrderings(usize),
    #[error("sliding-mode linear program failed: {0}")]
    Sliding(String),
}

/// Scheduling policy driving the fluid model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum FluidPolicy {
    Lq,
    Ldq,
}

impl fmt::Display for FluidPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FluidPolicy::Lq => f.write_str("LQ"),
            FluidPolicy::Ldq => f.write_str("LDQ"),
        }
    }
}

/// Per-group sets of queues attaining the group maximum.
///
/// An empty set means every queue of that group is empty.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct MaximaState {
    sets: Vec<Vec<QueueId>>,
}

impl MaximaState {
    pub fn new(mut sets: Vec<Vec<QueueId>>) -> Self {
        for s in &mut sets {
            s.sort_unstable();
            s.dedup();
        }
        MaximaState { sets }
    }

    /// The zero state: every group empty.
    pub fn zero(num_groups: usize) -> Self {
        MaximaState {
            sets: vec![Vec::new(); num_groups],
        }
    }

    /// State whose members are the queues with bit `i` set in `mask`.
    pub fn from_mask(net: &NetworkSpec, mask: u64) -> Self {
        let sets = net
            .groups()
            .iter()
            .map(|g| g.iter().copied().filter(|&i| mask >> i & 1 == 1).collect())
            .collect();
        MaximaState::new(sets)
    }

    pub fn mask(&self) -> u64 {
        self.sets.iter().flatten().fold(0, |m, &i| m | 1 << i)
    }

    pub fn sets(&self) -> &[Vec<QueueId>] {
        &self.sets
    }

    pub fn set(&self, j: GroupId) -> &[QueueId] {
        &self.sets[j]
    }

    /// Total number of maxima `L`.
    pub fn total(&self) -> usize {
        self.sets.iter().map(Vec::len).sum()
    }

    pub fn is_zero(&self) -> bool {
        self.sets.iter().all(Vec::is_empty)
    }

    pub fn contains(&self, q: QueueId) -> bool {
        self.sets.iter().any(|s| s.contains(&q))
    }

    pub fn members(&self) -> impl Iterator<Item = QueueId> + '_ {
        self.sets.iter().flatten().copied()
    }

    pub(crate) fn insert(&mut self, net: &NetworkSpec, q: QueueId) {
        let s = &mut self.sets[net.group_of(q)];
        if !s.contains(&q) {
            s.push(q);
            s.sort_unstable();
        }
    }

    pub(crate) fn remove(&mut self, q: QueueId) {
        for s in &mut self.sets {
            s.retain(|&i| i != q);
        }
    }

    pub(crate) fn set_group(&mut self, j: GroupId, members: Vec<QueueId>) {
        self.sets[j] = members;
        self.sets[j].sort_unstable();
    }

    /// Label with 1-based queue numbers, groups separated by `|`, `-` for an
    /// empty group: `(1,2|4)`, `(1|-)`.
    pub fn label(&self) -> String {
        let parts: Vec<String> = self
            .sets
            .iter()
            .map(|s| {
                if s.is_empty() {
                    "-".to_string()
                } else {
                    s.iter()
                        .map(|i| (i + 1).to_string())
                        .collect::<Vec<_>>()
                        .join(",")
                }
            })
            .collect();
        format!("({})", parts.join("|"))
    }
}

impl fmt::Display for MaximaState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

/// Time-sharing rates and drifts of one linear phase.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PhaseSolution {
    /// Fraction of its group's server effort each queue receives.
    pub tdot: Vec<f64>,
    /// Drift of each group's maximum (zero for a held-empty group).
    pub alpha: Vec<f64>,
    /// Drift of every queue.
    pub drift: Vec<f64>,
    pub feasible: bool,
    /// Queues with positive time-sharing rate.
    pub served: Vec<QueueId>,
    /// Empty groups that cannot absorb their inflow at full effort.
    pub overloaded: Vec<GroupId>,
}

impl PhaseSolution {
    pub(crate) fn from_rates(
        net: &NetworkSpec,
        tdot: Vec<f64>,
        alpha: Vec<f64>,
        feasible: bool,
        overloaded: Vec<GroupId>,
    ) -> Self {
        let drift = net.drift(&tdot);
        let served = (0..tdot.len())
            .filter(|&i| tdot[i] > TOL.feasibility)
            .collect();
        PhaseSolution {
            tdot,
            alpha,
            drift,
            feasible,
            served,
            overloaded,
        }
    }
}

/// How the state of a segment was entered.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Transition {
    Initial,
    /// A new maximum joined and the augmented state is feasible.
    Increase { entering: Vec<QueueId> },
    /// A new maximum joined, the augmented state was infeasible.
    Jump {
        entering: Vec<QueueId>,
        via: MaximaState,
        removed: Vec<QueueId>,
    },
    /// A group's maximum reached zero.
    Empty { groups: Vec<GroupId> },
    /// Ordering change of the queue lengths (LDQ).
    Reorder,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub x_start: Vec<f64>,
    pub x_end: Vec<f64>,
    pub state: MaximaState,
    pub phase: PhaseSolution,
    pub entered_by: Transition,
}

impl Segment {
    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }

    /// Max-norm of `X_end - X_start - drift * dt`.
    pub fn residual(&self) -> f64 {
        let dt = self.duration();
        self.x_start
            .iter()
            .zip(&self.x_end)
            .zip(&self.phase.drift)
            .map(|((a, b), v)| (b - a - v * dt).abs())
            .fold(0.0, f64::max)
    }

    /// Largest drift difference between two maxima of the same group.
    pub fn maxima_drift_spread(&self) -> f64 {
        self.state
            .sets()
            .iter()
            .map(|s| {
                let (lo, hi) = s.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &i| {
                    let v = self.phase.drift[i];
                    (lo.min(v), hi.max(v))
                });
                if s.len() > 1 {
                    hi - lo
                } else {
                    0.0
                }
            })
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub enum Terminal {
    /// Every queue reached zero at time `t`.
    Drained { t: f64 },
    HorizonReached { t: f64 },
    /// The drift vanished with work still present.
    Stalled { t: f64, x: Vec<f64> },
}

impl Terminal {
    pub fn time(&self) -> f64 {
        match self {
            Terminal::Drained { t } | Terminal::HorizonReached { t } | Terminal::Stalled { t, .. } => {
                *t
            }
        }
    }
}

impl fmt::Display for Terminal {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Terminal::Drained { t } => write!(f, "Drained t*={t}"),
            Terminal::HorizonReached { t } => write!(f, "HorizonReached t={t}"),
            Terminal::Stalled { t, x } => write!(f, "Stalled t={t} x={x:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FluidTrajectory {
    pub policy: FluidPolicy,
    pub segments: Vec<Segment>,
    pub terminal: Terminal,
}

impl FluidTrajectory {
    /// Sequence of visited states with consecutive repeats collapsed.
    pub fn state_path(&self) -> Vec<MaximaState> {
        let mut path: Vec<MaximaState> = Vec::new();
        for seg in &self.segments {
            if path.last() != Some(&seg.state) {
                path.push(seg.state.clone());
            }
        }
        path
    }

    pub fn drain_time(&self) -> Option<f64> {
        match self.terminal {
            Terminal::Drained { t } => Some(t),
            _ => None,
        }
    }

    pub fn end_time(&self) -> f64 {
        self.terminal.time()
    }

    /// Fluid level at time `t`, held constant past the end of the trajectory.
    pub fn x_at(&self, t: f64) -> Vec<f64> {
        let first = match self.segments.first() {
            Some(s) => s,
            None => return Vec::new(),
        };
        if t <= first.t_start {
            return first.x_start.clone();
        }
        let idx = self.segments.partition_point(|s| s.t_end < t);
        match self.segments.get(idx) {
            Some(seg) => {
                let dt = (t - seg.t_start).max(0.0);
                seg.x_start
                    .iter()
                    .zip(&seg.phase.drift)
                    .map(|(x, v)| (x + v * dt).max(0.0))
                    .collect()
            }
            None => self.segments.last().unwrap().x_end.clone(),
        }
    }

    /// Time at which group `j` first reaches zero and stays there, if it does.
    pub fn group_empty_time(&self, net: &NetworkSpec, j: GroupId) -> Option<f64> {
        let mut empty_since = None;
        for seg in &self.segments {
            let empty = net.group(j).iter().all(|&i| seg.x_end[i] == 0.0);
            match (empty, empty_since) {
                (true, None) => empty_since = Some(seg.t_end),
                (false, _) => empty_since = None,
                _ => {}
            }
        }
        empty_since
    }
}

/// Per-group maxima of `x`.
///
/// `i` is a maximum of its group iff `max - x_i <= tol (1 + max)`; a group
/// whose maximum is at most `tol` is empty.
pub fn maxima(x: &[f64], net: &NetworkSpec, tol: f64) -> MaximaState {
    let sets = net
        .groups()
        .iter()
        .map(|g| {
            let max = g.iter().map(|&i| x[i]).fold(f64::NEG_INFINITY, f64::max);
            if max <= tol {
                Vec::new()
            } else {
                let band = tol * (1.0 + max);
                g.iter().copied().filter(|&i| max - x[i] <= band).collect()
            }
        })
        .collect();
    MaximaState::new(sets)
}

/// Outcome of holding an empty group at zero.
#[derive(Debug, Clone, PartialEq)]
pub enum HoldAllocation {
    /// Rates `inflow_i / mu_i` for the group's queues, in group order.
    Held(Vec<f64>),
    /// The group cannot absorb its inflow; it leaves the empty state.
    Overloaded { load: f64 },
}

/// Allocation that keeps an empty group at zero: `Tdot_i = inflow_i / mu_i`
/// when the resulting load is at most one.
pub fn hold_at_zero(net: &NetworkSpec, j: GroupId, inflow: &[f64]) -> HoldAllocation {
    let g = net.group(j);
    let rates: Vec<f64> = g
        .iter()
        .zip(inflow)
        .map(|(&i, &f)| f.max(0.0) / net.mu()[i])
        .collect();
    let load: f64 = rates.iter().sum();
    if load <= 1.0 + TOL.feasibility {
        HoldAllocation::Held(rates)
    } else {
        HoldAllocation::Overloaded { load }
    }
}

/// Integrates the fluid model from `x0` until drained, stalled, or `horizon`.
pub fn integrate(
    net: &NetworkSpec,
    dq: &DerivedQuantities,
    x0: &[f64],
    policy: FluidPolicy,
    horizon: f64,
) -> Result<FluidTrajectory, FluidError> {
    if x0.len() != net.num_queues() {
        return Err(FluidError::InvalidInput(format!(
            "x0 has {} entries, network has {} queues",
            x0.len(),
            net.num_queues()
        )));
    }
    if x0.iter().any(|&v| !(v.is_finite() && v >= 0.0)) {
        return Err(FluidError::InvalidInput("x0 must be finite and non-negative".into()));
    }
    if !(horizon.is_finite() && horizon >= 0.0) {
        return Err(FluidError::InvalidInput("horizon must be finite and non-negative".into()));
    }
    match policy {
        FluidPolicy::Lq => lq::integrate_lq(net, dq, x0, horizon),
        FluidPolicy::Ldq => ldq::integrate_ldq(net, dq, x0, horizon),
    }
}

/// Tracks progress for the loop guard: phase changes without the max-norm
/// of `x` decreasing.
pub(crate) struct LoopGuard {
    best: f64,
    since: usize,
    limit: usize,
}

impl LoopGuard {
    pub(crate) fn new(num_queues: usize, x0: &[f64]) -> Self {
        let limit = 10usize.saturating_mul(1usize << num_queues.min(40));
        LoopGuard {
            best: x0.iter().copied().fold(0.0, f64::max),
            since: 0,
            limit,
        }
    }

    pub(crate) fn step(&mut self, x: &[f64], t: f64) -> Result<(), FluidError> {
        let norm = x.iter().copied().fold(0.0, f64::max);
        if norm < self.best * (1.0 - 1e-12) {
            self.best = norm;
            self.since = 0;
        } else {
            self.since += 1;
            if self.since > self.limit {
                return Err(FluidError::PhaseLoopGuard {
                    t,
                    events: self.since,
                });
            }
        }
        Ok(())
    }
}

pub(crate) fn check_nonnegative(x: &mut [f64], scale: f64, t: f64) -> Result<(), FluidError> {
    let floor = -TOL.length(scale);
    for (i, v) in x.iter_mut().enumerate() {
        if *v < 0.0 {
            if *v < floor {
                return Err(FluidError::NegativeLevel {
                    queue: i,
                    value: *v,
                    t,
                });
            }
            *v = 0.0;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{serial_route, validate};

    fn four_queue() -> NetworkSpec {
        validate(&serial_route(
            &[0, 2, 3, 1],
            vec![vec![0, 1], vec![2, 3]],
            0.4,
            vec![3.0, 1.0, 1.0, 1.0],
        ))
        .unwrap()
    }

    #[test]
    fn maxima_examples() {
        let net = four_queue();
        let tol = TOL.tie_rel;
        assert_eq!(
            maxima(&[40.0, 30.0, 20.0, 10.0], &net, tol),
            MaximaState::new(vec![vec![0], vec![2]])
        );
        assert_eq!(
            maxima(&[0.0, 0.0, 5.0, 5.0], &net, tol),
            MaximaState::new(vec![vec![], vec![2, 3]])
        );
        assert_eq!(
            maxima(&[7.0; 4], &net, tol),
            MaximaState::new(vec![vec![0, 1], vec![2, 3]])
        );
    }

    #[test]
    fn labels_are_one_based() {
        let s = MaximaState::new(vec![vec![1, 0], vec![3]]);
        assert_eq!(s.label(), "(1,2|4)");
        assert_eq!(MaximaState::new(vec![vec![0], vec![]]).label(), "(1|-)");
        let net = four_queue();
        assert_eq!(MaximaState::from_mask(&net, s.mask()), s);
    }

    #[test]
    fn hold_at_zero_cases() {
        let net = four_queue();
        match hold_at_zero(&net, 0, &[0.0, 0.0]) {
            HoldAllocation::Held(r) => assert_eq!(r, vec![0.0, 0.0]),
            other => panic!("{other:?}"),
        }
        // group 0 = queues {0, 1}, mu = 3 and 1: 0.6 + 0.6 = 1.2
        assert!(matches!(
            hold_at_zero(&net, 0, &[1.8, 0.6]),
            HoldAllocation::Overloaded { load } if (load - 1.2).abs() < 1e-12
        ));
        match hold_at_zero(&net, 0, &[0.4, 0.4]) {
            HoldAllocation::Held(r) => {
                assert!((r[0] - 0.4 / 3.0).abs() < 1e-12);
                assert!((r[1] - 0.4).abs() < 1e-12);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn zero_initial_condition_drains_immediately() {
        let net = four_queue();
        let dq = crate::network::derive(&net).unwrap();
        for policy in [FluidPolicy::Lq, FluidPolicy::Ldq] {
            let traj = integrate(&net, &dq, &[0.0; 4], policy, 100.0).unwrap();
            assert_eq!(traj.terminal, Terminal::Drained { t: 0.0 });
            assert_eq!(traj.segments.len(), 1);
            assert!(traj.segments[0].state.is_zero());
            // zero state holds at the nominal allocation
            let dq_nu = &dq.nu;
            for i in 0..4 {
                let expect = dq_nu[i] / net.mu()[i];
                assert!((traj.segments[0].phase.tdot[i] - expect).abs() < 1e-9);
                assert!(traj.segments[0].phase.drift[i].abs() < 1e-9);
            }
        }
    }

    #[test]
    fn bad_inputs_are_rejected() {
        let net = four_queue();
        let dq = crate::network::derive(&net).unwrap();
        assert!(integrate(&net, &dq, &[1.0; 3], FluidPolicy::Lq, 1.0).is_err());
        assert!(integrate(&net, &dq, &[-1.0, 0.0, 0.0, 0.0], FluidPolicy::Lq, 1.0).is_err());
        assert!(integrate(&net, &dq, &[1.0; 4], FluidPolicy::Lq, f64::NAN).is_err());
    }
}
