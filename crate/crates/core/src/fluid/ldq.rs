//! Longest-dominating-queue phases and the event loop.

use super::lq::point_segment;
use super::sliding::{sliding_phase, Key, SlidingOutcome};
use super::{
    check_nonnegative, FluidError, FluidPolicy, FluidTrajectory, LoopGuard, MaximaState,
    PhaseSolution, Segment, Terminal, Transition,
};
use crate::network::{DerivedQuantities, NetworkSpec, QueueId};
use crate::numeric::TOL;

/// Dominating set of every group: the queues whose output never feeds a
/// strictly longer maximum.
///
/// ```text
/// D_j = { i in G_j : for all s in S, x_i < x_s implies r_is = 0 }
/// ```
pub fn dominating_sets(net: &NetworkSpec, x: &[f64], s: &MaximaState) -> Vec<Vec<QueueId>> {
    dominating_sets_with_tol(net, x, s, 0.0)
}

/// As [`dominating_sets`], with `x_i < x_s` read as `x_i < x_s - tol`.
pub fn dominating_sets_with_tol(
    net: &NetworkSpec,
    x: &[f64],
    s: &MaximaState,
    tol: f64,
) -> Vec<Vec<QueueId>> {
    net.groups()
        .iter()
        .map(|g| {
            g.iter()
                .copied()
                .filter(|&i| s.members().all(|m| !(x[i] < x[m] - tol && net.r(i, m) > 0.0)))
                .collect()
        })
        .collect()
}

/// Pairs whose order matters to LDQ: same group, or linked by routing.
pub(crate) fn ldq_relevance(net: &NetworkSpec) -> Vec<Vec<bool>> {
    let k = net.num_queues();
    (0..k)
        .map(|i| {
            (0..k)
                .map(|j| {
                    i != j
                        && (net.group_of(i) == net.group_of(j)
                            || net.r(i, j) > 0.0
                            || net.r(j, i) > 0.0)
                })
                .collect()
        })
        .collect()
}

/// LDQ service under a strict ordering: each group serves its longest
/// non-empty dominating queue. With `tied_maxima` every queue in the top
/// tie block of its group counts as a maximum; otherwise only the one
/// ranked first does.
pub(crate) fn ldq_allocation(net: &NetworkSpec, keys: &[Key], empty: &[bool], tied_maxima: bool) -> u64 {
    let longest = |items: &mut dyn Iterator<Item = QueueId>| -> Option<QueueId> {
        items.filter(|&i| !empty[i]).fold(None, |best: Option<QueueId>, i| match best {
            Some(b) if !keys[i].gt(keys[b]) => Some(b),
            _ => Some(i),
        })
    };
    let tops: Vec<QueueId> = net
        .groups()
        .iter()
        .flat_map(|g| {
            let top = longest(&mut g.iter().copied());
            g.iter()
                .copied()
                .filter(move |&i| {
                    top.is_some_and(|t| i == t || (tied_maxima && !empty[i] && !keys[t].above(keys[i])))
                })
        })
        .collect();
    let mut mask = 0u64;
    for g in net.groups() {
        let mut dominating = g
            .iter()
            .copied()
            .filter(|&i| tops.iter().all(|&s| !(keys[s].gt(keys[i]) && net.r(i, s) > 0.0)));
        if let Some(i) = longest(&mut dominating) {
            mask |= 1 << i;
        }
    }
    mask
}

/// Pairs whose order matters to LQ: same group only.
pub(crate) fn lq_relevance(net: &NetworkSpec) -> Vec<Vec<bool>> {
    let k = net.num_queues();
    (0..k)
        .map(|i| (0..k).map(|j| i != j && net.group_of(i) == net.group_of(j)).collect())
        .collect()
}

/// LQ service under a strict ordering: each group serves its longest
/// non-empty queue.
pub(crate) fn lq_allocation(net: &NetworkSpec, keys: &[Key], empty: &[bool]) -> [u64; 1] {
    let mut mask = 0u64;
    for g in net.groups() {
        let best = g
            .iter()
            .copied()
            .filter(|&i| !empty[i])
            .reduce(|a, b| if keys[b].gt(keys[a]) { b } else { a });
        if let Some(i) = best {
            mask |= 1 << i;
        }
    }
    [mask]
}

/// Sliding-mode regularization of LQ at `x`; an independent route to the
/// rates given by the block system after jump resolution.
pub fn solve_phase_lq_sliding(net: &NetworkSpec, x: &[f64]) -> Result<PhaseSolution, FluidError> {
    let rel = lq_relevance(net);
    let out = sliding_phase(net, x, &rel, |k, e| lq_allocation(net, k, e))?;
    Ok(to_phase(net, x, &out))
}

/// LDQ phase at `x`.
pub fn solve_phase_ldq(
    net: &NetworkSpec,
    _dq: &DerivedQuantities,
    x: &[f64],
) -> Result<PhaseSolution, FluidError> {
    Ok(to_phase(net, x, &ldq_outcome(net, x)?))
}

fn ldq_outcome(net: &NetworkSpec, x: &[f64]) -> Result<SlidingOutcome, FluidError> {
    let rel = ldq_relevance(net);
    // Tied maxima first. When no combination keeps the ties, the strict
    // orderings are added as further vertices.
    sliding_phase(net, x, &rel, |k, e| [ldq_allocation(net, k, e, true)]).or_else(|_| {
        sliding_phase(net, x, &rel, |k, e| {
            [ldq_allocation(net, k, e, true), ldq_allocation(net, k, e, false)]
        })
    })
}

fn to_phase(net: &NetworkSpec, x: &[f64], out: &SlidingOutcome) -> PhaseSolution {
    let tol = TOL.length(x.iter().copied().fold(0.0, f64::max));
    let alpha = net
        .groups()
        .iter()
        .map(|g| {
            let top = g.iter().map(|&i| x[i]).fold(0.0, f64::max);
            g.iter()
                .filter(|&&i| top - x[i] <= tol)
                .map(|&i| out.drift[i])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    PhaseSolution::from_rates(net, out.tdot.clone(), alpha, true, Vec::new())
}

/// Maxima of `x` once ties are broken by drift.
fn refined_maxima(net: &NetworkSpec, x: &[f64], ph: &PhaseSolution) -> MaximaState {
    let tol = TOL.length(x.iter().copied().fold(0.0, f64::max));
    let sets = net
        .groups()
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let top = g.iter().map(|&i| x[i]).fold(0.0, f64::max);
            if top <= tol && ph.alpha[j] <= TOL.rate_abs {
                return Vec::new();
            }
            g.iter()
                .copied()
                .filter(|&i| top - x[i] <= tol && ph.drift[i] >= ph.alpha[j] - TOL.rate_abs)
                .collect()
        })
        .collect();
    MaximaState::new(sets)
}

#[derive(Debug, Clone, Copy)]
enum Event {
    Meet { upper: QueueId, lower: QueueId },
    Zero(QueueId),
}

pub(crate) fn integrate_ldq(
    net: &NetworkSpec,
    _dq: &DerivedQuantities,
    x0: &[f64],
    horizon: f64,
) -> Result<FluidTrajectory, FluidError> {
    let k = net.num_queues();
    let scale = x0.iter().copied().fold(0.0, f64::max);
    let len_tol = TOL.length(scale);
    let rel = ldq_relevance(net);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut segments = Vec::new();
    let mut entered_by = Transition::Initial;
    let mut guard = LoopGuard::new(k, x0);

    loop {
        let out = ldq_outcome(net, &x)?;
        let ph = to_phase(net, &x, &out);
        if x.iter().all(|&v| v <= len_tol) {
            x.iter_mut().for_each(|v| *v = 0.0);
            let out = ldq_outcome(net, &x)?;
            let ph = to_phase(net, &x, &out);
            let zero = MaximaState::zero(net.num_groups());
            segments.push(point_segment(t, &x, zero, ph, entered_by));
            return Ok(finish(segments, Terminal::Drained { t }));
        }
        let state = refined_maxima(net, &x, &ph);
        if ph.drift.iter().all(|v| v.abs() <= TOL.stall_drift) {
            segments.push(point_segment(t, &x, state, ph, entered_by));
            return Ok(finish(segments, Terminal::Stalled { t, x }));
        }

        let v = &ph.drift;
        let mut cands: Vec<(f64, Event)> = Vec::new();
        for i in 0..k {
            if x[i] > len_tol && v[i] < -TOL.rate_abs {
                cands.push((x[i] / -v[i], Event::Zero(i)));
            }
            for j in 0..k {
                if rel[i][j] && x[i] > x[j] + len_tol {
                    let closing = v[j] - v[i];
                    if closing > TOL.rate_abs {
                        cands.push(((x[i] - x[j]) / closing, Event::Meet { upper: i, lower: j }));
                    }
                }
            }
        }
        let remaining = horizon - t;
        let dt_event = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let hit_horizon = dt_event > remaining;
        let dt = if hit_horizon { remaining.max(0.0) } else { dt_event };
        let x_start = x.clone();
        for i in 0..k {
            x[i] += v[i] * dt;
        }
        for block in &out.tied {
            let m = block.iter().map(|&i| x[i]).sum::<f64>() / block.len() as f64;
            block.iter().for_each(|&i| x[i] = m);
        }
        for &i in &out.held {
            if v[i].abs() <= TOL.rate_abs {
                x[i] = 0.0;
            }
        }
        if !hit_horizon {
            for c in cands.iter().filter(|c| c.0 <= dt_event + TOL.event_merge) {
                match c.1 {
                    Event::Zero(i) => x[i] = 0.0,
                    Event::Meet { upper, lower } => x[lower] = x[upper],
                }
            }
        }
        check_nonnegative(&mut x, scale, t + dt)?;
        segments.push(Segment {
            t_start: t,
            t_end: t + dt,
            x_start,
            x_end: x.clone(),
            state,
            phase: ph,
            entered_by: entered_by.clone(),
        });
        t += dt;
        if hit_horizon {
            return Ok(finish(segments, Terminal::HorizonReached { t }));
        }
        entered_by = Transition::Reorder;
        guard.step(&x, t)?;
    }
}

fn finish(segments: Vec<Segment>, terminal: Terminal) -> FluidTrajectory {
    FluidTrajectory {
        policy: FluidPolicy::Ldq,
        segments,
        terminal,
    }
}
