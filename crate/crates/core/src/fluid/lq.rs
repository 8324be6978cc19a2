//! Longest-queue phases: the block system for a maxima state, jump
//! resolution, and the event loop.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::{
    check_nonnegative, hold_at_zero, maxima, FluidError, FluidPolicy, FluidTrajectory,
    HoldAllocation, LoopGuard, MaximaState, PhaseSolution, Segment, Terminal, Transition,
};
use crate::network::{DerivedQuantities, GroupId, NetworkSpec, QueueId};
use crate::numeric::TOL;

/// Solves the phase of maxima state `s`.
///
/// Unknowns are `Tdot_L` for the maxima, one common drift `alpha_j` per
/// non-empty group, and `Tdot` for every queue of an empty group. Rows say
/// that each maximum drifts at its group's `alpha`, that each non-empty
/// group works at full effort, and that each empty group's queues stay at
/// zero. Queues that are neither maxima nor in an empty group get no effort.
///
/// The result is infeasible when some rate is negative or an empty group
/// would need more than full effort (reported in `overloaded`).
pub fn solve_phase_lq(
    net: &NetworkSpec,
    dq: &DerivedQuantities,
    s: &MaximaState,
) -> Result<PhaseSolution, FluidError> {
    let k = net.num_queues();
    let j_count = net.num_groups();
    let mut unknowns: Vec<QueueId> = Vec::new();
    let mut active: Vec<bool> = vec![false; k];
    let mut busy_groups: Vec<GroupId> = Vec::new();
    let mut held_groups: Vec<GroupId> = Vec::new();
    for j in 0..j_count {
        if s.set(j).is_empty() {
            held_groups.push(j);
            unknowns.extend_from_slice(net.group(j));
        } else {
            busy_groups.push(j);
            for &i in s.set(j) {
                unknowns.push(i);
                active[i] = true;
            }
        }
    }
    let n_t = unknowns.len();
    let n = n_t + busy_groups.len();
    let mut alpha_col = vec![usize::MAX; j_count];
    for (c, &j) in busy_groups.iter().enumerate() {
        alpha_col[j] = n_t + c;
    }

    let mut a = DMatrix::<f64>::zeros(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (r, &i) in unknowns.iter().enumerate() {
        // Xdot_i = lambda_i + sum_k D_ki Tdot_k
        for (c, &kq) in unknowns.iter().enumerate() {
            a[(r, c)] = dq.d[(kq, i)];
        }
        b[r] = -net.lambda()[i];
        if active[i] {
            a[(r, alpha_col[net.group_of(i)])] = -1.0;
        }
    }
    for (c, &j) in busy_groups.iter().enumerate() {
        let row = n_t + c;
        for (col, &i) in unknowns.iter().enumerate() {
            if active[i] && net.group_of(i) == j {
                a[(row, col)] = 1.0;
            }
        }
        b[row] = 1.0;
    }

    let sol = a
        .clone()
        .lu()
        .solve(&b)
        .filter(|x| x.iter().all(|v| v.is_finite()))
        .ok_or_else(|| FluidError::SingularPhase { state: s.label() })?;
    let resid = (&a * &sol - &b).amax();
    if resid > TOL.residual_rel * (1.0 + b.amax()) * 1e3 {
        return Err(FluidError::SingularPhase { state: s.label() });
    }

    let mut tdot = vec![0.0; k];
    for (c, &i) in unknowns.iter().enumerate() {
        tdot[i] = sol[c];
    }
    let mut alpha = vec![0.0; j_count];
    for &j in &busy_groups {
        alpha[j] = sol[alpha_col[j]];
    }

    let mut overloaded = Vec::new();
    if !held_groups.is_empty() {
        let inflow = inflow(net, &tdot);
        for &j in &held_groups {
            let g_in: Vec<f64> = net.group(j).iter().map(|&i| inflow[i]).collect();
            if let HoldAllocation::Overloaded { .. } = hold_at_zero(net, j, &g_in) {
                overloaded.push(j);
            }
        }
    }
    let feasible =
        overloaded.is_empty() && unknowns.iter().all(|&i| tdot[i] >= -TOL.feasibility);
    Ok(PhaseSolution::from_rates(net, tdot, alpha, feasible, overloaded))
}

/// `lambda_i + sum_k r_ki mu_k Tdot_k`: the total arrival rate into each queue.
pub(crate) fn inflow(net: &NetworkSpec, tdot: &[f64]) -> Vec<f64> {
    let k = net.num_queues();
    (0..k)
        .map(|i| {
            net.lambda()[i]
                + (0..k)
                    .map(|kq| net.r(kq, i) * net.mu()[kq] * tdot[kq])
                    .sum::<f64>()
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct JumpResolution {
    pub state: MaximaState,
    /// Queues dropped from the maxima; they fall behind at once.
    pub removed: Vec<QueueId>,
    /// Empty groups that had to start working again.
    pub reactivated: Vec<GroupId>,
    pub phase: PhaseSolution,
}

/// Largest feasible sub-state of `s_inf`.
///
/// Overloaded empty groups are reactivated with every queue as a maximum.
/// Then the maximum with the most negative rate is dropped and the phase
/// re-solved, never dropping a queue in `entering` or the last maximum of a
/// group. A dropped queue must not out-drift its group's maximum. If the
/// greedy pass fails, every sub-state is tried, largest first.
pub fn resolve_jump(
    net: &NetworkSpec,
    dq: &DerivedQuantities,
    s_inf: &MaximaState,
    entering: &[QueueId],
) -> Result<JumpResolution, FluidError> {
    let mut s = s_inf.clone();
    let mut removed: Vec<QueueId> = Vec::new();
    let mut reactivated: Vec<GroupId> = Vec::new();
    let max_rounds = net.num_queues() + net.num_groups() + 2;
    for _ in 0..max_rounds {
        let ph = solve_phase_lq(net, dq, &s)?;
        if !ph.overloaded.is_empty() {
            for &j in &ph.overloaded {
                s.set_group(j, net.group(j).to_vec());
                reactivated.push(j);
            }
            continue;
        }
        if ph.feasible {
            if removed_consistent(net, &ph, &removed) {
                return Ok(JumpResolution {
                    state: s,
                    removed,
                    reactivated,
                    phase: ph,
                });
            }
            break;
        }
        let candidate = s
            .members()
            .filter(|&i| ph.tdot[i] < -TOL.feasibility)
            .filter(|i| !entering.contains(i))
            .filter(|&i| s.set(net.group_of(i)).len() > 1)
            .min_by(|&a, &b| ph.tdot[a].total_cmp(&ph.tdot[b]));
        match candidate {
            Some(q) => {
                s.remove(q);
                removed.push(q);
            }
            None => break,
        }
    }

    // Exhaustive fallback over sub-states of the (reactivated) candidate set.
    let mut base = s_inf.clone();
    for &j in &reactivated {
        base.set_group(j, net.group(j).to_vec());
    }
    exhaustive(net, dq, &base, entering, reactivated)
}

fn removed_consistent(net: &NetworkSpec, ph: &PhaseSolution, removed: &[QueueId]) -> bool {
    removed
        .iter()
        .all(|&q| ph.drift[q] <= ph.alpha[net.group_of(q)] + TOL.rate_abs)
}

fn exhaustive(
    net: &NetworkSpec,
    dq: &DerivedQuantities,
    base: &MaximaState,
    entering: &[QueueId],
    reactivated: Vec<GroupId>,
) -> Result<JumpResolution, FluidError> {
    // Free members may be dropped; entering members are kept.
    let free: Vec<QueueId> = base.members().filter(|i| !entering.contains(i)).collect();
    if free.len() > 24 {
        return Err(FluidError::NoFeasibleSubstate {
            state: base.label(),
            detail: format!("{} droppable maxima, too many to search", free.len()),
        });
    }
    let mut drops: Vec<u32> = (0..1u32 << free.len()).collect();
    drops.sort_by_key(|m| (m.count_ones(), *m));
    for m in drops {
        let mut s = base.clone();
        let mut removed = Vec::new();
        for (b, &q) in free.iter().enumerate() {
            if m >> b & 1 == 1 {
                s.remove(q);
                removed.push(q);
            }
        }
        if base
            .sets()
            .iter()
            .zip(s.sets())
            .any(|(was, now)| !was.is_empty() && now.is_empty())
        {
            continue;
        }
        let ph = match solve_phase_lq(net, dq, &s) {
            Ok(ph) => ph,
            Err(FluidError::SingularPhase { .. }) => continue,
            Err(e) => return Err(e),
        };
        if ph.feasible && removed_consistent(net, &ph, &removed) {
            return Ok(JumpResolution {
                state: s,
                removed,
                reactivated,
                phase: ph,
            });
        }
    }
    Err(FluidError::NoFeasibleSubstate {
        state: base.label(),
        detail: "every sub-state has a negative rate or a maximum that out-drifts its group"
            .into(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Event {
    Enter(QueueId),
    Empty(GroupId),
}

pub(crate) fn integrate_lq(
    net: &NetworkSpec,
    dq: &DerivedQuantities,
    x0: &[f64],
    horizon: f64,
) -> Result<FluidTrajectory, FluidError> {
    let scale = x0.iter().copied().fold(0.0, f64::max);
    let len_tol = TOL.length(scale);
    let mut x = x0.to_vec();
    let mut t = 0.0;
    let initial = maxima(&x, net, TOL.tie_rel);
    let res = resolve_jump(net, dq, &initial, &[])?;
    let changed = res.state_changed(&initial);
    let mut state = res.state;
    let mut entered_by = if changed {
        Transition::Jump {
            entering: Vec::new(),
            via: initial,
            removed: res.removed.clone(),
        }
    } else {
        Transition::Initial
    };
    let mut segments = Vec::new();
    let mut guard = LoopGuard::new(net.num_queues(), x0);

    loop {
        let ph = solve_phase_lq(net, dq, &state)?;
        if !ph.feasible {
            return Err(FluidError::NoFeasibleSubstate {
                state: state.label(),
                detail: "tracked state became infeasible".into(),
            });
        }
        if state.is_zero() || x.iter().all(|&v| v <= len_tol) {
            x.iter_mut().for_each(|v| *v = 0.0);
            let zero = MaximaState::zero(net.num_groups());
            let ph = solve_phase_lq(net, dq, &zero)?;
            segments.push(point_segment(t, &x, zero, ph, entered_by));
            return Ok(finish(segments, Terminal::Drained { t }));
        }
        if ph.drift.iter().all(|v| v.abs() <= TOL.stall_drift) {
            segments.push(point_segment(t, &x, state, ph, entered_by));
            return Ok(finish(segments, Terminal::Stalled { t, x }));
        }

        let mut cands: Vec<(f64, Event)> = Vec::new();
        for j in 0..net.num_groups() {
            let set = state.set(j);
            if set.is_empty() {
                continue;
            }
            let top = set.iter().map(|&i| x[i]).sum::<f64>() / set.len() as f64;
            let a = ph.alpha[j];
            if a < -TOL.rate_abs {
                cands.push((top / -a, Event::Empty(j)));
            }
            for &q in net.group(j) {
                if set.contains(&q) {
                    continue;
                }
                let closing = ph.drift[q] - a;
                if closing > TOL.rate_abs {
                    cands.push(((top - x[q]).max(0.0) / closing, Event::Enter(q)));
                }
            }
        }
        let remaining = horizon - t;
        let dt_event = cands.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
        let hit_horizon = dt_event > remaining;
        let dt = if hit_horizon { remaining.max(0.0) } else { dt_event };
        let x_start = x.clone();
        for (xi, v) in x.iter_mut().zip(&ph.drift) {
            *xi += v * dt;
        }
        let events: Vec<Event> = if hit_horizon {
            Vec::new()
        } else {
            cands
                .iter()
                .filter(|c| c.0 <= dt_event + TOL.event_merge)
                .map(|c| c.1)
                .collect()
        };
        // Re-tie members of each maximum set exactly, then apply the events.
        for j in 0..net.num_groups() {
            let set = state.set(j);
            if set.len() > 1 {
                let m = set.iter().map(|&i| x[i]).sum::<f64>() / set.len() as f64;
                set.iter().for_each(|&i| x[i] = m);
            }
        }
        for e in &events {
            match *e {
                Event::Empty(j) => net.group(j).iter().for_each(|&i| x[i] = 0.0),
                Event::Enter(q) => {
                    let j = net.group_of(q);
                    x[q] = x[state.set(j)[0]];
                }
            }
        }
        check_nonnegative(&mut x, scale, t + dt)?;
        segments.push(Segment {
            t_start: t,
            t_end: t + dt,
            x_start,
            x_end: x.clone(),
            state: state.clone(),
            phase: ph,
            entered_by: entered_by.clone(),
        });
        t += dt;
        if hit_horizon {
            return Ok(finish(segments, Terminal::HorizonReached { t }));
        }

        let mut aug = state.clone();
        let mut entering = Vec::new();
        let mut emptied = Vec::new();
        for e in &events {
            match *e {
                Event::Empty(j) => {
                    aug.set_group(j, Vec::new());
                    emptied.push(j);
                }
                Event::Enter(q) => {
                    aug.insert(net, q);
                    entering.push(q);
                }
            }
        }
        // Entering a group that empties in the same instant is moot.
        entering.retain(|&q| !emptied.contains(&net.group_of(q)));
        let res = resolve_jump(net, dq, &aug, &entering)?;
        entered_by = if !entering.is_empty() {
            if res.state_changed(&aug) {
                Transition::Jump {
                    entering,
                    via: aug,
                    removed: res.removed.clone(),
                }
            } else {
                Transition::Increase { entering }
            }
        } else if !res.reactivated.is_empty() || res.state_changed(&aug) {
            Transition::Jump {
                entering,
                via: aug,
                removed: res.removed.clone(),
            }
        } else {
            Transition::Empty { groups: emptied }
        };
        state = res.state;
        guard.step(&x, t)?;
    }
}

impl JumpResolution {
    fn state_changed(&self, from: &MaximaState) -> bool {
        &self.state != from
    }
}

pub(crate) fn point_segment(
    t: f64,
    x: &[f64],
    state: MaximaState,
    phase: PhaseSolution,
    entered_by: Transition,
) -> Segment {
    Segment {
        t_start: t,
        t_end: t,
        x_start: x.to_vec(),
        x_end: x.to_vec(),
        state,
        phase,
        entered_by,
    }
}

fn finish(segments: Vec<Segment>, terminal: Terminal) -> FluidTrajectory {
    FluidTrajectory {
        policy: FluidPolicy::Lq,
        segments,
        terminal,
    }
}
