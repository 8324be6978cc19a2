//! The maxima state diagram under LQ: all `2^K` states, their feasibility,
//! increase/jump transitions, and empirical checks on realized trajectories.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use thiserror::Error;

use crate::exec::{self, Execution};
use crate::fluid::{self, FluidError, FluidPolicy, MaximaState, Terminal};
use crate::network::{utilization_check, DerivedQuantities, GroupId, NetworkSpec, QueueId};
use crate::numeric::TOL;

/// Largest `K` for which the full diagram is enumerated.
pub const MAX_ENUMERATED_QUEUES: usize = 16;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StateSpaceError {
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Fluid(#[from] FluidError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Sign {
    Plus,
    Minus,
    Zero,
}

impl Sign {
    fn of(v: f64) -> Sign {
        if v > TOL.rate_abs {
            Sign::Plus
        } else if v < -TOL.rate_abs {
            Sign::Minus
        } else {
            Sign::Zero
        }
    }

    pub fn symbol(self) -> char {
        match self {
            Sign::Plus => '+',
            Sign::Minus => '-',
            Sign::Zero => '0',
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateNode {
    pub id: usize,
    pub state: MaximaState,
    pub feasible: bool,
    /// Group drifts from the phase solve, feasible or not; `None` if singular.
    pub alpha: Option<Vec<f64>>,
    pub drift_signs: Vec<Sign>,
    pub absorbing: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum EdgeKind {
    Increase,
    Jump,
    /// A group's maximum reaches zero.
    Empty,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TransitionEdge {
    pub from: usize,
    pub to: usize,
    pub kind: EdgeKind,
    pub entering: Option<QueueId>,
    /// Infeasible intermediate state of a jump.
    pub via: Option<usize>,
    pub removed: Vec<QueueId>,
    /// Rate enabling the move: catch-up rate of the entering queue, or the
    /// (negative) drift of an emptying group.
    pub guard_rate: f64,
    pub guard_holds: bool,
    /// Every group that lost a queue in the jump grows in the target state.
    pub shrunk_groups_grow: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StateDiagram {
    pub nodes: Vec<StateNode>,
    pub edges: Vec<TransitionEdge>,
}

/// Classifies every maxima state. Node ids are the state bit masks.
pub fn enumerate(
    net: &NetworkSpec,
    dq: &DerivedQuantities,
    exec: Execution,
) -> Result<Vec<StateNode>, StateSpaceError> {
    let k = net.num_queues();
    if k > MAX_ENUMERATED_QUEUES {
        return Err(StateSpaceError::NotApplicable(format!(
            "{k} queues; enumeration supports at most {MAX_ENUMERATED_QUEUES}"
        )));
    }
    Ok(exec::map_range(exec, 1usize << k, |mask| node(net, dq, mask as u64)))
}

fn node(net: &NetworkSpec, dq: &DerivedQuantities, mask: u64) -> StateNode {
    let state = MaximaState::from_mask(net, mask);
    let (feasible, alpha) = match fluid::solve_phase_lq(net, dq, &state) {
        Ok(ph) => (ph.feasible, Some(ph.alpha)),
        Err(_) => (false, None),
    };
    let drift_signs = match &alpha {
        Some(a) => a.iter().map(|&v| Sign::of(v)).collect(),
        None => vec![Sign::Zero; net.num_groups()],
    };
    StateNode {
        id: mask as usize,
        absorbing: state.is_zero() && feasible,
        state,
        feasible,
        alpha,
        drift_signs,
    }
}

/// Moves out of a feasible, non-zero state.
pub fn successors(
    net: &NetworkSpec,
    dq: &DerivedQuantities,
    node: &StateNode,
) -> Result<Vec<TransitionEdge>, StateSpaceError> {
    if !node.feasible || node.state.is_zero() {
        return Ok(Vec::new());
    }
    let s = &node.state;
    let ph = fluid::solve_phase_lq(net, dq, s)?;
    let mut edges = Vec::new();
    for j in 0..net.num_groups() {
        if s.set(j).is_empty() {
            continue;
        }
        for &q in net.group(j) {
            if s.contains(q) {
                continue;
            }
            let rate = ph.drift[q] - ph.alpha[j];
            if rate <= TOL.rate_abs {
                continue;
            }
            let mut aug = s.clone();
            aug.insert(net, q);
            let aug_ph = fluid::solve_phase_lq(net, dq, &aug)?;
            if aug_ph.feasible {
                edges.push(TransitionEdge {
                    from: node.id,
                    to: aug.mask() as usize,
                    kind: EdgeKind::Increase,
                    entering: Some(q),
                    via: None,
                    removed: Vec::new(),
                    guard_rate: rate,
                    guard_holds: true,
                    shrunk_groups_grow: true,
                });
            } else {
                let res = fluid::resolve_jump(net, dq, &aug, &[q])?;
                edges.push(jump_edge(net, node.id, &aug, &res, Some(q), rate, EdgeKind::Jump));
            }
        }
        if ph.alpha[j] < -TOL.rate_abs {
            let mut next = s.clone();
            next.set_group(j, Vec::new());
            let res = fluid::resolve_jump(net, dq, &next, &[])?;
            let kind = if res.state == next {
                EdgeKind::Empty
            } else {
                EdgeKind::Jump
            };
            let mut e = jump_edge(net, node.id, &next, &res, None, ph.alpha[j], kind);
            if kind == EdgeKind::Empty {
                e.via = None;
            }
            edges.push(e);
        }
    }
    Ok(edges)
}

fn jump_edge(
    net: &NetworkSpec,
    from: usize,
    via: &MaximaState,
    res: &fluid::JumpResolution,
    entering: Option<QueueId>,
    rate: f64,
    kind: EdgeKind,
) -> TransitionEdge {
    let shrunk_groups_grow = res
        .removed
        .iter()
        .all(|&q| res.phase.alpha[net.group_of(q)] > 0.0);
    TransitionEdge {
        from,
        to: res.state.mask() as usize,
        kind,
        entering,
        via: Some(via.mask() as usize),
        removed: res.removed.clone(),
        guard_rate: rate,
        guard_holds: true,
        shrunk_groups_grow,
    }
}

/// Full diagram: every node and every move out of the feasible ones.
pub fn diagram(
    net: &NetworkSpec,
    dq: &DerivedQuantities,
    exec: Execution,
) -> Result<StateDiagram, StateSpaceError> {
    let nodes = enumerate(net, dq, exec)?;
    let per_node = exec::map(exec, &nodes, |n| successors(net, dq, n));
    let mut edges = Vec::new();
    for e in per_node {
        edges.extend(e?);
    }
    Ok(StateDiagram { nodes, edges })
}

impl StateDiagram {
    /// Graphviz digraph: feasible states solid, infeasible dashed, the zero
    /// state drawn with a double border.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph maxima {\n  rankdir=LR;\n  node [shape=box];\n");
        for n in &self.nodes {
            let style = if n.feasible { "solid" } else { "dashed" };
            let periph = if n.state.is_zero() { 2 } else { 1 };
            let signs: String = n.drift_signs.iter().map(|s| s.symbol()).collect();
            let _ = writeln!(
                out,
                "  s{} [label=\"{} [{}]\", style={style}, peripheries={periph}];",
                n.id,
                n.state.label(),
                signs
            );
        }
        for e in &self.edges {
            let label = match (e.kind, e.entering) {
                (EdgeKind::Increase, Some(q)) => format!("+{}", q + 1),
                (EdgeKind::Jump, Some(q)) => format!("jump +{}", q + 1),
                (EdgeKind::Jump, None) => "jump".to_string(),
                _ => "empty".to_string(),
            };
            let style = if e.kind == EdgeKind::Jump { "bold" } else { "solid" };
            let _ = writeln!(
                out,
                "  s{} -> s{} [label=\"{label}\", style={style}];",
                e.from, e.to
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn node(&self, state: &MaximaState) -> Option<&StateNode> {
        self.nodes.get(state.mask() as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoopWitness {
    pub x0: Vec<f64>,
    pub path: Vec<String>,
    pub repeated: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NoLoopReport {
    pub samples: usize,
    pub drained: usize,
    pub loops: usize,
    pub longest_path: usize,
    pub witness: Option<LoopWitness>,
}

/// Integrates LQ from `samples` random initial conditions and checks that
/// no visited state repeats before the zero state.
pub fn verify_no_loop(
    net: &NetworkSpec,
    dq: &DerivedQuantities,
    samples: usize,
    seed: u64,
    exec: Execution,
) -> Result<NoLoopReport, StateSpaceError> {
    if !net.is_two_by_two() {
        return Err(StateSpaceError::NotApplicable(
            "the no-loop check needs two groups of two queues".into(),
        ));
    }
    let stable = utilization_check(dq, net).map(|u| u.stable).unwrap_or(false);
    if !stable {
        return Err(StateSpaceError::NotApplicable(
            "the network violates the utilization conditions".into(),
        ));
    }
    let k = net.num_queues();
    let results = exec::map_range(exec, samples, |n| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(n as u64);
        let x0: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..100.0)).collect();
        check_path(net, dq, x0)
    });
    let mut report = NoLoopReport {
        samples,
        drained: 0,
        loops: 0,
        longest_path: 0,
        witness: None,
    };
    for r in results {
        let (drained, len, witness) = r?;
        report.drained += usize::from(drained);
        report.longest_path = report.longest_path.max(len);
        if let Some(w) = witness {
            report.loops += 1;
            report.witness.get_or_insert(w);
        }
    }
    Ok(report)
}

/// Drain flag, path length, and loop witness for one initial condition.
pub fn check_path(
    net: &NetworkSpec,
    dq: &DerivedQuantities,
    x0: Vec<f64>,
) -> Result<(bool, usize, Option<LoopWitness>), StateSpaceError> {
    let traj = fluid::integrate(net, dq, &x0, FluidPolicy::Lq, f64::MAX / 4.0)?;
    let path = traj.state_path();
    let mut seen: BTreeMap<&MaximaState, usize> = BTreeMap::new();
    let mut witness = None;
    for (i, s) in path.iter().enumerate() {
        if seen.insert(s, i).is_some() && witness.is_none() {
            witness = Some(LoopWitness {
                x0: x0.clone(),
                path: path.iter().map(MaximaState::label).collect(),
                repeated: s.label(),
            });
        }
    }
    let drained = matches!(traj.terminal, Terminal::Drained { .. });
    Ok((drained, path.len(), witness))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FourCycleCertificate {
    /// Left-hand sides of the four jump conditions of the cycle
    /// (1,3) -> (1,4) -> (2,4) -> (2,3) -> (1,3); each would have to be positive.
    pub lhs: [f64; 4],
    pub sum: f64,
    /// The four conditions cannot hold together.
    pub impossible: bool,
}

/// Evaluates the four jump conditions a loop through all four mixed
/// single-maximum states would require, with queues labeled 1..4 as the two
/// members of group 1 then the two members of group 2.
pub fn four_cycle_certificate(net: &NetworkSpec) -> Result<FourCycleCertificate, StateSpaceError> {
    if !net.is_two_by_two() {
        return Err(StateSpaceError::NotApplicable(
            "the certificate needs two groups of two queues".into(),
        ));
    }
    let mut ids: Vec<QueueId> = Vec::with_capacity(4);
    for j in 0..2 {
        let mut g = net.group(j).to_vec();
        g.sort_unstable();
        ids.extend(g);
    }
    // 1-based accessors over the fixed labeling
    let l = |a: usize| net.lambda()[ids[a - 1]];
    let m = |a: usize| net.mu()[ids[a - 1]];
    let r = |a: usize, b: usize| net.r(ids[a - 1], ids[b - 1]);
    let lhs = [
        l(4) - m(4) + m(1) * r(1, 4) - l(3) - m(1) * r(1, 3) - m(4) * r(4, 3) + m(4) * r(4, 4),
        l(2) - m(2) + m(4) * r(4, 2) - l(1) - m(4) * r(4, 1) - m(2) * r(2, 1) + m(2) * r(2, 2),
        l(3) - m(3) + m(2) * r(2, 3) - l(4) - m(2) * r(2, 4) - m(3) * r(3, 4) + m(3) * r(3, 3),
        l(1) - m(1) + m(3) * r(3, 1) - l(2) - m(3) * r(3, 2) - m(1) * r(1, 2) + m(1) * r(1, 1),
    ];
    let sum: f64 = lhs.iter().sum();
    Ok(FourCycleCertificate {
        lhs,
        sum,
        impossible: sum <= 0.0,
    })
}

/// Groups whose every queue is a maximum in `s`.
pub fn full_groups(net: &NetworkSpec, s: &MaximaState) -> Vec<GroupId> {
    (0..net.num_groups())
        .filter(|&j| s.set(j).len() == net.group(j).len())
        .collect()
}
