//! Sliding-mode (Filippov) rates for priority rules that only look at the
//! order of queue lengths.
//!
//! When queues are tied the rule is discontinuous: every strict ordering of
//! the tied queues gives a different 0/1 allocation. The phase rate is a
//! convex combination of those allocations chosen so that queues that are
//! meant to stay tied drift together, and queues at zero stay non-negative.
//! A tied block whose members cannot drift together is split by drift and
//! the combination re-solved on the finer ordering. When those splits cycle,
//! ordered partitions of the tied classes are tried from coarsest to finest.

use std::collections::BTreeSet;

use nalgebra::{DMatrix, DVector};
use microlp::{ComparisonOp, LinearExpr, OptimizationDirection, Problem, Variable};

use super::FluidError;
use crate::network::{NetworkSpec, QueueId};
use crate::numeric::TOL;

/// Ordering key of one queue under a strict ordering of the ties.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Key {
    /// Level of the queue's tie class.
    pub level: f64,
    /// Block inside the class, larger is higher.
    pub block: u32,
    /// Rank inside the class, larger is higher.
    pub rank: u32,
}

impl Key {
    /// Strict order used to pick the longest queue.
    pub fn gt(self, o: Key) -> bool {
        (self.level, self.block, self.rank) > (o.level, o.block, o.rank)
    }

    /// Strictly longer: queues of one block stay tied whatever their rank.
    pub fn above(self, o: Key) -> bool {
        (self.level, self.block) > (o.level, o.block)
    }
}

/// Largest number of strict orderings enumerated for one phase.
const MAX_ORDERINGS: usize = 400_000;
/// Largest number of ordered partitions tried when the drift cut cycles.
const MAX_ARRANGEMENTS: usize = 5_000;
/// Same, for the partitions that follow one drift order.
const MAX_GUIDED: usize = 500;

#[derive(Debug, Clone)]
pub(crate) struct SlidingOutcome {
    pub tdot: Vec<f64>,
    pub drift: Vec<f64>,
    /// Blocks of queues that stay tied through the phase.
    pub tied: Vec<Vec<QueueId>>,
    /// Zero queues that stay at zero.
    pub held: Vec<QueueId>,
}

#[derive(Debug, Clone, PartialEq)]
struct Class {
    level: f64,
    floored: bool,
    /// Blocks above the floor, top first.
    parts: Vec<Vec<QueueId>>,
    /// Members pinned at zero (floored classes only).
    floor: Vec<QueueId>,
}

impl Class {
    fn trivial(&self) -> bool {
        !self.floored && self.parts.len() == 1 && self.parts[0].len() == 1
    }
}

/// Rates of `allocate` regularized at `x`.
///
/// `relevant[i][k]` marks pairs whose relative order can change the rule's
/// output; only those are treated as ties. `allocate` receives one key per
/// queue (larger is longer) and an emptiness flag, and returns the served
/// queues as bit masks, usually one.
pub(crate) fn sliding_phase<F, M>(
    net: &NetworkSpec,
    x: &[f64],
    relevant: &[Vec<bool>],
    allocate: F,
) -> Result<SlidingOutcome, FluidError>
where
    F: Fn(&[Key], &[bool]) -> M,
    M: IntoIterator<Item = u64>,
{
    let k = net.num_queues();
    if k > 64 {
        return Err(FluidError::InvalidInput("at most 64 queues are supported".into()));
    }
    let scale = x.iter().copied().fold(0.0, f64::max);
    let tol = TOL.length(scale);
    let initial = tie_classes(x, relevant, tol);
    let mut classes = initial.clone();

    let mut last = None;
    let mut seen: Vec<Vec<f64>> = Vec::new();
    for _ in 0..k + 2 {
        let (outcome, settled, split_tol) = evaluate(net, x, &classes, &allocate)?;
        if settled {
            return Ok(outcome);
        }
        seen.push(outcome.drift.clone());
        let refined: Vec<Class> = classes
            .iter()
            .map(|c| repartition(c, &outcome.drift, split_tol))
            .collect();
        let done = refined == classes;
        classes = refined;
        last = Some(outcome);
        if done {
            break;
        }
    }
    // The drift cut can cycle between orderings. Try the partitions that
    // follow the order of a drift seen so far, then every ordered partition
    // of the tied classes, coarsest first.
    let mut found = None;
    let mut attempt = |candidate: &[Class]| match evaluate(net, x, candidate, &allocate) {
        Ok((outcome, true, _)) => {
            found = Some(outcome);
            true
        }
        _ => false,
    };
    let _ = seen
        .iter()
        .any(|d| search_arrangements(&initial, Some(d), MAX_GUIDED, &mut attempt))
        || search_arrangements(&initial, None, MAX_ARRANGEMENTS, &mut attempt);
    if let Some(outcome) = found {
        return Ok(outcome);
    }
    Err(FluidError::Sliding(format!(
        "tie blocks did not settle (last rates {:?})",
        last.map(|o: SlidingOutcome| o.tdot).unwrap_or_default()
    )))
}

/// Best combination for one ordered partition, whether it is exact, and
/// the drift tolerance used.
fn evaluate<F, M>(
    net: &NetworkSpec,
    x: &[f64],
    classes: &[Class],
    allocate: &F,
) -> Result<(SlidingOutcome, bool, f64), FluidError>
where
    F: Fn(&[Key], &[bool]) -> M,
    M: IntoIterator<Item = u64>,
{
    let k = net.num_queues();
    let masks = vertices(k, classes, allocate)?;
    let drifts: Vec<Vec<f64>> = masks.iter().map(|&m| net.drift(&mask_rates(k, m))).collect();
    let vmax = drifts.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let split_tol = TOL.rate_abs * (1.0 + vmax);

    let stage1 = solve_lp(classes, &drifts, None)?;
    let top = top_queue(x, classes);
    let stage2 = solve_lp(classes, &drifts, Some((stage1.objective, top)))
        .unwrap_or_else(|_| stage1.clone());

    let weights = polish(classes, &drifts, &stage2.w, split_tol);
    let mut tdot = vec![0.0; k];
    for (v, &m) in masks.iter().enumerate() {
        let w = weights[v];
        for (i, t) in tdot.iter_mut().enumerate() {
            if m >> i & 1 == 1 {
                *t += w;
            }
        }
    }
    let drift = net.drift(&tdot);
    let max_slack = stage2.slack.iter().copied().fold(0.0, f64::max);
    let outcome = SlidingOutcome {
        tied: classes
            .iter()
            .flat_map(|c| c.parts.iter())
            .filter(|p| p.len() > 1)
            .cloned()
            .collect(),
        held: classes.iter().flat_map(|c| c.floor.iter().copied()).collect(),
        tdot,
        drift,
    };
    Ok((outcome, max_slack <= split_tol, split_tol))
}

/// Ordered partitions of `items` into exactly `parts` blocks.
fn ordered_partitions(items: &[QueueId], parts: usize) -> Vec<Vec<Vec<QueueId>>> {
    if parts == 0 {
        return if items.is_empty() { vec![Vec::new()] } else { Vec::new() };
    }
    let n = items.len();
    if n < parts {
        return Vec::new();
    }
    let mut out = Vec::new();
    for head in 1u32..(1 << n) {
        if (n - head.count_ones() as usize) < parts - 1 {
            continue;
        }
        let first: Vec<QueueId> = (0..n).filter(|&b| head >> b & 1 == 1).map(|b| items[b]).collect();
        let rest: Vec<QueueId> = (0..n).filter(|&b| head >> b & 1 == 0).map(|b| items[b]).collect();
        for mut tail in ordered_partitions(&rest, parts - 1) {
            tail.insert(0, first.clone());
            out.push(tail);
        }
    }
    out
}

/// Ordered partitions of `items` into `parts` blocks of consecutive items.
fn contiguous_partitions(items: &[QueueId], parts: usize) -> Vec<Vec<Vec<QueueId>>> {
    if parts == 0 {
        return if items.is_empty() { vec![Vec::new()] } else { Vec::new() };
    }
    let n = items.len();
    let mut out = Vec::new();
    for first in 1..=n.saturating_sub(parts - 1) {
        for mut tail in contiguous_partitions(&items[first..], parts - 1) {
            tail.insert(0, items[..first].to_vec());
            out.push(tail);
        }
    }
    out
}

fn class_members(c: &Class) -> Vec<QueueId> {
    c.parts.iter().flatten().chain(&c.floor).copied().collect()
}

/// Highest arrangement cost of a class.
fn max_cost(c: &Class) -> usize {
    let n = class_members(c).len();
    match (c.trivial(), c.floored) {
        (true, _) => 0,
        (false, false) => n - 1,
        (false, true) => 2 * n,
    }
}

/// Arrangements of one class at a given cost: an unfloored class into
/// `cost + 1` blocks; a floored class with `l` queues lifted off the floor
/// into `p` blocks, `p + l = cost`. With a `guide` drift only blocks that
/// are runs of the members sorted by that drift are produced.
fn class_level(c: &Class, cost: usize, guide: Option<&[f64]>) -> Vec<Class> {
    if c.trivial() {
        return if cost == 0 { vec![c.clone()] } else { Vec::new() };
    }
    let mut members = class_members(c);
    if let Some(d) = guide {
        members.sort_by(|&a, &b| d[b].total_cmp(&d[a]));
        if !c.floored {
            return contiguous_partitions(&members, cost + 1)
                .into_iter()
                .map(|parts| Class { parts, ..c.clone() })
                .collect();
        }
        let mut out = Vec::new();
        for l in 0..=members.len() {
            if l > cost || cost - l > l || (l > 0 && cost == l) {
                continue;
            }
            for parts in contiguous_partitions(&members[..l], cost - l) {
                out.push(Class {
                    level: c.level,
                    floored: true,
                    parts,
                    floor: members[l..].to_vec(),
                });
            }
        }
        return out;
    }
    if !c.floored {
        return ordered_partitions(&members, cost + 1)
            .into_iter()
            .map(|parts| Class { parts, ..c.clone() })
            .collect();
    }
    let n = members.len();
    let mut out = Vec::new();
    for lift in 0u32..(1 << n) {
        let l = lift.count_ones() as usize;
        if l > cost || cost - l > l || (l > 0 && cost == l) {
            continue;
        }
        let lifted: Vec<QueueId> = (0..n).filter(|&b| lift >> b & 1 == 1).map(|b| members[b]).collect();
        let floor: Vec<QueueId> = (0..n).filter(|&b| lift >> b & 1 == 0).map(|b| members[b]).collect();
        for parts in ordered_partitions(&lifted, cost - l) {
            out.push(Class {
                level: c.level,
                floored: true,
                parts,
                floor: floor.clone(),
            });
        }
    }
    out
}

/// Calls `f` on joint arrangements in order of total cost until it returns
/// `true` or `budget` arrangements have been tried.
fn search_arrangements(
    classes: &[Class],
    guide: Option<&[f64]>,
    budget: usize,
    f: &mut dyn FnMut(&[Class]) -> bool,
) -> bool {
    let caps: Vec<usize> = classes.iter().map(max_cost).collect();
    let mut tried = 0;
    for total in 0..=caps.iter().sum::<usize>() {
        let mut split = vec![0; classes.len()];
        if compositions(classes, guide, &caps, total, 0, &mut split, &mut tried, budget, f) {
            return true;
        }
        if tried >= budget {
            return false;
        }
    }
    false
}

#[allow(clippy::too_many_arguments)]
fn compositions(
    classes: &[Class],
    guide: Option<&[f64]>,
    caps: &[usize],
    left: usize,
    at: usize,
    split: &mut Vec<usize>,
    tried: &mut usize,
    budget: usize,
    f: &mut dyn FnMut(&[Class]) -> bool,
) -> bool {
    if at == classes.len() {
        if left != 0 {
            return false;
        }
        let levels: Vec<Vec<Class>> = classes.iter().zip(split.iter()).map(|(c, &s)| class_level(c, s, guide)).collect();
        if levels.iter().any(Vec::is_empty) {
            return false;
        }
        let mut idx = vec![0usize; levels.len()];
        loop {
            if *tried >= budget {
                return false;
            }
            *tried += 1;
            let pick: Vec<Class> = idx.iter().zip(&levels).map(|(&i, l)| l[i].clone()).collect();
            if f(&pick) {
                return true;
            }
            let mut pos = 0;
            loop {
                if pos == idx.len() {
                    return false;
                }
                idx[pos] += 1;
                if idx[pos] < levels[pos].len() {
                    break;
                }
                idx[pos] = 0;
                pos += 1;
            }
        }
    }
    for s in 0..=caps[at].min(left) {
        split[at] = s;
        if compositions(classes, guide, caps, left - s, at + 1, split, tried, budget, f) {
            return true;
        }
        if *tried >= budget {
            return false;
        }
    }
    false
}

fn mask_rates(k: usize, m: u64) -> Vec<f64> {
    (0..k).map(|i| (m >> i & 1) as f64).collect()
}

fn tie_classes(x: &[f64], relevant: &[Vec<bool>], tol: f64) -> Vec<Class> {
    let k = x.len();
    let mut parent: Vec<usize> = (0..k).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    for i in 0..k {
        for j in i + 1..k {
            if (relevant[i][j] || relevant[j][i]) && (x[i] - x[j]).abs() <= tol {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                if a != b {
                    parent[a] = b;
                }
            }
        }
    }
    let mut members: Vec<Vec<QueueId>> = vec![Vec::new(); k];
    for i in 0..k {
        let r = find(&mut parent, i);
        members[r].push(i);
    }
    members
        .into_iter()
        .filter(|m| !m.is_empty())
        .map(|m| {
            let floored = m.iter().any(|&i| x[i] <= tol);
            if floored {
                Class {
                    level: 0.0,
                    floored,
                    parts: Vec::new(),
                    floor: m,
                }
            } else {
                Class {
                    level: m.iter().map(|&i| x[i]).fold(0.0, f64::max),
                    floored,
                    parts: vec![m],
                    floor: Vec::new(),
                }
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy)]
struct Slot {
    queue: QueueId,
    block: u32,
    rank: u32,
    empty: bool,
}

/// Orderings of one class as `(queue, rank, empty)`, top rank first.
fn local_orderings(c: &Class) -> Vec<Vec<Slot>> {
    let size = c.parts.iter().map(Vec::len).sum::<usize>() + c.floor.len() + usize::from(c.floored);
    // Sequence of blocks; `None` stands for the zero sentinel.
    let mut blocks: Vec<Vec<Option<QueueId>>> = c
        .parts
        .iter()
        .map(|p| p.iter().map(|&i| Some(i)).collect())
        .collect();
    if c.floored {
        let mut f: Vec<Option<QueueId>> = c.floor.iter().map(|&i| Some(i)).collect();
        f.push(None);
        blocks.push(f);
    }
    let nb = blocks.len();
    let block_of: Vec<(Option<QueueId>, u32)> = blocks
        .iter()
        .enumerate()
        .flat_map(|(b, blk)| blk.iter().map(move |&q| (q, (nb - b) as u32)))
        .collect();
    let block_no = |q: Option<QueueId>| block_of.iter().find(|e| e.0 == q).map_or(0, |e| e.1);
    let mut out = vec![Vec::with_capacity(size)];
    for block in &blocks {
        let perms = permutations(block);
        let mut next = Vec::with_capacity(out.len() * perms.len());
        for prefix in &out {
            for p in &perms {
                let mut seq: Vec<Option<QueueId>> = prefix.clone();
                seq.extend_from_slice(p);
                next.push(seq);
            }
        }
        out = next;
    }
    out.into_iter()
        .map(|seq| {
            let n = seq.len() as u32;
            let mut below_floor = false;
            let mut res = Vec::with_capacity(seq.len());
            for (pos, item) in seq.iter().enumerate() {
                match item {
                    None => below_floor = true,
                    Some(i) => res.push(Slot {
                        queue: *i,
                        block: block_no(Some(*i)),
                        rank: n - pos as u32,
                        empty: below_floor,
                    }),
                }
            }
            res
        })
        .collect()
}

fn permutations<T: Clone>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head.clone());
            out.push(tail);
        }
    }
    out
}

fn factorial(n: usize) -> usize {
    (1..=n).fold(1usize, |a, b| a.saturating_mul(b))
}

fn vertices<F, M>(k: usize, classes: &[Class], allocate: &F) -> Result<Vec<u64>, FluidError>
where
    F: Fn(&[Key], &[bool]) -> M,
    M: IntoIterator<Item = u64>,
{
    let count = classes.iter().fold(1usize, |acc, c| {
        let mut n = c.parts.iter().fold(1usize, |a, p| a.saturating_mul(factorial(p.len())));
        if c.floored {
            n = n.saturating_mul(factorial(c.floor.len() + 1));
        }
        acc.saturating_mul(n)
    });
    if count > MAX_ORDERINGS {
        return Err(FluidError::TooManyOrderings(count));
    }
    let locals: Vec<Vec<Vec<Slot>>> = classes.iter().map(local_orderings).collect();
    let mut keys = vec![
        Key {
            level: 0.0,
            block: 0,
            rank: 0
        };
        k
    ];
    let mut empty = vec![false; k];
    let mut idx = vec![0usize; classes.len()];
    let mut masks = BTreeSet::new();
    loop {
        for (ci, c) in classes.iter().enumerate() {
            for sl in &locals[ci][idx[ci]] {
                keys[sl.queue] = Key {
                    level: c.level,
                    block: sl.block,
                    rank: sl.rank,
                };
                empty[sl.queue] = sl.empty;
            }
        }
        masks.extend(allocate(&keys, &empty));
        // advance the mixed-radix counter
        let mut pos = 0;
        loop {
            if pos == idx.len() {
                return Ok(masks.into_iter().collect());
            }
            idx[pos] += 1;
            if idx[pos] < locals[pos].len() {
                break;
            }
            idx[pos] = 0;
            pos += 1;
        }
    }
}

fn top_queue(x: &[f64], classes: &[Class]) -> QueueId {
    let best = classes
        .iter()
        .max_by(|a, b| a.level.total_cmp(&b.level))
        .expect("at least one queue");
    best.parts
        .first()
        .and_then(|p| p.first())
        .or_else(|| best.floor.first())
        .copied()
        .unwrap_or_else(|| {
            (0..x.len())
                .max_by(|&a, &b| x[a].total_cmp(&x[b]))
                .unwrap_or(0)
        })
}

#[derive(Debug, Clone)]
struct LpResult {
    w: Vec<f64>,
    /// Slack of every constrained queue; drift shortfall below its block.
    slack: Vec<f64>,
    objective: f64,
}

/// Stage one minimizes total slack. Stage two (`Some((opt, top))`) keeps the
/// slack within `opt` and minimizes the drift of queue `top`.
fn solve_lp(
    classes: &[Class],
    drifts: &[Vec<f64>],
    stage2: Option<(f64, QueueId)>,
) -> Result<LpResult, FluidError> {
    let mut p = Problem::new(OptimizationDirection::Minimize);
    let mut w: Vec<Variable> = Vec::with_capacity(drifts.len());
    for d in drifts {
        let obj = stage2.map_or(0.0, |(_, top)| d[top]);
        w.push(p.add_var(obj, (0.0, f64::INFINITY)));
    }
    let mut sum_w = LinearExpr::empty();
    w.iter().for_each(|&v| sum_w.add(v, 1.0));
    p.add_constraint(sum_w, ComparisonOp::Eq, 1.0);

    let slack_obj = if stage2.is_some() { 0.0 } else { 1.0 };
    let mut slacks: Vec<Variable> = Vec::new();
    let drift_expr = |i: QueueId| {
        let mut e = LinearExpr::empty();
        for (v, d) in w.iter().zip(drifts) {
            if d[i] != 0.0 {
                e.add(*v, d[i]);
            }
        }
        e
    };
    for c in classes.iter().filter(|c| !c.trivial()) {
        let lo = if c.floored { 0.0 } else { f64::NEG_INFINITY };
        let mut prev: Option<Variable> = None;
        for part in &c.parts {
            let beta = p.add_var(0.0, (lo, f64::INFINITY));
            for &i in part {
                let s = p.add_var(slack_obj, (0.0, f64::INFINITY));
                slacks.push(s);
                // drift_i - beta + s = 0
                let mut e = drift_expr(i);
                e.add(beta, -1.0);
                e.add(s, 1.0);
                p.add_constraint(e, ComparisonOp::Eq, 0.0);
            }
            if let Some(up) = prev {
                p.add_constraint([(up, 1.0), (beta, -1.0)], ComparisonOp::Ge, 0.0);
            }
            prev = Some(beta);
        }
        for &i in &c.floor {
            let s = p.add_var(slack_obj, (0.0, f64::INFINITY));
            slacks.push(s);
            // drift_i - s = 0: zero queues never go negative
            let mut e = drift_expr(i);
            e.add(s, -1.0);
            p.add_constraint(e, ComparisonOp::Eq, 0.0);
        }
    }
    if let Some((opt, _)) = stage2 {
        let mut e = LinearExpr::empty();
        slacks.iter().for_each(|&s| e.add(s, 1.0));
        p.add_constraint(e, ComparisonOp::Le, opt + TOL.rate_abs);
    }

    let sol = p
        .solve()
        .map_err(|e| FluidError::Sliding(e.to_string()))?
        .into_solution()
        .map_err(|_| FluidError::Sliding("solve interrupted".into()))?;
    Ok(LpResult {
        w: w.iter().map(|&v| sol[v]).collect(),
        slack: slacks.iter().map(|&s| sol[s].max(0.0)).collect(),
        objective: slacks.iter().map(|&s| sol[s].max(0.0)).sum(),
    })
}

/// Removes the LP's round-off: the smallest correction to `w0` that makes
/// the tied blocks drift exactly together and the held queues exactly
/// still, over the vertices the LP put weight on.
fn polish(classes: &[Class], drifts: &[Vec<f64>], w0: &[f64], split_tol: f64) -> Vec<f64> {
    let clamped: Vec<f64> = w0.iter().map(|w| w.max(0.0)).collect();
    let support: Vec<usize> = (0..w0.len()).filter(|&v| w0[v] > 1e-12).collect();
    if support.is_empty() {
        return clamped;
    }
    let mut rows: Vec<Vec<f64>> = vec![vec![1.0; support.len()]];
    let mut rhs = vec![1.0];
    for c in classes.iter().filter(|c| !c.trivial()) {
        for part in &c.parts {
            for &i in &part[1..] {
                rows.push(support.iter().map(|&v| drifts[v][part[0]] - drifts[v][i]).collect());
                rhs.push(0.0);
            }
        }
        for &i in &c.floor {
            let d: f64 = support.iter().map(|&v| drifts[v][i] * clamped[v]).sum();
            if d.abs() <= split_tol {
                rows.push(support.iter().map(|&v| drifts[v][i]).collect());
                rhs.push(0.0);
            }
        }
    }
    let a = DMatrix::from_fn(rows.len(), support.len(), |r, c| rows[r][c]);
    let x0 = DVector::from_iterator(support.len(), support.iter().map(|&v| clamped[v]));
    let resid = DVector::from_vec(rhs) - &a * &x0;
    let Ok(delta) = a.svd(true, true).solve(&resid, 1e-12) else {
        return clamped;
    };
    let fixed = x0 + delta;
    if fixed.iter().any(|&w| w < -1e-9) || (&fixed - DVector::from_iterator(support.len(), support.iter().map(|&v| clamped[v]))).amax() > 1e-6 {
        return clamped;
    }
    let mut out = vec![0.0; w0.len()];
    for (c, &v) in support.iter().enumerate() {
        out[v] = fixed[c].max(0.0);
    }
    out
}

/// Re-cuts a class into blocks of equal drift, highest drift on top.
fn repartition(c: &Class, drift: &[f64], split_tol: f64) -> Class {
    if c.trivial() {
        return c.clone();
    }
    let mut members: Vec<QueueId> = c.parts.iter().flatten().copied().collect();
    let mut floor = Vec::new();
    if c.floored {
        for &i in &c.floor {
            if drift[i] > split_tol {
                members.push(i);
            } else {
                floor.push(i);
            }
        }
    }
    members.sort_by(|&a, &b| drift[b].total_cmp(&drift[a]).then(a.cmp(&b)));
    let mut parts: Vec<Vec<QueueId>> = Vec::new();
    for i in members {
        match parts.last_mut() {
            Some(p) if drift[*p.last().unwrap()] - drift[i] <= split_tol => p.push(i),
            _ => parts.push(vec![i]),
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    floor.sort_unstable();
    Class {
        level: c.level,
        floored: c.floored,
        parts,
        floor,
    }
}
