//! Per-group scheduling decisions from an observed queue-length vector.
//!
//! The functions only compare lengths, so they work on integer job counts
//! (simulation) and on fluid levels alike.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{GroupId, NetworkSpec, QueueId};

/// A queue length: anything ordered with a notion of "non-empty".
pub trait Level: Copy + PartialOrd {
    fn is_positive(self) -> bool;
}

impl Level for f64 {
    fn is_positive(self) -> bool {
        self > 0.0
    }
}

impl Level for u64 {
    fn is_positive(self) -> bool {
        self > 0
    }
}

impl Level for u32 {
    fn is_positive(self) -> bool {
        self > 0
    }
}

impl Level for usize {
    fn is_positive(self) -> bool {
        self > 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PolicyKind {
    #[serde(rename = "LQ")]
    Lq,
    #[serde(rename = "LDQ")]
    Ldq,
    StaticPriority,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum TieBreak {
    /// Uniform choice among the tied queues, drawn from the tie-break stream.
    RandomUniform,
    /// Per group, earlier queues win ties.
    FixedOrder(Vec<Vec<QueueId>>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub kind: PolicyKind,
    #[serde(default = "default_tiebreak")]
    pub tiebreak: TieBreak,
    /// Per group, highest priority first. Required for static priority.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub priority_order: Option<Vec<Vec<QueueId>>>,
}

fn default_tiebreak() -> TieBreak {
    TieBreak::RandomUniform
}

impl PolicyConfig {
    pub fn lq() -> Self {
        PolicyConfig {
            kind: PolicyKind::Lq,
            tiebreak: TieBreak::RandomUniform,
            priority_order: None,
        }
    }

    pub fn ldq() -> Self {
        PolicyConfig {
            kind: PolicyKind::Ldq,
            ..PolicyConfig::lq()
        }
    }

    pub fn static_priority(order: Vec<Vec<QueueId>>) -> Self {
        PolicyConfig {
            kind: PolicyKind::StaticPriority,
            tiebreak: TieBreak::RandomUniform,
            priority_order: Some(order),
        }
    }

    pub fn with_tiebreak(mut self, tiebreak: TieBreak) -> Self {
        self.tiebreak = tiebreak;
        self
    }

    /// Checks that every permutation covers exactly its group.
    pub fn validate(&self, net: &NetworkSpec) -> Result<(), PolicyError> {
        let check = |what: &str, perms: &[Vec<QueueId>]| -> Result<(), PolicyError> {
            if perms.len() != net.num_groups() {
                return Err(PolicyError::BadPermutation(format!(
                    "{what} has {} groups, network has {}",
                    perms.len(),
                    net.num_groups()
                )));
            }
            for (j, p) in perms.iter().enumerate() {
                let mut a = p.clone();
                let mut b = net.group(j).to_vec();
                a.sort_unstable();
                b.sort_unstable();
                if a != b {
                    return Err(PolicyError::BadPermutation(format!(
                        "{what} for group {j} is {p:?}, group is {:?}",
                        net.group(j)
                    )));
                }
            }
            Ok(())
        };
        if let TieBreak::FixedOrder(p) = &self.tiebreak {
            check("tie-break order", p)?;
        }
        match (&self.kind, &self.priority_order) {
            (PolicyKind::StaticPriority, None) => Err(PolicyError::MissingPriority),
            (_, Some(p)) => check("priority order", p),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("bad permutation: {0}")]
    BadPermutation(String),
    #[error("static priority needs a priority order")]
    MissingPriority,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Decision {
    Serve(QueueId),
    Idle,
}

impl Decision {
    pub fn queue(self) -> Option<QueueId> {
        match self {
            Decision::Serve(q) => Some(q),
            Decision::Idle => None,
        }
    }
}

/// Longest of `candidates` (all non-empty), ties broken per `cfg`.
fn longest<L: Level, R: Rng + ?Sized>(
    j: GroupId,
    x: &[L],
    candidates: &[QueueId],
    cfg: &PolicyConfig,
    rng: &mut R,
) -> Decision {
    let mut best: Vec<QueueId> = Vec::new();
    for &i in candidates {
        match best.first() {
            None => best.push(i),
            Some(&b) if x[i] > x[b] => {
                best.clear();
                best.push(i);
            }
            Some(&b) if x[i] == x[b] => best.push(i),
            _ => {}
        }
    }
    match best.len() {
        0 => Decision::Idle,
        1 => Decision::Serve(best[0]),
        n => match &cfg.tiebreak {
            TieBreak::RandomUniform => Decision::Serve(best[rng.random_range(0..n)]),
            TieBreak::FixedOrder(order) => {
                let rank = |q: &QueueId| order[j].iter().position(|p| p == q).unwrap_or(usize::MAX);
                Decision::Serve(*best.iter().min_by_key(|q| rank(q)).unwrap())
            }
        },
    }
}

/// Serves a longest non-empty queue of group `j`.
pub fn lq_decide<L: Level, R: Rng + ?Sized>(
    net: &NetworkSpec,
    j: GroupId,
    x: &[L],
    cfg: &PolicyConfig,
    rng: &mut R,
) -> Decision {
    let nonempty: Vec<QueueId> = net.group(j).iter().copied().filter(|&i| x[i].is_positive()).collect();
    longest(j, x, &nonempty, cfg, rng)
}

/// Per-group maxima over positive-length queues.
fn group_maxima<L: Level>(net: &NetworkSpec, x: &[L]) -> Vec<QueueId> {
    let mut out = Vec::new();
    for g in net.groups() {
        let mut top: Option<L> = None;
        for &i in g {
            if x[i].is_positive() && top.is_none_or(|t| x[i] > t) {
                top = Some(x[i]);
            }
        }
        if let Some(t) = top {
            out.extend(g.iter().copied().filter(|&i| x[i] == t));
        }
    }
    out
}

/// Non-empty members of group `j` that do not feed a strictly longer
/// network maximum.
pub fn dominating_candidates<L: Level>(net: &NetworkSpec, j: GroupId, x: &[L]) -> Vec<QueueId> {
    let maxima = group_maxima(net, x);
    net.group(j)
        .iter()
        .copied()
        .filter(|&i| x[i].is_positive())
        .filter(|&i| maxima.iter().all(|&s| !(x[i] < x[s] && net.r(i, s) > 0.0)))
        .collect()
}

/// Serves the longest non-empty dominating queue of group `j`, or idles.
pub fn ldq_decide<L: Level, R: Rng + ?Sized>(
    net: &NetworkSpec,
    j: GroupId,
    x: &[L],
    cfg: &PolicyConfig,
    rng: &mut R,
) -> Decision {
    let d = dominating_candidates(net, j, x);
    longest(j, x, &d, cfg, rng)
}

/// Serves the highest-priority non-empty queue of group `j`.
pub fn priority_decide<L: Level>(j: GroupId, x: &[L], cfg: &PolicyConfig) -> Decision {
    cfg.priority_order
        .as_ref()
        .and_then(|o| o[j].iter().copied().find(|&i| x[i].is_positive()))
        .map_or(Decision::Idle, Decision::Serve)
}

pub fn decide<L: Level, R: Rng + ?Sized>(
    net: &NetworkSpec,
    j: GroupId,
    x: &[L],
    cfg: &PolicyConfig,
    rng: &mut R,
) -> Decision {
    match cfg.kind {
        PolicyKind::Lq => lq_decide(net, j, x, cfg, rng),
        PolicyKind::Ldq => ldq_decide(net, j, x, cfg, rng),
        PolicyKind::StaticPriority => priority_decide(j, x, cfg),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{serial_route, validate, RawNetwork};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn four_queue() -> NetworkSpec {
        validate(&serial_route(
            &[0, 2, 3, 1],
            vec![vec![0, 1], vec![2, 3]],
            0.4,
            vec![3.0, 1.0, 1.0, 1.0],
        ))
        .unwrap()
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(7)
    }

    #[test]
    fn lq_examples() {
        let net = four_queue();
        let cfg = PolicyConfig::lq();
        assert_eq!(lq_decide(&net, 0, &[40u64, 30, 20, 10], &cfg, &mut rng()), Decision::Serve(0));
        let fixed = cfg.clone().with_tiebreak(TieBreak::FixedOrder(vec![vec![1, 0], vec![2, 3]]));
        assert_eq!(lq_decide(&net, 0, &[5u64, 5, 0, 0], &fixed, &mut rng()), Decision::Serve(1));
        assert_eq!(lq_decide(&net, 0, &[0u64, 0, 3, 0], &cfg, &mut rng()), Decision::Idle);
    }

    #[test]
    fn ldq_idles_a_group_feeding_a_longer_max() {
        let net = validate(&RawNetwork {
            groups: vec![vec![0, 1], vec![2]],
            routing: vec![vec![0.0, 0.0, 1.0], vec![0.0, 0.0, 1.0], vec![0.0; 3]],
            lambda: vec![0.2, 0.2, 0.0],
            mu: vec![1.0; 3],
        })
        .unwrap();
        let cfg = PolicyConfig::ldq();
        let x = [10u64, 20, 30];
        assert_eq!(ldq_decide(&net, 0, &x, &cfg, &mut rng()), Decision::Idle);
        assert_eq!(ldq_decide(&net, 1, &x, &cfg, &mut rng()), Decision::Serve(2));
    }

    #[test]
    fn ldq_without_routing_is_lq() {
        let net = validate(&RawNetwork {
            groups: vec![vec![0, 1], vec![2, 3]],
            routing: vec![vec![0.0; 4]; 4],
            lambda: vec![0.1; 4],
            mu: vec![1.0; 4],
        })
        .unwrap();
        let cfg = PolicyConfig::ldq().with_tiebreak(TieBreak::FixedOrder(vec![vec![0, 1], vec![2, 3]]));
        let lq = PolicyConfig::lq().with_tiebreak(cfg.tiebreak.clone());
        for x in [[1u64, 2, 3, 4], [4, 4, 0, 1], [0, 0, 0, 0], [9, 1, 1, 9]] {
            for j in 0..2 {
                assert_eq!(
                    ldq_decide(&net, j, &x, &cfg, &mut rng()),
                    lq_decide(&net, j, &x, &lq, &mut rng())
                );
            }
        }
    }

    #[test]
    fn global_max_is_served_under_ldq() {
        let net = four_queue();
        let cfg = PolicyConfig::ldq();
        assert_eq!(ldq_decide(&net, 1, &[1u64, 2, 3, 50], &cfg, &mut rng()), Decision::Serve(3));
    }

    #[test]
    fn priority_examples() {
        let cfg = PolicyConfig::static_priority(vec![vec![1, 0]]);
        assert_eq!(priority_decide(0, &[9u64, 1], &cfg), Decision::Serve(1));
        assert_eq!(priority_decide(0, &[9u64, 0], &cfg), Decision::Serve(0));
        assert_eq!(priority_decide(0, &[0u64, 0], &cfg), Decision::Idle);
    }

    #[test]
    fn config_validation() {
        let net = four_queue();
        assert!(PolicyConfig::static_priority(vec![vec![1, 0], vec![2, 3]]).validate(&net).is_ok());
        assert!(PolicyConfig::static_priority(vec![vec![1, 2], vec![0, 3]]).validate(&net).is_err());
        let bad = PolicyConfig {
            kind: PolicyKind::StaticPriority,
            tiebreak: TieBreak::RandomUniform,
            priority_order: None,
        };
        assert_eq!(bad.validate(&net), Err(PolicyError::MissingPriority));
    }

    #[test]
    fn random_tiebreak_is_reproducible() {
        let net = four_queue();
        let cfg = PolicyConfig::lq();
        let x = [5u64, 5, 5, 5];
        let run = || {
            let mut r = rng();
            (0..50).map(|_| lq_decide(&net, 0, &x, &cfg, &mut r)).collect::<Vec<_>>()
        };
        let a = run();
        assert_eq!(a, run());
        assert!(a.contains(&Decision::Serve(0)) && a.contains(&Decision::Serve(1)));
    }
}
