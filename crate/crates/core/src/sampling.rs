//! Random networks, states and initial conditions for property checks.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::fluid::{self, MaximaState};
use crate::network::{derive, validate, DerivedQuantities, NetworkSpec, RawNetwork};

/// Shape of the random networks drawn by [`random_network`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NetworkShape {
    pub min_queues: usize,
    pub max_queues: usize,
    /// Fixed group count, or `None` for a random partition.
    pub groups: Option<usize>,
    /// Probability that a routing entry is non-zero.
    pub density: f64,
    /// Allow `i -> i` routing.
    pub self_loops: bool,
    /// Only route to higher-numbered queues, so the topology has no cycle.
    pub acyclic: bool,
    /// Range for the largest group utilization; `None` leaves rates as drawn.
    pub max_utilization: Option<(f64, f64)>,
}

impl Default for NetworkShape {
    fn default() -> Self {
        NetworkShape {
            min_queues: 1,
            max_queues: 8,
            groups: None,
            density: 0.35,
            self_loops: true,
            acyclic: false,
            max_utilization: Some((0.05, 0.95)),
        }
    }
}

impl NetworkShape {
    /// Two groups of two queues.
    pub fn two_by_two() -> Self {
        NetworkShape {
            min_queues: 4,
            max_queues: 4,
            groups: Some(2),
            ..NetworkShape::default()
        }
    }
}

/// Draws a validated network; with `max_utilization` set the arrival rates
/// are rescaled so the busiest group sits in that range.
pub fn random_network<R: Rng + ?Sized>(
    rng: &mut R,
    shape: &NetworkShape,
) -> (NetworkSpec, DerivedQuantities) {
    loop {
        let k = rng.random_range(shape.min_queues..=shape.max_queues);
        let groups = random_partition(rng, k, shape.groups);
        let mut routing = vec![vec![0.0; k]; k];
        for (i, row) in routing.iter_mut().enumerate() {
            let budget = rng.random_range(0.0..0.95);
            let mut weights = vec![0.0; k];
            for (j, w) in weights.iter_mut().enumerate() {
                let allowed = (shape.self_loops || i != j) && (!shape.acyclic || j > i);
                if allowed && rng.random_bool(shape.density) {
                    *w = rng.random_range(0.05..1.0);
                }
            }
            let total: f64 = weights.iter().sum();
            if total > 0.0 {
                for (r, w) in row.iter_mut().zip(&weights) {
                    *r = budget * w / total;
                }
            }
        }
        let mut lambda: Vec<f64> = (0..k)
            .map(|_| {
                if rng.random_bool(0.5) {
                    rng.random_range(0.0..1.0)
                } else {
                    0.0
                }
            })
            .collect();
        if lambda.iter().all(|&l| l == 0.0) {
            let i = rng.random_range(0..k);
            lambda[i] = rng.random_range(0.1..1.0);
        }
        let mu: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..5.0)).collect();
        let raw = RawNetwork {
            groups,
            routing,
            lambda,
            mu,
        };
        let Ok(net) = validate(&raw) else { continue };
        let Ok(dq) = derive(&net) else { continue };
        let Some((lo, hi)) = shape.max_utilization else {
            return (net, dq);
        };
        let rho_max = dq.rho.iter().copied().fold(0.0, f64::max);
        if rho_max <= 0.0 {
            continue;
        }
        let target = rng.random_range(lo..hi);
        let Ok(net) = net.with_scaled_arrivals(target / rho_max) else {
            continue;
        };
        let Ok(dq) = derive(&net) else { continue };
        return (net, dq);
    }
}

fn random_partition<R: Rng + ?Sized>(rng: &mut R, k: usize, groups: Option<usize>) -> Vec<Vec<usize>> {
    let j = groups.unwrap_or_else(|| rng.random_range(1..=k)).clamp(1, k);
    let mut ids: Vec<usize> = (0..k).collect();
    ids.shuffle(rng);
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); j];
    // one queue per group first so none is empty
    for (g, &q) in ids.iter().take(j).enumerate() {
        out[g].push(q);
    }
    if groups == Some(2) && k == 4 {
        out[0].push(ids[2]);
        out[1].push(ids[3]);
    } else {
        for &q in &ids[j..] {
            let g = rng.random_range(0..j);
            out[g].push(q);
        }
    }
    for g in &mut out {
        g.sort_unstable();
    }
    out
}

/// A random non-zero maxima state that is LQ-feasible, if one is found in
/// `tries` draws.
pub fn random_feasible_state<R: Rng + ?Sized>(
    rng: &mut R,
    net: &NetworkSpec,
    dq: &DerivedQuantities,
    tries: usize,
) -> Option<(MaximaState, fluid::PhaseSolution)> {
    let k = net.num_queues();
    for _ in 0..tries {
        let mask: u64 = rng.random_range(1..(1u64 << k));
        let s = MaximaState::from_mask(net, mask);
        if let Ok(ph) = fluid::solve_phase_lq(net, dq, &s) {
            if ph.feasible {
                return Some((s, ph));
            }
        }
    }
    None
}

/// Initial condition with entries in `[0, scale)`; with probability
/// `tie_prob` some entries are copied from others to create ties.
pub fn random_x0<R: Rng + ?Sized>(rng: &mut R, k: usize, scale: f64, tie_prob: f64) -> Vec<f64> {
    let mut x: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..scale)).collect();
    for i in 1..k {
        if rng.random_bool(tie_prob) {
            x[i] = x[rng.random_range(0..i)];
        }
    }
    x
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::is_acyclic;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shapes_are_respected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..50 {
            let (net, dq) = random_network(&mut rng, &NetworkShape::two_by_two());
            assert!(net.is_two_by_two());
            assert!(dq.rho.iter().all(|&r| r < 0.95 + 1e-9));
            let shape = NetworkShape {
                acyclic: true,
                ..NetworkShape::default()
            };
            let (net, _) = random_network(&mut rng, &shape);
            assert!(is_acyclic(&net));
        }
    }
}
