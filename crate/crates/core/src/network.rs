//! Open multiclass networks and their static quantities.
//!
//! A network has `K` queues partitioned into `J` groups; each group owns one
//! server that can work on at most one of its queues at a time. Jobs leaving
//! queue `i` join queue `j` with probability `r_ij` and leave the network
//! with probability `1 - sum_j r_ij`.
//!
//! Static quantities computed here:
//!
//! ```text
//! Q  = (I - R^T)^-1          (expected visit counts)
//! nu = Q lambda              (nominal traffic)
//! D  = M (R - I),  M = diag(mu)
//! rho_j = sum_{i in G_j} nu_i / mu_i
//! slack_j = e_j^T D^-T lambda + 1   (equals 1 - rho_j since D^-T = -M^-1 Q)
//! ```

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::TOL;

pub type QueueId = usize;
pub type GroupId = usize;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetworkError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("routing matrix is not sub-stochastic: {0}")]
    NonStochasticRouting(String),
    #[error("network is not open: {0}")]
    NotOpen(String),
    #[error("groups do not partition the queues: {0}")]
    BadPartition(String),
    #[error("invalid rates: {0}")]
    BadRates(String),
    #[error("linear solve failed: {0}")]
    NumericalSingularity(String),
}

impl NetworkError {
    /// Short name of the violated invariant, used in CLI diagnostics.
    pub fn invariant(&self) -> &'static str {
        match self {
            NetworkError::Dimension(_) => "Dimension",
            NetworkError::NonStochasticRouting(_) => "NonStochasticRouting",
            NetworkError::NotOpen(_) => "NotOpen",
            NetworkError::BadPartition(_) => "BadPartition",
            NetworkError::BadRates(_) => "BadRates",
            NetworkError::NumericalSingularity(_) => "NumericalSingularity",
        }
    }
}

/// Unvalidated network description, as read from a scenario document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawNetwork {
    /// Queue indices (0-based) of each group.
    pub groups: Vec<Vec<QueueId>>,
    /// `routing[i][j]` is the probability a job leaving `i` joins `j`.
    pub routing: Vec<Vec<f64>>,
    /// Exterior arrival rate into each queue.
    pub lambda: Vec<f64>,
    /// Service rate of each queue.
    pub mu: Vec<f64>,
}

/// A validated open network. Construct with [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSpec {
    groups: Vec<Vec<QueueId>>,
    group_of: Vec<GroupId>,
    routing: Vec<Vec<f64>>,
    lambda: Vec<f64>,
    mu: Vec<f64>,
}

impl NetworkSpec {
    pub fn num_queues(&self) -> usize {
        self.mu.len()
    }

    pub fn num_groups(&self) -> usize {
        self.groups.len()
    }

    pub fn groups(&self) -> &[Vec<QueueId>] {
        &self.groups
    }

    pub fn group(&self, j: GroupId) -> &[QueueId] {
        &self.groups[j]
    }

    pub fn group_of(&self, i: QueueId) -> GroupId {
        self.group_of[i]
    }

    pub fn routing(&self) -> &[Vec<f64>] {
        &self.routing
    }

    pub fn r(&self, i: QueueId, j: QueueId) -> f64 {
        self.routing[i][j]
    }

    pub fn lambda(&self) -> &[f64] {
        &self.lambda
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    /// Exit probability of a job completing service at `i`.
    pub fn exit_probability(&self, i: QueueId) -> f64 {
        (1.0 - self.routing[i].iter().sum::<f64>()).max(0.0)
    }

    /// Two groups of two queues each, the setting of the LQ no-loop analysis.
    pub fn is_two_by_two(&self) -> bool {
        self.groups.len() == 2 && self.groups.iter().all(|g| g.len() == 2)
    }

    /// Per-queue fluid drift `lambda + (R^T - I) M tdot` for time-sharing rates `tdot`.
    pub fn drift(&self, tdot: &[f64]) -> Vec<f64> {
        let k = self.num_queues();
        (0..k)
            .map(|j| {
                let inflow: f64 = (0..k)
                    .filter(|&i| tdot[i] != 0.0)
                    .map(|i| self.routing[i][j] * self.mu[i] * tdot[i])
                    .sum();
                self.lambda[j] + inflow - self.mu[j] * tdot[j]
            })
            .collect()
    }

    /// Copy of this network with every exterior rate multiplied by `factor`.
    pub fn with_scaled_arrivals(&self, factor: f64) -> Result<NetworkSpec, NetworkError> {
        let mut raw = self.to_raw();
        raw.lambda.iter_mut().for_each(|l| *l *= factor);
        validate(&raw)
    }

    pub fn to_raw(&self) -> RawNetwork {
        RawNetwork {
            groups: self.groups.clone(),
            routing: self.routing.clone(),
            lambda: self.lambda.clone(),
            mu: self.mu.clone(),
        }
    }
}

/// Static quantities of a validated network.
#[derive(Debug, Clone)]
pub struct DerivedQuantities {
    /// `(I - R^T)^-1`.
    pub q: DMatrix<f64>,
    /// Nominal traffic.
    pub nu: DVector<f64>,
    /// Drift matrix `M (R - I)`.
    pub d: DMatrix<f64>,
    /// Per-group utilization.
    pub rho: Vec<f64>,
}

impl DerivedQuantities {
    /// `D^-T = -M^-1 Q`, assembled from the solved `Q`.
    pub fn d_inv_t(&self, net: &NetworkSpec) -> DMatrix<f64> {
        let k = net.num_queues();
        DMatrix::from_fn(k, k, |i, j| -self.q[(i, j)] / net.mu[i])
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroupUtilization {
    pub group: GroupId,
    pub rho: f64,
    /// `e_j^T D^-T lambda + 1`, computed by an independent solve against `D^T`.
    pub slack: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UtilizationReport {
    pub groups: Vec<GroupUtilization>,
    /// True iff every group has `rho_j < 1`.
    pub stable: bool,
}

impl UtilizationReport {
    pub fn rho(&self) -> Vec<f64> {
        self.groups.iter().map(|g| g.rho).collect()
    }
}

fn identity_minus_rt(routing: &[Vec<f64>]) -> DMatrix<f64> {
    let k = routing.len();
    DMatrix::from_fn(k, k, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - routing[j][i]
    })
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|row| row.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// Decides whether `sum_n R^n` converges by repeated squaring of `R`.
///
/// Row sums of a sub-stochastic `R` never exceed one, so `||R^n||_inf` is
/// non-increasing and hits the threshold within 64 squarings (`n = 2^64`)
/// unless the spectral radius is numerically one.
fn powers_vanish(routing: &[Vec<f64>]) -> bool {
    let k = routing.len();
    let mut p = DMatrix::from_fn(k, k, |i, j| routing[i][j]);
    for _ in 0..64 {
        if inf_norm(&p) < TOL.open_power {
            return true;
        }
        p = &p * &p;
    }
    inf_norm(&p) < TOL.open_power
}

/// Validates a candidate network.
pub fn validate(raw: &RawNetwork) -> Result<NetworkSpec, NetworkError> {
    let k = raw.mu.len();
    if k == 0 {
        return Err(NetworkError::Dimension("network has no queues".into()));
    }
    if raw.lambda.len() != k {
        return Err(NetworkError::Dimension(format!(
            "lambda has {} entries, mu has {k}",
            raw.lambda.len()
        )));
    }
    if raw.routing.len() != k || raw.routing.iter().any(|row| row.len() != k) {
        return Err(NetworkError::Dimension(format!("routing must be {k}x{k}")));
    }

    for (i, &m) in raw.mu.iter().enumerate() {
        if !(m.is_finite() && m > 0.0) {
            return Err(NetworkError::BadRates(format!("mu[{i}] = {m} must be positive")));
        }
    }
    for (i, &l) in raw.lambda.iter().enumerate() {
        if !(l.is_finite() && l >= 0.0) {
            return Err(NetworkError::BadRates(format!(
                "lambda[{i}] = {l} must be non-negative"
            )));
        }
    }

    for (i, row) in raw.routing.iter().enumerate() {
        for (j, &r) in row.iter().enumerate() {
            if !(r.is_finite() && (0.0..=1.0).contains(&r)) {
                return Err(NetworkError::NonStochasticRouting(format!(
                    "r[{i}][{j}] = {r} outside [0, 1]"
                )));
            }
        }
        let sum: f64 = row.iter().sum();
        if sum > 1.0 + TOL.rate_abs {
            return Err(NetworkError::NonStochasticRouting(format!(
                "row {i} sums to {sum}"
            )));
        }
    }

    let mut group_of = vec![usize::MAX; k];
    if raw.groups.is_empty() {
        return Err(NetworkError::BadPartition("no groups".into()));
    }
    for (j, g) in raw.groups.iter().enumerate() {
        if g.is_empty() {
            return Err(NetworkError::BadPartition(format!("group {j} is empty")));
        }
        for &i in g {
            if i >= k {
                return Err(NetworkError::BadPartition(format!(
                    "group {j} names queue {i}, network has {k} queues"
                )));
            }
            if group_of[i] != usize::MAX {
                return Err(NetworkError::BadPartition(format!(
                    "queue {i} is in groups {} and {j}",
                    group_of[i]
                )));
            }
            group_of[i] = j;
        }
    }
    if let Some(i) = group_of.iter().position(|&g| g == usize::MAX) {
        return Err(NetworkError::BadPartition(format!("queue {i} is in no group")));
    }

    if !powers_vanish(&raw.routing) {
        return Err(NetworkError::NotOpen(
            "powers of R do not vanish (spectral radius 1)".into(),
        ));
    }
    if !identity_minus_rt(&raw.routing).lu().is_invertible() {
        return Err(NetworkError::NotOpen("I - R^T is singular".into()));
    }

    Ok(NetworkSpec {
        groups: raw.groups.clone(),
        group_of,
        routing: raw.routing.clone(),
        lambda: raw.lambda.clone(),
        mu: raw.mu.clone(),
    })
}

/// Computes `Q`, `nu`, `D` and `rho` by LU solves against `I - R^T`.
pub fn derive(net: &NetworkSpec) -> Result<DerivedQuantities, NetworkError> {
    let k = net.num_queues();
    let a = identity_minus_rt(&net.routing);
    let lu = a.clone().lu();

    let lambda = DVector::from_column_slice(&net.lambda);
    let nu = lu
        .solve(&lambda)
        .ok_or_else(|| NetworkError::NumericalSingularity("(I - R^T) nu = lambda".into()))?;
    let residual = (&a * &nu - &lambda).amax();
    let scale = 1.0 + lambda.amax();
    if residual.is_nan() || residual > TOL.residual_rel * scale {
        return Err(NetworkError::NumericalSingularity(format!(
            "nominal traffic residual {residual:e}"
        )));
    }

    let q = lu
        .solve(&DMatrix::identity(k, k))
        .ok_or_else(|| NetworkError::NumericalSingularity("(I - R^T) Q = I".into()))?;

    let d = DMatrix::from_fn(k, k, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        net.mu[i] * (net.routing[i][j] - id)
    });

    let rho = net
        .groups
        .iter()
        .map(|g| g.iter().map(|&i| nu[i] / net.mu[i]).sum())
        .collect();

    Ok(DerivedQuantities { q, nu, d, rho })
}

/// Per-group utilization and the equivalent slack form.
///
/// The slack is obtained from `y = D^-T lambda` by solving `D^T y = lambda`
/// directly, so it does not reuse the nominal-traffic solve.
pub fn utilization_check(
    dq: &DerivedQuantities,
    net: &NetworkSpec,
) -> Result<UtilizationReport, NetworkError> {
    let lambda = DVector::from_column_slice(&net.lambda);
    let y = dq
        .d
        .transpose()
        .lu()
        .solve(&lambda)
        .ok_or_else(|| NetworkError::NumericalSingularity("D^T y = lambda".into()))?;

    let groups: Vec<GroupUtilization> = net
        .groups
        .iter()
        .enumerate()
        .map(|(j, g)| {
            let slack = g.iter().map(|&i| y[i]).sum::<f64>() + 1.0;
            let rho = dq.rho[j];
            GroupUtilization {
                group: j,
                rho,
                slack,
                stable: rho < 1.0,
            }
        })
        .collect();
    let stable = groups.iter().all(|g| g.stable);
    Ok(UtilizationReport { groups, stable })
}

/// True iff the directed graph with edges `i -> j` for `r_ij > 0` has no cycle.
///
/// A self-loop `r_ii > 0` counts as a cycle.
pub fn is_acyclic(net: &NetworkSpec) -> bool {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let k = net.num_queues();
    let mut mark = vec![Mark::New; k];
    for root in 0..k {
        if mark[root] != Mark::New {
            continue;
        }
        // iterative DFS: (node, next successor to try)
        let mut stack = vec![(root, 0usize)];
        mark[root] = Mark::Active;
        while let Some(&mut (node, ref mut next)) = stack.last_mut() {
            if *next == k {
                mark[node] = Mark::Done;
                stack.pop();
                continue;
            }
            let succ = *next;
            *next += 1;
            if net.routing[node][succ] <= 0.0 {
                continue;
            }
            match mark[succ] {
                Mark::Active => return false,
                Mark::New => {
                    mark[succ] = Mark::Active;
                    stack.push((succ, 0));
                }
                Mark::Done => {}
            }
        }
    }
    true
}

/// Serial route `route[0] -> route[1] -> ...` with exterior arrivals into the first queue.
pub fn serial_route(
    route: &[QueueId],
    groups: Vec<Vec<QueueId>>,
    arrival_rate: f64,
    mu: Vec<f64>,
) -> RawNetwork {
    let k = mu.len();
    let mut routing = vec![vec![0.0; k]; k];
    for pair in route.windows(2) {
        routing[pair[0]][pair[1]] = 1.0;
    }
    let mut lambda = vec![0.0; k];
    if let Some(&first) = route.first() {
        lambda[first] = arrival_rate;
    }
    RawNetwork {
        groups,
        routing,
        lambda,
        mu,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw(routing: Vec<Vec<f64>>, lambda: Vec<f64>, mu: Vec<f64>, groups: Vec<Vec<usize>>) -> RawNetwork {
        RawNetwork {
            groups,
            routing,
            lambda,
            mu,
        }
    }

    /// Route 1 -> 3 -> 4 -> 2 (0-based 0 -> 2 -> 3 -> 1), groups {1,2}, {3,4}.
    fn four_queue(lambda: f64) -> NetworkSpec {
        validate(&serial_route(
            &[0, 2, 3, 1],
            vec![vec![0, 1], vec![2, 3]],
            lambda,
            vec![3.0, 1.0, 1.0, 1.0],
        ))
        .unwrap()
    }

    #[test]
    fn single_queue_is_valid() {
        let net = validate(&raw(vec![vec![0.0]], vec![1.0], vec![2.0], vec![vec![0]])).unwrap();
        assert_eq!(net.num_queues(), 1);
        assert_eq!(net.num_groups(), 1);
    }

    #[test]
    fn row_sum_above_one_is_rejected() {
        let ok = raw(
            vec![vec![0.0, 0.7], vec![0.0, 0.6]],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![vec![0], vec![1]],
        );
        assert!(validate(&ok).is_ok());
        let mut bad = ok.clone();
        bad.routing[1][0] = 0.9;
        assert!(matches!(
            validate(&bad),
            Err(NetworkError::NonStochasticRouting(_))
        ));
    }

    #[test]
    fn closed_two_cycle_is_not_open() {
        let r = raw(
            vec![vec![0.0, 1.0], vec![1.0, 0.0]],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![vec![0], vec![1]],
        );
        assert!(matches!(validate(&r), Err(NetworkError::NotOpen(_))));
    }

    #[test]
    fn closed_class_inside_open_network_is_not_open() {
        // queue 0 leaks into the closed pair {1, 2}
        let r = raw(
            vec![
                vec![0.0, 0.5, 0.0],
                vec![0.0, 0.0, 1.0],
                vec![0.0, 1.0, 0.0],
            ],
            vec![1.0, 0.0, 0.0],
            vec![1.0, 1.0, 1.0],
            vec![vec![0], vec![1], vec![2]],
        );
        assert!(matches!(validate(&r), Err(NetworkError::NotOpen(_))));
    }

    #[test]
    fn nearly_closed_cycle_is_open() {
        let r = raw(
            vec![vec![0.0, 1.0], vec![0.999, 0.0]],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![vec![0], vec![1]],
        );
        assert!(validate(&r).is_ok());
    }

    #[test]
    fn partition_errors() {
        let base = raw(
            vec![vec![0.0; 2]; 2],
            vec![1.0, 0.0],
            vec![1.0, 1.0],
            vec![vec![0], vec![1]],
        );
        let mut overlap = base.clone();
        overlap.groups = vec![vec![0, 1], vec![1]];
        assert!(matches!(validate(&overlap), Err(NetworkError::BadPartition(_))));
        let mut missing = base.clone();
        missing.groups = vec![vec![0]];
        assert!(matches!(validate(&missing), Err(NetworkError::BadPartition(_))));
        let mut empty = base.clone();
        empty.groups = vec![vec![0, 1], vec![]];
        assert!(matches!(validate(&empty), Err(NetworkError::BadPartition(_))));
    }

    #[test]
    fn rate_errors() {
        let base = raw(vec![vec![0.0]], vec![1.0], vec![2.0], vec![vec![0]]);
        let mut zero_mu = base.clone();
        zero_mu.mu = vec![0.0];
        assert!(matches!(validate(&zero_mu), Err(NetworkError::BadRates(_))));
        let mut neg_lambda = base.clone();
        neg_lambda.lambda = vec![-0.1];
        assert!(matches!(validate(&neg_lambda), Err(NetworkError::BadRates(_))));
    }

    #[test]
    fn no_routing_is_identity_case() {
        let net = validate(&raw(
            vec![vec![0.0; 3]; 3],
            vec![0.5, 0.0, 1.5],
            vec![1.0, 2.0, 3.0],
            vec![vec![0, 1], vec![2]],
        ))
        .unwrap();
        let dq = derive(&net).unwrap();
        for i in 0..3 {
            assert_eq!(dq.nu[i], net.lambda()[i]);
            for j in 0..3 {
                let id = if i == j { 1.0 } else { 0.0 };
                assert_eq!(dq.q[(i, j)], id);
                assert_eq!(dq.d[(i, j)], -net.mu()[i] * id);
            }
        }
    }

    #[test]
    fn tandem_conserves_flow() {
        let net = validate(&raw(
            vec![vec![0.0, 1.0], vec![0.0, 0.0]],
            vec![2.0, 0.0],
            vec![3.0, 3.0],
            vec![vec![0], vec![1]],
        ))
        .unwrap();
        let dq = derive(&net).unwrap();
        assert!((dq.nu[0] - 2.0).abs() < 1e-12);
        assert!((dq.nu[1] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn self_loop_matches_fixed_point_iteration() {
        let net = validate(&raw(vec![vec![0.5]], vec![1.0], vec![4.0], vec![vec![0]])).unwrap();
        // oracle: nu <- lambda + R^T nu
        let mut nu = 0.0;
        for _ in 0..200 {
            nu = 1.0 + 0.5 * nu;
        }
        let dq = derive(&net).unwrap();
        assert!((dq.nu[0] - nu).abs() < 1e-12);
        assert!((nu - 2.0).abs() < 1e-12);
    }

    #[test]
    fn single_queue_utilization() {
        let net = validate(&raw(vec![vec![0.0]], vec![1.0], vec![2.0], vec![vec![0]])).unwrap();
        let dq = derive(&net).unwrap();
        let rep = utilization_check(&dq, &net).unwrap();
        assert!((rep.groups[0].rho - 0.5).abs() < 1e-12);
        assert!((rep.groups[0].slack - 0.5).abs() < 1e-12);
        assert!(rep.stable);
    }

    #[test]
    fn four_queue_utilization() {
        let net = four_queue(0.4);
        let dq = derive(&net).unwrap();
        for i in 0..4 {
            assert!((dq.nu[i] - 0.4).abs() < 1e-12);
        }
        let rep = utilization_check(&dq, &net).unwrap();
        assert!((rep.groups[0].rho - (0.4 / 3.0 + 0.4)).abs() < 1e-12);
        assert!((rep.groups[1].rho - 0.8).abs() < 1e-12);
        assert!(rep.stable);

        let heavy = four_queue(1.1);
        let rep = utilization_check(&derive(&heavy).unwrap(), &heavy).unwrap();
        assert!((rep.groups[1].rho - 2.2).abs() < 1e-12);
        assert!(!rep.stable);
        assert!(!rep.groups[1].stable);
    }

    #[test]
    fn d_inverse_transpose_is_nonpositive() {
        let net = four_queue(0.4);
        let dq = derive(&net).unwrap();
        let dinv = dq.d_inv_t(&net);
        assert!(dinv.iter().all(|&v| v <= 0.0));
        // D^T (D^-T) = I
        let prod = dq.d.transpose() * &dinv;
        assert!((prod - DMatrix::identity(4, 4)).amax() < 1e-12);
    }

    #[test]
    fn acyclicity() {
        let zero = validate(&raw(
            vec![vec![0.0; 2]; 2],
            vec![1.0, 1.0],
            vec![1.0, 1.0],
            vec![vec![0], vec![1]],
        ))
        .unwrap();
        assert!(is_acyclic(&zero));
        assert!(is_acyclic(&four_queue(0.4)));
        let cycle = validate(&raw(
            vec![vec![0.0, 1.0], vec![0.6, 0.0]],
            vec![0.2, 0.0],
            vec![1.0, 1.0],
            vec![vec![0], vec![1]],
        ))
        .unwrap();
        assert!(!is_acyclic(&cycle));
        let self_loop =
            validate(&raw(vec![vec![0.5]], vec![1.0], vec![4.0], vec![vec![0]])).unwrap();
        assert!(!is_acyclic(&self_loop));
    }
}
