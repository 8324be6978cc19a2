//! Discrete-event simulation of the stochastic network: renewal arrivals,
//! nonpreemptive FIFO service, Markov routing, one server per group.

mod scaling;
mod stats;

use std::cmp::Ordering;
use std::collections::{BinaryHeap, VecDeque};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{GroupId, NetworkSpec, QueueId};
use crate::policies::{self, Decision, PolicyConfig, PolicyKind};

pub use scaling::{fluid_scaling_check, fluid_scaling_sweep, ScalingPoint};
pub use stats::{detect_instability, ols_slope, InstabilityVerdict};

/// How the random substreams are derived from the seed.
pub const RNG_LAYOUT: &str = "ChaCha8Rng::seed_from_u64(seed) with set_stream(n): \
n=0 exterior arrivals, n=1 service times, n=2 routing, n=3 tie-breaks";

const STREAM_ARRIVALS: u64 = 0;
const STREAM_SERVICE: u64 = 1;
const STREAM_ROUTING: u64 = 2;
const STREAM_TIEBREAK: u64 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("insufficient data: {have} points in the regression window, need {need}")]
    InsufficientData { have: usize, need: usize },
}

/// Renewal family; the mean comes from the network rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", deny_unknown_fields)]
pub enum Family {
    Exponential,
    Deterministic,
    /// Uniform on `mean * [1 - spread, 1 + spread]`, `0 <= spread <= 1`.
    Uniform { spread: f64 },
}

impl Family {
    fn sample<R: Rng + ?Sized>(self, rate: f64, rng: &mut R) -> f64 {
        let mean = 1.0 / rate;
        match self {
            Family::Exponential => Exp::new(rate).map(|d| d.sample(rng)).unwrap_or(f64::INFINITY),
            Family::Deterministic => mean,
            Family::Uniform { spread } => {
                if spread == 0.0 {
                    mean
                } else {
                    mean * rng.random_range(1.0 - spread..=1.0 + spread)
                }
            }
        }
    }

    fn validate(self) -> Result<(), SimError> {
        match self {
            Family::Uniform { spread } if !(0.0..=1.0).contains(&spread) => Err(SimError::Config(
                format!("uniform spread {spread} outside [0, 1]"),
            )),
            _ => Ok(()),
        }
    }
}

/// One family for every queue, or one per queue.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Families {
    All(Family),
    PerQueue(Vec<Family>),
}

impl Families {
    fn get(&self, i: QueueId) -> Family {
        match self {
            Families::All(f) => *f,
            Families::PerQueue(v) => v[i],
        }
    }

    fn validate(&self, k: usize) -> Result<(), SimError> {
        match self {
            Families::All(f) => f.validate(),
            Families::PerQueue(v) if v.len() != k => Err(SimError::Config(format!(
                "{} families for {k} queues",
                v.len()
            ))),
            Families::PerQueue(v) => v.iter().try_for_each(|f| f.validate()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub arrivals: Families,
    pub services: Families,
    pub seed: u64,
    pub horizon: f64,
    pub sample_interval: f64,
    /// Record FIFO, nonpreemption and work-conservation checks.
    #[serde(default)]
    pub audit: bool,
}

impl SimConfig {
    pub fn exponential(seed: u64, horizon: f64, sample_interval: f64) -> Self {
        SimConfig {
            arrivals: Families::All(Family::Exponential),
            services: Families::All(Family::Exponential),
            seed,
            horizon,
            sample_interval,
            audit: false,
        }
    }

    pub fn validate(&self, net: &NetworkSpec) -> Result<(), SimError> {
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return Err(SimError::Config("horizon must be finite and non-negative".into()));
        }
        if !(self.sample_interval.is_finite() && self.sample_interval > 0.0) {
            return Err(SimError::Config("sample_interval must be positive".into()));
        }
        self.arrivals.validate(net.num_queues())?;
        self.services.validate(net.num_queues())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub t: f64,
    pub x: Vec<u64>,
    /// Exterior arrivals so far.
    pub arrivals: u64,
    /// Jobs that have left the network so far.
    pub departures: u64,
}

impl Snapshot {
    pub fn in_system(&self) -> u64 {
        self.x.iter().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AuditReport {
    pub decision_epochs: u64,
    pub fifo_violations: u64,
    pub truncated_services: u64,
    /// Idle server with a non-empty group where the policy allows no idling.
    pub work_conservation_violations: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimResult {
    pub snapshots: Vec<Snapshot>,
    pub initial_jobs: u64,
    /// Fraction of the horizon each queue was in service.
    pub busy_fraction: Vec<f64>,
    pub arrivals: u64,
    pub departures: u64,
    pub in_system: u64,
    /// Least-squares slope of total jobs over the last half of the snapshots.
    pub growth_slope: f64,
    pub audit: Option<AuditReport>,
    pub rng_layout: String,
}

impl SimResult {
    /// `initial + arrivals = departures + in-system` at every snapshot.
    pub fn conserves_jobs(&self) -> bool {
        self.snapshots
            .iter()
            .all(|s| self.initial_jobs + s.arrivals == s.departures + s.in_system())
    }

    pub fn totals(&self) -> (Vec<f64>, Vec<f64>) {
        self.snapshots
            .iter()
            .map(|s| (s.t, s.in_system() as f64))
            .unzip()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum EventKind {
    Arrival(QueueId),
    Completion(GroupId),
}

#[derive(Debug, Clone, Copy)]
struct Event {
    time: f64,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    // reversed: BinaryHeap is a max-heap
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .time
            .total_cmp(&self.time)
            .then(other.seq.cmp(&self.seq))
    }
}

#[derive(Debug, Clone, Copy)]
struct InService {
    queue: QueueId,
    start: f64,
    end: f64,
}

struct Rngs {
    arrivals: ChaCha8Rng,
    services: ChaCha8Rng,
    routing: ChaCha8Rng,
    tiebreak: ChaCha8Rng,
}

impl Rngs {
    fn new(seed: u64) -> Self {
        let stream = |n| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(n);
            r
        };
        Rngs {
            arrivals: stream(STREAM_ARRIVALS),
            services: stream(STREAM_SERVICE),
            routing: stream(STREAM_ROUTING),
            tiebreak: stream(STREAM_TIEBREAK),
        }
    }
}

/// Simulates from `x0` jobs per queue until `sim.horizon`.
pub fn run(
    net: &NetworkSpec,
    policy: &PolicyConfig,
    sim: &SimConfig,
    x0: &[u64],
) -> Result<SimResult, SimError> {
    sim.validate(net)?;
    policy
        .validate(net)
        .map_err(|e| SimError::Config(e.to_string()))?;
    let k = net.num_queues();
    if x0.len() != k {
        return Err(SimError::Config(format!("x0 has {} entries for {k} queues", x0.len())));
    }

    let mut rngs = Rngs::new(sim.seed);
    let mut heap = BinaryHeap::new();
    let mut seq = 0u64;
    let mut push = |heap: &mut BinaryHeap<Event>, time: f64, kind: EventKind| {
        heap.push(Event { time, seq, kind });
        seq += 1;
    };

    // Job arrival timestamps per queue, oldest first; the head is in service
    // when the group's server is working on that queue.
    let mut queues: Vec<VecDeque<f64>> = x0.iter().map(|&n| VecDeque::from(vec![0.0; n as usize])).collect();
    let mut x: Vec<u64> = x0.to_vec();
    let mut servers: Vec<Option<InService>> = vec![None; net.num_groups()];
    let mut busy = vec![0.0; k];
    let mut arrivals = 0u64;
    let mut departures = 0u64;
    let mut audit = sim.audit.then(AuditReport::default);

    for i in 0..k {
        let rate = net.lambda()[i];
        if rate > 0.0 {
            let dt = sim.arrivals.get(i).sample(rate, &mut rngs.arrivals);
            push(&mut heap, dt, EventKind::Arrival(i));
        }
    }

    let mut snapshots = Vec::new();
    let mut next_snap = 0.0;
    let mut snap_index = 0u64;
    let horizon = sim.horizon;

    let dispatch = |x: &[u64],
                        servers: &mut Vec<Option<InService>>,
                        heap: &mut BinaryHeap<Event>,
                        push: &mut dyn FnMut(&mut BinaryHeap<Event>, f64, EventKind),
                        rngs: &mut Rngs,
                        audit: &mut Option<AuditReport>,
                        now: f64| {
        for (j, slot) in servers.iter_mut().enumerate() {
            if slot.is_some() {
                continue;
            }
            if let Decision::Serve(q) = policies::decide(net, j, x, policy, &mut rngs.tiebreak) {
                let d = sim.services.get(q).sample(net.mu()[q], &mut rngs.services);
                *slot = Some(InService {
                    queue: q,
                    start: now,
                    end: now + d,
                });
                push(heap, now + d, EventKind::Completion(j));
            }
        }
        if let Some(a) = audit {
            a.decision_epochs += 1;
            for (j, slot) in servers.iter().enumerate() {
                let nonempty = net.group(j).iter().any(|&i| x[i] > 0);
                if slot.is_none() && nonempty {
                    let allowed = policy.kind == PolicyKind::Ldq
                        && policies::dominating_candidates(net, j, x).is_empty();
                    if !allowed {
                        a.work_conservation_violations += 1;
                    }
                }
            }
        }
    };

    dispatch(&x, &mut servers, &mut heap, &mut push, &mut rngs, &mut audit, 0.0);

    loop {
        let te = heap.peek().map_or(f64::INFINITY, |e| e.time);
        while next_snap <= horizon && next_snap < te {
            snapshots.push(Snapshot {
                t: next_snap,
                x: x.clone(),
                arrivals,
                departures,
            });
            snap_index += 1;
            next_snap = snap_index as f64 * sim.sample_interval;
        }
        if te > horizon {
            break;
        }
        let ev = heap.pop().expect("peeked");
        let now = ev.time;
        match ev.kind {
            EventKind::Arrival(i) => {
                arrivals += 1;
                x[i] += 1;
                queues[i].push_back(now);
                let dt = sim.arrivals.get(i).sample(net.lambda()[i], &mut rngs.arrivals);
                push(&mut heap, now + dt, EventKind::Arrival(i));
            }
            EventKind::Completion(j) => {
                let s = servers[j].take().expect("completion of an idle server");
                let q = s.queue;
                busy[q] += s.end - s.start;
                let arrived = queues[q].pop_front().expect("served job exists");
                x[q] -= 1;
                if let Some(a) = &mut audit {
                    if (now - s.end).abs() > 0.0 {
                        a.truncated_services += 1;
                    }
                    if queues[q].front().is_some_and(|&next| next < arrived) {
                        a.fifo_violations += 1;
                    }
                }
                match route(net, q, &mut rngs.routing) {
                    Some(dest) => {
                        x[dest] += 1;
                        queues[dest].push_back(now);
                    }
                    None => departures += 1,
                }
            }
        }
        dispatch(&x, &mut servers, &mut heap, &mut push, &mut rngs, &mut audit, now);
    }
    for s in servers.iter().flatten() {
        busy[s.queue] += horizon - s.start;
    }

    let busy_fraction = busy
        .iter()
        .map(|b| if horizon > 0.0 { b / horizon } else { 0.0 })
        .collect();
    let mut result = SimResult {
        initial_jobs: x0.iter().sum(),
        in_system: x.iter().sum(),
        snapshots,
        busy_fraction,
        arrivals,
        departures,
        growth_slope: 0.0,
        audit,
        rng_layout: RNG_LAYOUT.to_string(),
    };
    result.growth_slope = stats::last_half_slope(&result).unwrap_or(0.0);
    Ok(result)
}

/// Next queue of a job leaving `q`, or `None` if it exits.
fn route<R: Rng + ?Sized>(net: &NetworkSpec, q: QueueId, rng: &mut R) -> Option<QueueId> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (j, &p) in net.routing()[q].iter().enumerate() {
        if p > 0.0 {
            acc += p;
            if u < acc {
                return Some(j);
            }
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{serial_route, validate, RawNetwork};

    fn mm1(lambda: f64, mu: f64) -> NetworkSpec {
        validate(&RawNetwork {
            groups: vec![vec![0]],
            routing: vec![vec![0.0]],
            lambda: vec![lambda],
            mu: vec![mu],
        })
        .unwrap()
    }

    #[test]
    fn empty_network_stays_empty() {
        let net = mm1(0.0, 1.0);
        let r = run(&net, &PolicyConfig::lq(), &SimConfig::exponential(1, 100.0, 1.0), &[0]).unwrap();
        assert_eq!(r.snapshots.len(), 101);
        assert!(r.snapshots.iter().all(|s| s.x == vec![0]));
        assert_eq!(r.arrivals, 0);
    }

    #[test]
    fn mm1_busy_fraction() {
        let net = mm1(1.0, 2.0);
        let r = run(&net, &PolicyConfig::lq(), &SimConfig::exponential(3, 1e5, 10.0), &[0]).unwrap();
        assert!((r.busy_fraction[0] - 0.5).abs() < 0.01, "{}", r.busy_fraction[0]);
        assert!(r.conserves_jobs());
    }

    #[test]
    fn same_seed_same_result() {
        let net = validate(&serial_route(
            &[0, 2, 3, 1],
            vec![vec![0, 1], vec![2, 3]],
            0.4,
            vec![3.0, 1.0, 1.0, 1.0],
        ))
        .unwrap();
        let sim = SimConfig::exponential(11, 500.0, 1.0);
        let a = run(&net, &PolicyConfig::lq(), &sim, &[5, 5, 5, 5]).unwrap();
        let b = run(&net, &PolicyConfig::lq(), &sim, &[5, 5, 5, 5]).unwrap();
        assert_eq!(a, b);
        let c = run(&net, &PolicyConfig::lq(), &SimConfig { seed: 12, ..sim }, &[5, 5, 5, 5]).unwrap();
        assert_ne!(a.snapshots, c.snapshots);
    }

    #[test]
    fn audit_is_clean() {
        let net = validate(&serial_route(
            &[0, 2, 3, 1],
            vec![vec![0, 1], vec![2, 3]],
            0.4,
            vec![1.0; 4],
        ))
        .unwrap();
        for policy in [PolicyConfig::lq(), PolicyConfig::ldq()] {
            let sim = SimConfig {
                audit: true,
                ..SimConfig::exponential(5, 2000.0, 5.0)
            };
            let r = run(&net, &policy, &sim, &[20, 10, 5, 0]).unwrap();
            let a = r.audit.clone().unwrap();
            assert_eq!(a.fifo_violations, 0);
            assert_eq!(a.truncated_services, 0);
            assert_eq!(a.work_conservation_violations, 0);
            assert!(r.conserves_jobs());
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        let net = mm1(1.0, 2.0);
        let mut sim = SimConfig::exponential(1, 10.0, 0.0);
        assert!(run(&net, &PolicyConfig::lq(), &sim, &[0]).is_err());
        sim.sample_interval = 1.0;
        sim.services = Families::All(Family::Uniform { spread: 2.0 });
        assert!(run(&net, &PolicyConfig::lq(), &sim, &[0]).is_err());
        sim.services = Families::PerQueue(vec![]);
        assert!(run(&net, &PolicyConfig::lq(), &sim, &[0]).is_err());
    }

    #[test]
    fn families_sample_their_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for f in [Family::Exponential, Family::Deterministic, Family::Uniform { spread: 0.5 }] {
            let n = 200_000;
            let mean: f64 = (0..n).map(|_| f.sample(4.0, &mut rng)).sum::<f64>() / n as f64;
            assert!((mean - 0.25).abs() < 0.005, "{f:?} {mean}");
        }
    }
}
