//! Scenario documents and the built-in presets.

use serde::{Deserialize, Serialize};

use crate::dessim::{Families, Family, SimConfig};
use crate::fluid::FluidPolicy;
use crate::network::{serial_route, RawNetwork};
use crate::policies::{PolicyConfig, PolicyKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FluidSection {
    pub x0: Vec<f64>,
    pub horizon: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSection {
    pub arrivals: Families,
    pub services: Families,
    pub seed: u64,
    pub horizon: f64,
    pub sample_interval: f64,
    #[serde(default)]
    pub audit: bool,
    /// Initial jobs per queue; defaults to the rounded fluid `x0`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x0: Option<Vec<u64>>,
    /// Independent replications, seeds `seed, seed + 1, ...`.
    #[serde(default = "one")]
    pub replications: usize,
    /// Scaling factors for the fluid-scaling check.
    #[serde(default)]
    pub r_list: Vec<f64>,
}

fn one() -> usize {
    1
}

impl SimSection {
    pub fn config(&self) -> SimConfig {
        SimConfig {
            arrivals: self.arrivals.clone(),
            services: self.services.clone(),
            seed: self.seed,
            horizon: self.horizon,
            sample_interval: self.sample_interval,
            audit: self.audit,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_dir")]
    pub dir: String,
    #[serde(default = "yes")]
    pub csv: bool,
    #[serde(default = "yes")]
    pub dot: bool,
}

fn default_dir() -> String {
    "out".into()
}

fn yes() -> bool {
    true
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_dir(),
            csv: true,
            dot: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDocument {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub network: RawNetwork,
    pub policy: PolicyConfig,
    pub fluid: FluidSection,
    pub sim: SimSection,
    #[serde(default)]
    pub outputs: OutputSection,
}

impl ScenarioDocument {
    /// Fluid policy matching the scheduling policy, if the fluid model
    /// supports it.
    pub fn fluid_policy(&self) -> Option<FluidPolicy> {
        match self.policy.kind {
            PolicyKind::Lq => Some(FluidPolicy::Lq),
            PolicyKind::Ldq => Some(FluidPolicy::Ldq),
            PolicyKind::StaticPriority => None,
        }
    }

    pub fn sim_x0(&self) -> Vec<u64> {
        self.sim
            .x0
            .clone()
            .unwrap_or_else(|| self.fluid.x0.iter().map(|v| v.round().max(0.0) as u64).collect())
    }
}

pub const PRESET_NAMES: [&str; 4] = ["lu-kumar-lq", "ldq-acyclic", "ldq-cycle", "priority-unstable"];

fn exp_sim(seed: u64, horizon: f64, sample_interval: f64) -> SimSection {
    SimSection {
        arrivals: Families::All(Family::Exponential),
        services: Families::All(Family::Exponential),
        seed,
        horizon,
        sample_interval,
        audit: false,
        x0: None,
        replications: 1,
        r_list: Vec::new(),
    }
}

/// Route 1 -> 3 -> 4 -> 2 with groups {1, 2} and {3, 4}.
pub fn four_queue_route(arrival_rate: f64, mu: [f64; 4]) -> RawNetwork {
    serial_route(&[0, 2, 3, 1], vec![vec![0, 1], vec![2, 3]], arrival_rate, mu.to_vec())
}

/// Two single-queue stations in a cycle: 1 -> 2 always, 2 -> 1 with
/// probability 0.6. With unit service rates both stations carry load
/// `lambda / 0.4`, and when both queues are tied LDQ alternates between
/// them so the pair is a single virtual station of load `2 lambda / 0.4`.
pub fn two_queue_cycle(arrival_rate: f64) -> RawNetwork {
    RawNetwork {
        groups: vec![vec![0], vec![1]],
        routing: vec![vec![0.0, 1.0], vec![0.6, 0.0]],
        lambda: vec![arrival_rate, 0.0],
        mu: vec![1.0, 1.0],
    }
}

pub fn preset(name: &str) -> Option<ScenarioDocument> {
    let x0 = vec![40.0, 30.0, 20.0, 10.0];
    let doc = match name {
        "lu-kumar-lq" => ScenarioDocument {
            name: Some(name.into()),
            network: four_queue_route(0.4, [3.0, 1.0, 1.0, 1.0]),
            policy: PolicyConfig::lq(),
            fluid: FluidSection { x0, horizon: 5000.0 },
            sim: SimSection {
                r_list: vec![10.0, 50.0, 200.0],
                ..exp_sim(1, 800.0, 1.0)
            },
            outputs: OutputSection::default(),
        },
        "ldq-acyclic" => ScenarioDocument {
            name: Some(name.into()),
            network: four_queue_route(0.4, [1.0; 4]),
            policy: PolicyConfig::ldq(),
            fluid: FluidSection { x0, horizon: 5000.0 },
            sim: exp_sim(1, 800.0, 1.0),
            outputs: OutputSection::default(),
        },
        "ldq-cycle" => ScenarioDocument {
            name: Some(name.into()),
            network: two_queue_cycle(0.2),
            policy: PolicyConfig::ldq(),
            fluid: FluidSection {
                x0: vec![40.0, 10.0],
                horizon: 5000.0,
            },
            sim: exp_sim(1, 800.0, 1.0),
            outputs: OutputSection::default(),
        },
        "priority-unstable" => ScenarioDocument {
            name: Some(name.into()),
            network: four_queue_route(1.0, [5.0, 1.8, 1.8, 5.0]),
            policy: PolicyConfig::static_priority(vec![vec![1, 0], vec![2, 3]]),
            fluid: FluidSection { x0, horizon: 5000.0 },
            sim: SimSection {
                x0: Some(vec![0; 4]),
                ..exp_sim(1, 1e5, 50.0)
            },
            outputs: OutputSection::default(),
        },
        _ => return None,
    };
    Some(doc)
}
