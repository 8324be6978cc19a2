//! Distance between the scaled simulation `X(rt)/r` and the fluid path.

use serde::Serialize;

use super::{run, SimConfig, SimError};
use crate::exec::{self, Execution};
use crate::fluid::FluidTrajectory;
use crate::network::NetworkSpec;
use crate::policies::PolicyConfig;

/// Extra fluid time simulated past the end of the fluid trajectory.
const MARGIN: f64 = 0.1;
/// Snapshots per unit of fluid time span.
const SAMPLES: f64 = 400.0;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub r: f64,
    /// Sup-norm error per seed.
    pub errors: Vec<f64>,
    pub mean_error: f64,
}

fn scaled_error(
    net: &NetworkSpec,
    policy: &PolicyConfig,
    x0: &[f64],
    r: f64,
    sim: &SimConfig,
    traj: &FluidTrajectory,
) -> Result<f64, SimError> {
    let span = traj.end_time().max(1.0);
    let start: Vec<u64> = x0.iter().map(|v| (r * v).ceil() as u64).collect();
    let cfg = SimConfig {
        horizon: r * span * (1.0 + MARGIN),
        sample_interval: r * span / SAMPLES,
        ..sim.clone()
    };
    let res = run(net, policy, &cfg, &start)?;
    let mut err: f64 = 0.0;
    for s in &res.snapshots {
        let fluid = traj.x_at(s.t / r);
        for (a, b) in s.x.iter().zip(&fluid) {
            err = err.max((*a as f64 / r - b).abs());
        }
    }
    Ok(err)
}

/// Sup-norm error `sup_t |X(rt)/r - X_fluid(t)|` for each `r`, one run each
/// with `sim.seed`, started from `ceil(r x0)`.
pub fn fluid_scaling_check(
    net: &NetworkSpec,
    policy: &PolicyConfig,
    x0: &[f64],
    r_list: &[f64],
    sim: &SimConfig,
    traj: &FluidTrajectory,
) -> Result<Vec<(f64, f64)>, SimError> {
    r_list
        .iter()
        .map(|&r| scaled_error(net, policy, x0, r, sim, traj).map(|e| (r, e)))
        .collect()
}

/// [`fluid_scaling_check`] over several seeds, runs spread per `exec`.
#[allow(clippy::too_many_arguments)]
pub fn fluid_scaling_sweep(
    net: &NetworkSpec,
    policy: &PolicyConfig,
    x0: &[f64],
    r_list: &[f64],
    sim: &SimConfig,
    traj: &FluidTrajectory,
    seeds: &[u64],
    exec: Execution,
) -> Result<Vec<ScalingPoint>, SimError> {
    let jobs: Vec<(f64, u64)> = r_list
        .iter()
        .flat_map(|&r| seeds.iter().map(move |&s| (r, s)))
        .collect();
    let errs = exec::map(exec, &jobs, |&(r, seed)| {
        let cfg = SimConfig { seed, ..sim.clone() };
        scaled_error(net, policy, x0, r, &cfg, traj)
    });
    let mut out = Vec::new();
    for (ri, &r) in r_list.iter().enumerate() {
        let errors = errs[ri * seeds.len()..(ri + 1) * seeds.len()]
            .iter()
            .cloned()
            .collect::<Result<Vec<f64>, _>>()?;
        let mean_error = errors.iter().sum::<f64>() / errors.len().max(1) as f64;
        out.push(ScalingPoint {
            r,
            errors,
            mean_error,
        });
    }
    Ok(out)
}
