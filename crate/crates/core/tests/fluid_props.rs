use lkstab_core::fluid::{
    self, dominating_sets_with_tol, maxima, solve_phase_lq, solve_phase_lq_sliding, FluidPolicy, FluidTrajectory,
};
use lkstab_core::network::{is_acyclic, DerivedQuantities, NetworkSpec};
use lkstab_core::numeric::TOL;
use lkstab_core::sampling::{random_feasible_state, random_network, random_x0, NetworkShape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_segments(net: &NetworkSpec, dq: &DerivedQuantities, traj: &FluidTrajectory) -> Result<(), TestCaseError> {
    let k = net.num_queues();
    for s in &traj.segments {
        prop_assert!(s.residual() <= 1e-8, "residual {}", s.residual());
        prop_assert!(s.maxima_drift_spread() <= 1e-9);
        prop_assert!(s.x_end.iter().chain(&s.x_start).all(|&v| v >= 0.0));
        prop_assert!(s.phase.tdot.iter().all(|&t| t >= -1e-9));
        for g in net.groups() {
            prop_assert!(g.iter().map(|&i| s.phase.tdot[i]).sum::<f64>() <= 1.0 + 1e-9);
        }
        for i in 0..k {
            let v = net.lambda()[i] + (0..k).map(|m| dq.d[(m, i)] * s.phase.tdot[m]).sum::<f64>();
            prop_assert!((v - s.phase.drift[i]).abs() <= 1e-9);
        }
    }
    for w in traj.segments.windows(2) {
        prop_assert_eq!(w[0].t_end, w[1].t_start);
    }
    Ok(())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn feasible_lq_phases_shrink_some_busy_group(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, dq) = random_network(&mut rng, &NetworkShape::default());
        if let Some((s, ph)) = random_feasible_state(&mut rng, &net, &dq, 128) {
            let min = (0..net.num_groups())
                .filter(|&j| !s.set(j).is_empty())
                .map(|j| ph.alpha[j])
                .fold(f64::INFINITY, f64::min);
            prop_assert!(min < 0.0, "state {} alpha {:?}", s, ph.alpha);
        }
    }

    #[test]
    fn lq_trajectories_are_consistent(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, dq) = random_network(&mut rng, &NetworkShape::default());
        let x0 = random_x0(&mut rng, net.num_queues(), 100.0, 0.2);
        let traj = fluid::integrate(&net, &dq, &x0, FluidPolicy::Lq, 1e7).unwrap();
        check_segments(&net, &dq, &traj)?;
        prop_assert!(traj.drain_time().is_some(), "{}", traj.terminal);
    }

    #[test]
    fn ldq_acyclic_trajectories_drain_with_a_falling_max(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = NetworkShape { acyclic: true, ..NetworkShape::default() };
        let (net, dq) = random_network(&mut rng, &shape);
        let x0 = random_x0(&mut rng, net.num_queues(), 100.0, 0.2);
        let traj = fluid::integrate(&net, &dq, &x0, FluidPolicy::Ldq, 1e7).unwrap();
        check_segments(&net, &dq, &traj)?;
        prop_assert!(traj.drain_time().is_some(), "{}", traj.terminal);
        let top = |x: &[f64]| x.iter().copied().fold(0.0, f64::max);
        for s in traj.segments.iter().filter(|s| s.duration() > 0.0) {
            prop_assert!(top(&s.x_end) < top(&s.x_start), "max rises at t = {}", s.t_start);
        }
    }

    #[test]
    fn ldq_serves_only_dominating_queues(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, dq) = random_network(&mut rng, &NetworkShape { max_queues: 6, ..NetworkShape::default() });
        let x0 = random_x0(&mut rng, net.num_queues(), 100.0, 0.3);
        let Ok(traj) = fluid::integrate(&net, &dq, &x0, FluidPolicy::Ldq, 2000.0) else {
            return Ok(());
        };
        for s in traj.segments.iter().filter(|s| s.duration() > 0.0) {
            let x = &s.x_start;
            let scale = x.iter().copied().fold(0.0, f64::max);
            let tol = TOL.length(scale) * 10.0;
            let m = maxima(x, &net, TOL.tie_rel);
            let dom = dominating_sets_with_tol(&net, x, &m, tol);
            for &i in &s.phase.served {
                if dom[net.group_of(i)].contains(&i) {
                    continue;
                }
                // sliding: without this service a fed maximum would fall off its group's maxima
                let fed = m.members().filter(|&q| x[i] < x[q] - tol && net.r(i, q) > 0.0);
                for q in fed {
                    let g = net.group_of(q);
                    let without = s.phase.drift[q] - s.phase.tdot[i] * net.mu()[i] * net.r(i, q);
                    prop_assert!(without < s.phase.alpha[g] - 1e-9,
                        "queue {} served at t = {} feeding {}", i, s.t_start, q);
                }
            }
        }
    }

    #[test]
    fn sliding_lq_matches_the_block_solve(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (net, dq) = random_network(&mut rng, &NetworkShape { max_queues: 6, ..NetworkShape::default() });
        let x0 = random_x0(&mut rng, net.num_queues(), 100.0, 0.3);
        let traj = fluid::integrate(&net, &dq, &x0, FluidPolicy::Lq, 1e7).unwrap();
        for s in traj.segments.iter().filter(|s| s.duration() > 0.0) {
            // midpoint of the segment, where the maxima state is settled
            let mid: Vec<f64> = s.x_start.iter().zip(&s.phase.drift).map(|(x, v)| x + v * s.duration() / 2.0).collect();
            let block = solve_phase_lq(&net, &dq, &s.state).unwrap();
            let slide = solve_phase_lq_sliding(&net, &mid).unwrap();
            for g in 0..net.num_groups() {
                if s.state.set(g).is_empty() {
                    continue;
                }
                prop_assert!((block.alpha[g] - slide.alpha[g]).abs() <= 1e-7,
                    "group {} block {:?} sliding {:?}", g, block.alpha, slide.alpha);
            }
        }
    }
}

#[test]
fn equal_queues_on_an_acyclic_network_fall() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    // exact ties of many queues can exhaust the sliding search
    let shape = NetworkShape { acyclic: true, max_queues: 6, ..NetworkShape::default() };
    for _ in 0..100 {
        let (net, dq) = random_network(&mut rng, &shape);
        assert!(is_acyclic(&net));
        let x = vec![10.0; net.num_queues()];
        let ph = fluid::solve_phase_ldq(&net, &dq, &x).unwrap();
        let top = ph.alpha.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert!(top < 0.0, "alpha {:?}", ph.alpha);
    }
}
