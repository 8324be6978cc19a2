use lkstab_core::dessim::{detect_instability, run, Families, Family, SimConfig, SimError};
use lkstab_core::policies::PolicyConfig;
use lkstab_core::sampling::{random_network, NetworkShape};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn runs_conserve_jobs_and_repeat_exactly(seed in any::<u64>(), ldq in any::<bool>()) {
        let (net, _) = random_network(&mut ChaCha8Rng::seed_from_u64(seed), &NetworkShape { max_queues: 5, ..NetworkShape::default() });
        let policy = if ldq { PolicyConfig::ldq() } else { PolicyConfig::lq() };
        let sim = SimConfig { audit: true, ..SimConfig::exponential(seed, 300.0, 1.0) };
        let x0 = vec![3; net.num_queues()];
        let a = run(&net, &policy, &sim, &x0).unwrap();
        let b = run(&net, &policy, &sim, &x0).unwrap();
        prop_assert_eq!(&a, &b);
        prop_assert!(a.conserves_jobs());
        let audit = a.audit.unwrap();
        prop_assert_eq!(audit.fifo_violations, 0);
        prop_assert_eq!(audit.truncated_services, 0);
        prop_assert_eq!(audit.work_conservation_violations, 0);
        for g in net.groups() {
            prop_assert!(g.iter().map(|&i| a.busy_fraction[i]).sum::<f64>() <= 1.0 + 1e-9);
        }
    }
}

#[test]
fn other_families_run_and_seeds_differ() {
    let (net, _) = random_network(&mut ChaCha8Rng::seed_from_u64(3), &NetworkShape::two_by_two());
    let sim = SimConfig {
        arrivals: Families::All(Family::Deterministic),
        services: Families::All(Family::Uniform { spread: 0.5 }),
        ..SimConfig::exponential(1, 200.0, 1.0)
    };
    let a = run(&net, &PolicyConfig::lq(), &sim, &[1, 1, 1, 1]).unwrap();
    assert!(a.conserves_jobs());
    let sim2 = SimConfig { seed: 2, ..sim };
    let b = run(&net, &PolicyConfig::lq(), &sim2, &[1, 1, 1, 1]).unwrap();
    assert_ne!(a.snapshots, b.snapshots);
}

#[test]
fn short_runs_have_insufficient_data() {
    let (net, _) = random_network(&mut ChaCha8Rng::seed_from_u64(3), &NetworkShape::two_by_two());
    let r = run(&net, &PolicyConfig::lq(), &SimConfig::exponential(1, 50.0, 1.0), &[0; 4]).unwrap();
    assert!(matches!(detect_instability(&r), Err(SimError::InsufficientData { .. })));
}
