use lkstab_core::network::validate;
use lkstab_core::policies::{decide, Decision, PolicyConfig, TieBreak};
use lkstab_core::sampling::{random_network, NetworkShape};
use lkstab_core::scenario::four_queue_route;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn fixed(net: &lkstab_core::network::NetworkSpec, cfg: PolicyConfig) -> PolicyConfig {
    cfg.with_tiebreak(TieBreak::FixedOrder(net.groups().to_vec()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn decisions_ignore_a_common_scale(seed in any::<u64>(), x in prop::collection::vec(0u64..6, 8), c in 1u64..50) {
        let (net, _) = random_network(&mut ChaCha8Rng::seed_from_u64(seed), &NetworkShape::default());
        let x = &x[..net.num_queues()];
        let scaled: Vec<u64> = x.iter().map(|v| v * c).collect();
        let real: Vec<f64> = x.iter().map(|&v| v as f64 * 0.37).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for cfg in [fixed(&net, PolicyConfig::lq()), fixed(&net, PolicyConfig::ldq())] {
            for j in 0..net.num_groups() {
                let a = decide(&net, j, x, &cfg, &mut rng);
                prop_assert_eq!(a, decide(&net, j, &scaled, &cfg, &mut rng));
                prop_assert_eq!(a, decide(&net, j, &real, &cfg, &mut rng));
            }
        }
    }

    #[test]
    fn lq_never_idles_a_busy_group(seed in any::<u64>(), x in prop::collection::vec(0u32..4, 8)) {
        let (net, _) = random_network(&mut ChaCha8Rng::seed_from_u64(seed), &NetworkShape::default());
        let x = &x[..net.num_queues()];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for j in 0..net.num_groups() {
            let busy = net.group(j).iter().any(|&i| x[i] > 0);
            let d = decide(&net, j, x, &PolicyConfig::lq(), &mut rng);
            prop_assert_eq!(busy, d != Decision::Idle);
            if let Decision::Serve(i) = d {
                prop_assert!(net.group(j).iter().all(|&m| x[m] <= x[i]));
            }
        }
    }
}

#[test]
fn priority_follows_the_order() {
    let net = validate(&four_queue_route(1.0, [5.0, 1.8, 1.8, 5.0])).unwrap();
    let cfg = PolicyConfig::static_priority(vec![vec![1, 0], vec![2, 3]]);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert_eq!(decide(&net, 0, &[9u64, 1, 0, 0], &cfg, &mut rng), Decision::Serve(1));
    assert_eq!(decide(&net, 0, &[9u64, 0, 0, 0], &cfg, &mut rng), Decision::Serve(0));
    assert_eq!(decide(&net, 1, &[9u64, 0, 0, 0], &cfg, &mut rng), Decision::Idle);
}
