use proptest::prelude::*;
use punctlab_core::agents::{epsilon_at, softmax_clipped, softmax_penalty, PenaltySign};
use punctlab_core::nn::{NetworkParams, TargetPair};
use punctlab_core::rng::{indexed_stream, stream};
use punctlab_core::sim::{observe_into, RequestKind, SimConfig, Simulator};
use punctlab_core::trainer::magnitude_difference;
use rand::Rng;

fn penalty_sign() -> impl Strategy<Value = PenaltySign> {
    prop_oneof![
        Just(PenaltySign::UniformPrior),
        Just(PenaltySign::AsWritten)
    ]
}

proptest! {
    #[test]
    fn clipped_softmax_stays_in_range(q in prop::collection::vec(-30.0f64..30.0, 1..6), clip in 1e-6f64..0.2) {
        for p in softmax_clipped(&q, clip) {
            prop_assert!(p >= clip && p <= 1.0);
        }
    }

    #[test]
    fn unclamped_penalty_gradient_sums_to_zero(q in prop::collection::vec(-2.0f64..2.0, 2..6), sign in penalty_sign()) {
        let (_, g) = softmax_penalty(&q, 1.7, 1e-3, sign);
        prop_assert!(g.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn penalty_is_shift_invariant(q in prop::collection::vec(-3.0f64..3.0, 3), c in -10.0f64..10.0) {
        let shifted: Vec<f64> = q.iter().map(|v| v + c).collect();
        let (a, _) = softmax_penalty(&q, 2.0, 1e-3, PenaltySign::UniformPrior);
        let (b, _) = softmax_penalty(&shifted, 2.0, 1e-3, PenaltySign::UniformPrior);
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn epsilon_is_monotone_and_bounded(total in 1u64..100_000, eps0 in 0.0f64..1.0, a in 0u64..200_000, b in 0u64..200_000) {
        let (lo, hi) = (a.min(b), a.max(b));
        let (e_lo, e_hi) = (epsilon_at(lo, total, eps0), epsilon_at(hi, total, eps0));
        prop_assert!(e_hi <= e_lo);
        prop_assert!((0.0..=eps0).contains(&e_lo));
        prop_assert_eq!(epsilon_at(total, total, eps0), 0.0);
    }

    #[test]
    fn polyak_update_is_a_convex_combination(seed in any::<u64>(), tau in 0.0f64..=1.0) {
        let online = NetworkParams::init_uniform(&[3, 4, 2], &mut stream(seed, "a")).unwrap();
        let other = NetworkParams::init_uniform(&[3, 4, 2], &mut stream(seed, "b")).unwrap();
        let mut pair = TargetPair::new(other.clone(), tau);
        pair.target = online.clone();
        pair.polyak_update();
        for ((t, o), x) in pair.target.values().iter().zip(other.values()).zip(online.values()) {
            let expected = tau * o + (1.0 - tau) * x;
            prop_assert!((t - expected).abs() <= 1e-15 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn snapshot_round_trip(seed in any::<u64>(), widths in prop::collection::vec(1usize..6, 2..5)) {
        let net = NetworkParams::init_uniform(&widths, &mut stream(seed, "snap")).unwrap();
        prop_assert_eq!(NetworkParams::from_bytes(&net.to_bytes()).unwrap(), net);
    }

    #[test]
    fn symmetric_values_have_unit_md(c in prop_oneof![-1e6f64..-1e-3, 1e-3f64..1e6]) {
        prop_assert_eq!(magnitude_difference(&[c, c, c]), Some(1.0));
    }

    #[test]
    fn random_play_keeps_counters_consistent(seed in any::<u64>(), p_critical in 0.0f64..=1.0) {
        let cfg = SimConfig { p_critical, p_request: 0.3, ..SimConfig::default() };
        let mut env = Simulator::new(cfg.clone(), stream(seed, "env")).unwrap();
        let mut actions = stream(seed, "actions");
        let (mut arrived, mut scheduled, mut missed, mut punctures, mut interrupted) = (0, 0, 0, 0, 0);
        let mut obs = vec![0.0; cfg.state_dim()];
        for _ in 0..2000 {
            if env.maybe_spawn_request().is_some() {
                arrived += 1;
            }
            observe_into(env.state(), &cfg, &mut obs);
            prop_assert!(obs.iter().all(|v| (0.0..=1.0).contains(v)));
            let pending = env.state().request.kind != RequestKind::None;
            let a = actions.random_range(0..cfg.n_actions());
            let out = env.step(a).unwrap();
            if a > 0 && pending {
                punctures += 1;
            }
            scheduled += out.flags.scheduled.is_some() as usize;
            missed += out.flags.missed.is_some() as usize;
            interrupted += out.flags.tx_interrupted as usize;
            prop_assert!(out.reward.r_capacity >= 0.0);
        }
        let still_pending = (env.state().request.kind != RequestKind::None) as usize;
        prop_assert_eq!(scheduled + missed + still_pending, arrived);
        prop_assert!(interrupted <= punctures);
    }
}

#[test]
fn named_streams_are_independent() {
    let draw =
        |mut r: punctlab_core::rng::LabRng| -> Vec<u64> { (0..4).map(|_| r.random()).collect() };
    assert_eq!(
        draw(stream(5, "environment")),
        draw(stream(5, "environment"))
    );
    assert_ne!(
        draw(stream(5, "environment")),
        draw(stream(5, "network-init"))
    );
    assert_ne!(
        draw(stream(5, "environment")),
        draw(stream(6, "environment"))
    );
    assert_ne!(
        draw(indexed_stream(5, "probe", 0)),
        draw(indexed_stream(5, "probe", 1))
    );
}
