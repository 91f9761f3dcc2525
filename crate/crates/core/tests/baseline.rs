use punctlab_core::rng::stream;
use punctlab_core::sim::{SimConfig, Simulator};
use punctlab_core::trainer::{manual_action, manual_baseline};

#[test]
fn manual_policy_never_misses_over_many_steps() {
    for p_critical in [0.0, 0.3, 1.0] {
        let cfg = SimConfig {
            p_critical,
            ..SimConfig::default()
        };
        let mut env = Simulator::new(cfg.clone(), stream(17, "manual")).unwrap();
        for _ in 0..100_000 {
            env.maybe_spawn_request();
            let a = manual_action(env.state(), &cfg);
            let out = env.step(a).unwrap();
            assert_eq!(out.flags.missed, None, "p_critical {p_critical}");
        }
    }
}

#[test]
fn baseline_is_deterministic_and_complete() {
    let cfg = SimConfig::default();
    let a = manual_baseline(&cfg, 4, 1000, 9).unwrap();
    let b = manual_baseline(&cfg, 4, 1000, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 4);
    for m in &a {
        assert_eq!(m.urllc_missed_ratio, 0.0);
        assert_eq!(m.critical_missed_ratio, 0.0);
        assert_eq!(m.counters.missed + m.counters.scheduled, m.counters.arrived);
    }
}

#[test]
fn baseline_without_requests_reports_zero_missed() {
    let cfg = SimConfig {
        p_request: 0.0,
        ..SimConfig::default()
    };
    for m in manual_baseline(&cfg, 3, 500, 1).unwrap() {
        assert_eq!(m.counters.arrived, 0);
        assert_eq!(m.urllc_missed_ratio, 0.0);
        assert_eq!(m.tx_interrupted_ratio, 0.0);
    }
}
