use gpcsa::csa::select_channel;
use gpcsa::dist::{Distribution, ExpDist, OnOffModel};
use gpcsa::idleprob::IdleProbTable;
use gpcsa::traffic::{generate, trace_hash, StartState};
use proptest::prelude::*;

fn hed_model() -> impl Strategy<Value = OnOffModel> {
    (
        0.05f64..20.0,
        prop::collection::vec((0.05f64..1.0, -3.0f64..3.0), 1..=4),
    )
        .prop_filter_map("distinct rates", |(on, phases)| {
            let total: f64 = phases.iter().map(|p| p.0).sum();
            let mut pairs: Vec<(f64, f64)> = phases.iter().map(|&(w, r)| (w / total, r.exp())).collect();
            pairs.sort_by(|a, b| a.1.total_cmp(&b.1));
            if pairs.windows(2).any(|w| w[1].1 / w[0].1 < 1.05) {
                return None;
            }
            Some(OnOffModel::new(ExpDist::new(on).ok()?, Distribution::hed(&pairs).ok()?))
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn probabilities_are_consistent(model in hed_model(), dt in 0.0f64..50.0) {
        let t = IdleProbTable::build(&model).unwrap();
        for p in [t.p_off_off(dt), t.p_on_on(dt), t.p_on_off(dt)] {
            prop_assert!((0.0..=1.0).contains(&p));
        }
        prop_assert!((t.p_on_on(dt) + t.p_on_off(dt) - 1.0).abs() < 1e-12);
        prop_assert!((t.stationary_idle() - model.idle_fraction()).abs() < 1e-12);
    }

    #[test]
    fn probabilities_start_at_certainty(model in hed_model()) {
        let t = IdleProbTable::build(&model).unwrap();
        prop_assert!((t.p_off_off_unclamped(0.0) - 1.0).abs() < 1e-9);
        prop_assert!((t.p_on_on_unclamped(0.0) - 1.0).abs() < 1e-9);
        let far = 1e4 * model.mean_cycle();
        prop_assert!((t.p_off_off(far) - model.idle_fraction()).abs() < 1e-9);
    }

    #[test]
    fn argmax_ignores_positive_scaling(beliefs in prop::collection::vec(0.0f64..1.0, 1..10), k in 0.1f64..10.0) {
        let scaled: Vec<f64> = beliefs.iter().map(|b| b * k).collect();
        let best = select_channel(&beliefs);
        prop_assert!(beliefs.iter().all(|&b| b <= beliefs[best]));
        prop_assert_eq!(select_channel(&scaled), best);
    }

    #[test]
    fn traces_tile_the_horizon(model in hed_model(), seed in any::<u64>(), horizon_ms in 1u64..20_000) {
        let horizon = horizon_ms * 1_000_000;
        let a = generate(&model, horizon, seed, 0, StartState::StationaryMix).unwrap();
        prop_assert!(a.is_well_formed());
        prop_assert!(a.end() >= horizon);
        let b = generate(&model, horizon, seed, 0, StartState::StationaryMix).unwrap();
        prop_assert_eq!(trace_hash(&[a]), trace_hash(&[b]));
    }
}
