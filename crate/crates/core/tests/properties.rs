use dvae::data::{generate_synthetic, read_canonical, split_dataset, write_canonical, GeneratorConfig};
use dvae::decoder::{decode, decoder_gradients, lateral_at, predict_lateral};
use dvae::latent::{classify, validate, ClassifierThresholds, WatchdogRuleSet};
use dvae::losses::{vae_objective, LatentGaussian};
use dvae::models::{Architecture, Model, ModelKind, PredictMode};
use dvae::{LatentParams, ManeuverClass, TimeGrid, Trajectory};
use proptest::prelude::*;

fn grid() -> TimeGrid {
    TimeGrid::default()
}

proptest! {
    #[test]
    fn lateral_curve_is_odd_monotone_bounded_and_anchored(l in 0.0f64..8.0, z3 in -6.0f64..2.5) {
        let g = grid();
        let up = predict_lateral(l, z3, &g);
        let down = predict_lateral(-l, z3, &g);
        prop_assert_eq!(lateral_at(l, z3, g.tau_anchor(), &g), 0.0);
        for (a, b) in up.iter().zip(&down) {
            prop_assert!((a + b).abs() <= 1e-12);
            prop_assert!(a.abs() <= l);
        }
        prop_assert!(up.windows(2).all(|w| w[1] >= w[0]));
        prop_assert!(down.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn jacobian_matches_central_differences(z2 in -6.0f64..6.0, z3 in -4.0f64..1.5, i in 0usize..125) {
        let g = grid();
        let h = 1e-6;
        let row = decoder_gradients([0.0, z2, z3], &g)[i];
        let y = |a: f64, b: f64| lateral_at(a, b, g.tau(i), &g);
        let d2 = (y(z2 + h, z3) - y(z2 - h, z3)) / (2.0 * h);
        let d3 = (y(z2, z3 + h) - y(z2, z3 - h)) / (2.0 * h);
        prop_assert!((row.dy_dz2 - d2).abs() <= 1e-8 * d2.abs().max(1.0));
        prop_assert!((row.dy_dz3 - d3).abs() <= 1e-8 * d3.abs().max(1.0));
    }

    #[test]
    fn classifier_partitions_the_plane(l in -10.0f64..10.0, mu in 1e-4f64..5.0) {
        let th = ClassifierThresholds::default();
        let lp = LatentParams { a_x: 0.0, lambda: l, stretch: mu };
        let c = classify(&lp, &th);
        prop_assert_eq!(c, classify(&lp, &th));
        let kl = mu < th.t_mu || l.abs() < th.t_lambda;
        prop_assert_eq!(c == ManeuverClass::KL, kl);
        if !kl {
            prop_assert_eq!(c == ManeuverClass::LL, l > th.t_lambda);
        }
    }

    #[test]
    fn accepted_latents_decode_within_the_lambda_bound(
        a in -8.0f64..8.0, l in -12.0f64..12.0, z3 in -12.0f64..4.0, v0 in 0.0f64..45.0,
    ) {
        let rules = WatchdogRuleSet::default();
        let lp = LatentParams::from_latent([a, l, z3]);
        if validate(&lp, &rules).is_accepted() {
            let t = decode(lp.to_latent(), v0, &grid());
            prop_assert!(t.xs.iter().chain(&t.ys).all(|v| v.is_finite()));
            prop_assert!(t.ys.iter().all(|y| y.abs() <= rules.lambda_abs_max));
        }
    }

    #[test]
    fn objective_is_reconstruction_plus_weighted_kl(
        w in 0.0f64..3.0, m in prop::array::uniform3(-3.0f64..3.0), s in prop::array::uniform3(0.01f64..3.0),
        off in -2.0f64..2.0,
    ) {
        let g = grid();
        let pred = decode([0.5, 3.0, 0.0], 30.0, &g);
        let target: Vec<[f64; 2]> = pred.xs.iter().zip(&pred.ys).map(|(x, y)| [x + off, *y]).collect();
        let b = vae_objective(&pred, &target, &LatentGaussian { mean: m, std: s }, w).unwrap();
        prop_assert!(b.kl >= 0.0 && b.reconstruction >= 0.0);
        prop_assert!((b.total - (b.reconstruction + w * b.kl)).abs() <= 1e-12 * b.total.max(1.0));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn canonical_round_trip(count in 1usize..12, seed in any::<u64>(), noise in 0.0f64..0.2) {
        let ds = generate_synthetic(&GeneratorConfig { count, seed, noise_sigma: noise, ..Default::default() }, grid()).unwrap();
        let mut buf = Vec::new();
        write_canonical(&ds, &mut buf).unwrap();
        let back = read_canonical(buf.as_slice(), Some(grid())).unwrap();
        prop_assert_eq!(back.scenarios, ds.scenarios);
    }

    #[test]
    fn split_is_disjoint_complete_and_reproducible(count in 2usize..200, seed in any::<u64>(), frac in 0.05f64..0.95) {
        let mut ds = generate_synthetic(&GeneratorConfig { count, seed: 1, ..Default::default() }, grid()).unwrap();
        ds.split_seed = seed;
        let (a, b) = split_dataset(&ds, frac).unwrap();
        let (a2, b2) = split_dataset(&ds, frac).unwrap();
        prop_assert_eq!(&a.scenarios, &a2.scenarios);
        prop_assert_eq!(&b.scenarios, &b2.scenarios);
        let mut ids: Vec<&str> = a.scenarios.iter().chain(&b.scenarios).map(|s| s.id.as_str()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), count);
    }

    #[test]
    fn descriptive_prediction_is_decode_of_its_latent(seed in any::<u64>(), data_seed in any::<u64>()) {
        let g = grid();
        let ds = generate_synthetic(&GeneratorConfig { count: 3, seed: data_seed, noise_sigma: 0.05, ..Default::default() }, g).unwrap();
        for kind in [ModelKind::Dvae, ModelKind::Deae] {
            let m = Model::new(kind, g, Architecture::default(), seed).unwrap();
            for s in &ds.scenarios {
                let p = m.predict(s, PredictMode::Eval).unwrap();
                let again: Trajectory = decode(p.latent.unwrap().to_latent(), s.v0()[0], &g);
                prop_assert_eq!(&p.trajectory, &again);
                prop_assert_eq!(p.latent.unwrap().stretch > 0.0, true);
                if let Some(gs) = p.gaussian {
                    prop_assert!(gs.std.iter().all(|v| *v > 0.0 && v.is_finite()));
                }
                prop_assert_eq!(m.predict(s, PredictMode::Eval).unwrap(), p);
            }
        }
    }
}
