//! Property tests for the load-bearing invariants: projection geometry,
//! parser stability, and checkpoint codec robustness.

use proptest::prelude::*;

use pilotnet::checkpoint;
use pilotnet::config::{parse_config, parse_f64_list, Overrides, Settings};
use pilotnet::mimo::SystemConfig;
use pilotnet::pilot::project_onto_ball;
use pilotnet::trainer::{JointModel, PilotInit, TrainConfig};

fn finite_vec(max_len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1e6f64..1e6, 1..=max_len)
}

proptest! {
    #[test]
    fn projection_is_feasible_idempotent_and_radial(
        x in finite_vec(24),
        budget in 1e-6f64..1e3,
    ) {
        let mut u = x.clone();
        project_onto_ball(&mut u, budget);

        let energy: f64 = u.iter().map(|v| v * v).sum();
        prop_assert!(energy <= budget, "projected energy {energy} over budget {budget}");

        let mut again = u.clone();
        project_onto_ball(&mut again, budget);
        prop_assert_eq!(&again, &u, "second projection moved the point");

        let input_energy: f64 = x.iter().map(|v| v * v).sum();
        if input_energy <= budget {
            prop_assert_eq!(&u, &x, "interior point was altered");
        } else if input_energy > 0.0 {
            // Exterior points only shrink along their own direction.
            let scale = (budget / input_energy).sqrt();
            for (a, b) in u.iter().zip(&x) {
                prop_assert!((a - b * scale).abs() <= 1e-12 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn float_lists_round_trip_through_text(xs in finite_vec(12)) {
        let text = xs
            .iter()
            .map(|x| format!("{x}"))
            .collect::<Vec<_>>()
            .join(",");
        let parsed = parse_f64_list(&text).unwrap();
        prop_assert_eq!(parsed, xs);
    }

    #[test]
    fn config_parse_ignores_layout_noise(
        pad in prop::collection::vec(0usize..4, 8),
        comment in "[ a-z0-9]{0,12}",
    ) {
        let base = "[system]\nusers = 2\nuser_antennas = 2,3\npilot_length = 4\n[train]\nepochs = 3\nseed = 11\n";
        let mut noisy = String::new();
        for (i, line) in base.lines().enumerate() {
            let spaces = " ".repeat(pad[i % pad.len()]);
            noisy.push_str(&spaces);
            noisy.push_str(line);
            noisy.push('\n');
            if i % 3 == 0 {
                noisy.push_str(&format!("#{comment}\n"));
            }
            if i % 4 == 1 {
                noisy.push('\n');
            }
        }
        let clean = parse_config(base).unwrap();
        let parsed = parse_config(&noisy).unwrap();
        prop_assert_eq!(parsed, clean);
    }

    #[test]
    fn resolved_settings_render_a_stable_canonical_form(
        seed in any::<u64>(),
        snr in -5.0f64..35.0,
        strict in any::<bool>(),
    ) {
        let overrides = Overrides {
            seed: Some(seed),
            snr_list: Some(vec![snr]),
            strict_paper: strict,
        };
        let a = Settings::resolve(None, &overrides).unwrap();
        let b = Settings::resolve(None, &overrides).unwrap();
        prop_assert_eq!(a.canonical_string(), b.canonical_string());
        prop_assert!(!a.canonical_string().contains("time"));
    }
}

fn tiny_model_strategy() -> impl Strategy<Value = (SystemConfig, TrainConfig)> {
    (
        1usize..=3,
        1usize..=3,
        1usize..=4,
        1usize..=8,
        0usize..=2,
        any::<u64>(),
    )
        .prop_flat_map(|(users, bs, l, width, layers, seed)| {
            (
                prop::collection::vec(1usize..=3, users),
                prop::collection::vec(0.1f64..5.0, users),
                Just((users, bs, l, width, layers, seed)),
            )
        })
        .prop_map(|(antennas, budgets, (users, bs, l, width, layers, seed))| {
            let system = SystemConfig::new(users, bs, antennas, l, budgets, 0.01).unwrap();
            let cfg = TrainConfig {
                hidden_width: width,
                hidden_layers: layers,
                seed,
                pilot_init: PilotInit::Gaussian,
                ..TrainConfig::default()
            };
            (system, cfg)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn checkpoints_round_trip_bit_for_bit((system, cfg) in tiny_model_strategy()) {
        let model = JointModel::new(&system, &cfg).unwrap();
        let bytes = checkpoint::encode(&model, cfg.seed);
        let decoded = checkpoint::decode(&bytes).unwrap();
        let rebuilt = decoded.into_model().unwrap();
        let again = checkpoint::encode(&rebuilt, cfg.seed);
        prop_assert_eq!(again, bytes);
    }

    #[test]
    fn checkpoint_decoder_survives_mutation(
        (system, cfg) in tiny_model_strategy(),
        flips in prop::collection::vec((any::<prop::sample::Index>(), any::<u8>()), 1..8),
    ) {
        let model = JointModel::new(&system, &cfg).unwrap();
        let mut bytes = checkpoint::encode(&model, cfg.seed);
        for (index, value) in flips {
            let at = index.index(bytes.len());
            bytes[at] ^= value;
        }
        // Any outcome is fine as long as it does not panic.
        let _ = checkpoint::decode(&bytes);
    }

    #[test]
    fn checkpoint_decoder_survives_garbage(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = checkpoint::decode(&bytes);
    }
}
