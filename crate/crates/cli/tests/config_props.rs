use proptest::prelude::*;
use serde_json::{json, Value};

use chemostat_kit::config::from_value;

fn density() -> impl Strategy<Value = Value> {
    prop_oneof![
        Just(json!({"density": "d"})),
        Just(json!({"density": "d'"})),
        (1e-5f64..4e-4, 4e-4f64..9e-4, 0.1f64..5.0).prop_map(|(a, b, h)| json!({
            "density": "custom",
            "custom_density": [[a, 0.0], [(a + b) / 2.0, h], [b, 0.0]],
        })),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    /// Emitting the effective configuration and reading it back is the identity.
    #[test]
    fn effective_config_round_trips(
        d in 1e-3f64..2.0, v in 1e-3f64..50.0, start in prop_oneof![
            (1u64..100_000).prop_map(|n| json!({"n0": n})),
            (1e-3f64..50.0).prop_map(|b| json!({"initial_biomass": b})),
        ],
        dens in density(), p_beta in 1.0f64..20.0, s0 in 0.0f64..30.0, seed in any::<u64>(),
        t_max in 1.0f64..1000.0, cells in 1u64..20_000, weight in prop_oneof![Just(json!("range")), (0.0f64..100.0).prop_map(|w| json!(w))],
        bandwidth in prop_oneof![Just(json!("silverman")), (1e-3f64..10.0).prop_map(|h| json!(h))],
        workers in prop::option::of(1u64..64), ode in prop::option::of((0.05f64..2.0, 0.1f64..100.0)),
    ) {
        let mut doc = json!({"D": d, "V": v, "params": {"p_beta": p_beta, "s0": s0}, "seed": seed,
                             "t_max": t_max, "snapshot_times": [0.0, t_max / 3.0, t_max], "I": cells,
                             "fit": {"weight": weight}, "kde_bandwidth": bandwidth});
        for part in [start, dens] {
            for (k, val) in part.as_object().unwrap() {
                doc[k] = val.clone();
            }
        }
        if let Some(w) = workers {
            doc["workers"] = json!(w);
        }
        if let Some((mu, ks)) = ode {
            doc["ode"] = json!({"mu_max": mu, "K_s": ks});
        }
        let cfg = from_value(&doc).unwrap();
        let emitted = cfg.to_value();
        let text = serde_json::to_string(&emitted).unwrap();
        let back = from_value(&serde_json::from_str(&text).unwrap()).unwrap();
        prop_assert_eq!(&back, &cfg);
        prop_assert_eq!(back.to_value(), emitted);
    }

    /// An unknown key anywhere is reported by name, next to any other problem.
    #[test]
    fn unknown_keys_are_rejected(key in "[a-z]{3,8}_x", nested in any::<bool>()) {
        let mut doc = json!({"D": 0.2, "V": 1.0, "n0": 10});
        let name = if nested {
            doc["params"] = json!({ key.clone(): 1 });
            format!("params.{key}")
        } else {
            doc[&key] = json!(1);
            key.clone()
        };
        let err = from_value(&doc).unwrap_err();
        prop_assert_eq!(err.0, vec![format!("unknown key \"{name}\"")]);
    }
}
