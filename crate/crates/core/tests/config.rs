use feeder_core::config::{validate_config, ExperimentConfig, FineTuneMode, LossKind, PeftMethod};
use feeder_core::ingest::IdSet;
use proptest::prelude::*;

fn arb_config() -> impl Strategy<Value = ExperimentConfig> {
    (
        (-10.0..-0.1f64, 0.1..10.0f64, 0.0..0.99f64, 1.0..30.0f64),
        (0.0..1.0f64, 0.0..1.0f64, 0.0..50.0f64),
        (1u32..40, 1u32..40, 1u32..40),
        proptest::collection::vec(0u64..100, 1..6),
        (1usize..16, 1usize..10, proptest::bool::ANY),
        "[a-z][a-z0-9_-]{0,12}",
    )
        .prop_map(|(bat, cost, ids, seeds, train, name)| {
            let mut c = ExperimentConfig::default();
            c.name = name;
            c.battery.p_min = bat.0;
            c.battery.p_max = bat.1;
            c.battery.mu = bat.2;
            c.battery.e_max = bat.3;
            c.battery.e_init = bat.3 / 3.0;
            c.cost.cq_plus = cost.0;
            c.cost.cl_minus = cost.1 / 4.0;
            c.cost.alpha = cost.2;
            c.split.finetune_buildings = IdSet::range(1, ids.0);
            c.split.surrogate_val_buildings = IdSet::range(ids.0 + 1, ids.0 + ids.1);
            c.split.eval_buildings = IdSet::from_ranges([(ids.0 + ids.1 + 1, ids.0 + ids.1 + ids.2), (500, 501)]);
            c.experiment.seeds = seeds;
            c.adapter.rank = train.0;
            c.finetune.epochs = train.1;
            if train.2 {
                c.experiment.modes = vec![FineTuneMode::Global];
                c.experiment.losses = vec![LossKind::Mse, LossKind::Surrogate];
                c.experiment.pefts = vec![PeftMethod::Dora];
            }
            c
        })
}

proptest! {
    #[test]
    fn toml_round_trip(cfg in arb_config()) {
        let text = cfg.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        prop_assert_eq!(back, cfg);
    }
}

#[test]
fn default_round_trip_is_valid() {
    let cfg = ExperimentConfig::default();
    let back = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
    assert_eq!(back, cfg);
    assert!(validate_config(&back).is_empty());
}

#[test]
fn overlapping_buildings_and_bad_model_shapes() {
    let mut cfg = ExperimentConfig::default();
    cfg.split.eval_buildings = "45-60".parse().unwrap();
    cfg.forecaster.patch_size = 5;
    cfg.forecaster.n_heads = 3;
    cfg.adapter.rank = 64;
    cfg.cost.cl_plus = 0.1;
    cfg.experiment.seeds.clear();
    let fields: Vec<String> = validate_config(&cfg).into_iter().map(|v| v.field).collect();
    for f in [
        "split",
        "forecaster.patch_size",
        "forecaster.n_heads",
        "adapter.rank",
        "cost.cl_plus",
        "experiment.seeds",
    ] {
        assert!(fields.iter().any(|x| x == f), "missing {f} in {fields:?}");
    }
}

#[test]
fn missing_data_path_is_reported() {
    let mut cfg = ExperimentConfig::default();
    cfg.data.path = Some("/nonexistent/ausgrid.csv".into());
    let v = validate_config(&cfg);
    assert_eq!(v.len(), 1);
    assert_eq!(v[0].field, "data.path");
}
