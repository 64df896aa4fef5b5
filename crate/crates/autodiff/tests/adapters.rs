use feeder_autodiff::{
    apply_adapter, effective_weight, merge_adapter, AdamW, AdapterMethod, AdapterSpec, AutodiffError,
    Checkpoint, Graph, ParamStore, Tensor,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const LAYERS: [&str; 3] = ["blk.q_proj", "blk.v_proj", "blk.ff"];

fn base(rng: &mut ChaCha8Rng) -> ParamStore {
    let mut p = ParamStore::new();
    for l in LAYERS {
        p.insert(format!("{l}.weight"), Tensor::uniform(12, 12, 0.5, rng));
        p.insert(format!("{l}.bias"), Tensor::uniform(1, 12, 0.5, rng));
    }
    p
}

fn spec(method: AdapterMethod) -> AdapterSpec {
    AdapterSpec {
        rank: 4,
        targets: vec!["q_proj".into(), "v_proj".into()],
        ..AdapterSpec::new(method)
    }
}

fn layer_names() -> Vec<String> {
    LAYERS.iter().map(|s| s.to_string()).collect()
}

/// Small model: x -> q -> relu -> v -> ff.
fn forward(base: &ParamStore, ad: Option<&feeder_autodiff::Adapters>, x: &Tensor) -> (Graph, feeder_autodiff::Var) {
    let mut g = Graph::new();
    let mut h = g.constant(x.clone());
    for (i, l) in LAYERS.iter().enumerate() {
        let w = effective_weight(&mut g, base, ad, l, false).unwrap();
        let b = g.param(&format!("{l}.bias"), base.get(&format!("{l}.bias")).unwrap(), false);
        h = g.matmul(h, w).unwrap();
        h = g.add(h, b).unwrap();
        if i == 0 {
            h = g.relu(h);
        }
    }
    (g, h)
}

#[test]
fn fresh_adapters_leave_outputs_unchanged() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let base = base(&mut rng);
    let x = Tensor::uniform(5, 12, 1.0, &mut rng);
    let (g0, y0) = forward(&base, None, &x);
    for method in [AdapterMethod::Lora, AdapterMethod::Dora] {
        let ad = apply_adapter(&base, &layer_names(), &spec(method), &mut rng).unwrap();
        let (g1, y1) = forward(&base, Some(&ad), &x);
        assert!(g0.value(y0).max_abs_diff(g1.value(y1)) <= 1e-12);
        let merged = merge_adapter(&base, &ad).unwrap();
        let (g2, y2) = forward(&merged, None, &x);
        assert!(g0.value(y0).max_abs_diff(g2.value(y2)) <= 1e-12);
    }
}

#[test]
fn trained_adapters_merge_to_equivalent_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let base = base(&mut rng);
    let x = Tensor::uniform(7, 12, 1.0, &mut rng);
    for method in [AdapterMethod::Lora, AdapterMethod::Dora] {
        let mut ad = apply_adapter(&base, &layer_names(), &spec(method), &mut rng).unwrap();
        // Perturb every factor as training would.
        let names: Vec<String> = ad.params.names().cloned().collect();
        for n in names {
            let t = ad.params.get_mut(&n).unwrap();
            let noise = Tensor::uniform(t.rows(), t.cols(), 0.3, &mut rng);
            t.data_mut().iter_mut().zip(noise.data()).for_each(|(a, b)| *a += b);
        }
        let (g1, y1) = forward(&base, Some(&ad), &x);
        let merged = merge_adapter(&base, &ad).unwrap();
        let (g2, y2) = forward(&merged, None, &x);
        assert!(g1.value(y1).max_abs_diff(g2.value(y2)) <= 1e-6);
        if method == AdapterMethod::Dora {
            for l in &ad.layers {
                let norms = merged.get(&format!("{l}.weight")).unwrap().col_norms();
                let m = ad.params.get(&format!("{l}.dora_m")).unwrap();
                assert!(norms.max_abs_diff(m) <= 1e-9);
            }
        }
    }
}

#[test]
fn dora_adds_one_magnitude_per_output_column() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = base(&mut rng);
    let lora = apply_adapter(&base, &layer_names(), &spec(AdapterMethod::Lora), &mut rng).unwrap();
    let dora = apply_adapter(&base, &layer_names(), &spec(AdapterMethod::Dora), &mut rng).unwrap();
    assert_eq!(lora.layers, vec!["blk.q_proj".to_string(), "blk.v_proj".to_string()]);
    assert_eq!(lora.n_trainable(), 2 * (12 * 4 + 4 * 12));
    assert_eq!(dora.n_trainable() - lora.n_trainable(), 2 * 12);
    for l in &lora.layers {
        assert!(lora.params.get(&format!("{l}.lora_B")).unwrap().data().iter().all(|v| *v == 0.0));
        let bound = 1.0 / 2.0;
        assert!(lora.params.get(&format!("{l}.lora_A")).unwrap().data().iter().all(|v| v.abs() <= bound));
    }
}

#[test]
fn targeting_errors() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let base = base(&mut rng);
    let mut s = spec(AdapterMethod::Lora);
    s.targets.push("k_proj".into());
    match apply_adapter(&base, &layer_names(), &s, &mut rng) {
        Err(AutodiffError::NoMatchingTarget { target, available }) => {
            assert_eq!(target, "k_proj");
            assert_eq!(available.len(), 3);
        }
        other => panic!("unexpected {other:?}"),
    }
    let mut s = spec(AdapterMethod::Lora);
    s.rank = 12;
    assert!(matches!(
        apply_adapter(&base, &layer_names(), &s, &mut rng),
        Err(AutodiffError::RankTooLarge { .. })
    ));
}

#[test]
fn optimizer_updates_only_adapters() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let base = base(&mut rng);
    let before = base.digests();
    let x = Tensor::uniform(6, 12, 1.0, &mut rng);
    let target = Tensor::uniform(6, 12, 1.0, &mut rng);
    for method in [AdapterMethod::Lora, AdapterMethod::Dora] {
        let mut ad = apply_adapter(&base, &layer_names(), &spec(method), &mut rng).unwrap();
        let initial = ad.params.clone();
        let mut opt = AdamW::new(1e-2, 0.01);
        let mut losses = Vec::new();
        for _ in 0..100 {
            let (mut g, y) = forward(&base, Some(&ad), &x);
            let t = g.constant(target.clone());
            let d = g.sub(y, t).unwrap();
            let sq = g.square(d);
            let loss = g.mean(sq);
            losses.push(g.value(loss).data()[0]);
            g.backward(loss).unwrap();
            let grads = g.param_grads();
            assert!(grads.keys().all(|k| ad.params.contains(k)));
            assert_eq!(grads.len(), ad.params.len());
            opt.step(&mut ad.params, &grads).unwrap();
        }
        assert!(losses.last().unwrap() < &losses[0]);
        assert_eq!(base.digests(), before);
        let changed: Vec<&String> = ad
            .params
            .iter()
            .filter(|(n, t)| initial.get(n).unwrap() != *t)
            .map(|(n, _)| n)
            .collect();
        assert_eq!(changed.len(), ad.params.len());
        if method == AdapterMethod::Dora {
            let merged = merge_adapter(&base, &ad).unwrap();
            for l in &ad.layers {
                let norms = merged.get(&format!("{l}.weight")).unwrap().col_norms();
                assert!(norms.max_abs_diff(ad.params.get(&format!("{l}.dora_m")).unwrap()) <= 1e-9);
            }
        }
    }
}

#[test]
fn adamw_first_step_and_edge_cases() {
    let mut p = ParamStore::new();
    p.insert("w", Tensor::row(vec![1.0, -2.0, 0.5]));
    let zero: std::collections::BTreeMap<String, Tensor> = [("w".to_string(), Tensor::zeros(1, 3))].into();
    let mut opt = AdamW::new(1e-4, 0.0);
    opt.step(&mut p, &zero).unwrap();
    assert_eq!(p.get("w").unwrap().data(), &[1.0, -2.0, 0.5]);

    // With bias correction, the first step moves each entry by lr·g/(|g| + eps).
    let g = [0.3, -4.0, 1e-3];
    let grads: std::collections::BTreeMap<String, Tensor> = [("w".to_string(), Tensor::row(g.to_vec()))].into();
    let mut fresh = ParamStore::new();
    fresh.insert("w", Tensor::row(vec![1.0, -2.0, 0.5]));
    let mut opt = AdamW::new(1e-4, 0.01);
    opt.step(&mut fresh, &grads).unwrap();
    for (i, (&x0, &gi)) in [1.0f64, -2.0, 0.5].iter().zip(&g).enumerate() {
        let decayed = x0 - 1e-4 * 0.01 * x0;
        let expected = decayed - 1e-4 * gi / (gi.abs() + 1e-8);
        assert!((fresh.get("w").unwrap().data()[i] - expected).abs() < 1e-15);
    }

    let bad: std::collections::BTreeMap<String, Tensor> = [("w".to_string(), Tensor::row(vec![0.0, f64::NAN, 0.0]))].into();
    let snapshot = fresh.clone();
    assert!(matches!(opt.step(&mut fresh, &bad), Err(AutodiffError::NonFiniteGradient { index: 1, .. })));
    assert_eq!(fresh, snapshot);
}

#[test]
fn checkpoint_round_trip() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let base = base(&mut rng);
    let ad = apply_adapter(&base, &layer_names(), &spec(AdapterMethod::Dora), &mut rng).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let bp = dir.path().join("base.ckpt");
    let ap = dir.path().join("adapter.ckpt");
    Checkpoint::new("toy", serde_json::json!({"layers": 3}), base.clone()).save(&bp).unwrap();
    Checkpoint::from_adapters(&ad, serde_json::Value::Null).save(&ap).unwrap();
    let b = Checkpoint::load(&bp).unwrap();
    assert_eq!(b.tensors, base);
    assert_eq!(b.metadata["layers"], 3);
    let a = Checkpoint::load(&ap).unwrap().into_adapters().unwrap();
    assert_eq!(a, ad);
    assert!(Checkpoint::load(&bp).unwrap().into_adapters().is_err());
    std::fs::write(&bp, b"garbage!garbage!").unwrap();
    assert!(Checkpoint::load(&bp).is_err());
}
