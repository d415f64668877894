use fairflow::dataset::{FeatureVector, Normalizer, DEST_BLOCK, FEATURE_COUNT, ORIGIN_BLOCK};
use fairflow::model::{param_count, Checkpoint, Model, ModelConfig};
use fairflow::numcore::{Graph, Mode};
use fairflow::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn config(hidden: usize, depth: usize) -> ModelConfig {
    ModelConfig {
        hidden,
        depth,
        ..ModelConfig::default()
    }
}

fn features(rng: &mut ChaCha8Rng, n: usize) -> Vec<FeatureVector> {
    (0..n)
        .map(|k| {
            let mut v = [0.0; FEATURE_COUNT];
            for x in v.iter_mut().take(41) {
                *x = rng.random_range(-2.0..2.0);
            }
            v[41 + k % 3] = 1.0;
            FeatureVector(v)
        })
        .collect()
}

/// A model whose batch-norm running statistics are not the identity.
fn warmed(cfg: ModelConfig, seed: u64) -> Model {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = Model::init(cfg, 3.0, &mut rng).unwrap();
    let batch = features(&mut rng, 32);
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let out = model.forward(&mut g, &vars, &batch, Mode::Train, &mut rng).unwrap();
    model.update_running(&out.bn_stats);
    model
}

fn swap_blocks(f: &FeatureVector) -> FeatureVector {
    let mut v = f.0;
    v[ORIGIN_BLOCK].copy_from_slice(&f.0[DEST_BLOCK]);
    v[DEST_BLOCK].copy_from_slice(&f.0[ORIGIN_BLOCK]);
    FeatureVector(v)
}

#[test]
fn tiny_model_count_matches_hand_enumeration() {
    // origin 20·1+1 weights/bias + 2 bn, dest the same, communal 4+1+2,
    // trunk 2·2+2 + 4 bn, two heads of 2+1
    let hand = (20 + 1 + 2) * 2 + (4 + 1 + 2) + (4 + 2 + 4) + 2 * (2 + 1);
    assert_eq!(hand, 69);
    assert_eq!(param_count(&config(1, 1)), hand);
}

#[test]
fn closed_form_count_matches_allocation() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for cfg in [ModelConfig::default(), config(1, 1), config(7, 2)] {
        let model = Model::init(cfg.clone(), 1.0, &mut rng).unwrap();
        assert_eq!(model.params.count(), param_count(&cfg));
    }
    let separate = ModelConfig {
        separate_heads_networks: true,
        ..config(8, 2)
    };
    let model = Model::init(separate.clone(), 1.0, &mut rng).unwrap();
    assert_eq!(model.params.count(), param_count(&separate));
    assert!(param_count(&config(32, 3)) > 2 * param_count(&config(16, 3)));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    for cfg in [
        config(0, 1),
        config(4, 0),
        ModelConfig {
            dropout: 1.0,
            ..config(4, 1)
        },
    ] {
        assert!(matches!(Model::init(cfg, 1.0, &mut rng), Err(Error::Config(_))));
    }
}

#[test]
fn outputs_stay_in_range_and_eval_is_batch_independent() {
    let model = warmed(ModelConfig::default(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let batch = features(&mut rng, 20);
    let all = model.predict(&batch).unwrap();
    for p in &all {
        assert!(p.presence > 0.0 && p.presence < 1.0);
        assert!(p.magnitude >= 0.0 && p.flow >= 0.0 && p.flow <= p.magnitude);
        assert!(p.flow == 0.0 || p.flow == p.magnitude);
    }
    let single: Vec<_> = batch
        .iter()
        .map(|f| model.predict(std::slice::from_ref(f)).unwrap()[0])
        .collect();
    assert_eq!(all, single);
    let same = model.predict(&vec![batch[0]; 4]).unwrap();
    assert!(same.iter().all(|p| *p == same[0]));
}

#[test]
fn zero_presence_zeroes_the_flow() {
    let mut model = warmed(config(8, 1), 3);
    let cls_bias = model.params.tensors.len() - 3;
    model.params.tensors[cls_bias].data_mut()[0] = -1e4;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let batch = features(&mut rng, 10);
    for p in model.predict(&batch).unwrap() {
        assert_eq!(p.presence, 0.0);
        assert!(p.magnitude > 0.0);
        assert_eq!(p.flow, 0.0);
    }
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let out = model.forward(&mut g, &vars, &batch, Mode::Train, &mut rng).unwrap();
    assert!(g.value(out.soft_flow).data().iter().all(|&v| v == 0.0));
}

#[test]
fn flows_are_directed_unless_blocks_are_tied() {
    let mut model = warmed(config(8, 2), 5);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let batch = features(&mut rng, 8);
    let swapped: Vec<_> = batch.iter().map(swap_blocks).collect();
    let (a, b) = (model.predict(&batch).unwrap(), model.predict(&swapped).unwrap());
    assert!(a.iter().zip(&b).all(|(x, y)| x.magnitude != y.magnitude));

    model.tie_origin_dest();
    let (a, b) = (model.predict(&batch).unwrap(), model.predict(&swapped).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert!((x.magnitude - y.magnitude).abs() <= 1e-12 * x.magnitude.max(1.0));
        assert!((x.presence - y.presence).abs() <= 1e-12);
    }
}

#[test]
fn every_parameter_receives_gradient() {
    let cfg = ModelConfig {
        dropout: 0.0,
        ..config(6, 2)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let model = Model::init(cfg, 2.0, &mut rng).unwrap();
    let batch = features(&mut rng, 16);
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let out = model.forward(&mut g, &vars, &batch, Mode::Train, &mut rng).unwrap();
    let targets: Vec<f64> = (0..16).map(|k| if k % 2 == 0 { 0.0 } else { k as f64 }).collect();
    let bce = g
        .bce_with_logits(
            out.logits,
            &targets
                .iter()
                .map(|&t| f64::from(u8::from(t > 0.0)))
                .collect::<Vec<_>>(),
        )
        .unwrap();
    let y = g.leaf(fairflow::numcore::Tensor::matrix(16, 1, targets).unwrap());
    let d = g.sub(out.soft_flow, y).unwrap();
    let a = g.abs(d);
    let mae = g.mean(a);
    let total = g.add(bce, mae).unwrap();
    let grads = g.backward(total).unwrap();
    for (k, &v) in vars.iter().enumerate() {
        let grad = grads.get(v);
        assert!(grad.data().iter().any(|&x| x != 0.0), "tensor {k} has no gradient");
    }
}

#[test]
fn wrong_feature_batch_is_an_error() {
    let model = warmed(config(4, 1), 8);
    assert!(model.predict(&[]).is_ok());
    let mut g = Graph::new();
    let vars = model.bind(&mut g);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(model
        .forward(&mut g, &vars[1..], &features(&mut rng, 2), Mode::Eval, &mut rng)
        .is_err());
}

fn normalizer(rng: &mut ChaCha8Rng) -> Normalizer {
    Normalizer::fit(&features(rng, 30)).unwrap()
}

#[test]
fn checkpoint_round_trip_is_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let model = warmed(ModelConfig::default(), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let norm = normalizer(&mut rng);
    Checkpoint::new(&model, &norm, 42, 0.3).save(&path).unwrap();
    let (ck, loaded) = Checkpoint::load_for_inference(&path, Some(&model.config)).unwrap();
    assert_eq!(ck.seed, 42);
    assert_eq!(ck.zeta, 0.3);
    assert_eq!(ck.normalizer, norm);
    assert_eq!(loaded, model);
    let batch = features(&mut rng, 12);
    let (a, b) = (model.predict(&batch).unwrap(), loaded.predict(&batch).unwrap());
    for (x, y) in a.iter().zip(&b) {
        assert_eq!(x.presence.to_bits(), y.presence.to_bits());
        assert_eq!(x.magnitude.to_bits(), y.magnitude.to_bits());
    }
}

#[test]
fn corrupt_or_mismatched_checkpoints_are_refused() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.json");
    let model = warmed(config(64, 1), 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    Checkpoint::new(&model, &normalizer(&mut rng), 1, 0.0)
        .save(&path)
        .unwrap();

    let err = Checkpoint::load_for_inference(&path, Some(&config(32, 1))).unwrap_err();
    assert!(err.to_string().contains("config mismatch"), "{err}");

    let text = std::fs::read_to_string(&path).unwrap();
    let truncated = dir.path().join("truncated.json");
    std::fs::write(&truncated, &text[..text.len() / 2]).unwrap();
    assert!(matches!(Checkpoint::load(&truncated), Err(Error::Checkpoint(_))));

    let mut ck = Checkpoint::load(&path).unwrap();
    ck.feature_fingerprint = "0000".into();
    let stale = dir.path().join("stale.json");
    ck.save(&stale).unwrap();
    let err = Checkpoint::load_for_inference(&stale, None).unwrap_err();
    assert!(err.to_string().contains("fingerprint"), "{err}");

    let mut ck = Checkpoint::load(&path).unwrap();
    ck.params.tensors.pop();
    assert!(matches!(ck.model(), Err(Error::Checkpoint(_))));
}
