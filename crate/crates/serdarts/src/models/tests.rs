use super::*;
use crate::cell::derive_genotype;
use crate::optim::Example;

fn tiny_network_cfg() -> NetworkConfig {
    NetworkConfig { cells: 2, init_channels: 8, input_hw: (32, 32), ..Default::default() }
}

fn tiny_head() -> HeadSpec {
    HeadSpec { lstm_units: 8, dense: vec![16, NUM_CLASSES], ..Default::default() }
}

fn tiny_genotype(seed: u64) -> Genotype {
    let mut rng = RngState::new(seed);
    let net: Network<f32> = Network::search(tiny_network_cfg(), &mut rng).unwrap();
    derive_genotype(net.alphas().unwrap()).unwrap()
}

#[test]
fn darts_model_shape_chase_at_paper_scale() {
    // C=4, init 16, 128x128 input: CNN output 64ch x 32x32, 32 steps of
    // 2048 features, logits Bx4
    let cfg = NetworkConfig::default();
    assert_eq!(cfg.feature_shape((128, 128)), (64, 32, 32));
    let mut rng = RngState::new(0);
    let g = {
        let net: Network<f32> = Network::search(cfg.clone(), &mut rng).unwrap();
        derive_genotype(net.alphas().unwrap()).unwrap()
    };
    let model: ModelBundle<f32> =
        build_darts_model(&g, &cfg, &HeadSpec::default(), &mut rng).unwrap();
    let x = Tensor::<f32>::zeros(&[2, 1, 128, 128]);
    let logits = model.logits(&x, &mut ForwardCtx::Eval).unwrap();
    assert_eq!(logits.shape(), &[2, NUM_CLASSES]);
}

#[test]
fn logits_softmax_rows_sum_to_one() {
    let mut rng = RngState::new(1);
    let g = tiny_genotype(2);
    let model: ModelBundle<f32> =
        build_darts_model(&g, &tiny_network_cfg(), &tiny_head(), &mut rng).unwrap();
    let x = Tensor::<f32>::randn(&mut rng, &[3, 1, 32, 32], 1.0);
    let (_, probs) = predict(&model, &x).unwrap();
    for row in probs.to_vec().chunks(NUM_CLASSES) {
        let s: f32 = row.iter().sum();
        assert!((s - 1.0).abs() < 1e-6);
    }
}

#[test]
fn param_count_is_stable_across_builds() {
    let g = tiny_genotype(3);
    let build = || {
        let mut rng = RngState::new(11);
        let m: ModelBundle<f32> =
            build_darts_model(&g, &tiny_network_cfg(), &tiny_head(), &mut rng).unwrap();
        m.param_count()
    };
    assert_eq!(build(), build());
    assert!(build() > 0);
}

#[test]
fn cnn_baseline_shapes() {
    let mut rng = RngState::new(4);
    let spec = BaselineSpec::default();
    let model: ModelBundle<f32> = build_cnn_baseline(&spec, &mut rng).unwrap();
    // conv 128 -> 66 -> pool 33
    let conv_shape = match &model.model {
        ModelImpl::Cnn(m) => m.conv.output_shape(&[1, 1, 128, 128]).unwrap(),
        _ => unreachable!(),
    };
    assert_eq!(conv_shape, vec![1, spec.conv_channels, 66, 66]);
    let x = Tensor::<f32>::randn(&mut rng, &[2, 1, 128, 128], 1.0);
    let logits = model.logits(&x, &mut ForwardCtx::Eval).unwrap();
    assert_eq!(logits.shape(), &[2, NUM_CLASSES]);
}

#[test]
fn eval_mode_dropout_is_identity() {
    let mut rng = RngState::new(5);
    let model: ModelBundle<f32> = build_cnn_baseline(&BaselineSpec::default(), &mut rng).unwrap();
    let x = Tensor::<f32>::randn(&mut rng, &[1, 1, 128, 128], 1.0);
    let a = model.logits(&x, &mut ForwardCtx::Eval).unwrap().to_vec();
    let b = model.logits(&x, &mut ForwardCtx::Eval).unwrap().to_vec();
    assert_eq!(a, b);
}

#[test]
fn cnn_lstm_baseline_feature_widths() {
    let mut rng = RngState::new(6);
    let spec = BaselineSpec::default();
    let model: ModelBundle<f32> = build_cnn_lstm_baseline(false, &spec, &mut rng).unwrap();
    match &model.model {
        ModelImpl::CnnLstm(m) => {
            // 33 steps of 33*channels features; bidirectional 128 -> 256
            assert_eq!(m.lstm.input_size, spec.conv_channels * 33);
            assert_eq!(m.lstm.output_features(), 256);
        }
        _ => unreachable!(),
    }
    let x = Tensor::<f32>::randn(&mut rng, &[1, 1, 128, 128], 1.0);
    assert_eq!(model.logits(&x, &mut ForwardCtx::Eval).unwrap().shape(), &[1, NUM_CLASSES]);
}

#[test]
fn attention_changes_only_the_pooling_path() {
    let spec = BaselineSpec::default();
    let count = |attention: bool| {
        let mut rng = RngState::new(7);
        let m: ModelBundle<f32> = build_cnn_lstm_baseline(attention, &spec, &mut rng).unwrap();
        m.param_count()
    };
    let without = count(false);
    let with = count(true);
    // additive attention over H features: W is HxH plus the Hx1 scorer
    let h = 256;
    assert_eq!(with - without, h * h + h);
}

#[test]
fn predict_tie_breaks_to_lowest_class() {
    let logits = Tensor::<f32>::from_vec(&[2, 4], vec![0.0, 0.0, 0.0, 10.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
    let probs = softmax(&logits, 1).unwrap();
    let classes = probs.argmax_rows().unwrap();
    assert_eq!(classes, vec![3, 0]);
    assert!(probs.to_vec()[3] > 0.999);
}

#[test]
fn every_model_maps_batches_to_finite_logits() {
    let mut rng = RngState::new(8);
    let spec = BaselineSpec { conv_channels: 2, dense: vec![8, NUM_CLASSES], ..Default::default() };
    let models: Vec<ModelBundle<f32>> = vec![
        build_cnn_baseline(&spec, &mut rng).unwrap(),
        build_cnn_lstm_baseline(false, &BaselineSpec { lstm_units: 4, ..spec.clone() }, &mut rng).unwrap(),
        build_cnn_lstm_baseline(true, &BaselineSpec { lstm_units: 4, ..spec.clone() }, &mut rng).unwrap(),
    ];
    for model in &models {
        for b in [1usize, 7] {
            let x = Tensor::<f32>::randn(&mut rng, &[b, 1, 128, 128], 1.0);
            let logits = model.logits(&x, &mut ForwardCtx::Eval).unwrap();
            assert_eq!(logits.shape(), &[b, NUM_CLASSES]);
            assert!(logits.to_vec().iter().all(|v| v.is_finite()));
        }
    }
}

#[test]
fn gradient_reaches_every_trainable_parameter() {
    use crate::tensor::ops::cross_entropy;
    let mut rng = RngState::new(9);
    let g = tiny_genotype(10);
    let model: ModelBundle<f64> =
        build_darts_model(&g, &tiny_network_cfg(), &tiny_head(), &mut rng).unwrap();
    let x = Tensor::<f64>::randn(&mut rng, &[2, 1, 32, 32], 1.0).tracked();
    let mut ctx = ForwardCtx::Train(&mut rng);
    let logits = model.logits(&x, &mut ctx).unwrap();
    let loss = cross_entropy(&logits, &[0, 2]).unwrap();
    loss.backward().unwrap();
    let params = model.weight_params();
    assert!(!params.is_empty());
    for p in &params {
        let grad = p.grad();
        assert!(grad.is_some(), "parameter without gradient buffer");
        assert!(
            grad.unwrap().iter().any(|v| *v != 0.0),
            "parameter with identically zero gradient"
        );
    }
}

#[test]
fn checkpoint_roundtrip_restores_exact_state() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let g = tiny_genotype(12);
    let mut rng = RngState::new(13);
    let model: ModelBundle<f32> =
        build_darts_model(&g, &tiny_network_cfg(), &tiny_head(), &mut rng).unwrap();
    let header = CheckpointHeader {
        fingerprint: "fp".into(),
        model: model.kind.name().into(),
        genotype: model.genotype.clone(),
        fold: Some(0),
        dataset_fingerprint: Some("ds".into()),
        params: Vec::new(),
    };
    save_checkpoint(&path, header, &model.named_state()).unwrap();

    let mut rng2 = RngState::new(99); // different init
    let restored: ModelBundle<f32> =
        build_darts_model(&g, &tiny_network_cfg(), &tiny_head(), &mut rng2).unwrap();
    let (header, blobs) = load_checkpoint(&path).unwrap();
    assert_eq!(header.fingerprint, "fp");
    assert_eq!(header.model, "darts");
    apply_state(&restored.named_state(), &blobs).unwrap();

    let x = Tensor::<f32>::randn(&mut rng, &[1, 1, 32, 32], 1.0);
    let a = model.logits(&x, &mut ForwardCtx::Eval).unwrap().to_vec();
    let b = restored.logits(&x, &mut ForwardCtx::Eval).unwrap().to_vec();
    assert_eq!(a, b);
}

#[test]
fn models_work_as_examples_pipeline() {
    // end to end through the optim Example/batch machinery
    use crate::optim::{evaluate, make_batch};
    let mut rng = RngState::new(14);
    let model: ModelBundle<f32> = build_cnn_baseline(
        &BaselineSpec { conv_channels: 2, dense: vec![8, NUM_CLASSES], ..Default::default() },
        &mut rng,
    )
    .unwrap();
    let examples: Vec<Example<f32>> = (0..4)
        .map(|i| Example {
            features: vec![0.1 * i as f32; 128 * 128],
            shape: vec![1, 128, 128],
            label: i % NUM_CLASSES,
        })
        .collect();
    let refs: Vec<&Example<f32>> = examples.iter().collect();
    let (x, labels) = make_batch(&refs).unwrap();
    assert_eq!(x.shape(), &[4, 1, 128, 128]);
    assert_eq!(labels, vec![0, 1, 2, 3]);
    let m = evaluate(&model, &examples, 2).unwrap();
    assert!(m.loss.is_finite());
}
