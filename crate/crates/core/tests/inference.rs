use prism_core::selftest::{oracle, random_tensor};
use prism_core::{
    conv2d, maxpool2d, toy_model, Conv2d, LayerSpec, Model, PrismError, PrismOptions,
    RecordingSession, Shape4, Tensor4,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn toy_model_matches_oracle() {
    let model = toy_model(21);
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let input = random_tensor(&mut rng, Shape4::new(2, 3, 12, 12), 0.0, 1.0);
    let (out, recorded) = model.forward_recorded(&input).unwrap();
    let (ref_out, ref_recorded) = oracle::forward(&model, &input);
    assert!(ref_out.max_abs_diff(&out) < 1e-5);
    assert_eq!(recorded.len(), 2);
    assert_eq!(recorded[0].1.shape(), Shape4::new(2, 6, 12, 12));
    assert_eq!(recorded[1].1.shape(), Shape4::new(2, 8, 6, 6));
    for ((_, got), want) in recorded.iter().zip(&ref_recorded) {
        assert!(want.max_abs_diff(got) < 1e-5);
    }
}

#[test]
fn padded_conv_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let input = random_tensor(&mut rng, Shape4::new(2, 3, 5, 5), -1.0, 1.0);
    let weights = random_tensor(&mut rng, Shape4::new(4, 3, 3, 3), -1.0, 1.0);
    let bias = vec![0.1, -0.2, 0.3, 0.0];
    let layer = Conv2d::new(weights.clone(), bias.clone(), 1, 1).unwrap();
    let got = conv2d(&input, &layer).unwrap();
    assert_eq!(got.shape(), Shape4::new(2, 4, 5, 5));
    let want = oracle::conv2d(
        &oracle::RefTensor::from_tensor(&input),
        &oracle::RefTensor::from_tensor(&weights),
        &bias.iter().map(|&b| b as f64).collect::<Vec<_>>(),
        1,
        1,
    );
    assert!(want.max_abs_diff(&got) < 1e-5);
}

#[test]
fn strided_conv_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let input = random_tensor(&mut rng, Shape4::new(1, 2, 9, 7), -1.0, 1.0);
    let weights = random_tensor(&mut rng, Shape4::new(3, 2, 3, 2), -1.0, 1.0);
    let layer = Conv2d::new(weights.clone(), vec![0.0; 3], 2, 1).unwrap();
    let got = conv2d(&input, &layer).unwrap();
    let want = oracle::conv2d(
        &oracle::RefTensor::from_tensor(&input),
        &oracle::RefTensor::from_tensor(&weights),
        &[0.0; 3],
        2,
        1,
    );
    assert_eq!(want.dims, got.shape().to_vec()[..]);
    assert!(want.max_abs_diff(&got) < 1e-5);
}

#[test]
fn maxpool_matches_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    let input = random_tensor(&mut rng, Shape4::new(2, 3, 7, 6), -1.0, 1.0);
    for (window, stride) in [(2, 2), (3, 1), (3, 2)] {
        let got = maxpool2d(&input, window, stride).unwrap();
        let want = oracle::maxpool(&oracle::RefTensor::from_tensor(&input), window, stride);
        assert_eq!(
            want.max_abs_diff(&got),
            0.0,
            "window {window} stride {stride}"
        );
    }
}

#[test]
fn channel_mismatch_reports_the_layer() {
    let model = toy_model(1);
    let input = Tensor4::zeros(Shape4::new(1, 4, 8, 8));
    let err = model.forward(&input).unwrap_err();
    assert!(err.to_string().contains("layer 0"), "{err}");
}

#[test]
fn session_lifecycle() {
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let a = random_tensor(&mut rng, Shape4::new(2, 3, 8, 8), 0.0, 1.0);
    let b = random_tensor(&mut rng, Shape4::new(2, 3, 8, 8), 0.0, 1.0);
    let options = PrismOptions::default();

    let mut session = RecordingSession::new(toy_model(2));
    session.forward(&a).unwrap();
    assert!(session.stack().is_empty(), "not registered yet");

    session.register();
    session.forward(&a).unwrap();
    session.prune();
    session.forward(&b).unwrap();
    let mut fresh = RecordingSession::new(toy_model(2));
    fresh.register();
    fresh.forward(&b).unwrap();
    assert_eq!(session.stack(), fresh.stack());

    let maps = session.get_maps(8, 8, &options).unwrap();
    assert_eq!(maps.maps(), fresh.get_maps(8, 8, &options).unwrap().maps());
    assert!(matches!(
        session.get_maps(8, 8, &options),
        Err(PrismError::EmptyStack)
    ));

    session.forward(&a).unwrap();
    session.disable();
    session.forward(&b).unwrap();
    assert_eq!(session.stack().len(), 2);
}

#[test]
fn failed_forward_records_nothing() {
    let bad = Model::from_specs(vec![
        LayerSpec::Conv(
            Conv2d::new(
                Tensor4::filled(Shape4::new(2, 3, 1, 1), 1.0),
                vec![0.0; 2],
                1,
                0,
            )
            .unwrap(),
        ),
        LayerSpec::Relu,
        LayerSpec::Conv(
            Conv2d::new(
                Tensor4::filled(Shape4::new(2, 5, 1, 1), 1.0),
                vec![0.0; 2],
                1,
                0,
            )
            .unwrap(),
        ),
    ]);
    let mut session = RecordingSession::new(bad);
    session.register();
    let err = session
        .forward(&Tensor4::zeros(Shape4::new(1, 3, 4, 4)))
        .unwrap_err();
    assert!(err.to_string().contains("layer 2"), "{err}");
    assert!(session.stack().is_empty());
}
