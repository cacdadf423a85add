mod common;

use common::{bpsk_ber, feature_grad_error, param_grad_error, random_batch, random_image, random_toy_model, rel_err, toy_spec};
use rand::Rng;
use scait_core::channel::{transmit, Fec};
use scait_core::dataset::{DatasetSplit, LabeledExample, CLASS_NAMES};
use scait_core::kb::build_kb;
use scait_core::nn::{predict, train, ChannelMode, ConvSpec, Model, ModelSpec, PruneAware, TrainConfig};
use scait_core::rng::rng_from;
use scait_core::ChannelConfig;

#[test]
fn parameter_gradients_match_central_differences() {
    let spec = toy_spec();
    for seed in 0..4 {
        let model = random_toy_model(seed);
        let err = param_grad_error(&model, &random_batch(&spec, 4, 40 + seed), 1e-5);
        assert!(err < 1e-4, "seed {seed}: {err:e}");
    }
}

#[test]
fn feature_gradients_match_on_ten_pairs() {
    let model = random_toy_model(21);
    for i in 0..10u64 {
        let class = (i % 3) as usize;
        let err = feature_grad_error(&model, &random_image(8, 8, 900 + i), class, 1e-5);
        assert!(err < 1e-4, "pair {i}: {err:e}");
    }
}

#[test]
fn single_example_overfits() {
    let spec = ModelSpec::default();
    let ex = LabeledExample {
        image: random_image(32, 32, 5),
        label: 4,
    };
    let split = DatasetSplit {
        train: vec![ex.clone()],
        test: vec![ex.clone()],
        class_names: CLASS_NAMES.iter().map(|s| s.to_string()).collect(),
        seed: 0,
    };
    let cfg = TrainConfig {
        epochs: 200,
        batch_size: 1,
        learning_rate: 0.05,
        ..TrainConfig::default()
    };
    let out = train(Model::new(spec, 8).unwrap(), &split, &cfg).unwrap();
    let loss = out.model.loss(&[ex]).unwrap();
    assert!(loss < 0.01, "loss {loss}");
}

/// KB weights recomputed by brute force: central differences of the true
/// class logit with respect to every cut activation, averaged spatially and
/// then over each class's correctly classified images.
#[test]
fn kb_weights_match_finite_difference_average() {
    let spec = ModelSpec {
        convs: vec![
            ConvSpec { out_channels: 2, pool: true },
            ConvSpec { out_channels: 3, pool: false },
        ],
        ..toy_spec()
    };
    let mut model = Model::new(spec.clone(), 3).unwrap();
    let mut rng = rng_from(44);
    for t in model.params_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-0.5..0.5);
        }
    }
    // centre the output bias so every class wins on some inputs
    let mut mean = [0.0; 3];
    for s in 0..200 {
        let (_, logits) = model.forward(&random_image(8, 8, 50_000 + s)).unwrap();
        for (m, l) in mean.iter_mut().zip(logits.data()) {
            *m += l / 200.0;
        }
    }
    let bias = model.params_mut().last_mut().unwrap().data_mut();
    for (b, m) in bias.iter_mut().zip(mean) {
        *b -= m;
    }
    let mut train_set = Vec::new();
    let mut seen = [0usize; 3];
    let mut seed = 0;
    while seen.iter().any(|&n| n < 3) || train_set.len() < 30 {
        let image = random_image(8, 8, 7000 + seed);
        seed += 1;
        let (_, logits) = model.forward(&image).unwrap();
        let p = predict(logits.data()).unwrap();
        seen[p] += 1;
        // a few deliberately mislabelled images must be ignored
        let label = if seed % 7 == 0 { (p + 1) % 3 } else { p };
        train_set.push(LabeledExample { image, label });
        assert!(seed < 5000, "toy model never predicts some class");
    }
    let split = DatasetSplit {
        train: train_set.clone(),
        test: train_set.clone(),
        class_names: vec!["a".into(), "b".into(), "c".into()],
        seed: 0,
    };
    let kb = build_kb(&model, &split).unwrap();

    let (k, c) = (3, 3);
    let mut sums = vec![0.0; k * c];
    let mut counts = [0usize; 3];
    let eps = 1e-5;
    for ex in &train_set {
        let (features, logits) = model.forward(&ex.image).unwrap();
        if predict(logits.data()).unwrap() != ex.label {
            continue;
        }
        counts[ex.label] += 1;
        let plane = features.len() / k;
        for j in 0..features.len() {
            let at = |d: f64| {
                let mut f = features.clone();
                f.data_mut()[j] += d;
                model.decode(&f).unwrap().data()[ex.label]
            };
            sums[(j / plane) * c + ex.label] += (at(eps) - at(-eps)) / (2.0 * eps) / plane as f64;
        }
    }
    for m in 0..k {
        for class in 0..c {
            let oracle = sums[m * c + class] / counts[class] as f64;
            let got = kb.weight(m, class);
            assert!(rel_err(got, oracle) < 1e-4, "w[{m}][{class}] {got} vs {oracle}");
        }
        let score: f64 = (0..c).map(|cl| kb.weight(m, cl).abs()).sum::<f64>() / c as f64;
        assert_eq!(kb.scores()[m], score);
    }
}

#[test]
fn uncoded_ber_matches_q_function() {
    let mut rng = rng_from(6);
    let payload: Vec<u8> = (0..250_000).map(|_| rng.random()).collect();
    for snr in [0.0, 3.0, 6.0] {
        let t = transmit(&payload, &ChannelConfig { snr_db: snr, fec: Fec::None, seed: 60 + snr as u64 });
        let theory = bpsk_ber(snr);
        assert!((t.ber - theory).abs() / theory < 0.10, "{snr} dB: {} vs {theory}", t.ber);
    }
    assert!((bpsk_ber(6.0) - 2.39e-3).abs() < 0.01e-3);
}

#[test]
fn hamming_lowers_byte_errors_at_four_db() {
    let mut rng = rng_from(4);
    let payload: Vec<u8> = (0..100_000).map(|_| rng.random()).collect();
    let byte_errors = |fec| {
        let rx = transmit(&payload, &ChannelConfig { snr_db: 4.0, fec, seed: 77 }).bytes;
        payload.iter().zip(&rx).filter(|(a, b)| a != b).count()
    };
    let (plain, coded) = (byte_errors(Fec::None), byte_errors(Fec::Hamming74));
    assert!(coded < plain, "hamming {coded} vs none {plain}");
}

#[test]
fn noise_aware_training_is_deterministic() {
    let spec = toy_spec();
    let batch = random_batch(&spec, 24, 300);
    let split = DatasetSplit {
        train: batch.clone(),
        test: batch,
        class_names: vec!["a".into(), "b".into(), "c".into()],
        seed: 0,
    };
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 8,
        channel_mode: ChannelMode::AnalogAwgn { snr_lo_db: 0.0, snr_hi_db: 20.0 },
        prune_aware: PruneAware::RandomKeep { lo: 0.25, hi: 1.0 },
        ..TrainConfig::default()
    };
    let a = train(Model::new(spec.clone(), 1).unwrap(), &split, &cfg).unwrap();
    let b = train(Model::new(spec, 1).unwrap(), &split, &cfg).unwrap();
    assert_eq!(a.model.params(), b.model.params());
    assert_eq!(a.metrics, b.metrics);
}
