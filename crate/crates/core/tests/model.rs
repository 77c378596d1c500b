mod support;

use milltwin_core::model::{
    bce_loss, incremental_update, partition, sigmoid, train, InputNorm, LabeledDataset, LabeledSample, Mlp, TrainConfig,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use support::gradient_check;

/// Straight-line forward pass over the raw parameter layout.
fn oracle_forward(m: &Mlp, x: f64) -> f64 {
    let norm = m.input_norm();
    let mut a = vec![(x - norm.mean) / norm.std];
    let n = m.layers().len();
    for (i, layer) in m.layers().iter().enumerate() {
        let mut z = vec![0.0; layer.outputs()];
        for o in 0..layer.outputs() {
            let mut acc = layer.biases()[o];
            for k in 0..layer.inputs() {
                acc += layer.weights()[o * layer.inputs() + k] * a[k];
            }
            z[o] = if i + 1 < n { acc.max(0.0) } else { acc };
        }
        a = z;
    }
    1.0 / (1.0 + (-a[0]).exp())
}

#[test]
fn backprop_matches_central_differences() {
    let checked = gradient_check(0x9_4ad, 20).unwrap_or_else(|e| panic!("{e}"));
    assert!(checked > 200);
}

#[test]
fn forward_matches_matrix_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for seed in 0..20u64 {
        let mut m = Mlp::new(&[1, 16, 16, 8, 1], seed);
        m.set_input_norm(InputNorm { mean: 0.3, std: 0.35 });
        for _ in 0..50 {
            let x = rng.random_range(-0.5..1.5);
            let got = m.forward(x);
            let want = oracle_forward(&m, x);
            assert!((got - want).abs() <= 1e-9 * want.abs().max(1e-300), "{got} vs {want}");
        }
    }
}

#[test]
fn sigmoid_and_loss_are_consistent() {
    for z in [-20.0, -2.0, 0.0, 0.5, 7.0] {
        let p = sigmoid(z);
        // softplus identities
        let softplus = |t: f64| (1.0 + t.exp()).ln();
        assert!((bce_loss(p, true) - softplus(-z)).abs() < 1e-9);
        assert!((bce_loss(p, false) - softplus(z)).abs() < 1e-9);
    }
    // far tail: loss saturates at -ln(1e-12)
    assert!((bce_loss(sigmoid(-40.0), true) - 1e-12f64.ln().abs()).abs() < 1e-9);
}

/// Peak amplitudes from N(0.8, 0.05) for contact and N(0.05, 0.02) for air.
fn separable_dataset(n: usize, seed: u64) -> LabeledDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let contact = Normal::new(0.8, 0.05).unwrap();
    let air = Normal::new(0.05, 0.02).unwrap();
    LabeledDataset::new(
        (0..n)
            .map(|_| {
                let label = rng.random_bool(0.4);
                let v: f64 = if label { contact.sample(&mut rng) } else { air.sample(&mut rng) };
                LabeledSample {
                    input: v.abs(),
                    label,
                }
            })
            .collect(),
    )
}

#[test]
fn separable_data_trains_to_high_accuracy() {
    let data = separable_dataset(1_555, 5);
    let cfg = TrainConfig::default();
    let parts = partition(&data, &cfg).unwrap();
    assert_eq!(parts.train.len(), 1_244);
    assert_eq!(parts.test.len(), 311);
    assert_eq!(parts.fit.len() + parts.val.len(), parts.train.len());

    // midpoint threshold oracle
    let oracle_acc =
        parts.test.iter().filter(|s| (s.input >= 0.425) == s.label).count() as f64 / parts.test.len() as f64;
    assert!(oracle_acc >= 0.99);

    let (model, report) = train(&data, &cfg).unwrap();
    assert!(report.test_accuracy >= 0.99, "accuracy {}", report.test_accuracy);
    assert_eq!(report.test_accuracy, model.accuracy(&parts.test));
    assert!(report.stopped_epoch <= cfg.max_epochs);
    assert!(report.best_epoch >= 1 && report.best_epoch <= report.stopped_epoch);
    assert_eq!(report.epochs.len() as u32, report.stopped_epoch);
    // the returned parameters are the best-validation ones
    assert_eq!(model.mean_loss(&parts.val), report.best_val_loss);
    let norm = model.input_norm();
    let expected = InputNorm::fit(parts.train.iter().map(|s| s.input));
    assert_eq!(norm, expected);
}

#[test]
fn training_is_deterministic_per_seed() {
    let data = separable_dataset(400, 9);
    let cfg = TrainConfig {
        max_epochs: 15,
        ..TrainConfig::default()
    };
    let (a, ra) = train(&data, &cfg).unwrap();
    let (b, rb) = train(&data, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
    let (c, _) = train(&data, &TrainConfig { seed: 43, ..cfg }).unwrap();
    assert_ne!(a, c);
}

#[test]
fn incremental_update_on_same_distribution_keeps_accuracy() {
    let data = separable_dataset(1_555, 21);
    let cfg = TrainConfig::default();
    let (model, report) = train(&data, &cfg).unwrap();
    let fresh = separable_dataset(200, 22);
    let updated = incremental_update(&model, &fresh.samples, &cfg).unwrap();
    let test = partition(&data, &cfg).unwrap().test;
    let after = updated.accuracy(&test);
    assert!(after >= report.test_accuracy - 0.01, "{after} vs {}", report.test_accuracy);
    assert_eq!(updated.input_norm(), model.input_norm());
}

#[test]
fn incremental_update_adapts_to_new_regime() {
    let data = separable_dataset(1_555, 31);
    let cfg = TrainConfig::default();
    let (model, _) = train(&data, &cfg).unwrap();
    // reduced-feed contact produces weaker bursts around 0.4 V
    let mut rng = ChaCha8Rng::seed_from_u64(32);
    let weak = Normal::new(0.4, 0.03).unwrap();
    let air = Normal::new(0.05, 0.02).unwrap();
    let regime: Vec<LabeledSample> = (0..300)
        .map(|i| {
            let label = i % 2 == 0;
            let v: f64 = if label { weak.sample(&mut rng) } else { air.sample(&mut rng) };
            LabeledSample { input: v.abs(), label }
        })
        .collect();
    let (adapt, holdout) = regime.split_at(200);
    let before = model.accuracy(holdout);
    let updated = incremental_update(&model, adapt, &cfg).unwrap();
    let after = updated.accuracy(holdout);
    assert!(after >= before, "{after} < {before}");
}

#[test]
fn model_bytes_survive_training_roundtrip() {
    let data = separable_dataset(300, 3);
    let cfg = TrainConfig {
        max_epochs: 5,
        ..TrainConfig::default()
    };
    let (model, _) = train(&data, &cfg).unwrap();
    let (back, seed) = Mlp::from_bytes(&model.to_bytes(cfg.seed)).unwrap();
    assert_eq!(seed, cfg.seed);
    assert_eq!(back, model);
}
