mod common;

use aprnet_core::checkpoint::read_tensor;
use aprnet_core::data::two_sinusoid_components;
use aprnet_core::{
    evaluate, load_checkpoint, make_windows, synth_multifreq, train, AprnetModel, ModelConfig, Split, SplitRatios,
    Tensor, TrainConfig, WindowedDataset,
};
use common::rng;

fn sinusoid_data(seed: u64, len: usize, lookback: usize, horizon: usize) -> WindowedDataset {
    let table = synth_multifreq(len, 3, &two_sinusoid_components(3, seed), 0.001, 0.1, seed).unwrap();
    make_windows(table, lookback, horizon, SplitRatios::STANDARD).unwrap()
}

fn small_model(seed: u64) -> AprnetModel<f32> {
    AprnetModel::new(ModelConfig::new(32, 8, 3, 12), seed).unwrap()
}

#[test]
fn fixed_seed_runs_are_bitwise_identical() {
    let data = sinusoid_data(1, 600, 32, 8);
    let cfg = TrainConfig {
        epochs: 3,
        seed: 7,
        ..TrainConfig::default()
    };
    let mut a = small_model(7);
    let mut b = small_model(7);
    let ra = train(&mut a, &data, &cfg).unwrap();
    let rb = train(&mut b, &data, &cfg).unwrap();
    let curve = |r: &aprnet_core::TrainReport| -> Vec<(u64, u64)> {
        r.epochs.iter().map(|e| (e.train_mse.to_bits(), e.val_mse.to_bits())).collect()
    };
    assert_eq!(curve(&ra), curve(&rb));
    for (id, p) in a.params.iter() {
        assert_eq!(p.tensor.data(), b.params.get(id).data());
    }
}

#[test]
fn restored_parameters_equal_best_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("best.bin");
    let data = sinusoid_data(2, 600, 32, 8);
    let cfg = TrainConfig {
        epochs: 6,
        patience: 2,
        seed: 3,
        learning_rate: 3e-2,
        checkpoint_path: Some(path.clone()),
        ..TrainConfig::default()
    };
    let mut model = small_model(3);
    let report = train(&mut model, &data, &cfg).unwrap();
    let best = report.epochs[report.best_epoch - 1];
    assert_eq!(best.val_mse, report.best_val_mse);
    let ck = load_checkpoint(&path).unwrap();
    for (id, p) in model.params.iter() {
        let name = model.params.name(id);
        assert_eq!(p.tensor.data(), ck.model.params.get(ck.model.params.find(name).unwrap()).data(), "{name}");
    }
    // Stored at checkpoint precision.
    assert_eq!(ck.best_val_loss.unwrap() as f32, report.best_val_mse as f32);
    let gamma = read_tensor(&path, "revin.gamma").unwrap();
    assert_eq!(gamma.data(), model.params.get(model.revin_gamma).data());
}

#[test]
fn validation_improves_on_sinusoids() {
    for seed in 0..3 {
        let data = sinusoid_data(seed, 1200, 48, 12);
        let mut model = AprnetModel::new(ModelConfig::new(48, 12, 3, 16), seed).unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            seed,
            ..TrainConfig::default()
        };
        let report = train(&mut model, &data, &cfg).unwrap();
        let first = report.epochs[0].val_mse;
        let last = report.epochs.last().unwrap().val_mse;
        assert!(last < first, "seed {seed}: {first} -> {last}");
    }
}

#[test]
fn checkpoint_reproduces_predictions_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.bin");
    let data = sinusoid_data(4, 600, 32, 8);
    let mut model = small_model(4);
    let cfg = TrainConfig {
        epochs: 2,
        checkpoint_path: Some(path.clone()),
        ..TrainConfig::default()
    };
    train(&mut model, &data, &cfg).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.model.config, model.config);
    let x = Tensor::<f32>::normal(&[5, 32, 3], 2.0, &mut rng(5));
    let a = model.predict(&x).unwrap();
    let b = ck.model.predict(&x).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
    let opt = ck.optim.unwrap();
    assert!(opt.step_count > 0);
}

#[test]
fn default_dimensions_reload_with_stored_val_loss() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("default.bin");
    let table = synth_multifreq(1900, 7, &two_sinusoid_components(7, 6), 0.001, 0.1, 6).unwrap();
    let ratios = SplitRatios {
        train: 0.34,
        val: 0.33,
        test: 0.33,
    };
    let data = make_windows(table, 512, 96, ratios).unwrap();
    let mut model = AprnetModel::<f32>::new(ModelConfig::new(512, 96, 7, 128), 6).unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        checkpoint_path: Some(path.clone()),
        ..TrainConfig::default()
    };
    train(&mut model, &data, &cfg).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    let stored = ck.best_val_loss.unwrap();
    let (val, _) = evaluate(&ck.model, &data, Split::Val, 32, 1).unwrap();
    assert!((val - stored).abs() <= 1e-7 * stored.max(1.0), "{val} vs {stored}");
}
