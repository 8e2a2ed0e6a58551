mod common;

use craft_core::dataprep::CandidatePool;
use craft_core::model::{
    train_epoch, Checkpoint, CraftModel, ModelConfig, ModelError, TrainContext,
};
use craft_core::numerics::{Adam, AdamConfig, ParamStore};

fn config() -> ModelConfig {
    ModelConfig {
        dim: 16,
        neighbors: 8,
        use_repeat: true,
        ..ModelConfig::default()
    }
}

#[test]
fn fixed_batch_loss_mostly_decreases() {
    let (edges, index) = common::random_stream(3, 30, 400);
    let queries = common::warm_queries(&edges, &index, 1, 64, 4);
    let batch = common::batch(&index, &queries, 8, true);
    let (model, mut store) = CraftModel::init::<f64>(config().without_dropout(), 30, 1).unwrap();
    let mut adam = Adam::new(AdamConfig {
        lr: 1e-3,
        ..AdamConfig::default()
    });
    let losses = model
        .fit_batch(&mut store, &mut adam, &batch, 51, 0)
        .unwrap();
    let non_increasing = losses.windows(2).filter(|w| w[1] <= w[0]).count();
    assert!(non_increasing >= 45, "{non_increasing} of 50: {losses:?}");
}

fn run_epochs(lr: f64, epochs: u64) -> (Vec<f64>, ParamStore<f64>, ParamStore<f64>) {
    let (edges, index) = common::random_stream(9, 40, 500);
    let pool = CandidatePool::from_index(&index);
    let (model, mut store) = CraftModel::init::<f64>(config(), 40, 2).unwrap();
    let initial = store.clone();
    let mut adam = Adam::new(AdamConfig {
        lr,
        ..AdamConfig::default()
    });
    let mut losses = Vec::new();
    for epoch in 0..epochs {
        let ctx = TrainContext {
            index: &index,
            pool: &pool,
            train_edges: &edges[..400],
            batch_size: 50,
            seed: 17,
            epoch,
        };
        let stats = train_epoch(&model, &mut store, &mut adam, &ctx).unwrap();
        assert!(stats.skipped_cold_sources > 0);
        assert_eq!(stats.queries + stats.skipped_cold_sources, 400);
        losses.push(stats.mean_loss);
    }
    (losses, initial, store)
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let (_, initial, trained) = run_epochs(0.0, 1);
    for (a, b) in initial.groups().iter().zip(trained.groups()) {
        assert_eq!(a.value, b.value, "{}", a.name);
    }
}

#[test]
fn training_is_deterministic_per_seed() {
    let (l1, _, s1) = run_epochs(1e-3, 2);
    let (l2, _, s2) = run_epochs(1e-3, 2);
    assert_eq!(l1, l2);
    for (a, b) in s1.groups().iter().zip(s2.groups()) {
        assert_eq!(a.value, b.value);
    }
}

#[test]
fn checkpoint_round_trips_bit_exactly() {
    let (_, _, store) = run_epochs(1e-3, 1);
    let (model, _) = CraftModel::init::<f64>(config(), 40, 2).unwrap();
    let ckpt = Checkpoint::new(&model, &store, "abc123", "fp", 17, 1);
    let bytes = ckpt.to_bytes().unwrap();
    let back = Checkpoint::<f64>::from_bytes(&bytes).unwrap();
    assert_eq!(back.header, ckpt.header);
    for (a, b) in back.store.groups().iter().zip(store.groups()) {
        assert_eq!(a.name, b.name);
        assert_eq!(a.trainable, b.trainable);
        let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a.value.data()), bits(b.value.data()));
    }
    assert_eq!(back.to_bytes().unwrap(), bytes);
    assert_eq!(back.model().unwrap(), model);

    assert!(matches!(
        Checkpoint::<f32>::from_bytes(&bytes),
        Err(ModelError::Checkpoint(_))
    ));
    assert!(matches!(
        Checkpoint::<f64>::from_bytes(&bytes[..bytes.len() - 3]),
        Err(ModelError::Checkpoint(_))
    ));
}

#[test]
fn single_precision_checkpoint_round_trips() {
    let (model, store) = CraftModel::init::<f32>(config(), 40, 2).unwrap();
    let bytes = Checkpoint::new(&model, &store, "x", "fp", 1, 0)
        .to_bytes()
        .unwrap();
    let back = Checkpoint::<f32>::from_bytes(&bytes).unwrap();
    for (a, b) in back.store.groups().iter().zip(store.groups()) {
        assert_eq!(a.value, b.value);
    }
}
