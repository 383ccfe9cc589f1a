//! Training-loop behaviour on small synthetic sets.

use watchdog_core::autoencoder::{reconstruction_mse, train_autoencoder, AutoencoderConfig};
use watchdog_core::classifier::{
    train_binary, train_core, BinaryClassifierConfig, CoreClassifierConfig,
};
use watchdog_core::data::{synth_in_distribution, AugmentationSpec, Dataset, SyntheticSpec};
use watchdog_core::nn::{Model, OptimizerConfig};
use watchdog_core::train::TrainConfig;
use watchdog_core::Error;

fn small_spec() -> SyntheticSpec {
    SyntheticSpec {
        classes: 4,
        height: 12,
        width: 12,
        position_jitter: 0.5,
        ..Default::default()
    }
}

fn small_ae(epochs: usize) -> AutoencoderConfig {
    AutoencoderConfig {
        hidden: vec![48, 16, 48],
        train: TrainConfig {
            epochs,
            batch_size: 16,
            ..Default::default()
        },
        augmentation: AugmentationSpec::standard(),
    }
}

#[test]
fn zero_epochs_returns_the_initialization() {
    let set = synth_in_distribution(&small_spec(), 1, 40).unwrap();
    let cfg = small_ae(0);
    let (model, history) = train_autoencoder(&set, &cfg).unwrap();
    assert!(history.is_empty());
    assert_eq!(
        model,
        Model::init(cfg.network(set.dims()).unwrap(), cfg.train.seed)
    );
}

#[test]
fn memorizes_a_constant_dataset() {
    let one = synth_in_distribution(&small_spec(), 2, 4)
        .unwrap()
        .samples()[0]
        .clone();
    let mut manifest = synth_in_distribution(&small_spec(), 2, 4)
        .unwrap()
        .manifest()
        .clone();
    manifest.count = 32;
    let set = Dataset::new(manifest, vec![one; 32]);
    let cfg = AutoencoderConfig {
        train: TrainConfig {
            epochs: 50,
            batch_size: 8,
            validation_fraction: 0.0,
            optimizer: OptimizerConfig {
                learning_rate: 3e-3,
                ..Default::default()
            },
            ..Default::default()
        },
        augmentation: AugmentationSpec::default(),
        ..small_ae(50)
    };
    let (model, history) = train_autoencoder(&set, &cfg).unwrap();
    assert_eq!(history.epochs.len(), 50);
    let mse = reconstruction_mse(&model, &set).unwrap();
    assert!(mse < 1e-3, "final mse {mse}");
}

#[test]
fn validation_loss_drops_and_training_is_reproducible() {
    let set = synth_in_distribution(&small_spec(), 3, 200).unwrap();
    let cfg = small_ae(8);
    let (a, ha) = train_autoencoder(&set, &cfg).unwrap();
    let (b, hb) = train_autoencoder(&set, &cfg).unwrap();
    assert_eq!(a.to_bytes().unwrap(), b.to_bytes().unwrap());
    assert_eq!(ha, hb);
    let last = ha.epochs.last().unwrap().val_loss.unwrap();
    assert!(last < ha.initial_val_loss.unwrap(), "{ha:?}");

    let other = TrainConfig {
        seed: 99,
        ..cfg.train.clone()
    };
    let (c, _) = train_autoencoder(
        &set,
        &AutoencoderConfig {
            train: other,
            ..cfg
        },
    )
    .unwrap();
    assert_ne!(a, c);
}

#[test]
fn core_training_is_reproducible_and_learns() {
    let set = synth_in_distribution(&small_spec(), 4, 200).unwrap();
    let cfg = CoreClassifierConfig {
        hidden: vec![32],
        train: TrainConfig {
            epochs: 10,
            batch_size: 16,
            validation_fraction: 0.2,
            ..Default::default()
        },
        ..Default::default()
    };
    let (a, ha) = train_core(&set, &cfg).unwrap();
    let (b, hb) = train_core(&set, &cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(ha, hb);
    let acc = ha.epochs.last().unwrap().val_acc.unwrap();
    assert!(acc > 0.5, "validation accuracy {acc} after 10 epochs");
}

#[test]
fn exploding_learning_rate_reports_the_epoch() {
    let set = synth_in_distribution(&small_spec(), 5, 40).unwrap();
    let cfg = CoreClassifierConfig {
        hidden: vec![16],
        train: TrainConfig {
            epochs: 5,
            optimizer: OptimizerConfig::sgd(1e300, 0.9),
            ..Default::default()
        },
        ..Default::default()
    };
    match train_core(&set, &cfg) {
        Err(Error::Diverged { epoch }) => assert!(epoch < 5),
        other => panic!("expected divergence, got {:?}", other.map(|r| r.1)),
    }
}

#[test]
fn binary_training_needs_generated_samples() {
    let set = synth_in_distribution(&small_spec(), 6, 40).unwrap();
    assert!(train_binary(&set, &set, &BinaryClassifierConfig::default()).is_err());
}
