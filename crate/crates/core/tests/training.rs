use aeseg::data::{generate_phantom, Cohort, PhantomParams};
use aeseg::models::{encode_checkpoint, ModelConfig, ModelKind, ModelParams};
use aeseg::training::{train, TrainConfig};
use aeseg::{Error, Tensor};

fn slices(subjects: u64, dims: [usize; 3]) -> Vec<Tensor> {
    (0..subjects)
        .flat_map(|seed| {
            let p = PhantomParams {
                seed,
                dims,
                lesion_radius: (1.5, 2.5),
                ..PhantomParams::default()
            };
            let img = generate_phantom(&p, Cohort::Healthy).unwrap().image;
            (0..dims[0]).map(move |z| img.slice_tensor(z))
        })
        .collect()
}

fn small(kind: ModelKind) -> ModelParams {
    let config = ModelConfig {
        input_size: 16,
        stages: 2,
        base_width: 4,
        ..ModelConfig::default()
    };
    let latent = kind.default_latent_for(&config);
    ModelParams::build(kind, latent, config, 5).unwrap()
}

#[test]
fn sae_reconstruction_loss_falls_over_twenty_epochs() {
    let data = slices(10, [10, 64, 64]);
    assert_eq!(data.len(), 100);
    let config = ModelConfig::default();
    let p = ModelParams::build(ModelKind::Sae, ModelKind::Sae.default_latent_for(&config), config, 1).unwrap();
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::for_kind(ModelKind::Sae, 2)
    };
    let (_, report) = train(p, &data, &cfg).unwrap();
    let first = report.epochs.first().unwrap().l_rec.unwrap();
    let last = report.epochs.last().unwrap().l_rec.unwrap();
    assert!(last < first, "l_rec {first} -> {last}");
}

#[test]
fn dvae_prior_stays_positive_and_finite() {
    let data = slices(2, [8, 16, 16]);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::for_kind(ModelKind::Dvae, 0)
    };
    let (_, report) = train(small(ModelKind::Dvae), &data, &cfg).unwrap();
    let prior = report.epochs.last().unwrap().l_prior.unwrap();
    assert!(prior.is_finite() && prior > 0.0, "{prior}");
}

#[test]
fn anovaegan_discriminator_loss_stays_finite() {
    let data = slices(2, [8, 16, 16]);
    let cfg = TrainConfig {
        epochs: 3,
        ..TrainConfig::for_kind(ModelKind::AnoVaeGan, 0)
    };
    let (_, report) = train(small(ModelKind::AnoVaeGan), &data, &cfg).unwrap();
    assert!(report.steps.iter().all(|s| s.l_dis.is_some_and(f32::is_finite)));
    assert!(report.steps.iter().all(|s| s.l_adv.is_some_and(f32::is_finite)));
    assert!(report.to_csv().lines().nth(1).unwrap().split(',').all(|c| !c.is_empty()));
}

#[test]
fn identical_inputs_give_identical_checkpoints() {
    let data = slices(2, [8, 16, 16]);
    for kind in ModelKind::ALL {
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::for_kind(kind, 9)
        };
        let a = train(small(kind), &data, &cfg).unwrap().0;
        let b = train(small(kind), &data, &cfg).unwrap().0;
        assert_eq!(encode_checkpoint(&a).unwrap(), encode_checkpoint(&b).unwrap(), "{kind}");
        let c = train(small(kind), &data, &TrainConfig { seed: 10, ..cfg }).unwrap().0;
        assert_ne!(encode_checkpoint(&a).unwrap(), encode_checkpoint(&c).unwrap(), "{kind}");
    }
}

#[test]
fn divergence_names_the_step() {
    let data = slices(1, [8, 16, 16]);
    let cfg = TrainConfig {
        lr_rec: 1e38,
        ..TrainConfig::for_kind(ModelKind::Sae, 0)
    };
    match train(small(ModelKind::Sae), &data, &cfg) {
        Err(Error::Numerical(msg)) => assert!(msg.contains("step"), "{msg}"),
        other => panic!("expected a numerical error, got {:?}", other.map(|_| ())),
    }
}

#[test]
fn empty_or_misshapen_data_is_rejected() {
    let cfg = TrainConfig::for_kind(ModelKind::Sae, 0);
    assert!(matches!(train(small(ModelKind::Sae), &[], &cfg), Err(Error::Config(_))));
    let wrong = vec![Tensor::zeros(vec![1, 1, 8, 8])];
    assert!(matches!(train(small(ModelKind::Sae), &wrong, &cfg), Err(Error::Dimension(_))));
}
