use cdm_core::nets::{
    train_autoencoder, train_extractor, Autoencoder, Denoiser, DenoiserConfig, ExtractorConfig, TrainConfig,
};
use cdm_core::synth::{generate_dataset, SyntheticSpec};
use cdm_core::tensor::{seeded_rng, WarmupSchedule};
use cdm_core::{Error, Tensor};

fn train(epochs: usize, lr: f64) -> TrainConfig {
    TrainConfig { epochs, batch_size: 32, lr: WarmupSchedule { target: lr, warmup_steps: 10 }, seed: 7 }
}

fn extractor_config() -> ExtractorConfig {
    ExtractorConfig { input_dim: 16, hidden: 32, feature_dim: 8 }
}

fn separable() -> cdm_core::synth::Dataset {
    let spec =
        SyntheticSpec { classes: 4, samples_per_class: 64, anchor_spread: 3.0, seed: 3, ..SyntheticSpec::default() };
    generate_dataset(&spec).unwrap().0
}

#[test]
fn extractor_separates_well_spread_classes() {
    let data = separable();
    let (net, report) = train_extractor(&data.x, &data.labels, extractor_config(), &train(30, 0.01)).unwrap();
    assert!(report.all_finite());
    let acc = net.accuracy(&data.x, &data.labels).unwrap();
    assert!(acc > 0.95, "accuracy {acc}");
    assert_eq!(net.extract(&data.x).unwrap().shape(), &[data.len(), 8]);
}

#[test]
fn untrained_extractor_predicts_uniformly() {
    let data = separable();
    let (net, report) = train_extractor(&data.x, &data.labels, extractor_config(), &train(0, 0.01)).unwrap();
    assert!(report.losses.is_empty());
    let ce = net.cross_entropy(&data.x, &data.labels).unwrap();
    assert!((ce - 4f64.ln()).abs() < 1e-12, "{ce}");
}

#[test]
fn extractor_training_is_deterministic() {
    let data = separable();
    let (a, ra) = train_extractor(&data.x, &data.labels, extractor_config(), &train(3, 0.01)).unwrap();
    let (b, rb) = train_extractor(&data.x, &data.labels, extractor_config(), &train(3, 0.01)).unwrap();
    assert_eq!(a, b);
    assert_eq!(ra, rb);
}

#[test]
fn identity_autoencoder_is_exact_and_untrainable() {
    let x = seeded_rng(1).normal_sample(&[10, 6]);
    let mut ae = Autoencoder::identity(6);
    assert_eq!(ae.encode(&x).unwrap(), x);
    assert_eq!(ae.decode(&x).unwrap(), x);
    assert_eq!(ae.reconstruction_mse(&x).unwrap(), 0.0);
    assert!(matches!(train_autoencoder(&mut ae, &x, &train(1, 0.01)), Err(Error::Mode(_))));
}

#[test]
fn linear_autoencoder_recovers_a_low_rank_signal() {
    let mut rng = seeded_rng(2);
    let codes = rng.normal_sample(&[256, 3]);
    let mix = rng.normal_sample(&[3, 8]);
    let mut data = vec![0.0; 256 * 8];
    for i in 0..256 {
        for j in 0..8 {
            data[i * 8 + j] = (0..3).map(|k| codes.row(i)[k] * mix.data()[k * 8 + j]).sum();
        }
    }
    let x = Tensor::matrix(256, 8, data).unwrap();
    let mut ae = Autoencoder::linear(8, 3, 5).unwrap();
    let before = ae.reconstruction_mse(&x).unwrap();
    let report = train_autoencoder(&mut ae, &x, &train(200, 0.01)).unwrap();
    let after = ae.reconstruction_mse(&x).unwrap();
    assert!(report.all_finite());
    assert!(after < 0.02 * before, "{before} -> {after}");
}

#[test]
fn denoiser_output_depends_on_conditioning() {
    let cfg = DenoiserConfig {
        latent_dim: 4,
        feature_dim: 3,
        cond_dim: 5,
        time_dim: 6,
        hidden: 16,
        timesteps: 20,
        time_period: 100.0,
    };
    let net = Denoiser::new(cfg, 11).unwrap();
    let mut rng = seeded_rng(4);
    let z = rng.normal_sample(&[2, 4]);
    let f1 = rng.normal_sample(&[2, 3]);
    let f2 = rng.normal_sample(&[2, 3]);
    let (e1, v1) = net.denoise(&z, 5, Some(&f1)).unwrap();
    let (e2, _) = net.denoise(&z, 5, Some(&f2)).unwrap();
    let (e0, _) = net.denoise(&z, 5, None).unwrap();
    let (e_late, _) = net.denoise(&z, 15, Some(&f1)).unwrap();
    assert_eq!(e1.shape(), &[2, 4]);
    assert_eq!(v1.shape(), &[2, 4]);
    assert_ne!(e1, e2);
    assert_ne!(e1, e0);
    assert_ne!(e1, e_late);
    assert!(net.denoise(&z, 0, Some(&f1)).is_err());
    assert!(net.denoise(&z, 21, Some(&f1)).is_err());
}
