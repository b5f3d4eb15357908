use std::sync::OnceLock;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use windflow_core::floworacle::{generate, FamilySpec, GeneratedDataset, SolverConfig};
use windflow_core::nets::{Attention, DiscriminatorSpec, GeneratorSpec, ModelSpec};
use windflow_core::raster::Family;
use windflow_core::train::{
    cycle_networks, disc_accuracy, lr_at_epoch, train, ImagePool, StepLog, TrainConfig, TrainData, TrainerRegistry,
    FINAL_CHECKPOINT, TRAIN_LOG,
};
use windflow_core::Error;

fn dataset() -> &'static GeneratedDataset {
    static DATA: OnceLock<GeneratedDataset> = OnceLock::new();
    DATA.get_or_init(|| {
        let cfg = SolverConfig {
            n: 32,
            ..SolverConfig::default()
        };
        generate(&FamilySpec::new(Family::Two, 6, 11), &cfg).unwrap()
    })
}

fn data() -> TrainData {
    TrainData::from_dataset(&dataset().manifest, &dataset().samples)
}

fn spec(arch: &str, sn: bool) -> ModelSpec {
    let mut g = GeneratorSpec::unet(1, 1);
    g.base_filters = 8;
    g.depth = 4;
    let discriminator = (arch != "unet").then(|| {
        let mut d = DiscriminatorSpec::patchgan(if arch == "cyclegan" { 1 } else { 2 });
        d.base_filters = 8;
        d.spectral_norm = sn;
        d
    });
    ModelSpec {
        arch: arch.into(),
        generator: g,
        discriminator,
    }
}

fn short(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        decay_epochs: 0,
        lr: 1e-3,
        ..TrainConfig::default()
    }
}

#[test]
fn schedule_is_flat_then_linear() {
    let cfg = TrainConfig::default();
    for e in 0..50 {
        assert_eq!(lr_at_epoch(e, &cfg).unwrap(), 2e-4);
    }
    assert!((lr_at_epoch(50, &cfg).unwrap() - 2e-4 * 20.0 / 21.0).abs() < 1e-18);
    assert!((lr_at_epoch(69, &cfg).unwrap() - 2e-4 / 21.0).abs() < 1e-18);
    assert_eq!(lr_at_epoch(70, &cfg).unwrap(), 0.0);
    assert!(matches!(lr_at_epoch(71, &cfg), Err(Error::InvalidConfig(_))));
}

proptest! {
    #[test]
    fn schedule_never_increases(epochs in 1usize..200, decay_frac in 0.0f64..1.0) {
        let cfg = TrainConfig { epochs, decay_epochs: (epochs as f64 * decay_frac) as usize, ..TrainConfig::default() };
        let lrs: Vec<f64> = (0..=epochs).map(|e| lr_at_epoch(e, &cfg).unwrap()).collect();
        prop_assert!(lrs.windows(2).all(|w| w[1] <= w[0]));
        prop_assert_eq!(lrs[0], cfg.lr);
        prop_assert_eq!(lrs[epochs], 0.0);
    }
}

#[test]
fn pool_fills_then_swaps_half_the_time() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut pool = ImagePool::new(50);
    for i in 0..50u32 {
        assert_eq!(pool.query(i, &mut rng), i);
    }
    assert_eq!(pool.len(), 50);

    let n = 20_000;
    let fresh_returned = (0..n).filter(|&i| pool.query(1_000 + i, &mut rng) == 1_000 + i).count();
    let p = fresh_returned as f64 / n as f64;
    assert!((p - 0.5).abs() < 0.02, "fresh returned with p = {p}");
    assert_eq!(pool.len(), 50);

    let mut empty = ImagePool::new(0);
    assert_eq!(empty.query(7, &mut rng), 7);
    assert!(empty.is_empty());
}

#[test]
fn accuracy_fixtures() {
    let probs = vec![vec![0.9, 0.8], vec![0.1, 0.2], vec![0.6, 0.3], vec![0.2, 0.4]];
    // image means 0.85, 0.15, 0.45, 0.30
    assert_eq!(disc_accuracy(&probs, &[true, false, true, false]).unwrap(), 0.75);
    assert_eq!(disc_accuracy(&probs, &[false, true, false, true]).unwrap(), 0.25);
    assert!(disc_accuracy(&probs, &[true]).is_err());
}

#[test]
fn registry_dispatches_by_name() {
    let reg = TrainerRegistry::builtin();
    let mut names = reg.names();
    names.sort();
    assert_eq!(names, ["cyclegan", "pix2pix", "unet"]);
    assert!(reg.get("pix2pix").unwrap().uses_discriminator());
    assert!(!reg.get("unet").unwrap().uses_discriminator());
    assert!(matches!(reg.get("vae"), Err(Error::UnknownName { .. })));
}

#[test]
fn unet_rejects_a_discriminator() {
    let mut s = spec("pix2pix", false);
    s.arch = "unet".into();
    assert!(matches!(train(&data(), &s, &short(1)), Err(Error::InvalidConfig(_) | Error::SpecMismatch(_))));
}

#[test]
fn unet_lowers_its_training_loss() {
    let out = train(&data(), &spec("unet", false), &short(12)).unwrap();
    let first = out.epochs[0].train_l1;
    let last = out.epochs.last().unwrap().train_l1;
    assert!(last < 0.5 * first, "{first} -> {last}");
    assert_eq!(out.updates["G"], out.steps.len());
    assert!(out.epochs.last().unwrap().validation.is_some());
}

#[test]
fn pix2pix_is_deterministic_per_seed() {
    let run = |seed| {
        let cfg = TrainConfig { seed, ..short(2) };
        train(&data(), &spec("pix2pix", true), &cfg).unwrap()
    };
    let a = run(4);
    let b = run(4);
    let c = run(5);
    assert_eq!(a.checkpoint.checksum().unwrap(), b.checkpoint.checksum().unwrap());
    assert_eq!(a.steps, b.steps);
    assert_ne!(a.checkpoint.checksum().unwrap(), c.checkpoint.checksum().unwrap());
    assert!(a.checkpoint.has_prefix("G") && a.checkpoint.has_prefix("D"));
}

#[test]
fn pix2pix_learns_and_keeps_spectral_norm_near_one() {
    let out = train(&data(), &spec("pix2pix", true), &short(10)).unwrap();
    let (lo, hi) = out.epochs[0].sn_sigma.unwrap();
    assert!(lo >= 0.9 && hi <= 1.1, "sigma range ({lo}, {hi})");
    let first = out.epochs[0].train_l1;
    let last = out.epochs.last().unwrap().train_l1;
    assert!(last < first, "{first} -> {last}");
    for s in &out.steps {
        assert!(s.losses.is_finite());
        let acc = s.disc_accuracy.unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert!(s.losses.loss_d.unwrap() > 0.0);
    }
    assert_eq!(out.updates["G"], out.updates["D"]);
}

#[test]
fn cyclegan_updates_each_network_once_per_iteration() {
    let s = spec("cyclegan", false);
    let (f, dx, dy) = cycle_networks(&s).unwrap();
    assert_eq!((f.in_channels, f.out_channels), (1, 1));
    assert_eq!(dx.in_channels, 1);
    assert_eq!(dy.in_channels, 1);

    let out = train(&data(), &s, &short(2)).unwrap();
    let n = out.steps.len();
    assert!(n > 0);
    for key in ["G", "F", "DX", "DY"] {
        assert_eq!(out.updates[key], n, "{key}");
        assert!(out.checkpoint.has_prefix(key));
    }
    for step in &out.steps {
        assert!(step.losses.loss_cycle.unwrap() >= 0.0);
        assert_eq!(step.losses.lambda_cycle, Some(10.0));
    }
}

#[test]
fn attention_variants_train() {
    for attention in [Attention::SelfAttention, Attention::Cbam] {
        let mut s = spec("pix2pix", false);
        s.generator.attention = attention;
        s.generator.attention_placement = vec![2, 3];
        let cfg = TrainConfig {
            max_steps: Some(3),
            ..short(1)
        };
        let out = train(&data(), &s, &cfg).unwrap();
        assert_eq!(out.steps.len(), 3);
        assert!(out.steps.iter().all(|st| st.losses.is_finite()));
    }
}

#[test]
fn logs_and_checkpoints_land_in_the_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..short(2)
    };
    let out = train(&data(), &spec("pix2pix", false), &cfg).unwrap();
    let log = std::fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap();
    let lines: Vec<StepLog> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines, out.steps);
    let first: serde_json::Value = serde_json::from_str(log.lines().next().unwrap()).unwrap();
    for key in ["loss_g_adv", "loss_g_l1", "loss_g_total", "loss_d", "lambda_l1", "lr", "epoch", "step"] {
        assert!(first.get(key).is_some(), "{key}");
    }
    assert!(dir.path().join("epoch_001.wgck").exists());
    assert!(dir.path().join(FINAL_CHECKPOINT).exists());
}

#[test]
fn non_finite_loss_aborts_with_location() {
    let mut d = data();
    d.train[0].flow.data_mut()[5] = f32::NAN;
    let dir = tempfile::tempdir().unwrap();
    let cfg = TrainConfig {
        checkpoint_dir: Some(dir.path().to_path_buf()),
        ..short(3)
    };
    match train(&d, &spec("unet", false), &cfg) {
        Err(Error::NonFiniteLoss { epoch, .. }) => assert_eq!(epoch, 0),
        other => panic!("expected NonFiniteLoss, got {:?}", other.map(|o| o.steps.len())),
    }
    assert!(!std::fs::read_to_string(dir.path().join(TRAIN_LOG)).unwrap().is_empty());
}

#[test]
fn invalid_configs_are_rejected() {
    let d = data();
    for cfg in [
        TrainConfig { batch_size: 0, ..short(1) },
        TrainConfig { decay_epochs: 5, ..short(1) },
        TrainConfig { lr: 0.0, ..short(1) },
    ] {
        assert!(matches!(train(&d, &spec("unet", false), &cfg), Err(Error::InvalidConfig(_))));
    }
}
