use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use windflow_core::checkpoint::{load_checkpoint, load_checkpoint_for, save_checkpoint, Checkpoint, Normalization, CHECKPOINT_MAGIC};
use windflow_core::nets::{build_discriminator, build_generator, init_rng, DiscriminatorSpec, GeneratorSpec, ModelSpec};
use windflow_core::predict::Predictor;
use windflow_core::raster::{ChannelTag, Family, FieldGrid};
use windflow_core::Error;

fn spec(sn: bool) -> ModelSpec {
    let mut g = GeneratorSpec::unet(1, 1);
    g.base_filters = 4;
    g.depth = 4;
    let mut d = DiscriminatorSpec::patchgan(2);
    d.base_filters = 4;
    d.spectral_norm = sn;
    ModelSpec {
        arch: "pix2pix".into(),
        generator: g,
        discriminator: Some(d),
    }
}

fn norm() -> Normalization {
    Normalization {
        family: Family::Two,
        geometry_channels: vec![ChannelTag::Mask],
        size: 32,
        extent_m: 200.0,
        v_max: 8.0,
        v_ref: 5.0,
        max_height: 20.0,
        n_bins: 20,
    }
}

fn checkpoint(sn: bool) -> Checkpoint {
    let s = spec(sn);
    let g = build_generator::<f32>(&s.generator, &mut init_rng(1, 10)).unwrap();
    let mut d = build_discriminator::<f32>(s.discriminator.as_ref().unwrap(), &mut init_rng(1, 11)).unwrap();
    d.power_iteration(&mut init_rng(1, 4)).unwrap();
    let mut ckpt = Checkpoint::new(s, norm(), 3, 1, "two-test");
    ckpt.add_model("G", &g);
    ckpt.add_model("D", &d);
    ckpt
}

fn geometry(seed: u64) -> FieldGrid {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (r0, c0) = (rng.random_range(4..16), rng.random_range(4..16));
    let data = (0..32 * 32)
        .map(|i| ((r0..r0 + 10).contains(&(i / 32)) && (c0..c0 + 8).contains(&(i % 32))) as u8 as f32)
        .collect();
    FieldGrid::from_plane(32, 32, ChannelTag::Mask, data, 200.0).unwrap()
}

#[test]
fn encode_decode_is_lossless() {
    for sn in [false, true] {
        let ckpt = checkpoint(sn);
        let bytes = ckpt.encode().unwrap();
        assert_eq!(&bytes[..4], CHECKPOINT_MAGIC);
        let back = Checkpoint::decode(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.checksum().unwrap(), ckpt.checksum().unwrap());
        assert_eq!(back.header.sn.len(), if sn { 5 } else { 0 });
    }
}

#[test]
fn corruption_is_detected() {
    let bytes = checkpoint(false).encode().unwrap();
    let corrupt = |b: &[u8]| matches!(Checkpoint::decode(b), Err(Error::CorruptCheckpoint(_)));

    let mut bad_magic = bytes.clone();
    bad_magic[0] = b'X';
    assert!(corrupt(&bad_magic));
    assert!(corrupt(&bytes[..bytes.len() - 1]));
    assert!(corrupt(&bytes[..10]));
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(corrupt(&trailing));

    let mut nan = bytes.clone();
    let n = nan.len();
    nan[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
    assert!(corrupt(&nan));

    // a header whose spec no longer matches its hash
    let mut ckpt = checkpoint(false);
    ckpt.header.spec.generator.depth = 5;
    assert!(corrupt(&ckpt.encode().unwrap()));
}

#[test]
fn save_load_gives_identical_inference() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.wgck");
    let ckpt = checkpoint(true);
    save_checkpoint(&path, &ckpt).unwrap();
    let loaded = load_checkpoint(&path).unwrap();
    assert_eq!(loaded, ckpt);

    let before = Predictor::from_checkpoint(&ckpt).unwrap();
    let after = Predictor::load(&path).unwrap();
    for seed in 0..3 {
        let g = geometry(seed);
        assert_eq!(before.predict(&g).unwrap(), after.predict(&g).unwrap());
    }
    assert_eq!(after.trained_on, "two-test");
    assert_eq!(after.spec_hash, spec(true).hash());
}

#[test]
fn loading_against_another_spec_fails() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.wgck");
    save_checkpoint(&path, &checkpoint(false)).unwrap();
    assert!(load_checkpoint_for(&path, &spec(false)).is_ok());
    assert!(matches!(load_checkpoint_for(&path, &spec(true)), Err(Error::SpecMismatch(_))));

    let ckpt = checkpoint(false);
    let mut wider = spec(false).generator;
    wider.base_filters = 8;
    let mut model = build_generator::<f32>(&wider, &mut init_rng(0, 0)).unwrap();
    assert!(matches!(ckpt.load_into("G", &mut model), Err(Error::SpecMismatch(_))));
    assert!(ckpt.has_prefix("D") && !ckpt.has_prefix("F"));
}

#[test]
fn predictor_checks_geometry_channels() {
    let p = Predictor::from_checkpoint(&checkpoint(false)).unwrap();
    let two = FieldGrid::zeros(32, 32, vec![ChannelTag::Mask, ChannelTag::Height], 200.0);
    assert!(matches!(p.predict(&two), Err(Error::SpecMismatch(_))));
    let small = FieldGrid::zeros(8, 8, vec![ChannelTag::Mask], 200.0);
    assert!(p.predict(&small).is_err());
    let speed = p.predict(&geometry(7)).unwrap();
    assert!(speed.data().iter().all(|v| (0.0..=8.0).contains(v)));
}
