use std::sync::OnceLock;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use windflow_core::checkpoint::{Checkpoint, Normalization};
use windflow_core::comfort::{
    classify, comfort_map, exceedance, no_data_mask, predict_at_angle, predict_direction, sector_index, ComfortCriteria,
    WindRose, NO_DATA, SECTORS, TRAINING_SECTOR,
};
use windflow_core::floworacle::{generate, random_scene, FamilySpec, SolverConfig};
use windflow_core::nets::{build_generator, init_rng, GeneratorSpec, ModelSpec};
use windflow_core::predict::Predictor;
use windflow_core::raster::{rasterize, rotate_field, ChannelTag, Family, FieldGrid, Interp};
use windflow_core::train::{train, TrainConfig, TrainData};
use windflow_core::Error;

const N: usize = 32;

fn predictor(sdf: bool) -> Predictor {
    let mut g = GeneratorSpec::unet(1, 1);
    g.base_filters = 4;
    g.depth = 4;
    g.sdf_channel = sdf;
    let model = build_generator::<f32>(&g, &mut init_rng(3, 10)).unwrap();
    let spec = ModelSpec {
        arch: "unet".into(),
        generator: g,
        discriminator: None,
    };
    let norm = Normalization {
        family: Family::Two,
        geometry_channels: vec![ChannelTag::Mask],
        size: N,
        extent_m: 200.0,
        v_max: 8.0,
        v_ref: 5.0,
        max_height: 20.0,
        n_bins: 20,
    };
    let mut ckpt = Checkpoint::new(spec, norm, 1, 3, "two-test");
    ckpt.add_model("G", &model);
    Predictor::from_checkpoint(&ckpt).unwrap()
}

/// A briefly trained generator, so predictions carry wakes rather than the
/// near-uniform output of random weights.
fn trained(sdf: bool) -> &'static Predictor {
    static CELLS: [OnceLock<Predictor>; 2] = [OnceLock::new(), OnceLock::new()];
    CELLS[sdf as usize].get_or_init(|| {
        let cfg = SolverConfig {
            n: N,
            ..SolverConfig::default()
        };
        let data = generate(&FamilySpec::new(Family::Two, 6, 21), &cfg).unwrap();
        let mut g = GeneratorSpec::unet(1, 1);
        g.base_filters = 8;
        g.depth = 4;
        g.sdf_channel = sdf;
        let spec = ModelSpec {
            arch: "unet".into(),
            generator: g,
            discriminator: None,
        };
        let tc = TrainConfig {
            epochs: 25,
            decay_epochs: 0,
            lr: 1e-3,
            ..TrainConfig::default()
        };
        let out = train(&TrainData::from_dataset(&data.manifest, &data.samples), &spec, &tc).unwrap();
        Predictor::from_checkpoint(&out.checkpoint).unwrap()
    })
}

fn scene(seed: u64) -> FieldGrid {
    let spec = FamilySpec::new(Family::Two, 1, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rasterize(&random_scene(&spec, &mut rng, N).unwrap(), N, false).unwrap()
}

/// Frequencies fall off with bin speed, as in a real climate, with random
/// per-cell jitter and per-sector weight.
fn random_rose(rng: &mut ChaCha8Rng) -> WindRose {
    const PROFILE: [f64; 5] = [0.5, 0.35, 0.1, 0.04, 0.01];
    let mut rose = WindRose::single(0, vec![2.0, 4.0, 6.0, 8.0, 12.0], 0);
    for row in &mut rose.freq {
        let weight = rng.random_range(0.2..1.0);
        for (f, p) in row.iter_mut().zip(PROFILE) {
            *f = weight * p * rng.random_range(0.5..1.5);
        }
    }
    let total: f64 = rose.freq.iter().flatten().sum();
    rose.freq.iter_mut().flatten().for_each(|f| *f /= total);
    rose
}

fn constant(speed: f32) -> FieldGrid {
    FieldGrid::from_plane(4, 4, ChannelTag::Velocity, vec![speed; 16], 10.0).unwrap()
}

#[test]
fn exceedance_and_class_fixtures() {
    // all wind from W at a bin whose midpoint equals the reference speed
    let rose = WindRose::single(TRAINING_SECTOR, vec![10.0], 0);
    let speeds: Vec<FieldGrid> = (0..8).map(|_| constant(4.0)).collect();
    let criteria = ComfortCriteria::default();
    let maps: Vec<FieldGrid> = criteria.thresholds_ms.iter().map(|&t| exceedance(&speeds, &rose, t, 5.0).unwrap()).collect();
    let firsts: Vec<f32> = maps.iter().map(|m| m.data()[0]).collect();
    assert_eq!(firsts, [1.0, 0.0, 0.0, 0.0]);
    assert_eq!(maps[0].channels(), [ChannelTag::Probability]);
    let map = classify(&maps, &criteria, None).unwrap();
    assert!(map.classes.iter().all(|&c| c == 1));
    assert_eq!(map.histogram(), [0, 16, 0, 0, 0]);

    // exactly p_exc of the time above 2.5 m/s stays in the lower class
    let mut rose = WindRose::single(TRAINING_SECTOR, vec![2.0, 10.0], 0);
    rose.freq[TRAINING_SECTOR] = vec![0.95, 0.05];
    let maps: Vec<FieldGrid> = criteria.thresholds_ms.iter().map(|&t| exceedance(&speeds, &rose, t, 5.0).unwrap()).collect();
    assert!(classify(&maps, &criteria, None).unwrap().classes.iter().all(|&c| c == 0));

    let wrong = ComfortCriteria {
        thresholds_ms: vec![2.5, 4.0, 6.0],
        ..ComfortCriteria::default()
    };
    assert!(matches!(classify(&maps[..3], &wrong, None), Err(Error::InvalidConfig(_))));
    assert!(matches!(classify(&maps[..3], &criteria, None), Err(Error::CriteriaShapeMismatch(_))));
}

#[test]
fn exceedance_never_grows_with_the_threshold() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..20 {
        let rose = random_rose(&mut rng);
        let speeds: Vec<FieldGrid> = (0..8)
            .map(|_| FieldGrid::from_plane(4, 4, ChannelTag::Velocity, (0..16).map(|_| rng.random_range(0.0..8.0)).collect(), 1.0).unwrap())
            .collect();
        let mut prev = exceedance(&speeds, &rose, 0.0, 5.0).unwrap();
        for t in 1..40 {
            let next = exceedance(&speeds, &rose, t as f64 * 0.5, 5.0).unwrap();
            assert!(next.data().iter().zip(prev.data()).all(|(n, p)| n <= p));
            assert!(next.data().iter().all(|&p| (0.0..=1.0 + 1e-6).contains(&p)));
            prev = next;
        }
    }
}

#[test]
fn stronger_climate_never_improves_comfort() {
    let p = trained(false);
    let g = scene(4);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let rose = random_rose(&mut rng);
    let criteria = ComfortCriteria::default();
    let base = comfort_map(p, &g, &rose, &criteria).unwrap();
    let mut windier = rose.clone();
    windier.bin_edges_ms.iter_mut().for_each(|e| *e *= 1.5);
    let worse = comfort_map(p, &g, &windier, &criteria).unwrap();
    for (a, b) in base.classes.iter().zip(&worse.classes) {
        if *a != NO_DATA {
            assert!(b >= a);
        }
    }
    assert_ne!(base.classes, worse.classes);
}

#[test]
fn calm_rose_is_sitting_everywhere() {
    let p = predictor(false);
    let g = scene(1);
    let map = comfort_map(&p, &g, &WindRose::calm(), &ComfortCriteria::default()).unwrap();
    let buildings = g.data().iter().filter(|&&v| v != 0.0).count();
    assert_eq!(map.no_data(), buildings);
    assert_eq!(map.histogram()[0], N * N - buildings);
}

#[test]
fn single_sector_rose_gives_certain_exceedance() {
    let p = predictor(false);
    let g = scene(2);
    for sector in [0, 3, TRAINING_SECTOR] {
        let rose = WindRose::single(sector, vec![4.0, 8.0, 12.0], 2);
        let speeds: Vec<FieldGrid> = (0..8)
            .map(|s| if s == sector { predict_direction(&p, &g, s).unwrap() } else { FieldGrid::zeros(N, N, vec![ChannelTag::Velocity], 200.0) })
            .collect();
        for t in [2.5, 4.0, 6.0, 8.0] {
            let e = exceedance(&speeds, &rose, t, p.normalization.v_ref).unwrap();
            assert!(e.data().iter().all(|&v| v == 0.0 || v == 1.0));
        }
    }
}

#[test]
fn quarter_turn_equivariance_on_random_scenes() {
    let criteria = ComfortCriteria::default();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for sdf in [false, true] {
        let p = trained(sdf);
        for seed in 0..5 {
            let g = scene(100 + seed + 10 * sdf as u64);
            let rose = random_rose(&mut rng);
            let map = comfort_map(p, &g, &rose, &criteria).unwrap();
            let turned = rotate_field(&g, 90, Interp::Nearest).unwrap();
            let turned_map = comfort_map(p, &turned, &rose.co_rotated(1), &criteria).unwrap();
            assert_eq!(turned_map.classes, map.quarter_turned().classes, "scene {seed}, sdf {sdf}");
            let counts = map.histogram();
            assert!(counts.iter().filter(|&&c| c > 0).count() >= 2, "{counts:?}");
        }
    }
}

#[test]
fn provenance_and_masks() {
    let p = predictor(false);
    let g = scene(5);
    let rose = WindRose::single(1, vec![6.0], 0);
    let map = comfort_map(&p, &g, &rose, &ComfortCriteria::default()).unwrap();
    let prov = map.provenance.as_ref().unwrap();
    assert_eq!(prov.spec_hash, p.spec_hash);
    assert_eq!(prov.model, "unet@two-test");
    // a diagonal sector loses the frame corners
    assert_eq!(map.classes[0], NO_DATA);
    let straight = no_data_mask(&g, &WindRose::single(TRAINING_SECTOR, vec![6.0], 0)).unwrap();
    assert!(!straight[0]);
    let sidecar = map.sidecar();
    assert_eq!(sidecar.histogram.iter().sum::<usize>() + sidecar.no_data, N * N);
    assert_eq!(&map.to_png().unwrap()[1..4], b"PNG");
}

#[test]
fn angles_and_sectors() {
    let p = predictor(false);
    let g = scene(6);
    assert!(matches!(predict_at_angle(&p, &g, 30), Err(Error::UnsupportedAngle(30))));
    assert_eq!(predict_at_angle(&p, &g, 0).unwrap(), p.predict(&g).unwrap());
    assert_eq!(predict_direction(&p, &g, TRAINING_SECTOR).unwrap(), p.predict(&g).unwrap());
    assert_eq!(predict_at_angle(&p, &g, 360).unwrap(), p.predict(&g).unwrap());
    assert!(predict_direction(&p, &g, 8).is_err());
    assert_eq!(sector_index("nw").unwrap(), 7);
    assert_eq!(SECTORS[sector_index("W").unwrap()], "W");

    let mut bad = WindRose::calm();
    bad.freq[0][0] = 0.5;
    assert!(matches!(comfort_map(&p, &g, &bad, &ComfortCriteria::default()), Err(Error::UnnormalizedRose(_))));
}
