use proptest::prelude::*;
use windflow_core::checkpoint::{Checkpoint, Normalization};
use windflow_core::eval::{
    cross_evaluate, evaluate, mae, mre, residual_map, residual_png, rmse, write_evaluation, Scores, Split, MRE_GUARD,
    METRICS_FILE, PER_SAMPLE_FILE,
};
use windflow_core::floworacle::{generate, FamilySpec, GeneratedDataset, SolverConfig};
use windflow_core::nets::{build_generator, init_rng, GeneratorSpec, ModelSpec};
use windflow_core::raster::{ChannelTag, Family, FieldGrid};
use windflow_core::Error;

#[test]
fn metric_fixtures() {
    let y = [0.0, 0.0, 1.0, 1.0];
    let yhat = [0.0, 1.0, 1.0, 0.0];
    assert_eq!(mae(&y, &yhat).unwrap(), 0.5);
    assert!((rmse(&y, &yhat).unwrap() - 0.5f64.sqrt()).abs() < 1e-15);

    let y = [0.5, 1.0, 0.01];
    let yhat = [0.55, 0.9, 0.9];
    // the last pixel sits under the guard
    assert!((mre(&y, &yhat, MRE_GUARD).unwrap() - 0.1).abs() < 1e-12);
    assert!(matches!(mre(&[0.01, 0.02], &[0.5, 0.5], MRE_GUARD), Err(Error::AllPixelsExcluded)));
    assert!(matches!(mae(&[], &[]), Err(Error::EmptyBatch)));
    assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
}

#[test]
fn perfect_prediction_scores_zero() {
    let y: Vec<f64> = (0..100).map(|i| i as f64 / 100.0).collect();
    let s = Scores::compute(&y, &y).unwrap();
    assert_eq!((s.mae, s.rmse, s.mre), (0.0, 0.0, 0.0));
    assert_eq!(s.pixels, 100);
    assert_eq!(s.mre_excluded_pixels, 5);
}

proptest! {
    #[test]
    fn rmse_bounds_mae(pairs in proptest::collection::vec((0.0f64..1.0, 0.0f64..1.0), 1..200)) {
        let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let (a, r) = (mae(&y, &yhat).unwrap(), rmse(&y, &yhat).unwrap());
        prop_assert!(r + 1e-12 >= a);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn mre_is_scale_invariant(pairs in proptest::collection::vec((0.1f64..1.0, 0.0f64..1.0), 1..100), k in 0.5f64..20.0) {
        let (y, yhat): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let ys: Vec<f64> = y.iter().map(|v| v * k).collect();
        let ps: Vec<f64> = yhat.iter().map(|v| v * k).collect();
        let a = mre(&y, &yhat, 0.05).unwrap();
        let b = mre(&ys, &ps, 0.05 * k).unwrap();
        prop_assert!((a - b).abs() <= 1e-9 * a.max(1.0));
        let m = mae(&ys, &ps).unwrap() / k;
        prop_assert!((m - mae(&y, &yhat).unwrap()).abs() <= 1e-9);
    }

    #[test]
    fn residual_mean_is_mae(values in proptest::collection::vec((0.0f32..1.0, 0.0f32..1.0), 16)) {
        let (y, yhat): (Vec<f32>, Vec<f32>) = values.into_iter().unzip();
        let gy = FieldGrid::from_plane(4, 4, ChannelTag::Velocity, y.clone(), 1.0).unwrap();
        let gp = FieldGrid::from_plane(4, 4, ChannelTag::Velocity, yhat.clone(), 1.0).unwrap();
        let res = residual_map(&gy, &gp).unwrap();
        let as64 = |v: &[f32]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
        let expected = mae(&as64(&y), &as64(&yhat)).unwrap();
        prop_assert!((res.meta.mean.unwrap() - expected).abs() < 1e-6);
        prop_assert!(res.data().iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn residual_rejects_mismatched_shapes_and_renders() {
    let a = FieldGrid::zeros(4, 4, vec![ChannelTag::Velocity], 1.0);
    let b = FieldGrid::zeros(4, 5, vec![ChannelTag::Velocity], 1.0);
    assert!(matches!(residual_map(&a, &b), Err(Error::Shape(_))));
    let png = residual_png(&residual_map(&a, &a).unwrap(), 0.0).unwrap();
    assert_eq!(&png[1..4], b"PNG");
}

fn dataset(family: Family, seed: u64) -> GeneratedDataset {
    let cfg = SolverConfig {
        n: 32,
        ..SolverConfig::default()
    };
    generate(&FamilySpec::new(family, 5, seed), &cfg).unwrap()
}

fn untrained(on: &GeneratedDataset, seed: u64) -> Checkpoint {
    let mut g = GeneratorSpec::unet(1, 1);
    g.base_filters = 4;
    g.depth = 4;
    let model = build_generator::<f32>(&g, &mut init_rng(seed, 10)).unwrap();
    let spec = ModelSpec {
        arch: "unet".into(),
        generator: g,
        discriminator: None,
    };
    let mut ckpt = Checkpoint::new(spec, Normalization::from_manifest(&on.manifest), 0, seed, &on.manifest.name);
    ckpt.add_model("G", &model);
    ckpt
}

#[test]
fn evaluation_reports_splits_seeds_and_provenance() {
    let two = dataset(Family::Two, 1);
    let wall = dataset(Family::Wall, 2);
    let ckpts: Vec<Checkpoint> = (0..3).map(|s| untrained(&two, s)).collect();

    let test = evaluate(&ckpts, &two.manifest, &two.samples, Split::Test).unwrap();
    assert_eq!(test.report.samples, two.manifest.split().1.len());
    assert_eq!(test.per_sample.len(), test.report.samples);
    assert_eq!(test.report.per_seed.len(), 3);
    assert_eq!(test.report.units, "fraction_of_v_max");
    let maes: Vec<f64> = test.report.per_seed.iter().map(|s| s.scores.mae).collect();
    let mean = maes.iter().sum::<f64>() / 3.0;
    let std = (maes.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / 2.0).sqrt();
    assert!((test.report.mae - mean).abs() < 1e-12);
    assert!((test.report.mae_std - std).abs() < 1e-12);
    assert!(test.report.rmse >= test.report.mae);

    let cross = cross_evaluate(&ckpts[..1], &wall.manifest, &wall.samples).unwrap();
    assert_eq!(cross.report.samples, 5);
    assert_eq!(cross.report.split, Split::All);
    assert_eq!(cross.report.trained_on, two.manifest.name);
    assert_eq!(cross.report.dataset, wall.manifest.name);
    assert_eq!((cross.report.source_family, cross.report.target_family), (Family::Two, Family::Wall));
    assert_eq!(cross.report.mae_std, 0.0);

    let mut with_height = wall.manifest.clone();
    with_height.channel_schema = vec![ChannelTag::Mask, ChannelTag::Height, ChannelTag::Velocity];
    assert!(matches!(cross_evaluate(&ckpts, &with_height, &wall.samples), Err(Error::SpecMismatch(_))));
    assert!(matches!(evaluate(&[], &two.manifest, &two.samples, Split::All), Err(Error::EmptyBatch)));

    let dir = tempfile::tempdir().unwrap();
    write_evaluation(dir.path(), &cross).unwrap();
    let json: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join(METRICS_FILE)).unwrap()).unwrap();
    assert_eq!(json["trained_on"], two.manifest.name.as_str());
    assert_eq!(json["target_family"], "wall");
    let csv = std::fs::read_to_string(dir.path().join(PER_SAMPLE_FILE)).unwrap();
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with("sample_id,mae,rmse,mre"));
}

#[test]
fn split_names_parse() {
    assert_eq!("test".parse::<Split>().unwrap(), Split::Test);
    assert_eq!("all".parse::<Split>().unwrap(), Split::All);
    assert!("val".parse::<Split>().is_err());
}
