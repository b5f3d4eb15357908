use std::collections::BTreeMap;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};
use windflow_core::checkpoint::{save_checkpoint, Checkpoint, Normalization};
use windflow_core::comfort::WindRose;
use windflow_core::nets::{build_generator, init_rng, GeneratorSpec, ModelSpec};
use windflow_core::raster::{decode_wgf, encode_wgf, ChannelTag, Family, FieldGrid};
use windflow_serve::{bind, serve_until, ComfortResponse, HealthResponse, PredictResponse, ServiceConfig, INFERENCE_HEADER};

const N: usize = 32;

struct Server {
    base: String,
    _rt: tokio::runtime::Runtime,
    _dir: tempfile::TempDir,
}

fn write_model(path: &Path, family: Family) {
    let channels = family.geometry_channels();
    let mut g = GeneratorSpec::unet(channels.len(), 1);
    g.base_filters = 4;
    g.depth = 4;
    let model = build_generator::<f32>(&g, &mut init_rng(2, 10)).unwrap();
    let norm = Normalization {
        family,
        geometry_channels: channels,
        size: N,
        extent_m: 200.0,
        v_max: 8.0,
        v_ref: 5.0,
        max_height: 40.0,
        n_bins: 20,
    };
    let spec = ModelSpec {
        arch: "unet".into(),
        generator: g,
        discriminator: None,
    };
    let mut ckpt = Checkpoint::new(spec, norm, 1, 2, &format!("{family}-desk"));
    ckpt.add_model("G", &model);
    save_checkpoint(path, &ckpt).unwrap();
}

fn start() -> Server {
    let dir = tempfile::tempdir().unwrap();
    let mut models = BTreeMap::new();
    for (name, family) in [("two", Family::Two), ("height", Family::TwoHeight)] {
        let path = dir.path().join(format!("{name}.wgck"));
        write_model(&path, family);
        models.insert(name.to_string(), path);
    }
    let cfg = ServiceConfig {
        bind: "127.0.0.1:0".into(),
        models,
        max_size: 256,
        timeout_s: 30,
    };
    let rt = tokio::runtime::Runtime::new().unwrap();
    let (listener, app) = rt.block_on(bind(&cfg)).unwrap();
    let addr = listener.local_addr().unwrap();
    rt.spawn(serve_until(listener, app, std::future::pending()));
    Server {
        base: format!("http://{addr}"),
        _rt: rt,
        _dir: dir,
    }
}

fn scene() -> Value {
    json!({"extent": 200.0, "buildings": [
        {"polygon": [[60.0, 60.0], [110.0, 60.0], [110.0, 100.0], [60.0, 100.0]], "height": 20.0},
        {"polygon": [[120.0, 120.0], [150.0, 120.0], [150.0, 170.0]], "height": 30.0}
    ]})
}

#[test]
fn health_lists_models() {
    let s = start();
    let r = Client::new().get(format!("{}/health", s.base)).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    let h: HealthResponse = r.json().unwrap();
    assert_eq!(h.status, "ok");
    assert_eq!(h.models, ["height", "two"]);
    assert_eq!(h.model_info[1].spec_hash.len(), 64);
    assert!(h.uptime_s >= 0.0);
    assert_eq!(Client::new().get(format!("{}/nope", s.base)).send().unwrap().status(), StatusCode::NOT_FOUND);
}

#[test]
fn predict_contract() {
    let s = start();
    let c = Client::new();
    let post = |body: Value| c.post(format!("{}/predict", s.base)).json(&body).send().unwrap();

    let empty = post(json!({"model": "two", "scene": {"extent": 200.0}, "direction_sector": 6}));
    assert_eq!(empty.status(), StatusCode::OK);
    assert!(empty.headers().get(INFERENCE_HEADER).is_some());
    let body: PredictResponse = empty.json().unwrap();
    assert_eq!((body.height, body.width, body.sector.as_str()), (N, N, "W"));
    let rec = decode_wgf(&B64.decode(&body.flow).unwrap()).unwrap();
    assert_eq!((rec.geometry_channels, rec.flow_channels), (0, 1));
    assert!(rec.flow.iter().all(|v| (0.0..=8.0).contains(v)));
    assert_eq!(&B64.decode(&body.png).unwrap()[1..4], b"PNG");

    let req = json!({"model": "two", "scene": scene(), "direction_sector": "NE"});
    let a = post(req.clone()).bytes().unwrap();
    let b = post(req).bytes().unwrap();
    assert_eq!(a, b);

    // raster input gives the same answer as the scene it came from
    let by_scene: PredictResponse = post(json!({"model": "height", "scene": scene(), "direction_sector": 2})).json().unwrap();
    let geometry = windflow_core::raster::rasterize(&serde_json::from_value(scene()).unwrap(), N, true).unwrap();
    let blob = B64.encode(encode_wgf(Some(&geometry), None).unwrap());
    let by_raster: PredictResponse = post(json!({"model": "height", "geometry": blob, "direction_sector": 2})).json().unwrap();
    assert_eq!(by_scene.flow, by_raster.flow);

    assert_eq!(post(json!({"model": "two", "scene": scene(), "direction_sector": 8})).status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(json!({"model": "two", "scene": scene(), "direction_sector": "NNE"})).status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(json!({"model": "ghost", "scene": scene()})).status(), StatusCode::NOT_FOUND);
    let bad_scene = json!({"extent": 200.0, "buildings": [{"polygon": [[0.0, 0.0], [10.0, 0.0]], "height": 5.0}]});
    assert_eq!(post(json!({"model": "two", "scene": bad_scene})).status(), StatusCode::BAD_REQUEST);
    assert_eq!(post(json!({"model": "two"})).status(), StatusCode::BAD_REQUEST);
    let raw = c.post(format!("{}/predict", s.base)).body("{not json").send().unwrap();
    assert_eq!(raw.status(), StatusCode::BAD_REQUEST);
    let err: Value = raw.json().unwrap();
    assert!(err["error"].as_str().unwrap().contains("malformed"));

    let big = FieldGrid::zeros(512, 512, vec![ChannelTag::Mask], 200.0);
    let blob = B64.encode(encode_wgf(Some(&big), None).unwrap());
    assert_eq!(post(json!({"model": "two", "geometry": blob})).status(), StatusCode::PAYLOAD_TOO_LARGE);
    let wrong = FieldGrid::zeros(N, N, vec![ChannelTag::Mask], 200.0);
    let blob = B64.encode(encode_wgf(Some(&wrong), None).unwrap());
    assert_eq!(post(json!({"model": "height", "geometry": blob})).status(), StatusCode::UNPROCESSABLE_ENTITY);
}

#[test]
fn comfort_contract() {
    let s = start();
    let c = Client::new();
    let post = |body: Value| c.post(format!("{}/comfort", s.base)).json(&body).send().unwrap();

    let calm = post(json!({"model": "two", "scene": scene(), "windrose": WindRose::calm()}));
    assert_eq!(calm.status(), StatusCode::OK);
    let body: ComfortResponse = calm.json().unwrap();
    assert_eq!(body.histogram[0] + body.no_data, N * N);
    assert_eq!(body.histogram[1..], [0, 0, 0, 0]);
    let prov = body.provenance.unwrap();
    assert_eq!(prov.criteria.thresholds_ms, [2.5, 4.0, 6.0, 8.0]);
    assert_eq!(prov.criteria.p_exc, 0.05);
    assert_eq!(body.legend.len(), 5);
    assert_eq!(body.classes.len(), N * N);

    let rose = json!({
        "sectors": ["N", "NE", "E", "SE", "S", "SW", "W", "NW"],
        "bin_edges_ms": [3.0, 6.0, 10.0],
        "freq": [[0.05, 0.04, 0.01], [0.05, 0.04, 0.01], [0.05, 0.04, 0.01], [0.05, 0.04, 0.01],
                 [0.05, 0.04, 0.01], [0.05, 0.04, 0.01], [0.1, 0.15, 0.05], [0.05, 0.04, 0.01]]
    });
    let req = json!({"model": "two", "scene": scene(), "windrose": rose, "criteria": {"thresholds_ms": [2.0, 3.0, 5.0, 7.0], "p_exc": 0.1}});
    let a = post(req.clone());
    assert_eq!(a.status(), StatusCode::OK);
    let a = a.bytes().unwrap();
    assert_eq!(a, post(req).bytes().unwrap());
    let body: ComfortResponse = serde_json::from_slice(&a).unwrap();
    assert_eq!(body.provenance.unwrap().criteria.p_exc, 0.1);

    let mut unnormalized = WindRose::calm();
    unnormalized.freq[0][0] = 0.9;
    assert_eq!(post(json!({"model": "two", "scene": scene(), "windrose": unnormalized})).status(), StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(post(json!({"model": "ghost", "scene": scene(), "windrose": WindRose::calm()})).status(), StatusCode::NOT_FOUND);
    assert_eq!(post(json!({"model": "two", "scene": scene()})).status(), StatusCode::BAD_REQUEST);
}

#[test]
fn concurrent_identical_requests_agree() {
    let s = start();
    let req = json!({"model": "two", "scene": scene(), "direction_sector": 1});
    let bodies: Vec<Vec<u8>> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..4)
            .map(|_| {
                let (base, req) = (&s.base, req.clone());
                scope.spawn(move || Client::new().post(format!("{base}/predict")).json(&req).send().unwrap().bytes().unwrap().to_vec())
            })
            .collect();
        handles.into_iter().map(|h| h.join().unwrap()).collect()
    });
    assert!(bodies.windows(2).all(|w| w[0] == w[1]));
}

#[test]
fn config_validation() {
    assert!(ServiceConfig::default().validate().is_err());
    let mut cfg = ServiceConfig::default();
    cfg.models.insert("m".into(), "m.wgck".into());
    assert!(cfg.validate().is_ok());
    cfg.max_size = 128;
    assert!(cfg.validate().is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("service.json");
    std::fs::write(&path, r#"{"models": {"a": "a.wgck"}, "max_size": 256}"#).unwrap();
    let read = ServiceConfig::from_file(&path).unwrap();
    assert_eq!((read.max_size, read.timeout_s), (256, 60));
    std::fs::write(&path, r#"{"models": {}}"#).unwrap();
    assert!(ServiceConfig::from_file(&path).is_err());
}
