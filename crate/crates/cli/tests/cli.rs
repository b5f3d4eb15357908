use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use serde_json::Value;
use tempfile::TempDir;

fn windflow(cwd: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_windflow")).current_dir(cwd).args(args).output().unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().unwrap()
}

fn json_of(out: &Output) -> Value {
    assert_eq!(code(out), 0, "stderr: {}", String::from_utf8_lossy(&out.stderr));
    serde_json::from_slice(&out.stdout).expect("stdout is one JSON document")
}

/// Two small datasets and a trained unet shared by the tests.
struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn path(&self, rel: &str) -> PathBuf {
        self.dir.path().join(rel)
    }
}

fn fixture() -> &'static Fixture {
    static FIX: OnceLock<Fixture> = OnceLock::new();
    FIX.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path();
        for (family, out) in [("two", "two"), ("wall", "wall")] {
            let o = windflow(p, &["gen-data", "--family", family, "--count", "5", "--seed", "4", "--size", "32", "--out", out]);
            assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        }
        let o = windflow(p, &["train", "--arch", "unet", "--data", "two", "--epochs", "2", "--base-filters", "4", "--out", "unet"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::write(
            p.join("scene.json"),
            r#"{"extent": 200.0, "buildings": [{"polygon": [[60,60],[110,60],[110,100],[60,100]], "height": 20.0}]}"#,
        )
        .unwrap();
        std::fs::write(
            p.join("rose.json"),
            r#"{"sectors": ["N","NE","E","SE","S","SW","W","NW"], "bin_edges_ms": [3.0, 6.0, 10.0],
                "freq": [[0.05,0.04,0.01],[0.05,0.04,0.01],[0.05,0.04,0.01],[0.05,0.04,0.01],
                         [0.05,0.04,0.01],[0.05,0.04,0.01],[0.1,0.15,0.05],[0.05,0.04,0.01]]}"#,
        )
        .unwrap();
        Fixture { dir }
    })
}

fn tree_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    files.sort();
    files
}

#[test]
fn gen_data_is_reproducible_and_validates_the_family() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let a = json_of(&windflow(p, &["--json", "gen-data", "--family", "two", "--count", "3", "--seed", "1", "--size", "32", "--out", "a"]));
    assert_eq!(a["samples"], 3);
    assert_eq!(a["family"], "two");
    windflow(p, &["gen-data", "--family", "two", "--count", "3", "--seed", "1", "--size", "32", "--out", "b"]);
    assert_eq!(tree_bytes(&p.join("a")), tree_bytes(&p.join("b")));
    assert_eq!(tree_bytes(&p.join("a")).len(), 4);

    let bad = windflow(p, &["gen-data", "--family", "castle", "--count", "3", "--out", "c"]);
    assert_eq!(code(&bad), 1);
    assert!(String::from_utf8_lossy(&bad.stderr).contains("--family"));
    assert!(!p.join("c").exists());
}

#[test]
fn outputs_are_never_overwritten_without_force() {
    let tmp = tempfile::tempdir().unwrap();
    let p = tmp.path();
    let args = ["gen-data", "--family", "wall", "--count", "2", "--size", "32", "--out", "d"];
    assert_eq!(code(&windflow(p, &args)), 0);
    let before = tree_bytes(&p.join("d"));
    let again = windflow(p, &args);
    assert_eq!(code(&again), 1);
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    assert_eq!(tree_bytes(&p.join("d")), before);
    let forced: Vec<&str> = std::iter::once("--force").chain(args).collect();
    assert_eq!(code(&windflow(p, &forced)), 0);

    let f = fixture();
    let ev = ["eval", "--checkpoint", "unet/checkpoint.wgck", "--data", "two"];
    let out = p.join("ev");
    let out = out.to_str().unwrap();
    assert_eq!(code(&windflow(f.dir.path(), &[&ev[..], &["--out", out]].concat())), 0);
    assert_eq!(code(&windflow(f.dir.path(), &[&ev[..], &["--out", out]].concat())), 1);
    assert_eq!(code(&windflow(f.dir.path(), &[&ev[..], &["--out", out, "--force"]].concat())), 0);
}

#[test]
fn train_guards_and_composition() {
    let f = fixture();
    assert!(f.path("unet/checkpoint.wgck").is_file());
    assert!(f.path("unet/train_log.jsonl").is_file());
    let summary: Value = serde_json::from_slice(&std::fs::read(f.path("unet/train_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["steps"], 8);
    assert_eq!(summary["spec"]["generator"]["depth"], 5);

    let tmp = tempfile::tempdir().unwrap();
    let data = f.path("two");
    let data = data.to_str().unwrap();
    let sn = windflow(tmp.path(), &["train", "--arch", "unet", "--sn", "--data", data, "--out", "x"]);
    assert_eq!(code(&sn), 1);
    assert!(String::from_utf8_lossy(&sn.stderr).contains("--sn"));

    let cbam = json_of(&windflow(
        tmp.path(),
        &["--json", "train", "--arch", "pix2pix", "--attention", "cbam", "--att-place", "G", "--data", data, "--base-filters", "4", "--epochs", "1", "--max-steps", "1", "--out", "cbam"],
    ));
    assert_eq!(cbam["spec"]["generator"]["attention"], "cbam");
    assert_eq!(cbam["spec"]["discriminator"]["attention"], "none");
    assert_eq!(cbam["updates"]["G"], 1);

    let missing = windflow(tmp.path(), &["train", "--arch", "unet", "--data", "nowhere", "--out", "y"]);
    assert_eq!(code(&missing), 1);
    assert!(String::from_utf8_lossy(&missing.stderr).contains("nowhere"));
}

#[test]
fn eval_and_cross_eval_report_metrics() {
    let f = fixture();
    let p = f.dir.path();
    let out = windflow(p, &["--json", "eval", "--checkpoint", "unet/checkpoint.wgck", "--data", "two"]);
    let report = json_of(&out);
    for key in ["mae", "rmse", "mre"] {
        assert!(report[key].as_f64().unwrap() > 0.0);
    }
    assert_eq!(report["split"], "test");

    let human = windflow(p, &["eval", "--checkpoint", "unet/checkpoint.wgck", "--data", "two", "--split", "all"]);
    let text = String::from_utf8(human.stdout).unwrap();
    assert!(text.contains("mae") && text.contains("5 samples"));

    let cross = json_of(&windflow(p, &["--json", "cross-eval", "--checkpoint", "unet/checkpoint.wgck", "--data", "wall"]));
    assert_eq!(cross["source_family"], "two");
    assert_eq!(cross["target_family"], "wall");
    assert_eq!(cross["samples"], 5);
}

#[test]
fn predict_and_comfort_write_their_files() {
    let f = fixture();
    let p = f.dir.path();
    let tmp = tempfile::tempdir().unwrap();
    let out = |name: &str| tmp.path().join(name).to_string_lossy().into_owned();

    let pr = json_of(&windflow(p, &["--json", "predict", "--checkpoint", "unet/checkpoint.wgck", "--scene", "scene.json", "--sector", "NE", "--out", &out("pr")]));
    assert_eq!(pr["sector"], "NE");
    assert_eq!(pr["height"], 32);
    assert_eq!(&std::fs::read(tmp.path().join("pr/flow.png")).unwrap()[1..4], b"PNG");
    assert!(tmp.path().join("pr/flow.wgf").is_file());

    let by_raster = json_of(&windflow(p, &["--json", "predict", "--checkpoint", "unet/checkpoint.wgck", "--geometry", "two/000000.wgf", "--sector", "6", "--out", &out("pr2")]));
    assert_eq!(by_raster["sector"], "W");
    let both = windflow(p, &["predict", "--checkpoint", "unet/checkpoint.wgck", "--scene", "scene.json", "--geometry", "two/000000.wgf", "--out", &out("pr3")]);
    assert_eq!(code(&both), 1);
    assert_eq!(code(&windflow(p, &["predict", "--checkpoint", "unet/checkpoint.wgck", "--scene", "scene.json", "--sector", "9", "--out", &out("pr4")])), 1);

    let cf = json_of(&windflow(p, &["--json", "comfort", "--checkpoint", "unet/checkpoint.wgck", "--scene", "scene.json", "--windrose", "rose.json", "--out", &out("cf")]));
    let total: u64 = cf["histogram"].as_array().unwrap().iter().map(|v| v.as_u64().unwrap()).sum::<u64>() + cf["no_data"].as_u64().unwrap();
    assert_eq!(total, 32 * 32);
    assert_eq!(&std::fs::read(tmp.path().join("cf/comfort.png")).unwrap()[1..4], b"PNG");
    let sidecar: Value = serde_json::from_slice(&std::fs::read(tmp.path().join("cf/comfort.json")).unwrap()).unwrap();
    assert_eq!(sidecar["legend"].as_array().unwrap().len(), 5);
}

#[test]
fn json_errors_are_single_documents() {
    let tmp = tempfile::tempdir().unwrap();
    let out = windflow(tmp.path(), &["--json", "eval", "--checkpoint", "ghost.wgck", "--data", "nowhere"]);
    assert_eq!(code(&out), 1);
    let err: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(err["exit_code"], 1);
    assert!(err["error"].as_str().unwrap().contains("ghost.wgck"));
    assert_eq!(code(&windflow(tmp.path(), &["--help"])), 0);
    assert_eq!(code(&windflow(tmp.path(), &[])), 1);
}

#[test]
fn ablate_writes_a_table() {
    let f = fixture();
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("ab").to_string_lossy().into_owned();
    let table = json_of(&windflow(
        f.dir.path(),
        &["--json", "ablate", "--table", "sn", "--data", "two", "--seeds", "2", "--jobs", "2", "--epochs", "1", "--max-steps", "2", "--base-filters", "4", "--out", &out],
    ));
    assert_eq!(table["seeds"], serde_json::json!([0, 1]));
    assert_eq!(table["columns"], serde_json::json!(["pix2pix", "pix2pix_sn"]));
    let cells = table["cells"].as_array().unwrap();
    assert_eq!(cells.len(), 2);
    assert_ne!(cells[0]["spec_hash"], cells[1]["spec_hash"]);
    assert!(table["improvement_pct"]["mae"].is_number());
    assert!(tmp.path().join("ab/table.json").is_file());
    assert!(tmp.path().join("ab/two-seed4-n5__pix2pix_sn/seed_1/checkpoint.wgck").is_file());
}
