use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use stampfeat::classifier::{split, Label};
use stampfeat::model::ModelFile;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stampfeat"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn stampfeat")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = run(dir, args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn small_dataset(dir: &Path) {
    ok(dir, &["synth", "--out", "data", "--n-pos", "24", "--n-neg", "24", "--seed", "3"]);
}

#[test]
fn full_workflow() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    let manifest = fs::read_to_string(d.join("data/manifest.csv")).unwrap();
    assert_eq!(manifest.lines().count(), 49);

    let m = ["--model", "m.bin", "--manifest", "data/manifest.csv"];
    ok(d, &["learn-dict", "--manifest", "data/manifest.csv", "--out", "m.bin", "--k", "12", "--n-patches", "1500"]);
    let model = ModelFile::load(d.join("m.bin")).unwrap();
    assert_eq!(model.ranked.dict().k(), 12);
    assert_eq!(model.provenance["learn_seed"], "0");

    let ranked = ok(d, &[&["rank"][..], &m, &["--tau", "0.6"]].concat());
    assert!(ranked.contains("at tau 0.6"));
    let v = ModelFile::load(d.join("m.bin")).unwrap().ranked.v();
    assert!((1..=12).contains(&v));

    ok(d, &[&["extract"][..], &m, &["--out", "f.csv"]].concat());
    let csv = fs::read_to_string(d.join("f.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header.split(',').count(), 1 + 16 * v);
    assert_eq!(csv.lines().count(), 49);

    ok(d, &[&["train"][..], &m].concat());
    assert!(ModelFile::load(d.join("m.bin")).unwrap().svm.is_some());
    ok(d, &[&["eval"][..], &m, &["--json", "e.json"]].concat());
    let report: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("e.json")).unwrap()).unwrap();
    assert!(report["accuracy"].as_f64().unwrap() >= 0.0);
    let labels: Vec<(usize, Label)> = (0..48)
        .map(|i| (i, if i < 24 { Label::Stamp } else { Label::NonStamp }))
        .collect();
    let (_, held_out) = split(&labels, 0.7, 0).unwrap();
    assert_eq!(report["n_test"].as_u64().unwrap() as usize, held_out.len());

    ok(d, &[&["detect"][..], &m, &["--out", "det.csv", "--annotate", "ann"]].concat());
    let det = fs::read_to_string(d.join("det.csv")).unwrap();
    assert_eq!(det.lines().next().unwrap(), "path,x0,y0,x1,y1,peak");
    assert_eq!(det.lines().count(), 49);
    assert!(d.join("ann/pos_00000_detected.png").exists());

    ok(d, &["dump-atoms", "--model", "m.bin", "--out", "atoms"]);
    assert!(d.join("atoms/atom_011.png").exists());
    assert!(d.join("atoms/mosaic.png").exists());
    ok(d, &["dump-atoms", "--bank", "random", "--count", "4", "--out", "rnd"]);
    assert!(d.join("rnd/atom_003.png").exists());

    let table = ok(
        d,
        &["bench", "--manifest", "data/manifest.csv", "--k", "12", "--n-patches", "1500", "--random-filters", "8", "--gabor-scales", "2", "--gabor-orientations", "4", "--json", "b.json"],
    );
    assert!(table.starts_with("Method"));
    let rows: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("b.json")).unwrap()).unwrap();
    let rows = rows.as_array().unwrap();
    assert_eq!(rows.len(), 4);
    for key in ["method", "n_filters", "accuracy", "precision", "recall", "test_time_s"] {
        assert!(rows[0].get(key).is_some(), "missing {key}");
    }
    assert_eq!(rows[2]["n_filters"], 8);
    assert_eq!(rows[3]["n_filters"], 8);
}

#[test]
fn config_file_supplies_defaults_and_flags_win() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    fs::write(d.join("run.conf"), "# small run\nk = 6\nn-patches = 800\nseed = 9\n").unwrap();
    ok(d, &["learn-dict", "--config", "run.conf", "--manifest", "data/manifest.csv", "--out", "a.bin"]);
    let a = ModelFile::load(d.join("a.bin")).unwrap();
    assert_eq!(a.ranked.dict().k(), 6);
    assert_eq!(a.provenance["learn_seed"], "9");

    ok(d, &["learn-dict", "--manifest", "data/manifest.csv", "--out", "b.bin", "--k", "5", "--config", "run.conf"]);
    let b = ModelFile::load(d.join("b.bin")).unwrap();
    assert_eq!(b.ranked.dict().k(), 5);
    assert_eq!(b.provenance["learn_seed"], "9");
}

#[test]
fn bad_input_gives_one_line_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    let cases: [&[&str]; 4] = [
        &["eval", "--model", "missing.bin", "--manifest", "missing.csv"],
        &["learn-dict", "--manifest", "m.csv", "--out", "x.bin", "--k", "many"],
        &["detect", "--model", "missing.bin"],
        &["no-such-command"],
    ];
    for args in cases {
        let out = run(d, args);
        assert!(!out.status.success(), "{args:?} succeeded");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{args:?}: {err}");
        assert!(err.starts_with("error"), "{args:?}: {err}");
    }

    fs::write(d.join("garbage.bin"), b"not a model").unwrap();
    fs::write(d.join("p.png"), b"").unwrap();
    let out = run(d, &["detect", "--model", "garbage.bin", "p.png"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("model file"));
}

#[test]
fn model_is_replaced_whole() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    small_dataset(d);
    ok(d, &["learn-dict", "--manifest", "data/manifest.csv", "--out", "m.bin", "--k", "6", "--n-patches", "600"]);
    let before = fs::read(d.join("m.bin")).unwrap();
    ok(d, &["train", "--model", "m.bin", "--manifest", "data/manifest.csv", "--train-fraction", "1"]);
    let after = fs::read(d.join("m.bin")).unwrap();
    assert_ne!(before, after);
    assert!(ModelFile::from_bytes(&after).unwrap().svm.is_some());
    let names: Vec<_> = fs::read_dir(d)
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .filter(|n| n != "data")
        .collect();
    assert_eq!(names, vec!["m.bin".to_owned()]);

    // A failed run leaves the old file untouched.
    let out = run(d, &["rank", "--model", "m.bin", "--manifest", "absent.csv"]);
    assert!(!out.status.success());
    assert_eq!(fs::read(d.join("m.bin")).unwrap(), after);
}
