use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"
[scenegen]
points_per_scene = 4096
categories_per_scene = [3, 3]
instances_per_category = [2, 2]
"#;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_normnet"));
    c.env("RUST_LOG", "warn");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn normnet")
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, extra: &str) -> PathBuf {
    let path = dir.join("cfg.toml");
    fs::write(&path, format!("{SMALL}\n{extra}")).unwrap();
    path
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn files(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn report(dir: &Path) -> Value {
    serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap()
}

fn generate(tmp: &Path, cfg: &Path, count: usize) -> PathBuf {
    let scenes = tmp.join("scenes");
    ok(&["generate", "--config", p(cfg), "--seed", "7", "--count", &count.to_string(), "--out", p(&scenes)]);
    scenes
}

#[test]
fn help_and_usage_exit_codes() {
    assert_eq!(run(&["--help"]).status.code(), Some(0));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["generate"]).status.code(), Some(1));
}

#[test]
fn generate_is_deterministic_and_config_round_trips() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["generate", "--config", p(&cfg), "--seed", "11", "--count", "2", "--out", p(&a)]);
    ok(&["generate", "--config", p(&cfg), "--seed", "11", "--count", "2", "--workers", "2", "--out", p(&b)]);
    let fa = files(&a);
    let fb = files(&b);
    let names: Vec<_> = fa.iter().map(|f| f.0.clone()).collect();
    assert!(names.contains(&PathBuf::from("scene_0000/depth.pfm")));
    assert!(names.contains(&PathBuf::from("scene_0001/labels.jsonl")));
    for ((na, da), (nb, db)) in fa.iter().zip(&fb) {
        assert_eq!(na, nb);
        if na.to_string_lossy().starts_with("scene_") {
            assert!(da == db, "{} differs between runs", na.display());
        }
    }

    // The echoed config reproduces the run on its own.
    let c = tmp.path().join("c");
    ok(&["generate", "--config", p(&a.join("config-generate.toml")), "--count", "2", "--out", p(&c)]);
    for ((na, da), (_, dc)) in fa.iter().zip(&files(&c)) {
        if na.to_string_lossy().starts_with("scene_") {
            assert!(da == dc, "{} differs after config round trip", na.display());
        }
    }
}

#[test]
fn generate_zero_scenes() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let scenes = generate(tmp.path(), &cfg, 0);
    assert!(files(&scenes).iter().all(|(n, _)| !n.to_string_lossy().starts_with("scene_")));
}

#[test]
fn missing_catalog_reports_path() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let missing = tmp.path().join("nope/catalog.json");
    let text = fs::read_to_string(&cfg).unwrap();
    fs::write(&cfg, format!("catalog = {:?}\n{text}", p(&missing))).unwrap();
    let out = run(&["generate", "--config", p(&cfg), "--out", p(&tmp.path().join("s"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&missing)));
}

#[test]
fn invalid_config_is_a_usage_error() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[aggregation]\nbandwidth = -1.0\n");
    let out = run(&["generate", "--config", p(&cfg), "--out", p(&tmp.path().join("s"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn disabled_corruption_leaves_depth_unchanged() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(
        tmp.path(),
        "cloud_noise = 0.0\n[mask]\ngrazing_angle_cutoff = 89.999\nblob_count = [0, 0]\nblob_radius = [1.0, 1.0]\ndropout = 0.0\n",
    );
    let scenes = generate(tmp.path(), &cfg, 1);
    ok(&["corrupt", "--config", p(&cfg), "--scenes", p(&scenes)]);
    let dir = scenes.join("scene_0000");
    assert_eq!(fs::read(dir.join("depth.pfm")).unwrap(), fs::read(dir.join("transferred_depth.pfm")).unwrap());
    let labels = fs::read_to_string(dir.join("transferred_labels.jsonl")).unwrap();
    assert_eq!(labels.lines().count(), 4096);
}

#[test]
fn full_dropout_gives_empty_cloud_and_zero_ap() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[mask]\ndropout = 1.0\n");
    let scenes = generate(tmp.path(), &cfg, 1);
    ok(&["corrupt", "--config", p(&cfg), "--scenes", p(&scenes)]);
    let labels = fs::read_to_string(scenes.join("scene_0000/transferred_labels.jsonl")).unwrap();
    assert_eq!(labels.trim(), "");

    let est = tmp.path().join("est");
    ok(&["estimate", "--config", p(&cfg), "--scenes", p(&scenes), "--cloud", "transferred", "--out", p(&est)]);
    let e: Value = serde_json::from_slice(&fs::read(est.join("scene_0000.json")).unwrap()).unwrap();
    let total: usize = e["categories"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["estimates"].as_array().unwrap().len())
        .sum();
    assert_eq!(total, 0);

    let rep = tmp.path().join("rep");
    ok(&["eval", "--config", p(&cfg), "--scenes", p(&scenes), "--estimates", p(&est), "--out", p(&rep)]);
    assert_eq!(report(&rep)["map"].as_f64(), Some(0.0));
    let strict = run(&["eval", "--config", p(&cfg), "--scenes", p(&scenes), "--estimates", p(&est), "--out", p(&rep), "--strict"]);
    assert_eq!(strict.status.code(), Some(2));
}

#[test]
fn stored_predictions_match_oracle_and_score_perfectly() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let scenes = generate(tmp.path(), &cfg, 2);
    let preds = tmp.path().join("preds");
    ok(&["predict", "--config", p(&cfg), "--scenes", p(&scenes), "--out", p(&preds)]);
    let from_oracle = tmp.path().join("e1");
    let from_files = tmp.path().join("e2");
    ok(&["estimate", "--config", p(&cfg), "--scenes", p(&scenes), "--out", p(&from_oracle)]);
    ok(&["estimate", "--config", p(&cfg), "--scenes", p(&scenes), "--predictions", p(&preds), "--out", p(&from_files)]);
    for id in ["scene_0000.json", "scene_0001.json"] {
        assert_eq!(fs::read(from_oracle.join(id)).unwrap(), fs::read(from_files.join(id)).unwrap());
    }

    let rep = tmp.path().join("rep");
    ok(&["eval", "--config", p(&cfg), "--scenes", p(&scenes), "--estimates", p(&from_files), "--out", p(&rep), "--strict"]);
    assert_eq!(report(&rep)["map"].as_f64(), Some(1.0));
    let ap = fs::read_to_string(rep.join("ap.csv")).unwrap();
    assert!(ap.starts_with("model_id,name,relevant,ap\n"));
    assert!(ap.trim_end().ends_with(",mAP,,1"));
    assert!(fs::read_to_string(rep.join("pr_curves.csv")).unwrap().lines().count() > 1);
}

#[test]
fn raw_mode_runs_and_missing_predictions_fail() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let scenes = generate(tmp.path(), &cfg, 1);
    ok(&["estimate", "--config", p(&cfg), "--scenes", p(&scenes), "--sncs", "off", "--out", p(&tmp.path().join("e"))]);
    let out = run(&["estimate", "--config", p(&cfg), "--scenes", p(&scenes), "--predictions", p(&tmp.path().join("none")), "--out", p(&tmp.path().join("f"))]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn estimates_for_unknown_scenes_are_rejected() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "");
    let scenes = generate(tmp.path(), &cfg, 1);
    let est = tmp.path().join("est");
    ok(&["estimate", "--config", p(&cfg), "--scenes", p(&scenes), "--out", p(&est)]);
    fs::copy(est.join("scene_0000.json"), est.join("scene_9999.json")).unwrap();
    let out = run(&["eval", "--config", p(&cfg), "--scenes", p(&scenes), "--estimates", p(&est), "--out", p(&tmp.path().join("r"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scene_9999"));
}

#[test]
fn scale_sweep_writes_one_row_per_scale() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_config(tmp.path(), "[sweep]\nscales = [0.05, 0.2]\nscenes_per_scale = 1\npoints_per_scene = 2048\n");
    let out = tmp.path().join("sweep");
    ok(&["scale-sweep", "--config", p(&cfg), "--out", p(&out)]);
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "scale,ap_sncs_on,ap_sncs_off");
    assert_eq!(lines.len(), 3);
    let rows: Value = serde_json::from_slice(&fs::read(out.join("sweep.json")).unwrap()).unwrap();
    for r in rows.as_array().unwrap() {
        for k in ["ap_sncs", "ap_raw"] {
            let v = r[k].as_f64().unwrap();
            assert!((0.0..=1.0).contains(&v));
        }
    }
}

#[test]
fn catalog_dump_loads_back() {
    let tmp = TempDir::new().unwrap();
    let dump = tmp.path().join("cat");
    ok(&["catalog", "--out", p(&dump)]);
    let cfg = tmp.path().join("cfg.toml");
    fs::write(&cfg, format!("catalog = {:?}\n{SMALL}", p(&dump.join("catalog.json")))).unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    ok(&["generate", "--config", p(&cfg), "--out", p(&a)]);
    let cfg_builtin = write_config(tmp.path(), "");
    ok(&["generate", "--config", p(&cfg_builtin), "--out", p(&b)]);
    assert_eq!(
        fs::read(a.join("scene_0000/labels.jsonl")).unwrap(),
        fs::read(b.join("scene_0000/labels.jsonl")).unwrap()
    );
}
