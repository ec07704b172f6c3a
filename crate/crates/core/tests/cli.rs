use std::fs;
use std::path::Path;
use std::process::Command as Process;

use clap::Parser;
use vaca::circuit::GridMap;
use vaca::cli::{run, Cli, CliError};
use vaca::mapfile::{read_map, write_map};
use vaca::models::Group;
use vaca::trainer::load_checkpoint;

fn vaca(args: &[&str]) -> Result<String, CliError> {
    let cli = Cli::try_parse_from(std::iter::once("vaca").chain(args.iter().copied())).expect("arguments parse");
    let mut out = Vec::new();
    run(cli, &mut out)?;
    Ok(String::from_utf8(out).unwrap())
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn gen_small(dir: &Path, seed: &str) {
    vaca(&["gen", "--out", p(dir), "--designs", "8", "--grid", "8x8", "--cells", "20", "--nets", "30", "--seed", seed])
        .unwrap();
}

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for entry in walk(dir) {
        files.push((entry.strip_prefix(dir).unwrap().display().to_string(), fs::read(&entry).unwrap()));
    }
    files.sort();
    files
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).unwrap() {
        let path = e.unwrap().path();
        if path.is_dir() {
            out.extend(walk(&path));
        } else {
            out.push(path);
        }
    }
    out
}

#[test]
fn gen_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    gen_small(&a, "4");
    gen_small(&b, "4");
    gen_small(&c, "5");
    assert_eq!(dir_bytes(&a), dir_bytes(&b));
    assert_ne!(dir_bytes(&a), dir_bytes(&c));
    assert!(a.join("split.json").is_file());
    assert!(a.join("design_000").join("meta.json").is_file());
}

#[test]
fn gen_rejects_bad_grids() {
    let tmp = tempfile::tempdir().unwrap();
    for grid in ["0x8", "8", "axb", "8x"] {
        let err = vaca(&["gen", "--out", p(tmp.path()), "--grid", grid]).unwrap_err();
        assert!(matches!(err, CliError::Usage(_)), "{grid}: {err}");
    }
}

#[test]
fn train_eval_predict_export() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    gen_small(&data, "1");
    let log = vaca(&["train", "--data", p(&data), "--out", p(&run_dir), "--epochs", "3", "--lambda", "0"]).unwrap();
    assert_eq!(log.lines().count(), 3);
    for f in ["model.ckpt", "train_log.jsonl", "manifest.json"] {
        assert!(run_dir.join(f).is_file(), "{f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(run_dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 0);
    assert_eq!(manifest["config"]["epochs"], 3);

    let ckpt = run_dir.join("model.ckpt");
    let report = vaca(&["eval", "--ckpt", p(&ckpt), "--data", p(&data), "--split", "test"]).unwrap();
    let report: serde_json::Value = serde_json::from_str(&report).unwrap();
    assert_eq!(report["split"], "test");
    let rho = report["grid"]["spearman"].as_f64().unwrap();
    assert!(rho > 0.0, "test grid Spearman {rho}");

    let map_path = tmp.path().join("pred.f32");
    vaca(&["predict", "--ckpt", p(&ckpt), "--design", p(&data.join("design_007")), "--out", p(&map_path)]).unwrap();
    let map = read_map(&map_path).unwrap();
    assert_eq!((map.rows, map.cols, map.values.len()), (8, 8, 64));

    let (png, csv) = (tmp.path().join("pred.png"), tmp.path().join("pred.csv"));
    vaca(&["export", "--map", p(&map_path), "--png", p(&png), "--csv", p(&csv)]).unwrap();
    let img = image::open(&png).unwrap();
    assert_eq!((img.width(), img.height()), (8, 8));
    let text = fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 8);
    assert!(text.lines().all(|l| l.split(',').count() == 8));
}

#[test]
fn resume_appends_to_the_log() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    gen_small(&data, "2");
    vaca(&["train", "--data", p(&data), "--out", p(&run_dir), "--epochs", "1"]).unwrap();
    vaca(&["train", "--data", p(&data), "--out", p(&run_dir), "--epochs", "2", "--resume"]).unwrap();
    let log = fs::read_to_string(run_dir.join("train_log.jsonl")).unwrap();
    let epochs: Vec<u64> = log
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["epoch"].as_u64().unwrap())
        .collect();
    assert_eq!(epochs, [1, 2]);
    assert_eq!(load_checkpoint(&run_dir.join("model.ckpt")).unwrap().epoch, 2);
}

#[test]
fn logic_stage_checkpoint_has_no_gamma_network() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let run_dir = tmp.path().join("run");
    gen_small(&data, "3");
    vaca(&["train", "--data", p(&data), "--out", p(&run_dir), "--epochs", "1", "--mode", "logic"]).unwrap();
    let state = load_checkpoint(&run_dir.join("model.ckpt")).unwrap();
    assert!(state.model.params.iter().all(|(n, _)| Group::of(n) != Some(Group::GeomEncoder)));
    assert!(!state.model.params.is_empty());
}

#[test]
fn constant_map_exports_as_black() {
    let tmp = tempfile::tempdir().unwrap();
    let map_path = tmp.path().join("flat.f32");
    write_map(&map_path, &GridMap { rows: 3, cols: 5, values: vec![2.5; 15] }).unwrap();
    let png = tmp.path().join("flat.png");
    vaca(&["export", "--map", p(&map_path), "--png", p(&png)]).unwrap();
    let img = image::open(&png).unwrap().to_luma8();
    assert_eq!((img.width(), img.height()), (5, 3));
    assert!(img.pixels().all(|px| px.0[0] == 0));
}

#[test]
fn export_needs_an_output() {
    let tmp = tempfile::tempdir().unwrap();
    let map_path = tmp.path().join("m.f32");
    write_map(&map_path, &GridMap::zeros(2, 2)).unwrap();
    assert!(matches!(vaca(&["export", "--map", p(&map_path)]), Err(CliError::Usage(_))));
}

#[test]
fn binary_reports_errors_with_exit_status() {
    let bin = env!("CARGO_BIN_EXE_vaca");
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("nowhere");
    let out = Process::new(bin)
        .args(["train", "--data", p(&missing), "--out", p(&tmp.path().join("run"))])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).starts_with("error: "));

    let out = Process::new(bin).arg("frobnicate").output().unwrap();
    assert!(!out.status.success());

    let out = Process::new(bin)
        .args(["gen", "--out", p(&tmp.path().join("d")), "--designs", "3", "--grid", "4x4"])
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
