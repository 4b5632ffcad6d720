use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use refsplat::config::RunConfig;
use refsplat_core::AccumulationMode;

fn refsplat(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_refsplat"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = refsplat(args);
    assert!(out.status.success(), "{args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, views: usize) {
    ok(&["synth", "--out", s(dir), "--views", &views.to_string(), "--resolution", "32x32", "--seed", "4"]);
}

fn train(data: &Path, out: &Path, extra: &[&str]) {
    let mut args = vec!["train", "--data", s(data), "--out", s(out), "--iters", "20", "--resolution", "32x32", "--seed", "1"];
    args.extend_from_slice(extra);
    ok(&args);
}

fn count_png(dir: &Path) -> usize {
    fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().path().extension().is_some_and(|x| x == "png")).count()
}

#[test]
fn synth_train_eval_decompose_relight() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    synth(&data, 16);
    train(&data, &run, &[]);
    for f in ["run_config.toml", "split.json", "loss_log.tsv", "final/cloud.ply", "final/state.bin", "final/run_config.toml", "final/split.json"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let log = fs::read_to_string(run.join("loss_log.tsv")).unwrap();
    assert!(log.starts_with("iteration\tl_rgb\t"));

    let out = ok(&["eval", "--data", s(&data), "--out", s(&run)]);
    let tsv = fs::read_to_string(run.join("eval/metrics.tsv")).unwrap();
    assert_eq!(String::from_utf8(out.stdout).unwrap(), tsv);
    let lines: Vec<&str> = tsv.lines().collect();
    assert_eq!(lines[0], "view\tpsnr\tssim");
    assert_eq!(lines.len(), 1 + 2 + 1);
    assert!(lines[3].starts_with("mean\t"));
    let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join("eval/metrics.json")).unwrap()).unwrap();
    assert!(json["fps"].as_f64().unwrap() > 0.0);
    assert_eq!(json["config_hash"].as_str().unwrap().len(), 64);

    ok(&["decompose", "--data", s(&data), "--out", s(&run)]);
    assert_eq!(count_png(&run.join("decompose")), 5 * 2);
    ok(&["relight", "--data", s(&data), "--out", s(&run)]);
    assert_eq!(count_png(&run.join("relight")), 5 * 2);
    ok(&["relight", "--data", s(&data), "--out", s(&run), "--coefficients", "0.5,1.5"]);
    assert_eq!(count_png(&run.join("relight")), 5 * 2 + 2 * 2);

    // metric rows are bit-stable across evaluations
    ok(&["eval", "--data", s(&data), "--out", s(&run)]);
    assert_eq!(fs::read_to_string(run.join("eval/metrics.tsv")).unwrap(), tsv);
}

#[test]
fn synth_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    synth(&a, 9);
    synth(&b, 9);
    for f in ["images/view_000.png", "images/view_008.png", "masks/view_003.png", "sparse/0/points3D.txt", "sparse/0/images.txt", "scene.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let cfg = RunConfig::load(&a.join("run_config.toml")).unwrap();
    assert_eq!((cfg.resolution.width, cfg.resolution.height), (32, 32));
}

#[test]
fn flags_reach_the_trainer() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 9);
    let (base, alpha, nobi) = (tmp.path().join("base"), tmp.path().join("alpha"), tmp.path().join("nobi"));
    train(&data, &base, &[]);
    train(&data, &alpha, &["--mode", "alpha"]);
    train(&data, &nobi, &["--lambda-bi", "0"]);

    let cfg = RunConfig::load(&alpha.join("run_config.toml")).unwrap();
    assert_eq!(cfg.train.mode, AccumulationMode::Alpha);
    assert_eq!(RunConfig::load(&base.join("run_config.toml")).unwrap().train.mode, AccumulationMode::Paper);
    assert_ne!(fs::read(alpha.join("final/cloud.ply")).unwrap(), fs::read(base.join("final/cloud.ply")).unwrap());

    assert_eq!(RunConfig::load(&nobi.join("run_config.toml")).unwrap().train.loss.lambda_bi, 0.0);
    assert_ne!(fs::read(nobi.join("final/cloud.ply")).unwrap(), fs::read(base.join("final/cloud.ply")).unwrap());
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 9);
    let mut file = RunConfig { seed: 5, ..RunConfig::default() };
    file.train.loss.lambda_bi = 0.002;
    file.train.loss.gamma = 0.3;
    let cfg_path = tmp.path().join("c.toml");
    fs::write(&cfg_path, file.to_toml()).unwrap();
    let run = tmp.path().join("run");
    ok(&["train", "--config", s(&cfg_path), "--data", s(&data), "--out", s(&run), "--iters", "5", "--resolution", "32x32", "--lambda-bi", "0.003"]);
    let got = RunConfig::load(&run.join("run_config.toml")).unwrap();
    assert_eq!(got.seed, 5);
    assert_eq!(got.train.loss.gamma, 0.3);
    assert_eq!(got.train.loss.lambda_bi, 0.003);
    assert_eq!(got.train.total_iters, 5);
}

#[test]
fn stored_config_reproduces_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 9);
    let (first, second) = (tmp.path().join("first"), tmp.path().join("second"));
    train(&data, &first, &["--gamma", "0.2"]);
    ok(&["train", "--config", s(&first.join("run_config.toml")), "--out", s(&second)]);
    assert_eq!(fs::read(first.join("final/cloud.ply")).unwrap(), fs::read(second.join("final/cloud.ply")).unwrap());
    assert_eq!(fs::read(first.join("final/state.bin")).unwrap(), fs::read(second.join("final/state.bin")).unwrap());
}

#[test]
fn too_few_images_leave_nothing_to_evaluate() {
    let tmp = tempfile::tempdir().unwrap();
    let (data, run) = (tmp.path().join("data"), tmp.path().join("run"));
    synth(&data, 7);
    train(&data, &run, &[]);
    let out = refsplat(&["eval", "--data", s(&data), "--out", s(&run)]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains("test split is empty"));
}

#[test]
fn exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let out = refsplat(&["train", "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--data"));

    let out = refsplat(&["train", "--data", s(&tmp.path().join("nowhere")), "--out", s(tmp.path())]);
    assert_eq!(out.status.code(), Some(3));

    let out = refsplat(&["train", "--data", "x", "--out", "y", "--resolution", "8x8"]);
    assert_eq!(out.status.code(), Some(2));
    let out = refsplat(&["train", "--data", "x", "--out", "y", "--gamma", "0"]);
    assert_eq!(out.status.code(), Some(2));
}
