use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dynmotion::io::{frame_path, save_image, save_video};
use dynmotion::{Rng, Tensor32, Video32};
use serde_json::Value;

const TOY: &[&str] = &[
    "image_size=8",
    "transitions=3",
    "state_dim=8",
    "motion_state_dim=5",
    "residual_state_dim=3",
    "noise_dim=6",
    "appearance_dim=4",
    "emission_channels=[8,8,4]",
    "transition_hidden=[6,6]",
    "init_std=0.02",
    "epochs=2",
    "steps_per_iteration=2",
];

fn mbgm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mbgm"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn json_lines(out: &Output) -> Vec<Value> {
    String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap_or_else(|e| panic!("{l}: {e}")))
        .collect()
}

fn assert_success(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn write_video(dir: &Path, seed: u64) {
    let mut t = Tensor32::zeros(&[4, 8, 8, 3]);
    Rng::new(seed).fill_normal(t.data_mut(), 0.3);
    save_video(&Video32::new(t).unwrap(), dir).unwrap();
}

/// Trains the toy model on a random video; returns (checkpoint, video dir).
fn train(root: &Path, extra: &[&str]) -> (PathBuf, PathBuf) {
    let video = root.join("video");
    write_video(&video, 1);
    let ckpt = root.join("model.mbgm");
    let mut args = vec!["train", "--video", video.to_str().unwrap(), "--out", ckpt.to_str().unwrap()];
    for s in TOY {
        args.extend(["--set", s]);
    }
    args.extend(extra);
    let out = mbgm(&args);
    assert_success(&out);
    let lines = json_lines(&out);
    assert!(lines[0].get("effective_config").is_some());
    assert_eq!(lines.last().unwrap()["epochs"], 2);
    (ckpt, video)
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

#[test]
fn gradcheck_passes_on_the_toy_model() {
    let out = mbgm(&["gradcheck", "--seed", "1"]);
    assert_success(&out);
    let lines = json_lines(&out);
    assert_eq!(lines.last().unwrap()["passed"], true);
}

#[test]
fn usage_errors_exit_with_one() {
    assert_eq!(mbgm(&[]).status.code(), Some(1));
    assert_eq!(mbgm(&["train"]).status.code(), Some(1));
    assert_eq!(mbgm(&["flowviz", "--bogus"]).status.code(), Some(1));
    assert_eq!(mbgm(&["--help"]).status.code(), Some(0));
    let out = Command::new(env!("CARGO_BIN_EXE_mbgm"))
        .args(["gradcheck"])
        .env("MBGM_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn runtime_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.mbgm");
    let out = mbgm(&["synthesize", "--ckpt", missing.to_str().unwrap(), "--length", "3", "--out", "x"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.mbgm"));

    let out = mbgm(&["gradcheck", "--set", "lamda1=2"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lamda1"));
}

#[test]
fn mismatched_video_shape_is_explained() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("video");
    write_video(&video, 1);
    let ckpt = dir.path().join("m.mbgm");
    let out = mbgm(&["train", "--video", video.to_str().unwrap(), "--out", ckpt.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("image_size"));
}

#[test]
fn synthesis_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = train(dir.path(), &[]);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let r = mbgm(&["synthesize", "--ckpt", ckpt.to_str().unwrap(), "--length", "5", "--seed", "7", "--out", out.to_str().unwrap()]);
        assert_success(&r);
    }
    let (fa, fb) = (files(&a), files(&b));
    assert_eq!(fa.len(), 6);
    assert_eq!(fa, fb);
}

#[test]
fn trackable_only_model_has_no_intrackable_part() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, video) = train(dir.path(), &["--trackable-only"]);
    let (c, v) = (ckpt.to_str().unwrap(), video.to_str().unwrap());

    let report = dir.path().join("score.json");
    let out = mbgm(&["intrackability", "--ckpt", c, "--video", v, "--report", report.to_str().unwrap(), "--steps", "2"]);
    assert_success(&out);
    assert_eq!(json_lines(&out).last().unwrap()["intrackability"], 0.0);
    assert!(report.with_extension("csv").exists());

    let dec = dir.path().join("dec");
    assert_success(&mbgm(&["decompose", "--ckpt", c, "--video", v, "--out", dec.to_str().unwrap(), "--steps", "2"]));
    let residual: Video32 = dynmotion::io::load_video(&dec.join("residual")).unwrap();
    // Zero maps to pixel 128, which reloads as 0.5 / 127.5.
    assert!(residual.frames().data().iter().all(|&x| (x - 0.5 / 127.5).abs() < 1e-6));
}

#[test]
fn decompose_writes_every_component() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, video) = train(dir.path(), &[]);
    let dec = dir.path().join("dec");
    let out = mbgm(&[
        "decompose",
        "--ckpt",
        ckpt.to_str().unwrap(),
        "--video",
        video.to_str().unwrap(),
        "--out",
        dec.to_str().unwrap(),
        "--steps",
        "2",
    ]);
    assert_success(&out);
    for sub in ["reconstruction", "trackable", "residual"] {
        assert_eq!(files(&dec.join(sub)).len(), 4, "{sub}");
    }
    assert_eq!(files(&dec.join("flow")).len(), 3);
    assert_eq!(files(&dec.join("flow_raw")).len(), 3);
    assert!(dec.join("appearance.png").exists());
    assert!(dec.join("strip.png").exists());

    let png = dir.path().join("flow.png");
    let raw = dec.join("flow_raw").join("flow_0000.mbgf");
    assert_success(&mbgm(&["flowviz", "--flow", raw.to_str().unwrap(), "--out", png.to_str().unwrap()]));
    assert_eq!(image::open(&png).unwrap().width(), 8);
}

#[test]
fn transfer_and_exchange_produce_videos() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, _) = train(dir.path(), &[]);
    let c = ckpt.to_str().unwrap();
    let still = dir.path().join("still.png");
    let mut img = Tensor32::zeros(&[8, 8, 3]);
    Rng::new(3).fill_normal(img.data_mut(), 0.5);
    save_image(&img, &still).unwrap();

    let moved = dir.path().join("moved");
    assert_success(&mbgm(&["transfer", "--ckpt", c, "--appearance", still.to_str().unwrap(), "--out", moved.to_str().unwrap()]));
    assert_eq!(files(&moved).len(), 4);

    let swapped = dir.path().join("swapped");
    assert_success(&mbgm(&["exchange", "--ckpt-a", c, "--ckpt-b", c, "--out", swapped.to_str().unwrap()]));
    assert!(frame_path(&swapped.join("a_appearance_b_motion"), 3).exists());
}

#[test]
fn resume_continues_training() {
    let dir = tempfile::tempdir().unwrap();
    let (ckpt, video) = train(dir.path(), &[]);
    let more = dir.path().join("more.mbgm");
    let out = mbgm(&[
        "train",
        "--video",
        video.to_str().unwrap(),
        "--out",
        more.to_str().unwrap(),
        "--resume",
        ckpt.to_str().unwrap(),
        "--set",
        "epochs=3",
    ]);
    assert_success(&out);
    assert_eq!(json_lines(&out).last().unwrap()["epochs"], 3);
    let log = std::fs::read_to_string(dir.path().join("more.mbgm.log.csv")).unwrap();
    assert_eq!(log.lines().count(), 4);

    let out = mbgm(&["train", "--video", video.to_str().unwrap(), "--out", more.to_str().unwrap(), "--resume", ckpt.to_str().unwrap(), "--set", "lambda1=3"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("lambda1"));
}

#[test]
fn lds_baseline_runs() {
    let dir = tempfile::tempdir().unwrap();
    let video = dir.path().join("video");
    write_video(&video, 4);
    let out_dir = dir.path().join("lds");
    let out = mbgm(&["lds", "--video", video.to_str().unwrap(), "--dim", "3", "--out", out_dir.to_str().unwrap()]);
    assert_success(&out);
    assert!(json_lines(&out).last().unwrap()["reconstruction_mse"].as_f64().unwrap() >= 0.0);
    assert_eq!(files(&out_dir.join("synthesized")).len(), 4);
    assert_eq!(files(&out_dir.join("reconstruction")).len(), 4);
}
