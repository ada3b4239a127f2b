use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use deepangio::imgproc::io::read_image;
use deepangio::nn::{load_checkpoint, ModelKind};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_deepangio"))
        .args(args)
        .env_remove("DEEPANGIO_CONFIG")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
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

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, count: usize, size: usize) -> PathBuf {
    ok(&["synth-data", "--out", s(dir), "--count", &count.to_string(), "--size", &size.to_string(), "--seed", "3"]);
    dir.join("manifest.csv")
}

/// A tiny training config that runs in a second or two.
fn tiny_config(dir: &Path, manifest: &Path, epochs: u32) -> PathBuf {
    let path = dir.join("tiny.cfg");
    let text = format!(
        "# smoke run\nmanifest = {}\nepochs = {epochs}\nbatch_size = 2\npatch_size = 32\nclahe_tiles = 2x2\n\
         encoder_base = 4\nencoder_depth = 2\ndecoder_base = 4\ndecoder_depth = 1\nseed = 5\n",
        manifest.display()
    );
    fs::write(&path, text).unwrap();
    path
}

#[test]
fn synth_data_counts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let ma = synth(&a, 16, 64);
    synth(&b, 16, 64);
    let text = fs::read_to_string(&ma).unwrap();
    let records = text.lines().filter(|l| !l.trim().is_empty() && !l.starts_with('#')).count();
    assert_eq!(records, 16);
    for i in 0..16 {
        for name in [format!("img_{i:04}.png"), format!("lbl_{i:04}.png")] {
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap(), "{name}");
        }
    }
    assert_eq!(text, fs::read_to_string(b.join("manifest.csv")).unwrap());
    assert_eq!(read_image(a.join("img_0000.png")).unwrap().dims(), (64, 64));
}

#[test]
fn train_writes_checkpoints_log_and_reproducible_config() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 6, 32);
    let cfg = tiny_config(tmp.path(), &manifest, 2);
    let out = tmp.path().join("run");
    ok(&["train", "--config", s(&cfg), "--out", s(&out)]);

    assert!(out.join("epoch_0002.ckpt").is_file());
    let ckpt = load_checkpoint(out.join("last.ckpt")).unwrap();
    assert_eq!(ckpt.kind, ModelKind::Angiogram);
    assert_eq!(ckpt.state.epoch, 2);
    let log = fs::read_to_string(out.join("loss.csv")).unwrap();
    assert!(log.starts_with("step,epoch,lr,seg_ce,seg_dice,cont_l2,cont_ssim,total\n"));
    assert!(log.lines().count() > 2);

    // The resolved config alone reproduces the run.
    let again = tmp.path().join("again");
    ok(&["train", "--config", s(&out.join("config.resolved")), "--out", s(&again)]);
    assert_eq!(log, fs::read_to_string(again.join("loss.csv")).unwrap());
    assert_eq!(fs::read(out.join("last.ckpt")).unwrap(), fs::read(again.join("last.ckpt")).unwrap());
}

#[test]
fn resume_continues_the_same_run() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 6, 32);
    let cfg = tiny_config(tmp.path(), &manifest, 3);
    let full = tmp.path().join("full");
    ok(&["train", "--config", s(&cfg), "--out", s(&full)]);

    let part = tmp.path().join("part");
    ok(&["train", "--config", s(&cfg), "--out", s(&part), "--set", "epochs=1"]);
    ok(&["train", "--config", s(&cfg), "--out", s(&part), "--resume", s(&part.join("last.ckpt"))]);
    assert_eq!(
        fs::read_to_string(full.join("loss.csv")).unwrap(),
        fs::read_to_string(part.join("loss.csv")).unwrap()
    );
    assert_eq!(fs::read(full.join("last.ckpt")).unwrap(), fs::read(part.join("last.ckpt")).unwrap());
}

#[test]
fn baseline_flag_trains_a_single_channel_network() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 6, 32);
    let cfg = tiny_config(tmp.path(), &manifest, 1);
    let out = tmp.path().join("green");
    ok(&["train", "--config", s(&cfg), "--baseline", "green", "--out", s(&out)]);
    let ckpt = load_checkpoint(out.join("last.ckpt")).unwrap();
    assert_eq!(ckpt.kind, ModelKind::GreenBaseline);
    assert_eq!(ckpt.networks.len(), 1);
    assert_eq!(ckpt.networks[0].config().in_channels, 1);
    let resolved = fs::read_to_string(out.join("config.resolved")).unwrap();
    assert!(resolved.contains("model = green"));
    assert!(resolved.contains("lr_init = 0.001"));
}

#[test]
fn config_and_data_errors_stop_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");

    let missing = tiny_config(tmp.path(), &tmp.path().join("nope.csv"), 1);
    let r = run(&["train", "--config", s(&missing), "--out", s(&out)]);
    assert_eq!(code(&r), 2, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(!out.join("loss.csv").exists());

    let manifest = synth(&tmp.path().join("data"), 4, 32);
    let cfg = tiny_config(tmp.path(), &manifest, 1);
    let r = run(&["train", "--config", s(&cfg), "--out", s(&out), "--set", "learning_rate=1"]);
    assert_eq!(code(&r), 1);
    let r = run(&["train", "--config", s(&cfg), "--out", s(&out), "--set", "patch_size=30"]);
    assert_eq!(code(&r), 1);
    let r = run(&["train", "--out", s(&out)]);
    assert_eq!(code(&r), 1);
    let r = run(&["train", "--frobnicate"]);
    assert_eq!(code(&r), 1);
    assert!(!out.join("loss.csv").exists());
}

#[test]
fn config_path_can_come_from_the_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 4, 32);
    let cfg = tiny_config(tmp.path(), &manifest, 1);
    let out = tmp.path().join("run");
    let r = Command::new(env!("CARGO_BIN_EXE_deepangio"))
        .args(["train", "--out", s(&out)])
        .env("DEEPANGIO_CONFIG", &cfg)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    assert!(out.join("last.ckpt").is_file());
}

#[test]
fn diverging_training_exits_with_numeric_code() {
    let tmp = tempfile::tempdir().unwrap();
    let manifest = synth(&tmp.path().join("data"), 6, 32);
    let cfg = tiny_config(tmp.path(), &manifest, 3);
    let out = tmp.path().join("run");
    let r = run(&["train", "--config", s(&cfg), "--out", s(&out), "--set", "lr_init=1e30"]);
    assert_eq!(code(&r), 3, "{}", String::from_utf8_lossy(&r.stderr));
    assert!(String::from_utf8_lossy(&r.stderr).contains("non-finite"));
}

#[test]
fn angiogram_segment_and_eval_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let manifest = synth(&data, 8, 32);
    let cfg = tiny_config(tmp.path(), &manifest, 1);
    let runs = tmp.path().join("runs");
    let ang = runs.join("ang");
    ok(&["train", "--config", s(&cfg), "--out", s(&ang)]);
    for b in ["green", "pca"] {
        ok(&["train", "--config", s(&cfg), "--baseline", b, "--out", s(&runs.join(b))]);
    }

    // A directory of inputs: every PNG, basenames kept.
    let inputs = tmp.path().join("inputs");
    fs::create_dir_all(&inputs).unwrap();
    for name in ["img_0006.png", "img_0007.png"] {
        fs::copy(data.join(name), inputs.join(name)).unwrap();
    }
    fs::write(inputs.join("notes.txt"), "ignored").unwrap();
    let ang_out = tmp.path().join("angio");
    ok(&["angiogram", "--ckpt", s(&ang.join("last.ckpt")), "--input", s(&inputs), "--out", s(&ang_out)]);
    let mut names: Vec<_> = fs::read_dir(&ang_out).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    assert_eq!(names, ["img_0006.png", "img_0007.png"]);
    let a = read_image(ang_out.join("img_0006.png")).unwrap();
    assert_eq!((a.dims(), a.channels()), ((32, 32), 1));
    let first = fs::read(ang_out.join("img_0006.png")).unwrap();
    ok(&["angiogram", "--ckpt", s(&ang.join("last.ckpt")), "--input", s(&inputs), "--out", s(&ang_out)]);
    assert_eq!(first, fs::read(ang_out.join("img_0006.png")).unwrap());

    let r = run(&["angiogram", "--ckpt", s(&runs.join("green/last.ckpt")), "--input", s(&inputs), "--out", s(&ang_out)]);
    assert_eq!(code(&r), 1);

    let seg_out = tmp.path().join("seg");
    ok(&["segment", "--ckpt", s(&ang.join("last.ckpt")), "--input", s(&data.join("img_0007.png")), "--out", s(&seg_out)]);
    let m = read_image(seg_out.join("img_0007.png")).unwrap();
    assert!(m.data().iter().all(|&v| v == 0.0 || v == 1.0));

    let csv = tmp.path().join("metrics.csv");
    let ckpt = |m: &str, d: &str| format!("{m}={}", runs.join(d).join("last.ckpt").display());
    let r = ok(&[
        "eval",
        "--manifest",
        s(&manifest),
        "--methods",
        "angiogram,green-unet,pca-unet",
        "--ckpt",
        &ckpt("angiogram", "ang"),
        "--ckpt",
        &ckpt("green-unet", "green"),
        "--ckpt",
        &ckpt("pca-unet", "pca"),
        "--csv",
        s(&csv),
    ]);
    let rows = fs::read_to_string(&csv).unwrap();
    let mut lines = rows.lines();
    assert_eq!(lines.next(), Some("dataset,image_id,method,dice,accuracy,sensitivity,specificity,threshold"));
    let body: Vec<&str> = lines.collect();
    // 8 phantoms, a quarter held out as target, 3 methods each
    assert_eq!(body.len(), 2 * 3);
    for (i, line) in body.iter().enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f.len(), 8);
        assert_eq!(f[2], ["angiogram", "green-unet", "pca-unet"][i % 3]);
    }
    let summary = fs::read_to_string(tmp.path().join("metrics.summary.csv")).unwrap();
    assert!(summary.starts_with("method,metric,n,min,q1,median,q3,max,mean\n"));
    assert_eq!(String::from_utf8_lossy(&r.stdout), summary);

    let r = run(&["eval", "--manifest", s(&manifest), "--methods", "angiogram,vesselnet", "--ckpt", &ckpt("angiogram", "ang"), "--csv", s(&csv)]);
    assert_eq!(code(&r), 1);
    let r = run(&["eval", "--manifest", s(&manifest), "--methods", "angiogram,green-unet", "--ckpt", &ckpt("angiogram", "ang"), "--csv", s(&csv)]);
    assert_eq!(code(&r), 1);
}

#[test]
fn augment_preview_is_deterministic_and_monotone_in_clip() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    synth(&data, 1, 64);
    let input = data.join("img_0000.png");
    let low = tmp.path().join("low.png");
    let high = tmp.path().join("high.png");
    ok(&["augment-preview", "--input", s(&input), "--clip", "1.0", "--out", s(&low)]);
    ok(&["augment-preview", "--input", s(&input), "--clip", "10.0", "--out", s(&high)]);
    let first = fs::read(&high).unwrap();
    ok(&["augment-preview", "--input", s(&input), "--clip", "10.0", "--out", s(&high)]);
    assert_eq!(first, fs::read(&high).unwrap());

    let orig = read_image(&input).unwrap();
    let change = |p: &Path| {
        let img = read_image(p).unwrap();
        let n = img.data().len() as f64;
        img.data().iter().zip(orig.data()).map(|(a, b)| (a - b).abs() as f64).sum::<f64>() / n
    };
    let std = |p: &Path| {
        let g = read_image(p).unwrap().channel(1);
        let m = g.mean();
        (g.data().iter().map(|&v| (v as f64 - m).powi(2)).sum::<f64>() / g.data().len() as f64).sqrt()
    };
    assert!(change(&low) < change(&high));
    assert!(std(&low) < std(&high));
    let r = run(&["augment-preview", "--input", s(&input), "--clip", "0.5", "--out", s(&low)]);
    assert_eq!(code(&r), 1);
}
