//! End-to-end runs of the `mmht` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmht::dataset::write_procedural_sources;

const TINY: &str = "\
model.C = 8
model.head_dim = 4
model.N = 2
model.arrangement = MMT,UNet
loss.K = 2
train.lr = 0.001
train.epochs = 1
train.max_steps = 3
train.image_size = 32
train.dataset_dir = data
train.out_dir = run
";

fn mmht(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mmht")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn assert_code(out: &Output, expected: i32) {
    assert_eq!(
        code(out),
        expected,
        "stdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Procedural sources, a synthesized dataset and a tiny run config.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path().to_path_buf();
    write_procedural_sources(&root.join("src"), 2, 32, 9).unwrap();
    assert_code(&mmht(&["synth-data", "--src", s(&root.join("src")), "--out", s(&root.join("data")), "--seed", "3"]), 0);
    std::fs::write(root.join("tiny.cfg"), TINY).unwrap();
    (tmp, root)
}

#[test]
fn help_and_usage_errors() {
    assert_code(&mmht(&["--help"]), 0);
    assert_code(&mmht(&["--version"]), 0);
    assert_code(&mmht(&[]), 1);
    assert_code(&mmht(&["frobnicate"]), 1);
    assert_code(&mmht(&["infer", "--ckpt", "x"]), 1);
}

#[test]
fn input_errors_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    assert_code(&mmht(&["synth-data", "--src", s(dir), "--out", s(&dir.join("o"))]), 1);
    assert_code(&mmht(&["synth-data", "--src", "/nonexistent", "--out", s(&dir.join("o"))]), 1);

    let garbage = dir.join("bad.ckpt");
    std::fs::write(&garbage, b"not a checkpoint").unwrap();
    let out = mmht(&["infer", "--ckpt", s(&garbage), "--in", "x.png", "--out", "y.png"]);
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.ckpt"));

    let cfg = dir.join("typo.cfg");
    std::fs::write(&cfg, "train.learning_rate = 0.1\n").unwrap();
    let out = mmht(&["train", "--config", s(&cfg)]);
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("learning_rate"));

    assert_code(&mmht(&["decompose", "--in", "/nonexistent.png", "--out", s(dir)]), 1);
}

#[test]
fn thread_cap_is_validated() {
    let out = Command::new(env!("CARGO_BIN_EXE_mmht"))
        .args(["decompose", "--in", "/nonexistent.png", "--out", "/tmp"])
        .env("MMHT_THREADS", "zero")
        .output()
        .unwrap();
    assert_code(&out, 1);
    assert!(String::from_utf8_lossy(&out.stderr).contains("MMHT_THREADS"));
}

#[test]
fn train_infer_eval_decompose() {
    let (_tmp, root) = workspace();
    let cfg = root.join("tiny.cfg");
    assert_code(&mmht(&["train", "--config", s(&cfg)]), 0);
    let run = root.join("run");
    for f in ["model.ckpt", "last.ckpt", "loss_log.csv", "config.cfg"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    let first_log = std::fs::read(run.join("loss_log.csv")).unwrap();
    assert_code(&mmht(&["train", "--config", s(&cfg)]), 0);
    assert_eq!(std::fs::read(run.join("loss_log.csv")).unwrap(), first_log);

    // Odd-sized input exercises pad-and-crop.
    let input = root.join("odd.png");
    let img = image::RgbImage::from_fn(45, 27, |x, y| image::Rgb([(x * 5) as u8, (y * 9) as u8, 100]));
    img.save(&input).unwrap();
    let out_png = root.join("out.png");
    let feats = root.join("feats");
    let ckpt = run.join("model.ckpt");
    assert_code(
        &mmht(&["infer", "--ckpt", s(&ckpt), "--in", s(&input), "--out", s(&out_png), "--dump-features", s(&feats)]),
        0,
    );
    assert_eq!(image::image_dimensions(&out_png).unwrap(), (45, 27));
    assert_eq!(std::fs::read_dir(&feats).unwrap().count(), 2);

    let csv = root.join("eval.csv");
    assert_code(&mmht(&["eval", "--ckpt", s(&ckpt), "--data", s(&root.join("data")), "--out", s(&csv)]), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().count(), 1 + 10 + 1);
    assert!(text.lines().last().unwrap().starts_with("mean,"));
    let consistency = std::fs::read_to_string(root.join("eval_consistency.csv")).unwrap();
    assert_eq!(consistency.lines().count(), 1 + 2 + 1);
    let again = root.join("again.csv");
    assert_code(&mmht(&["eval", "--ckpt", s(&ckpt), "--data", s(&root.join("data")), "--out", s(&again)]), 0);
    assert_eq!(std::fs::read_to_string(&again).unwrap(), text);

    let levels = root.join("levels");
    assert_code(&mmht(&["decompose", "--in", s(&root.join("src/scene_000.png")), "--out", s(&levels), "--levels", "3"]), 0);
    assert_eq!(std::fs::read_dir(&levels).unwrap().count(), 3);
}

#[test]
fn ablate_subset() {
    let (_tmp, root) = workspace();
    let cfg = root.join("ablate.cfg");
    std::fs::write(&cfg, format!("{TINY}train.max_steps = 1\nablate.rows = nolpls,UU,MacMic-nocr\n").replace("train.max_steps = 3\n", "")).unwrap();
    let csv = root.join("ablate.csv");
    assert_code(&mmht(&["ablate", "--config", s(&cfg), "--out", s(&csv)]), 0);
    let text = std::fs::read_to_string(&csv).unwrap();
    let rows: Vec<&str> = text.lines().skip(1).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r.ends_with(",ok")), "{text}");
    let psnr: Vec<f64> = rows.iter().map(|r| r.split(',').nth(9).unwrap().parse().unwrap()).collect();
    assert!(psnr.windows(2).all(|w| w[0] >= w[1]), "{psnr:?}");
}

#[test]
fn divergence_is_a_runtime_failure() {
    let (_tmp, root) = workspace();
    let cfg = root.join("hot.cfg");
    std::fs::write(&cfg, TINY.replace("train.lr = 0.001", "train.lr = 1e30").replace("train.max_steps = 3", "train.max_steps = 10")).unwrap();
    let out = mmht(&["train", "--config", s(&cfg)]);
    assert_code(&out, 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("loss component"));
}
