use std::path::Path;
use std::process::{Command, Output};

use warpnorm::commands::VISUALIZE_PANELS;
use warpnorm::image::decode_pnm;

const TINY_ABLATION: &str = "\
seed = 5
steps = 2
batch = 2
height = 32
width = 32
channels = 4,8,8
style_channels = 2,2,2
eval_scenes = 1
grid_scenes = 1
encoder_mode = false
";

const TINY_STPR: &str = "\
seed = 5
pretrain_steps = 2
steps = 2
batch = 2
height = 32
width = 32
channels = 4,8,8
style_channels = 2,2,2
eval_scenes = 1
pairs = 1
";

fn warpnorm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_warpnorm"))
        .args(args)
        .env("WARPNORM_THREADS", "1")
        .output()
        .expect("spawn warpnorm")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn gradcheck_single_op_passes() {
    let o = warpnorm(&["gradcheck", "--ops", "add", "--seeds", "2", "--tol", "1e-6"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stdout));
    assert!(String::from_utf8_lossy(&o.stdout).contains("add"));
}

#[test]
fn unknown_op_is_a_usage_error() {
    let o = warpnorm(&["gradcheck", "--ops", "nosuch"]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("nosuch") && err.contains("msawn"), "{err}");
}

#[test]
fn missing_config_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    for sub in ["ablate", "stpr"] {
        let o = warpnorm(&[sub, "--config", "/no/such/file.cfg", "--out", path(&out)]);
        assert_eq!(code(&o), 2, "{sub}");
    }
}

#[test]
fn malformed_config_names_the_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "seed = 1\nsteps = lots\n").unwrap();
    let o = warpnorm(&[
        "ablate",
        "--config",
        path(&cfg),
        "--out",
        path(&dir.path().join("out")),
    ]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(":2"));
}

#[test]
fn bad_arguments_exit_two() {
    assert_eq!(code(&warpnorm(&["frobnicate"])), 2);
    assert_eq!(code(&warpnorm(&["ablate"])), 2);
    let dir = tempfile::tempdir().unwrap();
    let o = warpnorm(&[
        "visualize",
        "--out",
        path(dir.path()),
        "--motion",
        "spin(2)",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn tiny_ablation_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY_ABLATION).unwrap();
    let out = dir.path().join("out");
    let o = warpnorm(&["ablate", "--config", path(&cfg), "--out", path(&out)]);
    // Two steps cannot be expected to separate the variants.
    assert!(
        matches!(code(&o), 0 | 1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in ["config.txt", "ablation.csv", "grid_0.ppm", "manifest.txt"] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let csv = std::fs::read_to_string(out.join("ablation.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + 12);
    let grid = decode_pnm(&std::fs::read(out.join("grid_0.ppm")).unwrap()).unwrap();
    assert_eq!(grid.shape().w, 5 * 32);
}

#[test]
fn tiny_stpr_writes_its_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.cfg");
    std::fs::write(&cfg, TINY_STPR).unwrap();
    let out = dir.path().join("out");
    let o = warpnorm(&["stpr", "--config", path(&cfg), "--out", path(&out)]);
    assert!(
        matches!(code(&o), 0 | 1),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    for f in [
        "config.txt",
        "pretrain_trace.csv",
        "pretrained.ckpt",
        "finetune_trace.csv",
        "finetuned.ckpt",
        "stpr.csv",
        "manifest.txt",
    ] {
        assert!(out.join(f).is_file(), "{f}");
    }
    let pairs = std::fs::read_dir(&out)
        .unwrap()
        .filter(|e| {
            e.as_ref()
                .unwrap()
                .file_name()
                .to_string_lossy()
                .starts_with("pair_0_")
        })
        .count();
    assert_eq!(pairs, 1);

    let ckpt = out.join("finetuned.ckpt");
    let vis = dir.path().join("vis");
    let o = warpnorm(&[
        "visualize",
        "--out",
        path(&vis),
        "--checkpoint",
        path(&ckpt),
    ]);
    // The tiny checkpoint was trained at 32x32 with narrower channels.
    assert_ne!(code(&o), 0);
}

#[test]
fn visualize_identity_motion() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("vis");
    let o = warpnorm(&[
        "visualize",
        "--scene-seed",
        "3",
        "--motion",
        "identity",
        "--out",
        path(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in VISUALIZE_PANELS
        .iter()
        .chain(&["panels.ppm", "manifest.txt"])
    {
        assert!(out.join(f).is_file(), "{f}");
    }
    let read = |f: &str| std::fs::read(out.join(f)).unwrap();
    assert_eq!(read("warped.ppm"), read("input.ppm"));
    assert_eq!(read("target.ppm"), read("input.ppm"));
    let occ = decode_pnm(&read("occlusion.pgm")).unwrap();
    assert!(occ.data().iter().all(|&v| v == 1.0));
    let flow = decode_pnm(&read("flow.ppm")).unwrap();
    assert!(flow.data().iter().all(|&v| v == 0.0));
}

#[test]
fn visualize_missing_checkpoint_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let o = warpnorm(&[
        "visualize",
        "--out",
        path(dir.path()),
        "--checkpoint",
        "/no/such.ckpt",
    ]);
    assert_eq!(code(&o), 2);
}
