use std::path::Path;
use std::process::{Command, Output};

use shiftnet::ppm::{read_image, read_mask};

fn shiftnet(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_shiftnet"))
        .args(args)
        .current_dir(cwd)
        .output()
        .unwrap()
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let o = shiftnet(args, cwd);
    assert_eq!(o.status.code(), Some(0), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout).unwrap()
}

const RUN: &str = "epochs = 2\nmax_steps = 6\nlr = 0.002\ndata_dir = toy/train\nout_dir = run\n";

fn listing(dir: &Path) -> Vec<String> {
    let mut v: Vec<String> = walk(dir).into_iter().map(|p| p.strip_prefix(dir).unwrap().display().to_string()).collect();
    v.sort();
    v
}

fn walk(dir: &Path) -> Vec<std::path::PathBuf> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            out.extend(walk(&p));
        }
        out.push(p);
    }
    out
}

#[test]
fn train_inpaint_evaluate_round() {
    let d = tempfile::tempdir().unwrap();
    let w = d.path();
    ok(&["toydata", "toy", "--count", "4"], w);
    std::fs::write(w.join("run.conf"), RUN).unwrap();
    let before = listing(w);
    ok(&["train", "run.conf", "--shift-mode", "random", "--lambda-g", "0.02"], w);
    let mut after = listing(w);
    after.retain(|p| !before.contains(p));
    assert_eq!(
        after,
        ["run", "run/ckpt", "run/ckpt/epoch_1.snet", "run/ckpt/epoch_2.snet", "run/config.txt", "run/losses.csv"]
    );
    let csv = std::fs::read_to_string(w.join("run/losses.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "step,l1,guidance,g_adv,d_loss,total");
    assert_eq!(lines.len(), 7);
    let saved = std::fs::read_to_string(w.join("run/config.txt")).unwrap();
    assert!(saved.contains("shift_mode = random") && saved.contains("lambda_g = 0.02"));

    ok(&["mask", "m.ppm", "--kind", "random", "--seed", "4"], w);
    ok(&["inpaint", "run/ckpt/epoch_2.snet", "toy/heldout/toy_0000.ppm", "m.ppm", "out.ppm"], w);
    let src = read_image(&w.join("toy/heldout/toy_0000.ppm")).unwrap();
    let dst = read_image(&w.join("out.ppm")).unwrap();
    let mask = read_mask(&w.join("m.ppm")).unwrap();
    for (i, &m) in mask.data().iter().enumerate() {
        if m == 0 {
            assert_eq!(src.data[3 * i..3 * i + 3], dst.data[3 * i..3 * i + 3], "pixel {i}");
        }
    }

    let csv = ok(&["evaluate", "run/ckpt/epoch_2.snet", "toy/heldout"], w);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "filename,psnr,ssim,mean_l2");
    assert_eq!(lines.len(), 3);
    assert!(lines[2].starts_with("mean,"));
    let bench = ok(&["bench", "run/ckpt/epoch_2.snet", "--runs", "3"], w);
    assert!(bench.contains("median"));
    ok(&["visualize", "run/ckpt/epoch_2.snet", "toy/train/toy_0000.ppm", "--iters", "5", "--out-dir", "viz"], w);
    assert!(w.join("viz/toy_0000_hgt.ppm").exists() && w.join("viz/toy_0000_hde.ppm").exists());
}

#[test]
fn exit_codes() {
    let d = tempfile::tempdir().unwrap();
    let w = d.path();
    assert_eq!(shiftnet(&["train", "--no-such-flag", "x"], w).status.code(), Some(2));
    assert_eq!(shiftnet(&["frobnicate"], w).status.code(), Some(2));
    let o = shiftnet(&["train", "missing.conf"], w);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("missing.conf"));
    std::fs::write(w.join("bad.conf"), "lamda_g = 1\n").unwrap();
    let o = shiftnet(&["train", "bad.conf"], w);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown key 'lamda_g'"));
    assert_eq!(shiftnet(&["toydata", "t", "--count", "1"], w).status.code(), Some(1));
    assert_eq!(shiftnet(&["--help"], w).status.code(), Some(0));
}

#[test]
fn gradcheck_passes() {
    let d = tempfile::tempdir().unwrap();
    let out = ok(&["gradcheck", "--seeds", "2"], d.path());
    assert!(out.lines().last().unwrap().ends_with("checks passed"));
    assert!(!out.contains("FAIL"));
}
