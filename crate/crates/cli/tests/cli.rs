use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use cresmd::imaging::textures::texture;
use cresmd::imaging::{load_ppm, save_ppm};
use cresmd::model::{save_checkpoint, ArchConfig};
use cresmd::{DegradationSpace, Model};

const BIN: &str = env!("CARGO_BIN_EXE_cresmd");

fn run(args: &[&str]) -> Output {
    Command::new(BIN).args(args).output().expect("spawn cresmd")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn tiny_ckpt(dir: &Path) -> std::path::PathBuf {
    let p = dir.join("tiny.crmd");
    save_checkpoint(&p, &Model::<f32>::new(ArchConfig::tiny(), DegradationSpace::desk_2d(), 3).unwrap()).unwrap();
    p
}

#[test]
fn degrade_at_zero_copies_the_file() {
    let dir = tempfile::tempdir().unwrap();
    let (src, dst) = (dir.path().join("a.ppm"), dir.path().join("b.ppm"));
    save_ppm(&texture(1, 24, 30), &src).unwrap();
    let out = run(&["degrade", "--in", path(&src), "--out", path(&dst)]);
    assert!(out.status.success());
    assert_eq!(fs::read(&src).unwrap(), fs::read(&dst).unwrap());
    assert!(String::from_utf8_lossy(&out.stdout).contains("z=0,0,0"));
}

#[test]
fn degrade_is_seeded() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("a.ppm");
    save_ppm(&texture(2, 24, 24), &src).unwrap();
    let outs: Vec<Vec<u8>> = ["1", "1", "2"]
        .iter()
        .enumerate()
        .map(|(i, seed)| {
            let dst = dir.path().join(format!("o{i}.ppm"));
            let args = ["degrade", "--in", path(&src), "--out", path(&dst), "--noise", "10", "--seed", seed];
            assert!(run(&args).status.success());
            fs::read(&dst).unwrap()
        })
        .collect();
    assert_eq!(outs[0], outs[1]);
    assert_ne!(outs[0], outs[2]);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("a.ppm");
    let dst = dir.path().join("b.ppm");
    save_ppm(&texture(3, 16, 16), &src).unwrap();
    let ckpt = tiny_ckpt(dir.path());

    let code = |args: &[&str]| run(args).status.code();
    assert_eq!(code(&["degrade", "--in", path(&src), "--out", path(&dst), "--blur", "9"]), Some(4));
    assert_eq!(code(&["degrade", "--in", "/nonexistent.ppm", "--out", path(&dst)]), Some(3));
    assert_eq!(code(&["restore", "--ckpt", path(&ckpt), "--in", path(&src), "--out", path(&dst), "--z", "0.5"]), Some(2));
    assert_eq!(code(&["restore", "--ckpt", "/nonexistent.crmd", "--in", path(&src), "--out", path(&dst), "--z", "0,0"]), Some(3));
    assert_eq!(code(&["restore", "--ckpt", path(&ckpt), "--in", path(&src), "--out", path(&dst), "--z", "nan,0"]), Some(2));
    assert_eq!(code(&["train", "--config", "/nonexistent.toml", "--data", path(dir.path()), "--out", path(&dst)]), Some(2));
    assert_eq!(code(&["no-such-command"]), Some(2));
}

#[test]
fn restore_out_of_range_z_warns_but_runs() {
    let dir = tempfile::tempdir().unwrap();
    let (src, dst) = (dir.path().join("a.ppm"), dir.path().join("b.ppm"));
    save_ppm(&texture(4, 20, 20), &src).unwrap();
    let ckpt = tiny_ckpt(dir.path());
    let out = run(&["restore", "--ckpt", path(&ckpt), "--in", path(&src), "--out", path(&dst), "--z", "1.5,-0.2"]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).to_lowercase().contains("outside"));
    assert_eq!(load_ppm(&dst).unwrap().dims(), (3, 20, 20));
}

#[test]
fn sweep_writes_frames_and_csv() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("a.ppm");
    save_ppm(&texture(5, 16, 16), &src).unwrap();
    let ckpt = tiny_ckpt(dir.path());
    let frames = dir.path().join("frames");
    let out = run(&[
        "sweep", "--ckpt", path(&ckpt), "--in", path(&src), "--clean", path(&src), "--dim", "noise", "--steps", "2",
        "--out-dir", path(&frames),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(frames.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    // z = 0 is the identity, so the first frame matches the clean reference exactly
    assert!(csv.lines().nth(1).unwrap().ends_with("inf"), "{csv}");
    assert!(frames.join("frame_000.ppm").exists() && frames.join("frame_001.ppm").exists());
}

#[test]
fn train_logs_and_saves_a_loadable_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = run(&["textures", "--out-dir", path(&data), "--count", "2", "--size", "32", "--seed", "1"]);
    assert!(out.status.success());
    let config = dir.path().join("train.toml");
    fs::write(
        &config,
        "iterations = 3\ncrop = 16\nbatch = 2\nlr_halving_interval = 2\n\n[arch]\nchannels = 8\nblocks = 2\ngroups = 2\nimage_channels = 3\ncondition_dim = 2\n",
    )
    .unwrap();
    let ckpt = dir.path().join("m.crmd");
    let out = run(&["train", "--config", path(&config), "--data", path(&data), "--out", path(&ckpt)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let log = String::from_utf8(out.stdout).unwrap();
    let lines: Vec<&str> = log.lines().take(4).collect();
    assert_eq!(lines[0], "iter,loss,lr");
    let lrs: Vec<f64> = lines[1..].iter().map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(lrs, [5e-4, 5e-4, 2.5e-4]);

    let img = dir.path().join("in.ppm");
    save_ppm(&texture(9, 18, 18), &img).unwrap();
    let dst = dir.path().join("out.ppm");
    let out = run(&["restore", "--ckpt", path(&ckpt), "--in", path(&img), "--out", path(&dst), "--z", "0.3,0.3"]);
    assert!(out.status.success());
}
