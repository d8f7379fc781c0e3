use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use spoa_core::checkpoint::load_checkpoint;
use spoa_core::data::{load_image, save_image, ImageBuffer};
use spoa_core::nn::{NetworkConfig, ParameterSet};
use tempfile::TempDir;

const SMALL: &[&str] = &[
    "--set",
    "feature_channels=4",
    "--set",
    "n_fe=2",
    "--set",
    "n_rb=2",
    "--set",
    "n_tb=2",
    "--set",
    "n_policy_blocks=2",
    "--set",
    "patch_size=16",
    "--set",
    "dataset_size=10",
    "--set",
    "buffer_capacity=4",
];

fn small_net() -> NetworkConfig {
    NetworkConfig {
        feature_channels: 4,
        n_fe: 2,
        n_rb: 2,
        n_tb: 2,
        n_policy_blocks: 2,
        ..NetworkConfig::default()
    }
}

fn spoa(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_spoa"))
        .current_dir(dir)
        .env_remove("SPOA_THREADS")
        .args(args)
        .output()
        .expect("spawn spoa")
}

fn ok(dir: &Path, args: &[&str]) -> String {
    let out = spoa(dir, args);
    assert!(
        out.status.success(),
        "spoa {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn with_small<'a>(extra: &[&'a str]) -> Vec<&'a str> {
    let mut v: Vec<&str> = SMALL.to_vec();
    v.extend_from_slice(extra);
    v
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let p = e.unwrap().path();
            (p.file_name().unwrap().into(), fs::read(&p).unwrap())
        })
        .collect();
    files.sort();
    files
}

#[test]
fn synth_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &["--seed", "7", "--set", "dataset_size=10", "--set", "dataset_dir=a", "synth"]);
    ok(tmp.path(), &["--seed", "7", "--set", "dataset_size=10", "--set", "dataset_dir=b", "synth"]);
    let a = tree(&tmp.path().join("a"));
    assert_eq!(a.len(), 11);
    assert_eq!(a, tree(&tmp.path().join("b")));
    ok(tmp.path(), &["--seed", "8", "--set", "dataset_size=10", "--set", "dataset_dir=c", "synth"]);
    assert_ne!(a, tree(&tmp.path().join("c")));
}

#[test]
fn validation_errors_exit_with_2() {
    let tmp = TempDir::new().unwrap();
    let out = spoa(tmp.path(), &["--set", "dataset_size=0", "synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty dataset requested"));

    let out = spoa(tmp.path(), &["--set", "patch_size=30", "synth"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("divisible"));

    let out = spoa(tmp.path(), &["--set", "alpah=1e-3", "config"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpah"));

    let out = Command::new(env!("CARGO_BIN_EXE_spoa"))
        .current_dir(tmp.path())
        .env("SPOA_THREADS", "many")
        .arg("config")
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // a missing dataset is a runtime failure
    let out = spoa(tmp.path(), &["--set", "dataset_dir=nowhere", "train"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn config_dump_round_trips() {
    let tmp = TempDir::new().unwrap();
    let dump = ok(tmp.path(), &["--set", "alpha=3e-4", "--seed", "5", "--set", "augment=false", "config"]);
    assert!(dump.contains("alpha = 0.0003\n") && dump.contains("seed = 5\n"));
    fs::write(tmp.path().join("run.cfg"), &dump).unwrap();
    assert_eq!(ok(tmp.path(), &["--config", "run.cfg", "config"]), dump);
}

#[test]
fn zero_episodes_store_the_initial_parameters() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &with_small(&["--seed", "3", "synth"]));
    ok(tmp.path(), &with_small(&["--seed", "3", "--set", "episodes=0", "train"]));
    let state = load_checkpoint(&tmp.path().join("spoa.ckpt"), &small_net()).unwrap();
    assert_eq!(state.params, ParameterSet::init(&small_net(), 3).unwrap());
    assert_eq!(state.episode, 0);
    let log = fs::read_to_string(tmp.path().join("train_log.csv")).unwrap();
    assert_eq!(log, "episode,mean_reward,windowed_reward,mean_pi,success_count,duration_s\n");
}

#[test]
fn training_is_reproducible_across_runs_and_thread_counts() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &with_small(&["synth"]));
    let run = |name: &str, threads: &str| {
        let log = format!("log={name}.csv");
        let ckpt = format!("checkpoint={name}.ckpt");
        let args = with_small(&["--set", "episodes=4", "--set", &log, "--set", &ckpt, "train"]);
        let out = Command::new(env!("CARGO_BIN_EXE_spoa"))
            .current_dir(tmp.path())
            .env("SPOA_THREADS", threads)
            .args(&args)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        (
            fs::read(tmp.path().join(format!("{name}.csv"))).unwrap(),
            fs::read(tmp.path().join(format!("{name}.ckpt"))).unwrap(),
        )
    };
    let a = run("a", "1");
    let b = run("b", "1");
    let c = run("c", "3");
    assert_eq!(a, b);
    assert_eq!(a, c);
    assert_eq!(String::from_utf8_lossy(&a.0).lines().count(), 5);
}

#[test]
fn resumed_training_matches_a_single_run() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &with_small(&["synth"]));
    ok(tmp.path(), &with_small(&["--set", "episodes=4", "--set", "checkpoint=full.ckpt", "train"]));
    ok(tmp.path(), &with_small(&["--set", "episodes=2", "--set", "checkpoint=half.ckpt", "train"]));
    ok(
        tmp.path(),
        &with_small(&["--set", "episodes=4", "--set", "resume=half.ckpt", "--set", "checkpoint=rest.ckpt", "train"]),
    );
    assert_eq!(
        fs::read(tmp.path().join("full.ckpt")).unwrap(),
        fs::read(tmp.path().join("rest.ckpt")).unwrap()
    );
}

#[test]
fn gradcheck_passes_and_detects_faults() {
    let tmp = TempDir::new().unwrap();
    for seed in ["0", "1", "2", "3", "4"] {
        let out = ok(tmp.path(), &["--seed", seed, "--set", "gradcheck_instances=1", "gradcheck"]);
        assert_eq!(out.lines().filter(|l| l.ends_with(": ok")).count(), 4, "{out}");
    }
    let out = spoa(tmp.path(), &["--set", "gradcheck_fault=sign_flip", "--set", "gradcheck_instances=1", "gradcheck"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stdout).contains("FAILED"));
}

fn mean_row(report: &str, method: &str) -> Vec<f64> {
    let line = report
        .lines()
        .find(|l| l.starts_with(&format!("mean,{method},")))
        .unwrap();
    line.split(',').skip(2).map(|v| v.parse().unwrap()).collect()
}

#[test]
fn eval_compares_against_bicubic() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &with_small(&["synth"]));
    ok(tmp.path(), &with_small(&["--set", "episodes=0", "--set", "checkpoint=init.ckpt", "train"]));
    ok(
        tmp.path(),
        &with_small(&["--set", "episodes=40", "--set", "alpha=1e-3", "--set", "checkpoint=trained.ckpt", "train"]),
    );
    ok(tmp.path(), &with_small(&["--set", "checkpoint=init.ckpt", "--set", "report=init.csv", "eval"]));
    ok(tmp.path(), &with_small(&["--set", "checkpoint=trained.ckpt", "--set", "report=trained.csv", "eval"]));
    let init = fs::read_to_string(tmp.path().join("init.csv")).unwrap();
    let trained = fs::read_to_string(tmp.path().join("trained.csv")).unwrap();
    assert!(init.starts_with("image_id,method,psnr_db,ssim,sre_db,sam_deg\n"));
    assert_eq!(mean_row(&init, "bicubic"), mean_row(&trained, "bicubic"));
    let bicubic_rows = |r: &str| r.lines().filter(|l| l.contains(",bicubic,")).map(str::to_owned).collect::<Vec<_>>();
    assert_eq!(bicubic_rows(&init), bicubic_rows(&trained));
    assert!(mean_row(&trained, "spoa")[0] > mean_row(&init, "spoa")[0]);

    fs::write(tmp.path().join("corrupt.ckpt"), b"SPOA2garbage").unwrap();
    let out = spoa(tmp.path(), &with_small(&["--set", "checkpoint=corrupt.ckpt", "eval"]));
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("corrupt.ckpt") && err.contains("magic"), "{err}");
}

#[test]
fn infer_upsamples_four_times() {
    let tmp = TempDir::new().unwrap();
    ok(tmp.path(), &with_small(&["--set", "episodes=0", "--set", "dataset_size=4", "synth"]));
    ok(tmp.path(), &with_small(&["--set", "episodes=0", "train"]));
    let pixels: Vec<u8> = (0..16 * 16).map(|i| (i * 7 % 256) as u8).collect();
    save_image(&ImageBuffer::new(16, 16, 1, pixels).unwrap(), tmp.path().join("in.pgm")).unwrap();
    ok(tmp.path(), &with_small(&["infer", "in.pgm", "out1.pgm"]));
    ok(tmp.path(), &with_small(&["infer", "in.pgm", "out2.pgm"]));
    let out = load_image(tmp.path().join("out1.pgm")).unwrap();
    assert_eq!((out.width, out.height, out.channels), (64, 64, 1));
    assert_eq!(
        fs::read(tmp.path().join("out1.pgm")).unwrap(),
        fs::read(tmp.path().join("out2.pgm")).unwrap()
    );

    save_image(&ImageBuffer::new(4, 4, 3, vec![9; 48]).unwrap(), tmp.path().join("rgb.ppm")).unwrap();
    let out = spoa(tmp.path(), &with_small(&["infer", "rgb.ppm", "x.ppm"]));
    assert_eq!(out.status.code(), Some(2));
}
