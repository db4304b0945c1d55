use std::path::Path;
use std::process::{Command, Output};

fn pwarpc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pwarpc"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

const SMALL: &str = "[data]\nn_pos = 8\nn_neg = 8\n[train]\nsteps = 2\nbatch_size = 2\ncheckpoint_every = 2\n";

#[test]
fn dataset_train_eval_round() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path();
    std::fs::write(dir.join("small.cfg"), SMALL).unwrap();

    let out = pwarpc(dir, &["make-dataset", "--config", "small.cfg", "--out", "data"]);
    assert!(out.status.success());
    let manifest = std::fs::read_to_string(dir.join("data/manifest.jsonl")).unwrap();
    assert_eq!(manifest.lines().count(), 16);
    assert!(dir.join("data/config.echo").is_file());

    let out = pwarpc(dir, &["train", "--config", "small.cfg", "--data", "data", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["checkpoints/step_000002.pwrc", "checkpoints/final.pwrc", "logs/train.csv", "config.echo"] {
        assert!(dir.join("run").join(f).is_file(), "{f}");
    }
    let log = std::fs::read_to_string(dir.join("run/logs/train.csv")).unwrap();
    assert_eq!(log.lines().count(), 3);

    let out = pwarpc(dir, &["eval", "--checkpoint", "run/checkpoints/final.pwrc", "--data", "data", "--out", "run"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let metrics = std::fs::read_to_string(dir.join("run/eval/metrics.csv")).unwrap();
    for alpha in ["0.05", "0.1", "0.15"] {
        let rows = metrics.lines().filter(|l| l.split(',').nth(2) == Some(alpha)).count();
        assert!(rows > 0, "no rows at alpha {alpha}");
    }
    assert!(metrics.lines().any(|l| l.contains(",dense_pck_argmax,")));
    assert!(dir.join("run/eval/curves.svg").is_file());
}

#[test]
fn missing_checkpoint_is_an_io_error() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pwarpc(tmp.path(), &["eval", "--checkpoint", "nope.pwrc", "--data", "data", "--out", "run"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(pwarpc(tmp.path(), &["train", "--bogus"]).status.code(), Some(1));
    assert_eq!(pwarpc(tmp.path(), &["--threads", "0", "gradcheck"]).status.code(), Some(1));
    assert_eq!(pwarpc(tmp.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn sample_warps_writes_each_draw() {
    let tmp = tempfile::tempdir().unwrap();
    let out = pwarpc(tmp.path(), &["sample-warps", "--n", "3", "--out", "w"]);
    assert!(out.status.success());
    for i in 0..3 {
        for suffix in [".pwim", "_field.ppm", "_warped.ppm"] {
            assert!(tmp.path().join(format!("w/warp_{i:03}{suffix}")).is_file());
        }
    }
    assert!(tmp.path().join("w/grid.ppm").is_file());
}
