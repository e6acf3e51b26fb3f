use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

const BLOBS: &str = r#"
seed = 3
mc_samples = 8

[mle]
epochs = 15
[mle.optimizer]
kind = "adam"
lr = 0.01

[vi]
epochs = 4

[data.ood]
kind = "synthetic"
generator = "shifted-blobs"
n = 200
split = "ood"
"#;

fn moped(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_moped"))
        .current_dir(dir)
        .env("RUST_LOG", "warn")
        .args(args)
        .output()
        .unwrap()
}

fn ok(out: Output) -> Output {
    assert!(
        out.status.success(),
        "status {:?}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn setup(config: &str) -> (TempDir, PathBuf) {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("run.toml");
    fs::write(&path, config).unwrap();
    (dir, path)
}

/// Runs both training stages into `mle/` and `vi/`.
fn train(dir: &Path) {
    ok(moped(dir, &["--config", "run.toml", "--out", "mle", "train-mle"]));
    ok(moped(
        dir,
        &["--config", "run.toml", "--out", "vi", "train-vi", "--mle-checkpoint", "mle/mle.ckpt"],
    ));
}

#[test]
fn pipeline_writes_every_artifact() {
    let (dir, _) = setup(BLOBS);
    let d = dir.path();
    train(d);
    ok(moped(d, &["--config", "run.toml", "--out", "eval", "evaluate", "--checkpoint", "vi/vi.ckpt"]));
    ok(moped(d, &["--config", "run.toml", "--out", "ood", "ood", "--checkpoint", "vi/vi.ckpt"]));
    ok(moped(d, &["--config", "run.toml", "--out", "curves", "curves", "--predictions", "eval/predictions.csv"]));
    for f in [
        "mle/mle.ckpt",
        "mle/mle_log.csv",
        "mle/config.toml",
        "vi/vi.ckpt",
        "vi/vi_log.csv",
        "vi/provenance.json",
        "eval/predictions.csv",
        "eval/metrics.csv",
        "eval/metrics.json",
        "ood/ood_report.json",
        "ood/ood_histogram.csv",
        "curves/metrics.csv",
    ] {
        assert!(d.join(f).is_file(), "missing {f}");
    }
    // Curves recomputed from the dump agree with the direct evaluation.
    assert_eq!(
        fs::read(d.join("eval/metrics.csv")).unwrap(),
        fs::read(d.join("curves/metrics.csv")).unwrap()
    );
    let log = fs::read_to_string(d.join("vi/vi_log.csv")).unwrap();
    assert_eq!(log.lines().count(), 5);
    let prov: serde_json::Value = serde_json::from_slice(&fs::read(d.join("vi/provenance.json")).unwrap()).unwrap();
    assert_eq!(prov["init"], "moped-scaled");
    assert_eq!(prov["checkpoint_hash"].as_str().unwrap().len(), 64);

    let ood: serde_json::Value = serde_json::from_slice(&fs::read(d.join("ood/ood_report.json")).unwrap()).unwrap();
    assert!(ood["out_mean"].as_f64().unwrap() > ood["in_mean"].as_f64().unwrap());
    let hist = fs::read_to_string(d.join("ood/ood_histogram.csv")).unwrap();
    assert!(hist.starts_with("bin_left,bin_right,in_density,out_density\n"));
    assert_eq!(hist.lines().count(), 31);
}

#[test]
fn reruns_are_byte_identical() {
    let (dir, _) = setup(BLOBS);
    let d = dir.path();
    train(d);
    for out in ["a", "b"] {
        ok(moped(d, &["--config", "run.toml", "--out", out, "evaluate", "--checkpoint", "vi/vi.ckpt"]));
    }
    for f in ["predictions.csv", "metrics.csv", "metrics.json"] {
        assert_eq!(fs::read(d.join("a").join(f)).unwrap(), fs::read(d.join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn flags_override_config_and_are_recorded() {
    let (dir, _) = setup(BLOBS);
    let d = dir.path();
    ok(moped(d, &["--config", "run.toml", "--out", "mle", "--seed", "11", "train-mle"]));
    ok(moped(
        d,
        &[
            "--config", "run.toml", "--out", "vi", "--seed", "11", "train-vi", "--mle-checkpoint", "mle/mle.ckpt",
            "--variant", "perturb", "--rho-bar", "-4", "--delta-rho", "0.2",
        ],
    ));
    let resolved: toml::Value = toml::from_str(&fs::read_to_string(d.join("vi/config.toml")).unwrap()).unwrap();
    assert_eq!(resolved["seed"].as_integer(), Some(11));
    assert_eq!(resolved["vi"]["seed"].as_integer(), Some(11));
    assert_eq!(resolved["moped"]["variant"].as_str(), Some("perturb"));
    assert_eq!(resolved["moped"]["rho_bar"].as_float(), Some(-4.0));
    assert_eq!(resolved["moped"]["delta_rho"].as_float(), Some(0.2));
    let prov = fs::read_to_string(d.join("vi/provenance.json")).unwrap();
    assert!(prov.contains("moped-perturb"));
}

#[test]
fn random_init_needs_no_checkpoint() {
    let (dir, _) = setup(BLOBS);
    let out = ok(moped(dir.path(), &["--config", "run.toml", "--out", "r", "train-vi", "--init", "random"]));
    assert!(String::from_utf8_lossy(&out.stdout).contains("test accuracy"));
    let prov = fs::read_to_string(dir.path().join("r/provenance.json")).unwrap();
    assert!(prov.contains("\"random\""));
}

#[test]
fn moped_without_checkpoint_is_a_usage_error() {
    let (dir, _) = setup(BLOBS);
    let out = moped(dir.path(), &["--config", "run.toml", "--out", "x", "train-vi"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("--mle-checkpoint"));
}

#[test]
fn ood_without_dataset_is_a_usage_error() {
    let (dir, _) = setup("[vi]\nepochs = 1\n[mle]\nepochs = 1\n");
    let d = dir.path();
    train(d);
    let out = moped(d, &["--config", "run.toml", "--out", "o", "ood", "--checkpoint", "vi/vi.ckpt"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn bad_config_is_a_usage_error() {
    let (dir, _) = setup("mc_samplez = 4\n");
    let out = moped(dir.path(), &["--config", "run.toml", "train-mle"]);
    assert_eq!(out.status.code(), Some(2));
    let out = moped(dir.path(), &["--bogus-flag", "train-mle"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn mismatched_checkpoint_names_the_layer() {
    let (dir, _) = setup("[mle]\nepochs = 1\n");
    let d = dir.path();
    ok(moped(d, &["--config", "run.toml", "--out", "mle", "train-mle"]));
    fs::write(d.join("wide.toml"), "[model]\nhidden = 16\n").unwrap();
    let out = moped(d, &["--config", "wide.toml", "--out", "vi", "train-vi", "--mle-checkpoint", "mle/mle.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("dense1"), "{err}");
}

#[test]
fn missing_checkpoint_is_a_runtime_error() {
    let (dir, _) = setup("");
    let out = moped(dir.path(), &["--out", "e", "evaluate", "--checkpoint", "nope.ckpt"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("nope.ckpt"));
}
