use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn aeseg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_aeseg"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

/// A configuration small enough to run every command in a few seconds.
const TINY: &str = r#"{
  "seed": 3,
  "data": {
    "n_healthy": 4,
    "n_lesion": 2,
    "train_frac": 0.5,
    "phantom": {"dims": [8, 16, 16], "lesion_radius": [1.5, 2.5]}
  },
  "model": {"kind": "sae", "config": {"input_size": 16, "stages": 2, "base_width": 4}},
  "train": {"epochs": 2},
  "pipeline": {"median_size": 3}
}"#;

fn write_tiny(dir: &Path) -> String {
    let p = dir.join("tiny.json");
    fs::write(&p, TINY).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn full_run_writes_every_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let d = |s: &str| dir.path().join(s).to_str().unwrap().to_string();

    let o = aeseg(&["gen-data", "--config", &cfg, "--out", &d("data")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let manifest = d("data/manifest.json");
    let entries = fs::read_dir(d("data")).unwrap().filter(|e| e.as_ref().unwrap().path().is_dir()).count();
    assert_eq!(entries, 6);

    let o = aeseg(&["train", "--config", &cfg, "--manifest", &manifest, "--out", &d("run")]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let loss = fs::read_to_string(d("run/loss.csv")).unwrap();
    assert!(loss.starts_with("step,epoch,l_rec,l_prior,l_adv,l_dis\n"));

    let o = aeseg(&[
        "segment",
        "--config",
        &cfg,
        "--checkpoint",
        &d("run/model.ckpt"),
        "--manifest",
        &manifest,
        "--out",
        &d("seg"),
        "--jobs",
        "2",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let results = fs::read_to_string(d("seg/results.csv")).unwrap();
    assert_eq!(results.lines().next(), Some("model,latent_spec,patient_id,dice,seconds"));
    // two held-out healthy subjects plus both lesion subjects
    assert_eq!(results.lines().count(), 5);
    assert!(fs::read_to_string(d("seg/histogram.csv")).unwrap().starts_with("bin_lo,bin_hi,"));

    let o = aeseg(&["eval", "--predictions", &d("seg"), "--manifest", &manifest]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = fs::read_to_string(d("seg/summary.csv")).unwrap();
    assert!(summary.starts_with("model,latent_spec,dice_mean,dice_std,avg_seconds\nsAE,spatial:4x4x8,"));

    // Missing predictions are reported by id.
    fs::remove_file(d("seg/masks/lesion_005.vol")).unwrap();
    let o = aeseg(&["eval", "--predictions", &d("seg"), "--manifest", &manifest]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("lesion_005"));
}

#[test]
fn gen_data_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    for out in ["a", "b"] {
        let o = aeseg(&["gen-data", "--config", &cfg, "--out", dir.path().join(out).to_str().unwrap()]);
        assert_eq!(code(&o), 0);
    }
    for name in ["manifest.json", "config.json", "lesion_004/image.vol", "healthy_000/brain_mask.vol"] {
        let a = fs::read(dir.path().join("a").join(name)).unwrap();
        let b = fs::read(dir.path().join("b").join(name)).unwrap();
        assert_eq!(a, b, "{name}");
    }
}

#[test]
fn invalid_json_exits_2_with_location() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("bad.json");
    fs::write(&p, "{\n  \"seed\": 1,\n  \"train\": {\"epochs\": }\n}").unwrap();
    let o = aeseg(&["gen-data", "--config", p.to_str().unwrap(), "--out", dir.path().to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("line 3"), "{err}");
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&aeseg(&["gen-data", "--out", out, "--set", "train.bogus=1"])), 2);
    assert_eq!(code(&aeseg(&["gen-data", "--out", out, "--latent", "spatial:9x9x4"])), 2);
    assert_eq!(code(&aeseg(&["gen-data", "--model", "nope", "--out", out])), 2);
    assert_eq!(code(&aeseg(&["gen-data"])), 2);
}

#[test]
fn missing_manifest_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let o = aeseg(&[
        "train",
        "--manifest",
        dir.path().join("absent.json").to_str().unwrap(),
        "--out",
        dir.path().to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn diverging_training_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_tiny(dir.path());
    let data = dir.path().join("data");
    assert_eq!(code(&aeseg(&["gen-data", "--config", &cfg, "--out", data.to_str().unwrap()])), 0);
    let o = aeseg(&[
        "train",
        "--config",
        &cfg,
        "--set",
        "train.lr_rec=1e38",
        "--manifest",
        data.join("manifest.json").to_str().unwrap(),
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
}
