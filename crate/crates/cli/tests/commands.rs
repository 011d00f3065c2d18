use std::path::Path;
use std::process::{Command, Output};

use retinexdual_core::data::load_paired_dataset;
use retinexdual_core::metrics::psnr_images;
use retinexdual_core::{checkpoint, Preset, RetinexDual, RunConfig};
use serde_json::Value;

fn cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_retinexdual")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Vec<Value> {
    let out = cli(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    records(&String::from_utf8(out.stdout).unwrap())
}

fn records(text: &str) -> Vec<Value> {
    text.lines().map(|l| serde_json::from_str(l).unwrap()).collect()
}

fn code(args: &[&str]) -> i32 {
    cli(args).status.code().unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn synthesize(dir: &Path, kind: &str, count: usize, size: usize, seed: u64) {
    let (count, size, seed) = (count.to_string(), size.to_string(), seed.to_string());
    ok(&["synthesize", "--kind", kind, "--count", &count, "--height", &size, "--width", &size, "--seed", &seed, "--out", p(dir)]);
}

#[test]
fn train_writes_checkpoints_and_honours_ablations() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    synthesize(&data, "lowlight", 3, 64, 1);
    let out = tmp.path().join("run");
    let summary = ok(&[
        "train", "--preset", "desk", "--data", p(&data), "--out", p(&out), "--set", "train.max_steps=3", "--ablate",
        "loss.fft=off", "--seed", "5",
    ]);
    assert_eq!(summary[0]["steps"], 3);
    for f in ["last.ckpt", "best.ckpt", "train.log", "config.toml"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let log = records(&std::fs::read_to_string(out.join("train.log")).unwrap());
    assert_eq!(log.len(), 3);
    for line in &log {
        let terms = line["terms"].as_object().unwrap();
        assert!(!terms.contains_key("fft"));
        assert!(terms.contains_key("cb") && terms.contains_key("ssim"));
    }
    let (cfg, _) = checkpoint::load(&out.join("last.ckpt")).unwrap();
    assert!(!cfg.loss.fft);
    assert_eq!(cfg.train.seed, 5);

    // same seed and configuration replay the same log
    let again = tmp.path().join("again");
    ok(&[
        "train", "--data", p(&data), "--out", p(&again), "--set", "train.max_steps=3", "--ablate", "loss.fft=off",
        "--seed", "5",
    ]);
    assert_eq!(std::fs::read(out.join("train.log")).unwrap(), std::fs::read(again.join("train.log")).unwrap());
}

#[test]
fn configuration_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    synthesize(&data, "haze", 1, 32, 2);
    let out = p(tmp.path());
    for bad in ["train.lr_init=abc", "lr_init=abc", "train.max_steps=-1"] {
        assert_eq!(code(&["train", "--data", p(&data), "--out", out, "--set", bad]), 2, "{bad}");
    }
    assert_eq!(code(&["train", "--data", p(&data), "--out", out, "--ablate", "loss.nothing=off"]), 2);
    assert_eq!(code(&["count-params", "--preset", "huge"]), 2);
    let cfg_file = tmp.path().join("cfg.toml");
    std::fs::write(&cfg_file, "preset = \"desk\"\nbogus = 1\n").unwrap();
    assert_eq!(code(&["count-params", "--config", p(&cfg_file)]), 2);
}

#[test]
fn config_file_round_trips_through_count_params() {
    let tmp = tempfile::tempdir().unwrap();
    let path = tmp.path().join("full.toml");
    std::fs::write(&path, RunConfig::preset(Preset::Full).to_toml()).unwrap();
    let from_file = ok(&["count-params", "--config", p(&path)]);
    let from_preset = ok(&["count-params", "--preset", "full"]);
    assert_eq!(from_file, from_preset);
    let model = RetinexDual::new(&RunConfig::preset(Preset::Full).model);
    assert_eq!(from_preset[0]["total"], model.param_count());
    let ablated = ok(&["count-params", "--ablate", "arch.fia=off"]);
    assert_eq!(ablated[0]["groups"]["illumination"], 0);
}

fn identity_checkpoint(path: &Path) -> RunConfig {
    let cfg = RunConfig::preset(Preset::Desk);
    let model = RetinexDual::new(&cfg.model);
    checkpoint::save(path, &cfg, &model.init(0)).unwrap();
    cfg
}

#[test]
fn evaluate_identity_checkpoint_reports_input_quality() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("pairs");
    synthesize(&data, "rain", 4, 48, 3);
    let ckpt = tmp.path().join("id.ckpt");
    identity_checkpoint(&ckpt);
    let table_dir = tmp.path().join("table");
    let rows = ok(&["evaluate", "--checkpoint", p(&ckpt), "--data", p(&data), "--out", p(&table_dir)]);
    assert_eq!(rows.len(), 5);
    let samples = load_paired_dataset(&data).unwrap();
    let expect = samples.iter().map(|s| psnr_images(&s.degraded, &s.clean).unwrap()).sum::<f64>() / 4.0;
    let summary = rows.last().unwrap();
    assert_eq!(summary["count"], 4);
    assert!((summary["mean_psnr"].as_f64().unwrap() - expect).abs() < 1e-3);
    for (row, s) in rows.iter().zip(&samples) {
        assert_eq!(row["identifier"], s.identifier.as_str());
    }
    let written = records(&std::fs::read_to_string(table_dir.join("metrics.jsonl")).unwrap());
    assert_eq!(written, rows);
}

#[test]
fn restore_names_outputs_and_picks_the_path() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("pairs");
    synthesize(&data, "blur", 2, 64, 4);
    let big = tmp.path().join("big");
    synthesize(&big, "blur", 1, 160, 5);
    let ckpt = tmp.path().join("id.ckpt");
    identity_checkpoint(&ckpt);
    let out = tmp.path().join("restored");

    let rows = ok(&["restore", "--checkpoint", p(&ckpt), "--input", p(&data.join("input")), "--out", p(&out), "--tile", "256"]);
    assert_eq!(rows.len(), 2);
    assert!(rows.iter().all(|r| r["tiled"] == false));
    assert!(out.join("synth_0000_restored.png").exists() && out.join("synth_0001_restored.png").exists());

    let single = big.join("input/synth_0000.png");
    let rows = ok(&["restore", "--checkpoint", p(&ckpt), "--input", p(&single), "--out", p(&out), "--tile", "128"]);
    assert_eq!(rows[0]["tiled"], true);
    assert_eq!(rows[0]["height"], 160);

    assert_eq!(code(&["restore", "--checkpoint", p(&ckpt), "--input", p(&single), "--out", p(&out), "--preset", "full"]), 2);
    let junk = tmp.path().join("junk.ckpt");
    std::fs::write(&junk, b"junk").unwrap();
    assert_eq!(code(&["restore", "--checkpoint", p(&junk), "--input", p(&single), "--out", p(&out)]), 3);
}

#[test]
fn analyze_frequency_verdicts() {
    let tmp = tempfile::tempdir().unwrap();
    for (kind, key, seed) in [("haze", "global_dominant", 10), ("blur", "local_dominant", 11)] {
        let dir = tmp.path().join(kind);
        synthesize(&dir, kind, 20, 128, seed);
        let rows = ok(&["analyze-frequency", "--data", p(&dir)]);
        assert_eq!(rows.len(), 21);
        let summary = rows.last().unwrap();
        let share = summary[key].as_f64().unwrap() / 20.0;
        assert!(share >= 0.9, "{kind}: {share}");
    }
    let empty = tmp.path().join("empty");
    std::fs::create_dir_all(empty.join("input")).unwrap();
    std::fs::create_dir_all(empty.join("gt")).unwrap();
    assert_eq!(code(&["analyze-frequency", "--data", p(&empty)]), 3);
    assert_eq!(code(&["analyze-frequency", "--data", p(&tmp.path().join("missing"))]), 3);
}

#[test]
fn ablate_compares_variants() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("toy");
    synthesize(&data, "lowlight", 2, 32, 6);
    let out = tmp.path().join("ablation");
    let rows = ok(&[
        "ablate", "--data", p(&data), "--out", p(&out), "--variants", "arch.fia,loss.perceptual", "--set",
        "train.max_steps=2", "--set", "train.patch=32",
    ]);
    let names: Vec<_> = rows.iter().map(|r| r["variant"].as_str().unwrap().to_string()).collect();
    assert_eq!(names, ["baseline", "arch.fia", "loss.perceptual"]);
    assert!(rows[1]["params"].as_u64() < rows[0]["params"].as_u64());
    assert_eq!(rows[2]["params"], rows[0]["params"]);
    assert!(out.join("arch_fia/last.ckpt").exists());
    assert_eq!(code(&["ablate", "--data", p(&data), "--out", p(&out), "--variants", "arch.nope"]), 2);
}
