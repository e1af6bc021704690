use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gad(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gad"))
        .args(args)
        .env_remove("GAD_SEED")
        .output()
        .expect("spawn gad")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = path(dir, name);
    fs::write(&p, text).unwrap();
    p
}

fn gen_data(dir: &Path, scenario: &str) -> String {
    let cfg = write(dir, "scenario.cfg", scenario);
    let data = path(dir, "clips.gad");
    let o = gad(&["gen-data", "--config", &cfg, "--out", &data]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    data
}

#[test]
fn gradcheck_passes_for_every_model() {
    for model in ["maxnode", "maxedge", "hlstm-v3"] {
        let o = gad(&["gradcheck", "--model", model]);
        assert_eq!(o.status.code(), Some(0), "{model}: {}{}", stdout(&o), stderr(&o));
        assert!(stdout(&o).contains("max relative error"));
    }
    let o = gad(&["gradcheck", "--model", "maxnode", "--groups", "2", "--seed", "7"]);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
}

#[test]
fn train_without_data_is_a_usage_error() {
    let o = gad(&["train", "--model", "maxnode", "--config", "x.cfg", "--out", "x.ckpt"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("--data"), "{}", stderr(&o));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_and_model_are_usage_errors() {
    let o = gad(&["gradcheck", "--model", "maxnode", "--frobnicate"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(!stderr(&o).is_empty());
    let o = gad(&["gradcheck", "--model", "maxpool"]);
    assert_eq!(o.status.code(), Some(1));
    let o = gad(&[]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let o = gad(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("gradcheck"));
}

#[test]
fn malformed_dataset_exits_two() {
    let dir = TempDir::new().unwrap();
    let data = write(dir.path(), "bad.gad", "not a dataset\n");
    let o = gad(&["gen-data", "--validate", &data]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    let cfg = write(dir.path(), "train.cfg", "stage1-epochs = 1\n");
    let ckpt = path(dir.path(), "m.ckpt");
    let o = gad(&["train", "--model", "hlstm-v3", "--data", &data, "--config", &cfg, "--out", &ckpt]);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_exits_one() {
    let dir = TempDir::new().unwrap();
    let data = gen_data(dir.path(), "num-clips = 4\npersons-per-team = 2\nframes = 4\n");
    let cfg = write(dir.path(), "train.cfg", "stage-one-epochs = 1\n");
    let ckpt = path(dir.path(), "m.ckpt");
    let o = gad(&["train", "--model", "maxnode", "--data", &data, "--config", &cfg, "--out", &ckpt]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}

#[test]
fn generated_data_validates() {
    let dir = TempDir::new().unwrap();
    let data = gen_data(dir.path(), "num-clips = 6\npersons-per-team = 2\nframes = 5\nseed = 3\n");
    let o = gad(&["gen-data", "--validate", &data]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("6 clips"), "{}", stdout(&o));
}

#[test]
fn same_flags_and_seed_give_identical_outputs() {
    let dir = TempDir::new().unwrap();
    let data = gen_data(dir.path(), "num-clips = 10\npersons-per-team = 2\nframes = 4\n");
    let cfg = write(
        dir.path(),
        "train.cfg",
        "node-hidden = 8\nedge-hidden = 4\ngroup-hidden = 8\n\
         stage1-epochs = 2\nstage2-epochs = 2\nbatch-size = 3\nstage1-batch-size = 3\n",
    );
    let mut runs = Vec::new();
    for run in 0..2 {
        let ckpt = path(dir.path(), &format!("run{run}.ckpt"));
        let o = gad(&[
            "--deterministic", "train", "--model", "maxedge", "--data", &data, "--config", &cfg,
            "--out", &ckpt, "--seed", "11",
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        let files = [".cfg", ".metrics.csv", ""]
            .map(|suffix| fs::read(format!("{ckpt}{suffix}")).unwrap());
        runs.push((stdout(&o).replace(&format!("run{run}"), "run"), files));
    }
    assert_eq!(runs[0].0, runs[1].0);
    assert!(runs[0].1 == runs[1].1, "outputs differ between runs");
    assert!(!runs[0].0.contains("elapsed"));
}

#[test]
fn seed_falls_back_to_environment() {
    let dir = TempDir::new().unwrap();
    let cfg = write(dir.path(), "s.cfg", "num-clips = 3\npersons-per-team = 1\nframes = 4\n");
    let mut outs = Vec::new();
    for (name, seed) in [("a.gad", "5"), ("b.gad", "5"), ("c.gad", "6")] {
        let out = path(dir.path(), name);
        let o = Command::new(env!("CARGO_BIN_EXE_gad"))
            .args(["gen-data", "--config", &cfg, "--out", &out])
            .env("GAD_SEED", seed)
            .output()
            .unwrap();
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        outs.push(fs::read(&out).unwrap());
    }
    assert_eq!(outs[0], outs[1]);
    assert_ne!(outs[0], outs[2]);
}

#[test]
fn eval_after_overfitting_reports_high_group_accuracy() {
    let dir = TempDir::new().unwrap();
    let data = gen_data(dir.path(), "num-clips = 40\npersons-per-team = 2\nframes = 6\nseed = 1\n");
    let cfg = write(
        dir.path(),
        "train.cfg",
        "val-fraction = 0\nstage1-epochs = 10\nstage2-epochs = 30\nlr = 0.003\n",
    );
    let ckpt = path(dir.path(), "overfit.ckpt");
    let o = gad(&["train", "--model", "maxnode", "--data", &data, "--config", &cfg, "--out", &ckpt]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));

    let csv = path(dir.path(), "eval.csv");
    let o = gad(&["eval", "--model", "maxnode", "--ckpt", &ckpt, "--data", &data, "--metrics", &csv]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    let acc: f64 = text
        .lines()
        .find_map(|l| l.strip_prefix("group_accuracy: "))
        .expect("group accuracy line")
        .parse()
        .unwrap();
    assert!(acc >= 0.95, "{text}");
    let rows = fs::read_to_string(&csv).unwrap();
    assert!(rows.starts_with("epoch,split,loss,group_acc,action_acc\n0,eval,"), "{rows}");

    let o = gad(&["eval", "--model", "maxedge", "--ckpt", &ckpt, "--data", &data]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
}
