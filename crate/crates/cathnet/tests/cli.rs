mod common;

use std::process::{Command, Output};

use common::tiny_config;

fn cathnet(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cathnet")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn help_lists_the_subcommands() {
    let o = cathnet(&["--help"]);
    assert!(o.status.success());
    for sub in ["train", "eval", "gen-data", "ablate"] {
        assert!(text(&o).contains(sub), "{sub}");
    }
}

#[test]
fn gen_data_then_oracle_eval() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let d = data.to_str().unwrap();
    let o = cathnet(&["gen-data", "--out", d, "--n", "20", "--seed", "3"]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(data.join("manifest.json").exists());

    let o = cathnet(&["gen-data", "--out", d, "--n", "20", "--seed", "3"]);
    assert!(!o.status.success());
    assert!(text(&o).contains("--force"), "{}", text(&o));
    let o = cathnet(&["gen-data", "--out", d, "--n", "20", "--seed", "3", "--force"]);
    assert!(o.status.success(), "{}", text(&o));

    let report = dir.path().join("report");
    let o = cathnet(&["eval", "--data", d, "--split", "train", "--oracle", "--out", report.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    let r: serde_json::Value = serde_json::from_slice(&std::fs::read(report.join("report.json")).unwrap()).unwrap();
    assert_eq!(r["ap"], 100.0);
    assert_eq!(r["mean_j"], 100.0);
    assert_eq!(r["samples"], 14);
}

#[test]
fn train_then_eval_a_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let mut cfg = tiny_config(&run);
    cfg.optim.iterations = 4;
    cfg.eval.validate_every = 2;
    let cfg_path = dir.path().join("run.toml");
    std::fs::write(&cfg_path, cfg.to_toml()).unwrap();
    let o = cathnet(&["train", "--config", cfg_path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\"mean_kpi\""));

    let data = dir.path().join("data");
    std::fs::write(dir.path().join("gen.toml"), cfg.to_toml()).unwrap();
    let o = cathnet(&[
        "gen-data",
        "--out",
        data.to_str().unwrap(),
        "--n",
        "10",
        "--config",
        dir.path().join("gen.toml").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
    let ckpt = run.join("best.ckpt");
    let o = cathnet(&["eval", "--ckpt", ckpt.to_str().unwrap(), "--data", data.to_str().unwrap()]);
    assert!(o.status.success(), "{}", text(&o));

    let o = cathnet(&[
        "train",
        "--config",
        cfg_path.to_str().unwrap(),
        "--resume",
        run.join("last.ckpt").to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", text(&o));
}

#[test]
fn bad_inputs_fail_with_a_message() {
    let dir = tempfile::tempdir().unwrap();
    let o = cathnet(&["ablate", "--config", "x.toml", "--axis", "depth"]);
    assert!(!o.status.success());
    assert!(text(&o).contains("unknown axis"));

    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, "seed = 1\n[optim]\nlearning_rate = 0.1\n").unwrap();
    let o = cathnet(&["train", "--config", bad.to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(text(&o).contains("learning_rate"), "{}", text(&o));

    let o = cathnet(&["gen-data", "--out", dir.path().join("d").to_str().unwrap(), "--n", "0"]);
    assert!(!o.status.success());

    let o = cathnet(&["eval", "--data", dir.path().to_str().unwrap()]);
    assert!(!o.status.success());
}

#[test]
fn shipped_config_parses() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml");
    let cfg = cathnet::RunConfig::load(std::path::Path::new(path)).unwrap();
    assert_eq!((cfg.data.train, cfg.data.val, cfg.data.test), (200, 50, 50));
    assert_eq!(cfg.optim.iterations, 2000);
    assert_eq!(cfg.model.input_size, [64, 64]);
}

#[test]
fn readme_schema_matches_the_defaults() {
    let readme = include_str!("../../../README.md");
    let block = readme.split("```toml\n").nth(1).unwrap().split("```").next().unwrap();
    let cfg: cathnet::RunConfig = toml::from_str(block).unwrap();
    assert_eq!(cfg, cathnet::RunConfig::default());
}
