use std::process::Command;

const CONFIG: &str = r#"
seed = 1
rounds = 2
clients = 3
fraction = 1.0
local_epochs = 1
lr = 0.1
hidden = 6

[data]
classes = 3
dim = 4
train_per_class = 20
test_per_class = 5

[pkcf]
m = 2
steps = 5
tau = 2
"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mupfl"))
}

#[test]
fn run_then_resume() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--algorithm", "fedavg", "--seed", "4", "--dump-similarity", "--out"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success());
    let csv = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 3);
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["algorithm"], "fedavg");
    assert_eq!(summary["seed"], 4);

    // extending the same run to three rounds from its checkpoint
    std::fs::write(&cfg, CONFIG.replace("rounds = 2", "rounds = 3")).unwrap();
    let status = bin()
        .args(["run", "--config"])
        .arg(&cfg)
        .args(["--algorithm", "fedavg", "--seed", "4", "--out"])
        .arg(&out)
        .arg("--resume")
        .arg(out.join("checkpoint.bin"))
        .status()
        .unwrap();
    assert!(status.success());
    let csv3 = std::fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv3.starts_with(&csv));
    assert_eq!(csv3.lines().count(), 4);
}

#[test]
fn partition_report_prints_histograms() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = bin().args(["partition-report", "--config"]).arg(&cfg).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.starts_with("client,total,c0,c1,c2\n"));
}

#[test]
fn bad_config_fails_with_message() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "rounds = 2\nunknown_key = 1\n").unwrap();
    let out = bin().args(["run", "--config"]).arg(&cfg).output().unwrap();
    assert!(!out.status.success());
    let err = String::from_utf8(out.stderr).unwrap();
    assert!(err.contains("unknown_key"), "{err}");

    let missing = bin().args(["run", "--config", "/nonexistent/x.toml"]).output().unwrap();
    assert!(!missing.status.success());
    assert!(String::from_utf8(missing.stderr).unwrap().contains("/nonexistent/x.toml"));
}

#[test]
fn shipped_configs_parse() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs");
    for name in ["synthetic.toml", "mnist.toml"] {
        let cfg = mupfl::fl::RunConfig::from_file(&std::path::Path::new(dir).join(name)).unwrap();
        cfg.validate().unwrap();
    }
}
