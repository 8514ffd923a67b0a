use std::fs;
use std::process::Command;

fn fairleak() -> Command {
    Command::new(env!("CARGO_BIN_EXE_fairleak"))
}

#[test]
fn gen_data_run_and_compare() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(d.join("synth.toml"), "n = 120\n").unwrap();
    let status = fairleak()
        .args(["gen-data", "--config"])
        .arg(d.join("synth.toml"))
        .arg("--out")
        .arg(d.join("data.csv"))
        .args(["--seed", "9"])
        .status()
        .unwrap();
    assert!(status.success());
    assert_eq!(fs::read_to_string(d.join("data.csv")).unwrap().lines().count(), 121);

    let cfg = "csv = \"data.csv\"\nfeatures = [\"x0\", \"x1\"]\npool_size = 4\nbase = \"tree\"\nmax_depth = 4\ndelta = 0.05\neg_iters = 4\n";
    fs::write(d.join("run.toml"), cfg).unwrap();
    let status = fairleak()
        .args(["run", "--config"])
        .arg(d.join("run.toml"))
        .arg("--out")
        .arg(d.join("out"))
        .args(["--jobs", "2"])
        .status()
        .unwrap();
    assert!(status.success());
    assert!(d.join("out/report.json").exists());

    let output = fairleak()
        .args(["compare", "--report"])
        .arg(d.join("out/report.json"))
        .arg("--out")
        .arg(d.join("attack.csv"))
        .output()
        .unwrap();
    assert!(output.status.success());
    let table = String::from_utf8(output.stdout).unwrap();
    assert_eq!(table, fs::read_to_string(d.join("attack.csv")).unwrap());
    assert_eq!(table, fs::read_to_string(d.join("out/table_attack.csv")).unwrap());
}

#[test]
fn bad_config_exits_nonzero_with_message() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "pool_sise = 3\n").unwrap();
    let output = fairleak()
        .args(["run", "--config"])
        .arg(dir.path().join("bad.toml"))
        .arg("--out")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(!output.status.success());
    let err = String::from_utf8(output.stderr).unwrap();
    assert!(err.starts_with("error:") && err.contains("pool_sise"), "{err}");
    assert!(!dir.path().join("out").exists());
}
