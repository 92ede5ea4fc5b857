use std::path::Path;
use std::process::{Command, Output};

fn risac(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_risac")).args(args).env_remove("RISAC_SEED").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn experiment(dir: &Path, file: &str, extra: &[&str]) -> (Output, String) {
    let out = dir.join(file);
    let mut args = vec!["experiment", "pos-los", "--out", out.to_str().unwrap()];
    args.extend_from_slice(extra);
    let o = risac(&args);
    let text = std::fs::read_to_string(&out).unwrap_or_default();
    (o, text)
}

#[test]
fn single_trial_experiment_writes_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (o, text) = experiment(dir.path(), "a.csv", &["--trials", "1", "--powers", "50", "--seed", "7"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 2);
    assert!(lines[0].starts_with("experiment,case_id,power_dbm,trial,seed,status,"));
    assert!(lines[1].starts_with("pos-los,1,50,0,"));
}

#[test]
fn rows_per_power_and_trial_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--trials", "3", "--powers", "30,50", "--seed", "11"];
    let (o, first) = experiment(dir.path(), "a.csv", &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(first.lines().count(), 7);

    let out = dir.path().join("b.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_risac"))
        .args(["experiment", "pos-los", "--out", out.to_str().unwrap(), "--trials", "3", "--powers", "30,50"])
        .env("RISAC_SEED", "11")
        .env("RAYON_NUM_THREADS", "3")
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(std::fs::read_to_string(out).unwrap(), first);

    for line in first.lines().skip(1) {
        let overhead = line.split(',').nth(13).unwrap();
        assert!(overhead.is_empty() || overhead == "8194", "{line}");
    }
}

#[test]
fn config_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.cfg");
    std::fs::write(&bad, "n_ris = 16\nn_ut = 16\n").unwrap();
    let o = risac(&["validate-config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("n_ris >= n_ut + 2"));

    let good = dir.path().join("good.cfg");
    std::fs::write(&good, "n_ris = 64\nn_ut = 8\n").unwrap();
    assert_eq!(code(&risac(&["validate-config", good.to_str().unwrap()])), 0);

    assert_eq!(code(&risac(&["validate-config", dir.path().join("missing.cfg").to_str().unwrap()])), 2);
    let out = dir.path().join("x.csv");
    assert_eq!(code(&risac(&["experiment", "nosuch", "--out", out.to_str().unwrap()])), 2);
    assert_eq!(code(&risac(&["experiment", "pos-los", "--out", out.to_str().unwrap(), "--trials", "0"])), 2);
    assert_eq!(code(&risac(&["experiment", "pos-los", "--out", out.to_str().unwrap(), "--set", "n_ris=4"])), 2);
    assert_eq!(code(&risac(&["nosuch"])), 2);
    assert_eq!(code(&risac(&[])), 2);
}

#[test]
fn runtime_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("no/such/dir/x.csv");
    let o = risac(&["experiment", "pos-los", "--out", out.to_str().unwrap(), "--trials", "1", "--powers", "50"]);
    assert_eq!(code(&o), 1);
}

#[test]
fn simulate_prints_a_trace() {
    let o = risac(&["simulate", "--noiseless", "--seed", "3", "--set", "targets=1"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.contains("IPEBTTS:"));
    assert!(text.contains("gain "));
    assert!(text.contains("overhead 8194"));
}

#[test]
fn fig2_writes_both_grids() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("fig2.csv");
    let o = risac(&["experiment", "fig2", "--out", out.to_str().unwrap(), "--powers", "50"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(out).unwrap();
    assert_eq!(text.lines().next().unwrap(), "domain,beam,row,delay_bin,magnitude_db");
    assert_eq!(text.lines().filter(|l| l.starts_with("angle-delay,")).count(), 128 * 128);
    assert_eq!(text.lines().filter(|l| l.starts_with("doppler-delay,")).count(), 128 * 128);
}
