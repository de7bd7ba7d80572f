use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dopo-qb"))
}

fn run(args: &[&str]) -> Output {
    bin().env_remove("DOPO_QB_OUTPUT_DIR").args(args).output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_owned()
}

const SMALL: &str = "[dopo]\nn_s = 6\nn_p = 3\n[schedule]\nt_charge = 2.0\n[fit]\nsteady_window = 0.5\nsteady_tol = 100.0\n";

#[test]
fn list_prints_every_experiment() {
    let out = run(&["list"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for name in ["fig2a", "fig2b", "fig3", "fig4", "fig5", "fig6", "fig7", "fig8", "custom"] {
        assert!(text.lines().any(|l| l.starts_with(name)), "{name} missing");
    }
}

#[test]
fn validate_default_config_is_clean() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "");
    let out = run(&["validate", "--config", &cfg]);
    assert!(out.status.success());
    assert_eq!(stdout(&out).trim(), "ok");
}

#[test]
fn validate_reports_lints() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[dopo]\nn_s = 8\n");
    let out = run(&["validate", "--config", &cfg]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("truncation"));

    let cfg = write_config(tmp.path(), "[dopo]\nf_p = 5.0\n");
    let out = run(&["validate", "--config", &cfg]);
    assert!(out.status.success());
    assert!(stdout(&out).contains("regime"));
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[dopo]\nnoise = 1\n");
    assert_eq!(run(&["validate", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(run(&["run", "custom", "--config", &cfg]).status.code(), Some(1));
    assert_eq!(run(&["run", "fig9"]).status.code(), Some(1));
}

#[test]
fn undriven_custom_run_has_zero_ergotropy() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}[custom]\nf_p = [0.0]\n"));
    let out_dir = tmp.path().join("out");
    let out = run(&["run", "custom", "--config", &cfg, "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = fs::read_to_string(out_dir.join("custom/custom_fp0.0.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap(), "t,W,W_c,W_i,P,n_s,n_p,re_alpha_s,im_alpha_s");
    for line in lines {
        let cells: Vec<f64> = line.split(',').map(|c| c.parse().unwrap()).collect();
        assert!(cells[1..5].iter().all(|&v| v == 0.0), "{line}");
    }
}

#[test]
fn rerun_and_parallel_run_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}[custom]\nf_p = [0.5, 1.0, 1.5]\n"));
    let dirs = ["a", "b", "c"].map(|d| tmp.path().join(d));
    for (dir, threads) in dirs.iter().zip(["1", "1", "3"]) {
        let out = run(&["run", "custom", "--config", &cfg, "--out", dir.to_str().unwrap(), "--threads", threads]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let read = |d: &Path, f: &str| fs::read(d.join("custom").join(f)).unwrap();
    let mut names: Vec<String> = fs::read_dir(dirs[0].join("custom"))
        .unwrap()
        .map(|e| e.unwrap().file_name().into_string().unwrap())
        .collect();
    names.sort();
    assert!(names.contains(&"custom_fit.csv".to_owned()));
    assert!(names.contains(&"summary.txt".to_owned()));
    // The manifest records output_dir and threads, which differ on purpose.
    let without_dir = |d: &Path| -> String {
        String::from_utf8(read(d, "manifest.toml"))
            .unwrap()
            .lines()
            .filter(|l| !l.starts_with("output_dir"))
            .collect()
    };
    assert_eq!(without_dir(&dirs[0]), without_dir(&dirs[1]));
    for name in names.iter().filter(|n| *n != "manifest.toml") {
        assert_eq!(read(&dirs[0], name), read(&dirs[1], name), "{name} differs on re-run");
        assert_eq!(read(&dirs[0], name), read(&dirs[2], name), "{name} differs with threads");
    }
}

#[test]
fn output_dir_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let from_cfg = tmp.path().join("cfg");
    let from_env = tmp.path().join("env");
    let from_flag = tmp.path().join("flag");
    let cfg = write_config(tmp.path(), &format!("output_dir = {:?}\n{SMALL}", from_cfg.to_str().unwrap()));

    assert!(run(&["run", "custom", "--config", &cfg]).status.success());
    assert!(from_cfg.join("custom/summary.txt").exists());

    let out = bin()
        .env("DOPO_QB_OUTPUT_DIR", &from_env)
        .args(["run", "custom", "--config", &cfg])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(from_env.join("custom/summary.txt").exists());

    let out = bin()
        .env("DOPO_QB_OUTPUT_DIR", &from_env)
        .args(["run", "custom", "--config", &cfg, "--out", from_flag.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(out.status.success());
    assert!(from_flag.join("custom/summary.txt").exists());
}

#[test]
fn manifest_echoes_resolved_config() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let dir = tmp.path().join("out");
    assert!(run(&["run", "custom", "--config", &cfg, "--out", dir.to_str().unwrap(), "--threads", "2"])
        .status
        .success());
    let manifest = fs::read_to_string(dir.join("custom/manifest.toml")).unwrap();
    assert!(manifest.contains("experiment = \"custom\""));
    assert!(manifest.contains("threads = 2"));
    assert!(manifest.contains("n_s = 6"));
    assert!(manifest.contains("kappa = 0.5"));
}
