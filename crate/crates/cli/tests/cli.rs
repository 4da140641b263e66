use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

fn lrcl(args: &[&str]) -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_lrcl"));
    cmd.args(args).env_remove("LRCL_SEED_OFFSET");
    cmd
}

fn run(cmd: &mut Command) -> Output {
    cmd.output().expect("lrcl should start")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn manifest(dir: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    let text = fs::read_to_string(path).unwrap();
    assert!(!text.contains('\r'), "{} has CR line endings", path.display());
    assert!(text.ends_with('\n'));
    text.lines().map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&mut lrcl(&["--help"]))), 0);
    assert_eq!(code(&run(&mut lrcl(&["--version"]))), 0);
    assert_eq!(code(&run(&mut lrcl(&["toy-run", "--help"]))), 0);
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    assert_eq!(code(&run(&mut lrcl(&[]))), 1);
    assert_eq!(code(&run(&mut lrcl(&["train"]))), 1);
    assert_eq!(code(&run(&mut lrcl(&["toy-run", "--set", "no_such_key=1", "--out", out]))), 1);
    assert_eq!(code(&run(&mut lrcl(&["toy-run", "--set", "steps=301", "--out", out]))), 1);
    assert_eq!(code(&run(&mut lrcl(&["toy-run", "--set", "regime=offline", "--out", out]))), 1);
    assert_eq!(code(&run(&mut lrcl(&["toy-run", "--set", "steps", "--out", out]))), 1);
    assert_eq!(code(&run(&mut lrcl(&["toy-run", "--seeds", "a,b", "--out", out]))), 1);
    assert_eq!(code(&run(&mut lrcl(&["toy-run", "--jobs", "0", "--out", out]))), 1);
    assert_eq!(code(&run(&mut lrcl(&["toy-run", "--config", "/nonexistent/cfg.json", "--out", out]))), 1);
    assert_eq!(code(&run(&mut lrcl(&["check", "nope"]))), 1);
    assert_eq!(code(&run(&mut lrcl(&["arch-demo", "simbav2", "--rank", "0"]))), 1);
    assert_eq!(code(&run(lrcl(&["check", "world"]).env("LRCL_SEED_OFFSET", "-3"))), 1);
}

#[test]
fn invalid_config_file_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    fs::write(&cfg, "[1, 2]").unwrap();
    let out = dir.path().join("out");
    let o = run(&mut lrcl(&["toy-run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert_eq!(code(&o), 1);
    fs::write(&cfg, "{ not json").unwrap();
    let o = run(&mut lrcl(&["toy-run", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]));
    assert_eq!(code(&o), 1);
}

#[test]
fn divergent_training_exits_three_after_writing_the_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&mut lrcl(&[
        "toy-run", "--set", "steps=300", "--set", "lr=1e200", "--seeds", "0", "--out", dir.path().to_str().unwrap(),
    ]));
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    let m = manifest(dir.path());
    assert_eq!(m["config"]["lr"], 1e200);
    assert_eq!(m["runs"][0]["wall_clock_secs"], Value::Null);
}

#[test]
fn check_suites_report_each_property() {
    for suite in ["world", "lemma1", "incompatibility", "categorical"] {
        let o = run(&mut lrcl(&["check", suite]));
        assert_eq!(code(&o), 0, "{suite}");
        let text = stdout(&o);
        assert!(!text.is_empty());
        for line in text.lines() {
            assert!(line.starts_with(&format!("PASS {suite}: ")), "{line}");
        }
    }
}

#[test]
fn toy_run_writes_one_csv_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&mut lrcl(&[
        "toy-run", "--set", "steps=600", "--seeds", "0,1", "--jobs", "2", "--out", dir.path().to_str().unwrap(),
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for seed in [0, 1] {
        let rows = csv_rows(&dir.path().join(format!("toy_td_dense_seed{seed}.csv")));
        assert_eq!(rows[0], ["step", "seed", "eps_q", "eps_b"]);
        let steps: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
        assert_eq!(steps, ["0", "300", "600"]);
        for r in &rows[1..] {
            assert_eq!(r[1], seed.to_string());
            for v in &r[2..] {
                let x: f64 = v.parse().unwrap();
                assert!(x.is_finite() && x >= 0.0);
            }
        }
    }
    let m = manifest(dir.path());
    assert_eq!(m["command"], "toy-run");
    assert_eq!(m["seeds"], serde_json::json!([0, 1]));
    assert_eq!(m["runs"].as_array().unwrap().len(), 2);
    assert!(m["runs"][0]["wall_clock_secs"].as_f64().unwrap() >= 0.0);
    assert!(m["total_wall_clock_secs"].as_f64().is_some());
}

#[test]
fn default_run_has_forty_one_evaluations() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&mut lrcl(&["toy-run", "--seeds", "0", "--out", dir.path().to_str().unwrap()]));
    assert_eq!(code(&o), 0);
    let rows = csv_rows(&dir.path().join("toy_td_dense_seed0.csv"));
    assert_eq!(rows.len(), 1 + 41);
    assert_eq!(rows[41][0], "12000");
}

#[test]
fn static_and_lora_runs_share_the_schema() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&mut lrcl(&[
        "toy-run",
        "--set", "regime=static",
        "--set", "critic_kind=lora",
        "--set", "rank=2",
        "--set", "steps=300",
        "--seeds", "3",
        "--out", dir.path().to_str().unwrap(),
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let rows = csv_rows(&dir.path().join("toy_static_lora-r2_seed3.csv"));
    assert_eq!(rows[0], ["step", "seed", "eps_q", "eps_b"]);
    assert_eq!(rows.len(), 3);
    assert_eq!(manifest(dir.path())["runs"][0]["rank"], 2);
}

#[test]
fn manifest_replay_is_byte_identical() {
    let first = tempfile::tempdir().unwrap();
    let second = tempfile::tempdir().unwrap();
    let o = run(&mut lrcl(&[
        "toy-run", "--set", "steps=600", "--set", "critic_kind=lora", "--seeds", "4", "--out",
        first.path().to_str().unwrap(),
    ]));
    assert_eq!(code(&o), 0);
    let saved = tempfile::NamedTempFile::new().unwrap();
    fs::copy(first.path().join("manifest.json"), saved.path()).unwrap();
    let o = run(lrcl(&[
        "toy-run", "--config", saved.path().to_str().unwrap(), "--out", second.path().to_str().unwrap(),
    ])
    .env("LRCL_SEED_OFFSET", "7"));
    assert_eq!(code(&o), 0);
    let name = "toy_td_lora-r1_seed4.csv";
    assert_eq!(fs::read(first.path().join(name)).unwrap(), fs::read(second.path().join(name)).unwrap());
    assert_eq!(manifest(first.path())["config"], manifest(second.path())["config"]);
}

#[test]
fn seed_offset_shifts_every_seed() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(lrcl(&["toy-run", "--set", "steps=300", "--seeds", "0,2", "--out", dir.path().to_str().unwrap()])
        .env("LRCL_SEED_OFFSET", "10"));
    assert_eq!(code(&o), 0);
    let m = manifest(dir.path());
    assert_eq!(m["seeds"], serde_json::json!([10, 12]));
    assert_eq!(m["seed_offset"], 10);
    let rows = csv_rows(&dir.path().join("toy_td_dense_seed12.csv"));
    assert!(rows[1..].iter().all(|r| r[1] == "12"));

    let plain = tempfile::tempdir().unwrap();
    run(&mut lrcl(&["toy-run", "--set", "steps=300", "--seeds", "12", "--out", plain.path().to_str().unwrap()]));
    assert_eq!(
        fs::read(dir.path().join("toy_td_dense_seed12.csv")).unwrap(),
        fs::read(plain.path().join("toy_td_dense_seed12.csv")).unwrap()
    );
}

#[test]
fn sweep_covers_dense_and_every_rank() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(&mut lrcl(&[
        "sweep", "--set", "steps=300", "--set", "ranks=1,4", "--seeds", "0,1", "--out", dir.path().to_str().unwrap(),
    ]));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let runs = csv_rows(&dir.path().join("sweep_runs.csv"));
    assert_eq!(runs[0], ["regime", "rank", "dense", "seed", "final_eps_q", "final_eps_b", "plateau_eps_b"]);
    // 2 regimes x (dense + 2 ranks) x 2 seeds
    assert_eq!(runs.len() - 1, 12);
    for r in &runs[1..] {
        assert_eq!(r[1].is_empty(), r[2] == "true");
    }
    let summary = csv_rows(&dir.path().join("sweep_summary.csv"));
    assert_eq!(summary.len() - 1, 6);
    assert!(summary[1..].iter().all(|r| r[3] == "2"));
    let traces = fs::read_dir(dir.path().join("traces")).unwrap().count();
    assert_eq!(traces, 12);
    assert!(dir.path().join("traces/static_lora-r4_seed1.csv").exists());
    assert_eq!(manifest(dir.path())["runs"].as_array().unwrap().len(), 12);
}

#[test]
fn arch_demos_pass() {
    for arch in ["simbav2", "bronet"] {
        for mode in ["dense", "lora"] {
            let o = run(&mut lrcl(&["arch-demo", arch, "--mode", mode]));
            assert_eq!(code(&o), 0, "{arch} {mode}: {}", stdout(&o));
            let text = stdout(&o);
            assert!(!text.contains("FAIL"));
            assert!(text.contains(&format!("{arch} lora r=4")));
        }
    }
}
