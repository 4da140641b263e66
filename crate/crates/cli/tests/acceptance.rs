//! Acceptance run: every criterion prints one PASS/FAIL line, and the process
//! exits nonzero if any fails. The toy sweep dominates the runtime (about ten
//! minutes on a single core).

use std::fs;
use std::path::Path;
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use lrcl_core::checks::{
    bellman_fixed_point, c51_against_oracle, c51_identity, gradient_suite, incompatibility, lemma1,
    projection_conservation, simba_unit_norm, solver_vs_value_iteration,
};
use lrcl_core::regimes::{rank_sweep, ExperimentConfig, Regime, SweepResult};

const SEED: u64 = 0;

struct Line {
    passed: bool,
    text: String,
}

fn within(budget: Duration, elapsed: Duration) -> (bool, String) {
    (elapsed <= budget, format!("{:.3}s (budget {:.0}s)", elapsed.as_secs_f64(), budget.as_secs_f64()))
}

/// Runs `f`, folding its verdict together with the time budget.
fn timed(budget_secs: f64, f: impl FnOnce() -> (bool, String)) -> (bool, String) {
    let t0 = Instant::now();
    let (ok, detail) = f();
    let (fast, time) = within(Duration::from_secs_f64(budget_secs), t0.elapsed());
    (ok && fast, format!("{detail}; {time}"))
}

fn verdict(r: lrcl_core::Result<(bool, String)>) -> (bool, String) {
    r.unwrap_or_else(|e| (false, format!("error: {e}")))
}

fn both(a: (bool, String), b: (bool, String)) -> (bool, String) {
    (a.0 && b.0, format!("{}; {}", a.1, b.1))
}

fn mean_q(result: &SweepResult, regime: Regime, rank: Option<usize>) -> f64 {
    result.cell(regime, rank).map_or(f64::NAN, |c| c.mean_eps_q)
}

fn criteria_from_sweep(lines: &mut Vec<Line>) {
    let cfg = ExperimentConfig::default();
    let jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let t0 = Instant::now();
    let result = match rank_sweep(&cfg, &cfg.ranks, jobs, &|_, _, _| Ok(())) {
        Ok(r) => r,
        Err(e) => {
            for n in 1..=3 {
                lines.push(Line { passed: false, text: format!("criterion {n}: sweep failed: {e}") });
            }
            return;
        }
    };
    let secs = t0.elapsed().as_secs_f64();
    let timing = format!("sweep of {} runs took {secs:.0}s on {jobs} worker(s)", result.rows.len());

    let dense_td = mean_q(&result, Regime::Td, None);
    let r1_td = mean_q(&result, Regime::Td, Some(1));
    lines.push(Line {
        passed: r1_td < dense_td,
        text: format!("criterion 1 (TD: r=1 mean final eps_q below dense): r=1 {r1_td:.4e} vs dense {dense_td:.4e}; {timing}"),
    });

    let dense_static = mean_q(&result, Regime::Static, None);
    let beaten: Vec<String> = cfg
        .ranks
        .iter()
        .filter(|&&r| mean_q(&result, Regime::Static, Some(r)) < dense_static)
        .map(|r| format!("r={r} {:.4e}", mean_q(&result, Regime::Static, Some(*r))))
        .collect();
    let best = cfg
        .ranks
        .iter()
        .map(|&r| mean_q(&result, Regime::Static, Some(r)))
        .fold(f64::INFINITY, f64::min);
    lines.push(Line {
        passed: beaten.is_empty() && !dense_static.is_nan(),
        text: format!(
            "criterion 2 (static: dense mean final eps_q at most every rank): dense {dense_static:.4e}, best rank {best:.4e}{}",
            if beaten.is_empty() { String::new() } else { format!(", below dense: {}", beaten.join(", ")) }
        ),
    });

    let plateau = |rank| result.cell(Regime::Td, rank).map_or(f64::NAN, |c| c.mean_plateau_eps_b);
    let (p1, pd) = (plateau(Some(1)), plateau(None));
    lines.push(Line {
        passed: p1 < pd,
        text: format!("criterion 3 (TD: r=1 late eps_b plateau below dense): r=1 {p1:.4e} vs dense {pd:.4e}"),
    });
}

fn toy_run(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_lrcl"))
        .arg("toy-run")
        .args(args)
        .env_remove("LRCL_SEED_OFFSET")
        .output()
        .map_err(|e| e.to_string())?;
    if out.status.success() {
        Ok(())
    } else {
        Err(format!("toy-run exited {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr)))
    }
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files: Vec<_> = fs::read_dir(dir)
        .into_iter()
        .flatten()
        .flatten()
        .filter(|e| e.path().extension().is_some_and(|x| x == "csv"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap_or_default()))
        .collect();
    files.sort();
    files
}

fn determinism() -> (bool, String) {
    let run = || -> Result<(bool, String), String> {
        let root = tempfile::tempdir().map_err(|e| e.to_string())?;
        let (origin, a, b) = (root.path().join("origin"), root.path().join("a"), root.path().join("b"));
        toy_run(&["--set", "critic_kind=lora", "--out", origin.to_str().unwrap()])?;
        let manifest = root.path().join("manifest.json");
        fs::copy(origin.join("manifest.json"), &manifest).map_err(|e| e.to_string())?;
        for dir in [&a, &b] {
            toy_run(&["--config", manifest.to_str().unwrap(), "--out", dir.to_str().unwrap()])?;
        }
        let (fa, fb, fo) = (csv_files(&a), csv_files(&b), csv_files(&origin));
        Ok((
            !fa.is_empty() && fa == fb && fa == fo,
            format!("{} CSVs from two manifest replays{}", fa.len(), if fa == fb { " are byte-identical" } else { " differ" }),
        ))
    };
    run().unwrap_or_else(|e| (false, e))
}

fn main() -> ExitCode {
    let mut lines = Vec::new();
    criteria_from_sweep(&mut lines);

    let mut push = |n: usize, what: &str, (passed, detail): (bool, String)| {
        lines.push(Line { passed, text: format!("criterion {n} ({what}): {detail}") });
    };
    push(4, "scaling root", timed(1.0, || verdict(lemma1(SEED, 1000))));
    push(5, "projection conservation", timed(5.0, || verdict(projection_conservation(SEED, 1000))));
    push(6, "naive normalization moves the base", timed(1.0, || verdict(incompatibility(SEED, 100))));
    push(
        7,
        "c51 projection",
        timed(5.0, || both(verdict(c51_against_oracle(SEED, 10_000)), verdict(c51_identity(SEED, 1000)))),
    );
    push(
        8,
        "gradients",
        timed(30.0, || {
            let cases = gradient_suite(SEED);
            let failed: Vec<&str> = cases.iter().filter(|c| !c.passed).map(|c| c.name.as_str()).collect();
            (
                failed.is_empty(),
                if failed.is_empty() { format!("{} cases", cases.len()) } else { format!("failed: {}", failed.join(", ")) },
            )
        }),
    );
    push(9, "simbav2 unit hidden states", timed(1.0, || verdict(simba_unit_norm(SEED, 100))));
    push(
        10,
        "exact solver",
        timed(1.0, || both(verdict(solver_vs_value_iteration()), verdict(bellman_fixed_point()))),
    );
    push(11, "determinism", determinism());

    let mut failed = 0;
    for l in &lines {
        println!("{} {}", if l.passed { "PASS" } else { "FAIL" }, l.text);
        failed += usize::from(!l.passed);
    }
    println!("acceptance: {} of {} criteria passed", lines.len() - failed, lines.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
