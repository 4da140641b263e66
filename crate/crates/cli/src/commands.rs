use std::fs;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use rayon::prelude::*;

use lrcl_core::checks::{run_suite, Suite};
use lrcl_core::regimes::{self, CriticKind, ExperimentConfig, MetricTrace, Regime, SweepTask};

use crate::config::{self, Resolved};
use crate::output::{self, Manifest, RunEntry};
use crate::{CheckArgs, Failure, Outcome, RunArgs};

fn jobs(args: &RunArgs) -> Outcome<usize> {
    match args.jobs {
        Some(0) => Err(Failure::Usage("--jobs must be at least 1".into())),
        Some(n) => Ok(n),
        None => Ok(std::thread::available_parallelism().map_or(1, |n| n.get())),
    }
}

fn pool(n: usize) -> Outcome<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build()
        .map_err(|e| Failure::Usage(format!("cannot start workers: {e}")))
}

fn critic_label(cfg: &ExperimentConfig, rank: Option<usize>) -> String {
    match (cfg.critic_kind, rank) {
        (CriticKind::Dense, _) => "dense".into(),
        (kind, Some(r)) => format!("{}-r{r}", kind.as_str()),
        (kind, None) => kind.as_str().into(),
    }
}

fn uses_rank(kind: CriticKind) -> bool {
    matches!(kind, CriticKind::Lora | CriticKind::Nobase)
}

fn resolve(args: &RunArgs) -> Outcome<Resolved> {
    let r = config::resolve(args)?;
    if r.from_manifest {
        eprintln!("replaying manifest {}", args.config.as_ref().map_or(String::new(), |p| p.display().to_string()));
    }
    Ok(r)
}

fn prepare_out(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Usage(format!("cannot create {}: {e}", dir.display())))
}

pub fn toy_run(args: &RunArgs) -> Outcome {
    let Resolved {
        config: cfg,
        seed_offset,
        ..
    } = resolve(args)?;
    let workers = jobs(args)?;
    prepare_out(&args.out)?;
    let rank = uses_rank(cfg.critic_kind).then_some(cfg.rank);
    let label = critic_label(&cfg, rank);
    let runs: Vec<RunEntry> = cfg
        .seeds
        .iter()
        .map(|&seed| RunEntry {
            regime: cfg.regime,
            rank,
            seed,
            output: format!("toy_{}_{label}_seed{seed}.csv", cfg.regime.as_str()),
            wall_clock_secs: None,
        })
        .collect();
    let mut manifest = Manifest::new("toy-run", &cfg, seed_offset, runs);
    manifest.write(&args.out)?;

    let started = Instant::now();
    let results: Vec<Outcome<(MetricTrace, f64)>> = pool(workers)?.install(|| {
        manifest
            .runs
            .par_iter()
            .map(|entry| {
                let t0 = Instant::now();
                let trace = regimes::run(&cfg, entry.seed)?;
                output::write_trace(&args.out.join(&entry.output), &trace)?;
                let secs = t0.elapsed().as_secs_f64();
                eprintln!("seed {} done in {secs:.1}s", entry.seed);
                Ok((trace, secs))
            })
            .collect()
    });
    let mut first_failure = None;
    for (entry, result) in manifest.runs.iter_mut().zip(results) {
        match result {
            Ok((trace, secs)) => {
                entry.wall_clock_secs = Some(secs);
                println!(
                    "{} {label} seed {}: final eps_q {:.6e}, final eps_b {:.6e} -> {}",
                    cfg.regime.as_str(),
                    entry.seed,
                    trace.final_eps_q(),
                    trace.final_eps_b(),
                    entry.output
                );
            }
            Err(f) => {
                eprintln!("seed {} failed: {f}", entry.seed);
                first_failure.get_or_insert(f);
            }
        }
    }
    manifest.total_wall_clock_secs = Some(started.elapsed().as_secs_f64());
    manifest.write(&args.out)?;
    first_failure.map_or(Ok(()), Err)
}

fn trace_name(task: &SweepTask) -> String {
    let cell = task.rank.map_or("dense".to_string(), |r| format!("lora-r{r}"));
    format!("traces/{}_{cell}_seed{}.csv", task.regime.as_str(), task.seed)
}

pub fn sweep(args: &RunArgs) -> Outcome {
    let Resolved {
        config: cfg,
        seed_offset,
        ..
    } = resolve(args)?;
    let workers = jobs(args)?;
    prepare_out(&args.out.join("traces"))?;
    let tasks = regimes::sweep_tasks(&cfg, &cfg.ranks);
    let runs = tasks
        .iter()
        .map(|t| RunEntry {
            regime: t.regime,
            rank: t.rank,
            seed: t.seed,
            output: trace_name(t),
            wall_clock_secs: None,
        })
        .collect();
    let mut manifest = Manifest::new("sweep", &cfg, seed_offset, runs);
    manifest.write(&args.out)?;
    eprintln!("sweep: {} runs on {workers} worker(s)", tasks.len());

    let started = Instant::now();
    let timings: Mutex<Vec<(Regime, Option<usize>, u64, f64)>> = Mutex::new(Vec::new());
    let done = Mutex::new(0usize);
    let total = tasks.len();
    let result = regimes::rank_sweep(&cfg, &cfg.ranks, workers, &|task, trace, row| {
        output::write_trace(&args.out.join(trace_name(task)), trace)
            .map_err(|f| lrcl_core::Error::InvalidArgument(f.to_string()))?;
        let secs = started.elapsed().as_secs_f64();
        timings.lock().expect("timings lock").push((task.regime, task.rank, task.seed, secs));
        let mut n = done.lock().expect("progress lock");
        *n += 1;
        eprintln!(
            "[{n}/{total}] {} {} seed {}: final eps_q {:.3e}",
            task.regime.as_str(),
            task.rank.map_or("dense".to_string(), |r| format!("r={r}")),
            task.seed,
            row.final_eps_q
        );
        Ok(())
    })?;

    // Completion time since the sweep started, per run.
    for (regime, rank, seed, secs) in timings.into_inner().expect("timings lock") {
        if let Some(e) = manifest
            .runs
            .iter_mut()
            .find(|e| e.regime == regime && e.rank == rank && e.seed == seed)
        {
            e.wall_clock_secs = Some(secs);
        }
    }
    manifest.total_wall_clock_secs = Some(started.elapsed().as_secs_f64());
    manifest.write(&args.out)?;
    output::write_sweep_rows(&args.out.join("sweep_runs.csv"), &result.rows)?;
    output::write_summary(&args.out.join("sweep_summary.csv"), &result.summary)?;

    println!("regime  critic     mean final eps_q (std)       mean plateau eps_b (std)");
    for r in &result.summary {
        println!(
            "{:<7} {:<10} {:.4e} ({:.2e})     {:.4e} ({:.2e})",
            r.regime.as_str(),
            r.rank.map_or("dense".to_string(), |k| format!("r={k}")),
            r.mean_eps_q,
            r.std_eps_q,
            r.mean_plateau_eps_b,
            r.std_plateau_eps_b
        );
    }
    Ok(())
}

pub fn check(args: &CheckArgs) -> Outcome {
    let suites: Vec<Suite> = if args.suite == "all" {
        Suite::ALL.to_vec()
    } else {
        vec![Suite::parse(&args.suite).ok_or_else(|| {
            let names: Vec<&str> = Suite::ALL.iter().map(|s| s.as_str()).collect();
            Failure::Usage(format!("unknown suite `{}`; expected one of {} or all", args.suite, names.join(", ")))
        })?]
    };
    let offset = config::seed_offset()?;
    let seed = args
        .seed
        .checked_add(offset)
        .ok_or_else(|| Failure::Usage("seed offset overflows".into()))?;
    let mut failures = Vec::new();
    for suite in suites {
        let t0 = Instant::now();
        let report = run_suite(suite, seed);
        for o in &report.outcomes {
            println!("{} {}: {}: {}", if o.passed { "PASS" } else { "FAIL" }, suite.as_str(), o.name, o.detail);
            if !o.passed {
                failures.push(format!("{}: {}", suite.as_str(), o.name));
            }
        }
        eprintln!("{} finished in {:.2}s", suite.as_str(), t0.elapsed().as_secs_f64());
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("{} check(s) failed: {}", failures.len(), failures.join("; "))))
    }
}
