use ndarray::Array2;

use lrcl_core::checks::{categorical_targets, regression_targets};
use lrcl_core::gradcheck::{check_gradients, GradCheckOptions};
use lrcl_core::hypersphere::ProjectionConfig;
use lrcl_core::linear::{gaussian, BaseInit, LoraInit, LoraSpec};
use lrcl_core::nets::{lora_wrap, BroConfig, BroCritic, Critic, Objective, SimbaConfig, SimbaCritic};
use lrcl_core::optim::{post_update_hook, ProjectionMode};
use lrcl_core::params::{ParamGroup, ParamRegistry, Parameterized};
use lrcl_core::rng::{self, Rng, Stream};

use crate::{Arch, DemoArgs, DemoMode, Failure, Outcome};

const BATCH: usize = 8;
const GRADIENT_TOL: f64 = 1e-5;
const UNIT_TOL: f64 = 1e-9;

struct Report {
    failures: Vec<String>,
}

impl Report {
    fn line(&mut self, passed: bool, what: &str, detail: String) {
        println!("{} {what}: {detail}", if passed { "PASS" } else { "FAIL" });
        if !passed {
            self.failures.push(what.to_string());
        }
    }
}

fn counts<C: Parameterized<f64>>(net: &C) -> (usize, usize) {
    let reg = ParamRegistry::of(net);
    (reg.trainable_count(), reg.count(ParamGroup::Frozen))
}

fn param_table(arch: &str, dense: (usize, usize), lora: (usize, usize), rank: usize) {
    println!();
    println!("{:<22} {:>10} {:>10} {:>10}", "critic", "trainable", "frozen", "total");
    println!("{:<22} {:>10} {:>10} {:>10}", format!("{arch} dense"), dense.0, dense.1, dense.0 + dense.1);
    println!("{:<22} {:>10} {:>10} {:>10}", format!("{arch} lora r={rank}"), lora.0, lora.1, lora.0 + lora.1);
    println!("trainable ratio lora/dense: {:.4}", lora.0 as f64 / dense.0 as f64);
}

fn gradient_line<C: Critic<f64>>(report: &mut Report, critic: &C, x: &Array2<f64>, obj: &Objective<f64>, head: &str, seed: u64) -> Outcome {
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let rep = check_gradients(critic, x.view(), obj, &opts)?;
    report.line(
        rep.passes(GRADIENT_TOL),
        &format!("gradients, {head} head"),
        format!("max rel error {:.3e} over {} entries, {} kinks skipped", rep.max_rel_error, rep.checked, rep.kinks),
    );
    Ok(())
}

/// Nudges every trainable tensor, as an optimizer step would.
fn perturb<C: Parameterized<f64>>(net: &mut C, scale: f64, rng: &mut Rng) {
    net.visit_params_mut("", &mut |_, group, mut view| {
        if group.is_trainable() {
            view.mapv_inplace(|v| v + rng::normal::<f64>(rng, scale));
        }
    });
}

fn max_row_error<'a>(maps: impl Iterator<Item = &'a lrcl_core::linear::LinearMap<f64>>) -> f64 {
    maps.flat_map(|m| {
        let w = m.effective_weight();
        w.rows().into_iter().map(|r| (r.dot(&r).sqrt() - 1.0).abs()).collect::<Vec<_>>()
    })
    .fold(0.0, f64::max)
}

fn frozen_bits<C: Parameterized<f64>>(net: &C) -> Vec<u64> {
    let mut out = Vec::new();
    net.visit_params("", &mut |_, group, view| {
        if group == ParamGroup::Frozen {
            out.extend(view.iter().map(|v| v.to_bits()));
        }
    });
    out
}

fn simba(args: &DemoArgs, report: &mut Report) -> Outcome {
    let cfg = SimbaConfig::default();
    let mut rng = rng::stream(args.seed, Stream::Custom(20));
    let mut dense = SimbaCritic::<f64>::new(&cfg, args.seed)?;
    dense.randomize_vectors(&mut rng);
    // Base rows shrunk below unit norm so the LoRA projection has a root.
    let spec = LoraSpec::new(args.rank, LoraInit::NormalBoth, BaseInit::Rescaled { norm: 0.5, rank: None });
    let lora = lora_wrap(&dense, &spec, args.seed)?;
    println!(
        "simbav2: input {} hidden {} blocks {} atoms {}, mode {}",
        cfg.input_dim,
        cfg.hidden_dim,
        cfg.num_blocks,
        cfg.num_atoms,
        if args.mode == DemoMode::Lora { format!("lora r={}", args.rank) } else { "dense".into() }
    );
    let x = gaussian::<f64>(BATCH, cfg.input_dim, 3.0, &mut rng);
    let expected = Objective::ExpectedValue {
        support: dense.support.clone(),
        targets: regression_targets(BATCH, &mut rng),
    };
    let cross = Objective::CrossEntropy(categorical_targets(BATCH, cfg.num_atoms, &mut rng));

    let run = |critic: &SimbaCritic<f64>, report: &mut Report, rng: &mut Rng| -> Outcome {
        let (out, tape) = critic.forward(x.view())?;
        let worst = tape
            .hidden_states()
            .iter()
            .flat_map(|h| h.rows().into_iter().map(|r| (r.dot(&r).sqrt() - 1.0).abs()).collect::<Vec<_>>())
            .fold(0.0, f64::max);
        report.line(
            out.iter().all(|v| v.is_finite()) && worst <= 1e-10,
            "forward",
            format!("logits {}x{}, hidden states |h| - 1 at most {worst:.3e}", out.nrows(), out.ncols()),
        );
        gradient_line(report, critic, &x, &expected, "scalar", args.seed)?;
        gradient_line(report, critic, &x, &cross, "categorical", args.seed)?;

        let mut stepped = critic.clone();
        let base = frozen_bits(&stepped);
        perturb(&mut stepped, 0.05, rng);
        let mode = if args.mode == DemoMode::Lora { ProjectionMode::ProjectLora } else { ProjectionMode::RowNormalize };
        let before = max_row_error(stepped.projected_maps().into_iter());
        post_update_hook(&mut stepped, mode, &ProjectionConfig::default())?;
        let after = max_row_error(stepped.projected_maps().into_iter());
        let base_kept = frozen_bits(&stepped) == base;
        report.line(
            after <= UNIT_TOL && base_kept,
            &format!("projection ({})", mode.as_str()),
            format!(
                "unit rows: max | |w| - 1 | {before:.3e} after the step, {after:.3e} after projection; frozen base {}",
                if base_kept { "unchanged" } else { "CHANGED" }
            ),
        );
        Ok(())
    };
    match args.mode {
        DemoMode::Dense => run(&dense, report, &mut rng)?,
        DemoMode::Lora => run(&lora, report, &mut rng)?,
    }
    let (d, l) = (counts(&dense), counts(&lora));
    param_table("simbav2", d, l, args.rank);
    report.line(l.0 < d.0, "lora trainable count below dense", format!("{} < {}", l.0, d.0));
    Ok(())
}

fn bronet(args: &DemoArgs, report: &mut Report) -> Outcome {
    let cfg = BroConfig::default();
    let mut rng = rng::stream(args.seed, Stream::Custom(21));
    let mut dense = BroCritic::<f64>::new(&cfg, args.seed)?;
    dense.randomize_norms(&mut rng);
    let spec = LoraSpec::new(args.rank, LoraInit::NormalBoth, BaseInit::KeepDense);
    let lora = lora_wrap(&dense, &spec, args.seed)?;
    println!(
        "bronet: input {} hidden {} blocks {} atoms {}, layer-norm eps {:e}, mode {}",
        cfg.input_dim,
        cfg.hidden_dim,
        cfg.num_blocks,
        cfg.num_atoms,
        cfg.ln_eps,
        if args.mode == DemoMode::Lora { format!("lora r={}", args.rank) } else { "dense".into() }
    );
    let x = gaussian::<f64>(BATCH, cfg.input_dim, 3.0, &mut rng);
    let expected = Objective::ExpectedValue {
        support: dense.support.clone(),
        targets: regression_targets(BATCH, &mut rng),
    };
    let cross = Objective::CrossEntropy(categorical_targets(BATCH, cfg.num_atoms, &mut rng));

    let run = |critic: &BroCritic<f64>, report: &mut Report| -> Outcome {
        let (out, tape) = critic.forward(x.view())?;
        let (mut worst_mean, mut worst_var) = (0.0f64, 0.0f64);
        let norms = tape.normalized();
        for z in &norms {
            for row in z.rows() {
                let n = row.len() as f64;
                let mean = row.sum() / n;
                let var = row.mapv(|v| (v - mean) * (v - mean)).sum() / n;
                worst_mean = worst_mean.max(mean.abs());
                worst_var = worst_var.max((var - 1.0).abs());
            }
        }
        // eps in the denominator shrinks the variance by eps / (var + eps)
        report.line(
            out.iter().all(|v| v.is_finite()) && worst_mean <= 1e-10 && worst_var <= 1e-3,
            "forward",
            format!(
                "logits {}x{}; {} layer norms: |mean| at most {worst_mean:.3e}, |var - 1| at most {worst_var:.3e}",
                out.nrows(),
                out.ncols(),
                norms.len()
            ),
        );
        gradient_line(report, critic, &x, &expected, "scalar", args.seed)?;
        gradient_line(report, critic, &x, &cross, "categorical", args.seed)?;
        Ok(())
    };
    match args.mode {
        DemoMode::Dense => run(&dense, report)?,
        DemoMode::Lora => run(&lora, report)?,
    }
    println!("projection: bronet keeps layer norms and applies no weight projection");
    let (d, l) = (counts(&dense), counts(&lora));
    param_table("bronet", d, l, args.rank);
    report.line(l.0 < d.0, "lora trainable count below dense", format!("{} < {}", l.0, d.0));
    Ok(())
}

pub fn arch_demo(args: &DemoArgs) -> Outcome {
    if args.rank == 0 {
        return Err(Failure::Usage("--rank must be at least 1".into()));
    }
    let mut report = Report { failures: Vec::new() };
    match args.arch {
        Arch::Simbav2 => simba(args, &mut report)?,
        Arch::Bronet => bronet(args, &mut report)?,
    }
    if report.failures.is_empty() {
        Ok(())
    } else {
        Err(Failure::Check(format!("failed: {}", report.failures.join("; "))))
    }
}
