//! Property suites behind `lrcl check`. Each property is judged against an
//! oracle written independently of the code under test.

use ndarray::{Array1, Array2};
use rand::Rng as _;

use crate::categorical::{c51_project, CategoricalDistribution, ValueSupport};
use crate::error::{Error, Result};
use crate::gradcheck::{check_gradients, GradCheckOptions};
use crate::hypersphere::{demonstrate_incompatibility, project_lora, scale_roots, solve_row_scale, ProjectionConfig};
use crate::linear::{build_frozen_base, gaussian, BaseInit, LoraInit, LoraLinear, LoraSpec};
use crate::nets::{
    lora_wrap, prune_wrap, BroConfig, BroCritic, Critic, Objective, SimbaConfig, SimbaCritic, ToyCritic,
};
use crate::rng::{self, Rng, Stream};
use crate::world::{ChainMdp, Policy, QTable, NUM_ACTIONS};

/// Tolerance of the finite-difference comparison.
pub const GRADIENT_TOL: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Projection,
    Categorical,
    Gradients,
    World,
    Lemma1,
    Incompatibility,
}

impl Suite {
    pub const ALL: [Suite; 6] = [
        Suite::Projection,
        Suite::Categorical,
        Suite::Gradients,
        Suite::World,
        Suite::Lemma1,
        Suite::Incompatibility,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Suite::Projection => "projection",
            Suite::Categorical => "categorical",
            Suite::Gradients => "gradients",
            Suite::World => "world",
            Suite::Lemma1 => "lemma1",
            Suite::Incompatibility => "incompatibility",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PropertyOutcome {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl PropertyOutcome {
    fn new(name: &str, passed: bool, detail: String) -> Self {
        Self {
            name: name.to_string(),
            passed,
            detail,
        }
    }

    fn from_result(name: &str, r: Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => Self::new(name, passed, detail),
            Err(e) => Self::new(name, false, format!("error: {e}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuiteReport {
    pub suite: Suite,
    pub outcomes: Vec<PropertyOutcome>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.outcomes.iter().all(|o| o.passed)
    }

    pub fn failures(&self) -> impl Iterator<Item = &PropertyOutcome> {
        self.outcomes.iter().filter(|o| !o.passed)
    }
}

pub fn run_suite(suite: Suite, seed: u64) -> SuiteReport {
    let outcomes = match suite {
        Suite::Projection => vec![
            PropertyOutcome::from_result("project_lora keeps rows unit and base frozen", projection_conservation(seed, 1000)),
            PropertyOutcome::from_result("simbav2 hidden states unit norm", simba_unit_norm(seed, 100)),
        ],
        Suite::Categorical => vec![
            PropertyOutcome::from_result("c51 projection vs two-hot oracle", c51_against_oracle(seed, 10_000)),
            PropertyOutcome::from_result("identity backup is exact", c51_identity(seed, 1000)),
        ],
        Suite::Gradients => gradient_suite(seed),
        Suite::World => vec![
            PropertyOutcome::from_result("transition rows sum to one", transition_rows()),
            PropertyOutcome::from_result("linear solve vs value iteration", solver_vs_value_iteration()),
            PropertyOutcome::from_result("true Q is a Bellman fixed point", bellman_fixed_point()),
            PropertyOutcome::from_result("stationary distribution of pi", stationary_fixed_point()),
        ],
        Suite::Lemma1 => vec![PropertyOutcome::from_result("positive scaling root", lemma1(seed, 1000))],
        Suite::Incompatibility => vec![PropertyOutcome::from_result(
            "naive normalization moves the base",
            incompatibility(seed, 100),
        )],
    };
    SuiteReport { suite, outcomes }
}

fn random_direction(n: usize, rng: &mut Rng) -> Array1<f64> {
    loop {
        let v = Array1::from_shape_simple_fn(n, || rng::normal::<f64>(rng, 1.0));
        let norm = v.dot(&v).sqrt();
        if norm > 1e-6 {
            return v / norm;
        }
    }
}

fn norm(v: &Array1<f64>) -> f64 {
    v.dot(v).sqrt()
}

/// Random `(w, δ)` with `|w| = κ ∈ (0.05, 0.95)` and `δ` spanning many scales.
fn random_row(rng: &mut Rng) -> (Array1<f64>, Array1<f64>) {
    let n = rng.random_range(1..=32);
    let kappa = rng.random_range(0.05..0.95);
    let w = random_direction(n, rng) * kappa;
    let scale = 10f64.powf(rng.random_range(-3.0..2.0));
    let delta = random_direction(n, rng) * scale;
    (w, delta)
}

pub fn lemma1(seed: u64, draws: usize) -> Result<(bool, String)> {
    let mut rng = rng::stream(seed, Stream::Custom(1));
    let cfg = ProjectionConfig::default();
    let mut worst_norm = 0.0f64;
    let mut sign_failures = 0;
    for _ in 0..draws {
        let (w, d) = random_row(&mut rng);
        let roots = scale_roots(w.view(), d.view(), &cfg)?;
        let s = solve_row_scale(w.view(), d.view(), &cfg)?;
        if !(roots.negative < 0.0 && roots.positive > 0.0 && s > 0.0) {
            sign_failures += 1;
        }
        worst_norm = worst_norm.max((norm(&(&w + &(&d * s))) - 1.0).abs());
    }
    Ok((
        sign_failures == 0 && worst_norm <= 1e-10,
        format!("{draws} draws, sign failures {sign_failures}, max | |w+sδ| - 1 | = {worst_norm:.3e}"),
    ))
}

pub fn projection_conservation(seed: u64, applications: usize) -> Result<(bool, String)> {
    let mut rng = rng::stream(seed, Stream::Custom(2));
    let cfg = ProjectionConfig::default();
    let mut worst = 0.0f64;
    let mut base_changed = 0;
    let per_map = 10;
    let mut done = 0;
    while done < applications {
        let d_out = rng.random_range(2..=16);
        let d_in = rng.random_range(2..=16);
        let rank = rng.random_range(1..=4);
        let kappa = rng.random_range(0.05..0.95);
        let base = build_frozen_base::<f64>(d_out, d_in, d_out.min(d_in), kappa, &mut rng)?;
        let (a, b) = LoraInit::NormalBoth.sample::<f64>(d_out, d_in, rank, &mut rng);
        let mut m = LoraLinear::new(base.clone(), a, b, rank as f64)?;
        for _ in 0..per_map.min(applications - done) {
            // an optimizer-like perturbation of both factors, then project
            m.a += &gaussian::<f64>(rank, d_in, 0.05, &mut rng);
            m.b += &gaussian::<f64>(d_out, rank, 0.05, &mut rng);
            project_lora(&mut m, &cfg)?;
            for row in m.effective_weight().rows() {
                worst = worst.max((row.dot(&row).sqrt() - 1.0).abs());
            }
            if m.base.iter().zip(base.iter()).any(|(x, y)| x.to_bits() != y.to_bits()) {
                base_changed += 1;
            }
            done += 1;
        }
    }
    Ok((
        worst <= 1e-9 && base_changed == 0,
        format!("{applications} projections, max row-norm error {worst:.3e}, base changed {base_changed} times"),
    ))
}

pub fn simba_unit_norm(seed: u64, draws: usize) -> Result<(bool, String)> {
    let cfg = SimbaConfig::default();
    let mut rng = rng::stream(seed, Stream::Custom(3));
    let mut worst = 0.0f64;
    for i in 0..draws {
        let mut critic = SimbaCritic::<f64>::new(&cfg, seed.wrapping_add(i as u64))?;
        critic.randomize_vectors(&mut rng);
        let x = gaussian::<f64>(1, cfg.input_dim, 3.0, &mut rng);
        let (_, tape) = critic.forward(x.view())?;
        for h in tape.hidden_states() {
            for row in h.rows() {
                worst = worst.max((row.dot(&row).sqrt() - 1.0).abs());
            }
        }
    }
    Ok((worst <= 1e-10, format!("{draws} draws, max | |h| - 1 | = {worst:.3e}")))
}

/// Two-hot oracle: an atom at `z_i` receives `p · max(0, 1 - |tz - z_i| / Δz)`.
pub fn two_hot_oracle(probs: &Array1<f64>, reward: f64, discount: f64, atoms: &Array1<f64>) -> Array1<f64> {
    let n = atoms.len();
    let (lo, hi) = (atoms[0], atoms[n - 1]);
    let dz = (hi - lo) / (n - 1) as f64;
    let mut out = Array1::zeros(n);
    for (j, &p) in probs.iter().enumerate() {
        let tz = (reward + discount * atoms[j]).clamp(lo, hi);
        for i in 0..n {
            out[i] += p * (1.0 - (tz - atoms[i]).abs() / dz).max(0.0);
        }
    }
    out
}

fn random_categorical(rng: &mut Rng) -> Result<(ValueSupport<f64>, CategoricalDistribution<f64>)> {
    let n = rng.random_range(2..=101);
    let v_min = rng.random_range(-10.0..5.0);
    let v_max = v_min + rng.random_range(0.5..10.0);
    let support = ValueSupport::new(v_min, v_max, n)?;
    let w = Array1::from_shape_simple_fn(n, || rng.random_range(-4.0f64..4.0).exp());
    let probs = &w / w.sum();
    Ok((support, CategoricalDistribution::new(probs)?))
}

pub fn c51_against_oracle(seed: u64, instances: usize) -> Result<(bool, String)> {
    let mut rng = rng::stream(seed, Stream::Custom(4));
    let (mut mass_err, mut oracle_err) = (0.0f64, 0.0f64);
    for _ in 0..instances {
        let (support, d) = random_categorical(&mut rng)?;
        let span = support.v_max - support.v_min;
        let reward = rng.random_range(-span..span);
        let discount = rng.random_range(0.0..=1.0);
        let out = c51_project(&d, reward, discount, &support)?;
        mass_err = mass_err.max((out.probs.sum() - 1.0).abs());
        let oracle = two_hot_oracle(&d.probs, reward, discount, &support.atoms().to_owned());
        for (a, b) in out.probs.iter().zip(oracle.iter()) {
            oracle_err = oracle_err.max((a - b).abs());
        }
    }
    Ok((
        mass_err <= 1e-12 && oracle_err <= 1e-12,
        format!("{instances} instances, max mass error {mass_err:.3e}, max oracle gap {oracle_err:.3e}"),
    ))
}

pub fn c51_identity(seed: u64, instances: usize) -> Result<(bool, String)> {
    let mut rng = rng::stream(seed, Stream::Custom(5));
    let mut mismatches = 0;
    for _ in 0..instances {
        let (support, d) = random_categorical(&mut rng)?;
        if c51_project(&d, 0.0, 1.0, &support)? != d {
            mismatches += 1;
        }
    }
    Ok((mismatches == 0, format!("{instances} instances, {mismatches} changed")))
}

fn gradient_case<C: Critic<f64>>(name: &str, critic: &C, x: &Array2<f64>, objective: &Objective<f64>, seed: u64) -> PropertyOutcome {
    let opts = GradCheckOptions {
        seed,
        ..GradCheckOptions::default()
    };
    let r = check_gradients(critic, x.view(), objective, &opts).map(|rep| {
        let detail = format!(
            "max rel error {:.3e} over {} entries, {} kinks skipped (worst {}){}{}",
            rep.max_rel_error,
            rep.checked,
            rep.kinks,
            rep.worst.as_deref().unwrap_or("-"),
            if rep.missing.is_empty() { String::new() } else { format!(", missing {:?}", rep.missing) },
            if rep.frozen_with_gradient.is_empty() {
                String::new()
            } else {
                format!(", frozen with gradient {:?}", rep.frozen_with_gradient)
            },
        );
        (rep.passes(GRADIENT_TOL), detail)
    });
    PropertyOutcome::from_result(name, r)
}

/// Uniform targets in `[-1, 2)`.
pub fn regression_targets(n: usize, rng: &mut Rng) -> Array1<f64> {
    Array1::from_shape_simple_fn(n, || rng.random_range(-1.0..2.0))
}

/// Random strictly positive distributions over `atoms` atoms.
pub fn categorical_targets(n: usize, atoms: usize, rng: &mut Rng) -> Vec<CategoricalDistribution<f64>> {
    (0..n)
        .map(|_| {
            let w = Array1::from_shape_simple_fn(atoms, || rng.random_range(-3.0f64..3.0).exp());
            CategoricalDistribution { probs: &w / w.sum() }
        })
        .collect()
}

/// Finite-difference agreement for every critic variant and both heads.
pub fn gradient_suite(seed: u64) -> Vec<PropertyOutcome> {
    match gradient_cases(seed) {
        Ok(v) => v,
        Err(e) => vec![PropertyOutcome::new("gradient suite setup", false, format!("error: {e}"))],
    }
}

fn gradient_cases(seed: u64) -> Result<Vec<PropertyOutcome>> {
    let mut rng = rng::stream(seed, Stream::Custom(6));
    let mut out = Vec::new();
    let batch = 8;
    let (d, h) = (64, 256);
    let lora = LoraSpec::new(4, LoraInit::NormalBoth, BaseInit::KeepDense);
    let nobase = LoraSpec::new(4, LoraInit::NormalBoth, BaseInit::Zero);

    let x = gaussian::<f64>(batch, d, 1.0, &mut rng);
    let support = ValueSupport::new(-1.0, 2.0, 51)?;
    let scalar = Objective::Regression(regression_targets(batch, &mut rng));
    let categorical = Objective::CrossEntropy(categorical_targets(batch, support.len(), &mut rng));

    let dense = ToyCritic::<f64>::dense(d, h, seed);
    let dense_cat = ToyCritic::<f64>::dense_categorical(d, h, support.clone(), seed);
    for (head, base, obj) in [("scalar", &dense, &scalar), ("categorical", &dense_cat, &categorical)] {
        out.push(gradient_case(&format!("toy dense, {head} head"), base, &x, obj, seed));
        out.push(gradient_case(&format!("toy lora, {head} head"), &lora_wrap(base, &lora, seed)?, &x, obj, seed));
        out.push(gradient_case(&format!("toy pruned, {head} head"), &prune_wrap(base, 0.5, seed)?, &x, obj, seed));
        out.push(gradient_case(&format!("toy nobase, {head} head"), &lora_wrap(base, &nobase, seed)?, &x, obj, seed));
    }

    let simba_cfg = SimbaConfig::default();
    let mut simba = SimbaCritic::<f64>::new(&simba_cfg, seed)?;
    simba.randomize_vectors(&mut rng);
    let xs = gaussian::<f64>(batch, simba_cfg.input_dim, 1.0, &mut rng);
    let expected = Objective::ExpectedValue {
        support: simba.support.clone(),
        targets: regression_targets(batch, &mut rng),
    };
    let cross = Objective::CrossEntropy(categorical_targets(batch, simba_cfg.num_atoms, &mut rng));
    let simba_lora = lora_wrap(&simba, &LoraSpec::new(4, LoraInit::NormalBoth, BaseInit::Rescaled { norm: 0.5, rank: None }), seed)?;
    for (head, obj) in [("scalar", &expected), ("categorical", &cross)] {
        out.push(gradient_case(&format!("simbav2, {head} head"), &simba, &xs, obj, seed));
        out.push(gradient_case(&format!("simbav2 lora, {head} head"), &simba_lora, &xs, obj, seed));
    }

    let bro_cfg = BroConfig::default();
    let mut bro = BroCritic::<f64>::new(&bro_cfg, seed)?;
    bro.randomize_norms(&mut rng);
    let xb = gaussian::<f64>(batch, bro_cfg.input_dim, 1.0, &mut rng);
    let expected = Objective::ExpectedValue {
        support: bro.support.clone(),
        targets: regression_targets(batch, &mut rng),
    };
    let cross = Objective::CrossEntropy(categorical_targets(batch, bro_cfg.num_atoms, &mut rng));
    let bro_lora = lora_wrap(&bro, &lora, seed)?;
    for (head, obj) in [("scalar", &expected), ("categorical", &cross)] {
        out.push(gradient_case(&format!("bronet, {head} head"), &bro, &xb, obj, seed));
        out.push(gradient_case(&format!("bronet lora, {head} head"), &bro_lora, &xb, obj, seed));
    }
    Ok(out)
}

fn chain() -> ChainMdp {
    ChainMdp::default()
}

pub fn transition_rows() -> Result<(bool, String)> {
    let p = chain().transition_model();
    let mut worst = 0.0f64;
    for s in 0..p.shape()[0] {
        for a in 0..p.shape()[1] {
            let total: f64 = (0..p.shape()[2]).map(|t| p[[s, a, t]]).sum();
            worst = worst.max((total - 1.0).abs());
        }
    }
    Ok((worst <= 1e-12, format!("max | Σ P - 1 | = {worst:.3e}")))
}

/// `Q^π` by iterating the backup with the chain's dynamics written out
/// directly: the intended move succeeds with probability `p`, moves off the
/// chain leave the state unchanged, and π always picks right.
pub fn value_iteration_oracle(mdp: &ChainMdp, tol: f64) -> QTable {
    let n = mdp.num_states;
    let p = mdp.success_prob;
    let mut q = QTable::zeros((n, NUM_ACTIONS));
    loop {
        let mut next = QTable::zeros((n, NUM_ACTIONS));
        for s in 0..n {
            for a in 0..NUM_ACTIONS {
                let moved = if a == 0 { s.saturating_sub(1) } else { (s + 1).min(n - 1) };
                let reward = if a == 1 && s + 1 == n - 1 { p } else { 0.0 };
                let v_moved = q[[moved, 1]];
                let v_stay = q[[s, 1]];
                next[[s, a]] = reward + mdp.gamma * (p * v_moved + (1.0 - p) * v_stay);
            }
        }
        let change = (&next - &q).iter().fold(0.0f64, |m, d| m.max(d.abs()));
        q = next;
        if change < tol {
            return q;
        }
    }
}

fn sup_norm(a: &QTable, b: &QTable) -> f64 {
    (a - b).iter().fold(0.0f64, |m, d| m.max(d.abs()))
}

pub fn solver_vs_value_iteration() -> Result<(bool, String)> {
    let mdp = chain();
    let q = mdp.solve_true_q(&Policy::always_right(mdp.num_states))?;
    let oracle = value_iteration_oracle(&mdp, 1e-14);
    let gap = sup_norm(&q, &oracle);
    Ok((gap <= 1e-8, format!("sup-norm gap {gap:.3e}")))
}

pub fn bellman_fixed_point() -> Result<(bool, String)> {
    let mdp = chain();
    let pi = Policy::always_right(mdp.num_states);
    let q = mdp.solve_true_q(&pi)?;
    let gap = sup_norm(&mdp.bellman_operator(&q, &pi)?, &q);
    Ok((gap <= 1e-8, format!("| T Q - Q |_inf = {gap:.3e}")))
}

pub fn stationary_fixed_point() -> Result<(bool, String)> {
    let mdp = chain();
    let pi = Policy::always_right(mdp.num_states);
    let d = mdp.stationary_distribution(&pi, 1_000_000)?;
    let p = mdp.policy_transitions(&pi);
    let gap = (&d.probs.dot(&p) - &d.probs).iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let argmax = d.argmax();
    Ok((
        gap <= 1e-8 && argmax == mdp.num_states - 1,
        format!("| dP - d |_inf = {gap:.3e}, argmax {argmax}"),
    ))
}

pub fn incompatibility(seed: u64, rows: usize) -> Result<(bool, String)> {
    let mut rng = rng::stream(seed, Stream::Custom(7));
    let cfg = ProjectionConfig::default();
    let (mut naive_moved, mut ours_kept, mut worst) = (0, 0, 0.0f64);
    let mut tested = 0;
    while tested < rows {
        let (w, d) = random_row(&mut rng);
        if (norm(&(&w + &d)) - 1.0).abs() < 1e-6 {
            continue;
        }
        tested += 1;
        let r = demonstrate_incompatibility(w.view(), d.view(), &cfg)?;
        if r.naive_moves_base() && r.base_after_naive != w {
            naive_moved += 1;
        }
        if r.base_after_ours == w {
            ours_kept += 1;
        }
        let n = r.ours_row_norm.ok_or(Error::NonFinite("projected row norm"))?;
        worst = worst.max((n - 1.0).abs());
    }
    Ok((
        naive_moved == rows && ours_kept == rows && worst <= 1e-10,
        format!("{rows} rows: naive moved the base in {naive_moved}, projection kept it in {ours_kept}, max row-norm error {worst:.3e}"),
    ))
}
