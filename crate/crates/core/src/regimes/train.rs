use ndarray::{Array1, Array2};

use super::config::{CriticKind, ExperimentConfig, Regime};
use super::metrics::{compute_metrics, MetricPoint, MetricTrace};
use crate::error::{Error, Result};
use crate::nets::{lora_wrap, prune_wrap, Critic, ToyCritic};
use crate::optim::{polyak_update, post_update_hook, Adam};
use crate::rng::{self, Rng, Stream};
use crate::world::{ReplayBuffer, ToyWorld, NUM_ACTIONS};

/// The critic a run starts from: the dense fan-in init, then wrapped.
pub fn build_critic(cfg: &ExperimentConfig, seed: u64) -> Result<ToyCritic<f64>> {
    let dense = ToyCritic::dense(cfg.feature_dim, cfg.hidden, seed);
    match cfg.critic_kind {
        CriticKind::Dense => Ok(dense),
        CriticKind::Lora | CriticKind::Nobase => lora_wrap(&dense, &cfg.lora_spec(), seed),
        CriticKind::Pruned => prune_wrap(&dense, cfg.sparsity, seed),
    }
}

/// What one optimizer step saw.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    /// Feature-table rows `s * |A| + a` of the batch.
    pub rows: Vec<usize>,
    /// Buffer indices (TD regime only).
    pub transitions: Vec<usize>,
    pub targets: Vec<f64>,
    pub loss: f64,
}

/// One seeded toy run, advanced a step at a time.
#[derive(Debug, Clone)]
pub struct Trainer {
    cfg: ExperimentConfig,
    seed: u64,
    world: ToyWorld,
    buffer: Option<ReplayBuffer>,
    online: ToyCritic<f64>,
    target: Option<ToyCritic<f64>>,
    adam: Adam<f64>,
    batch_rng: Rng,
    step: usize,
}

impl Trainer {
    pub fn new(cfg: &ExperimentConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let world = ToyWorld::new(cfg.mdp()?, cfg.feature_dim, seed)?;
        let online = build_critic(cfg, seed)?;
        let (buffer, target) = match cfg.regime {
            Regime::Static => (None, None),
            Regime::Td => (
                Some(ReplayBuffer::collect(&world.mdp, &world.behavior, cfg.buffer_size, seed)),
                Some(online.clone()),
            ),
        };
        Ok(Self {
            cfg: cfg.clone(),
            seed,
            world,
            buffer,
            online,
            target,
            adam: Adam::new(cfg.adam()),
            batch_rng: rng::stream(seed, Stream::Batches),
            step: 0,
        })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.cfg
    }

    pub fn world(&self) -> &ToyWorld {
        &self.world
    }

    pub fn buffer(&self) -> Option<&ReplayBuffer> {
        self.buffer.as_ref()
    }

    pub fn online(&self) -> &ToyCritic<f64> {
        &self.online
    }

    pub fn target(&self) -> Option<&ToyCritic<f64>> {
        self.target.as_ref()
    }

    pub fn steps_done(&self) -> usize {
        self.step
    }

    pub fn evaluate(&self) -> Result<MetricPoint> {
        let (eps_q, eps_b) = compute_metrics(&self.online, &self.world)?;
        Ok(MetricPoint {
            step: self.step,
            eps_q,
            eps_b,
        })
    }

    fn sample_batch(&mut self) -> Result<(Vec<usize>, Vec<usize>, Vec<f64>)> {
        let n = self.cfg.batch;
        match &self.buffer {
            None => {
                let pairs = self.world.mdp.num_pairs();
                let rows: Vec<usize> = (0..n).map(|_| rng::index(&mut self.batch_rng, pairs)).collect();
                let q = &self.world.q_true;
                let targets = rows.iter().map(|&r| q[[r / NUM_ACTIONS, r % NUM_ACTIONS]]).collect();
                Ok((rows, Vec::new(), targets))
            }
            Some(buffer) => {
                let picks: Vec<usize> = (0..n).map(|_| rng::index(&mut self.batch_rng, buffer.len())).collect();
                let target = self.target.as_ref().expect("td regime keeps a target network");
                // Q̄(s', π(s')) for every state; the stored action plays no part
                let next_rows: Vec<usize> = (0..self.world.mdp.num_states)
                    .map(|s| s * NUM_ACTIONS + self.world.target_action(s))
                    .collect();
                let next_x = self.world.features.table().select(ndarray::Axis(0), &next_rows);
                let next_q = target.values(next_x.view())?;
                let gamma = self.world.mdp.gamma;
                let mut rows = Vec::with_capacity(n);
                let mut targets = Vec::with_capacity(n);
                for &i in &picks {
                    let t = buffer.get(i);
                    rows.push(t.state * NUM_ACTIONS + t.action);
                    targets.push(t.reward + gamma * next_q[t.next_state]);
                }
                Ok((rows, picks, targets))
            }
        }
    }

    /// Samples a batch, takes one optimizer step, applies the projection
    /// hook, then moves the target network.
    pub fn step(&mut self) -> Result<StepRecord> {
        let (rows, transitions, targets) = self.sample_batch()?;
        let table = self.world.features.table();
        let (out, tape) = self.online.forward(table)?;
        let q = out.column(0);
        // The batch loss ½ mean (Q - y)² touches at most |S||A| distinct rows;
        // fold the per-sample residuals onto them and backpropagate once.
        let inv_n = 1.0 / rows.len() as f64;
        let mut grad_rows = Array1::<f64>::zeros(table.nrows());
        let mut loss = 0.0;
        for (&r, &y) in rows.iter().zip(&targets) {
            let d = q[r] - y;
            loss += 0.5 * d * d * inv_n;
            grad_rows[r] += d * inv_n;
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("training loss"));
        }
        let grad_out: Array2<f64> = grad_rows.insert_axis(ndarray::Axis(1));
        let grads = self.online.backward(&tape, grad_out.view());
        if !grads.all_finite() {
            return Err(Error::NonFinite("gradients"));
        }
        self.adam.step(&mut self.online, &grads)?;
        post_update_hook(&mut self.online, self.cfg.projection, &self.cfg.projection_config())?;
        if let Some(target) = &mut self.target {
            polyak_update(target, &self.online, self.cfg.tau)?;
        }
        self.step += 1;
        Ok(StepRecord {
            rows,
            transitions,
            targets,
            loss,
        })
    }

    /// Trains for the configured number of steps, evaluating at step 0 and
    /// every `eval_every` steps.
    pub fn run(mut self) -> Result<MetricTrace> {
        let mut points = Vec::with_capacity(self.cfg.num_evaluations());
        points.push(self.evaluate()?);
        while self.step < self.cfg.steps {
            self.step()?;
            if self.step % self.cfg.eval_every == 0 {
                points.push(self.evaluate()?);
            }
        }
        Ok(MetricTrace {
            seed: self.seed,
            points,
        })
    }
}

pub fn run_static_regression(cfg: &ExperimentConfig, seed: u64) -> Result<MetricTrace> {
    if cfg.regime != Regime::Static {
        return Err(Error::InvalidArgument("run_static_regression needs regime static".into()));
    }
    Trainer::new(cfg, seed)?.run()
}

pub fn run_bootstrapped_td(cfg: &ExperimentConfig, seed: u64) -> Result<MetricTrace> {
    if cfg.regime != Regime::Td {
        return Err(Error::InvalidArgument("run_bootstrapped_td needs regime td".into()));
    }
    Trainer::new(cfg, seed)?.run()
}

/// Dispatches on `cfg.regime`.
pub fn run(cfg: &ExperimentConfig, seed: u64) -> Result<MetricTrace> {
    Trainer::new(cfg, seed)?.run()
}
