use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;
pub const NUM_ACTIONS: usize = 2;

/// Action values indexed `[state, action]`.
pub type QTable = Array2<f64>;

/// Continuing chain with two actions. A move succeeds with probability `p`,
/// otherwise the agent stays. Moves off either end leave the agent in place.
/// The only reward is `p` for taking *right* in the state next to the last one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainMdp {
    pub num_states: usize,
    pub success_prob: f64,
    pub gamma: f64,
}

impl Default for ChainMdp {
    fn default() -> Self {
        Self {
            num_states: 15,
            success_prob: 0.9,
            gamma: 0.97,
        }
    }
}

impl ChainMdp {
    pub fn new(num_states: usize, success_prob: f64, gamma: f64) -> Result<Self> {
        let mdp = Self {
            num_states,
            success_prob,
            gamma,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_states < 2 {
            return Err(Error::InvalidArgument(format!(
                "chain needs at least 2 states, got {}",
                self.num_states
            )));
        }
        if !(0.0..=1.0).contains(&self.success_prob) {
            return Err(Error::InvalidArgument(format!(
                "success probability {} outside [0, 1]",
                self.success_prob
            )));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::InvalidArgument(format!(
                "discount {} outside [0, 1)",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn num_actions(&self) -> usize {
        NUM_ACTIONS
    }

    pub fn num_pairs(&self) -> usize {
        self.num_states * NUM_ACTIONS
    }

    pub fn goal(&self) -> usize {
        self.num_states - 1
    }

    fn check(&self, s: usize, a: usize) -> Result<()> {
        if s >= self.num_states || a >= NUM_ACTIONS {
            return Err(Error::IndexOutOfRange(format!("(s={s}, a={a})")));
        }
        Ok(())
    }

    /// Intended destination of `a` from `s`, clamped to the chain.
    pub fn intended_next(&self, s: usize, a: usize) -> usize {
        match a {
            LEFT => s.saturating_sub(1),
            _ => (s + 1).min(self.goal()),
        }
    }

    pub fn reward(&self, s: usize, a: usize) -> Result<f64> {
        self.check(s, a)?;
        Ok(if a == RIGHT && s + 1 == self.goal() {
            self.success_prob
        } else {
            0.0
        })
    }

    /// `R[s, a]` for every pair.
    pub fn reward_table(&self) -> QTable {
        Array2::from_shape_fn((self.num_states, NUM_ACTIONS), |(s, a)| {
            self.reward(s, a).expect("in range")
        })
    }

    /// `P[s, a, s']`.
    pub fn transition_model(&self) -> Array3<f64> {
        let n = self.num_states;
        let mut p = Array3::zeros((n, NUM_ACTIONS, n));
        for s in 0..n {
            for a in 0..NUM_ACTIONS {
                let next = self.intended_next(s, a);
                p[[s, a, next]] += self.success_prob;
                p[[s, a, s]] += 1.0 - self.success_prob;
            }
        }
        p
    }

    /// `(T^π Q)(s,a) = R(s,a) + γ Σ_s' P(s'|s,a) Σ_a' π(a'|s') Q(s',a')`.
    pub fn bellman_operator(&self, q: &QTable, policy: &Policy) -> Result<QTable> {
        let n = self.num_states;
        if q.dim() != (n, NUM_ACTIONS) {
            return Err(Error::ShapeMismatch {
                context: "bellman_operator",
                expected: vec![n, NUM_ACTIONS],
                got: q.shape().to_vec(),
            });
        }
        let p = self.transition_model();
        let v = policy.state_values(q);
        let mut out = self.reward_table();
        for s in 0..n {
            for a in 0..NUM_ACTIONS {
                let mut backup = 0.0;
                for s2 in 0..n {
                    backup += p[[s, a, s2]] * v[s2];
                }
                out[[s, a]] += self.gamma * backup;
            }
        }
        Ok(out)
    }

    /// State transition matrix `P^π[s, s']`.
    pub fn policy_transitions(&self, policy: &Policy) -> Array2<f64> {
        let n = self.num_states;
        let p = self.transition_model();
        Array2::from_shape_fn((n, n), |(s, s2)| {
            (0..NUM_ACTIONS)
                .map(|a| policy.probs[[s, a]] * p[[s, a, s2]])
                .sum()
        })
    }

    /// Exact `Q^π` from the linear system `(I - γ P^π) V = R^π`.
    pub fn solve_true_q(&self, policy: &Policy) -> Result<QTable> {
        let n = self.num_states;
        let p_pi = self.policy_transitions(policy);
        let rewards = self.reward_table();
        let r_pi = policy.state_values(&rewards);

        let system = DMatrix::from_fn(n, n, |i, j| {
            let id = if i == j { 1.0 } else { 0.0 };
            id - self.gamma * p_pi[[i, j]]
        });
        let rhs = DVector::from_fn(n, |i, _| r_pi[i]);
        let v = system.clone().lu().solve(&rhs).ok_or(Error::SingularSystem)?;
        let residual = (&system * &v - &rhs).amax();
        if !residual.is_finite() || residual > 1e-10 {
            return Err(Error::SingularSystem);
        }

        let p = self.transition_model();
        let mut q = rewards;
        for s in 0..n {
            for a in 0..NUM_ACTIONS {
                let backup: f64 = (0..n).map(|s2| p[[s, a, s2]] * v[s2]).sum();
                q[[s, a]] += self.gamma * backup;
            }
        }
        Ok(q)
    }

    /// Stationary state distribution of the chain under `policy`, by power
    /// iteration from the uniform vector until successive iterates differ by
    /// less than `1e-12` in L1.
    pub fn stationary_distribution(
        &self,
        policy: &Policy,
        max_iterations: usize,
    ) -> Result<StationaryDistribution> {
        let n = self.num_states;
        let p_pi = self.policy_transitions(policy);
        let mut d = Array1::from_elem(n, 1.0 / n as f64);
        let mut change = f64::INFINITY;
        for _ in 0..max_iterations {
            let next = d.dot(&p_pi);
            change = (&next - &d).mapv(f64::abs).sum();
            d = next;
            if change < 1e-12 {
                let total = d.sum();
                d /= total;
                return Ok(StationaryDistribution { probs: d });
            }
        }
        Err(Error::NotConverged {
            iterations: max_iterations,
            last_change: change,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    UniformRandom,
    AlwaysRight,
}

/// Stationary per-state action distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    pub kind: PolicyKind,
    /// `[state, action]`, rows sum to one.
    pub probs: Array2<f64>,
}

impl Policy {
    pub fn new(kind: PolicyKind, num_states: usize) -> Self {
        let probs = match kind {
            PolicyKind::UniformRandom => {
                Array2::from_elem((num_states, NUM_ACTIONS), 1.0 / NUM_ACTIONS as f64)
            }
            PolicyKind::AlwaysRight => Array2::from_shape_fn((num_states, NUM_ACTIONS), |(_, a)| {
                if a == RIGHT {
                    1.0
                } else {
                    0.0
                }
            }),
        };
        Self { kind, probs }
    }

    pub fn uniform(num_states: usize) -> Self {
        Self::new(PolicyKind::UniformRandom, num_states)
    }

    pub fn always_right(num_states: usize) -> Self {
        Self::new(PolicyKind::AlwaysRight, num_states)
    }

    /// The action a deterministic policy takes in `s`, `None` for stochastic ones.
    pub fn greedy_action(&self, s: usize) -> Option<usize> {
        let row = self.probs.row(s);
        row.iter().position(|&p| p == 1.0)
    }

    /// `Σ_a π(a|s) X[s, a]` for every state.
    pub fn state_values(&self, table: &QTable) -> Array1<f64> {
        (&self.probs * table).sum_axis(ndarray::Axis(1))
    }
}

/// Per-state probabilities `d^π`.
#[derive(Debug, Clone, PartialEq)]
pub struct StationaryDistribution {
    pub probs: Array1<f64>,
}

impl StationaryDistribution {
    pub fn argmax(&self) -> usize {
        self.probs
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &p)| {
                if p > best.1 {
                    (i, p)
                } else {
                    best
                }
            })
            .0
    }
}
