use rand::distr::{Distribution, weighted::WeightedIndex};

use super::mdp::{ChainMdp, Policy, NUM_ACTIONS};
use crate::rng::{self, Stream};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

/// Fixed set of transitions, filled once and read-only afterwards.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    transitions: Vec<Transition>,
}

impl ReplayBuffer {
    /// One contiguous `n`-step trajectory under `behavior`, starting from a
    /// uniformly drawn state. Pure function of its arguments.
    pub fn collect(mdp: &ChainMdp, behavior: &Policy, n: usize, seed: u64) -> Self {
        let mut rng = rng::stream(seed, Stream::Buffer);
        let mut state = rng::index(&mut rng, mdp.num_states);
        let mut transitions = Vec::with_capacity(n);
        for _ in 0..n {
            let weights = behavior.probs.row(state);
            let action = WeightedIndex::new(weights.iter().copied())
                .expect("policy row is a distribution")
                .sample(&mut rng);
            let u: f64 = rand::Rng::random(&mut rng);
            let next_state = if u < mdp.success_prob {
                mdp.intended_next(state, action)
            } else {
                state
            };
            let reward = mdp.reward(state, action).expect("valid indices");
            transitions.push(Transition {
                state,
                action,
                reward,
                next_state,
            });
            state = next_state;
        }
        Self { transitions }
    }

    pub fn from_transitions(transitions: Vec<Transition>) -> Self {
        Self { transitions }
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn get(&self, i: usize) -> &Transition {
        &self.transitions[i]
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn state_histogram(&self, num_states: usize) -> Vec<usize> {
        let mut h = vec![0; num_states];
        for t in &self.transitions {
            h[t.state] += 1;
        }
        h
    }

    pub fn action_count(&self) -> [usize; NUM_ACTIONS] {
        let mut c = [0; NUM_ACTIONS];
        for t in &self.transitions {
            c[t.action] += 1;
        }
        c
    }
}
