use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Dynamics, EnvSpec, MdpSpec};
use crate::error::Result;

pub(crate) const CHAIN_LENGTH: usize = 10;
pub(crate) const CHAIN_EPISODE_STEPS: usize = 50;

/// Continuous-action view of a finite MDP: a one-hot observation and a single
/// action coordinate in `[-1, 1]` split into `n_actions` equal bins.
#[derive(Debug, Clone)]
pub struct TabularEnv {
    spec: EnvSpec,
    mdp: MdpSpec,
    state: usize,
}

impl TabularEnv {
    pub fn new(mdp: MdpSpec, max_episode_steps: usize) -> Result<Self> {
        let spec = EnvSpec {
            state_dim: mdp.n_states(),
            action_dim: 1,
            action_low: vec![-1.0],
            action_high: vec![1.0],
            max_episode_steps,
            discrete: true,
        };
        spec.validate()?;
        Ok(Self { spec, mdp, state: 0 })
    }

    pub fn mdp(&self) -> &MdpSpec {
        &self.mdp
    }

    pub fn state_index(&self) -> usize {
        self.state
    }

    /// Bin index for a continuous action.
    pub fn action_index(&self, action: f64) -> usize {
        let n = self.mdp.n_actions();
        let bin = ((action + 1.0) * 0.5 * n as f64).floor();
        (bin.max(0.0) as usize).min(n - 1)
    }
}

fn sample_index<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

impl Dynamics for TabularEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset_state(&mut self, rng: &mut ChaCha8Rng) {
        self.state = sample_index(&self.mdp.start_distribution(), rng);
    }

    fn advance(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> (f64, bool) {
        let a = self.action_index(action[0]);
        let reward = self.mdp.reward(self.state, a);
        self.state = sample_index(self.mdp.next_distribution(self.state, a), rng);
        (reward, self.mdp.is_terminal(self.state))
    }

    fn observe(&self) -> Vec<f64> {
        let mut obs = vec![0.0; self.mdp.n_states()];
        obs[self.state] = 1.0;
        obs
    }
}
