use ndarray::{concatenate, Array1, Array2, ArrayView2, Axis};

use crate::env::Transition;
use crate::error::{Error, Result};

/// Minibatch of transitions in matrix form.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Array2<f64>,
    pub rewards: Array1<f64>,
    pub next_states: Array2<f64>,
    /// 1.0 for genuine terminal transitions, 0.0 otherwise (including truncation).
    pub dones: Array1<f64>,
}

impl Batch {
    pub fn from_transitions<'a, I>(items: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a Transition>,
    {
        let items: Vec<&Transition> = items.into_iter().collect();
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
        let (sd, ad) = (first.state.len(), first.action.len());
        let n = items.len();
        let mut states = Array2::zeros((n, sd));
        let mut actions = Array2::zeros((n, ad));
        let mut next_states = Array2::zeros((n, sd));
        let mut rewards = Array1::zeros(n);
        let mut dones = Array1::zeros(n);
        for (i, t) in items.iter().enumerate() {
            if t.state.len() != sd || t.next_state.len() != sd || t.action.len() != ad {
                return Err(Error::shape("batch transition", sd, t.state.len()));
            }
            states.row_mut(i).assign(&ndarray::aview1(&t.state));
            next_states.row_mut(i).assign(&ndarray::aview1(&t.next_state));
            actions.row_mut(i).assign(&ndarray::aview1(&t.action));
            rewards[i] = t.reward;
            dones[i] = if t.done { 1.0 } else { 0.0 };
        }
        Ok(Self {
            states,
            actions,
            rewards,
            next_states,
            dones,
        })
    }

    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn scaled_rewards(&self, scale: f64) -> Batch {
        let mut out = self.clone();
        out.rewards.mapv_inplace(|r| r * scale);
        out
    }
}

/// `[states | actions]`, the critic input.
pub fn state_action(states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Array2<f64> {
    concatenate(Axis(1), &[states, actions]).expect("matching batch sizes")
}
