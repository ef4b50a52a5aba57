use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Dynamics, EnvSpec};

pub(crate) const EPISODE_STEPS: usize = 100;
const DT: f64 = 0.1;

/// 2-D double integrator. Observation `(x, y, vx, vy)`, action is acceleration.
/// Reward `-|pos| - 0.01 |u|^2` evaluated after the move.
#[derive(Debug, Clone)]
pub struct PointMass {
    spec: EnvSpec,
    pos: [f64; 2],
    vel: [f64; 2],
}

impl PointMass {
    pub fn new(max_episode_steps: usize) -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 4,
                action_dim: 2,
                action_low: vec![-1.0; 2],
                action_high: vec![1.0; 2],
                max_episode_steps,
                discrete: false,
            },
            pos: [0.0; 2],
            vel: [0.0; 2],
        }
    }

    pub fn set_state(&mut self, pos: [f64; 2], vel: [f64; 2]) {
        self.pos = pos;
        self.vel = vel;
    }
}

impl Dynamics for PointMass {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset_state(&mut self, rng: &mut ChaCha8Rng) {
        self.pos = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
        self.vel = [0.0; 2];
    }

    fn advance(&mut self, action: &[f64], _rng: &mut ChaCha8Rng) -> (f64, bool) {
        for i in 0..2 {
            self.vel[i] += action[i] * DT;
            self.pos[i] += self.vel[i] * DT;
        }
        let dist = self.pos[0].hypot(self.pos[1]);
        let effort = action[0] * action[0] + action[1] * action[1];
        (-dist - 0.01 * effort, false)
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.pos[0], self.pos[1], self.vel[0], self.vel[1]]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Env, Episodic};

    #[test]
    fn origin_is_a_fixed_point() {
        let mut env = Episodic::new(PointMass::new(100));
        env.dynamics_mut().set_state([0.0; 2], [0.0; 2]);
        env.start_from_current();
        let t = env.step(&[0.0, 0.0]).unwrap().transition;
        assert_eq!(t.next_state, vec![0.0; 4]);
        assert_eq!(t.reward, 0.0);
    }

    #[test]
    fn different_seeds_give_different_starts() {
        let mut env = Episodic::new(PointMass::new(100));
        let a = env.reset(7);
        let b = env.reset(8);
        assert_ne!(a, b);
    }
}
