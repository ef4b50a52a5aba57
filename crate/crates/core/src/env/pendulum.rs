use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{Dynamics, EnvSpec};

pub(crate) const EPISODE_STEPS: usize = 200;
const MAX_TORQUE: f64 = 2.0;
const MAX_SPEED: f64 = 8.0;
const DT: f64 = 0.05;
const G: f64 = 10.0;
const MASS: f64 = 1.0;
const LENGTH: f64 = 1.0;

/// Torque-limited pendulum, `theta = 0` upright. Observation `(cos, sin, theta_dot)`.
#[derive(Debug, Clone)]
pub struct Pendulum {
    spec: EnvSpec,
    theta: f64,
    theta_dot: f64,
}

pub(crate) fn wrap_angle(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

impl Pendulum {
    pub fn new(max_episode_steps: usize) -> Self {
        Self {
            spec: EnvSpec {
                state_dim: 3,
                action_dim: 1,
                action_low: vec![-MAX_TORQUE],
                action_high: vec![MAX_TORQUE],
                max_episode_steps,
                discrete: false,
            },
            theta: PI,
            theta_dot: 0.0,
        }
    }

    pub const DT: f64 = DT;

    /// Angular acceleration `theta'' = 3g/(2l) sin(theta) + 3/(m l^2) u`.
    pub fn angular_acceleration(theta: f64, torque: f64) -> f64 {
        3.0 * G / (2.0 * LENGTH) * theta.sin() + 3.0 / (MASS * LENGTH * LENGTH) * torque
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn theta_dot(&self) -> f64 {
        self.theta_dot
    }

    pub fn set_state(&mut self, theta: f64, theta_dot: f64) {
        self.theta = theta;
        self.theta_dot = theta_dot;
    }
}

impl Dynamics for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset_state(&mut self, rng: &mut ChaCha8Rng) {
        self.theta = rng.random_range(-PI..PI);
        self.theta_dot = rng.random_range(-1.0..1.0);
    }

    fn advance(&mut self, action: &[f64], _rng: &mut ChaCha8Rng) -> (f64, bool) {
        let u = action[0];
        let th = wrap_angle(self.theta);
        let reward = -(th * th + 0.1 * self.theta_dot * self.theta_dot + 0.001 * u * u);
        let thdot = (self.theta_dot + Self::angular_acceleration(self.theta, u) * DT).clamp(-MAX_SPEED, MAX_SPEED);
        self.theta += thdot * DT;
        self.theta_dot = thdot;
        (reward, false)
    }

    fn observe(&self) -> Vec<f64> {
        vec![self.theta.cos(), self.theta.sin(), self.theta_dot]
    }
}
