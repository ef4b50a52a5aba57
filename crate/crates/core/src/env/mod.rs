//! Environments shared by the learning agents and the tabular verifier.
//!
//! Every environment is an [`Episodic`] wrapper around a [`Dynamics`] model. The
//! wrapper owns the episode clock: it clamps actions into bounds, counts clamps,
//! raises the time-limit truncation flag and refuses to step a finished episode.

mod mdp;
mod pendulum;
mod point_mass;
mod tabular;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use mdp::MdpSpec;
pub use pendulum::Pendulum;
pub use point_mass::PointMass;
pub use tabular::TabularEnv;

pub const ENV_NAMES: [&str; 4] = ["pendulum", "point-mass", "chain", "random-tabular"];

#[derive(Debug, Clone, PartialEq)]
pub struct EnvSpec {
    pub state_dim: usize,
    pub action_dim: usize,
    pub action_low: Vec<f64>,
    pub action_high: Vec<f64>,
    pub max_episode_steps: usize,
    pub discrete: bool,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.state_dim == 0 || self.action_dim == 0 || self.max_episode_steps == 0 {
            return Err(Error::InvalidArgument(
                "state_dim, action_dim and max_episode_steps must be positive".into(),
            ));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::shape("action bounds", self.action_dim, self.action_low.len()));
        }
        if self.action_low.iter().zip(&self.action_high).any(|(lo, hi)| lo >= hi) {
            return Err(Error::InvalidArgument("action_low must be < action_high".into()));
        }
        Ok(())
    }
}

/// One environment step. `done` marks genuine terminal states only.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub transition: Transition,
    /// Time limit reached. Never set together with `transition.done`.
    pub truncated: bool,
}

pub trait Env: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset(&mut self, seed: u64) -> Vec<f64>;
    fn step(&mut self, action: &[f64]) -> Result<StepResult>;
    /// Number of actions clamped into bounds since construction.
    fn clamp_count(&self) -> u64;
}

/// Raw dynamics without episode bookkeeping.
pub trait Dynamics: Send {
    fn spec(&self) -> &EnvSpec;
    fn reset_state(&mut self, rng: &mut ChaCha8Rng);
    /// Applies an in-bounds action; returns `(reward, terminal)`.
    fn advance(&mut self, action: &[f64], rng: &mut ChaCha8Rng) -> (f64, bool);
    fn observe(&self) -> Vec<f64>;
}

pub struct Episodic<D> {
    dynamics: D,
    rng: ChaCha8Rng,
    steps: usize,
    finished: bool,
    clamps: u64,
    obs: Vec<f64>,
}

impl<D: Dynamics> Episodic<D> {
    pub fn new(dynamics: D) -> Self {
        let obs = dynamics.observe();
        Self {
            dynamics,
            rng: ChaCha8Rng::seed_from_u64(0),
            steps: 0,
            finished: true,
            clamps: 0,
            obs,
        }
    }

    pub fn dynamics(&self) -> &D {
        &self.dynamics
    }

    /// Mutable access for tests and scripted rollouts; does not reset the clock.
    pub fn dynamics_mut(&mut self) -> &mut D {
        &mut self.dynamics
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Starts an episode from whatever state the dynamics currently hold.
    pub fn start_from_current(&mut self) -> Vec<f64> {
        self.steps = 0;
        self.finished = false;
        self.obs = self.dynamics.observe();
        self.obs.clone()
    }
}

impl<D: Dynamics> Env for Episodic<D> {
    fn spec(&self) -> &EnvSpec {
        self.dynamics.spec()
    }

    fn reset(&mut self, seed: u64) -> Vec<f64> {
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self.dynamics.reset_state(&mut self.rng);
        self.start_from_current()
    }

    fn step(&mut self, action: &[f64]) -> Result<StepResult> {
        if self.finished {
            return Err(Error::EpisodeFinished);
        }
        let spec = self.dynamics.spec();
        if action.len() != spec.action_dim {
            return Err(Error::shape("env_step action", spec.action_dim, action.len()));
        }
        if action.iter().any(|a| a.is_nan()) {
            return Err(Error::NonFinite("env_step action".into()));
        }
        let mut clamped = false;
        let bounded: Vec<f64> = action
            .iter()
            .zip(spec.action_low.iter().zip(&spec.action_high))
            .map(|(&a, (&lo, &hi))| {
                let c = a.clamp(lo, hi);
                clamped |= c != a;
                c
            })
            .collect();
        if clamped {
            self.clamps += 1;
        }
        let max_steps = spec.max_episode_steps;
        let (reward, terminal) = self.dynamics.advance(&bounded, &mut self.rng);
        self.steps += 1;
        let truncated = !terminal && self.steps >= max_steps;
        self.finished = terminal || truncated;
        let next = self.dynamics.observe();
        let state = std::mem::replace(&mut self.obs, next.clone());
        Ok(StepResult {
            transition: Transition {
                state,
                action: bounded,
                reward,
                next_state: next,
                done: terminal,
            },
            truncated,
        })
    }

    fn clamp_count(&self) -> u64 {
        self.clamps
    }
}

/// An environment built by [`make_env`]; tabular environments also carry their model.
pub struct MadeEnv {
    pub env: Box<dyn Env>,
    pub mdp: Option<MdpSpec>,
}

impl std::fmt::Debug for MadeEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MadeEnv")
            .field("spec", self.env.spec())
            .field("mdp", &self.mdp.is_some())
            .finish()
    }
}

fn take_override(
    overrides: &BTreeMap<String, f64>,
    allowed: &[&str],
    name: &str,
) -> Result<()> {
    for key in overrides.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(Error::Config(format!(
                "override `{key}` not accepted by env `{name}`; valid: {}",
                allowed.join(", ")
            )));
        }
    }
    Ok(())
}

fn positive_int(overrides: &BTreeMap<String, f64>, key: &str, default: usize) -> Result<usize> {
    match overrides.get(key) {
        None => Ok(default),
        Some(&v) if v >= 1.0 && v.fract() == 0.0 => Ok(v as usize),
        Some(&v) => Err(Error::Config(format!("`{key}` must be a positive integer, got {v}"))),
    }
}

/// Builds an environment by name. Override keys depend on the environment:
/// `max_episode_steps` everywhere, `length`/`gamma` for `chain`,
/// `n_states`/`n_actions`/`seed`/`gamma` for `random-tabular`.
pub fn make_env(name: &str, overrides: &BTreeMap<String, f64>) -> Result<MadeEnv> {
    match name {
        "pendulum" => {
            take_override(overrides, &["max_episode_steps"], name)?;
            let steps = positive_int(overrides, "max_episode_steps", pendulum::EPISODE_STEPS)?;
            Ok(MadeEnv {
                env: Box::new(Episodic::new(Pendulum::new(steps))),
                mdp: None,
            })
        }
        "point-mass" => {
            take_override(overrides, &["max_episode_steps"], name)?;
            let steps = positive_int(overrides, "max_episode_steps", point_mass::EPISODE_STEPS)?;
            Ok(MadeEnv {
                env: Box::new(Episodic::new(PointMass::new(steps))),
                mdp: None,
            })
        }
        "chain" => {
            take_override(overrides, &["max_episode_steps", "length", "gamma"], name)?;
            let length = positive_int(overrides, "length", tabular::CHAIN_LENGTH)?;
            let gamma = overrides.get("gamma").copied().unwrap_or(0.99);
            let steps = positive_int(overrides, "max_episode_steps", tabular::CHAIN_EPISODE_STEPS)?;
            let mdp = MdpSpec::chain(length, gamma)?;
            Ok(MadeEnv {
                env: Box::new(Episodic::new(TabularEnv::new(mdp.clone(), steps)?)),
                mdp: Some(mdp),
            })
        }
        "random-tabular" => {
            take_override(
                overrides,
                &["max_episode_steps", "n_states", "n_actions", "seed", "gamma"],
                name,
            )?;
            let n_states = positive_int(overrides, "n_states", 5)?;
            let n_actions = positive_int(overrides, "n_actions", 3)?;
            let seed = overrides.get("seed").copied().unwrap_or(0.0);
            if seed < 0.0 || seed.fract() != 0.0 {
                return Err(Error::Config(format!("`seed` must be a non-negative integer, got {seed}")));
            }
            let gamma = overrides.get("gamma").copied().unwrap_or(0.9);
            let steps = positive_int(overrides, "max_episode_steps", 100)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed as u64);
            let mdp = MdpSpec::random(n_states, n_actions, gamma, &mut rng)?;
            Ok(MadeEnv {
                env: Box::new(Episodic::new(TabularEnv::new(mdp.clone(), steps)?)),
                mdp: Some(mdp),
            })
        }
        _ => Err(Error::UnknownEnv {
            name: name.to_string(),
            valid: ENV_NAMES.join(", "),
        }),
    }
}
