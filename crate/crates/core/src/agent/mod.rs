//! Agents, their shared configuration, and the collection/update loop.

mod maxent;
mod tecrl;

pub use maxent::{local_tup_step, soft_pev_loss, soft_pev_target, soft_pim_loss, MaxEntAgent, SoftCriticPair};
pub use tecrl::{budget_from_config, pim_loss, tup_step, EntropyBudget, PimOutput, TecAgent, TupOutput};

use ndarray::{Array1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, AdamConfig, ParamStore};
use crate::batch::Batch;
use crate::buffer::ReplayBuffer;
use crate::env::{Env, EnvSpec};
use crate::error::{Error, Result};
use crate::policy::{EntropyMode, GaussianPolicy};
use crate::seeding::{SeedStreams, Stream};

/// Direction of the trajectory-entropy temperature gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TupSign {
    /// `dL/dlog(alpha) = alpha (H - budget)`: alpha falls while entropy exceeds the budget.
    Stabilizing,
    /// The opposite sign: alpha rises while entropy exceeds the budget.
    Literal,
}

impl TupSign {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "stabilizing" => Ok(Self::Stabilizing),
            "literal" => Ok(Self::Literal),
            other => Err(Error::Config(format!(
                "tup_sign must be `stabilizing` or `literal`, got `{other}`"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Stabilizing => "stabilizing",
            Self::Literal => "literal",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    pub gamma: f64,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub warm_size: usize,
    pub policy_update_interval: u64,
    /// Environment steps collected per iteration.
    pub sample_batch_size: usize,
    pub rho: f64,
    /// Per-step entropy target; `None` means `-action_dim`.
    pub h0: Option<f64>,
    pub total_iterations: u64,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init_alpha: f64,
    pub reward_scale: f64,
    pub entropy_mode: EntropyMode,
    pub tup_enabled: bool,
    pub tup_sign: TupSign,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            alpha_lr: 3e-4,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            batch_size: 256,
            buffer_capacity: 1_000_000,
            warm_size: 10_000,
            policy_update_interval: 2,
            sample_batch_size: 1,
            rho: 1.0,
            h0: None,
            total_iterations: 200_000,
            seed: 0,
            hidden: vec![256, 256],
            activation: Activation::Silu,
            init_alpha: 0.2,
            reward_scale: 0.1,
            entropy_mode: EntropyMode::Sampled,
            tup_enabled: true,
            tup_sign: TupSign::Stabilizing,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("tau", self.tau),
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("alpha_lr", self.alpha_lr),
            ("rho", self.rho),
            ("init_alpha", self.init_alpha),
            ("reward_scale", self.reward_scale),
        ];
        for (k, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{k} must be positive, got {v}")));
            }
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if self.tau > 1.0 {
            return Err(Error::Config(format!("tau must be at most 1, got {}", self.tau)));
        }
        for (k, b) in [("adam_beta1", self.adam_beta1), ("adam_beta2", self.adam_beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{k} must lie in [0, 1), got {b}")));
            }
        }
        let counts = [
            ("batch", self.batch_size as u64),
            ("buffer", self.buffer_capacity as u64),
            ("policy_update_interval", self.policy_update_interval),
            ("sample_batch_size", self.sample_batch_size as u64),
        ];
        for (k, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{k} must be positive")));
            }
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::Config("hidden widths must be a non-empty list of positive sizes".into()));
        }
        if let Some(h0) = self.h0 {
            if !h0.is_finite() {
                return Err(Error::Config("h0 must be finite".into()));
            }
        }
        Ok(())
    }

    pub fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: 1e-8,
        }
    }

    pub fn step_target(&self, spec: &EnvSpec) -> f64 {
        self.h0.unwrap_or(-(spec.action_dim as f64))
    }

    /// Gradient steps start once the buffer holds this many transitions.
    pub fn update_threshold(&self) -> usize {
        self.warm_size.max(self.batch_size)
    }
}

/// Range `log_alpha` is held in, so `exp` neither underflows to 0 nor overflows.
pub const LOG_ALPHA_BOUNDS: (f64, f64) = (-700.0, 700.0);

/// `alpha = exp(log_alpha)`, trained by Adam on `log_alpha`.
#[derive(Debug, Clone)]
pub struct Temperature {
    store: ParamStore,
    adam: AdamConfig,
}

impl Temperature {
    pub fn new(init_alpha: f64, adam: AdamConfig) -> Result<Self> {
        if !(init_alpha > 0.0 && init_alpha.is_finite()) {
            return Err(Error::InvalidArgument(format!("initial alpha must be positive, got {init_alpha}")));
        }
        let mut store = ParamStore::new();
        store.add("log_alpha", vec![1], ndarray::arr2(&[[init_alpha.ln()]]));
        Ok(Self { store, adam })
    }

    pub fn log_alpha(&self) -> f64 {
        self.store.scalar(0)
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha().exp()
    }

    pub fn set_alpha(&mut self, alpha: f64) {
        self.store.set_scalar(0, alpha.ln());
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// One Adam step on `log_alpha` with the given gradient; returns the new alpha.
    pub fn step(&mut self, d_log_alpha: f64) -> Result<f64> {
        self.store.zero_grad();
        self.store.grads[0][[0, 0]] = d_log_alpha;
        self.store.adam_step(&self.adam)?;
        let (lo, hi) = LOG_ALPHA_BOUNDS;
        let clamped = self.log_alpha().clamp(lo, hi);
        if clamped != self.log_alpha() {
            self.store.set_scalar(0, clamped);
        }
        Ok(self.alpha())
    }
}

/// Scalars logged by one gradient iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub pev_loss: f64,
    /// Entropy-critic loss; NaN for agents without one.
    pub pis_loss: f64,
    pub pim_loss: Option<f64>,
    pub tup_loss: Option<f64>,
    /// Batch mean of the cumulative entropy estimate used by the temperature step.
    pub h_cum_mean: Option<f64>,
    /// Batch mean of the single-step entropy at the policy-update states.
    pub step_entropy_mean: Option<f64>,
    pub alpha: f64,
}

/// Common surface of the constrained agent and the baseline.
pub trait Agent {
    fn algo(&self) -> &'static str;
    fn policy(&self) -> &GaussianPolicy;
    fn temperature(&self) -> &Temperature;
    fn temperature_mut(&mut self) -> &mut Temperature;
    /// Gradient iterations performed so far; drives the policy-update schedule.
    fn updates(&self) -> u64;
    /// One gradient iteration on an already reward-scaled batch.
    fn update(&mut self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<UpdateStats>;
    /// Critic regression targets for `batch`, in the order the agent's critics consume them.
    fn targets(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<Vec<Array1<f64>>>;
    /// Named parameter stores for checkpointing, in a fixed order.
    fn stores(&self) -> Vec<(String, &ParamStore)>;
    fn stores_mut(&mut self) -> Vec<(String, &mut ParamStore)>;
    fn set_updates(&mut self, updates: u64);

    fn alpha(&self) -> f64 {
        self.temperature().alpha()
    }

    fn act<R: Rng + ?Sized>(&self, state: &[f64], rng: &mut R) -> Result<Vec<f64>>
    where
        Self: Sized,
    {
        sample_action(self.policy(), state, rng)
    }
}

pub fn sample_action<R: Rng + ?Sized>(policy: &GaussianPolicy, state: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let s = ArrayView2::from_shape((1, state.len()), state).map_err(|_| Error::shape("state", policy.state_dim(), state.len()))?;
    let (sample, _) = policy.sample(s, rng)?;
    Ok(sample.actions.row(0).to_vec())
}

/// Builds the agent selected by `algo` (`tecrl` or `maxent`).
pub fn build_agent(algo: &str, spec: &EnvSpec, cfg: &AgentConfig) -> Result<Box<dyn Agent>> {
    match algo {
        "tecrl" => Ok(Box::new(TecAgent::new(spec, cfg)?)),
        "maxent" => Ok(Box::new(MaxEntAgent::new(spec, cfg)?)),
        other => Err(Error::Config(format!("algo must be `tecrl` or `maxent`, got `{other}`"))),
    }
}

/// What happened during one [`Trainer::train_iteration`] call.
#[derive(Debug, Clone, Default)]
pub struct IterationReport {
    pub env_steps: usize,
    pub update: Option<UpdateStats>,
    /// Undiscounted returns of episodes that ended during this iteration.
    pub finished_returns: Vec<f64>,
}

/// Drives environment interaction and gradient updates for one agent.
pub struct Trainer {
    env: Box<dyn Env>,
    buffer: ReplayBuffer,
    cfg: AgentConfig,
    env_rng: ChaCha8Rng,
    action_rng: ChaCha8Rng,
    buffer_rng: ChaCha8Rng,
    update_rng: ChaCha8Rng,
    obs: Vec<f64>,
    episode_return: f64,
    iteration: u64,
}

impl Trainer {
    pub fn new(mut env: Box<dyn Env>, cfg: &AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let seeds = SeedStreams::new(cfg.seed);
        let mut env_rng = seeds.rng(Stream::Env);
        let obs = env.reset(env_rng.random());
        Ok(Self {
            env,
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            cfg: cfg.clone(),
            env_rng,
            action_rng: seeds.rng(Stream::ActionNoise),
            buffer_rng: seeds.rng(Stream::Buffer),
            update_rng: seeds.rng(Stream::UpdateNoise),
            obs,
            episode_return: 0.0,
            iteration: 0,
        })
    }

    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }

    pub fn env(&self) -> &dyn Env {
        self.env.as_ref()
    }

    pub fn iteration(&self) -> u64 {
        self.iteration
    }

    /// Collects `sample_batch_size` steps, then runs one gradient iteration
    /// if the buffer has reached the warm size.
    pub fn train_iteration(&mut self, agent: &mut dyn Agent) -> Result<IterationReport> {
        let mut report = IterationReport::default();
        for _ in 0..self.cfg.sample_batch_size {
            let action = sample_action(agent.policy(), &self.obs, &mut self.action_rng)?;
            let step = self.env.step(&action)?;
            self.episode_return += step.transition.reward;
            let ended = step.transition.done || step.truncated;
            self.obs = step.transition.next_state.clone();
            self.buffer.push(step.transition);
            report.env_steps += 1;
            if ended {
                report.finished_returns.push(self.episode_return);
                self.episode_return = 0.0;
                self.obs = self.env.reset(self.env_rng.random());
            }
        }
        if self.buffer.len() >= self.cfg.update_threshold() {
            let batch = self
                .buffer
                .sample(self.cfg.batch_size, &mut self.buffer_rng)?
                .scaled_rewards(self.cfg.reward_scale);
            report.update = Some(agent.update(&batch, &mut self.update_rng)?);
        }
        self.iteration += 1;
        Ok(report)
    }
}

/// Small random batch for tests elsewhere in the crate (3-d states, 1-d actions).
#[cfg(test)]
pub(crate) fn tecrl_test_batch(rng: &mut ChaCha8Rng) -> Batch {
    tecrl::tests::random_batch(rng, 4, 3, 1)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        AgentConfig::default().validate().unwrap();
        let bad = AgentConfig {
            gamma: 1.0,
            ..AgentConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = AgentConfig {
            batch_size: 0,
            ..AgentConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn temperature_stays_positive() {
        let mut t = Temperature::new(0.2, AdamConfig::new(0.5)).unwrap();
        for _ in 0..2000 {
            t.step(1e6).unwrap();
        }
        assert!(t.alpha() > 0.0);
        assert_eq!(t.log_alpha(), LOG_ALPHA_BOUNDS.0);
        for g in [-1e300, 1e300, 0.0, -3.0] {
            t.step(g).unwrap();
            assert!(t.alpha() > 0.0 && t.alpha().is_finite());
        }
        assert!(Temperature::new(0.0, AdamConfig::new(1.0)).is_err());
    }

    #[test]
    fn zero_gradient_leaves_alpha() {
        let mut t = Temperature::new(0.2, AdamConfig::new(3e-4)).unwrap();
        t.step(0.0).unwrap();
        assert_eq!(t.alpha(), 0.2f64.ln().exp());
    }

    #[test]
    fn tup_sign_names_round_trip() {
        for s in [TupSign::Stabilizing, TupSign::Literal] {
            assert_eq!(TupSign::parse(s.name()).unwrap(), s);
        }
        assert!(TupSign::parse("plus").is_err());
    }
}
