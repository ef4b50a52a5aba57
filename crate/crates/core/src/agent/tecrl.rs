use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Agent, AgentConfig, Temperature, TupSign, UpdateStats};
use crate::autodiff::{AdamConfig, ParamStore};
use crate::batch::Batch;
use crate::critics::{
    batch_targets, pev_loss, pis_loss, twin_min_and_action_grad, value_and_action_grad, CriticPair,
};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::policy::{GaussianPolicy, SampleGrad};
use crate::seeding::{SeedStreams, Stream};

/// Trajectory entropy target `rho * h0 / (1 - gamma)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EntropyBudget {
    pub rho: f64,
    pub h0: f64,
    pub gamma: f64,
    pub budget: f64,
}

impl EntropyBudget {
    pub fn new(rho: f64, h0: f64, gamma: f64) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::InvalidArgument(format!("rho must be positive, got {rho}")));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::InvalidArgument(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if !h0.is_finite() {
            return Err(Error::InvalidArgument("h0 must be finite".into()));
        }
        Ok(Self {
            rho,
            h0,
            gamma,
            budget: rho * h0 / (1.0 - gamma),
        })
    }
}

/// Budget with the default per-step target `h0 = -action_dim`.
pub fn budget_from_config(rho: f64, action_dim: usize, gamma: f64) -> Result<EntropyBudget> {
    EntropyBudget::new(rho, -(action_dim as f64), gamma)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PimOutput {
    pub loss: f64,
    /// Detached `h(a|s) + Q_e(s, a)` per state.
    pub h_cum: Array1<f64>,
    /// Detached single-step entropy per state.
    pub step_entropy: Array1<f64>,
}

/// Loss and value of one temperature step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TupOutput {
    pub loss: f64,
    pub grad_log_alpha: f64,
    pub alpha: f64,
}

/// `-mean[min Q_r(s, a) + alpha (h(a|s) + Q_e(s, a))]` with `a` reparameterized
/// from `noise`. Accumulates gradients into the policy only; zero them first.
pub fn pim_loss(
    policy: &mut GaussianPolicy,
    critics: &CriticPair,
    alpha: f64,
    states: ArrayView2<f64>,
    noise: Array2<f64>,
) -> Result<PimOutput> {
    let n = states.nrows();
    let mode = policy.entropy_mode();
    let (sample, tape) = policy.sample_with_noise(states, noise)?;
    let w = Array1::from_elem(n, -1.0 / n as f64);
    let (q_r, d_r) = twin_min_and_action_grad(&critics.reward, states, sample.actions.view(), w.view())?;
    let w_e = &w * alpha;
    let (q_e, d_e) = value_and_action_grad(&critics.entropy, states, sample.actions.view(), w_e.view())?;
    let h = sample.entropy(mode);
    let h_cum = &h + &q_e;
    let loss = -(&q_r + &(&h_cum * alpha)).sum() / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("policy improvement loss".into()));
    }
    let mut grad = SampleGrad::zeros(n, policy.action_dim());
    grad.actions = d_r + d_e;
    grad.add_entropy(mode, w_e.view());
    policy.backward(tape, &grad)?;
    Ok(PimOutput {
        loss,
        h_cum,
        step_entropy: h,
    })
}

/// Moves `log_alpha` so the batch-mean cumulative entropy approaches `budget`.
pub fn tup_step(
    temperature: &mut Temperature,
    h_cum: ArrayView1<f64>,
    budget: f64,
    sign: TupSign,
) -> Result<TupOutput> {
    let mean = h_cum
        .mean()
        .ok_or_else(|| Error::InvalidArgument("empty entropy batch".into()))?;
    let alpha = temperature.alpha();
    let gap = match sign {
        TupSign::Stabilizing => mean - budget,
        TupSign::Literal => budget - mean,
    };
    let loss = alpha * gap;
    let grad = alpha * gap;
    let alpha = temperature.step(grad)?;
    Ok(TupOutput {
        loss,
        grad_log_alpha: grad,
        alpha,
    })
}

/// Decoupled-critic agent with a trajectory-entropy budget.
#[derive(Debug, Clone)]
pub struct TecAgent {
    pub policy: GaussianPolicy,
    pub critics: CriticPair,
    pub temperature: Temperature,
    pub budget: EntropyBudget,
    cfg: AgentConfig,
    actor_adam: AdamConfig,
    critic_adam: AdamConfig,
    updates: u64,
}

impl TecAgent {
    pub fn new(spec: &EnvSpec, cfg: &AgentConfig) -> Result<Self> {
        cfg.validate()?;
        let seeds = SeedStreams::new(cfg.seed);
        let policy = GaussianPolicy::new(
            spec,
            &cfg.hidden,
            cfg.activation,
            cfg.entropy_mode,
            &mut seeds.rng(Stream::PolicyInit),
        )?;
        let critics = CriticPair::new(spec, &cfg.hidden, cfg.activation, &mut seeds.rng(Stream::CriticInit))?;
        Ok(Self {
            policy,
            critics,
            temperature: Temperature::new(cfg.init_alpha, cfg.adam(cfg.alpha_lr))?,
            budget: EntropyBudget::new(cfg.rho, cfg.step_target(spec), cfg.gamma)?,
            actor_adam: cfg.adam(cfg.actor_lr),
            critic_adam: cfg.adam(cfg.critic_lr),
            cfg: cfg.clone(),
            updates: 0,
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.cfg
    }

    /// Whether the gradient iteration numbered `k` (from 0) updates policy and temperature.
    pub fn policy_turn(&self, k: u64) -> bool {
        k % self.cfg.policy_update_interval == 0
    }
}

impl Agent for TecAgent {
    fn algo(&self) -> &'static str {
        "tecrl"
    }

    fn policy(&self) -> &GaussianPolicy {
        &self.policy
    }

    fn temperature(&self) -> &Temperature {
        &self.temperature
    }

    fn temperature_mut(&mut self) -> &mut Temperature {
        &mut self.temperature
    }

    fn updates(&self) -> u64 {
        self.updates
    }

    fn set_updates(&mut self, updates: u64) {
        self.updates = updates;
    }

    fn update(&mut self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<UpdateStats> {
        let targets = batch_targets(batch, &self.policy, &self.critics, self.cfg.gamma, rng)?;
        self.critics.zero_grad();
        let pev = pev_loss(batch, &mut self.critics, targets.y_r.view())?;
        self.critics.reward_step(&self.critic_adam)?;
        let pis = pis_loss(batch, &mut self.critics, targets.y_e.view())?;
        self.critics.entropy_step(&self.critic_adam)?;

        let mut stats = UpdateStats {
            pev_loss: pev,
            pis_loss: pis,
            ..UpdateStats::default()
        };
        if self.policy_turn(self.updates) {
            let alpha = self.temperature.alpha();
            let noise = self.policy.draw_noise(batch.len(), rng);
            self.policy.trunk_mut().zero_grad();
            let pim = pim_loss(&mut self.policy, &self.critics, alpha, batch.states.view(), noise)?;
            self.policy.trunk_mut().store_mut().adam_step(&self.actor_adam)?;
            stats.pim_loss = Some(pim.loss);
            stats.h_cum_mean = pim.h_cum.mean();
            stats.step_entropy_mean = pim.step_entropy.mean();
            if self.cfg.tup_enabled {
                let tup = tup_step(&mut self.temperature, pim.h_cum.view(), self.budget.budget, self.cfg.tup_sign)?;
                stats.tup_loss = Some(tup.loss);
            }
        }
        self.critics.soft_update(self.cfg.tau)?;
        self.updates += 1;
        stats.alpha = self.temperature.alpha();
        Ok(stats)
    }

    fn targets(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<Vec<Array1<f64>>> {
        let t = batch_targets(batch, &self.policy, &self.critics, self.cfg.gamma, rng)?;
        Ok(vec![t.y_r, t.y_e])
    }

    fn stores(&self) -> Vec<(String, &ParamStore)> {
        let c = &self.critics;
        vec![
            ("policy".into(), self.policy.trunk().store()),
            ("q_r_a".into(), c.reward[0].store()),
            ("q_r_b".into(), c.reward[1].store()),
            ("q_e".into(), c.entropy.store()),
            ("q_r_a_target".into(), c.reward_target[0].store()),
            ("q_r_b_target".into(), c.reward_target[1].store()),
            ("q_e_target".into(), c.entropy_target.store()),
            ("temperature".into(), self.temperature.store()),
        ]
    }

    fn stores_mut(&mut self) -> Vec<(String, &mut ParamStore)> {
        let c = &mut self.critics;
        let [ra, rb] = &mut c.reward;
        let [ta, tb] = &mut c.reward_target;
        vec![
            ("policy".into(), self.policy.trunk_mut().store_mut()),
            ("q_r_a".into(), ra.store_mut()),
            ("q_r_b".into(), rb.store_mut()),
            ("q_e".into(), c.entropy.store_mut()),
            ("q_r_a_target".into(), ta.store_mut()),
            ("q_r_b_target".into(), tb.store_mut()),
            ("q_e_target".into(), c.entropy_target.store_mut()),
            ("temperature".into(), self.temperature.store_mut()),
        ]
    }
}
