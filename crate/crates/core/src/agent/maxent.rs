use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tecrl::TupOutput;
use super::{Agent, AgentConfig, Temperature, UpdateStats};
use crate::autodiff::{polyak_update, Activation, AdamConfig, Mlp, ParamStore};
use crate::batch::{state_action, Batch};
use crate::critics::{column, critic_widths, ensure_finite, regress, twin_min_and_action_grad};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::policy::{ActionSample, GaussianPolicy, SampleGrad};
use crate::seeding::{SeedStreams, Stream};

/// Twin soft Q-networks and their target copies.
#[derive(Debug, Clone)]
pub struct SoftCriticPair {
    pub online: [Mlp; 2],
    pub target: [Mlp; 2],
}

impl SoftCriticPair {
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, hidden: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let widths = critic_widths(spec, hidden);
        let online = [Mlp::new(&widths, activation, rng)?, Mlp::new(&widths, activation, rng)?];
        Ok(Self {
            target: online.clone(),
            online,
        })
    }

    pub fn zero_grad(&mut self) {
        for m in &mut self.online {
            m.zero_grad();
        }
    }

    pub fn step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for m in &mut self.online {
            m.store_mut().adam_step(cfg)?;
        }
        Ok(())
    }

    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        for (t, o) in self.target.iter_mut().zip(&self.online) {
            polyak_update(t.store_mut(), o.store(), tau)?;
        }
        Ok(())
    }
}

/// `y = r + gamma (1 - done)(min Q'(s', a') + alpha h(a'|s'))`.
pub fn soft_pev_target(
    batch: &Batch,
    next: &ActionSample,
    critics: &SoftCriticPair,
    alpha: f64,
    gamma: f64,
    mode: crate::policy::EntropyMode,
) -> Result<Array1<f64>> {
    let input = state_action(batch.next_states.view(), next.actions.view());
    let q1 = column(critics.target[0].predict(input.view())?);
    let q2 = column(critics.target[1].predict(input.view())?);
    let h = next.entropy(mode);
    let y = ndarray::Zip::from(&batch.rewards)
        .and(&batch.dones)
        .and(&q1)
        .and(&q2)
        .and(&h)
        .map_collect(|&r, &d, &a, &b, &h| r + gamma * (1.0 - d) * (a.min(b) + alpha * h));
    ensure_finite(&y, "soft target")?;
    Ok(y)
}

/// Squared error summed over both soft twins.
pub fn soft_pev_loss(batch: &Batch, critics: &mut SoftCriticPair, y: ArrayView1<f64>) -> Result<f64> {
    let input = state_action(batch.states.view(), batch.actions.view());
    let mut total = 0.0;
    for twin in &mut critics.online {
        total += regress(twin, input.view(), y)?;
    }
    Ok(total)
}

/// `-mean[min Q(s, a) + alpha h(a|s)]`; returns the loss and the detached
/// per-state entropies. Accumulates gradients into the policy only.
pub fn soft_pim_loss(
    policy: &mut GaussianPolicy,
    critics: &SoftCriticPair,
    alpha: f64,
    states: ArrayView2<f64>,
    noise: Array2<f64>,
) -> Result<(f64, Array1<f64>)> {
    let n = states.nrows();
    let mode = policy.entropy_mode();
    let (sample, tape) = policy.sample_with_noise(states, noise)?;
    let w = Array1::from_elem(n, -1.0 / n as f64);
    let (q, d_q) = twin_min_and_action_grad(&critics.online, states, sample.actions.view(), w.view())?;
    let h = sample.entropy(mode);
    let loss = -(&q + &(&h * alpha)).sum() / n as f64;
    if !loss.is_finite() {
        return Err(Error::NonFinite("soft policy improvement loss".into()));
    }
    let mut grad = SampleGrad::zeros(n, policy.action_dim());
    grad.actions = d_q;
    grad.add_entropy(mode, (&w * alpha).view());
    policy.backward(tape, &grad)?;
    Ok((loss, h))
}

/// Per-step temperature rule: `dJ/dalpha = mean(h) - h0`.
pub fn local_tup_step(temperature: &mut Temperature, entropy: ArrayView1<f64>, h0: f64) -> Result<TupOutput> {
    let mean = entropy
        .mean()
        .ok_or_else(|| Error::InvalidArgument("empty entropy batch".into()))?;
    let alpha = temperature.alpha();
    let grad = alpha * (mean - h0);
    let loss = alpha * (mean - h0);
    let alpha = temperature.step(grad)?;
    Ok(TupOutput {
        loss,
        grad_log_alpha: grad,
        alpha,
    })
}

/// SAC-style maximum-entropy agent sharing the policy, buffer and schedule.
#[derive(Debug, Clone)]
pub struct MaxEntAgent {
    pub policy: GaussianPolicy,
    pub critics: SoftCriticPair,
    pub temperature: Temperature,
    pub h0: f64,
    cfg: AgentConfig,
    actor_adam: AdamConfig,
    critic_adam: AdamConfig,
    updates: u64,
}

impl MaxEntAgent {
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
        let critics = SoftCriticPair::new(spec, &cfg.hidden, cfg.activation, &mut seeds.rng(Stream::CriticInit))?;
        Ok(Self {
            policy,
            critics,
            temperature: Temperature::new(cfg.init_alpha, cfg.adam(cfg.alpha_lr))?,
            h0: cfg.step_target(spec),
            actor_adam: cfg.adam(cfg.actor_lr),
            critic_adam: cfg.adam(cfg.critic_lr),
            cfg: cfg.clone(),
            updates: 0,
        })
    }

    fn soft_target(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
        let (next, _) = self.policy.sample(batch.next_states.view(), rng)?;
        soft_pev_target(
            batch,
            &next,
            &self.critics,
            self.temperature.alpha(),
            self.cfg.gamma,
            self.policy.entropy_mode(),
        )
    }
}

impl Agent for MaxEntAgent {
    fn algo(&self) -> &'static str {
        "maxent"
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
        let y = self.soft_target(batch, rng)?;
        self.critics.zero_grad();
        let pev = soft_pev_loss(batch, &mut self.critics, y.view())?;
        self.critics.step(&self.critic_adam)?;
        let mut stats = UpdateStats {
            pev_loss: pev,
            pis_loss: f64::NAN,
            ..UpdateStats::default()
        };
        if self.updates % self.cfg.policy_update_interval == 0 {
            let alpha = self.temperature.alpha();
            let noise = self.policy.draw_noise(batch.len(), rng);
            self.policy.trunk_mut().zero_grad();
            let (loss, h) = soft_pim_loss(&mut self.policy, &self.critics, alpha, batch.states.view(), noise)?;
            self.policy.trunk_mut().store_mut().adam_step(&self.actor_adam)?;
            stats.pim_loss = Some(loss);
            stats.step_entropy_mean = h.mean();
            if self.cfg.tup_enabled {
                stats.tup_loss = Some(local_tup_step(&mut self.temperature, h.view(), self.h0)?.loss);
            }
        }
        self.critics.soft_update(self.cfg.tau)?;
        self.updates += 1;
        stats.alpha = self.temperature.alpha();
        Ok(stats)
    }

    fn targets(&self, batch: &Batch, rng: &mut ChaCha8Rng) -> Result<Vec<Array1<f64>>> {
        Ok(vec![self.soft_target(batch, rng)?])
    }

    fn stores(&self) -> Vec<(String, &ParamStore)> {
        let c = &self.critics;
        vec![
            ("policy".into(), self.policy.trunk().store()),
            ("q_a".into(), c.online[0].store()),
            ("q_b".into(), c.online[1].store()),
            ("q_a_target".into(), c.target[0].store()),
            ("q_b_target".into(), c.target[1].store()),
            ("temperature".into(), self.temperature.store()),
        ]
    }

    fn stores_mut(&mut self) -> Vec<(String, &mut ParamStore)> {
        let [a, b] = &mut self.critics.online;
        let [ta, tb] = &mut self.critics.target;
        vec![
            ("policy".into(), self.policy.trunk_mut().store_mut()),
            ("q_a".into(), a.store_mut()),
            ("q_b".into(), b.store_mut()),
            ("q_a_target".into(), ta.store_mut()),
            ("q_b_target".into(), tb.store_mut()),
            ("temperature".into(), self.temperature.store_mut()),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::tecrl::tests::{random_batch, set_constant, toy_spec};
    use crate::autodiff::gradcheck;
    use crate::critics::{pev_target, CriticPair};
    use crate::policy::EntropyMode;
    use ndarray::array;
    use rand::SeedableRng;

    fn pair(spec: &EnvSpec, seed: u64) -> SoftCriticPair {
        SoftCriticPair::new(spec, &[6], Activation::Tanh, &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    }

    fn one_row() -> Batch {
        Batch {
            states: array![[0.0, 0.0]],
            actions: array![[0.0]],
            rewards: array![1.0],
            next_states: array![[0.0, 0.0]],
            dones: array![0.0],
        }
    }

    #[test]
    fn soft_target_arithmetic() {
        let spec = toy_spec(2, 1);
        let mut c = pair(&spec, 0);
        set_constant(&mut c.target[0], 10.0);
        set_constant(&mut c.target[1], 11.0);
        let next = ActionSample {
            actions: array![[0.0]],
            log_prob: array![-1.0],
            pre_squash_entropy: array![0.0],
        };
        let y = soft_pev_target(&one_row(), &next, &c, 0.2, 0.99, EntropyMode::Sampled).unwrap();
        assert!((y[0] - 11.098).abs() < 1e-12);
    }

    #[test]
    fn zero_alpha_matches_reward_target() {
        let spec = toy_spec(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = random_batch(&mut rng, 8, 2, 1);
        let soft = pair(&spec, 3);
        let mut hard = CriticPair::new(&spec, &[6], Activation::Tanh, &mut rng).unwrap();
        hard.reward_target = soft.target.clone();
        let p = GaussianPolicy::new(&spec, &[6], Activation::Tanh, EntropyMode::Sampled, &mut rng).unwrap();
        let (next, _) = p.sample(b.next_states.view(), &mut rng).unwrap();
        let y0 = soft_pev_target(&b, &next, &soft, 0.0, 0.9, EntropyMode::Sampled).unwrap();
        assert_eq!(y0, pev_target(&b, &next, &hard, 0.9).unwrap());
        let y1 = soft_pev_target(&b, &next, &soft, 0.3, 0.9, EntropyMode::Sampled).unwrap();
        let y2 = soft_pev_target(&b, &next, &soft, 0.6, 0.9, EntropyMode::Sampled).unwrap();
        for i in 0..b.len() {
            if b.dones[i] == 0.0 {
                assert_ne!(y1[i], y2[i]);
            } else {
                assert_eq!(y1[i], y2[i]);
            }
        }
    }

    #[test]
    fn soft_pim_degenerate_cases() {
        let spec = toy_spec(2, 1);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = GaussianPolicy::new(&spec, &[4], Activation::Tanh, EntropyMode::Sampled, &mut rng).unwrap();
        let mut c = pair(&spec, 4);
        set_constant(&mut c.online[0], 3.0);
        set_constant(&mut c.online[1], 3.0);
        let s = array![[0.2, 0.1], [0.5, -0.5]];
        let noise = p.draw_noise(2, &mut rng);
        let (loss, h) = soft_pim_loss(&mut p, &c, 0.4, s.view(), noise.clone()).unwrap();
        assert!((loss - (-3.0 - 0.4 * h.mean().unwrap())).abs() < 1e-12);
        let (loss, _) = soft_pim_loss(&mut p, &c, 0.0, s.view(), noise).unwrap();
        assert_eq!(loss, -3.0);
    }

    #[test]
    fn soft_pim_gradient_matches_finite_differences() {
        let spec = toy_spec(2, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut p = GaussianPolicy::new(&spec, &[6], Activation::Tanh, EntropyMode::Sampled, &mut rng).unwrap();
        let c = pair(&spec, 8);
        let s = array![[0.5, -0.4], [-0.7, 0.2], [0.0, 0.1]];
        let noise = p.draw_noise(3, &mut rng);
        p.trunk_mut().zero_grad();
        soft_pim_loss(&mut p, &c, 0.25, s.view(), noise.clone()).unwrap();
        let analytic = p.trunk().store().flat_grads();
        let r = gradcheck::check(&mut p, |p| p.trunk_mut().store_mut(), &analytic, 1e-6, |p| {
            let (smp, _) = p.sample_with_noise(s.view(), noise.clone()).unwrap();
            let input = state_action(s.view(), smp.actions.view());
            let a = column(c.online[0].predict(input.view()).unwrap());
            let b = column(c.online[1].predict(input.view()).unwrap());
            let q = ndarray::Zip::from(&a).and(&b).map_collect(|&x, &y| x.min(y));
            -(q + smp.entropy(EntropyMode::Sampled) * 0.25).mean().unwrap()
        });
        assert!(r.max_rel_error <= 1e-4, "{r:?}");
    }

    #[test]
    fn local_temperature_direction() {
        let mut t = Temperature::new(0.2, AdamConfig::new(3e-4)).unwrap();
        let out = local_tup_step(&mut t, array![-1.0, -1.0].view(), -1.0).unwrap();
        assert_eq!(out.grad_log_alpha, 0.0);
        assert_eq!(t.alpha(), 0.2f64.ln().exp());
        let out = local_tup_step(&mut t, array![0.0].view(), -1.0).unwrap();
        assert!((out.grad_log_alpha / 0.2 - 1.0).abs() < 1e-9);
        assert!(t.alpha() < 0.2);
    }

    #[test]
    fn soft_targets_move_with_alpha() {
        let spec = toy_spec(3, 2);
        let cfg = AgentConfig {
            hidden: vec![8, 8],
            batch_size: 4,
            ..AgentConfig::default()
        };
        let mut agent = MaxEntAgent::new(&spec, &cfg).unwrap();
        let mut b = random_batch(&mut ChaCha8Rng::seed_from_u64(5), 16, 3, 2);
        b.dones.fill(0.0);
        let y1 = agent.targets(&b, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let a = agent.temperature.alpha();
        agent.temperature.set_alpha(10.0 * a);
        let y2 = agent.targets(&b, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        for (u, v) in y1[0].iter().zip(y2[0].iter()) {
            assert_ne!(u, v);
        }
    }
}
