//! Reward critic (twin, min-target) and entropy critic with target copies.
//!
//! Neither target reads the temperature: the reward target bootstraps only
//! rewards, the entropy target only single-step entropies.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::autodiff::{polyak_update, Activation, AdamConfig, Mlp};
use crate::batch::{state_action, Batch};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::policy::{ActionSample, EntropyMode, GaussianPolicy};

#[derive(Debug, Clone)]
pub struct CriticPair {
    pub reward: [Mlp; 2],
    pub entropy: Mlp,
    pub reward_target: [Mlp; 2],
    pub entropy_target: Mlp,
}

/// Detached regression targets for one minibatch.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchTargets {
    pub y_r: Array1<f64>,
    pub y_e: Array1<f64>,
}

pub(crate) fn critic_widths(spec: &EnvSpec, hidden: &[usize]) -> Vec<usize> {
    let mut widths = vec![spec.state_dim + spec.action_dim];
    widths.extend_from_slice(hidden);
    widths.push(1);
    widths
}

pub(crate) fn column(q: Array2<f64>) -> Array1<f64> {
    debug_assert_eq!(q.ncols(), 1);
    let n = q.nrows();
    q.into_shape_with_order(n).expect("single column")
}

/// Value of one critic at `(states, actions)`.
pub fn evaluate(critic: &Mlp, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
    Ok(column(critic.predict(state_action(states, actions).view())?))
}

pub(crate) fn ensure_finite(v: &Array1<f64>, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

/// `sum_i (q_i - y_i)^2 / n` and its gradient with respect to `q`.
pub fn mse_and_grad(q: ArrayView1<f64>, y: ArrayView1<f64>) -> (f64, Array2<f64>) {
    let n = q.len() as f64;
    let diff = &q - &y;
    let loss = diff.dot(&diff) / n;
    let grad = (diff * (2.0 / n)).insert_axis(ndarray::Axis(1));
    (loss, grad)
}

/// One squared-error regression pass of `critic` onto `y`; accumulates gradients.
pub(crate) fn regress(critic: &mut Mlp, input: ArrayView2<f64>, y: ArrayView1<f64>) -> Result<f64> {
    if y.len() != input.nrows() {
        return Err(Error::shape("critic targets", input.nrows(), y.len()));
    }
    let (q, tape) = critic.forward(input)?;
    let (loss, grad) = mse_and_grad(q.column(0), y);
    critic.backward(tape, grad.view())?;
    Ok(loss)
}

impl CriticPair {
    /// Target copies start equal to their online networks.
    pub fn new<R: Rng + ?Sized>(spec: &EnvSpec, hidden: &[usize], activation: Activation, rng: &mut R) -> Result<Self> {
        let widths = critic_widths(spec, hidden);
        let reward = [Mlp::new(&widths, activation, rng)?, Mlp::new(&widths, activation, rng)?];
        let entropy = Mlp::new(&widths, activation, rng)?;
        Ok(Self {
            reward_target: reward.clone(),
            entropy_target: entropy.clone(),
            reward,
            entropy,
        })
    }

    pub fn zero_grad(&mut self) {
        for m in self.reward.iter_mut().chain(std::iter::once(&mut self.entropy)) {
            m.zero_grad();
        }
    }

    pub fn reward_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for m in &mut self.reward {
            m.store_mut().adam_step(cfg)?;
        }
        Ok(())
    }

    pub fn entropy_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        self.entropy.store_mut().adam_step(cfg)
    }

    /// Polyak-averages all three target networks toward their online copies.
    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        for (t, o) in self.reward_target.iter_mut().zip(&self.reward) {
            polyak_update(t.store_mut(), o.store(), tau)?;
        }
        polyak_update(self.entropy_target.store_mut(), self.entropy.store(), tau)
    }

    /// Online twin minimum `min(Q_r1, Q_r2)`.
    pub fn reward_min(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let input = state_action(states, actions);
        let a = column(self.reward[0].predict(input.view())?);
        let b = column(self.reward[1].predict(input.view())?);
        Ok(ndarray::Zip::from(&a).and(&b).map_collect(|&x, &y| x.min(y)))
    }
}

/// `y_r = r + gamma (1 - done) min(Q_r1', Q_r2')(s', a')`. Rewards are used as
/// given (scale them beforehand).
pub fn pev_target(batch: &Batch, next: &ActionSample, critics: &CriticPair, gamma: f64) -> Result<Array1<f64>> {
    let input = state_action(batch.next_states.view(), next.actions.view());
    let q1 = column(critics.reward_target[0].predict(input.view())?);
    let q2 = column(critics.reward_target[1].predict(input.view())?);
    let y = ndarray::Zip::from(&batch.rewards)
        .and(&batch.dones)
        .and(&q1)
        .and(&q2)
        .map_collect(|&r, &d, &a, &b| r + gamma * (1.0 - d) * a.min(b));
    ensure_finite(&y, "reward target")?;
    Ok(y)
}

/// `y_e = (1 - done) gamma (h(s') + Q_e'(s', a'))` with `h` the single-step
/// entropy sample drawn together with `a'`.
pub fn pis_target(
    batch: &Batch,
    next: &ActionSample,
    critics: &CriticPair,
    gamma: f64,
    mode: EntropyMode,
) -> Result<Array1<f64>> {
    let input = state_action(batch.next_states.view(), next.actions.view());
    let qe = column(critics.entropy_target.predict(input.view())?);
    let h = next.entropy(mode);
    let y = ndarray::Zip::from(&batch.dones)
        .and(&h)
        .and(&qe)
        .map_collect(|&d, &h, &q| (1.0 - d) * gamma * (h + q));
    ensure_finite(&y, "entropy target")?;
    Ok(y)
}

/// Draws `a' ~ pi(.|s')` and computes both targets from the same sample.
pub fn batch_targets<R: Rng + ?Sized>(
    batch: &Batch,
    policy: &GaussianPolicy,
    critics: &CriticPair,
    gamma: f64,
    rng: &mut R,
) -> Result<BatchTargets> {
    let (next, _) = policy.sample(batch.next_states.view(), rng)?;
    Ok(BatchTargets {
        y_r: pev_target(batch, &next, critics, gamma)?,
        y_e: pis_target(batch, &next, critics, gamma, policy.entropy_mode())?,
    })
}

/// Mean squared error summed over both reward twins; gradients go to the online twins.
pub fn pev_loss(batch: &Batch, critics: &mut CriticPair, y_r: ArrayView1<f64>) -> Result<f64> {
    let input = state_action(batch.states.view(), batch.actions.view());
    let mut total = 0.0;
    for twin in &mut critics.reward {
        total += regress(twin, input.view(), y_r)?;
    }
    Ok(total)
}

/// Mean squared error of the entropy critic; gradients go to the online entropy critic.
pub fn pis_loss(batch: &Batch, critics: &mut CriticPair, y_e: ArrayView1<f64>) -> Result<f64> {
    let input = state_action(batch.states.view(), batch.actions.view());
    regress(&mut critics.entropy, input.view(), y_e)
}

/// `h(a|s) + Q_e(s, a)` per state for a given sample at `states`.
pub fn cumulative_entropy_of(
    critics: &CriticPair,
    states: ArrayView2<f64>,
    sample: &ActionSample,
    mode: EntropyMode,
) -> Result<Array1<f64>> {
    let qe = evaluate(&critics.entropy, states, sample.actions.view())?;
    Ok(sample.entropy(mode) + qe)
}

/// Sample estimate of the discounted trajectory entropy from each state.
pub fn cumulative_entropy_estimate<R: Rng + ?Sized>(
    critics: &CriticPair,
    policy: &GaussianPolicy,
    states: ArrayView2<f64>,
    rng: &mut R,
) -> Result<Array1<f64>> {
    let (sample, _) = policy.sample(states, rng)?;
    cumulative_entropy_of(critics, states, &sample, policy.entropy_mode())
}

/// Values of `critic` at `(states, actions)` and the gradient of
/// `sum_i w_i q_i` with respect to the actions. Parameter gradients untouched.
pub fn value_and_action_grad(
    critic: &Mlp,
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    w: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let (q, tape) = critic.forward(state_action(states, actions).view())?;
    let g = w.to_owned().insert_axis(ndarray::Axis(1));
    let d_input = critic.input_grad(tape, g.view())?;
    Ok((column(q), d_input.slice(s![.., states.ncols()..]).to_owned()))
}

/// Twin minimum and the gradient of `sum_i w_i min_i` with respect to the
/// actions, routed through whichever twin is smaller (the first on ties).
pub fn twin_min_and_action_grad(
    twins: &[Mlp; 2],
    states: ArrayView2<f64>,
    actions: ArrayView2<f64>,
    w: ArrayView1<f64>,
) -> Result<(Array1<f64>, Array2<f64>)> {
    let input = state_action(states, actions);
    let (qa, ta) = twins[0].forward(input.view())?;
    let (qb, tb) = twins[1].forward(input.view())?;
    let (qa, qb) = (column(qa), column(qb));
    let first = ndarray::Zip::from(&qa).and(&qb).map_collect(|&a, &b| a <= b);
    let wa = ndarray::Zip::from(&w).and(&first).map_collect(|&w, &f| if f { w } else { 0.0 });
    let wb = &w - &wa;
    let ga = twins[0].input_grad(ta, wa.insert_axis(ndarray::Axis(1)).view())?;
    let gb = twins[1].input_grad(tb, wb.insert_axis(ndarray::Axis(1)).view())?;
    let q = ndarray::Zip::from(&qa).and(&qb).map_collect(|&a, &b| a.min(b));
    let d = (ga + gb).slice(s![.., states.ncols()..]).to_owned();
    Ok((q, d))
}
