//! Tanh-squashed diagonal Gaussian policy.
//!
//! The trunk emits `[mean | raw log-std]`; the log-std is clamped, a sample
//! `u = mean + std * eps` is squashed with `tanh` and affinely mapped onto the
//! action box. `log_prob` is the density of the emitted (bounded) action,
//! including the `tanh` Jacobian and the box scaling.

use std::f64::consts::{LN_2, PI};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Activation, Mlp, Tape};
use crate::env::EnvSpec;
use crate::error::{Error, Result};

pub const LOG_STD_MIN: f64 = -20.0;
pub const LOG_STD_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Which quantity stands in for the single-step entropy inside the losses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntropyMode {
    /// `-log pi(a|s)` of the sampled squashed action.
    Sampled,
    /// Closed-form entropy of the Gaussian before squashing.
    ClosedForm,
}

impl EntropyMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "sampled" => Ok(Self::Sampled),
            "closed_form" => Ok(Self::ClosedForm),
            _ => Err(Error::Config(format!("entropy_mode `{s}` unknown; valid: sampled, closed_form"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Sampled => "sampled",
            Self::ClosedForm => "closed_form",
        }
    }
}

/// `log(1 - tanh(u)^2)` without cancellation for large `|u|`.
#[inline]
pub fn log_one_minus_tanh_sq(u: f64) -> f64 {
    2.0 * (LN_2 - u - softplus(-2.0 * u))
}

#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// A batch of reparameterized samples.
#[derive(Debug, Clone)]
pub struct ActionSample {
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
    pub pre_squash_entropy: Array1<f64>,
}

impl ActionSample {
    pub fn batch_size(&self) -> usize {
        self.actions.nrows()
    }

    /// Per-row entropy estimate under `mode`.
    pub fn entropy(&self, mode: EntropyMode) -> Array1<f64> {
        match mode {
            EntropyMode::Sampled => self.log_prob.mapv(|l| -l),
            EntropyMode::ClosedForm => self.pre_squash_entropy.clone(),
        }
    }
}

/// Intermediate values needed to differentiate a sample.
#[derive(Debug)]
pub struct PolicyTape {
    trunk: Tape,
    eps: Array2<f64>,
    std: Array2<f64>,
    squashed: Array2<f64>,
    /// 1 where the raw log-std lies inside the clamp interval, else 0.
    log_std_live: Array2<f64>,
}

/// Upstream gradients of a scalar loss with respect to a sample.
#[derive(Debug, Clone)]
pub struct SampleGrad {
    pub actions: Array2<f64>,
    pub log_prob: Array1<f64>,
    pub pre_squash_entropy: Array1<f64>,
}

impl SampleGrad {
    pub fn zeros(batch: usize, action_dim: usize) -> Self {
        Self {
            actions: Array2::zeros((batch, action_dim)),
            log_prob: Array1::zeros(batch),
            pre_squash_entropy: Array1::zeros(batch),
        }
    }

    /// Adds `d_entropy` routed to whichever quantity `mode` uses as entropy.
    pub fn add_entropy(&mut self, mode: EntropyMode, d_entropy: ArrayView1<f64>) {
        match mode {
            EntropyMode::Sampled => self.log_prob -= &d_entropy,
            EntropyMode::ClosedForm => self.pre_squash_entropy += &d_entropy,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GaussianPolicy {
    trunk: Mlp,
    action_dim: usize,
    center: Array1<f64>,
    half_range: Array1<f64>,
    log_std_min: f64,
    log_std_max: f64,
    entropy_mode: EntropyMode,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(
        spec: &EnvSpec,
        hidden: &[usize],
        activation: Activation,
        entropy_mode: EntropyMode,
        rng: &mut R,
    ) -> Result<Self> {
        spec.validate()?;
        let mut widths = vec![spec.state_dim];
        widths.extend_from_slice(hidden);
        widths.push(2 * spec.action_dim);
        let trunk = Mlp::new(&widths, activation, rng)?;
        let low = Array1::from(spec.action_low.clone());
        let high = Array1::from(spec.action_high.clone());
        Ok(Self {
            trunk,
            action_dim: spec.action_dim,
            center: (&high + &low) * 0.5,
            half_range: (&high - &low) * 0.5,
            log_std_min: LOG_STD_MIN,
            log_std_max: LOG_STD_MAX,
            entropy_mode,
        })
    }

    pub fn trunk(&self) -> &Mlp {
        &self.trunk
    }

    pub fn trunk_mut(&mut self) -> &mut Mlp {
        &mut self.trunk
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn state_dim(&self) -> usize {
        self.trunk.input_dim()
    }

    pub fn entropy_mode(&self) -> EntropyMode {
        self.entropy_mode
    }

    pub fn log_std_bounds(&self) -> (f64, f64) {
        (self.log_std_min, self.log_std_max)
    }

    /// Zeroes the trunk weights so every state maps to the given head output.
    pub fn set_constant_head(&mut self, mean: &[f64], raw_log_std: &[f64]) {
        assert_eq!(mean.len(), self.action_dim);
        assert_eq!(raw_log_std.len(), self.action_dim);
        let last = self.trunk.n_layers() - 1;
        for layer in 0..=last {
            self.trunk.weight_mut(layer).fill(0.0);
            self.trunk.bias_mut(layer).fill(0.0);
        }
        let bias = self.trunk.bias_mut(last);
        for i in 0..self.action_dim {
            bias[[0, i]] = mean[i];
            bias[[0, self.action_dim + i]] = raw_log_std[i];
        }
    }

    fn split_head(&self, head: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        if head.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("policy trunk output".into()));
        }
        let a = self.action_dim;
        let mean = head.slice(ndarray::s![.., ..a]).to_owned();
        let raw = head.slice(ndarray::s![.., a..]).to_owned();
        Ok((mean, raw))
    }

    /// Mean and clamped log-std for a batch of states.
    pub fn head(&self, states: ArrayView2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let head = self.trunk.predict(states)?;
        let (mean, raw) = self.split_head(&head)?;
        let (lo, hi) = (self.log_std_min, self.log_std_max);
        Ok((mean, raw.mapv(|x| x.clamp(lo, hi))))
    }

    pub fn draw_noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Array2<f64> {
        Array2::from_shape_simple_fn((batch, self.action_dim), || rng.sample(StandardNormal))
    }

    /// Reparameterized sample with a freshly drawn noise matrix.
    pub fn sample<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<f64>,
        rng: &mut R,
    ) -> Result<(ActionSample, PolicyTape)> {
        let noise = self.draw_noise(states.nrows(), rng);
        self.sample_with_noise(states, noise)
    }

    /// Reparameterized sample `a = c + h * tanh(mean + std * noise)`.
    pub fn sample_with_noise(
        &self,
        states: ArrayView2<f64>,
        noise: Array2<f64>,
    ) -> Result<(ActionSample, PolicyTape)> {
        let batch = states.nrows();
        if noise.dim() != (batch, self.action_dim) {
            return Err(Error::shape(
                "policy noise",
                format!("({batch}, {})", self.action_dim),
                format!("{:?}", noise.dim()),
            ));
        }
        let (head, trunk_tape) = self.trunk.forward(states)?;
        let (mean, raw) = self.split_head(&head)?;
        let (lo, hi) = (self.log_std_min, self.log_std_max);
        let log_std = raw.mapv(|x| x.clamp(lo, hi));
        let log_std_live = raw.mapv(|x| if (lo..=hi).contains(&x) { 1.0 } else { 0.0 });
        let std = log_std.mapv(f64::exp);
        let pre = &mean + &(&std * &noise);
        let squashed = pre.mapv(f64::tanh);
        let actions = &squashed * &self.half_range + &self.center;
        let log_half: f64 = self.half_range.iter().map(|h| h.ln()).sum();

        let mut log_prob = Array1::zeros(batch);
        let mut entropy = Array1::zeros(batch);
        for i in 0..batch {
            let mut lp = -log_half;
            let mut ent = 0.0;
            for j in 0..self.action_dim {
                let e = noise[[i, j]];
                let ls = log_std[[i, j]];
                lp += -0.5 * e * e - ls - HALF_LN_2PI - log_one_minus_tanh_sq(pre[[i, j]]);
                ent += 0.5 + HALF_LN_2PI + ls;
            }
            log_prob[i] = lp;
            entropy[i] = ent;
        }
        if log_prob.iter().any(|x: &f64| !x.is_finite()) {
            return Err(Error::NonFinite("policy log_prob".into()));
        }
        let sample = ActionSample {
            actions,
            log_prob,
            pre_squash_entropy: entropy,
        };
        let tape = PolicyTape {
            trunk: trunk_tape,
            eps: noise,
            std,
            squashed,
            log_std_live,
        };
        Ok((sample, tape))
    }

    /// Gradient of `loss` with respect to the sampled head outputs `[mean | raw log-std]`.
    fn head_grad(&self, tape: &PolicyTape, grad: &SampleGrad) -> Array2<f64> {
        let batch = tape.eps.nrows();
        let a = self.action_dim;
        let mut d_head = Array2::zeros((batch, 2 * a));
        for i in 0..batch {
            for j in 0..a {
                let t = tape.squashed[[i, j]];
                // d log_prob / d u = 2 tanh(u); d action / d u = h (1 - tanh^2)
                let d_pre = grad.actions[[i, j]] * self.half_range[j] * (1.0 - t * t) + grad.log_prob[i] * 2.0 * t;
                // log_prob carries -log_std; entropy carries +log_std
                let d_log_std = d_pre * tape.std[[i, j]] * tape.eps[[i, j]] - grad.log_prob[i]
                    + grad.pre_squash_entropy[i];
                d_head[[i, j]] = d_pre;
                d_head[[i, a + j]] = d_log_std * tape.log_std_live[[i, j]];
            }
        }
        d_head
    }

    /// Accumulates trunk parameter gradients for the upstream `grad`.
    pub fn backward(&mut self, tape: PolicyTape, grad: &SampleGrad) -> Result<()> {
        let batch = tape.eps.nrows();
        if grad.actions.dim() != (batch, self.action_dim) || grad.log_prob.len() != batch {
            return Err(Error::shape("policy sample gradient", batch, grad.log_prob.len()));
        }
        let d_head = self.head_grad(&tape, grad);
        self.trunk.backward(tape.trunk, d_head.view())?;
        Ok(())
    }

    /// Squashed mean mapped onto the action box; used for evaluation rollouts.
    pub fn deterministic_action(&self, states: ArrayView2<f64>) -> Result<Array2<f64>> {
        let (mean, _) = self.head(states)?;
        Ok(mean.mapv(f64::tanh) * &self.half_range + &self.center)
    }

    /// Log-density of given bounded actions (strictly inside the box).
    pub fn log_prob_of(&self, states: ArrayView2<f64>, actions: ArrayView2<f64>) -> Result<Array1<f64>> {
        let (mean, log_std) = self.head(states)?;
        if actions.dim() != mean.dim() {
            return Err(Error::shape("actions", format!("{:?}", mean.dim()), format!("{:?}", actions.dim())));
        }
        let mut out = Array1::zeros(actions.nrows());
        Zip::from(&mut out)
            .and(mean.rows())
            .and(log_std.rows())
            .and(actions.rows())
            .for_each(|out, m, ls, act| {
                let mut lp = 0.0;
                for j in 0..self.action_dim {
                    let y = (act[j] - self.center[j]) / self.half_range[j];
                    let u = y.atanh();
                    let z = (u - m[j]) / ls[j].exp();
                    lp += -0.5 * z * z - ls[j] - HALF_LN_2PI - log_one_minus_tanh_sq(u) - self.half_range[j].ln();
                }
                *out = lp;
            });
        Ok(out)
    }

    /// Mean entropy estimate over `n_samples` fresh samples per state.
    pub fn step_entropy_estimate<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<f64>,
        n_samples: usize,
        rng: &mut R,
    ) -> Result<f64> {
        if n_samples == 0 {
            return Err(Error::InvalidArgument("n_samples must be at least 1".into()));
        }
        let mut total = 0.0;
        for _ in 0..n_samples {
            let (s, _) = self.sample(states, rng)?;
            total += s.entropy(self.entropy_mode).sum();
        }
        Ok(total / (n_samples * states.nrows()) as f64)
    }
}

/// Closed-form entropy of a diagonal Gaussian with the given log-stds.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| 0.5 * (2.0 * PI * std::f64::consts::E).ln() + ls).sum()
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::gradcheck;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(dim: usize, bound: f64) -> EnvSpec {
        EnvSpec {
            state_dim: 2,
            action_dim: dim,
            action_low: vec![-bound; dim],
            action_high: vec![bound; dim],
            max_episode_steps: 10,
            discrete: false,
        }
    }

    fn constant_policy(dim: usize, bound: f64, mean: &[f64], log_std: &[f64], mode: EntropyMode) -> GaussianPolicy {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = GaussianPolicy::new(&spec(dim, bound), &[8], Activation::Tanh, mode, &mut rng).unwrap();
        p.set_constant_head(mean, log_std);
        p
    }

    /// Midpoint-rule expectation of f(u) under N(mean, std^2).
    fn gaussian_expectation(mean: f64, std: f64, f: impl Fn(f64) -> f64) -> f64 {
        let n = 400_000;
        let (lo, hi) = (mean - 12.0 * std, mean + 12.0 * std);
        let du = (hi - lo) / n as f64;
        (0..n)
            .map(|k| {
                let u = lo + (k as f64 + 0.5) * du;
                let z = (u - mean) / std;
                (-0.5 * z * z).exp() / (std * (2.0 * PI).sqrt()) * f(u) * du
            })
            .sum()
    }

    #[test]
    fn zero_noise_limit_is_squashed_mean() {
        let p = constant_policy(1, 2.0, &[0.3], &[-25.0], EntropyMode::Sampled);
        let states = array![[0.1, 0.2]];
        let (s, _) = p.sample_with_noise(states.view(), array![[0.0]]).unwrap();
        assert_eq!(s.actions[[0, 0]], 2.0 * 0.3f64.tanh());
        assert_eq!(p.deterministic_action(states.view()).unwrap()[[0, 0]], s.actions[[0, 0]]);
    }

    #[test]
    fn standard_normal_mode_log_prob() {
        let p = constant_policy(1, 1.0, &[0.0], &[0.0], EntropyMode::Sampled);
        let (s, _) = p.sample_with_noise(array![[0.0, 0.0]].view(), array![[0.0]]).unwrap();
        assert!((s.log_prob[0] + 0.918_938_533_204_672_7).abs() < 1e-12);
        assert!(log_one_minus_tanh_sq(0.0).abs() < 1e-15);
    }

    #[test]
    fn deterministic_action_limits() {
        let p = constant_policy(1, 2.0, &[0.0], &[0.0], EntropyMode::Sampled);
        assert_eq!(p.deterministic_action(array![[1.0, 1.0]].view()).unwrap()[[0, 0]], 0.0);
        let p = constant_policy(1, 2.0, &[1e3], &[0.0], EntropyMode::Sampled);
        assert_eq!(p.deterministic_action(array![[1.0, 1.0]].view()).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn closed_form_entropy_values() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let states = array![[0.0, 0.0], [1.0, -1.0]];
        let p1 = constant_policy(1, 1.0, &[0.0], &[0.0], EntropyMode::ClosedForm);
        let h1 = p1.step_entropy_estimate(states.view(), 3, &mut rng).unwrap();
        assert!((h1 - 1.418_938_533_204_672_7).abs() < 1e-12);
        let p2 = constant_policy(2, 1.0, &[0.0, 0.0], &[0.0, 0.0], EntropyMode::ClosedForm);
        let h2 = p2.step_entropy_estimate(states.view(), 1, &mut rng).unwrap();
        assert!((h2 - 2.837_877_066_409_345_5).abs() < 1e-12);
        assert!((gaussian_entropy(&[0.0]) - h1).abs() < 1e-15);
        assert!(p1.step_entropy_estimate(states.view(), 0, &mut rng).is_err());
    }

    #[test]
    fn sampled_entropy_matches_quadrature() {
        let (mean, log_std, bound) = (0.4, -0.3, 2.0);
        let p = constant_policy(1, bound, &[mean], &[log_std], EntropyMode::Sampled);
        let std = f64::exp(log_std);
        // E[-log pi] = H_gauss + E[log(1 - tanh^2 u)] + log h
        let expected = gaussian_entropy(&[log_std]) + gaussian_expectation(mean, std, log_one_minus_tanh_sq) + bound.ln();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 1_000_000;
        let states = Array2::zeros((n, 2));
        let (s, _) = p.sample(states.view(), &mut rng).unwrap();
        let h = s.log_prob.mapv(|l| -l);
        let m = h.mean().unwrap();
        let se = h.std(1.0) / (n as f64).sqrt();
        assert!((m - expected).abs() < 3.0 * se, "mc {m} vs {expected} (se {se})");
    }

    #[test]
    fn density_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..5 {
            let mean = rng.random_range(-1.0..1.0);
            let log_std = rng.random_range(-1.0..0.5);
            let p = constant_policy(1, 2.0, &[mean], &[log_std], EntropyMode::Sampled);
            let n = 200_000;
            let da = 4.0 / n as f64;
            let actions = Array2::from_shape_fn((n, 1), |(k, _)| -2.0 + (k as f64 + 0.5) * da);
            let states = Array2::zeros((n, 2));
            let lp = p.log_prob_of(states.view(), actions.view()).unwrap();
            let mass: f64 = lp.iter().map(|l| l.exp() * da).sum();
            assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
        }
    }

    #[test]
    fn log_prob_of_agrees_with_sample() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = GaussianPolicy::new(&spec(2, 1.5), &[16, 16], Activation::Silu, EntropyMode::Sampled, &mut rng).unwrap();
        let states = Array2::from_shape_fn((6, 2), |(i, j)| (i as f64 * 0.7 - j as f64).sin());
        let (s, _) = p.sample(states.view(), &mut rng).unwrap();
        let lp = p.log_prob_of(states.view(), s.actions.view()).unwrap();
        for (a, b) in lp.iter().zip(s.log_prob.iter()) {
            assert!((a - b).abs() < 1e-7, "{a} vs {b}");
        }
    }

    #[test]
    fn entropy_estimates_agree_across_seeds() {
        let p = constant_policy(1, 2.0, &[0.5], &[-0.5], EntropyMode::Sampled);
        let n = 100_000;
        let states = Array2::zeros((n, 2));
        let est = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (s, _) = p.sample(states.view(), &mut rng).unwrap();
            let h = s.log_prob.mapv(|l| -l);
            (h.mean().unwrap(), h.std(1.0) / (n as f64).sqrt())
        };
        let (a, sa) = est(10);
        let (b, sb) = est(11);
        assert!((a - b).abs() < 5.0 * (sa * sa + sb * sb).sqrt());
    }

    #[test]
    fn nonfinite_trunk_output_is_an_error() {
        let mut p = constant_policy(1, 1.0, &[0.0], &[0.0], EntropyMode::Sampled);
        p.trunk_mut().bias_mut(1)[[0, 0]] = f64::NAN;
        assert!(matches!(
            p.sample_with_noise(array![[0.0, 0.0]].view(), array![[0.1]]),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn sample_gradients_match_finite_differences() {
        for mode in [EntropyMode::Sampled, EntropyMode::ClosedForm] {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            let mut p = GaussianPolicy::new(&spec(2, 2.0), &[12, 12], Activation::Tanh, mode, &mut rng).unwrap();
            let states = Array2::from_shape_fn((5, 2), |(i, j)| ((i * 3 + j) as f64 * 0.41).cos());
            let noise = p.draw_noise(5, &mut rng);
            let coef = Array2::from_shape_fn((5, 2), |(i, j)| ((i + 2 * j) as f64 * 0.77).sin());
            let loss = |p: &GaussianPolicy| {
                let (s, _) = p.sample_with_noise(states.view(), noise.clone()).unwrap();
                (&s.actions * &coef).sum() + s.entropy(mode).mean().unwrap() * 0.7 + s.log_prob.mean().unwrap()
            };
            let (s, tape) = p.sample_with_noise(states.view(), noise.clone()).unwrap();
            let mut g = SampleGrad::zeros(5, 2);
            g.actions = coef.clone();
            g.log_prob.fill(1.0 / 5.0);
            g.add_entropy(mode, Array1::from_elem(5, 0.7 / 5.0).view());
            p.backward(tape, &g).unwrap();
            let analytic = p.trunk().store().flat_grads();
            assert_eq!(s.batch_size(), 5);
            let report = gradcheck::check(&mut p, |p| p.trunk_mut().store_mut(), &analytic, 1e-5, loss);
            assert!(report.max_rel_error <= 1e-4, "{mode:?} {report:?}");
        }
    }
}
