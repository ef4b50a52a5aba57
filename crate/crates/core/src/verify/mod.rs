//! Exact solvers for finite MDPs: entropy critic, trajectory entropy, soft
//! optimality, entropy-constrained optimality and the return bound relating them.
//!
//! Values are zero at terminal states; a transition into a terminal state
//! contributes neither reward nor entropy afterwards.

mod suites;

pub use suites::{run_suite, PropertyRecord, VerifyReport, SUITES};

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::Serialize;

use crate::env::MdpSpec;
use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;

/// Bounds of the temperature search interval.
pub const ALPHA_RANGE: (f64, f64) = (1e-4, 1e3);
/// Temperatures probed to confirm monotonicity before bisecting.
pub const PROBES: usize = 16;
pub const MAX_BISECTION_STEPS: usize = 60;
/// Cap on soft value iteration sweeps.
pub const MAX_SWEEPS: usize = 200_000;

/// `-sum p log p` with `0 log 0 = 0`.
pub fn entropy_of(p: ArrayView1<f64>) -> f64 {
    -p.iter().filter(|&&x| x > 0.0).map(|&x| x * x.ln()).sum::<f64>()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    probs: Array2<f64>,
    entropy: Array1<f64>,
}

impl TabularPolicy {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.rows().into_iter().enumerate() {
            let sum: f64 = row.sum();
            if row.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidArgument(format!("policy row {s} is not a distribution (sum {sum})")));
            }
        }
        let entropy = probs.rows().into_iter().map(entropy_of).collect();
        Ok(Self { probs, entropy })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self::new(Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64)).expect("uniform rows")
    }

    /// Puts all mass on `actions[s]`.
    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::InvalidArgument(format!("action {a} out of range")));
            }
            probs[[s, a]] = 1.0;
        }
        Self::new(probs)
    }

    /// Rows drawn from Dirichlet(`concentration`).
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, concentration: f64, rng: &mut R) -> Self {
        let gamma = rand_distr::Gamma::new(concentration, 1.0).expect("positive concentration");
        let mut probs = Array2::from_shape_simple_fn((n_states, n_actions), || rng.sample(gamma).max(1e-300));
        for mut row in probs.rows_mut() {
            let s = row.sum();
            row /= s;
        }
        Self::new(probs).expect("normalized rows")
    }

    /// `softmax(q[s, :] / alpha)` per state.
    pub fn softmax(q: &QTable, alpha: f64) -> Self {
        let mut probs = q.values.clone();
        for mut row in probs.rows_mut() {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| ((x - m) / alpha).exp());
            let s = row.sum();
            row /= s;
        }
        let entropy = probs.rows().into_iter().map(entropy_of).collect();
        Self { probs, entropy }
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.probs
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[[s, a]]
    }

    /// Per-state entropy.
    pub fn entropy(&self) -> &Array1<f64> {
        &self.entropy
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Array2<f64>,
}

impl QTable {
    pub fn new(values: Array2<f64>) -> Result<Self> {
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("QTable".into()));
        }
        Ok(Self { values })
    }

    pub fn zeros(n_states: usize, n_actions: usize) -> Self {
        Self {
            values: Array2::zeros((n_states, n_actions)),
        }
    }

    pub fn get(&self, s: usize, a: usize) -> f64 {
        self.values[[s, a]]
    }

    pub fn sup_distance(&self, other: &QTable) -> f64 {
        self.values
            .iter()
            .zip(other.values.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().map(|x| x.abs()).fold(0.0, f64::max)
    }
}

fn check_shapes(mdp: &MdpSpec, policy: &TabularPolicy) -> Result<()> {
    if policy.n_states() != mdp.n_states() || policy.n_actions() != mdp.n_actions() {
        return Err(Error::shape(
            "tabular policy",
            format!("{}x{}", mdp.n_states(), mdp.n_actions()),
            format!("{}x{}", policy.n_states(), policy.n_actions()),
        ));
    }
    Ok(())
}

fn live(mdp: &MdpSpec, s: usize) -> f64 {
    if mdp.is_terminal(s) {
        0.0
    } else {
        1.0
    }
}

/// Solves `A x = b`, refines once, and checks the residual.
fn solve(a: DMatrix<f64>, b: DVector<f64>, what: &str) -> Result<DVector<f64>> {
    let lu = a.clone().lu();
    let mut x = lu
        .solve(&b)
        .ok_or_else(|| Error::Singular(format!("{what}: LU factorization failed")))?;
    let r = &b - &a * &x;
    if let Some(dx) = lu.solve(&r) {
        x += dx;
    }
    let residual = (&b - &a * &x).amax();
    let scale = 1.0f64.max(x.amax());
    if !(residual <= 1e-10 * scale) {
        return Err(Error::Singular(format!("{what}: residual {residual:e}")));
    }
    Ok(x)
}

/// Rows of the `(s, a) -> (s', a')` operator `gamma P(s'|s,a) live(s') pi(a'|s')`.
fn pair_system(mdp: &MdpSpec, policy: &TabularPolicy) -> DMatrix<f64> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let n = ns * na;
    let mut a = DMatrix::identity(n, n);
    for s in 0..ns {
        for act in 0..na {
            let row = s * na + act;
            for (s2, &p) in mdp.next_distribution(s, act).iter().enumerate() {
                let w = g * p * live(mdp, s2);
                if w == 0.0 {
                    continue;
                }
                for a2 in 0..na {
                    a[(row, s2 * na + a2)] -= w * policy.prob(s2, a2);
                }
            }
        }
    }
    a
}

fn to_table(x: &DVector<f64>, ns: usize, na: usize) -> Result<QTable> {
    QTable::new(Array2::from_shape_fn((ns, na), |(s, a)| x[s * na + a]))
}

/// Entropy critic by direct solve of
/// `Q(s,a) = gamma sum_s' P(s'|s,a) [H(s') + sum_a' pi(a'|s') Q(s',a')]`.
pub fn exact_qe(mdp: &MdpSpec, policy: &TabularPolicy) -> Result<QTable> {
    check_shapes(mdp, policy)?;
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let b = DVector::from_fn(ns * na, |i, _| {
        let (s, a) = (i / na, i % na);
        g * mdp
            .next_distribution(s, a)
            .iter()
            .enumerate()
            .map(|(s2, &p)| p * live(mdp, s2) * policy.entropy()[s2])
            .sum::<f64>()
    });
    to_table(&solve(pair_system(mdp, policy), b, "entropy critic")?, ns, na)
}

/// Reward critic `Q(s,a) = r(s,a) + gamma sum P sum pi Q` by direct solve.
pub fn exact_qr(mdp: &MdpSpec, policy: &TabularPolicy) -> Result<QTable> {
    check_shapes(mdp, policy)?;
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let b = DVector::from_fn(ns * na, |i, _| mdp.reward(i / na, i % na));
    to_table(&solve(pair_system(mdp, policy), b, "reward critic")?, ns, na)
}

/// Smallest `T` with `gamma^(T+1) h_max / (1 - gamma) <= tol`.
pub fn horizon_for(gamma: f64, h_max: f64, tol: f64) -> usize {
    if h_max <= 0.0 {
        return 1;
    }
    let t = ((tol * (1.0 - gamma) / h_max).ln() / gamma.ln() - 1.0).ceil();
    t.max(1.0) as usize
}

/// `sum_{t=1..T} gamma^t E[H(s_t)]` by propagating state distributions forward.
pub fn brute_force_qe(mdp: &MdpSpec, policy: &TabularPolicy, horizon: usize) -> Result<QTable> {
    check_shapes(mdp, policy)?;
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    // one-step state kernel under the policy, from live states only
    let kernel = Array2::from_shape_fn((ns, ns), |(s, s2)| {
        live(mdp, s) * (0..na).map(|a| policy.prob(s, a) * mdp.prob(s, a, s2)).sum::<f64>()
    });
    let h_live = Array1::from_shape_fn(ns, |s| live(mdp, s) * policy.entropy()[s]);
    let mut dist = Array2::from_shape_fn((ns * na, ns), |(i, s2)| mdp.prob(i / na, i % na, s2));
    let mut acc = Array1::<f64>::zeros(ns * na);
    let mut discount = g;
    for _ in 0..horizon {
        acc.scaled_add(discount, &dist.dot(&h_live));
        dist = dist.dot(&kernel);
        discount *= g;
    }
    QTable::new(acc.into_shape_with_order((ns, na)).expect("pair layout"))
}

/// One exact application of the entropy Bellman operator.
pub fn entropy_bellman_apply(mdp: &MdpSpec, policy: &TabularPolicy, q: &QTable) -> Result<QTable> {
    check_shapes(mdp, policy)?;
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    if q.values.dim() != (ns, na) {
        return Err(Error::shape("q table", format!("{ns}x{na}"), format!("{:?}", q.values.dim())));
    }
    let next_value: Vec<f64> = (0..ns)
        .map(|s| live(mdp, s) * (policy.entropy()[s] + (0..na).map(|a| policy.prob(s, a) * q.get(s, a)).sum::<f64>()))
        .collect();
    let values = Array2::from_shape_fn((ns, na), |(s, a)| {
        g * mdp
            .next_distribution(s, a)
            .iter()
            .zip(&next_value)
            .map(|(p, v)| p * v)
            .sum::<f64>()
    });
    QTable::new(values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContractionCheck {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// `||B q1 - B q2|| <= gamma ||q1 - q2||` in sup-norm, with 1e-12 slack.
pub fn contraction_check(mdp: &MdpSpec, policy: &TabularPolicy, q1: &QTable, q2: &QTable) -> Result<ContractionCheck> {
    let lhs = entropy_bellman_apply(mdp, policy, q1)?.sup_distance(&entropy_bellman_apply(mdp, policy, q2)?);
    let rhs = mdp.gamma() * q1.sup_distance(q2);
    Ok(ContractionCheck {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12,
    })
}

/// Solves `v(s) = live(s) (c(s) + gamma sum_a pi(a|s) sum_s' P(s'|s,a) v(s'))`.
fn state_value(mdp: &MdpSpec, policy: &TabularPolicy, c: &[f64], what: &str) -> Result<Array1<f64>> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let mut a = DMatrix::identity(ns, ns);
    for s in 0..ns {
        if mdp.is_terminal(s) {
            continue;
        }
        for act in 0..na {
            let pa = policy.prob(s, act);
            for (s2, &p) in mdp.next_distribution(s, act).iter().enumerate() {
                a[(s, s2)] -= g * pa * p;
            }
        }
    }
    let b = DVector::from_fn(ns, |s, _| live(mdp, s) * c[s]);
    let x = solve(a, b, what)?;
    Ok(Array1::from_iter(x.iter().cloned()))
}

/// Largest gap of `h(s) = H(s) + sum_a pi(a|s) Q_e(s,a)` over live states.
pub fn decomposition_gap(mdp: &MdpSpec, policy: &TabularPolicy, h: &Array1<f64>, qe: &QTable) -> f64 {
    (0..mdp.n_states())
        .filter(|&s| !mdp.is_terminal(s))
        .map(|s| {
            let rhs = policy.entropy()[s] + (0..mdp.n_actions()).map(|a| policy.prob(s, a) * qe.get(s, a)).sum::<f64>();
            (h[s] - rhs).abs()
        })
        .fold(0.0, f64::max)
}

/// Discounted trajectory entropy from each state (zero at terminal states),
/// cross-checked against the entropy critic decomposition.
pub fn trajectory_entropy(mdp: &MdpSpec, policy: &TabularPolicy) -> Result<Array1<f64>> {
    check_shapes(mdp, policy)?;
    let h = state_value(mdp, policy, policy.entropy().as_slice().expect("contiguous"), "trajectory entropy")?;
    let qe = exact_qe(mdp, policy)?;
    let gap = decomposition_gap(mdp, policy, &h, &qe);
    let scale = 1.0f64.max(h.iter().map(|x| x.abs()).fold(0.0, f64::max));
    if gap > 1e-9 * scale {
        return Err(Error::Inconsistent(format!(
            "trajectory entropy differs from H + E[Q_e] by {gap:e}"
        )));
    }
    Ok(h)
}

/// Discounted return from each state.
pub fn policy_return(mdp: &MdpSpec, policy: &TabularPolicy) -> Result<Array1<f64>> {
    check_shapes(mdp, policy)?;
    let c: Vec<f64> = (0..mdp.n_states())
        .map(|s| (0..mdp.n_actions()).map(|a| policy.prob(s, a) * mdp.reward(s, a)).sum())
        .collect();
    state_value(mdp, policy, &c, "policy return")
}

/// Expectation of a per-state vector under the start distribution.
pub fn start_average(mdp: &MdpSpec, v: &Array1<f64>) -> f64 {
    mdp.start_distribution().iter().zip(v.iter()).map(|(p, x)| p * x).sum()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SoftSolution {
    pub policy: TabularPolicy,
    pub q: QTable,
    /// Start-averaged discounted return.
    pub ret: f64,
    /// Start-averaged trajectory entropy, counted from the first step.
    pub entropy: f64,
    pub sweeps: usize,
}

fn soft_backup(mdp: &MdpSpec, q: &QTable, alpha: f64) -> Array2<f64> {
    let (ns, na, g) = (mdp.n_states(), mdp.n_actions(), mdp.gamma());
    let v: Vec<f64> = (0..ns)
        .map(|s| {
            if mdp.is_terminal(s) {
                return 0.0;
            }
            let row = q.values.row(s);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            m + alpha * row.iter().map(|&x| ((x - m) / alpha).exp()).sum::<f64>().ln()
        })
        .collect();
    Array2::from_shape_fn((ns, na), |(s, a)| {
        mdp.reward(s, a)
            + g * mdp
                .next_distribution(s, a)
                .iter()
                .zip(&v)
                .map(|(p, x)| p * x)
                .sum::<f64>()
    })
}

/// Soft value iteration from `init` (zeros if `None`).
pub fn soft_optimal_solve_from(mdp: &MdpSpec, alpha: f64, init: Option<&QTable>) -> Result<SoftSolution> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!("alpha must be positive, got {alpha}")));
    }
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut q = init.cloned().unwrap_or_else(|| QTable::zeros(ns, na));
    let mut change = f64::INFINITY;
    for sweep in 1..=MAX_SWEEPS {
        let next = QTable::new(soft_backup(mdp, &q, alpha))?;
        change = next.sup_distance(&q);
        let tol = 1e-12 * 1.0f64.max(next.sup_norm());
        q = next;
        if change <= tol {
            let policy = TabularPolicy::softmax(&q, alpha);
            let ret = start_average(mdp, &policy_return(mdp, &policy)?);
            let entropy = start_average(mdp, &trajectory_entropy(mdp, &policy)?);
            return Ok(SoftSolution {
                policy,
                q,
                ret,
                entropy,
                sweeps: sweep,
            });
        }
    }
    Err(Error::NoConvergence {
        iterations: MAX_SWEEPS,
        residual: change,
    })
}

/// Maximum-entropy optimal policy at temperature `alpha`.
pub fn soft_optimal_solve(mdp: &MdpSpec, alpha: f64) -> Result<SoftSolution> {
    soft_optimal_solve_from(mdp, alpha, None)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TecSolution {
    pub policy: TabularPolicy,
    pub ret: f64,
    pub entropy: f64,
    pub alpha: f64,
    pub steps: usize,
}

/// Log-spaced probe grid over [`ALPHA_RANGE`].
pub fn alpha_probes() -> Vec<f64> {
    let (lo, hi) = (ALPHA_RANGE.0.ln(), ALPHA_RANGE.1.ln());
    (0..PROBES)
        .map(|i| (lo + (hi - lo) * i as f64 / (PROBES - 1) as f64).exp())
        .collect()
}

/// Soft solutions at every probe temperature, after checking that their
/// trajectory entropy does not decrease with alpha.
pub fn probe_entropy(mdp: &MdpSpec) -> Result<Vec<(f64, SoftSolution)>> {
    let mut out: Vec<(f64, SoftSolution)> = Vec::with_capacity(PROBES);
    for a in alpha_probes() {
        let sol = soft_optimal_solve(mdp, a)?;
        if let Some((a_prev, prev)) = out.last() {
            if sol.entropy < prev.entropy - 1e-9 * 1.0f64.max(prev.entropy.abs()) {
                return Err(Error::NotMonotone {
                    a_lo: *a_prev,
                    h_lo: prev.entropy,
                    a_hi: a,
                    h_hi: sol.entropy,
                });
            }
        }
        out.push((a, sol));
    }
    Ok(out)
}

/// Policy maximizing return subject to start-averaged trajectory entropy
/// `h_budget`, found as a soft-optimal policy by bisection on log alpha.
pub fn tec_optimal_solve(mdp: &MdpSpec, h_budget: f64) -> Result<TecSolution> {
    let probes = probe_entropy(mdp)?;
    tec_optimal_solve_probed(mdp, h_budget, &probes)
}

/// As [`tec_optimal_solve`], reusing a probe grid from [`probe_entropy`].
pub fn tec_optimal_solve_probed(mdp: &MdpSpec, h_budget: f64, probes: &[(f64, SoftSolution)]) -> Result<TecSolution> {
    let (first, last) = (&probes[0], &probes[probes.len() - 1]);
    let (low, high) = (first.1.entropy, last.1.entropy);
    let tol = 1e-12 * 1.0f64.max(h_budget.abs());
    let edge = 1e-8 * h_budget.abs().max(1e-4);
    let finish = |sol: &SoftSolution, alpha: f64, steps: usize| TecSolution {
        policy: sol.policy.clone(),
        ret: sol.ret,
        entropy: sol.entropy,
        alpha,
        steps,
    };
    if h_budget < low - edge || h_budget > high + edge || !h_budget.is_finite() {
        return Err(Error::Infeasible {
            budget: h_budget,
            low,
            high,
        });
    }
    if h_budget <= low {
        return Ok(finish(&first.1, first.0, 0));
    }
    if h_budget >= high {
        return Ok(finish(&last.1, last.0, 0));
    }
    // bracketing probe pair
    let k = probes
        .windows(2)
        .position(|w| w[0].1.entropy <= h_budget && h_budget <= w[1].1.entropy)
        .expect("budget inside probed range");
    let (mut lo, mut hi) = (probes[k].0.ln(), probes[k + 1].0.ln());
    let mut best = (f64::INFINITY, probes[k].0, probes[k].1.clone());
    let mut warm = probes[k].1.q.clone();
    for step in 1..=MAX_BISECTION_STEPS {
        let mid = 0.5 * (lo + hi);
        let alpha = mid.exp();
        let sol = soft_optimal_solve_from(mdp, alpha, Some(&warm))?;
        let gap = sol.entropy - h_budget;
        if gap.abs() < best.0 {
            best = (gap.abs(), alpha, sol.clone());
        }
        if gap.abs() <= tol || hi - lo <= f64::EPSILON * mid.abs().max(1.0) {
            return Ok(finish(&best.2, best.1, step));
        }
        if gap > 0.0 {
            hi = mid;
        } else {
            lo = mid;
        }
        warm = sol.q;
    }
    if best.0 <= 1e-8 * h_budget.abs().max(1e-4) {
        return Ok(finish(&best.2, best.1, MAX_BISECTION_STEPS));
    }
    Err(Error::NoConvergence {
        iterations: MAX_BISECTION_STEPS,
        residual: best.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundReport {
    pub r_tec: f64,
    pub r_maxent_star: f64,
    pub alpha_star: f64,
    pub h_soft_star: f64,
    pub h_budget: f64,
    pub rhs: f64,
    pub slack: f64,
}

/// Evaluates `R_tec <= R*(alpha) + alpha (H*(alpha) - h_budget)`.
pub fn bound_check(mdp: &MdpSpec, alpha_star: f64, h_budget: f64) -> Result<BoundReport> {
    let tec = tec_optimal_solve(mdp, h_budget)?;
    bound_from(&soft_optimal_solve(mdp, alpha_star)?, alpha_star, &tec, h_budget)
}

/// Builds a report from already computed solutions.
pub fn bound_from(soft: &SoftSolution, alpha_star: f64, tec: &TecSolution, h_budget: f64) -> Result<BoundReport> {
    let rhs = soft.ret + alpha_star * (soft.entropy - h_budget);
    let report = BoundReport {
        r_tec: tec.ret,
        r_maxent_star: soft.ret,
        alpha_star,
        h_soft_star: soft.entropy,
        h_budget,
        rhs,
        slack: rhs - tec.ret,
    };
    let fields = [report.r_tec, report.r_maxent_star, report.h_soft_star, report.rhs, report.slack];
    if fields.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("bound report".into()));
    }
    Ok(report)
}
