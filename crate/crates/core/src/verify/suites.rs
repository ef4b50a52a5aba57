//! Randomized property suites over the exact solvers.

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::*;

pub const SUITES: [&str; 5] = ["contraction", "fixed-point", "oracle-equivalence", "bound", "all"];

/// One checked property: how many trials ran, how many violated it, and the
/// worst observed value of its margin (`worst` is compared against `tolerance`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PropertyRecord {
    pub name: String,
    pub trials: usize,
    pub failures: usize,
    pub worst: f64,
    pub tolerance: f64,
}

impl PropertyRecord {
    fn new(name: impl Into<String>, tolerance: f64, init: f64) -> Self {
        Self {
            name: name.into(),
            trials: 0,
            failures: 0,
            worst: init,
            tolerance,
        }
    }

    /// Records a margin where larger is worse.
    fn upper(&mut self, value: f64) {
        self.trials += 1;
        if !(value <= self.tolerance) {
            self.failures += 1;
        }
        if value > self.worst || value.is_nan() {
            self.worst = value;
        }
    }

    /// Records a margin where smaller is worse.
    fn lower(&mut self, value: f64) {
        self.trials += 1;
        if !(value >= self.tolerance) {
            self.failures += 1;
        }
        if value < self.worst || value.is_nan() {
            self.worst = value;
        }
    }

    fn error(&mut self) {
        self.trials += 1;
        self.failures += 1;
        self.worst = f64::NAN;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub suite: String,
    pub seed: u64,
    pub passed: bool,
    pub records: Vec<PropertyRecord>,
    pub summary: String,
}

/// Runs `name` (one of [`SUITES`]).
pub fn run_suite(name: &str, seed: u64) -> Result<VerifyReport> {
    let records = match name {
        "contraction" => contraction(seed),
        "fixed-point" => fixed_point(seed),
        "oracle-equivalence" => oracle_equivalence(seed),
        "bound" => bound(seed),
        "all" => {
            let mut all = contraction(seed);
            all.extend(fixed_point(seed));
            all.extend(oracle_equivalence(seed));
            all.extend(bound(seed));
            all
        }
        other => {
            return Err(Error::Config(format!(
                "unknown verification suite `{other}`; valid suites: {}",
                SUITES.join(", ")
            )))
        }
    };
    let failed = records.iter().filter(|r| r.failures > 0).count();
    let trials: usize = records.iter().map(|r| r.trials).sum();
    Ok(VerifyReport {
        suite: name.to_string(),
        seed,
        passed: failed == 0,
        summary: format!(
            "{} properties, {} trials, {} failing properties",
            records.len(),
            trials,
            failed
        ),
        records,
    })
}

fn suite_rng(seed: u64, salt: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(salt);
    rng
}

const GAMMAS: [f64; 3] = [0.5, 0.9, 0.99];

/// Random MDP with at most 10 states and 5 actions, and a policy that is
/// sometimes deterministic.
pub(crate) fn random_instance(rng: &mut ChaCha8Rng, gamma: f64, max_states: usize, max_actions: usize) -> (MdpSpec, TabularPolicy) {
    let ns = rng.random_range(1..=max_states);
    let na = rng.random_range(1..=max_actions);
    let mdp = MdpSpec::random(ns, na, gamma, rng).expect("valid random MDP");
    let policy = if rng.random_bool(0.1) {
        let acts: Vec<usize> = (0..ns).map(|_| rng.random_range(0..na)).collect();
        TabularPolicy::deterministic(&acts, na).expect("in range")
    } else {
        TabularPolicy::random(ns, na, rng.random_range(0.2..2.0), rng)
    };
    (mdp, policy)
}

fn random_q(rng: &mut ChaCha8Rng, ns: usize, na: usize, scale: f64) -> QTable {
    QTable::new(Array2::from_shape_simple_fn((ns, na), || rng.random_range(-scale..scale))).expect("finite")
}

fn contraction(seed: u64) -> Vec<PropertyRecord> {
    let mut out = Vec::new();
    for (k, &g) in GAMMAS.iter().enumerate() {
        let mut rng = suite_rng(seed, 100 + k as u64);
        let mut rec = PropertyRecord::new(format!("contraction/gamma={g}"), 1e-12, f64::NEG_INFINITY);
        let mut shift = PropertyRecord::new(format!("contraction-shift-equality/gamma={g}"), 1e-12, 0.0);
        for _ in 0..1000 {
            let (mdp, pol) = random_instance(&mut rng, g, 10, 5);
            let scale = 10f64.powf(rng.random_range(-2.0..3.0));
            let q1 = random_q(&mut rng, mdp.n_states(), mdp.n_actions(), scale);
            let q2 = random_q(&mut rng, mdp.n_states(), mdp.n_actions(), scale);
            match contraction_check(&mdp, &pol, &q1, &q2) {
                Ok(c) => rec.upper(c.lhs - c.rhs),
                Err(_) => rec.error(),
            }
            let c = rng.random_range(-scale..scale);
            let q3 = QTable::new(q1.values.mapv(|x| x + c)).expect("finite");
            match contraction_check(&mdp, &pol, &q1, &q3) {
                Ok(r) => shift.upper((r.lhs - g * c.abs()).abs() / 1.0f64.max(scale)),
                Err(_) => shift.error(),
            }
        }
        out.push(rec);
        out.push(shift);
    }
    out
}

fn fixed_point(seed: u64) -> Vec<PropertyRecord> {
    let mut rng = suite_rng(seed, 200);
    let mut rate = PropertyRecord::new("fixed-point/error-ratio-minus-gamma", 1e-10, f64::NEG_INFINITY);
    for trial in 0..50 {
        let g = GAMMAS[trial % 3];
        let (mdp, pol) = random_instance(&mut rng, g, 10, 5);
        let Ok(star) = exact_qe(&mdp, &pol) else {
            rate.error();
            continue;
        };
        // below this error, f64 rounding of Q* alone can move the ratio by 1e-10
        let floor = 1e-4 * 1.0f64.max(star.sup_norm());
        let mut q = random_q(&mut rng, mdp.n_states(), mdp.n_actions(), 1e3);
        let mut err = q.sup_distance(&star);
        let mut worst = f64::NEG_INFINITY;
        while err > floor {
            q = entropy_bellman_apply(&mdp, &pol, &q).expect("shapes");
            let next = q.sup_distance(&star);
            worst = worst.max(next / err - g);
            err = next;
        }
        rate.upper(worst);
    }

    let mut fixed = PropertyRecord::new("fixed-point/apply-exact-residual", 1e-10, 0.0);
    let mut decomposition = PropertyRecord::new("fixed-point/trajectory-decomposition", 1e-9, 0.0);
    let mut permutation = PropertyRecord::new("fixed-point/state-permutation", 1e-9, 0.0);
    for trial in 0..100 {
        let g = GAMMAS[trial % 3];
        let (mdp, pol) = random_instance(&mut rng, g, 10, 5);
        let (Ok(qe), Ok(h)) = (exact_qe(&mdp, &pol), state_entropy(&mdp, &pol)) else {
            fixed.error();
            decomposition.error();
            continue;
        };
        let scale = 1.0f64.max(qe.sup_norm());
        match entropy_bellman_apply(&mdp, &pol, &qe) {
            Ok(b) => fixed.upper(b.sup_distance(&qe) / scale),
            Err(_) => fixed.error(),
        }
        decomposition.upper(decomposition_gap(&mdp, &pol, &h, &qe) / 1.0f64.max(h.iter().fold(0.0, |m, x| m.max(x.abs()))));
        if trial < 20 {
            match permuted_qe(&mdp, &pol, &mut rng) {
                Ok(p) => permutation.upper(p.sup_distance(&qe) / scale),
                Err(_) => permutation.error(),
            }
        }
    }
    vec![rate, fixed, decomposition, permutation]
}

/// Trajectory entropy by its own linear solve, without the built-in cross-check.
fn state_entropy(mdp: &MdpSpec, pol: &TabularPolicy) -> Result<Array1<f64>> {
    state_value(mdp, pol, pol.entropy().as_slice().expect("contiguous"), "trajectory entropy")
}

/// Solves on a randomly relabelled copy of the MDP and maps the answer back.
fn permuted_qe(mdp: &MdpSpec, pol: &TabularPolicy, rng: &mut ChaCha8Rng) -> Result<QTable> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut perm: Vec<usize> = (0..ns).collect();
    for i in (1..ns).rev() {
        perm.swap(i, rng.random_range(0..=i));
    }
    // new label of old state s is perm[s]
    let mut p = vec![0.0; ns * na * ns];
    let mut r = vec![0.0; ns * na];
    let mut probs = Array2::zeros((ns, na));
    for s in 0..ns {
        for a in 0..na {
            r[perm[s] * na + a] = mdp.reward(s, a);
            probs[[perm[s], a]] = pol.prob(s, a);
            for s2 in 0..ns {
                p[(perm[s] * na + a) * ns + perm[s2]] = mdp.prob(s, a, s2);
            }
        }
    }
    let mut terminal = vec![false; ns];
    for s in 0..ns {
        terminal[perm[s]] = mdp.is_terminal(s);
    }
    let relabelled = MdpSpec::new(ns, na, p, r, mdp.gamma(), terminal)?;
    let q = exact_qe(&relabelled, &TabularPolicy::new(probs)?)?;
    QTable::new(Array2::from_shape_fn((ns, na), |(s, a)| q.get(perm[s], a)))
}

fn oracle_equivalence(seed: u64) -> Vec<PropertyRecord> {
    let mut rng = suite_rng(seed, 300);
    let mut rec = PropertyRecord::new("oracle-equivalence/exact-vs-truncated", 1e-6, 0.0);
    let mut monotone = PropertyRecord::new("oracle-equivalence/truncation-error-increase", 1e-12, f64::NEG_INFINITY);
    for trial in 0..100 {
        let g = GAMMAS[trial % 3];
        let (mdp, pol) = random_instance(&mut rng, g, 10, 5);
        let h_max = pol.entropy().iter().cloned().fold(0.0, f64::max);
        let t = horizon_for(g, h_max, 1e-8);
        match (exact_qe(&mdp, &pol), brute_force_qe(&mdp, &pol, t)) {
            (Ok(a), Ok(b)) => rec.upper(a.sup_distance(&b)),
            _ => rec.error(),
        }
        if trial < 20 {
            let exact = exact_qe(&mdp, &pol).expect("solved above");
            let errs: Vec<f64> = [1, 2, 4, 8, 16, 32]
                .iter()
                .map(|&t| brute_force_qe(&mdp, &pol, t).expect("valid").sup_distance(&exact))
                .collect();
            let worst = errs.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            monotone.upper(worst);
        }
    }
    vec![rec, monotone]
}

/// Shared by the suite and the acceptance sweep.
pub(crate) fn bound_instances(seed: u64) -> Vec<(MdpSpec, f64)> {
    let mut rng = suite_rng(seed, 400);
    (0..20)
        .map(|_| {
            let g = [0.5, 0.9, 0.95][rng.random_range(0..3)];
            let ns = rng.random_range(2..=6);
            let na = rng.random_range(2..=4);
            let mdp = MdpSpec::random(ns, na, g, &mut rng).expect("valid");
            let alpha_star = 10f64.powf(rng.random_range(-2.0..1.0));
            (mdp, alpha_star)
        })
        .collect()
}

/// Fractions of the way from the minimum feasible entropy up to `H*`.
pub const BUDGET_FRACTIONS: [f64; 5] = [0.2, 0.4, 0.6, 0.8, 1.0];

fn bound(seed: u64) -> Vec<PropertyRecord> {
    let mut slack = PropertyRecord::new("bound/min-slack", -1e-8, f64::INFINITY);
    let mut equal = PropertyRecord::new("bound/slack-at-soft-entropy", 1e-8, 0.0);
    let mut monotone = PropertyRecord::new("bound/rhs-decrease-as-budget-falls", 0.0, f64::NEG_INFINITY);
    for (mdp, alpha_star) in bound_instances(seed) {
        let (probes, soft) = match (probe_entropy(&mdp), soft_optimal_solve(&mdp, alpha_star)) {
            (Ok(p), Ok(s)) => (p, s),
            _ => {
                for _ in BUDGET_FRACTIONS {
                    slack.error();
                }
                continue;
            }
        };
        let low = probes[0].1.entropy;
        let mut last_rhs = f64::NEG_INFINITY;
        let mut worst_increase = f64::NEG_INFINITY;
        for f in BUDGET_FRACTIONS.iter().rev() {
            let h = if *f == 1.0 { soft.entropy } else { low + f * (soft.entropy - low) };
            let report = tec_optimal_solve_probed(&mdp, h, &probes).and_then(|t| bound_from(&soft, alpha_star, &t, h));
            match report {
                Ok(r) => {
                    slack.lower(r.slack);
                    if *f == 1.0 {
                        equal.upper(r.slack.abs());
                    }
                    // rhs must not fall as the budget falls
                    worst_increase = worst_increase.max(last_rhs - r.rhs);
                    last_rhs = r.rhs;
                }
                Err(_) => slack.error(),
            }
        }
        monotone.upper(worst_increase);
    }
    vec![slack, equal, monotone]
}
