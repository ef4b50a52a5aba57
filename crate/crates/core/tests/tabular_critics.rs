//! Critic targets driven on finite MDPs through networks that reproduce a
//! table exactly, compared with the linear-solve values.

use nalgebra::{DMatrix, DVector};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tecrl::autodiff::{Activation, Mlp};
use tecrl::batch::Batch;
use tecrl::critics::{cumulative_entropy_of, evaluate, pev_target, pis_loss, pis_target, CriticPair};
use tecrl::env::{Dynamics, MdpSpec, TabularEnv};
use tecrl::policy::{ActionSample, EntropyMode};
use tecrl::verify::{exact_qe, exact_qr, start_average, trajectory_entropy, QTable, TabularPolicy};

const HIDDEN: usize = 32;

struct Setup {
    mdp: MdpSpec,
    pi: TabularPolicy,
    critics: CriticPair,
}

fn action_value(a: usize, n_actions: usize) -> f64 {
    -1.0 + (2 * a + 1) as f64 / n_actions as f64
}

fn one_hot(s: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    v[s] = 1.0;
    v
}

/// Random MDP whose last state is terminal.
fn mdp_with_terminal(n_states: usize, n_actions: usize, gamma: f64, rng: &mut ChaCha8Rng) -> MdpSpec {
    let base = MdpSpec::random(n_states, n_actions, gamma, rng).unwrap();
    let mut p = Vec::new();
    let mut r = Vec::new();
    for s in 0..n_states {
        for a in 0..n_actions {
            p.extend_from_slice(base.next_distribution(s, a));
            r.push(base.reward(s, a));
        }
    }
    let mut terminal = vec![false; n_states];
    terminal[n_states - 1] = true;
    MdpSpec::new(n_states, n_actions, p, r, gamma, terminal).unwrap()
}

fn setup(seed: u64) -> Setup {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mdp = mdp_with_terminal(3, 2, 0.9, &mut rng);
    let pi = TabularPolicy::random(3, 2, 1.0, &mut rng);
    let env = TabularEnv::new(mdp.clone(), 100).unwrap();
    let critics = CriticPair::new(env.spec(), &[HIDDEN], Activation::Silu, &mut rng).unwrap();
    Setup { mdp, pi, critics }
}

/// One row per `(s, a)` pair.
fn pair_inputs(mdp: &MdpSpec) -> (Array2<f64>, Array2<f64>) {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut states = Array2::zeros((ns * na, ns));
    let mut actions = Array2::zeros((ns * na, 1));
    for s in 0..ns {
        for a in 0..na {
            states[[s * na + a, s]] = 1.0;
            actions[[s * na + a, 0]] = action_value(a, na);
        }
    }
    (states, actions)
}

/// Solves the output layer so the network returns `table` on every `(s, a)` input.
fn fit(net: &mut Mlp, mdp: &MdpSpec, table: &Array2<f64>) {
    let (states, actions) = pair_inputs(mdp);
    let last = net.n_layers() - 1;
    let h = net.weight(last).nrows();
    let n = states.nrows();
    let mut phi = DMatrix::zeros(n, h + 1);
    *net.bias_mut(last) = Array2::zeros((1, 1));
    for j in 0..h {
        let mut w = Array2::zeros((h, 1));
        w[[j, 0]] = 1.0;
        *net.weight_mut(last) = w;
        let col = evaluate(net, states.view(), actions.view()).unwrap();
        for i in 0..n {
            phi[(i, j)] = col[i];
        }
    }
    for i in 0..n {
        phi[(i, h)] = 1.0;
    }
    let y = DVector::from_iterator(n, table.iter().copied());
    let x = phi.svd(true, true).solve(&y, 1e-14).unwrap();
    *net.weight_mut(last) = Array2::from_shape_fn((h, 1), |(j, _)| x[j]);
    *net.bias_mut(last) = Array2::from_elem((1, 1), x[h]);
    let got = evaluate(net, states.view(), actions.view()).unwrap();
    for (g, t) in got.iter().zip(table.iter()) {
        assert!((g - t).abs() <= 1e-9 * t.abs().max(1.0), "fit {g} vs {t}");
    }
}

/// Every `(s, a, s', a')` with its probability `P(s'|s,a) π(a'|s')`.
fn expansion(mdp: &MdpSpec, pi: &TabularPolicy) -> (Batch, ActionSample, Vec<(usize, f64)>) {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut rows = Vec::new();
    for s in 0..ns {
        for a in 0..na {
            for s2 in 0..ns {
                for a2 in 0..na {
                    rows.push((s, a, s2, a2, mdp.prob(s, a, s2) * pi.prob(s2, a2)));
                }
            }
        }
    }
    let n = rows.len();
    let mut states = Array2::zeros((n, ns));
    let mut next_states = Array2::zeros((n, ns));
    let mut actions = Array2::zeros((n, 1));
    let mut next_actions = Array2::zeros((n, 1));
    let mut rewards = Array1::zeros(n);
    let mut dones = Array1::zeros(n);
    let mut log_prob = Array1::zeros(n);
    let mut weights = Vec::with_capacity(n);
    for (i, &(s, a, s2, a2, w)) in rows.iter().enumerate() {
        states[[i, s]] = 1.0;
        next_states[[i, s2]] = 1.0;
        actions[[i, 0]] = action_value(a, na);
        next_actions[[i, 0]] = action_value(a2, na);
        rewards[i] = mdp.reward(s, a);
        dones[i] = if mdp.is_terminal(s2) { 1.0 } else { 0.0 };
        // zero-probability actions never contribute; keep the sample finite
        log_prob[i] = if pi.prob(s2, a2) > 0.0 { pi.prob(s2, a2).ln() } else { 0.0 };
        weights.push((s * na + a, w));
    }
    let batch = Batch {
        states,
        actions,
        rewards,
        next_states,
        dones,
    };
    let sample = ActionSample {
        actions: next_actions,
        log_prob,
        pre_squash_entropy: Array1::zeros(n),
    };
    (batch, sample, weights)
}

fn expected(y: &Array1<f64>, weights: &[(usize, f64)], mdp: &MdpSpec) -> Array2<f64> {
    let mut t = Array2::zeros((mdp.n_states(), mdp.n_actions()));
    let na = mdp.n_actions();
    for (&yi, &(k, w)) in y.iter().zip(weights) {
        t[[k / na, k % na]] += w * yi;
    }
    t
}

fn sup_gap(table: &Array2<f64>, q: &QTable) -> f64 {
    let mut worst: f64 = 0.0;
    for ((s, a), &v) in table.indexed_iter() {
        worst = worst.max((v - q.get(s, a)).abs());
    }
    worst
}

#[test]
fn reward_target_iteration_reaches_linear_solve() {
    for seed in 0..5 {
        let Setup { mdp, pi, mut critics } = setup(seed);
        let (batch, next, weights) = expansion(&mdp, &pi);
        let exact = exact_qr(&mdp, &pi).unwrap();
        let mut q = Array2::<f64>::zeros((3, 2));
        for _ in 0..400 {
            fit(&mut critics.reward_target[0], &mdp, &q);
            // second twin sits above the first, so the min always picks twin 0
            fit(&mut critics.reward_target[1], &mdp, &q.mapv(|x| x + 0.5));
            q = expected(&pev_target(&batch, &next, &critics, mdp.gamma()).unwrap(), &weights, &mdp);
        }
        let gap = sup_gap(&q, &exact);
        assert!(gap <= 1e-6, "seed {seed}: gap {gap:e}");
    }
}

#[test]
fn entropy_target_iteration_reaches_linear_solve() {
    for seed in 0..5 {
        let Setup { mdp, pi, mut critics } = setup(100 + seed);
        let (batch, next, weights) = expansion(&mdp, &pi);
        let (states, actions) = pair_inputs(&mdp);
        let pairs = Batch {
            states: states.clone(),
            actions: actions.clone(),
            rewards: Array1::zeros(states.nrows()),
            next_states: states.clone(),
            dones: Array1::zeros(states.nrows()),
        };
        let exact = exact_qe(&mdp, &pi).unwrap();
        let mut q = Array2::<f64>::zeros((3, 2));
        for _ in 0..400 {
            fit(&mut critics.entropy_target, &mdp, &q);
            q = expected(
                &pis_target(&batch, &next, &critics, mdp.gamma(), EntropyMode::Sampled).unwrap(),
                &weights,
                &mdp,
            );
            // the online critic regresses onto the new table with zero loss
            fit(&mut critics.entropy, &mdp, &q);
            let y = Array1::from_iter(q.iter().copied());
            let loss = pis_loss(&pairs, &mut critics, y.view()).unwrap();
            assert!(loss <= 1e-16 * (1.0 + y.iter().map(|v| v * v).sum::<f64>()), "loss {loss:e}");
        }
        let gap = sup_gap(&q, &exact);
        assert!(gap <= 1e-4, "seed {seed}: gap {gap:e}");
    }
}

#[test]
fn deterministic_policy_has_zero_entropy_targets() {
    let Setup { mdp, mut critics, .. } = setup(7);
    let pi = TabularPolicy::deterministic(&[1, 0, 1], 2).unwrap();
    let (batch, next, weights) = expansion(&mdp, &pi);
    let mut q = Array2::<f64>::zeros((3, 2));
    for _ in 0..20 {
        fit(&mut critics.entropy_target, &mdp, &q);
        q = expected(
            &pis_target(&batch, &next, &critics, mdp.gamma(), EntropyMode::Sampled).unwrap(),
            &weights,
            &mdp,
        );
    }
    assert!(q.iter().all(|v| v.abs() <= 1e-9), "{q:?}");
}

#[test]
fn cumulative_entropy_estimate_matches_trajectory_entropy() {
    let Setup { mdp, pi, mut critics } = setup(42);
    let qe = exact_qe(&mdp, &pi).unwrap();
    let table = Array2::from_shape_fn((3, 2), |(s, a)| qe.get(s, a));
    fit(&mut critics.entropy, &mdp, &table);
    let target = start_average(&mdp, &trajectory_entropy(&mdp, &pi).unwrap());

    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let start = mdp.start_distribution();
    let draw = |probs: &[f64], rng: &mut ChaCha8Rng| {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (i, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return i;
            }
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap()
    };
    let mut states = Array2::zeros((n, 3));
    let mut actions = Array2::zeros((n, 1));
    let mut log_prob = Array1::zeros(n);
    for i in 0..n {
        let s = draw(&start, &mut rng);
        let a = draw(pi.probs().row(s).as_slice().unwrap(), &mut rng);
        states.row_mut(i).assign(&Array1::from(one_hot(s, 3)));
        actions[[i, 0]] = action_value(a, 2);
        log_prob[i] = pi.prob(s, a).ln();
    }
    let sample = ActionSample {
        actions,
        log_prob,
        pre_squash_entropy: Array1::zeros(n),
    };
    let est = cumulative_entropy_of(&critics, states.view(), &sample, EntropyMode::Sampled).unwrap();
    let mean = est.mean().unwrap();
    let se = est.std(1.0) / (n as f64).sqrt();
    assert!((mean - target).abs() <= 3.0 * se, "mean {mean}, exact {target}, se {se}");
}
