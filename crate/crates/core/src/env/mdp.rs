use rand::Rng;

use crate::error::{Error, Result};

const ROW_TOL: f64 = 1e-12;

/// Finite MDP with transition tensor `P[s][a][s']`, rewards `R[s][a]` and discount.
///
/// Transitions into a terminal state end the episode: nothing is bootstrapped
/// from a terminal state.
#[derive(Debug, Clone, PartialEq)]
pub struct MdpSpec {
    n_states: usize,
    n_actions: usize,
    p: Vec<f64>,
    r: Vec<f64>,
    gamma: f64,
    terminal: Vec<bool>,
    start: Option<Vec<f64>>,
}

impl MdpSpec {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        p: Vec<f64>,
        r: Vec<f64>,
        gamma: f64,
        terminal: Vec<bool>,
    ) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::InvalidArgument("n_states and n_actions must be positive".into()));
        }
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        if p.len() != n_states * n_actions * n_states {
            return Err(Error::shape("MdpSpec::P", n_states * n_actions * n_states, p.len()));
        }
        if r.len() != n_states * n_actions {
            return Err(Error::shape("MdpSpec::R", n_states * n_actions, r.len()));
        }
        if terminal.len() != n_states {
            return Err(Error::shape("MdpSpec::terminal_mask", n_states, terminal.len()));
        }
        if r.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("MdpSpec::R".into()));
        }
        for (i, row) in p.chunks(n_states).enumerate() {
            let sum: f64 = row.iter().sum();
            if row.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
                return Err(Error::InvalidArgument(format!(
                    "P[{}][{}] is not a probability vector (sum {sum})",
                    i / n_actions,
                    i % n_actions
                )));
            }
        }
        if terminal.iter().all(|&t| t) {
            return Err(Error::InvalidArgument("every state is terminal".into()));
        }
        Ok(Self {
            n_states,
            n_actions,
            p,
            r,
            gamma,
            terminal,
            start: None,
        })
    }

    /// Supplies an explicit start-state distribution.
    pub fn with_start(mut self, start: Vec<f64>) -> Result<Self> {
        if start.len() != self.n_states {
            return Err(Error::shape("MdpSpec::start", self.n_states, start.len()));
        }
        let sum: f64 = start.iter().sum();
        if start.iter().any(|&x| !(x >= 0.0)) || (sum - 1.0).abs() > ROW_TOL {
            return Err(Error::InvalidArgument("start distribution must sum to 1".into()));
        }
        self.start = Some(start);
        Ok(self)
    }

    /// Dirichlet(1) transition rows and uniform `[0, 1)` rewards, no terminal states.
    pub fn random<R: Rng + ?Sized>(n_states: usize, n_actions: usize, gamma: f64, rng: &mut R) -> Result<Self> {
        let mut p = Vec::with_capacity(n_states * n_actions * n_states);
        for _ in 0..n_states * n_actions {
            let row: Vec<f64> = (0..n_states).map(|_| -(1.0 - rng.random::<f64>()).ln()).collect();
            let sum: f64 = row.iter().sum();
            p.extend(row.into_iter().map(|x| x / sum));
        }
        let r = (0..n_states * n_actions).map(|_| rng.random::<f64>()).collect();
        Self::new(n_states, n_actions, p, r, gamma, vec![false; n_states])
    }

    /// Deterministic chain: action 0 moves left, action 1 moves right. Moving right
    /// into (or staying at) the far end pays 1; bumping the left wall pays 0.05.
    /// Episodes start at state 0.
    pub fn chain(length: usize, gamma: f64) -> Result<Self> {
        if length < 2 {
            return Err(Error::InvalidArgument("chain length must be at least 2".into()));
        }
        let n = length;
        let mut p = vec![0.0; n * 2 * n];
        let mut r = vec![0.0; n * 2];
        for s in 0..n {
            let left = s.saturating_sub(1);
            let right = (s + 1).min(n - 1);
            p[(s * 2) * n + left] = 1.0;
            p[(s * 2 + 1) * n + right] = 1.0;
            if right == n - 1 {
                r[s * 2 + 1] = 1.0;
            }
        }
        r[0] = 0.05;
        let mut start = vec![0.0; n];
        start[0] = 1.0;
        Self::new(n, 2, p, r, gamma, vec![false; n])?.with_start(start)
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn with_gamma(mut self, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma < 1.0) {
            return Err(Error::InvalidArgument(format!("gamma must lie in (0, 1), got {gamma}")));
        }
        self.gamma = gamma;
        Ok(self)
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        self.p[(s * self.n_actions + a) * self.n_states + next]
    }

    #[inline]
    pub fn next_distribution(&self, s: usize, a: usize) -> &[f64] {
        let start = (s * self.n_actions + a) * self.n_states;
        &self.p[start..start + self.n_states]
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.r[s * self.n_actions + a]
    }

    pub fn is_terminal(&self, s: usize) -> bool {
        self.terminal[s]
    }

    pub fn terminal_mask(&self) -> &[bool] {
        &self.terminal
    }

    /// Explicit start distribution if given, else uniform over non-terminal states.
    pub fn start_distribution(&self) -> Vec<f64> {
        if let Some(start) = &self.start {
            return start.clone();
        }
        let live = self.terminal.iter().filter(|&&t| !t).count() as f64;
        self.terminal
            .iter()
            .map(|&t| if t { 0.0 } else { 1.0 / live })
            .collect()
    }
}
