use ndarray::ArrayView2;
use rand::Rng;

use crate::env::Env;
use crate::error::{Error, Result};
use crate::harness::metrics::mean_std;
use crate::policy::GaussianPolicy;
use crate::seeding::{SeedStreams, Stream};

/// Undiscounted return mean and population std over `n_episodes` episodes of
/// the deterministic policy. Start states come from the evaluation stream of
/// `seed`, so repeated calls see the same episodes.
pub fn evaluate(policy: &GaussianPolicy, env: &mut dyn Env, n_episodes: usize, seed: u64) -> Result<(f64, f64)> {
    if n_episodes == 0 {
        return Err(Error::InvalidArgument("n_episodes must be positive".into()));
    }
    let mut rng = SeedStreams::new(seed).rng(Stream::EvalEnv);
    let mut returns = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        let mut obs = env.reset(rng.random());
        let mut total = 0.0;
        loop {
            let s = ArrayView2::from_shape((1, obs.len()), &obs)
                .map_err(|_| Error::shape("evaluate state", policy.state_dim(), obs.len()))?;
            let action = policy.deterministic_action(s)?.row(0).to_vec();
            let step = env.step(&action)?;
            total += step.transition.reward;
            if step.transition.done || step.truncated {
                break;
            }
            obs = step.transition.next_state;
        }
        returns.push(total);
    }
    Ok(mean_std(&returns))
}
