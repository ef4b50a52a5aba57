//! End-to-end training runs: interaction, updates, periodic evaluation and
//! output files.

use std::path::{Path, PathBuf};

use crate::agent::{build_agent, Trainer, UpdateStats};
use crate::env::make_env;
use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::RunConfig;
use crate::harness::eval::evaluate;
use crate::harness::metrics::{final_score, write_csv_file, FinalScore, RunMetrics};

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const SCORE_FILE: &str = "final_score.json";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone)]
pub struct RunResult {
    pub seed: u64,
    pub metrics: Vec<RunMetrics>,
    /// `None` when no evaluation fell inside the final window (e.g. zero iterations).
    pub score: Option<FinalScore>,
    pub checkpoint: Checkpoint,
    /// Smallest temperature seen after any update.
    pub min_alpha: f64,
    pub max_alpha: f64,
}

#[derive(Default)]
struct Accum {
    n: usize,
    pev: f64,
    pis: f64,
    pim: (f64, usize),
    tup: (f64, usize),
    h_cum: (f64, usize),
    step: (f64, usize),
}

fn add(slot: &mut (f64, usize), x: Option<f64>) {
    if let Some(x) = x {
        slot.0 += x;
        slot.1 += 1;
    }
}

fn avg((sum, n): (f64, usize)) -> f64 {
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

impl Accum {
    fn push(&mut self, s: &UpdateStats) {
        self.n += 1;
        self.pev += s.pev_loss;
        self.pis += s.pis_loss;
        add(&mut self.pim, s.pim_loss);
        add(&mut self.tup, s.tup_loss);
        add(&mut self.h_cum, s.h_cum_mean);
        add(&mut self.step, s.step_entropy_mean);
    }
}

/// Runs one configuration in memory; `progress` sees every metrics row as it is produced.
pub fn train(cfg: &RunConfig, progress: &mut dyn FnMut(&RunMetrics)) -> Result<RunResult> {
    cfg.validate()?;
    let a = &cfg.agent;
    let made = make_env(&cfg.env, &cfg.env_overrides)?;
    let mut eval_env = make_env(&cfg.env, &cfg.env_overrides)?.env;
    let spec = made.env.spec().clone();
    let mut agent = build_agent(&cfg.algo, &spec, a)?;
    let mut trainer = Trainer::new(made.env, a)?;

    let mut metrics = Vec::new();
    let mut acc = Accum::default();
    let (mut min_alpha, mut max_alpha) = (agent.alpha(), agent.alpha());
    for i in 0..a.total_iterations {
        let report = trainer.train_iteration(agent.as_mut())?;
        if let Some(s) = &report.update {
            acc.push(s);
            min_alpha = min_alpha.min(s.alpha);
            max_alpha = max_alpha.max(s.alpha);
        }
        if (i + 1) % cfg.eval_interval == 0 {
            let (mean, std) = evaluate(agent.policy(), eval_env.as_mut(), cfg.eval_episodes, a.seed)?;
            let n = if acc.n == 0 { f64::NAN } else { acc.n as f64 };
            let row = RunMetrics {
                iteration: i + 1,
                eval_mean_return: mean,
                eval_std_return: std,
                alpha: agent.alpha(),
                cumulative_entropy_estimate: avg(acc.h_cum),
                step_entropy: avg(acc.step),
                pev_loss: acc.pev / n,
                pis_loss: acc.pis / n,
                pim_loss: avg(acc.pim),
                tup_loss: avg(acc.tup),
            };
            progress(&row);
            metrics.push(row);
            acc = Accum::default();
        }
    }
    let score = final_score(std::slice::from_ref(&metrics), a.total_iterations).ok();
    Ok(RunResult {
        seed: a.seed,
        metrics,
        score,
        checkpoint: Checkpoint::of(agent.as_ref()),
        min_alpha,
        max_alpha,
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Writes metrics, score, effective config and (if enabled) the checkpoint into `dir`.
pub fn write_outputs(cfg: &RunConfig, result: &RunResult, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_csv_file(&dir.join(METRICS_FILE), &result.metrics)?;
    write_json(&dir.join(SCORE_FILE), &result.score)?;
    let cfg_path = dir.join(CONFIG_FILE);
    std::fs::write(&cfg_path, cfg.to_toml_string()).map_err(|e| Error::io(&cfg_path, e))?;
    if cfg.checkpoint {
        result.checkpoint.save(&dir.join(CHECKPOINT_FILE))?;
    }
    Ok(())
}

/// Trains one run and writes its outputs into `out_dir`.
pub fn run_training(cfg: &RunConfig, out_dir: &Path, progress: &mut dyn FnMut(&RunMetrics)) -> Result<RunResult> {
    let result = train(cfg, progress)?;
    write_outputs(cfg, &result, out_dir)?;
    Ok(result)
}

pub fn seed_dir(out_dir: &Path, seed: u64) -> PathBuf {
    out_dir.join(format!("seed-{seed}"))
}

/// Runs one worker thread per seed. Each run writes to `out_dir/seed-<n>` when
/// `out_dir` is given; the cross-seed score goes to `out_dir/final_score.json`.
pub fn run_seeds(cfg: &RunConfig, seeds: &[u64], out_dir: Option<&Path>) -> Result<(Vec<RunResult>, Option<FinalScore>)> {
    if seeds.is_empty() {
        return Err(Error::Config("at least one seed is required".into()));
    }
    cfg.validate()?;
    let results: Vec<Result<RunResult>> = std::thread::scope(|scope| {
        let handles: Vec<_> = seeds
            .iter()
            .map(|&seed| {
                let mut c = cfg.clone();
                c.agent.seed = seed;
                scope.spawn(move || {
                    let r = train(&c, &mut |_| {})?;
                    if let Some(dir) = out_dir {
                        write_outputs(&c, &r, &seed_dir(dir, seed))?;
                    }
                    Ok(r)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|_| Err(Error::InvalidArgument("training thread panicked".into()))))
            .collect()
    });
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    let series: Vec<_> = results.iter().map(|r| r.metrics.clone()).collect();
    let score = final_score(&series, cfg.agent.total_iterations).ok();
    if let Some(dir) = out_dir {
        write_json(&dir.join(SCORE_FILE), &score)?;
    }
    Ok((results, score))
}

pub const SWEEP_RHOS: [f64; 4] = [1.0, 10.0, 20.0, 30.0];
pub const SWEEP_FILE: &str = "sweep_rho.csv";

#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SweepRow {
    pub rho: f64,
    pub mean: f64,
    pub std: f64,
    pub per_seed: Vec<f64>,
}

/// One multi-seed run per `rho`. Runs go to `out_dir/rho-<rho>/seed-<n>` and the
/// table to `out_dir/sweep_rho.csv`.
pub fn sweep_rho(cfg: &RunConfig, rhos: &[f64], seeds: &[u64], out_dir: Option<&Path>) -> Result<Vec<SweepRow>> {
    let mut rows = Vec::with_capacity(rhos.len());
    for &rho in rhos {
        let mut c = cfg.clone();
        c.agent.rho = rho;
        let dir = out_dir.map(|d| d.join(format!("rho-{rho}")));
        let (_, score) = run_seeds(&c, seeds, dir.as_deref())?;
        let score = score.ok_or(Error::EmptyWindow {
            from: 0.9 * c.agent.total_iterations as f64,
            to: c.agent.total_iterations as f64,
        })?;
        rows.push(SweepRow {
            rho,
            mean: score.mean,
            std: score.std,
            per_seed: score.per_seed,
        });
    }
    if let Some(dir) = out_dir {
        let path = dir.join(SWEEP_FILE);
        std::fs::write(&path, sweep_table(&rows)).map_err(|e| Error::io(&path, e))?;
    }
    Ok(rows)
}

/// `rho,mean,std,seeds` CSV text.
pub fn sweep_table(rows: &[SweepRow]) -> String {
    let mut out = String::from("rho,mean,std,seeds\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.rho, r.mean, r.std, r.per_seed.len()));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(algo: &str) -> RunConfig {
        RunConfig::from_toml_str(&format!(
            "algo = \"{algo}\"\nenv = \"pendulum\"\ntotal_iterations = 300\neval_interval = 100\neval_episodes = 2\n\
             batch = 16\nwarm = 50\nbuffer = 1000\nhidden = [8, 8]\nenv_max_episode_steps = 40"
        ))
        .unwrap()
    }

    #[test]
    fn sweep_table_shape() {
        let mut cfg = small("tecrl");
        cfg.env = "chain".into();
        cfg.env_overrides.clear();
        cfg.agent.total_iterations = 100;
        cfg.eval_interval = 50;
        let rows = sweep_rho(&cfg, &SWEEP_RHOS, &[0, 1], None).unwrap();
        assert_eq!(rows.len(), 4);
        assert!(rows.iter().all(|r| r.per_seed.len() == 2 && r.mean.is_finite() && r.std >= 0.0));
        assert_eq!(sweep_table(&rows).lines().count(), 5);
    }

    #[test]
    fn zero_iterations_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small("tecrl");
        cfg.agent.total_iterations = 0;
        let r = run_training(&cfg, dir.path(), &mut |_| {}).unwrap();
        assert!(r.metrics.is_empty() && r.score.is_none());
        let text = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        assert_eq!(text.lines().count(), 2, "{text}");
        assert!(dir.path().join(CHECKPOINT_FILE).exists());
    }

    #[test]
    fn eval_points_align_with_interval() {
        for algo in ["tecrl", "maxent"] {
            let r = train(&small(algo), &mut |_| {}).unwrap();
            let its: Vec<u64> = r.metrics.iter().map(|m| m.iteration).collect();
            assert_eq!(its, vec![100, 200, 300]);
            assert!(r.score.is_some());
            assert!(r.min_alpha > 0.0);
            let last = r.metrics.last().unwrap();
            assert!(last.pev_loss.is_finite() && last.pim_loss.is_finite());
            assert_eq!(last.cumulative_entropy_estimate.is_finite(), algo == "tecrl");
        }
    }

    #[test]
    fn seeds_run_in_parallel_and_match_serial() {
        let cfg = small("tecrl");
        let dir = tempfile::tempdir().unwrap();
        let (rs, score) = run_seeds(&cfg, &[3, 4], Some(dir.path())).unwrap();
        let mut c = cfg.clone();
        c.agent.seed = 4;
        let serial = train(&c, &mut |_| {}).unwrap();
        assert_eq!(rs[1].checkpoint.to_bytes(), serial.checkpoint.to_bytes());
        assert_eq!(score.unwrap().per_seed.len(), 2);
        assert!(seed_dir(dir.path(), 3).join(METRICS_FILE).exists());
        assert!(dir.path().join(SCORE_FILE).exists());
    }
}
