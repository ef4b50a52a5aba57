use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use tecrl::agent::build_agent;
use tecrl::env::make_env;
use tecrl::harness::checkpoint::Checkpoint;
use tecrl::harness::config::{parse_assignment, parse_seeds, parse_table, RunConfig};
use tecrl::harness::metrics::{final_score, read_csv_file};
use tecrl::harness::run::{run_seeds, run_training, sweep_rho, sweep_table, SWEEP_RHOS};
use tecrl::harness::evaluate;
use tecrl::verify::run_suite;
use tecrl::Error;

#[derive(Parser)]
#[command(name = "tecrl", version, about = "Entropy-constrained actor-critic training and tabular verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one or more seeds and write metrics, checkpoints and scores.
    Train {
        /// TOML config file; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Extra `key=value` settings applied after the file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// `N`, `A..B` (inclusive) or `A,B,C`; overrides the config seed.
        #[arg(long)]
        seeds: Option<String>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long)]
        quiet: bool,
    },
    /// Evaluate a checkpoint with the deterministic policy.
    Eval {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        episodes: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Run a tabular verification suite and print a JSON report.
    Verify {
        /// contraction, fixed-point, oracle-equivalence, bound or all
        suite: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Recompute the final score from metrics CSV files (one per seed).
    Score {
        #[arg(required = true)]
        csv: Vec<PathBuf>,
        #[arg(long)]
        total_iterations: u64,
    },
    /// Train the chain environment for several entropy-budget scales.
    SweepRho {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, default_value = "0..4")]
        seeds: String,
        /// Comma-separated budget scales.
        #[arg(long, value_delimiter = ',', default_values_t = SWEEP_RHOS.to_vec())]
        rhos: Vec<f64>,
        #[arg(long, default_value = "runs/sweep-rho")]
        out: PathBuf,
    },
}

enum Failure {
    Error(Error),
    Verification,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn load_config(path: Option<&Path>, set: &[String], extra: &[(&str, toml::Value)]) -> Result<RunConfig, Error> {
    let mut table = match path {
        Some(p) => parse_table(&std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.to_path_buf(),
            source: e,
        })?)?,
        None => toml::Table::new(),
    };
    for (k, v) in extra {
        table.insert(k.to_string(), v.clone());
    }
    for s in set {
        let (k, v) = parse_assignment(s)?;
        table.insert(k, v);
    }
    RunConfig::from_table(&table)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), Error> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Train {
            config,
            set,
            seeds,
            out,
            quiet,
        } => {
            let cfg = load_config(config.as_deref(), &set, &[])?;
            match seeds.map(|s| parse_seeds(&s)).transpose()? {
                Some(seeds) if seeds.len() > 1 => {
                    let (results, score) = run_seeds(&cfg, &seeds, Some(&out))?;
                    for r in &results {
                        eprintln!("seed {}: {} evaluations", r.seed, r.metrics.len());
                    }
                    print_json(&score)?;
                }
                seeds => {
                    let mut cfg = cfg;
                    if let Some(s) = seeds {
                        cfg.agent.seed = s[0];
                    }
                    let result = run_training(&cfg, &out, &mut |m| {
                        if !quiet {
                            eprintln!(
                                "iter {:>8}  return {:>10.3} ± {:<8.3} alpha {:.4e}  H_cum {:.3}",
                                m.iteration, m.eval_mean_return, m.eval_std_return, m.alpha, m.cumulative_entropy_estimate
                            );
                        }
                    })?;
                    print_json(&result.score)?;
                }
            }
        }
        Command::Eval {
            config,
            set,
            checkpoint,
            episodes,
            seed,
        } => {
            let cfg = load_config(config.as_deref(), &set, &[])?;
            let ck = Checkpoint::load(&checkpoint)?;
            let mut env = make_env(&cfg.env, &cfg.env_overrides)?.env;
            let mut agent = build_agent(&ck.algo, env.spec(), &cfg.agent)?;
            ck.restore(agent.as_mut())?;
            let (mean, std) = evaluate(agent.policy(), env.as_mut(), episodes, seed)?;
            print_json(&serde_json::json!({ "episodes": episodes, "mean": mean, "std": std }))?;
        }
        Command::Verify { suite, seed } => {
            let report = run_suite(&suite, seed)?;
            print_json(&report)?;
            if !report.passed {
                return Err(Failure::Verification);
            }
        }
        Command::Score { csv, total_iterations } => {
            let runs = csv.iter().map(|p| read_csv_file(p)).collect::<Result<Vec<_>, _>>()?;
            print_json(&final_score(&runs, total_iterations)?)?;
        }
        Command::SweepRho {
            config,
            set,
            seeds,
            rhos,
            out,
        } => {
            let cfg = load_config(config.as_deref(), &set, &[("env", toml::Value::String("chain".into()))])?;
            if cfg.env != "chain" {
                return Err(Error::Config(format!("sweep-rho runs on the chain env, got `{}`", cfg.env)).into());
            }
            let rows = sweep_rho(&cfg, &rhos, &parse_seeds(&seeds)?, Some(&out))?;
            print!("{}", sweep_table(&rows));
            for r in &rows {
                eprintln!("rho {:>5}: {:.3} ± {:.3} ({} seeds)", r.rho, r.mean, r.std, r.per_seed.len());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Verification) => ExitCode::from(2),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
