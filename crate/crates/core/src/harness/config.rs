//! Flat key-value run configuration.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::agent::{AgentConfig, TupSign};
use crate::autodiff::Activation;
use crate::env::{make_env, ENV_NAMES};
use crate::error::{Error, Result};
use crate::policy::EntropyMode;

pub const ALGOS: [&str; 2] = ["tecrl", "maxent"];
pub const PRESETS: [&str; 2] = ["desk", "full"];

/// Every accepted key except the `env_*` override family.
pub const KEYS: [&str; 31] = [
    "preset",
    "algo",
    "env",
    "seed",
    "total_iterations",
    "eval_interval",
    "eval_episodes",
    "gamma",
    "tau",
    "actor_lr",
    "critic_lr",
    "alpha_lr",
    "adam_beta1",
    "adam_beta2",
    "batch",
    "buffer",
    "warm",
    "policy_update_interval",
    "sample_batch_size",
    "reward_scale",
    "rho",
    "h0",
    "hidden",
    "activation",
    "init_alpha",
    "entropy_mode",
    "tup_enabled",
    "tup_sign",
    "zeta",
    "epsilon",
    "checkpoint",
];

/// Prefix for keys forwarded to the environment constructor.
pub const ENV_PREFIX: &str = "env_";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub algo: String,
    pub env: String,
    pub env_overrides: BTreeMap<String, f64>,
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Reserved for distributional critics; recorded only.
    pub zeta: f64,
    /// Reserved for distributional critics; recorded only.
    pub epsilon: f64,
    pub checkpoint: bool,
    pub agent: AgentConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            algo: "tecrl".into(),
            env: "pendulum".into(),
            env_overrides: BTreeMap::new(),
            eval_interval: 2_000,
            eval_episodes: 10,
            zeta: 3.0,
            epsilon: 0.1,
            checkpoint: true,
            agent: AgentConfig::default(),
        }
    }
}

fn valid_keys() -> String {
    let mut v: Vec<&str> = KEYS.to_vec();
    v.sort_unstable();
    format!("{}, {ENV_PREFIX}<name>", v.join(", "))
}

fn as_f64(key: &str, v: &toml::Value) -> Result<f64> {
    match v {
        toml::Value::Integer(i) => Ok(*i as f64),
        toml::Value::Float(f) => Ok(*f),
        other => Err(Error::Config(format!("`{key}` must be a number, got {other}"))),
    }
}

fn as_count(key: &str, v: &toml::Value) -> Result<u64> {
    let x = as_f64(key, v)?;
    if x < 0.0 || x.fract() != 0.0 || x > 9.0e15 {
        return Err(Error::Config(format!("`{key}` must be a non-negative integer, got {x}")));
    }
    Ok(x as u64)
}

fn as_str<'a>(key: &str, v: &'a toml::Value) -> Result<&'a str> {
    v.as_str()
        .ok_or_else(|| Error::Config(format!("`{key}` must be a string, got {v}")))
}

fn as_bool(key: &str, v: &toml::Value) -> Result<bool> {
    v.as_bool()
        .ok_or_else(|| Error::Config(format!("`{key}` must be true or false, got {v}")))
}

fn as_widths(key: &str, v: &toml::Value) -> Result<Vec<usize>> {
    let items = v
        .as_array()
        .ok_or_else(|| Error::Config(format!("`{key}` must be an array of layer widths")))?;
    items.iter().map(|x| as_count(key, x).map(|n| n as usize)).collect()
}

impl RunConfig {
    /// Named preset: `desk` (200k iterations, eval every 2000) or `full`
    /// (1.5M iterations, eval every 15000, 20 environment steps per iteration).
    pub fn preset(name: &str) -> Result<Self> {
        let mut cfg = Self::default();
        match name {
            "desk" => {}
            "full" => {
                cfg.agent.total_iterations = 1_500_000;
                cfg.eval_interval = 15_000;
                cfg.agent.sample_batch_size = 20;
            }
            other => {
                return Err(Error::Config(format!(
                    "unknown preset `{other}`; valid presets: {}",
                    PRESETS.join(", ")
                )))
            }
        }
        Ok(cfg)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        Self::from_table(&parse_table(text)?)
    }

    pub fn from_table(table: &toml::Table) -> Result<Self> {
        let preset = match table.get("preset") {
            Some(v) => as_str("preset", v)?,
            None => "desk",
        };
        let mut cfg = Self::preset(preset)?;
        for (key, value) in table {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    /// Applies one key; `preset` is ignored here (it is applied first).
    pub fn set(&mut self, key: &str, v: &toml::Value) -> Result<()> {
        let a = &mut self.agent;
        match key {
            "preset" => {}
            "algo" => self.algo = as_str(key, v)?.to_string(),
            "env" => self.env = as_str(key, v)?.to_string(),
            "seed" => a.seed = as_count(key, v)?,
            "total_iterations" => a.total_iterations = as_count(key, v)?,
            "eval_interval" => self.eval_interval = as_count(key, v)?,
            "eval_episodes" => self.eval_episodes = as_count(key, v)? as usize,
            "gamma" => a.gamma = as_f64(key, v)?,
            "tau" => a.tau = as_f64(key, v)?,
            "actor_lr" => a.actor_lr = as_f64(key, v)?,
            "critic_lr" => a.critic_lr = as_f64(key, v)?,
            "alpha_lr" => a.alpha_lr = as_f64(key, v)?,
            "adam_beta1" => a.adam_beta1 = as_f64(key, v)?,
            "adam_beta2" => a.adam_beta2 = as_f64(key, v)?,
            "batch" => a.batch_size = as_count(key, v)? as usize,
            "buffer" => a.buffer_capacity = as_count(key, v)? as usize,
            "warm" => a.warm_size = as_count(key, v)? as usize,
            "policy_update_interval" => a.policy_update_interval = as_count(key, v)?,
            "sample_batch_size" => a.sample_batch_size = as_count(key, v)? as usize,
            "reward_scale" => a.reward_scale = as_f64(key, v)?,
            "rho" => a.rho = as_f64(key, v)?,
            "h0" => a.h0 = Some(as_f64(key, v)?),
            "hidden" => a.hidden = as_widths(key, v)?,
            "activation" => a.activation = Activation::parse(as_str(key, v)?)?,
            "init_alpha" => a.init_alpha = as_f64(key, v)?,
            "entropy_mode" => a.entropy_mode = EntropyMode::parse(as_str(key, v)?)?,
            "tup_enabled" => a.tup_enabled = as_bool(key, v)?,
            "tup_sign" => a.tup_sign = TupSign::parse(as_str(key, v)?)?,
            "zeta" => self.zeta = as_f64(key, v)?,
            "epsilon" => self.epsilon = as_f64(key, v)?,
            "checkpoint" => self.checkpoint = as_bool(key, v)?,
            k if k.starts_with(ENV_PREFIX) && k.len() > ENV_PREFIX.len() => {
                self.env_overrides.insert(k[ENV_PREFIX.len()..].to_string(), as_f64(key, v)?);
            }
            other => {
                return Err(Error::UnknownConfigKey {
                    key: other.to_string(),
                    valid: valid_keys(),
                })
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        if !ALGOS.contains(&self.algo.as_str()) {
            return Err(Error::Config(format!(
                "algo must be one of {}, got `{}`",
                ALGOS.join(", "),
                self.algo
            )));
        }
        if !ENV_NAMES.contains(&self.env.as_str()) {
            return Err(Error::UnknownEnv {
                name: self.env.clone(),
                valid: ENV_NAMES.join(", "),
            });
        }
        if self.eval_interval == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("eval_interval and eval_episodes must be positive".into()));
        }
        make_env(&self.env, &self.env_overrides)?;
        self.agent.validate()
    }

    /// Flat TOML text that parses back to `self`.
    pub fn to_toml_string(&self) -> String {
        let a = &self.agent;
        let mut out = String::new();
        let mut line = |k: &str, v: String| {
            out.push_str(k);
            out.push_str(" = ");
            out.push_str(&v);
            out.push('\n');
        };
        let float = |x: f64| {
            let s = format!("{x:?}");
            if s.contains(['.', 'e', 'E']) || s.contains("inf") || s.contains("NaN") {
                s
            } else {
                format!("{s}.0")
            }
        };
        line("algo", format!("{:?}", self.algo));
        line("env", format!("{:?}", self.env));
        line("seed", a.seed.to_string());
        line("total_iterations", a.total_iterations.to_string());
        line("eval_interval", self.eval_interval.to_string());
        line("eval_episodes", self.eval_episodes.to_string());
        line("gamma", float(a.gamma));
        line("tau", float(a.tau));
        line("actor_lr", float(a.actor_lr));
        line("critic_lr", float(a.critic_lr));
        line("alpha_lr", float(a.alpha_lr));
        line("adam_beta1", float(a.adam_beta1));
        line("adam_beta2", float(a.adam_beta2));
        line("batch", a.batch_size.to_string());
        line("buffer", a.buffer_capacity.to_string());
        line("warm", a.warm_size.to_string());
        line("policy_update_interval", a.policy_update_interval.to_string());
        line("sample_batch_size", a.sample_batch_size.to_string());
        line("reward_scale", float(a.reward_scale));
        line("rho", float(a.rho));
        if let Some(h0) = a.h0 {
            line("h0", float(h0));
        }
        line(
            "hidden",
            format!("[{}]", a.hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join(", ")),
        );
        line("activation", format!("{:?}", a.activation.name()));
        line("init_alpha", float(a.init_alpha));
        line("entropy_mode", format!("{:?}", a.entropy_mode.name()));
        line("tup_enabled", a.tup_enabled.to_string());
        line("tup_sign", format!("{:?}", a.tup_sign.name()));
        line("zeta", float(self.zeta));
        line("epsilon", float(self.epsilon));
        line("checkpoint", self.checkpoint.to_string());
        for (k, v) in &self.env_overrides {
            line(&format!("{ENV_PREFIX}{k}"), float(*v));
        }
        out
    }
}

pub fn parse_table(text: &str) -> Result<toml::Table> {
    text.parse()
        .map_err(|e: toml::de::Error| Error::Config(format!("malformed config: {}", e.message())))
}

/// Reads a `key=value` override, with the value in TOML syntax (bare words are
/// taken as strings).
pub fn parse_assignment(text: &str) -> Result<(String, toml::Value)> {
    let (k, v) = text
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override `{text}` must look like key=value")))?;
    let (k, v) = (k.trim(), v.trim());
    let value = match parse_table(&format!("v = {v}")) {
        Ok(mut t) => t.remove("v").expect("parsed key"),
        Err(_) => toml::Value::String(v.to_string()),
    };
    Ok((k.to_string(), value))
}

/// Parses `3`, `0..4` (inclusive), `0..=4` or `1,5,9`.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>> {
    let bad = || Error::Config(format!("cannot parse seeds `{text}`; use `N`, `A..B` or `A,B,C`"));
    let num = |s: &str| s.trim().parse::<u64>().map_err(|_| bad());
    let seeds = if let Some((a, b)) = text.split_once("..") {
        let (a, b) = (num(a)?, num(b.trim_start_matches('='))?);
        if a > b {
            return Err(bad());
        }
        (a..=b).collect()
    } else {
        text.split(',').map(num).collect::<Result<Vec<_>>>()?
    };
    Ok(seeds)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn assignments() {
        let (k, v) = parse_assignment("rho = 20").unwrap();
        assert_eq!((k.as_str(), v), ("rho", toml::Value::Integer(20)));
        let (_, v) = parse_assignment("env=chain").unwrap();
        assert_eq!(v, toml::Value::String("chain".into()));
        let (_, v) = parse_assignment("hidden=[32, 32]").unwrap();
        assert!(v.is_array());
        assert!(parse_assignment("rho").is_err());
    }

    #[test]
    fn seed_lists() {
        assert_eq!(parse_seeds("0..4").unwrap(), vec![0, 1, 2, 3, 4]);
        assert_eq!(parse_seeds("2..=3").unwrap(), vec![2, 3]);
        assert_eq!(parse_seeds("7").unwrap(), vec![7]);
        assert_eq!(parse_seeds("1, 5,9").unwrap(), vec![1, 5, 9]);
        for bad in ["", "a", "4..1", "1,,2"] {
            assert!(parse_seeds(bad).unwrap_err().is_config(), "{bad}");
        }
    }

    #[test]
    fn defaults_mirror_the_table() {
        let c = RunConfig::from_toml_str("").unwrap();
        let a = &c.agent;
        assert_eq!((a.gamma, a.tau, a.actor_lr, a.critic_lr, a.alpha_lr), (0.99, 0.005, 1e-4, 1e-4, 3e-4));
        assert_eq!((a.batch_size, a.buffer_capacity, a.warm_size), (256, 1_000_000, 10_000));
        assert_eq!((a.policy_update_interval, a.reward_scale, a.init_alpha), (2, 0.1, 0.2));
        assert_eq!((a.total_iterations, c.eval_interval, c.eval_episodes), (200_000, 2_000, 10));
        assert_eq!((c.zeta, c.epsilon), (3.0, 0.1));
        assert_eq!(a.hidden, vec![256, 256]);
    }

    #[test]
    fn full_preset_and_overrides() {
        let c = RunConfig::from_toml_str("preset = \"full\"\nrho = 20\nbuffer = 1e6\nenv_max_episode_steps = 50").unwrap();
        assert_eq!(c.agent.total_iterations, 1_500_000);
        assert_eq!(c.eval_interval, 15_000);
        assert_eq!(c.agent.sample_batch_size, 20);
        assert_eq!(c.agent.rho, 20.0);
        assert_eq!(c.agent.buffer_capacity, 1_000_000);
        assert_eq!(c.env_overrides["max_episode_steps"], 50.0);
    }

    #[test]
    fn unknown_key_names_key_and_valid_set() {
        let err = RunConfig::from_toml_str("gama = 0.9").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("`gama`"), "{msg}");
        assert!(msg.contains("gamma") && msg.contains("policy_update_interval"), "{msg}");
        assert!(err.is_config());
    }

    #[test]
    fn bad_values_are_config_errors() {
        for text in [
            "batch = 2.5",
            "gamma = 1.0",
            "algo = \"ppo\"",
            "env = \"cartpole\"",
            "hidden = []",
            "tup_sign = \"up\"",
            "env_length = 3",
            "preset = \"huge\"",
            "gamma = \"high\"",
            "eval_interval = 0",
        ] {
            let err = RunConfig::from_toml_str(text).unwrap_err();
            assert!(err.is_config(), "{text}: {err}");
        }
    }

    #[test]
    fn toml_round_trip() {
        let mut c = RunConfig::from_toml_str("algo = \"maxent\"\nenv = \"chain\"\nenv_length = 6\nh0 = -0.5\nhidden = [32, 16]").unwrap();
        c.agent.tau = 0.25;
        let back = RunConfig::from_toml_str(&c.to_toml_string()).unwrap();
        assert_eq!(back, c);
    }
}
