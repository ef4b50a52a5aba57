//! Byte-stable binary checkpoints: parameters plus Adam state, little-endian.
//!
//! Layout: magic, algo name, update counter, then per store its name, Adam
//! step count and tensors (name, declared shape, storage shape, values, first
//! and second moments). Strings are a u32 length followed by UTF-8 bytes.

use std::path::Path;

use ndarray::Array2;

use crate::agent::Agent;
use crate::autodiff::ParamStore;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"TECRLCK1";

#[derive(Debug, Clone, PartialEq)]
pub struct TensorRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Array2<f64>,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StoreRecord {
    pub name: String,
    pub adam_steps: u64,
    pub tensors: Vec<TensorRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub algo: String,
    pub updates: u64,
    pub stores: Vec<StoreRecord>,
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

fn put_matrix(out: &mut Vec<u8>, a: &Array2<f64>) {
    for x in a.iter() {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

fn store_record(name: &str, store: &ParamStore) -> StoreRecord {
    StoreRecord {
        name: name.to_string(),
        adam_steps: store.adam_steps(),
        tensors: (0..store.len())
            .map(|i| {
                let (m, v) = store.moments(i);
                TensorRecord {
                    name: store.names()[i].clone(),
                    shape: store.shape(i).to_vec(),
                    value: store.value(i).clone(),
                    m: m.clone(),
                    v: v.clone(),
                }
            })
            .collect(),
    }
}

impl Checkpoint {
    pub fn of(agent: &dyn Agent) -> Self {
        Self {
            algo: agent.algo().to_string(),
            updates: agent.updates(),
            stores: agent.stores().into_iter().map(|(n, s)| store_record(&n, s)).collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_str(&mut out, &self.algo);
        out.extend_from_slice(&self.updates.to_le_bytes());
        out.extend_from_slice(&(self.stores.len() as u32).to_le_bytes());
        for s in &self.stores {
            put_str(&mut out, &s.name);
            out.extend_from_slice(&s.adam_steps.to_le_bytes());
            out.extend_from_slice(&(s.tensors.len() as u32).to_le_bytes());
            for t in &s.tensors {
                put_str(&mut out, &t.name);
                out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
                for &d in &t.shape {
                    out.extend_from_slice(&(d as u64).to_le_bytes());
                }
                let (r, c) = t.value.dim();
                out.extend_from_slice(&(r as u64).to_le_bytes());
                out.extend_from_slice(&(c as u64).to_le_bytes());
                put_matrix(&mut out, &t.value);
                put_matrix(&mut out, &t.m);
                put_matrix(&mut out, &t.v);
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let algo = r.string()?;
        let updates = r.u64()?;
        let n_stores = r.u32()?;
        let mut stores = Vec::new();
        for _ in 0..n_stores {
            let name = r.string()?;
            let adam_steps = r.u64()?;
            let n_tensors = r.u32()?;
            let mut tensors = Vec::new();
            for _ in 0..n_tensors {
                let tname = r.string()?;
                let ndim = r.u32()?;
                let shape = (0..ndim).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
                let rows = r.u64()? as usize;
                let cols = r.u64()? as usize;
                let value = r.matrix(rows, cols)?;
                let m = r.matrix(rows, cols)?;
                let v = r.matrix(rows, cols)?;
                tensors.push(TensorRecord {
                    name: tname,
                    shape,
                    value,
                    m,
                    v,
                });
            }
            stores.push(StoreRecord {
                name,
                adam_steps,
                tensors,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { algo, updates, stores })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Copies every tensor and optimizer state into `agent`, which must have the
    /// same algorithm and layout.
    pub fn restore(&self, agent: &mut dyn Agent) -> Result<()> {
        if agent.algo() != self.algo {
            return Err(Error::Checkpoint(format!(
                "checkpoint is for `{}`, agent is `{}`",
                self.algo,
                agent.algo()
            )));
        }
        let mut targets = agent.stores_mut();
        if targets.len() != self.stores.len() {
            return Err(Error::Checkpoint("store count differs".into()));
        }
        for ((name, store), rec) in targets.iter_mut().zip(&self.stores) {
            if *name != rec.name || store.len() != rec.tensors.len() {
                return Err(Error::Checkpoint(format!("store `{}` does not match `{name}`", rec.name)));
            }
            for (i, t) in rec.tensors.iter().enumerate() {
                if store.names()[i] != t.name || store.shape(i) != t.shape.as_slice() || store.value(i).dim() != t.value.dim() {
                    return Err(Error::Checkpoint(format!("tensor `{}` of `{name}` does not match", t.name)));
                }
            }
        }
        for ((_, store), rec) in targets.iter_mut().zip(&self.stores) {
            for (i, t) in rec.tensors.iter().enumerate() {
                store.value_mut(i).assign(&t.value);
                store.set_optimizer_state(i, t.m.clone(), t.v.clone());
            }
            store.set_adam_steps(rec.adam_steps);
        }
        drop(targets);
        agent.set_updates(self.updates);
        Ok(())
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated file".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 name".into()))
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<Array2<f64>> {
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("tensor too large".into()))?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        Array2::from_shape_vec((rows, cols), data).map_err(|e| Error::Checkpoint(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::{build_agent, AgentConfig};
    use crate::env::EnvSpec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec() -> EnvSpec {
        EnvSpec {
            state_dim: 3,
            action_dim: 1,
            action_low: vec![-2.0],
            action_high: vec![2.0],
            max_episode_steps: 5,
            discrete: false,
        }
    }

    fn cfg(seed: u64) -> AgentConfig {
        AgentConfig {
            hidden: vec![5, 4],
            batch_size: 4,
            seed,
            ..AgentConfig::default()
        }
    }

    #[test]
    fn round_trip_restores_everything() {
        for algo in ["tecrl", "maxent"] {
            let mut a = build_agent(algo, &spec(), &cfg(1)).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(0);
            let b = crate::agent::tecrl_test_batch(&mut rng);
            for _ in 0..3 {
                a.update(&b, &mut rng).unwrap();
            }
            let ck = Checkpoint::of(a.as_ref());
            let bytes = ck.to_bytes();
            assert_eq!(Checkpoint::from_bytes(&bytes).unwrap(), ck);

            let mut fresh = build_agent(algo, &spec(), &cfg(2)).unwrap();
            Checkpoint::from_bytes(&bytes).unwrap().restore(fresh.as_mut()).unwrap();
            assert_eq!(Checkpoint::of(fresh.as_ref()).to_bytes(), bytes);
            assert_eq!(fresh.updates(), 3);
            // continuing from the restored state matches continuing the original
            let (mut r1, mut r2) = (ChaCha8Rng::seed_from_u64(9), ChaCha8Rng::seed_from_u64(9));
            a.update(&b, &mut r1).unwrap();
            fresh.update(&b, &mut r2).unwrap();
            assert_eq!(Checkpoint::of(a.as_ref()).to_bytes(), Checkpoint::of(fresh.as_ref()).to_bytes());
        }
    }

    #[test]
    fn mismatches_are_rejected() {
        let a = build_agent("tecrl", &spec(), &cfg(1)).unwrap();
        let bytes = Checkpoint::of(a.as_ref()).to_bytes();
        let mut other = build_agent("maxent", &spec(), &cfg(1)).unwrap();
        assert!(Checkpoint::from_bytes(&bytes).unwrap().restore(other.as_mut()).is_err());
        let mut wide = build_agent("tecrl", &spec(), &AgentConfig { hidden: vec![6, 4], ..cfg(1) }).unwrap();
        assert!(Checkpoint::from_bytes(&bytes).unwrap().restore(wide.as_mut()).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(Checkpoint::from_bytes(&extra).is_err());
        assert!(Checkpoint::from_bytes(b"NOTACKPT").is_err());
    }
}
