use std::sync::atomic::{AtomicU64, Ordering};

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

static NEXT_STORE_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> u64 {
    NEXT_STORE_ID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Named parameter tensors with gradient buffers and Adam moments.
///
/// Every tensor is stored as a matrix; `shape` keeps the declared shape
/// (biases are declared 1-D). Any write to values bumps `version`, which
/// invalidates tapes recorded earlier.
#[derive(Debug)]
pub struct ParamStore {
    id: u64,
    version: u64,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    pub(crate) values: Vec<Array2<f64>>,
    pub(crate) grads: Vec<Array2<f64>>,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    step: u64,
}

impl Clone for ParamStore {
    fn clone(&self) -> Self {
        Self {
            id: fresh_id(),
            version: self.version,
            names: self.names.clone(),
            shapes: self.shapes.clone(),
            values: self.values.clone(),
            grads: self.grads.clone(),
            m: self.m.clone(),
            v: self.v.clone(),
            step: self.step,
        }
    }
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            id: fresh_id(),
            version: 0,
            names: Vec::new(),
            shapes: Vec::new(),
            values: Vec::new(),
            grads: Vec::new(),
            m: Vec::new(),
            v: Vec::new(),
            step: 0,
        }
    }

    pub fn id(&self) -> u64 {
        self.id
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Array2<f64>) -> usize {
        let dim = value.raw_dim();
        self.names.push(name.into());
        self.shapes.push(shape);
        self.values.push(value);
        self.grads.push(Array2::zeros(dim));
        self.m.push(Array2::zeros(dim));
        self.v.push(Array2::zeros(dim));
        self.version += 1;
        self.values.len() - 1
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn shape(&self, idx: usize) -> &[usize] {
        &self.shapes[idx]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, idx: usize) -> &Array2<f64> {
        &self.values[idx]
    }

    pub fn value_mut(&mut self, idx: usize) -> &mut Array2<f64> {
        self.version += 1;
        &mut self.values[idx]
    }

    pub fn grad(&self, idx: usize) -> &Array2<f64> {
        &self.grads[idx]
    }

    pub fn moments(&self, idx: usize) -> (&Array2<f64>, &Array2<f64>) {
        (&self.m[idx], &self.v[idx])
    }

    pub fn adam_steps(&self) -> u64 {
        self.step
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    fn locate(&self, mut k: usize) -> (usize, usize) {
        for (i, v) in self.values.iter().enumerate() {
            if k < v.len() {
                return (i, k);
            }
            k -= v.len();
        }
        panic!("scalar index out of range");
    }

    /// Scalar `k` in the flattened (tensor order, row-major) parameter vector.
    pub fn scalar(&self, k: usize) -> f64 {
        let (i, j) = self.locate(k);
        self.values[i].as_slice().expect("standard layout")[j]
    }

    pub fn set_scalar(&mut self, k: usize, x: f64) {
        let (i, j) = self.locate(k);
        self.version += 1;
        self.values[i].as_slice_mut().expect("standard layout")[j] = x;
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.values.iter().flat_map(|v| v.iter().copied()).collect()
    }

    pub fn flat_grads(&self) -> Vec<f64> {
        self.grads.iter().flat_map(|g| g.iter().copied()).collect()
    }

    fn check_same_layout(&self, other: &ParamStore, context: &str) -> Result<()> {
        if self.values.len() != other.values.len() {
            return Err(Error::shape(context, self.values.len(), other.values.len()));
        }
        for (i, (a, b)) in self.values.iter().zip(&other.values).enumerate() {
            if a.dim() != b.dim() {
                return Err(Error::shape(
                    format!("{context}: tensor `{}`", self.names[i]),
                    format!("{:?}", a.dim()),
                    format!("{:?}", b.dim()),
                ));
            }
        }
        Ok(())
    }

    /// One bias-corrected Adam update from the accumulated gradients.
    /// Refuses to touch any tensor if some gradient is non-finite.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        for (name, g) in self.names.iter().zip(&self.grads) {
            if g.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}`")));
            }
        }
        self.step += 1;
        self.version += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - cfg.beta1.powi(t);
        let bc2 = 1.0 - cfg.beta2.powi(t);
        let (b1, b2, lr, eps) = (cfg.beta1, cfg.beta2, cfg.lr, cfg.eps);
        for i in 0..self.values.len() {
            Zip::from(&mut self.values[i])
                .and(&self.grads[i])
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    let m_hat = *m / bc1;
                    let v_hat = *v / bc2;
                    *p -= lr * m_hat / (v_hat.sqrt() + eps);
                });
        }
        Ok(())
    }

    /// Restores optimizer state (used when loading checkpoints).
    pub(crate) fn set_optimizer_state(&mut self, idx: usize, m: Array2<f64>, v: Array2<f64>) {
        self.m[idx] = m;
        self.v[idx] = v;
    }

    pub(crate) fn set_adam_steps(&mut self, step: u64) {
        self.step = step;
    }
}

/// Free-function form of [`ParamStore::adam_step`].
pub fn adam_step(store: &mut ParamStore, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Result<()> {
    store.adam_step(&AdamConfig { lr, beta1, beta2, eps })
}

/// `target <- (1 - tau) target + tau online`, elementwise.
pub fn polyak_update(target: &mut ParamStore, online: &ParamStore, tau: f64) -> Result<()> {
    if !(tau > 0.0 && tau <= 1.0) {
        return Err(Error::InvalidArgument(format!("polyak tau must lie in (0, 1], got {tau}")));
    }
    target.check_same_layout(online, "polyak_update")?;
    target.version += 1;
    for (t, o) in target.values.iter_mut().zip(&online.values) {
        if tau == 1.0 {
            t.assign(o);
        } else {
            Zip::from(t).and(o).for_each(|t, &o| *t = (1.0 - tau) * *t + tau * o);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn scalar_store(w: f64) -> ParamStore {
        let mut s = ParamStore::new();
        s.add("w", vec![1], array![[w]]);
        s
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut s = scalar_store(0.7);
        s.adam_step(&AdamConfig::new(1e-3)).unwrap();
        assert_eq!(s.scalar(0), 0.7);
    }

    #[test]
    fn first_step_has_unit_normalized_size() {
        let mut s = scalar_store(0.0);
        s.grads[0][[0, 0]] = 1.0;
        adam_step(&mut s, 1e-4, 0.9, 0.999, 1e-8).unwrap();
        assert!((s.scalar(0) + 1e-4).abs() < 1e-12);
        assert_eq!(s.adam_steps(), 1);
    }

    #[test]
    fn quadratic_descent_has_monotone_tail() {
        let mut s = scalar_store(1.0);
        let cfg = AdamConfig::new(1e-2);
        let mut trace = Vec::new();
        for _ in 0..100 {
            s.zero_grad();
            let w = s.scalar(0);
            s.grads[0][[0, 0]] = 2.0 * w;
            s.adam_step(&cfg).unwrap();
            trace.push(s.scalar(0).abs());
        }
        for w in trace[10..].windows(2) {
            assert!(w[1] < w[0]);
        }
    }

    #[test]
    fn nonfinite_gradient_names_tensor() {
        let mut s = scalar_store(1.0);
        s.add("bias", vec![1], array![[0.0]]);
        s.grads[1][[0, 0]] = f64::NAN;
        let err = s.adam_step(&AdamConfig::new(1e-3)).unwrap_err().to_string();
        assert!(err.contains("bias"), "{err}");
        assert_eq!(s.scalar(0), 1.0);
    }

    #[test]
    fn adam_is_deterministic() {
        let run = || {
            let mut s = scalar_store(0.3);
            for k in 0..20 {
                s.zero_grad();
                s.grads[0][[0, 0]] = (k as f64).sin();
                s.adam_step(&AdamConfig::new(1e-3)).unwrap();
            }
            s.scalar(0).to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn polyak_basic_cases() {
        let mut t = scalar_store(0.0);
        let o = scalar_store(1.0);
        polyak_update(&mut t, &o, 0.005).unwrap();
        assert!((t.scalar(0) - 0.005).abs() < 1e-15);
        polyak_update(&mut t, &o, 1.0).unwrap();
        assert_eq!(t.scalar(0), 1.0);
        assert!(polyak_update(&mut t, &o, 0.0).is_err());
        let mut bad = ParamStore::new();
        bad.add("w", vec![2], array![[0.0, 0.0]]);
        assert!(polyak_update(&mut bad, &o, 0.5).is_err());
    }

    #[test]
    fn polyak_error_decays_geometrically() {
        let tau = 0.005;
        let mut t = scalar_store(0.0);
        let o = scalar_store(1.0);
        let mut prev = 1.0f64;
        for _ in 0..500 {
            polyak_update(&mut t, &o, tau).unwrap();
            let err = (o.scalar(0) - t.scalar(0)).abs();
            assert!((err / prev - (1.0 - tau)).abs() < 1e-9);
            prev = err;
        }
        let expected = (1.0 - tau).powi(500);
        assert!(((1.0 - t.scalar(0)).ln() - expected.ln()).abs() < 1e-9);
    }
}
