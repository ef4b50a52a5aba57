//! Fixed-capacity replay storage with uniform sampling.

use rand::Rng;

use crate::batch::Batch;
use crate::env::Transition;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    items: Vec<Transition>,
    capacity: usize,
    /// Slot the next push writes to once the buffer is full.
    head: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::InvalidArgument("replay capacity must be positive".into()));
        }
        Ok(Self {
            items: Vec::with_capacity(capacity.min(1 << 16)),
            capacity,
            head: 0,
            pushed: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Total pushes ever made, including overwritten ones.
    pub fn pushed(&self) -> u64 {
        self.pushed
    }

    /// Appends, overwriting the oldest entry when full.
    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        self.pushed += 1;
    }

    /// Entries from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.items.split_at(self.head);
        older.iter().chain(newer.iter())
    }

    /// Uniform indices with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Vec<usize>> {
        if batch_size == 0 || self.items.len() < batch_size {
            return Err(Error::BufferUnderflow {
                have: self.items.len(),
                need: batch_size.max(1),
            });
        }
        let n = self.items.len();
        Ok((0..batch_size).map(|_| rng.random_range(0..n)).collect())
    }

    pub fn sample<R: Rng + ?Sized>(&self, batch_size: usize, rng: &mut R) -> Result<Batch> {
        let idx = self.sample_indices(batch_size, rng)?;
        Batch::from_transitions(idx.iter().map(|&i| &self.items[i]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(x: f64) -> Transition {
        Transition {
            state: vec![x],
            action: vec![0.0],
            reward: x,
            next_state: vec![x + 1.0],
            done: false,
        }
    }

    #[test]
    fn ring_evicts_oldest() {
        let mut b = ReplayBuffer::new(3).unwrap();
        for i in 0..4 {
            b.push(t(i as f64));
        }
        assert_eq!(b.len(), 3);
        assert_eq!(b.pushed(), 4);
        let r: Vec<f64> = b.iter().map(|t| t.reward).collect();
        assert_eq!(r, vec![1.0, 2.0, 3.0]);
    }

    #[test]
    fn undersized_sample_is_refused() {
        let mut b = ReplayBuffer::new(10).unwrap();
        b.push(t(0.0));
        let err = b.sample(2, &mut ChaCha8Rng::seed_from_u64(0)).unwrap_err();
        assert!(matches!(err, Error::BufferUnderflow { have: 1, need: 2 }));
        assert!(ReplayBuffer::new(0).is_err());
    }

    #[test]
    fn sampling_is_deterministic() {
        let mut b = ReplayBuffer::new(20_000).unwrap();
        for i in 0..10_000 {
            b.push(t(i as f64));
        }
        let x = b.sample(256, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        let y = b.sample(256, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        assert_eq!(x, y);
        assert_eq!(x.states.dim(), (256, 1));
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(100).unwrap();
        for i in 0..100 {
            b.push(t(i as f64));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut counts = [0u64; 100];
        let draws = 1_000_000usize;
        for _ in 0..(draws / 100) {
            for i in b.sample_indices(100, &mut rng).unwrap() {
                counts[i] += 1;
            }
        }
        let p = 0.01;
        let mean = draws as f64 * p;
        let sd = (draws as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - mean).abs() <= 5.0 * sd, "{c}");
        }
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - mean).powi(2) / mean).sum();
        // 99 dof; 99.9th percentile is about 148
        assert!(chi2 < 148.0, "{chi2}");
    }
}
