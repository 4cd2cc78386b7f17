//! Uniform experience replay over fixed-capacity ring storage.

use rand::Rng;
use rand_chacha::ChaCha12Rng;

use crate::rng::substream;
use crate::{Error, Result};

/// One environment transition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub state: [f64; 3],
    pub action: f64,
    pub reward: f64,
    pub next_state: [f64; 3],
    pub terminal: bool,
}

/// Ring buffer with seeded uniform sampling (with replacement).
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    storage: Vec<Transition>,
    next: usize,
    inserted: u64,
    rng: ChaCha12Rng,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, seed: u64, stream: u64) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::param("replay buffer capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            storage: Vec::with_capacity(capacity.min(1 << 20)),
            next: 0,
            inserted: 0,
            rng: substream(seed, stream),
        })
    }

    pub fn len(&self) -> usize {
        self.storage.len()
    }

    pub fn is_empty(&self) -> bool {
        self.storage.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Total number of insertions, including overwritten ones.
    pub fn inserted(&self) -> u64 {
        self.inserted
    }

    pub fn push(&mut self, t: Transition) {
        if self.storage.len() < self.capacity {
            self.storage.push(t);
        } else {
            self.storage[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.inserted += 1;
    }

    pub fn get(&self, idx: usize) -> &Transition {
        &self.storage[idx]
    }

    /// Uniformly sampled indices (with replacement) into the stored items.
    pub fn sample_indices(&mut self, n: usize) -> Vec<usize> {
        let len = self.storage.len();
        (0..n).map(|_| self.rng.gen_range(0..len)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: f64) -> Transition {
        Transition {
            state: [v, 0.0, 0.0],
            action: -0.5,
            reward: -v,
            next_state: [v, 0.0, 0.0],
            terminal: false,
        }
    }

    #[test]
    fn ring_overwrites_oldest() {
        let mut buf = ReplayBuffer::new(3, 1, 0).unwrap();
        for i in 0..5 {
            buf.push(t(i as f64));
        }
        assert_eq!(buf.len(), 3);
        assert_eq!(buf.inserted(), 5);
        let stored: Vec<f64> = (0..3).map(|i| buf.get(i).state[0]).collect();
        // Items 3 and 4 overwrote slots 0 and 1.
        assert_eq!(stored, vec![3.0, 4.0, 2.0]);
    }

    #[test]
    fn sampling_is_reproducible_for_fixed_seed() {
        let mut a = ReplayBuffer::new(100, 9, 3).unwrap();
        let mut b = ReplayBuffer::new(100, 9, 3).unwrap();
        for i in 0..100 {
            a.push(t(i as f64));
            b.push(t(i as f64));
        }
        assert_eq!(a.sample_indices(64), b.sample_indices(64));
        assert_ne!(a.sample_indices(64), ReplayBuffer::new(100, 10, 3).map(|mut c| {
            for i in 0..100 {
                c.push(t(i as f64));
            }
            c.sample_indices(64)
        }).unwrap());
    }

    #[test]
    fn sampling_is_uniform_by_chi_square() {
        let items = 50usize;
        let draws = 100_000usize;
        let mut buf = ReplayBuffer::new(items, 7, 0).unwrap();
        for i in 0..items {
            buf.push(t(i as f64));
        }
        let mut counts = vec![0usize; items];
        for idx in buf.sample_indices(draws) {
            counts[idx] += 1;
        }
        let expected = draws as f64 / items as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        // 99th percentile of chi-square with 49 degrees of freedom; p > 0.01
        // iff the statistic stays below it.
        assert!(stat < 74.919, "chi-square statistic {stat}");
    }

    #[test]
    fn rejects_zero_capacity() {
        assert!(ReplayBuffer::new(0, 1, 0).is_err());
    }
}
