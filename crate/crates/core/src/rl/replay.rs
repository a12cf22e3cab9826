use std::collections::VecDeque;

use rand::Rng;

/// Fixed-capacity FIFO buffer with uniform sampling.
#[derive(Clone, Debug)]
pub struct ReplayBuffer<T> {
    items: VecDeque<T>,
    capacity: usize,
}

impl<T> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        ReplayBuffer {
            items: VecDeque::with_capacity(capacity),
            capacity,
        }
    }

    /// Appends `item`, evicting the oldest entry when full.
    pub fn push(&mut self, item: T) {
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn get(&self, i: usize) -> Option<&T> {
        self.items.get(i)
    }

    /// `count` positions drawn uniformly with replacement.
    pub fn sample_indices<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<usize> {
        if self.items.is_empty() {
            return Vec::new();
        }
        (0..count).map(|_| rng.random_range(0..self.items.len())).collect()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, count: usize) -> Vec<&T> {
        self.sample_indices(rng, count).into_iter().map(|i| &self.items[i]).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::substream;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn fifo_eviction_and_capacity() {
        let mut b = ReplayBuffer::new(3);
        for i in 0..10 {
            b.push(i);
            assert!(b.len() <= 3);
        }
        assert_eq!((0..3).map(|i| *b.get(i).unwrap()).collect::<Vec<_>>(), vec![7, 8, 9]);
    }

    #[test]
    fn sampling_is_uniform() {
        let mut b = ReplayBuffer::new(10_000);
        for i in 0..20_000 {
            b.push(i);
        }
        let mut shrunk = ReplayBuffer::new(50);
        for i in 0..50 {
            shrunk.push(i);
        }
        for buf_len in [b.len(), shrunk.len()] {
            let bins = 50;
            let mut counts = vec![0u64; bins];
            let mut rng = substream(17, buf_len as u64);
            let draws = 100_000;
            let idx = if buf_len == b.len() { b.sample_indices(&mut rng, draws) } else { shrunk.sample_indices(&mut rng, draws) };
            for i in idx {
                counts[i * bins / buf_len] += 1;
            }
            let expected = draws as f64 / bins as f64;
            let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
            let p = 1.0 - ChiSquared::new((bins - 1) as f64).unwrap().cdf(chi2);
            assert!(p > 0.01, "chi2 {chi2} p {p}");
        }
    }
}
