use std::collections::VecDeque;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use rand::Rng;

use crate::mdp::Transition;

/// FIFO replay memory, safe for concurrent producers.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Mutex<VecDeque<Transition>>,
    batches_drawn: AtomicU64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        Self { capacity: capacity.max(1), items: Mutex::new(VecDeque::new()), batches_drawn: AtomicU64::new(0) }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn push(&self, t: Transition) {
        let mut items = self.lock();
        if items.len() == self.capacity {
            items.pop_front();
        }
        items.push_back(t);
    }

    /// Uniform draw with replacement; `None` while fewer than `n` items are
    /// stored.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<Transition>> {
        let idx = self.sample_indices(n, rng)?;
        let items = self.lock();
        Some(idx.into_iter().map(|i| items[i].clone()).collect())
    }

    pub fn sample_indices<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Option<Vec<usize>> {
        let len = self.len();
        if n == 0 || len < n {
            return None;
        }
        self.batches_drawn.fetch_add(1, Ordering::Relaxed);
        Some((0..n).map(|_| rng.gen_range(0..len)).collect())
    }

    /// Number of batches handed out so far.
    pub fn batches_drawn(&self) -> u64 {
        self.batches_drawn.load(Ordering::Relaxed)
    }

    pub fn snapshot(&self) -> Vec<Transition> {
        self.lock().iter().cloned().collect()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, VecDeque<Transition>> {
        // A panic while holding the lock leaves the deque itself intact.
        self.items.lock().unwrap_or_else(|e| e.into_inner())
    }
}
