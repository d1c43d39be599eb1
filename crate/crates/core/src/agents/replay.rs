use rand::Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub x: Vec<f64>,
    /// The executed (guard-filtered) command.
    pub a: f64,
    pub r: f64,
    pub x_next: Vec<f64>,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("cannot sample {requested} transitions from a buffer holding {available}")]
pub struct NotEnoughSamples {
    pub requested: usize,
    pub available: usize,
}

/// Fixed-capacity ring of transitions.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
    pushed: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0, "replay capacity must be positive");
        Self {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
            pushed: 0,
        }
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

    pub fn total_pushed(&self) -> u64 {
        self.pushed
    }

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
        self.pushed += 1;
    }

    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        self.items.iter()
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>, NotEnoughSamples> {
        if n == 0 || self.items.len() < n {
            return Err(NotEnoughSamples {
                requested: n,
                available: self.items.len(),
            });
        }
        Ok((0..n)
            .map(|_| self.items[rng.gen_range(0..self.items.len())].clone())
            .collect())
    }
}
