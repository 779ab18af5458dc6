use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{ActionId, State};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub s: State,
    pub a: ActionId,
    pub r: f64,
    pub s_next: State,
    pub done: bool,
}

impl Transition {
    pub fn new(s: State, a: ActionId, r: f64, s_next: State, done: bool) -> Result<Self> {
        if !r.is_finite() || !s.0.iter().chain(s_next.0.iter()).all(|v| v.is_finite()) {
            return Err(Error::numeric("transition with non-finite components"));
        }
        Ok(Transition {
            s,
            a,
            r,
            s_next,
            done,
        })
    }
}

/// Fixed-capacity ring buffer; once full, each push evicts the oldest entry.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::contract("replay capacity must be positive"));
        }
        Ok(ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(1 << 16)),
            next: 0,
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

    pub fn push(&mut self, t: Transition) {
        if self.items.len() < self.capacity {
            self.items.push(t);
        } else {
            self.items[self.next] = t;
        }
        self.next = (self.next + 1) % self.capacity;
    }

    /// Stored transitions from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let split = if self.items.len() < self.capacity {
            0
        } else {
            self.next
        };
        self.items[split..].iter().chain(self.items[..split].iter())
    }

    /// `n` transitions drawn uniformly with replacement.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<Transition>> {
        if self.items.is_empty() {
            return Err(Error::contract("sampling from an empty replay buffer"));
        }
        Ok((0..n)
            .map(|_| self.items[rng.gen_range(0..self.items.len())])
            .collect())
    }
}
