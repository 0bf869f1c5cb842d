//! Fixed-capacity experience replay shared by all learning agents.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// One stored interaction. `coop` marks transitions whose reward includes
/// a cooperative share, which the scenario diversity analysis keys on.
///
/// A lane-change decision is a temporally extended action: its transition
/// spans the whole maneuver, `reward` is the discounted sum over the
/// spanned steps and `steps` > 1, so the bootstrap discount is gamma^steps.
/// Ordinary decisions have `steps` = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: [f64; 2],
    pub reward: f64,
    pub next_state: Vec<f64>,
    pub done: bool,
    pub coop: bool,
    pub steps: u32,
}

/// Ring buffer: once full, the oldest transition is overwritten.
#[derive(Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    items: Vec<Transition>,
    next: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity > 0);
        ReplayBuffer {
            capacity,
            items: Vec::with_capacity(capacity.min(4096)),
            next: 0,
        }
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

    /// Uniform sampling with replacement.
    pub fn sample<'a>(&'a self, batch: usize, rng: &mut ChaCha8Rng) -> Vec<&'a Transition> {
        assert!(!self.items.is_empty(), "sampling from empty buffer");
        (0..batch)
            .map(|_| &self.items[rng.gen_range(0..self.items.len())])
            .collect()
    }
}
